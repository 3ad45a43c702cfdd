#pragma once

#include <string>
#include <vector>

#include "certain/mat.hpp"
#include "certain/rng.hpp"

namespace certain::corrupt {

enum class SeqKind { drop_initial, gaussian_noise, time_reverse };
enum class ImgKind { random_crop, hflip, vflip, gaussian_blur, solarize, invert, color_jitter };

// Magnitudes are fixed defaults, overridable from configs.
struct Params {
    double drop_fraction = 0.25;      // drop_initial, must be <= 0.5
    double noise_sigma = 0.1;         // gaussian_noise
    double crop_area = 0.75;          // random_crop retained area fraction
    double solarize_threshold = 0.5;  // solarize
    double jitter_scale_lo = 0.8;     // color_jitter contrast range
    double jitter_scale_hi = 1.2;
    double jitter_shift = 0.1;        // color_jitter brightness range (+/-)
};

// Sequence corruptions preserve the T x F shape. drop_initial zeroes the
// first floor(drop_fraction*T) steps (drop then left-pad).
Mat corrupt_seq(const Mat& seq, SeqKind kind, const Params& p, Rng& rng);

// Image corruptions preserve shape and the [0,1] range. Crops are resized
// back by nearest neighbor.
Mat corrupt_img(const Mat& img, ImgKind kind, const Params& p, Rng& rng);

std::string kind_name(SeqKind k);
std::string kind_name(ImgKind k);

inline const std::vector<SeqKind>& all_seq_kinds() {
    static const std::vector<SeqKind> kinds = {SeqKind::drop_initial, SeqKind::gaussian_noise,
                                               SeqKind::time_reverse};
    return kinds;
}

inline const std::vector<ImgKind>& all_img_kinds() {
    static const std::vector<ImgKind> kinds = {ImgKind::random_crop,   ImgKind::hflip,
                                               ImgKind::vflip,         ImgKind::gaussian_blur,
                                               ImgKind::solarize,      ImgKind::invert,
                                               ImgKind::color_jitter};
    return kinds;
}

// All ten kind names (3 sequence + 7 image), the vocabulary for manifests
// and provenance tags.
std::vector<std::string> all_kind_names();

// Applies a named kind to the modality it belongs to, leaving the other
// untouched. Unknown names raise config_error.
void apply_named(const std::string& name, Mat& seq, Mat& img, const Params& p, Rng& rng);

}  // namespace certain::corrupt
