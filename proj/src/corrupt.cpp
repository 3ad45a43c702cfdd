#include "certain/corrupt.hpp"

#include <algorithm>
#include <cmath>

#include "certain/util.hpp"

namespace certain::corrupt {

namespace {

Mat blur3x3(const Mat& img) {
    // normalized 3x3 binomial kernel, edge pixels clamped
    static const double k[3] = {0.25, 0.5, 0.25};
    Mat tmp(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y) {
        for (int x = 0; x < img.cols; ++x) {
            double s = 0.0;
            for (int d = -1; d <= 1; ++d) {
                int xx = std::clamp(x + d, 0, img.cols - 1);
                s += k[d + 1] * img(y, xx);
            }
            tmp(y, x) = s;
        }
    }
    Mat out(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y) {
        for (int x = 0; x < img.cols; ++x) {
            double s = 0.0;
            for (int d = -1; d <= 1; ++d) {
                int yy = std::clamp(y + d, 0, img.rows - 1);
                s += k[d + 1] * tmp(yy, x);
            }
            out(y, x) = s;
        }
    }
    return out;
}

Mat crop_resize(const Mat& img, double area, Rng& rng) {
    double side = std::sqrt(area);
    int ch = std::max(1, static_cast<int>(std::floor(img.rows * side)));
    int cw = std::max(1, static_cast<int>(std::floor(img.cols * side)));
    int oy = rng.index(img.rows - ch + 1);
    int ox = rng.index(img.cols - cw + 1);
    Mat out(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y) {
        // nearest-neighbor resize back to the original grid
        int sy = oy + std::min(ch - 1, static_cast<int>(static_cast<double>(y) * ch / img.rows));
        for (int x = 0; x < img.cols; ++x) {
            int sx = ox + std::min(cw - 1, static_cast<int>(static_cast<double>(x) * cw / img.cols));
            out(y, x) = img(sy, sx);
        }
    }
    return out;
}

}  // namespace

Mat corrupt_seq(const Mat& seq, SeqKind kind, const Params& p, Rng& rng) {
    Mat out = seq;
    switch (kind) {
        case SeqKind::drop_initial: {
            if (p.drop_fraction > 0.5)
                throw config_error("drop_initial: drop_fraction must be <= 0.5, got " +
                                   std::to_string(p.drop_fraction));
            int k = static_cast<int>(std::floor(p.drop_fraction * seq.rows));
            for (int t = 0; t < k; ++t)
                for (int f = 0; f < seq.cols; ++f) out(t, f) = 0.0;
            break;
        }
        case SeqKind::gaussian_noise: {
            for (double& x : out.v) x += p.noise_sigma * rng.normal();
            break;
        }
        case SeqKind::time_reverse: {
            for (int t = 0; t < seq.rows; ++t)
                for (int f = 0; f < seq.cols; ++f) out(t, f) = seq(seq.rows - 1 - t, f);
            break;
        }
    }
    return out;
}

Mat corrupt_img(const Mat& img, ImgKind kind, const Params& p, Rng& rng) {
    Mat out = img;
    switch (kind) {
        case ImgKind::random_crop: {
            if (p.crop_area <= 0.0 || p.crop_area > 1.0)
                throw config_error("random_crop: crop_area must lie in (0,1]");
            out = crop_resize(img, p.crop_area, rng);
            break;
        }
        case ImgKind::hflip: {
            for (int y = 0; y < img.rows; ++y)
                for (int x = 0; x < img.cols; ++x) out(y, x) = img(y, img.cols - 1 - x);
            break;
        }
        case ImgKind::vflip: {
            for (int y = 0; y < img.rows; ++y)
                for (int x = 0; x < img.cols; ++x) out(y, x) = img(img.rows - 1 - y, x);
            break;
        }
        case ImgKind::gaussian_blur: {
            out = blur3x3(img);
            break;
        }
        case ImgKind::solarize: {
            for (double& x : out.v) x = x >= p.solarize_threshold ? 1.0 - x : x;
            break;
        }
        case ImgKind::invert: {
            for (double& x : out.v) x = 1.0 - x;
            break;
        }
        case ImgKind::color_jitter: {
            double a = rng.uniform(p.jitter_scale_lo, p.jitter_scale_hi);
            double b = rng.uniform(-p.jitter_shift, p.jitter_shift);
            for (double& x : out.v) x = clamp01(a * x + b);
            break;
        }
    }
    for (double& x : out.v) x = clamp01(x);
    return out;
}

std::string kind_name(SeqKind k) {
    switch (k) {
        case SeqKind::drop_initial: return "drop_initial";
        case SeqKind::gaussian_noise: return "gaussian_noise";
        case SeqKind::time_reverse: return "time_reverse";
    }
    return "?";
}

std::string kind_name(ImgKind k) {
    switch (k) {
        case ImgKind::random_crop: return "random_crop";
        case ImgKind::hflip: return "hflip";
        case ImgKind::vflip: return "vflip";
        case ImgKind::gaussian_blur: return "gaussian_blur";
        case ImgKind::solarize: return "solarize";
        case ImgKind::invert: return "invert";
        case ImgKind::color_jitter: return "color_jitter";
    }
    return "?";
}

std::vector<std::string> all_kind_names() {
    std::vector<std::string> names;
    for (auto k : all_seq_kinds()) names.push_back(kind_name(k));
    for (auto k : all_img_kinds()) names.push_back(kind_name(k));
    return names;
}

void apply_named(const std::string& name, Mat& seq, Mat& img, const Params& p, Rng& rng) {
    for (auto k : all_seq_kinds()) {
        if (kind_name(k) == name) {
            seq = corrupt_seq(seq, k, p, rng);
            return;
        }
    }
    for (auto k : all_img_kinds()) {
        if (kind_name(k) == name) {
            img = corrupt_img(img, k, p, rng);
            return;
        }
    }
    throw config_error("unknown corruption kind '" + name + "'");
}

}  // namespace certain::corrupt
