#include <doctest.h>

#include <cmath>

#include "certain/corrupt.hpp"
#include "certain/util.hpp"

using namespace certain;
using corrupt::ImgKind;
using corrupt::SeqKind;

namespace {

Mat random_img(int h, int w, uint64_t seed) {
    Mat m(h, w);
    Rng rng(seed);
    for (double& x : m.v) x = rng.uniform();
    return m;
}

}  // namespace

TEST_CASE("time_reverse: reverses rows and is an involution") {
    Mat seq(3, 1);
    seq(0, 0) = 1.0;
    seq(1, 0) = 2.0;
    seq(2, 0) = 3.0;
    corrupt::Params p;
    Rng rng(1);
    auto r = corrupt::corrupt_seq(seq, SeqKind::time_reverse, p, rng);
    CHECK(r(0, 0) == 3.0);
    CHECK(r(1, 0) == 2.0);
    CHECK(r(2, 0) == 1.0);
    auto rr = corrupt::corrupt_seq(r, SeqKind::time_reverse, p, rng);
    CHECK(rr == seq);
}

TEST_CASE("drop_initial: zeroes exactly the first floor(0.25*48) rows") {
    Mat seq(48, 3);
    Rng rng(5);
    for (double& x : seq.v) x = rng.normal() + 1.0;
    corrupt::Params p;
    p.drop_fraction = 0.25;
    auto out = corrupt::corrupt_seq(seq, SeqKind::drop_initial, p, rng);
    for (int t = 0; t < 12; ++t)
        for (int f = 0; f < 3; ++f) CHECK(out(t, f) == 0.0);
    for (int t = 12; t < 48; ++t)
        for (int f = 0; f < 3; ++f) CHECK(out(t, f) == seq(t, f));

    p.drop_fraction = 0.6;
    CHECK_THROWS_AS((void)corrupt::corrupt_seq(seq, SeqKind::drop_initial, p, rng),
                    certain::config_error);
}

TEST_CASE("gaussian_noise: changes values, deterministic per stream") {
    Mat seq(6, 2, 0.0);
    corrupt::Params p;
    Rng a(9), b(9);
    auto x = corrupt::corrupt_seq(seq, SeqKind::gaussian_noise, p, a);
    auto y = corrupt::corrupt_seq(seq, SeqKind::gaussian_noise, p, b);
    CHECK(x == y);
    CHECK_FALSE(x == seq);
}

TEST_CASE("invert is an involution; solarize with threshold 0 equals invert") {
    auto img = random_img(8, 8, 3);
    corrupt::Params p;
    Rng rng(1);
    auto inv = corrupt::corrupt_img(img, ImgKind::invert, p, rng);
    auto invinv = corrupt::corrupt_img(inv, ImgKind::invert, p, rng);
    for (size_t i = 0; i < img.v.size(); ++i) CHECK(invinv.v[i] == doctest::Approx(img.v[i]).epsilon(1e-15));

    p.solarize_threshold = 0.0;
    auto sol = corrupt::corrupt_img(img, ImgKind::solarize, p, rng);
    CHECK(sol == inv);
}

TEST_CASE("blur: a constant image stays constant (kernel sums to one)") {
    Mat img(8, 8, 0.37);
    corrupt::Params p;
    Rng rng(1);
    auto out = corrupt::corrupt_img(img, ImgKind::gaussian_blur, p, rng);
    for (double x : out.v) CHECK(x == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("image corruptions preserve shape and the [0,1] range") {
    corrupt::Params p;
    for (auto kind : corrupt::all_img_kinds()) {
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            auto img = random_img(8, 8, seed * 17);
            Rng rng(seed);
            auto out = corrupt::corrupt_img(img, kind, p, rng);
            CHECK(out.rows == img.rows);
            CHECK(out.cols == img.cols);
            for (double x : out.v) {
                CHECK(x >= 0.0);
                CHECK(x <= 1.0);
            }
        }
    }
}

TEST_CASE("sequence corruptions preserve shape") {
    corrupt::Params p;
    Mat seq(12, 4);
    Rng init(77);
    for (double& x : seq.v) x = init.normal();
    for (auto kind : corrupt::all_seq_kinds()) {
        Rng rng(3);
        auto out = corrupt::corrupt_seq(seq, kind, p, rng);
        CHECK(out.rows == seq.rows);
        CHECK(out.cols == seq.cols);
    }
}

TEST_CASE("apply_named: routes to the right modality, rejects unknown names") {
    corrupt::Params p;
    Mat seq(6, 2, 1.0);
    Mat img = random_img(8, 8, 4);
    Mat seq0 = seq, img0 = img;
    Rng rng(2);
    corrupt::apply_named("hflip", seq, img, p, rng);
    CHECK(seq == seq0);
    CHECK_FALSE(img == img0);
    corrupt::apply_named("time_reverse", seq, img, p, rng);
    CHECK(seq == seq0);  // constant rows, reversal is identity here
    CHECK_THROWS_AS(corrupt::apply_named("sepia", seq, img, p, rng), certain::config_error);
    CHECK(corrupt::all_kind_names().size() == 10);
}
