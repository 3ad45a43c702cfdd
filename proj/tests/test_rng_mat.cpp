#include <doctest.h>

#include <cmath>

#include "certain/mat.hpp"
#include "certain/rng.hpp"

using namespace certain;

TEST_CASE("rng: identical seeds give identical streams, derived streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(hash_str("alpha") != hash_str("beta"));
}

TEST_CASE("rng: uniform in [0,1), shuffle is a permutation") {
    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    auto w = v;
    r.shuffle(w);
    auto sorted = w;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
}

TEST_CASE("cholesky: solves a known SPD system") {
    // A = [[4,2],[2,3]], b = (2,1) -> x = (0.5, 0)
    std::vector<double> a{4.0, 2.0, 2.0, 3.0};
    auto c = cholesky(a, 2);
    REQUIRE(c.ok);
    std::vector<double> b{2.0, 1.0};
    auto x = chol_solve(c, b);
    CHECK(x[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cholesky: rejects an indefinite matrix") {
    std::vector<double> a{1.0, 2.0, 2.0, 1.0};  // eigenvalues 3, -1
    CHECK_FALSE(cholesky(a, 2).ok);
}

TEST_CASE("cosine: NaN on zero vectors, exact on axes") {
    std::vector<double> x{1.0, 0.0}, y{0.0, 2.0}, z{0.0, 0.0};
    CHECK(cosine(x, y) == doctest::Approx(0.0));
    CHECK(std::isnan(cosine(x, z)));
    CHECK(cosine(x, x) == doctest::Approx(1.0));
}
