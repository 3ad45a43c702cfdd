#include <doctest.h>

#include <cmath>

#include "certain/varparams.hpp"
#include "oracles.hpp"

using namespace certain;

namespace {

// 10-dim state over a tiny net-free layout: h-part 6 coords, head 4 coords.
var::VarState tiny_state(Rng& rng) {
    var::VarState st;
    st.stoch_begin = 0;
    st.head_offset = 6;
    st.full_count = 10;
    st.mu.resize(10);
    st.log_var.resize(10);
    for (double& x : st.mu) x = rng.normal();
    for (double& x : st.log_var) x = rng.uniform(-2.0, 0.5);
    return st;
}

var::BasePrior tiny_prior(const var::VarState& st, Rng& rng) {
    var::BasePrior p;
    p.tau_h = rng.uniform(0.5, 3.0);
    p.tau_L = rng.uniform(0.5, 3.0);
    p.theta_h_star.resize(static_cast<size_t>(st.h_count()));
    for (double& x : p.theta_h_star) x = rng.normal();
    return p;
}

}  // namespace

TEST_CASE("sample: collapsed variance returns mu") {
    Rng rng(5);
    auto st = tiny_state(rng);
    for (double& lv : st.log_var) lv = -50.0;
    Rng srng(17);
    auto theta = var::sample(st, srng);
    for (size_t i = 0; i < theta.size(); ++i) CHECK(std::fabs(theta[i] - st.mu[i]) < 1e-10);
}

TEST_CASE("sample: standard normal statistics over 1e5 draws") {
    var::VarState st;
    st.stoch_begin = 0;
    st.head_offset = 2;
    st.full_count = 4;
    st.mu.assign(4, 0.0);
    st.log_var.assign(4, 0.0);
    const int n = 100000;
    Rng rng(42);
    std::vector<double> mean(4, 0.0), sq(4, 0.0);
    for (int s = 0; s < n; ++s) {
        auto theta = var::sample(st, rng);
        for (int i = 0; i < 4; ++i) {
            mean[static_cast<size_t>(i)] += theta[static_cast<size_t>(i)];
            sq[static_cast<size_t>(i)] += theta[static_cast<size_t>(i)] * theta[static_cast<size_t>(i)];
        }
    }
    for (int i = 0; i < 4; ++i) {
        double m = mean[static_cast<size_t>(i)] / n;
        double v = sq[static_cast<size_t>(i)] / n - m * m;
        CHECK(std::fabs(m) < 3.0 / std::sqrt(static_cast<double>(n)));  // CLT bound
        CHECK(v == doctest::Approx(1.0).epsilon(0.05));                 // chi-square concentration
    }
}

TEST_CASE("sample: fixed seed reproduces draws, eps is retained") {
    Rng rng(7);
    auto st = tiny_state(rng);
    Rng a(99), b(99);
    std::vector<double> ea, eb;
    auto ta = var::sample(st, a, &ea);
    auto tb = var::sample(st, b, &eb);
    CHECK(ta == tb);
    CHECK(ea == eb);
    for (size_t i = 0; i < ta.size(); ++i)
        CHECK(ta[i] == doctest::Approx(st.mu[i] + std::exp(0.5 * st.log_var[i]) * ea[i]).epsilon(1e-15));
}

TEST_CASE("reparam: pathwise gradient of E[theta] w.r.t. mu is exactly one") {
    Rng rng(13);
    auto st = tiny_state(rng);
    Rng srng(3);
    std::vector<double> eps;
    (void)var::sample(st, srng, &eps);
    std::vector<double> d_theta(st.mu.size(), 1.0);  // L = sum(theta)
    std::vector<double> g_mu(st.mu.size(), 0.0), g_lv(st.mu.size(), 0.0);
    var::accumulate_reparam_grad(st, d_theta, eps, g_mu, g_lv);
    for (double g : g_mu) CHECK(g == 1.0);
}

TEST_CASE("kl_to_prior: closed-form examples") {
    var::VarState st;
    st.stoch_begin = 0;
    st.head_offset = 0;  // single final-layer coordinate
    st.full_count = 1;
    st.mu = {1.0};
    st.log_var = {0.0};
    var::BasePrior p;
    p.tau_h = p.tau_L = 1.0;
    auto [kh, kl] = var::kl_to_prior(st, p);
    CHECK(kh == 0.0);
    CHECK(kl == doctest::Approx(0.5).epsilon(1e-12));

    st.mu = {0.0};
    st.log_var = {std::log(0.5)};
    auto [kh2, kl2] = var::kl_to_prior(st, p);
    CHECK(kh2 == 0.0);
    CHECK(kl2 == doctest::Approx(0.09657).epsilon(1e-4));
}

TEST_CASE("kl_to_prior: zero iff state equals prior, otherwise positive") {
    Rng rng(21);
    auto st = tiny_state(rng);
    auto prior = tiny_prior(st, rng);
    // match the prior exactly
    for (int i = 0; i < st.count(); ++i) {
        bool head = i >= st.h_count();
        st.mu[static_cast<size_t>(i)] = head ? 0.0 : prior.theta_h_star[static_cast<size_t>(i)];
        st.log_var[static_cast<size_t>(i)] = std::log(1.0 / (head ? prior.tau_L : prior.tau_h));
    }
    auto [kh, kl] = var::kl_to_prior(st, prior);
    CHECK(kh == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(kl == doctest::Approx(0.0).epsilon(1e-14));

    st.mu[0] += 0.3;
    auto [kh2, kl2] = var::kl_to_prior(st, prior);
    CHECK(kh2 > 0.0);
    CHECK(kl2 == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("kl_to_prior: nonpositive precision raises") {
    Rng rng(23);
    auto st = tiny_state(rng);
    auto prior = tiny_prior(st, rng);
    prior.tau_h = 0.0;
    CHECK_THROWS_AS((void)var::kl_to_prior(st, prior), certain::config_error);
}

TEST_CASE("kl gradients: match central finite differences") {
    Rng rng(31);
    auto st = tiny_state(rng);
    auto prior = tiny_prior(st, rng);
    const int n = st.count();
    std::vector<double> g_mu(static_cast<size_t>(n), 0.0), g_lv(static_cast<size_t>(n), 0.0);
    var::kl_gradients(st, prior, 1.0, g_mu, g_lv);

    auto kl_of = [&](std::span<const double> packed) {
        var::VarState s = st;
        for (int i = 0; i < n; ++i) {
            s.mu[static_cast<size_t>(i)] = packed[static_cast<size_t>(i)];
            s.log_var[static_cast<size_t>(i)] = packed[static_cast<size_t>(n + i)];
        }
        auto [kh, kl] = var::kl_to_prior(s, prior);
        return kh + kl;
    };
    std::vector<double> packed(st.mu.begin(), st.mu.end());
    packed.insert(packed.end(), st.log_var.begin(), st.log_var.end());
    auto fd = oracle::finite_diff(kl_of, packed);
    std::vector<double> analytic(g_mu.begin(), g_mu.end());
    analytic.insert(analytic.end(), g_lv.begin(), g_lv.end());
    CHECK(oracle::max_rel_error(analytic, fd) < 1e-4);
}

TEST_CASE("kl_monte_carlo: agrees with the analytic form on 20 random 10-dim states") {
    Rng rng(41);
    for (int rep = 0; rep < 20; ++rep) {
        auto st = tiny_state(rng);
        auto prior = tiny_prior(st, rng);
        auto [kh, kl] = var::kl_to_prior(st, prior);
        double analytic = kh + kl;
        Rng mc(derive_seed(500, static_cast<uint64_t>(rep)));
        double est = var::kl_monte_carlo(st, prior, 100000, mc);
        CHECK(est == doctest::Approx(analytic).epsilon(0.02));
    }
}

TEST_CASE("kl_monte_carlo: near zero at the prior; std shrinks like sqrt(n)") {
    Rng rng(43);
    auto st = tiny_state(rng);
    auto prior = tiny_prior(st, rng);
    for (int i = 0; i < st.count(); ++i) {
        bool head = i >= st.h_count();
        st.mu[static_cast<size_t>(i)] = head ? 0.0 : prior.theta_h_star[static_cast<size_t>(i)];
        st.log_var[static_cast<size_t>(i)] = std::log(1.0 / (head ? prior.tau_L : prior.tau_h));
    }
    // at the prior the estimator has mean 0; check within 3 standard errors
    const int n = 20000;
    std::vector<double> draws;
    Rng mc(77);
    for (int r = 0; r < 30; ++r) draws.push_back(var::kl_monte_carlo(st, prior, n, mc));
    double mean = 0.0;
    for (double d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    double var_est = 0.0;
    for (double d : draws) var_est += (d - mean) * (d - mean);
    var_est /= static_cast<double>(draws.size() - 1);
    double se = std::sqrt(var_est / static_cast<double>(draws.size()));
    CHECK(std::fabs(mean) < 3.0 * se + 1e-9);

    // variance scaling ~ 1/n: estimator std at 10n should be ~ sqrt(10) smaller
    auto spread = [&](int samples, uint64_t seed) {
        Rng r2(seed);
        std::vector<double> xs;
        for (int r = 0; r < 24; ++r) xs.push_back(var::kl_monte_carlo(st, prior, samples, r2));
        double m = 0.0;
        for (double x : xs) m += x;
        m /= static_cast<double>(xs.size());
        double v = 0.0;
        for (double x : xs) v += (x - m) * (x - m);
        return std::sqrt(v / static_cast<double>(xs.size() - 1));
    };
    double s1 = spread(2000, 101);
    double s10 = spread(20000, 103);
    double ratio = s1 / s10;
    CHECK(ratio > 1.8);  // ~ sqrt(10) = 3.16 with sampling noise
    CHECK(ratio < 6.0);
}

TEST_CASE("make_state: scopes cover the expected slices") {
    net::NetConfig cfg;
    cfg.t = 4;
    cfg.f = 2;
    cfg.h = 4;
    cfg.w = 4;
    cfg.d_embed = 3;
    cfg.conv1 = 2;
    cfg.conv2 = 2;
    net::FusionNet n(cfg);
    auto params = n.init_params(3);
    auto all = var::make_state(n, params, "all");
    CHECK(all.count() == n.param_count());
    CHECK(all.h_count() == n.head_offset());
    auto fl = var::make_state(n, params, "final_layer");
    CHECK(fl.count() == n.param_count() - n.head_offset());
    CHECK(fl.h_count() == 0);
    CHECK_THROWS_AS((void)var::make_state(n, params, "bogus"), certain::config_error);
}
