#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "certain/net.hpp"
#include "certain/rng.hpp"
#include "oracles.hpp"

using namespace certain;

namespace {

net::NetConfig small_cfg() {
    net::NetConfig cfg;
    cfg.t = 5;
    cfg.f = 3;
    cfg.h = 8;
    cfg.w = 8;
    cfg.d_embed = 5;
    cfg.conv1 = 2;
    cfg.conv2 = 2;
    return cfg;
}

data::MultimodalSample random_sample(const net::NetConfig& cfg, Rng& rng) {
    data::MultimodalSample s;
    s.seq = Mat(cfg.t, cfg.f);
    for (double& x : s.seq.v) x = rng.normal();
    s.img = Mat(cfg.h, cfg.w);
    for (double& x : s.img.v) x = rng.uniform();
    s.label = rng.bernoulli(0.5) ? 1 : 0;
    return s;
}

}  // namespace

TEST_CASE("forward: all-zero inputs with zero head give prob 0.5") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(7);
    for (int i = n.head_offset(); i < n.param_count(); ++i) params[static_cast<size_t>(i)] = 0.0;
    Mat seq(cfg.t, cfg.f), img(cfg.h, cfg.w);
    auto out = n.forward(params, seq, img);
    CHECK(out.logit == 0.0);
    CHECK(out.prob == 0.5);
}

TEST_CASE("forward: prob equals sigmoid(logit), repeated calls bit-identical") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(3);
    Rng rng(11);
    auto s = random_sample(cfg, rng);
    auto a = n.forward(params, s);
    auto b = n.forward(params, s);
    CHECK(a.logit == b.logit);
    CHECK(a.emb_ehr == b.emb_ehr);
    CHECK(a.emb_cxr == b.emb_cxr);
    CHECK(a.prob == doctest::Approx(1.0 / (1.0 + std::exp(-a.logit))).epsilon(1e-15));
}

TEST_CASE("forward: positive scaling of head weights preserves logit sign") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(5);
    Rng rng(19);
    auto s = random_sample(cfg, rng);
    double base = n.forward(params, s).logit - params[static_cast<size_t>(n.param_count() - 1)];
    // zero the bias so scaling acts on the whole logit
    params[static_cast<size_t>(n.param_count() - 1)] = 0.0;
    double l1 = n.forward(params, s).logit;
    CHECK(l1 == doctest::Approx(base).epsilon(1e-12));
    for (int i = n.head_offset(); i < n.param_count() - 1; ++i) params[static_cast<size_t>(i)] *= 3.5;
    double l2 = n.forward(params, s).logit;
    CHECK((l1 > 0) == (l2 > 0));
    CHECK(std::fabs(l2) > std::fabs(l1));
}

TEST_CASE("forward: dimension mismatch raises shape_error") {
    net::FusionNet n(small_cfg());
    auto params = n.init_params(1);
    Mat seq(3, 3), img(8, 8);
    CHECK_THROWS_AS((void)n.forward(params, seq, img), certain::shape_error);
}

TEST_CASE("partition: theta_h plus theta_L covers the parameter vector") {
    net::FusionNet n(small_cfg());
    int total = 0;
    for (const auto& t : n.tensors()) total += t.size();
    CHECK(total == n.param_count());
    CHECK(n.head_offset() < n.param_count());
    // head.w and head.b are exactly the tail
    const auto& tensors = n.tensors();
    CHECK(tensors[tensors.size() - 2].name == "head.w");
    CHECK(tensors[tensors.size() - 2].offset == n.head_offset());
}

TEST_CASE("backward: constant loss gives zero gradient") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(23);
    Rng rng(29);
    auto s = random_sample(cfg, rng);
    net::ForwardCache cache;
    (void)n.forward(params, s, &cache);
    std::vector<double> grad(static_cast<size_t>(n.param_count()), 0.0);
    n.backward(params, cache, 0.0, {}, {}, grad);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("backward: linear head on fixed embeddings matches the logistic regression gradient") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(31);
    Rng rng(37);
    auto s = random_sample(cfg, rng);
    net::ForwardCache cache;
    auto out = n.forward(params, s, &cache);
    double y = 1.0;
    // BCE loss: dL/dlogit = prob - y
    std::vector<double> grad(static_cast<size_t>(n.param_count()), 0.0);
    n.backward(params, cache, out.prob - y, {}, {}, grad);
    const int d = cfg.d_embed;
    for (int i = 0; i < d; ++i) {
        CHECK(grad[static_cast<size_t>(n.head_offset() + i)] ==
              doctest::Approx(out.emb_ehr[static_cast<size_t>(i)] * (out.prob - y)).epsilon(1e-12));
        CHECK(grad[static_cast<size_t>(n.head_offset() + d + i)] ==
              doctest::Approx(out.emb_cxr[static_cast<size_t>(i)] * (out.prob - y)).epsilon(1e-12));
    }
    CHECK(grad[static_cast<size_t>(n.param_count() - 1)] == doctest::Approx(out.prob - y));
}

TEST_CASE("backward: matches central finite differences on 20 random instances") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    Rng rng(101);
    for (int inst = 0; inst < 20; ++inst) {
        auto params = n.init_params(1000 + static_cast<uint64_t>(inst));
        auto s = random_sample(cfg, rng);
        // composite loss exercising the logit and both embedding paths
        std::vector<double> ae(static_cast<size_t>(cfg.d_embed)), ac(static_cast<size_t>(cfg.d_embed));
        for (double& x : ae) x = rng.normal();
        for (double& x : ac) x = rng.normal();
        double y = s.label;

        auto loss = [&](std::span<const double> p) {
            auto out = n.forward(p, s);
            double l = -(y * std::log(out.prob) + (1.0 - y) * std::log(1.0 - out.prob));
            for (int i = 0; i < cfg.d_embed; ++i)
                l += ae[static_cast<size_t>(i)] * out.emb_ehr[static_cast<size_t>(i)] +
                     ac[static_cast<size_t>(i)] * out.emb_cxr[static_cast<size_t>(i)];
            return l;
        };

        net::ForwardCache cache;
        auto out = n.forward(params, s, &cache);
        std::vector<double> grad(static_cast<size_t>(n.param_count()), 0.0);
        n.backward(params, cache, out.prob - y, ae, ac, grad);

        auto fd = oracle::finite_diff(loss, params);
        CHECK(oracle::max_rel_error(grad, fd) < 1e-4);
    }
}

TEST_CASE("backward: batch accumulation is order-independent to 1e-10") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(77);
    Rng rng(79);
    std::vector<data::MultimodalSample> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_sample(cfg, rng));

    auto accumulate = [&](const std::vector<int>& order) {
        std::vector<double> grad(static_cast<size_t>(n.param_count()), 0.0);
        for (int i : order) {
            net::ForwardCache cache;
            auto out = n.forward(params, batch[static_cast<size_t>(i)], &cache);
            n.backward(params, cache, out.prob - batch[static_cast<size_t>(i)].label, {}, {}, grad);
        }
        return grad;
    };
    auto fwd = accumulate({0, 1, 2, 3, 4, 5});
    auto rev = accumulate({5, 4, 3, 2, 1, 0});
    for (size_t i = 0; i < fwd.size(); ++i) CHECK(std::fabs(fwd[i] - rev[i]) < 1e-10);
}

TEST_CASE("checkpoint: save/load round-trips parameters and metadata") {
    net::NetConfig cfg = small_cfg();
    net::FusionNet n(cfg);
    auto params = n.init_params(13);
    std::vector<double> lv(static_cast<size_t>(n.param_count()), -10.0);
    auto dir = std::filesystem::temp_directory_path() / "certain_ckpt_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "model.ckpt").string();

    net::save_checkpoint(path, n, params, lv, "all", 0);
    auto ck = net::load_checkpoint(path);
    CHECK(ck.mu == params);
    CHECK(ck.log_var == lv);
    CHECK(ck.scope == "all");
    CHECK(ck.net.d_embed == cfg.d_embed);

    net::save_checkpoint(path, n, params);
    auto det = net::load_checkpoint(path);
    CHECK(det.mu == params);
    CHECK(det.log_var.empty());
    std::filesystem::remove_all(dir);
}
