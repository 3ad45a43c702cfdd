#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "certain/contextset.hpp"
#include "certain/data.hpp"
#include "certain/rng.hpp"

using namespace certain;

namespace {

std::vector<data::MultimodalSample> dummy_samples(int n) {
    std::vector<data::MultimodalSample> out;
    Rng rng(123);
    for (int i = 0; i < n; ++i) {
        data::MultimodalSample s;
        s.id = "d" + std::to_string(i);
        s.seq = Mat(4, 2);
        for (double& x : s.seq.v) x = rng.normal();
        s.img = Mat(4, 4);
        for (double& x : s.img.v) x = rng.uniform();
        s.label = rng.bernoulli(0.3) ? 1 : 0;
        s.group = {"A1", "M"};
        out.push_back(std::move(s));
    }
    return out;
}

// Embeddings whose inter-modal cosines equal the requested values.
contrastive::EmbeddingSet embeddings_with_cosines(const std::vector<data::MultimodalSample>& samples,
                                                  const std::vector<double>& cosines) {
    contrastive::EmbeddingSet emb;
    emb.phi_ehr = Mat(static_cast<int>(cosines.size()), 2);
    emb.phi_cxr = Mat(static_cast<int>(cosines.size()), 2);
    for (size_t i = 0; i < cosines.size(); ++i) {
        emb.ids.push_back(samples[i].id);
        emb.phi_ehr(static_cast<int>(i), 0) = 1.0;
        double c = cosines[i];
        emb.phi_cxr(static_cast<int>(i), 0) = c;
        emb.phi_cxr(static_cast<int>(i), 1) = std::sqrt(std::max(0.0, 1.0 - c * c));
    }
    return emb;
}

}  // namespace

TEST_CASE("select_inter: worked example d = [0.9, 0.5, 0.7, 0.3], v = 1") {
    auto samples = dummy_samples(4);
    auto emb = embeddings_with_cosines(samples, {0.9, 0.5, 0.7, 0.3});
    auto [cs, st] = ctx::select_inter(samples, emb, 1.0);
    CHECK(st.gamma1 == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(st.sigma == doctest::Approx(0.2236).epsilon(1e-3));
    CHECK(st.t == doctest::Approx(0.3764).epsilon(1e-3));
    REQUIRE(cs.size() == 1);
    CHECK(cs.items[0].source_id == "d3");
    CHECK(cs.items[0].provenance == "similarity:inter");
}

TEST_CASE("select_inter: degenerate spread selects nothing, v monotone") {
    auto samples = dummy_samples(5);
    auto emb_flat = embeddings_with_cosines(samples, {0.5, 0.5, 0.5, 0.5, 0.5});
    auto [cs_flat, st_flat] = ctx::select_inter(samples, emb_flat, 1.0);
    CHECK(st_flat.sigma == 0.0);
    CHECK(cs_flat.size() == 0);

    auto emb = embeddings_with_cosines(samples, {0.95, 0.2, 0.6, 0.8, -0.1});
    auto sel1 = ctx::select_inter(samples, emb, 1.0).first;
    auto sel2 = ctx::select_inter(samples, emb, 2.0).first;
    std::set<std::string> s1, s2;
    for (const auto& it : sel1.items) s1.insert(it.source_id);
    for (const auto& it : sel2.items) s2.insert(it.source_id);
    CHECK(std::includes(s1.begin(), s1.end(), s2.begin(), s2.end()));

    CHECK_THROWS_AS((void)ctx::select_inter(samples, emb, 0.5), certain::config_error);
}

TEST_CASE("select_inter: zero-norm embeddings are excluded with a count") {
    auto samples = dummy_samples(4);
    auto emb = embeddings_with_cosines(samples, {0.9, 0.5, 0.7, 0.3});
    emb.phi_ehr(1, 0) = 0.0;  // degenerate row
    emb.phi_ehr(1, 1) = 0.0;
    auto [cs, st] = ctx::select_inter(samples, emb, 1.0);
    CHECK(st.excluded == 1);
    for (const auto& it : cs.items) CHECK(it.source_id != "d1");
}

TEST_CASE("select_inter_intra: single sample matches the mean, sigma4 = 0, empty selection") {
    auto samples = dummy_samples(1);
    auto emb = embeddings_with_cosines(samples, {0.4});
    auto [cs, st] = ctx::select_inter_intra(samples, emb, 1.5);
    CHECK(st.gamma2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.gamma3 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.gamma4 == doctest::Approx((st.gamma1 + st.gamma2 + st.gamma3) / 3.0).epsilon(1e-12));
    CHECK(st.sigma4 == 0.0);
    CHECK(cs.size() == 0);
}

TEST_CASE("similarity selection: invariant to sample order and embedding rotation") {
    auto samples = dummy_samples(6);
    std::vector<double> cos{0.9, 0.1, 0.7, 0.85, -0.2, 0.6};
    auto emb = embeddings_with_cosines(samples, cos);
    auto base = ctx::select_inter(samples, emb, 1.0).first;
    std::set<std::string> base_ids;
    for (const auto& it : base.items) base_ids.insert(it.source_id);

    // permutation of inputs
    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    std::vector<data::MultimodalSample> psamples;
    std::vector<double> pcos;
    for (int i : perm) {
        psamples.push_back(samples[static_cast<size_t>(i)]);
        pcos.push_back(cos[static_cast<size_t>(i)]);
    }
    auto pemb = embeddings_with_cosines(psamples, pcos);
    auto permuted = ctx::select_inter(psamples, pemb, 1.0).first;
    std::set<std::string> perm_ids;
    for (const auto& it : permuted.items) perm_ids.insert(it.source_id);
    CHECK(perm_ids == base_ids);

    // common rotation (Householder in 2d) preserves cosines hence selection
    auto rot = emb;
    double u0 = 0.6, u1 = 0.8;
    for (Mat* mz : {&rot.phi_ehr, &rot.phi_cxr}) {
        for (int i = 0; i < mz->rows; ++i) {
            double p = u0 * (*mz)(i, 0) + u1 * (*mz)(i, 1);
            (*mz)(i, 0) -= 2.0 * p * u0;
            (*mz)(i, 1) -= 2.0 * p * u1;
        }
    }
    auto rotated = ctx::select_inter(samples, rot, 1.0).first;
    std::set<std::string> rot_ids;
    for (const auto& it : rotated.items) rot_ids.insert(it.source_id);
    CHECK(rot_ids == base_ids);
}

TEST_CASE("select_hem: agrees with a per-sample loss sort oracle") {
    net::NetConfig nc;
    nc.t = 4;
    nc.f = 2;
    nc.h = 4;
    nc.w = 4;
    nc.d_embed = 4;
    nc.conv1 = 2;
    nc.conv2 = 2;
    net::FusionNet fnet(nc);
    auto params = fnet.init_params(31);
    auto samples = dummy_samples(10);

    // oracle: rank by BCE computed directly from forward probabilities
    std::vector<std::pair<double, int>> ranked;
    for (int i = 0; i < 10; ++i) {
        double p = fnet.forward(params, samples[static_cast<size_t>(i)]).prob;
        double y = samples[static_cast<size_t>(i)].label;
        ranked.emplace_back(-(y * std::log(p) + (1.0 - y) * std::log(1.0 - p)), i);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    auto cs = ctx::select_hem(fnet, params, samples, 0.4);
    REQUIRE(cs.size() == 4);  // ceil(0.4 * 10)
    for (int k = 0; k < 4; ++k)
        CHECK(cs.items[static_cast<size_t>(k)].source_id ==
              samples[static_cast<size_t>(ranked[static_cast<size_t>(k)].second)].id);

    // fraction 1.0 takes everything; top-10% is a subset of top-20%
    CHECK(ctx::select_hem(fnet, params, samples, 1.0).size() == 10);
    auto top1 = ctx::select_hem(fnet, params, samples, 0.1);
    auto top2 = ctx::select_hem(fnet, params, samples, 0.2);
    std::set<std::string> set1, set2;
    for (const auto& it : top1.items) set1.insert(it.source_id);
    for (const auto& it : top2.items) set2.insert(it.source_id);
    CHECK(std::includes(set2.begin(), set2.end(), set1.begin(), set1.end()));
}

TEST_CASE("build: corruption count and union sizes") {
    auto samples = dummy_samples(7);
    ctx::BuildInputs in;
    in.train = &samples;
    in.seed = 5;
    auto corr = ctx::build("corruptions", in);
    CHECK(corr.size() == 70);  // 10 kinds x 7 samples
    for (const auto& it : corr.items) {
        CHECK(it.seq.rows == 4);
        CHECK(it.img.rows == 4);
        CHECK(it.provenance.starts_with("corruption:"));
    }

    auto emb = embeddings_with_cosines(samples, {0.9, 0.1, 0.7, 0.85, -0.4, 0.6, 0.8});
    in.embeddings = &emb;
    auto inter = ctx::build("inter", in);
    auto m1 = ctx::build("medcertain_I", in);
    CHECK(m1.size() == corr.size() + inter.size());

    CHECK_THROWS_AS((void)ctx::build("inter", ctx::BuildInputs{.train = &samples}),
                    certain::config_error);
    CHECK_THROWS_AS((void)ctx::build("nope", in), certain::config_error);
}

TEST_CASE("context set: JSONL round trip with null labels and provenance") {
    auto samples = dummy_samples(3);
    ctx::BuildInputs in;
    in.train = &samples;
    in.seed = 2;
    auto cs = ctx::build("corruptions", in);
    auto dir = std::filesystem::temp_directory_path() / "certain_ctx_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "context.jsonl").string();
    ctx::save_context(cs, path);
    auto back = ctx::load_context(path);
    REQUIRE(back.size() == cs.size());
    for (int i = 0; i < cs.size(); ++i) {
        CHECK(back.items[static_cast<size_t>(i)].source_id == cs.items[static_cast<size_t>(i)].source_id);
        CHECK(back.items[static_cast<size_t>(i)].provenance == cs.items[static_cast<size_t>(i)].provenance);
        CHECK(back.items[static_cast<size_t>(i)].seq == cs.items[static_cast<size_t>(i)].seq);
        CHECK(back.items[static_cast<size_t>(i)].img == cs.items[static_cast<size_t>(i)].img);
    }
    std::filesystem::remove_all(dir);
}
