#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "certain/tune.hpp"
#include "certain/util.hpp"

using namespace certain;

TEST_CASE("sample_config: 1000 draws stay inside the declared space") {
    tune::SearchSpace space;
    space.best_det_lr = 2e-3;
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        auto det = tune::sample_config(space, "deterministic", rng);
        CHECK(tune::config_in_space(space, det));
        auto sto = tune::sample_config(space, "stochastic", rng);
        CHECK(tune::config_in_space(space, sto));
        CHECK(sto.lr >= space.best_det_lr / 10.0);
        CHECK(sto.lr <= space.best_det_lr * 10.0);
        CHECK((sto.context_batch == 16 || sto.context_batch == 32));
    }
}

TEST_CASE("search: fixed master seed reproduces the sampled configs and the choice") {
    tune::SearchSpace space;
    auto fake = [](const tune::TrialConfig& c, uint64_t, int, std::string*) -> std::array<double, 2> {
        return {1.0 / (1.0 + c.lr), 0.5};
    };
    auto a = tune::search(space, "deterministic", 6, 2, 77, fake);
    auto b = tune::search(space, "deterministic", 6, 2, 77, fake);
    CHECK(a.best_index == b.best_index);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].config.lr == b.records[i].config.lr);
        CHECK(a.records[i].seed == b.records[i].seed);
    }
}

TEST_CASE("search: argmax of a deterministic metric matches brute force") {
    tune::SearchSpace space;
    auto score = [](const tune::TrialConfig& c) { return -std::fabs(std::log10(c.lr) + 3.0); };
    auto fake = [&](const tune::TrialConfig& c, uint64_t, int, std::string*) -> std::array<double, 2> {
        return {score(c), 0.0};
    };
    auto res = tune::search(space, "deterministic", 12, 3, 123, fake);

    // brute force over the same sampled configs
    double best = -1e300;
    int best_idx = -1;
    for (int ci = 0; ci < 12; ++ci) {
        Rng rng(derive_seed(123, hash_str("tune_config"), static_cast<uint64_t>(ci)));
        auto c = tune::sample_config(space, "deterministic", rng);
        if (score(c) > best) {
            best = score(c);
            best_idx = ci;
        }
    }
    CHECK(res.best_index == best_idx);
    CHECK(res.best_mean_val_auroc == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("search: n_configs = 1 wins; failures are excluded and surfaced") {
    tune::SearchSpace space;
    auto fake = [](const tune::TrialConfig&, uint64_t, int, std::string*) -> std::array<double, 2> {
        return {0.9, 0.4};
    };
    auto solo = tune::search(space, "stochastic", 1, 2, 3, fake);
    CHECK(solo.best_index == 0);

    int call = 0;
    auto flaky = [&](const tune::TrialConfig&, uint64_t, int, std::string*) -> std::array<double, 2> {
        ++call;
        if (call % 2 == 1) throw numeric_error("synthetic failure");
        return {0.7, 0.3};
    };
    auto res = tune::search(space, "deterministic", 3, 2, 9, flaky);
    CHECK(res.failed_trials == 3);
    int failed_records = 0;
    for (const auto& r : res.records) {
        if (r.failed) {
            ++failed_records;
            CHECK(r.error.find("synthetic failure") != std::string::npos);
        }
    }
    CHECK(failed_records == 3);
    CHECK(res.best_index >= 0);
}

TEST_CASE("finalize: mean and standard error against hand computation") {
    tune::TrialConfig cfg;
    int call = 0;
    double vals[] = {0.8, 0.9, 0.7};
    auto fake = [&](const tune::TrialConfig&, uint64_t) -> std::array<double, 4> {
        double v = vals[call++ % 3];
        return {v, v / 2.0, v, v / 2.0};
    };
    auto r = tune::finalize(cfg, 3, 1, fake);
    CHECK(r.auroc_mean == doctest::Approx(0.8).epsilon(1e-12));
    // sample std = 0.1, se = 0.1/sqrt(3)
    CHECK(r.auroc_se == doctest::Approx(0.1 / std::sqrt(3.0)).epsilon(1e-9));
    CHECK_FALSE(r.single_seed);

    auto constant = [&](const tune::TrialConfig&, uint64_t) -> std::array<double, 4> {
        return {0.5, 0.5, 0.5, 0.5};
    };
    auto rc = tune::finalize(cfg, 4, 1, constant);
    CHECK(rc.auroc_se == doctest::Approx(0.0).epsilon(1e-15));

    auto r1 = tune::finalize(cfg, 1, 1, constant);
    CHECK(r1.single_seed);
    CHECK(r1.auroc_se == 0.0);
}

TEST_CASE("records: trials.jsonl and best.json are written") {
    tune::SearchSpace space;
    auto fake = [](const tune::TrialConfig& c, uint64_t, int, std::string*) -> std::array<double, 2> {
        return {c.lr, 0.0};
    };
    auto res = tune::search(space, "deterministic", 2, 2, 5, fake);
    auto dir = std::filesystem::temp_directory_path() / "certain_tune_test";
    std::filesystem::create_directories(dir);
    tune::save_trials(res.records, (dir / "trials.jsonl").string());
    tune::save_best(res, (dir / "best.json").string());
    CHECK(std::filesystem::file_size(dir / "trials.jsonl") > 0);
    CHECK(std::filesystem::file_size(dir / "best.json") > 0);
    std::filesystem::remove_all(dir);
}
