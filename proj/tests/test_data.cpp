#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "certain/data.hpp"
#include "certain/util.hpp"

using namespace certain;
namespace fs = std::filesystem;

namespace {

data::DatasetManifest small_manifest(uint64_t seed = 1) {
    data::DatasetManifest m;
    m.seed = seed;
    m.n_train = 40;
    m.n_val = 10;
    m.n_test = 15;
    m.dims = {12, 4, 8, 8};
    m.mismatch_rate = 0.3;
    return m;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generate: identical manifests give byte-identical serialized output") {
    TempDir d1("certain_data_a"), d2("certain_data_b");
    auto m = small_manifest(77);
    data::save(data::generate(m), d1.path.string());
    data::save(data::generate(m), d2.path.string());
    for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "test_shifted.jsonl",
                          "dataset.manifest.json"})
        CHECK(read_file(d1.path / f) == read_file(d2.path / f));
    // different seed diverges
    auto m2 = small_manifest(78);
    TempDir d3("certain_data_c");
    data::save(data::generate(m2), d3.path.string());
    CHECK(read_file(d1.path / "train.jsonl") != read_file(d3.path / "train.jsonl"));
}

TEST_CASE("generate: mismatch flags follow the configured rate") {
    auto m0 = small_manifest(5);
    m0.mismatch_rate = 0.0;
    auto ds0 = data::generate(m0);
    CHECK(data::count_mismatched(ds0.train) == 0);
    CHECK(data::count_mismatched(ds0.test) == 0);

    // binomial concentration: |count - 500| <= 3*sqrt(1000*0.25)
    data::DatasetManifest m;
    m.seed = 91;
    m.n_train = 1000;
    m.n_val = 1;
    m.n_test = 1;
    m.dims = {6, 2, 4, 4};
    m.mismatch_rate = 0.5;
    auto ds = data::generate(m);
    double count = data::count_mismatched(ds.train);
    CHECK(std::fabs(count - 500.0) <= 3.0 * std::sqrt(1000.0 * 0.25));
}

TEST_CASE("generate: label prevalence lies in [0.1, 0.4] at n >= 1000") {
    data::DatasetManifest m;
    m.seed = 3;
    m.n_train = 1000;
    m.n_val = 1;
    m.n_test = 1;
    m.dims = {6, 2, 4, 4};
    auto ds = data::generate(m);
    double prev = data::label_prevalence(ds.train);
    CHECK(prev >= 0.1);
    CHECK(prev <= 0.4);
}

TEST_CASE("generate: shifted test keeps ids and labels, changes inputs") {
    auto ds = data::generate(small_manifest(13));
    REQUIRE(ds.test_shifted.size() == ds.test.size());
    bool any_input_diff = false;
    for (size_t i = 0; i < ds.test.size(); ++i) {
        CHECK(ds.test[i].id == ds.test_shifted[i].id);
        CHECK(ds.test[i].label == ds.test_shifted[i].label);
        if (!(ds.test[i].seq == ds.test_shifted[i].seq) ||
            !(ds.test[i].img == ds.test_shifted[i].img))
            any_input_diff = true;
    }
    CHECK(any_input_diff);
}

TEST_CASE("generate: invariants (img range, unique ids, disjoint splits)") {
    auto ds = data::generate(small_manifest(21));
    std::set<std::string> ids;
    auto scan = [&](const std::vector<data::MultimodalSample>& split) {
        for (const auto& s : split) {
            CHECK(ids.insert(s.id).second);
            for (double x : s.img.v) {
                CHECK(x >= 0.0);
                CHECK(x <= 1.0);
            }
            CHECK((s.label == 0 || s.label == 1));
        }
    };
    scan(ds.train);
    scan(ds.val);
    scan(ds.test);
}

TEST_CASE("generate: invalid dims or counts raise config errors") {
    auto m = small_manifest();
    m.n_train = 0;
    CHECK_THROWS_AS((void)data::generate(m), certain::config_error);
    m = small_manifest();
    m.dims.f = 1;
    CHECK_THROWS_AS((void)data::generate(m), certain::config_error);
    m = small_manifest();
    m.mismatch_rate = 1.5;
    CHECK_THROWS_AS((void)data::generate(m), certain::config_error);
}

TEST_CASE("save/load: field-for-field round trip") {
    TempDir d("certain_data_rt");
    auto ds = data::generate(small_manifest(31));
    data::save(ds, d.path.string());
    auto back = data::load(d.path.string());
    REQUIRE(back.train.size() == ds.train.size());
    for (size_t i = 0; i < ds.train.size(); ++i) {
        const auto& a = ds.train[i];
        const auto& b = back.train[i];
        CHECK(a.id == b.id);
        CHECK(a.seq == b.seq);
        CHECK(a.img == b.img);
        CHECK(a.label == b.label);
        CHECK(a.group.age_band == b.group.age_band);
        CHECK(a.group.sex == b.group.sex);
        CHECK(a.mismatched == b.mismatched);
    }
    CHECK(back.manifest.seed == ds.manifest.seed);
    CHECK(back.manifest.shift_spec == ds.manifest.shift_spec);
}

TEST_CASE("load: truncated record raises a parse error with the line number") {
    TempDir d("certain_data_trunc");
    auto ds = data::generate(small_manifest(37));
    auto path = (d.path / "broken.jsonl").string();
    data::save_jsonl(ds.train, path);
    auto text = read_file(path);
    std::ofstream(path, std::ios::binary) << text.substr(0, text.size() / 2 + 3);
    try {
        (void)data::load_jsonl(path);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
}

TEST_CASE("load: missing label field is reported by name") {
    TempDir d("certain_data_missing");
    auto path = (d.path / "m.jsonl").string();
    std::ofstream(path) << R"({"id":"x1","seq":[[0.0]],"img":[[0.0]],)"
                        << R"("group":{"age_band":"A1","sex":"M"},"mismatched":false})" << '\n';
    try {
        (void)data::load_jsonl(path);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("label") != std::string::npos);
        CHECK(msg.find("line 1") != std::string::npos);
    }
}

TEST_CASE("split_cv: even partition, full coverage, deterministic") {
    auto m = small_manifest(41);
    m.n_train = 10;
    auto ds = data::generate(m);
    auto folds = data::split_cv(ds.train, 5, 99);
    REQUIRE(folds.size() == 5);
    std::set<int> seen;
    for (const auto& [tr, va] : folds) {
        CHECK(va.size() == 2);
        CHECK(tr.size() == 8);
        std::set<int> tr_set(tr.begin(), tr.end());
        for (int i : va) {
            CHECK(!tr_set.count(i));
            CHECK(seen.insert(i).second);  // val folds are disjoint
        }
    }
    CHECK(seen.size() == 10);  // and cover everything

    auto folds2 = data::split_cv(ds.train, 5, 99);
    for (size_t f = 0; f < folds.size(); ++f) {
        CHECK(folds[f].first == folds2[f].first);
        CHECK(folds[f].second == folds2[f].second);
    }
    CHECK_THROWS_AS((void)data::split_cv(ds.train, 11, 1), certain::config_error);
}

TEST_CASE("mix_shifted: fraction 0 and 1 are the pure sets") {
    auto ds = data::generate(small_manifest(51));
    auto none = data::mix_shifted(ds.test, ds.test_shifted, 0.0, 1);
    auto all = data::mix_shifted(ds.test, ds.test_shifted, 1.0, 1);
    for (size_t i = 0; i < ds.test.size(); ++i) {
        CHECK(none[i].seq == ds.test[i].seq);
        CHECK(all[i].seq == ds.test_shifted[i].seq);
    }
}
