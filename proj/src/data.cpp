#include "certain/data.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "certain/corrupt.hpp"
#include "certain/rng.hpp"
#include "certain/util.hpp"

namespace certain::data {

namespace {

constexpr int kLatentDim = 4;  // z0 shared, z1 sequence-private, z2 image-private, z3 nuisance
constexpr double kAr = 0.8;          // AR(1) coefficient
constexpr double kDriftScale = 0.2;  // latent drift injected per step
constexpr double kSeqNoise = 0.3;
constexpr double kLabelBias = -1.5;  // keeps prevalence below one half
constexpr double kTercile = 0.43072729929545756;  // Phi^-1(2/3)

// Fixed task matrices derived from the manifest seed. The sequence drift
// reads (z0, z1) and is active only over the first half of the window; the
// image bump field reads (z0, z2). The shared z0 is what ties the pair
// together, while each modality owns one private label factor, so the label
// (on z0, z1, z2) is only fully recoverable by fusing both inputs.
struct TaskParams {
    Mat a;  // f x 2, drift map on (z0, z1)
    Mat b;  // 6 x 2, image parameter map on (z0, z2)
    std::vector<double> w = {0.9, 0.9, 1.0};  // label weights on (z0, z1, z2)
};

TaskParams make_task(const DatasetManifest& m) {
    TaskParams tp;
    Rng rng(derive_seed(m.seed, hash_str("task_matrices")));
    tp.a = Mat(m.dims.f, 2);
    for (double& x : tp.a.v) x = rng.normal();
    tp.b = Mat(6, 2);
    for (double& x : tp.b.v) x = 0.7 * rng.normal();
    return tp;
}

Mat make_seq(const Dims& d, const TaskParams& tp, const std::vector<double>& z, Rng& rng) {
    std::vector<double> drift(static_cast<size_t>(d.f), 0.0);
    for (int f = 0; f < d.f; ++f)
        drift[static_cast<size_t>(f)] =
            kDriftScale * (tp.a(f, 0) * z[0] + tp.a(f, 1) * z[1]);
    Mat seq(d.t, d.f);
    std::vector<double> prev(static_cast<size_t>(d.f), 0.0);
    const int active = d.t / 2;  // signal lives in the early window
    for (int t = 0; t < d.t; ++t) {
        for (int f = 0; f < d.f; ++f) {
            double x = kAr * prev[static_cast<size_t>(f)] +
                       (t < active ? drift[static_cast<size_t>(f)] : 0.0) +
                       kSeqNoise * rng.normal();
            seq(t, f) = x;
            prev[static_cast<size_t>(f)] = x;
        }
    }
    return seq;
}

Mat make_img(const Dims& d, const TaskParams& tp, const std::vector<double>& z) {
    double u[6];
    for (int i = 0; i < 6; ++i) u[i] = tp.b(i, 0) * z[0] + tp.b(i, 1) * z[2];
    double c1x = 0.32 + 0.20 * std::tanh(u[0]);
    double c1y = 0.35 + 0.20 * std::tanh(u[1]);
    double c2x = 0.68 + 0.20 * std::tanh(u[2]);
    double c2y = 0.65 + 0.20 * std::tanh(u[3]);
    double a1 = 0.38 + 0.25 * std::tanh(u[4]);
    double a2 = -0.38 - 0.25 * std::tanh(u[5]);
    const double s1 = 2.0 * 0.11 * 0.11, s2 = 2.0 * 0.16 * 0.16;
    Mat img(d.h, d.w);
    for (int y = 0; y < d.h; ++y) {
        double py = (y + 0.5) / d.h;
        for (int x = 0; x < d.w; ++x) {
            double px = (x + 0.5) / d.w;
            double d1 = (px - c1x) * (px - c1x) + (py - c1y) * (py - c1y);
            double d2 = (px - c2x) * (px - c2x) + (py - c2y) * (py - c2y);
            img(y, x) = clamp01(0.5 + a1 * std::exp(-d1 / s1) + a2 * std::exp(-d2 / s2));
        }
    }
    return img;
}

MultimodalSample make_sample(const DatasetManifest& m, const TaskParams& tp, int index) {
    Rng rng(derive_seed(m.seed, hash_str("sample"), static_cast<uint64_t>(index)));
    std::vector<double> z(kLatentDim);
    for (double& x : z) x = rng.normal();

    MultimodalSample s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%06d", index);
    s.id = buf;
    s.seq = make_seq(m.dims, tp, z, rng);

    s.mismatched = rng.bernoulli(m.mismatch_rate);
    if (s.mismatched) {
        std::vector<double> z_other(kLatentDim);
        for (double& x : z_other) x = rng.normal();
        s.img = make_img(m.dims, tp, z_other);
    } else {
        s.img = make_img(m.dims, tp, z);
    }

    double logit = kLabelBias + tp.w[0] * z[0] + tp.w[1] * z[1] + tp.w[2] * z[2];
    s.label = rng.bernoulli(sigmoid(logit)) ? 1 : 0;

    s.group.age_band = z[3] < -kTercile ? "A1" : (z[3] < kTercile ? "A2" : "A3");
    s.group.sex = z[1] < 0.0 ? "M" : "F";
    return s;
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void append_matrix(std::string& out, const Mat& m) {
    out += '[';
    for (int i = 0; i < m.rows; ++i) {
        if (i) out += ',';
        out += '[';
        for (int j = 0; j < m.cols; ++j) {
            if (j) out += ',';
            out += fmt_double(m(i, j));
        }
        out += ']';
    }
    out += ']';
}

Mat parse_matrix(const nlohmann::json& j, const char* field, int line) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw parse_error("line " + std::to_string(line) + ": field '" + field +
                          "' is not a 2-d array");
    Mat m(static_cast<int>(j.size()), static_cast<int>(j[0].size()));
    for (int i = 0; i < m.rows; ++i) {
        const auto& row = j[static_cast<size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != m.cols)
            throw parse_error("line " + std::to_string(line) + ": ragged rows in '" +
                              std::string(field) + "'");
        for (int k = 0; k < m.cols; ++k) m(i, k) = row[static_cast<size_t>(k)].get<double>();
    }
    return m;
}

const nlohmann::json& require_field(const nlohmann::json& j, const char* field, int line) {
    auto it = j.find(field);
    if (it == j.end())
        throw parse_error("line " + std::to_string(line) + ": missing field '" + field + "'");
    return *it;
}

}  // namespace

Dataset generate(const DatasetManifest& m) {
    if (m.n_train < 1 || m.n_val < 1 || m.n_test < 1)
        throw config_error("dataset counts must all be >= 1");
    if (m.dims.t < 4 || m.dims.f < 2 || m.dims.h < 4 || m.dims.w < 4)
        throw config_error("dataset dims must be at least (T,F,H,W) = (4,2,4,4)");
    if (m.mismatch_rate < 0.0 || m.mismatch_rate > 1.0)
        throw config_error("mismatch_rate must lie in [0,1]");

    TaskParams tp = make_task(m);
    Dataset ds;
    ds.manifest = m;
    int index = 1;
    for (int i = 0; i < m.n_train; ++i) ds.train.push_back(make_sample(m, tp, index++));
    for (int i = 0; i < m.n_val; ++i) ds.val.push_back(make_sample(m, tp, index++));
    for (int i = 0; i < m.n_test; ++i) ds.test.push_back(make_sample(m, tp, index++));

    corrupt::Params cp;
    ds.test_shifted.reserve(ds.test.size());
    for (size_t i = 0; i < ds.test.size(); ++i) {
        MultimodalSample s = ds.test[i];
        Rng rng(derive_seed(m.seed, hash_str("shift"), static_cast<uint64_t>(i)));
        for (const auto& kind : m.shift_spec) corrupt::apply_named(kind, s.seq, s.img, cp, rng);
        ds.test_shifted.push_back(std::move(s));
    }
    return ds;
}

void save_jsonl(const std::vector<MultimodalSample>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    std::string line;
    for (const auto& s : samples) {
        line.clear();
        line += "{\"id\":\"" + s.id + "\",\"seq\":";
        append_matrix(line, s.seq);
        line += ",\"img\":";
        append_matrix(line, s.img);
        line += ",\"label\":" + std::to_string(s.label);
        line += ",\"group\":{\"age_band\":\"" + s.group.age_band + "\",\"sex\":\"" + s.group.sex +
                "\"}";
        line += s.mismatched ? ",\"mismatched\":true}" : ",\"mismatched\":false}";
        line += '\n';
        out << line;
    }
}

std::vector<MultimodalSample> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path);
    std::vector<MultimodalSample> samples;
    std::set<std::string> seen;
    std::string text;
    int line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            MultimodalSample s;
            s.id = require_field(j, "id", line_no).get<std::string>();
            s.seq = parse_matrix(require_field(j, "seq", line_no), "seq", line_no);
            s.img = parse_matrix(require_field(j, "img", line_no), "img", line_no);
            const auto& lab = require_field(j, "label", line_no);
            if (!lab.is_number_integer())
                throw parse_error("line " + std::to_string(line_no) + ": field 'label' must be 0 or 1");
            s.label = lab.get<int>();
            if (s.label != 0 && s.label != 1)
                throw parse_error("line " + std::to_string(line_no) + ": field 'label' must be 0 or 1");
            const auto& g = require_field(j, "group", line_no);
            s.group.age_band = require_field(g, "age_band", line_no).get<std::string>();
            s.group.sex = require_field(g, "sex", line_no).get<std::string>();
            s.mismatched = require_field(j, "mismatched", line_no).get<bool>();
            if (!seen.insert(s.id).second)
                throw parse_error(path + ": line " + std::to_string(line_no) + ": duplicate id '" +
                                  s.id + "'");
            samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return samples;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["seed"] = m.seed;
    j["n_train"] = m.n_train;
    j["n_val"] = m.n_val;
    j["n_test"] = m.n_test;
    j["dims"] = {{"T", m.dims.t}, {"F", m.dims.f}, {"H", m.dims.h}, {"W", m.dims.w}};
    j["mismatch_rate"] = m.mismatch_rate;
    j["shift_spec"] = m.shift_spec;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.seed = j.at("seed").get<uint64_t>();
        m.n_train = j.at("n_train").get<int>();
        m.n_val = j.at("n_val").get<int>();
        m.n_test = j.at("n_test").get<int>();
        m.dims.t = j.at("dims").at("T").get<int>();
        m.dims.f = j.at("dims").at("F").get<int>();
        m.dims.h = j.at("dims").at("H").get<int>();
        m.dims.w = j.at("dims").at("W").get<int>();
        m.mismatch_rate = j.at("mismatch_rate").get<double>();
        m.shift_spec = j.at("shift_spec").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    return m;
}

void save(const Dataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_manifest(ds.manifest, dir + "/dataset.manifest.json");
    save_jsonl(ds.train, dir + "/train.jsonl");
    save_jsonl(ds.val, dir + "/val.jsonl");
    save_jsonl(ds.test, dir + "/test.jsonl");
    save_jsonl(ds.test_shifted, dir + "/test_shifted.jsonl");
}

Dataset load(const std::string& dir) {
    Dataset ds;
    ds.manifest = load_manifest(dir + "/dataset.manifest.json");
    ds.train = load_jsonl(dir + "/train.jsonl");
    ds.val = load_jsonl(dir + "/val.jsonl");
    ds.test = load_jsonl(dir + "/test.jsonl");
    ds.test_shifted = load_jsonl(dir + "/test_shifted.jsonl");
    if (static_cast<int>(ds.train.size()) != ds.manifest.n_train ||
        static_cast<int>(ds.val.size()) != ds.manifest.n_val ||
        static_cast<int>(ds.test.size()) != ds.manifest.n_test)
        throw parse_error(dir + ": record counts do not match dataset.manifest.json");
    return ds;
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> split_cv(
    const std::vector<MultimodalSample>& train, int folds, uint64_t seed) {
    int n = static_cast<int>(train.size());
    if (folds < 1) throw config_error("folds must be >= 1");
    if (folds > n) throw config_error("folds exceeds training set size");
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(seed, hash_str("cv_folds")));
    rng.shuffle(order);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> out(static_cast<size_t>(folds));
    for (int pos = 0; pos < n; ++pos) {
        int fold = pos % folds;
        for (int f = 0; f < folds; ++f) {
            auto& dst = f == fold ? out[static_cast<size_t>(f)].second : out[static_cast<size_t>(f)].first;
            dst.push_back(order[static_cast<size_t>(pos)]);
        }
    }
    return out;
}

std::vector<MultimodalSample> mix_shifted(const std::vector<MultimodalSample>& test,
                                          const std::vector<MultimodalSample>& shifted,
                                          double fraction, uint64_t seed) {
    if (test.size() != shifted.size())
        throw config_error("mix_shifted: test and shifted sets differ in size");
    std::vector<MultimodalSample> out;
    out.reserve(test.size());
    for (size_t i = 0; i < test.size(); ++i) {
        if (test[i].id != shifted[i].id)
            throw config_error("mix_shifted: id mismatch at index " + std::to_string(i));
        Rng rng(derive_seed(seed, hash_str("mix"), static_cast<uint64_t>(i)));
        out.push_back(rng.bernoulli(fraction) ? shifted[i] : test[i]);
    }
    return out;
}

double label_prevalence(const std::vector<MultimodalSample>& samples) {
    if (samples.empty()) return 0.0;
    double s = 0.0;
    for (const auto& x : samples) s += x.label;
    return s / static_cast<double>(samples.size());
}

int count_mismatched(const std::vector<MultimodalSample>& samples) {
    int n = 0;
    for (const auto& x : samples) n += x.mismatched ? 1 : 0;
    return n;
}

}  // namespace certain::data
