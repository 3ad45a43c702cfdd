#include "certain/contextset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "certain/rng.hpp"
#include "certain/util.hpp"

namespace certain::ctx {

namespace {

ContextItem item_from(const data::MultimodalSample& s, std::string provenance) {
    ContextItem it;
    it.source_id = s.id;
    it.seq = s.seq;
    it.img = s.img;
    it.provenance = std::move(provenance);
    it.group = s.group;
    it.source_mismatched = s.mismatched;
    return it;
}

// Shared similarity scan. Means and deviations are two fixed-order passes so
// sigma is bit-stable.
SimilarityStats similarity_stats(const std::vector<data::MultimodalSample>& train,
                                 const contrastive::EmbeddingSet& emb,
                                 std::vector<double>* combined) {
    const int n = emb.phi_ehr.rows;
    if (n == 0) throw config_error("similarity selection: empty embedding set");
    if (emb.ids.size() != train.size())
        throw config_error("similarity selection: embeddings do not cover the training set");
    const int dp = emb.phi_ehr.cols;

    SimilarityStats st;
    st.d.assign(static_cast<size_t>(n), std::nan(""));

    std::vector<double> mean_e(static_cast<size_t>(dp), 0.0), mean_c(static_cast<size_t>(dp), 0.0);
    std::vector<char> valid(static_cast<size_t>(n), 0);
    int n_valid = 0;
    for (int i = 0; i < n; ++i) {
        std::span<const double> pe(emb.phi_ehr.row(i), static_cast<size_t>(dp));
        std::span<const double> pc(emb.phi_cxr.row(i), static_cast<size_t>(dp));
        double c = cosine(pe, pc);
        if (!std::isfinite(c)) {
            ++st.excluded;
            continue;
        }
        valid[static_cast<size_t>(i)] = 1;
        ++n_valid;
        st.d[static_cast<size_t>(i)] = c;
        for (int k = 0; k < dp; ++k) {
            mean_e[static_cast<size_t>(k)] += pe[static_cast<size_t>(k)];
            mean_c[static_cast<size_t>(k)] += pc[static_cast<size_t>(k)];
        }
    }
    if (n_valid == 0) throw config_error("similarity selection: no usable embeddings");
    for (int k = 0; k < dp; ++k) {
        mean_e[static_cast<size_t>(k)] /= n_valid;
        mean_c[static_cast<size_t>(k)] /= n_valid;
    }

    double g1 = 0.0, g2 = 0.0, g3 = 0.0;
    std::vector<double> intra_e(static_cast<size_t>(n), 0.0), intra_c(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        if (!valid[static_cast<size_t>(i)]) continue;
        std::span<const double> pe(emb.phi_ehr.row(i), static_cast<size_t>(dp));
        std::span<const double> pc(emb.phi_cxr.row(i), static_cast<size_t>(dp));
        double ce = cosine(pe, mean_e);
        double cc = cosine(pc, mean_c);
        if (!std::isfinite(ce)) ce = 0.0;
        if (!std::isfinite(cc)) cc = 0.0;
        intra_e[static_cast<size_t>(i)] = ce;
        intra_c[static_cast<size_t>(i)] = cc;
        g1 += st.d[static_cast<size_t>(i)];
        g2 += ce;
        g3 += cc;
    }
    st.gamma1 = g1 / n_valid;
    st.gamma2 = g2 / n_valid;
    st.gamma3 = g3 / n_valid;
    st.gamma4 = (st.gamma1 + st.gamma2 + st.gamma3) / 3.0;

    double var1 = 0.0, var4 = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!valid[static_cast<size_t>(i)]) continue;
        double di = st.d[static_cast<size_t>(i)];
        double si = (di + intra_e[static_cast<size_t>(i)] + intra_c[static_cast<size_t>(i)]) / 3.0;
        var1 += (di - st.gamma1) * (di - st.gamma1);
        var4 += (si - st.gamma4) * (si - st.gamma4);
    }
    st.sigma = std::sqrt(var1 / n_valid);    // population std
    st.sigma4 = std::sqrt(var4 / n_valid);

    if (combined) {
        combined->assign(static_cast<size_t>(n), std::nan(""));
        for (int i = 0; i < n; ++i) {
            if (valid[static_cast<size_t>(i)])
                (*combined)[static_cast<size_t>(i)] =
                    (st.d[static_cast<size_t>(i)] + intra_e[static_cast<size_t>(i)] +
                     intra_c[static_cast<size_t>(i)]) / 3.0;
        }
    }
    return st;
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

}  // namespace

ContextSet build_corruptions(const std::vector<data::MultimodalSample>& train,
                             const corrupt::Params& params, uint64_t seed) {
    ContextSet cs;
    cs.items.reserve(train.size() * 10);
    for (const auto& s : train) {
        for (auto kind : corrupt::all_seq_kinds()) {
            ContextItem it = item_from(s, "corruption:" + corrupt::kind_name(kind));
            Rng rng(derive_seed(seed, hash_str(s.id), hash_str(corrupt::kind_name(kind))));
            it.seq = corrupt::corrupt_seq(s.seq, kind, params, rng);
            cs.items.push_back(std::move(it));
        }
        for (auto kind : corrupt::all_img_kinds()) {
            ContextItem it = item_from(s, "corruption:" + corrupt::kind_name(kind));
            Rng rng(derive_seed(seed, hash_str(s.id), hash_str(corrupt::kind_name(kind))));
            it.img = corrupt::corrupt_img(s.img, kind, params, rng);
            cs.items.push_back(std::move(it));
        }
    }
    return cs;
}

std::pair<ContextSet, SimilarityStats> select_inter(
    const std::vector<data::MultimodalSample>& train, const contrastive::EmbeddingSet& emb,
    double v) {
    if (v < 1.0 || v > 2.0) throw config_error("select_inter: v must lie in [1,2]");
    SimilarityStats st = similarity_stats(train, emb, nullptr);
    st.v = v;
    st.t = st.gamma1 - v * st.sigma;
    st.t4 = st.gamma4 - st.c_thresh * st.sigma4;
    const int n = static_cast<int>(train.size());
    ContextSet cs;
    for (int i = 0; i < n; ++i) {
        double di = st.d[static_cast<size_t>(i)];
        if (std::isfinite(di) && di < st.t)
            cs.items.push_back(item_from(train[static_cast<size_t>(i)], "similarity:inter"));
    }
    return {std::move(cs), std::move(st)};
}

std::pair<ContextSet, SimilarityStats> select_inter_intra(
    const std::vector<data::MultimodalSample>& train, const contrastive::EmbeddingSet& emb,
    double c_thresh) {
    if (c_thresh < 1.0 || c_thresh > 2.0)
        throw config_error("select_inter_intra: c_thresh must lie in [1,2]");
    std::vector<double> combined;
    SimilarityStats st = similarity_stats(train, emb, &combined);
    st.c_thresh = c_thresh;
    st.t = st.gamma1 - st.v * st.sigma;
    st.t4 = st.gamma4 - c_thresh * st.sigma4;
    const int n = static_cast<int>(train.size());
    ContextSet cs;
    for (int i = 0; i < n; ++i) {
        double si = combined[static_cast<size_t>(i)];
        if (std::isfinite(si) && si < st.t4)
            cs.items.push_back(item_from(train[static_cast<size_t>(i)], "similarity:inter_intra"));
    }
    return {std::move(cs), std::move(st)};
}

ContextSet select_hem(const net::FusionNet& fnet, std::span<const double> params,
                      const std::vector<data::MultimodalSample>& train, double fraction,
                      int threads) {
    if (fraction <= 0.0 || fraction > 1.0) throw config_error("select_hem: fraction must lie in (0,1]");
    const int n = static_cast<int>(train.size());
    std::vector<double> loss(static_cast<size_t>(n), 0.0);
    parallel_for(n, threads, [&](int i) {
        const auto& s = train[static_cast<size_t>(i)];
        double p = fnet.forward(params, s).prob;
        p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
        loss[static_cast<size_t>(i)] =
            -(s.label * std::log(p) + (1.0 - s.label) * std::log(1.0 - p));
    });
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return loss[static_cast<size_t>(a)] > loss[static_cast<size_t>(b)];
    });
    int take = static_cast<int>(std::ceil(fraction * n));
    ContextSet cs;
    for (int k = 0; k < take && k < n; ++k)
        cs.items.push_back(item_from(train[static_cast<size_t>(order[static_cast<size_t>(k)])], "hem"));
    return cs;
}

ContextSet build(const std::string& strategy, const BuildInputs& in) {
    if (!in.train) throw config_error("context build: training samples are required");
    auto need_embeddings = [&]() {
        if (!in.embeddings)
            throw config_error("context strategy '" + strategy +
                               "' needs contrastive embeddings; run `certain pretrain` first");
    };
    if (strategy == "corruptions") return build_corruptions(*in.train, in.corruption, in.seed);
    if (strategy == "inter") {
        need_embeddings();
        return select_inter(*in.train, *in.embeddings, in.v).first;
    }
    if (strategy == "inter_intra") {
        need_embeddings();
        return select_inter_intra(*in.train, *in.embeddings, in.c_thresh).first;
    }
    if (strategy == "medcertain_I" || strategy == "medcertain_II") {
        need_embeddings();
        ContextSet cs = build_corruptions(*in.train, in.corruption, in.seed);
        ContextSet sim = strategy == "medcertain_I"
                             ? select_inter(*in.train, *in.embeddings, in.v).first
                             : select_inter_intra(*in.train, *in.embeddings, in.c_thresh).first;
        for (auto& it : sim.items) cs.items.push_back(std::move(it));
        return cs;
    }
    if (strategy == "hem") {
        if (!in.fnet || in.model_params.empty())
            throw config_error("context strategy 'hem' needs a trained deterministic checkpoint; "
                               "run `certain train` first");
        return select_hem(*in.fnet, in.model_params, *in.train, in.hem_fraction, in.threads);
    }
    throw config_error("unknown context strategy '" + strategy + "'");
}

void save_context(const ContextSet& cs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    std::string line;
    for (const auto& it : cs.items) {
        line.clear();
        line += "{\"id\":\"" + it.source_id + "\",\"seq\":";
        append_matrix(line, it.seq);
        line += ",\"img\":";
        append_matrix(line, it.img);
        line += ",\"label\":null,\"group\":{\"age_band\":\"" + it.group.age_band +
                "\",\"sex\":\"" + it.group.sex + "\"}";
        line += it.source_mismatched ? ",\"mismatched\":true" : ",\"mismatched\":false";
        line += ",\"provenance\":\"" + it.provenance + "\"}\n";
        out << line;
    }
}

ContextSet load_context(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path);
    ContextSet cs;
    std::string text;
    int line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        try {
            auto j = nlohmann::json::parse(text);
            if (!j.at("label").is_null())
                throw parse_error(path + ": line " + std::to_string(line_no) +
                                  ": context records must have null labels");
            ContextItem it;
            it.source_id = j.at("id").get<std::string>();
            const auto& seq = j.at("seq");
            const auto& img = j.at("img");
            it.seq = Mat(static_cast<int>(seq.size()), static_cast<int>(seq[0].size()));
            for (int r = 0; r < it.seq.rows; ++r)
                for (int c = 0; c < it.seq.cols; ++c)
                    it.seq(r, c) = seq[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
            it.img = Mat(static_cast<int>(img.size()), static_cast<int>(img[0].size()));
            for (int r = 0; r < it.img.rows; ++r)
                for (int c = 0; c < it.img.cols; ++c)
                    it.img(r, c) = img[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
            it.group.age_band = j.at("group").at("age_band").get<std::string>();
            it.group.sex = j.at("group").at("sex").get<std::string>();
            it.source_mismatched = j.at("mismatched").get<bool>();
            it.provenance = j.at("provenance").get<std::string>();
            cs.items.push_back(std::move(it));
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cs;
}

}  // namespace certain::ctx
