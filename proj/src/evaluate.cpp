#include "certain/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "certain/rng.hpp"
#include "certain/util.hpp"

namespace certain::eval {

double shannon_entropy(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
}

std::vector<PredictiveDistribution> predict(const net::FusionNet& fnet,
                                            std::span<const double> base_params,
                                            const var::VarState* vs,
                                            const std::vector<data::MultimodalSample>& samples,
                                            int j_eval, uint64_t seed, int threads) {
    if (j_eval < 1) throw config_error("predict: j_eval must be >= 1");
    int j = vs ? j_eval : 1;

    std::vector<std::vector<double>> thetas;
    thetas.reserve(static_cast<size_t>(j));
    if (vs) {
        for (int k = 0; k < j; ++k) {
            Rng rng(derive_seed(seed, hash_str("predict_draw"), static_cast<uint64_t>(k)));
            auto t = var::sample(*vs, rng);
            thetas.push_back(var::assemble(*vs, base_params, t));
        }
    } else {
        thetas.emplace_back(base_params.begin(), base_params.end());
    }

    std::vector<PredictiveDistribution> out(samples.size());
    parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
        auto& pd = out[static_cast<size_t>(i)];
        pd.id = samples[static_cast<size_t>(i)].id;
        pd.mc_probs.resize(static_cast<size_t>(j));
        double mean = 0.0;
        for (int k = 0; k < j; ++k) {
            double p = fnet.forward(thetas[static_cast<size_t>(k)], samples[static_cast<size_t>(i)]).prob;
            pd.mc_probs[static_cast<size_t>(k)] = p;
            mean += p;
        }
        pd.mean_prob = mean / static_cast<double>(j);
        pd.entropy = shannon_entropy(pd.mean_prob);
    });
    return out;
}

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
    const int n = static_cast<int>(scores.size());
    int pos = 0;
    for (int y : labels) pos += y == 1 ? 1 : 0;
    int neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    // average ranks with tie handling; U statistic
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
    });
    std::vector<double> rank(static_cast<size_t>(n));
    int i = 0;
    while (i < n) {
        int k = i;
        while (k + 1 < n &&
               scores[static_cast<size_t>(order[static_cast<size_t>(k + 1)])] ==
                   scores[static_cast<size_t>(order[static_cast<size_t>(i)])])
            ++k;
        double avg = 0.5 * (i + k) + 1.0;  // 1-based average rank of the tie block
        for (int m = i; m <= k; ++m) rank[static_cast<size_t>(order[static_cast<size_t>(m)])] = avg;
        i = k + 1;
    }
    double rank_sum = 0.0;
    for (int m = 0; m < n; ++m)
        if (labels[static_cast<size_t>(m)] == 1) rank_sum += rank[static_cast<size_t>(m)];
    double u = rank_sum - 0.5 * pos * (pos + 1.0);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> auprc(std::span<const double> scores, std::span<const int> labels) {
    const int n = static_cast<int>(scores.size());
    int pos = 0;
    for (int y : labels) pos += y == 1 ? 1 : 0;
    if (pos == 0) return std::nullopt;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    double ap = 0.0;
    int tp = 0;
    for (int k = 0; k < n; ++k) {
        if (labels[static_cast<size_t>(order[static_cast<size_t>(k)])] == 1) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(k + 1);
        }
    }
    return ap / static_cast<double>(pos);
}

double ece_10bin(const std::vector<PredictiveDistribution>& preds, std::span<const int> labels) {
    const int bins = 10;
    std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
    std::vector<int> count(bins, 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        double p = preds[i].mean_prob;
        double c = std::max(p, 1.0 - p);
        int pred = p >= 0.5 ? 1 : 0;
        int b = std::min(bins - 1, static_cast<int>(c * bins));
        conf[static_cast<size_t>(b)] += c;
        acc[static_cast<size_t>(b)] += pred == labels[i] ? 1.0 : 0.0;
        count[static_cast<size_t>(b)] += 1;
    }
    double ece = 0.0;
    for (int b = 0; b < bins; ++b) {
        if (count[static_cast<size_t>(b)] == 0) continue;
        double cb = conf[static_cast<size_t>(b)] / count[static_cast<size_t>(b)];
        double ab = acc[static_cast<size_t>(b)] / count[static_cast<size_t>(b)];
        ece += (static_cast<double>(count[static_cast<size_t>(b)]) / preds.size()) * std::fabs(ab - cb);
    }
    return ece;
}

SweepResult selective_sweep(const std::vector<PredictiveDistribution>& preds,
                            std::span<const int> labels) {
    const int n = static_cast<int>(preds.size());
    if (n == 0) throw config_error("selective_sweep: empty input");
    if (static_cast<int>(labels.size()) != n)
        throw shape_error("selective_sweep: labels length mismatch");

    // drop order: highest entropy first, ties broken by stable input order
    std::vector<int> drop_order(static_cast<size_t>(n));
    std::iota(drop_order.begin(), drop_order.end(), 0);
    std::stable_sort(drop_order.begin(), drop_order.end(), [&](int a, int b) {
        return preds[static_cast<size_t>(a)].entropy > preds[static_cast<size_t>(b)].entropy;
    });

    SweepResult res;
    res.rows.reserve(100);
    double sum_auroc = 0.0, sum_auprc = 0.0;
    int def_auroc = 0, def_auprc = 0;
    std::vector<char> dropped(static_cast<size_t>(n), 0);
    int k_prev = 0;
    for (int tau = 0; tau < 100; ++tau) {
        int k = tau * n / 100;
        for (int m = k_prev; m < k; ++m) dropped[static_cast<size_t>(drop_order[static_cast<size_t>(m)])] = 1;
        k_prev = k;
        std::vector<double> sc;
        std::vector<int> lb;
        sc.reserve(static_cast<size_t>(n - k));
        lb.reserve(static_cast<size_t>(n - k));
        for (int i = 0; i < n; ++i) {
            if (dropped[static_cast<size_t>(i)]) continue;
            sc.push_back(preds[static_cast<size_t>(i)].mean_prob);
            lb.push_back(labels[static_cast<size_t>(i)]);
        }
        ThresholdRow row;
        row.tau = tau;
        row.retained = static_cast<int>(sc.size());
        if (!sc.empty()) {
            row.auroc = auroc(sc, lb);
            row.auprc = auprc(sc, lb);
        }
        if (row.auroc) {
            sum_auroc += *row.auroc;
            ++def_auroc;
        } else {
            ++res.undefined_auroc;
        }
        if (row.auprc) {
            sum_auprc += *row.auprc;
            ++def_auprc;
        } else {
            ++res.undefined_auprc;
        }
        res.rows.push_back(std::move(row));
    }
    res.full_auroc = res.rows[0].auroc;
    res.full_auprc = res.rows[0].auprc;
    if (def_auroc > 0) res.selective_auroc = sum_auroc / def_auroc;
    if (def_auprc > 0) res.selective_auprc = sum_auprc / def_auprc;
    res.ece_10bin = ece_10bin(preds, labels);
    res.degenerate = !res.full_auroc.has_value();
    return res;
}

SelectiveReport subgroup_report(const std::vector<PredictiveDistribution>& preds,
                                std::span<const int> labels,
                                const std::vector<data::Group>& groups) {
    if (preds.size() != groups.size() || preds.size() != labels.size())
        throw shape_error("subgroup_report: inputs must align");
    SelectiveReport rep;
    rep.overall = selective_sweep(preds, labels);

    auto run_group = [&](const std::string& key, auto member_of) {
        std::vector<PredictiveDistribution> p;
        std::vector<int> l;
        for (size_t i = 0; i < preds.size(); ++i) {
            if (!member_of(groups[i])) continue;
            p.push_back(preds[i]);
            l.push_back(labels[i]);
        }
        SweepResult r;
        if (p.size() < 2) {
            // flagged: every row undefined
            r.degenerate = true;
            for (int tau = 0; tau < 100; ++tau)
                r.rows.push_back({tau, static_cast<int>(p.size()) * (100 - tau) / 100, std::nullopt,
                                  std::nullopt});
            r.undefined_auroc = r.undefined_auprc = 100;
        } else {
            r = selective_sweep(p, l);
        }
        rep.subgroups.emplace(key, std::move(r));
    };
    for (const char* band : {"A1", "A2", "A3"})
        run_group(std::string("age:") + band,
                  [band](const data::Group& g) { return g.age_band == band; });
    for (const char* sex : {"M", "F"})
        run_group(std::string("sex:") + sex,
                  [sex](const data::Group& g) { return g.sex == sex; });
    return rep;
}

namespace {

nlohmann::ordered_json sweep_to_json(const SweepResult& s) {
    nlohmann::ordered_json j;
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    j["summary"] = {{"auroc", opt(s.full_auroc)},
                    {"auprc", opt(s.full_auprc)},
                    {"selective_auroc", opt(s.selective_auroc)},
                    {"selective_auprc", opt(s.selective_auprc)},
                    {"undefined_auroc_thresholds", s.undefined_auroc},
                    {"undefined_auprc_thresholds", s.undefined_auprc},
                    {"ece_10bin", s.ece_10bin},
                    {"degenerate", s.degenerate}};
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : s.rows)
        rows.push_back({{"threshold", r.tau},
                        {"retained", r.retained},
                        {"auroc", opt(r.auroc)},
                        {"auprc", opt(r.auprc)},
                        {"defined", r.auroc.has_value()}});
    j["rows"] = rows;
    return j;
}

void sweep_to_csv(std::ofstream& out, const std::string& scope, const SweepResult& s) {
    for (const auto& r : s.rows) {
        out << scope << ',' << r.tau << ',' << r.retained << ',';
        if (r.auroc) out << *r.auroc;
        out << ',';
        if (r.auprc) out << *r.auprc;
        out << ',' << (r.auroc.has_value() ? "true" : "false") << '\n';
    }
}

}  // namespace

void write_report_json(const SelectiveReport& rep, const std::string& path) {
    nlohmann::ordered_json j = sweep_to_json(rep.overall);
    nlohmann::ordered_json sub;
    for (const auto& [key, s] : rep.subgroups) sub[key] = sweep_to_json(s);
    j["subgroups"] = sub;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

void write_report_csv(const SelectiveReport& rep, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out.precision(17);
    out << "scope,threshold,retained,auroc,auprc,defined\n";
    sweep_to_csv(out, "overall", rep.overall);
    for (const auto& [key, s] : rep.subgroups) sweep_to_csv(out, key, s);
}

}  // namespace certain::eval
