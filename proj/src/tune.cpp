#include "certain/tune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "certain/util.hpp"

namespace certain::tune {

namespace {

template <typename T>
T pick(const std::vector<T>& grid, Rng& rng) {
    return grid[static_cast<size_t>(rng.index(static_cast<int>(grid.size())))];
}

template <typename T>
bool contains(const std::vector<T>& grid, T v) {
    return std::find(grid.begin(), grid.end(), v) != grid.end();
}

nlohmann::ordered_json config_json(const TrialConfig& c) {
    return {{"mode", c.mode},
            {"lr", c.lr},
            {"epochs", c.epochs},
            {"kl_scale", c.kl_scale},
            {"context_batch", c.context_batch},
            {"prior_variance", c.prior_variance},
            {"tau", c.tau},
            {"s1", c.s1},
            {"s2", c.s2}};
}

}  // namespace

TrialConfig sample_config(const SearchSpace& space, const std::string& mode, Rng& rng) {
    if (mode != "deterministic" && mode != "stochastic")
        throw config_error("sample_config: mode must be deterministic|stochastic");
    TrialConfig c;
    c.mode = mode;
    c.kl_scale = pick(space.kl_grid, rng);
    if (mode == "deterministic") {
        c.lr = rng.log_uniform(space.det_lr_lo, space.det_lr_hi);
        c.epochs = pick(space.det_epochs, rng);
    } else {
        c.lr = rng.log_uniform(space.best_det_lr / 10.0, space.best_det_lr * 10.0);
        c.epochs = pick(space.stoch_epochs, rng);
        c.context_batch = pick(space.context_batch, rng);
        c.prior_variance = pick(space.prior_variance, rng);
        c.tau = pick(space.tau_grid, rng);
        c.s1 = pick(space.s1_grid, rng);
        c.s2 = pick(space.s2_grid, rng);
    }
    return c;
}

bool config_in_space(const SearchSpace& space, const TrialConfig& c) {
    if (!contains(space.kl_grid, c.kl_scale)) return false;
    if (c.mode == "deterministic") {
        return c.lr >= space.det_lr_lo && c.lr <= space.det_lr_hi &&
               contains(space.det_epochs, c.epochs);
    }
    return c.lr >= space.best_det_lr / 10.0 && c.lr <= space.best_det_lr * 10.0 &&
           contains(space.stoch_epochs, c.epochs) && contains(space.context_batch, c.context_batch) &&
           contains(space.prior_variance, c.prior_variance) && contains(space.tau_grid, c.tau) &&
           contains(space.s1_grid, c.s1) && contains(space.s2_grid, c.s2);
}

SearchResult search(const SearchSpace& space, const std::string& mode, int n_configs, int n_seeds,
                    uint64_t master_seed, const TrainFn& run) {
    if (n_configs < 1 || n_seeds < 1) throw config_error("search: n_configs and n_seeds must be >= 1");
    SearchResult result;
    std::vector<TrialConfig> configs;
    for (int ci = 0; ci < n_configs; ++ci) {
        Rng rng(derive_seed(master_seed, hash_str("tune_config"), static_cast<uint64_t>(ci)));
        configs.push_back(sample_config(space, mode, rng));
    }
    for (int ci = 0; ci < n_configs; ++ci) {
        for (int si = 0; si < n_seeds; ++si) {
            TrialRecord rec;
            rec.config_index = ci;
            rec.config = configs[static_cast<size_t>(ci)];
            rec.seed = derive_seed(master_seed, hash_str("tune_seed"), static_cast<uint64_t>(si));
            rec.fold = si;
            try {
                auto m = run(rec.config, rec.seed, rec.fold, &rec.checkpoint);
                rec.val_auroc = m[0];
                rec.val_auprc = m[1];
            } catch (const std::exception& e) {
                rec.failed = true;
                rec.error = e.what();
                ++result.failed_trials;
            }
            result.records.push_back(std::move(rec));
        }
    }
    // argmax of mean validation AUROC over non-failed seeds
    double best_mean = -1.0;
    for (int ci = 0; ci < n_configs; ++ci) {
        double sum = 0.0;
        int cnt = 0;
        for (const auto& rec : result.records) {
            if (rec.config_index != ci || rec.failed) continue;
            sum += rec.val_auroc;
            ++cnt;
        }
        if (cnt == 0) continue;
        double mean = sum / cnt;
        if (mean > best_mean) {
            best_mean = mean;
            result.best_index = ci;
        }
    }
    if (result.best_index < 0) throw numeric_error("search: every trial failed");
    result.best = configs[static_cast<size_t>(result.best_index)];
    result.best_mean_val_auroc = best_mean;
    return result;
}

void mean_se(const std::vector<double>& xs, double* mean, double* se) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    *mean = m;
    *se = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) /
                              std::sqrt(static_cast<double>(xs.size()))
                        : 0.0;
}

FinalizeResult finalize(const TrialConfig& best, int n_seeds, uint64_t master_seed,
                        const EvalFn& run) {
    if (n_seeds < 1) throw config_error("finalize: n_seeds must be >= 1");
    std::vector<double> auroc, auprc, sel_auroc, sel_auprc;
    for (int si = 0; si < n_seeds; ++si) {
        uint64_t seed = derive_seed(master_seed, hash_str("final_seed"), static_cast<uint64_t>(si));
        auto m = run(best, seed);
        auroc.push_back(m[0]);
        auprc.push_back(m[1]);
        sel_auroc.push_back(m[2]);
        sel_auprc.push_back(m[3]);
    }
    FinalizeResult r;
    r.n_seeds = n_seeds;
    r.single_seed = n_seeds == 1;
    mean_se(auroc, &r.auroc_mean, &r.auroc_se);
    mean_se(auprc, &r.auprc_mean, &r.auprc_se);
    mean_se(sel_auroc, &r.sel_auroc_mean, &r.sel_auroc_se);
    mean_se(sel_auprc, &r.sel_auprc_mean, &r.sel_auprc_se);
    return r;
}

void save_trials(const std::vector<TrialRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["config_index"] = rec.config_index;
        j["config"] = config_json(rec.config);
        j["seed"] = rec.seed;
        j["fold"] = rec.fold;
        j["failed"] = rec.failed;
        if (rec.failed) j["error"] = rec.error;
        else {
            j["val_auroc"] = rec.val_auroc;
            j["val_auprc"] = rec.val_auprc;
        }
        if (!rec.checkpoint.empty()) j["checkpoint"] = rec.checkpoint;
        out << j.dump() << '\n';
    }
}

void save_best(const SearchResult& result, const std::string& path) {
    nlohmann::ordered_json j;
    j["best_index"] = result.best_index;
    j["mean_val_auroc"] = result.best_mean_val_auroc;
    j["failed_trials"] = result.failed_trials;
    j["config"] = config_json(result.best);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace certain::tune
