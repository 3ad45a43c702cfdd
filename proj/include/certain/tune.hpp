#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "certain/rng.hpp"

namespace certain::tune {

// Random-search space. Deterministic runs draw the learning rate
// log-uniformly from [det_lr_lo, det_lr_hi]; stochastic runs stay within one
// decade of the best deterministic learning rate and add the prior grids.
struct SearchSpace {
    double det_lr_lo = 1e-5;
    double det_lr_hi = 1e-2;
    std::vector<double> kl_grid = {0.0, 0.1, 1.0, 10.0, 100.0};
    std::vector<int> det_epochs = {5, 10, 15, 20, 30};
    std::vector<int> stoch_epochs = {5, 10, 15, 20, 25, 30};
    std::vector<int> context_batch = {16, 32};
    std::vector<double> prior_variance = {0.1, 1.0, 10.0, 1000.0};
    std::vector<double> tau_grid = {0.1, 1.0, 10.0};   // prior likelihood scale
    std::vector<double> s1_grid = {0.1, 0.01, 0.001};  // covariance scale
    std::vector<double> s2_grid = {0.5, 1.0, 5.0};     // covariance diagonal
    double best_det_lr = 1e-3;  // center of the stochastic lr window
    int batch_size = 16;        // fixed
};

struct TrialConfig {
    std::string mode = "deterministic";
    double lr = 1e-3;
    int epochs = 10;
    double kl_scale = 0.0;
    int context_batch = 16;
    double prior_variance = 1.0;
    double tau = 1.0;
    double s1 = 0.01;
    double s2 = 1.0;
};

TrialConfig sample_config(const SearchSpace& space, const std::string& mode, Rng& rng);
bool config_in_space(const SearchSpace& space, const TrialConfig& cfg);

struct TrialRecord {
    int config_index = 0;
    TrialConfig config;
    uint64_t seed = 0;
    int fold = 0;  // index of the per-run train/validation resample
    bool failed = false;
    std::string error;
    double val_auroc = 0.0;
    double val_auprc = 0.0;
    std::string checkpoint;
};

// Runs one (config, seed) trial; returns (val_auroc, val_auprc, checkpoint
// path or empty). Throwing marks the trial failed.
using TrainFn =
    std::function<std::array<double, 2>(const TrialConfig&, uint64_t seed, int fold, std::string* ckpt)>;

struct SearchResult {
    TrialConfig best;
    int best_index = -1;
    double best_mean_val_auroc = 0.0;
    std::vector<TrialRecord> records;
    int failed_trials = 0;
};

// n_configs drawn from the space, each run with n_seeds seeds; selection is
// the argmax of mean validation AUROC over the non-failed seeds of a config.
// Configs whose every trial failed are skipped. Execution order is
// deterministic (config-major, then seed).
SearchResult search(const SearchSpace& space, const std::string& mode, int n_configs, int n_seeds,
                    uint64_t master_seed, const TrainFn& run);

struct FinalizeResult {
    int n_seeds = 0;
    bool single_seed = false;  // flagged: standard error reported as 0
    double auroc_mean = 0.0, auroc_se = 0.0;
    double auprc_mean = 0.0, auprc_se = 0.0;
    double sel_auroc_mean = 0.0, sel_auroc_se = 0.0;
    double sel_auprc_mean = 0.0, sel_auprc_se = 0.0;
};

// Test metrics (auroc, auprc, selective auroc, selective auprc) of one
// retrained final run.
using EvalFn = std::function<std::array<double, 4>(const TrialConfig&, uint64_t seed)>;

// Retrain-and-evaluate over n_seeds seeds; mean and standard error
// (sample std / sqrt(n)).
FinalizeResult finalize(const TrialConfig& best, int n_seeds, uint64_t master_seed,
                        const EvalFn& run);

void mean_se(const std::vector<double>& xs, double* mean, double* se);

void save_trials(const std::vector<TrialRecord>& records, const std::string& path);
void save_best(const SearchResult& result, const std::string& path);

}  // namespace certain::tune
