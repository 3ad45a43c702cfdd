#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "certain/contextset.hpp"
#include "certain/data.hpp"
#include "certain/mat.hpp"
#include "certain/net.hpp"
#include "certain/varparams.hpp"

namespace certain::obj {

// Scales of the uncertainty regularizer (Mahalanobis cost) and the Monte
// Carlo estimator shape. f_scale is accepted for config parity but inert:
// the derivation defines no symbol for it.
struct ObjectiveConfig {
    double tau = 1.0;  // cost scale, > 0 enables the context term
    double s1 = 0.01;  // covariance feature scale
    double s2 = 1.0;   // covariance diagonal, must stay > 0
    int j = 1;         // posterior samples per step
    int j_prime = 1;   // context batches per step
    int context_batch = 16;
    double kl_scale = 1.0;
    double f_scale = 0.0;
};

// Scalar terms of one optimization step. Sign convention: `objective` is the
// maximized quantity, objective = -(nll + kl_scale*(kl_h + kl_L) + unc_cost).
// kl_h/kl_L are reported per training sample (analytic KL divided by the
// training set size) so all terms share the mean-loss scale.
struct StepReport {
    double nll = 0.0;
    double kl_h = 0.0;
    double kl_L = 0.0;
    double unc_cost = 0.0;
    double objective = 0.0;
    double grad_norm = 0.0;
};

// Mean binary cross-entropy; probabilities clamped at 1e-12.
double bce_nll(std::span<const double> probs, std::span<const double> labels);

// tau * v' C^-1 v with v = logits (zero-centered context targets) and
// C = s1 * H H' + s2 * I built from the frozen penultimate features
// (rows of `features`). Solved by Cholesky, never by explicit inversion.
// d_logits, when given, receives 2*tau*C^-1 v. Aborts with numeric_error
// when C is ill-conditioned (estimated condition number above 1e12).
double mahalanobis_cost(std::span<const double> logits, const Mat& features, double tau, double s1,
                        double s2, std::vector<double>* d_logits = nullptr);

// One stochastic objective evaluation with frozen noise: eps is J x count.
// Context batches (sample pointers plus frozen feature rows) are fixed by
// the caller, which makes the whole step finite-difference checkable.
struct ContextBatchView {
    std::vector<const ctx::ContextItem*> items;
    Mat features;  // M x 2*d_embed, from the frozen pre-trained parameters
};

struct StepInputs {
    std::vector<const data::MultimodalSample*> batch;
    std::vector<ContextBatchView> context;  // size j_prime; may be empty when tau == 0
    int n_train = 1;                        // KL normalizer
};

StepReport stochastic_step(const net::FusionNet& fnet, const var::VarState& state,
                           std::span<const double> base_params, const var::BasePrior& prior,
                           const StepInputs& in, const ObjectiveConfig& cfg, const Mat& eps,
                           std::span<double> g_mu, std::span<double> g_log_var, int threads = 1);

struct EpochStats {
    int epoch = 0;
    double nll = 0.0, kl_h = 0.0, kl_L = 0.0, unc_cost = 0.0;
    double val_auroc = 0.0, val_auprc = 0.0;
};

struct TrainResult {
    std::vector<double> params;   // final means, full parameter vector
    std::vector<double> log_var;  // stochastic slice; empty in deterministic mode
    int stoch_begin = 0;
    std::string scope;  // "" for deterministic
    std::vector<EpochStats> history;
};

struct TrainConfig {
    std::string mode = "deterministic";  // deterministic | stochastic
    double lr = 1e-3;
    int epochs = 20;
    int batch_size = 16;
    int context_batch_size = 16;
    double kl_scale = 1.0;
    double tau = 1.0;
    double s1 = 0.01;
    double s2 = 1.0;
    double prior_variance = 1.0;
    std::string stochastic_scope = "all";
    uint64_t seed = 1;
    int j_train = 1;
    int j_prime = 1;
    int epoch_val_samples = 8;  // MC draws for the per-epoch validation metrics
    bool uninformative = false;  // zero-centered prior, context term disabled
    double f_scale = 0.0;
    int threads = 1;
};

// Adam + cosine decay training.
//  - deterministic: minimizes mean BCE + kl_scale * 0.5*||theta||^2 / n_train
//    (the L2 reading of the deterministic regularizer grid).
//  - stochastic: requires a warm-start parameter vector (the deterministic
//    checkpoint); maximizes the three-term variational objective. The prior
//    centers on the warm start (or zero when uninformative), and context
//    covariance features come from the frozen warm-start encoders.
// The final-epoch state is returned; per-epoch validation metrics are
// recorded in history. NaN in any term aborts with numeric_error.
TrainResult train(const net::FusionNet& fnet, const std::vector<data::MultimodalSample>& train_split,
                  const std::vector<data::MultimodalSample>& val_split,
                  const ctx::ContextSet* context, std::span<const double> warmstart,
                  const TrainConfig& cfg);

// Frozen h(x; theta*) features for every context item, in context order.
Mat context_features(const net::FusionNet& fnet, std::span<const double> star_params,
                     const ctx::ContextSet& context, int threads = 1);

}  // namespace certain::obj
