#include "certain/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "certain/evaluate.hpp"
#include "certain/optim.hpp"
#include "certain/rng.hpp"
#include "certain/util.hpp"

namespace certain::obj {

double bce_nll(std::span<const double> probs, std::span<const double> labels) {
    if (probs.size() != labels.size()) throw shape_error("bce_nll: size mismatch");
    if (probs.empty()) throw config_error("bce_nll: empty batch");
    double s = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        double p = std::min(std::max(probs[i], 1e-12), 1.0 - 1e-12);
        s += -(labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p));
    }
    return s / static_cast<double>(probs.size());
}

namespace {

// Estimated 2-norm condition number of C via power iterations on C and, with
// the Cholesky factor, on C^-1. Deterministic start vector.
double estimate_cond(const std::vector<double>& c, const Cholesky& chol, int m) {
    std::vector<double> x(static_cast<size_t>(m), 1.0 / std::sqrt(static_cast<double>(m)));
    std::vector<double> y(static_cast<size_t>(m));
    double lmax = 0.0;
    for (int it = 0; it < 30; ++it) {
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int jj = 0; jj < m; ++jj) s += c[static_cast<size_t>(i) * m + jj] * x[static_cast<size_t>(jj)];
            y[static_cast<size_t>(i)] = s;
        }
        lmax = norm2(y);
        if (lmax == 0.0) break;
        for (int i = 0; i < m; ++i) x[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] / lmax;
    }
    std::vector<double> xi(static_cast<size_t>(m), 1.0 / std::sqrt(static_cast<double>(m)));
    double inv_max = 0.0;
    for (int it = 0; it < 30; ++it) {
        auto yi = chol_solve(chol, xi);
        inv_max = norm2(yi);
        if (inv_max == 0.0) break;
        for (int i = 0; i < m; ++i) xi[static_cast<size_t>(i)] = yi[static_cast<size_t>(i)] / inv_max;
    }
    double lmin = inv_max > 0.0 ? 1.0 / inv_max : 0.0;
    return lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
}

struct CostSystem {
    Cholesky chol;
    int m = 0;
};

CostSystem build_cost_system(const Mat& features, double s1, double s2) {
    if (s2 <= 0.0) throw config_error("mahalanobis_cost: s2 must be > 0");
    if (s1 < 0.0) throw config_error("mahalanobis_cost: s1 must be >= 0");
    const int m = features.rows, d = features.cols;
    std::vector<double> c(static_cast<size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += features(i, k) * features(j, k);
            double v = s1 * s + (i == j ? s2 : 0.0);
            c[static_cast<size_t>(i) * m + j] = v;
            c[static_cast<size_t>(j) * m + i] = v;
        }
    }
    CostSystem sys;
    sys.m = m;
    sys.chol = cholesky(c, m);
    if (!sys.chol.ok)
        throw numeric_error("mahalanobis_cost: covariance is not positive definite (s1=" +
                            std::to_string(s1) + ", s2=" + std::to_string(s2) + ")");
    double cond = estimate_cond(c, sys.chol, m);
    if (cond > 1e12)
        throw numeric_error("mahalanobis_cost: covariance condition estimate " +
                            std::to_string(cond) + " exceeds 1e12; increase s2");
    return sys;
}

double cost_from_system(const CostSystem& sys, std::span<const double> logits, double tau,
                        std::vector<double>* d_logits) {
    if (static_cast<int>(logits.size()) != sys.m)
        throw shape_error("mahalanobis_cost: logits length must match feature rows");
    auto w = chol_solve(sys.chol, logits);  // C^-1 v
    double quad = dot(logits, w);
    if (d_logits) {
        d_logits->assign(w.begin(), w.end());
        for (double& x : *d_logits) x *= 2.0 * tau;
    }
    return tau * quad;
}

}  // namespace

double mahalanobis_cost(std::span<const double> logits, const Mat& features, double tau, double s1,
                        double s2, std::vector<double>* d_logits) {
    if (features.rows < 1) throw config_error("mahalanobis_cost: context batch must have M >= 1");
    auto sys = build_cost_system(features, s1, s2);
    return cost_from_system(sys, logits, tau, d_logits);
}

Mat context_features(const net::FusionNet& fnet, std::span<const double> star_params,
                     const ctx::ContextSet& context, int threads) {
    const int d = fnet.config().d_embed;
    Mat feats(context.size(), 2 * d);
    parallel_for(context.size(), threads, [&](int i) {
        const auto& it = context.items[static_cast<size_t>(i)];
        auto fo = fnet.forward(star_params, it.seq, it.img);
        for (int k = 0; k < d; ++k) {
            feats(i, k) = fo.emb_ehr[static_cast<size_t>(k)];
            feats(i, d + k) = fo.emb_cxr[static_cast<size_t>(k)];
        }
    });
    return feats;
}

StepReport stochastic_step(const net::FusionNet& fnet, const var::VarState& state,
                           std::span<const double> base_params, const var::BasePrior& prior,
                           const StepInputs& in, const ObjectiveConfig& cfg, const Mat& eps,
                           std::span<double> g_mu, std::span<double> g_log_var, int threads) {
    if (in.batch.empty()) throw config_error("stochastic_step: empty training batch");
    if (cfg.j < 1 || cfg.j_prime < 1) throw config_error("stochastic_step: J and J' must be >= 1");
    if (eps.rows != cfg.j || eps.cols != state.count())
        throw shape_error("stochastic_step: eps must be J x stochastic-count");
    const bool use_context = cfg.tau > 0.0 && !in.context.empty();
    if (cfg.tau > 0.0 && in.context.empty())
        throw config_error("stochastic_step: tau > 0 requires context batches");

    const int ps = state.count();
    const int bsz = static_cast<int>(in.batch.size());
    const double inv_j = 1.0 / static_cast<double>(cfg.j);

    // Cholesky of each context batch covariance is shared across the J draws.
    std::vector<CostSystem> systems;
    if (use_context) {
        systems.reserve(in.context.size());
        for (const auto& cb : in.context) {
            if (cb.items.empty()) throw config_error("stochastic_step: empty context batch");
            systems.push_back(build_cost_system(cb.features, cfg.s1, cfg.s2));
        }
    }

    StepReport rep;
    std::vector<double> d_theta(static_cast<size_t>(ps));
    for (int j = 0; j < cfg.j; ++j) {
        std::vector<double> theta(static_cast<size_t>(ps));
        for (int i = 0; i < ps; ++i)
            theta[static_cast<size_t>(i)] = state.mu[static_cast<size_t>(i)] +
                                            std::exp(0.5 * state.log_var[static_cast<size_t>(i)]) *
                                                eps(j, i);
        auto full = var::assemble(state, base_params, theta);
        std::vector<double> d_full(full.size(), 0.0);

        // expected log-likelihood term
        std::vector<net::ForwardCache> caches(static_cast<size_t>(bsz));
        std::vector<double> probs(static_cast<size_t>(bsz)), labels(static_cast<size_t>(bsz));
        parallel_for(bsz, threads, [&](int b) {
            probs[static_cast<size_t>(b)] =
                fnet.forward(full, *in.batch[static_cast<size_t>(b)], &caches[static_cast<size_t>(b)]).prob;
            labels[static_cast<size_t>(b)] = in.batch[static_cast<size_t>(b)]->label;
        });
        double bce = bce_nll(probs, labels);
        if (!std::isfinite(bce))
            throw numeric_error("objective: expected log-likelihood term is not finite");
        rep.nll += inv_j * bce;
        {
            std::vector<std::vector<double>> grads(static_cast<size_t>(bsz));
            parallel_for(bsz, threads, [&](int b) {
                grads[static_cast<size_t>(b)].assign(full.size(), 0.0);
                double p = std::min(std::max(probs[static_cast<size_t>(b)], 1e-12), 1.0 - 1e-12);
                double dl = (p - labels[static_cast<size_t>(b)]) * inv_j / static_cast<double>(bsz);
                fnet.backward(full, caches[static_cast<size_t>(b)], dl, {}, {},
                              grads[static_cast<size_t>(b)]);
            });
            for (int b = 0; b < bsz; ++b)  // fixed reduction order
                for (size_t i = 0; i < d_full.size(); ++i) d_full[i] += grads[static_cast<size_t>(b)][i];
        }

        // uncertainty regularization term
        if (use_context) {
            const double inv_jj = inv_j / static_cast<double>(in.context.size());
            for (size_t jp = 0; jp < in.context.size(); ++jp) {
                const auto& cb = in.context[jp];
                const int m = static_cast<int>(cb.items.size());
                std::vector<net::ForwardCache> ccaches(static_cast<size_t>(m));
                std::vector<double> logits(static_cast<size_t>(m));
                parallel_for(m, threads, [&](int k) {
                    logits[static_cast<size_t>(k)] =
                        fnet.forward(full, cb.items[static_cast<size_t>(k)]->seq,
                                     cb.items[static_cast<size_t>(k)]->img,
                                     &ccaches[static_cast<size_t>(k)])
                            .logit;
                });
                std::vector<double> d_logits;
                double cost = cost_from_system(systems[jp], logits, cfg.tau, &d_logits);
                if (!std::isfinite(cost))
                    throw numeric_error("objective: uncertainty term is not finite");
                rep.unc_cost += inv_jj * cost;
                std::vector<std::vector<double>> grads(static_cast<size_t>(m));
                parallel_for(m, threads, [&](int k) {
                    grads[static_cast<size_t>(k)].assign(full.size(), 0.0);
                    fnet.backward(full, ccaches[static_cast<size_t>(k)],
                                  inv_jj * d_logits[static_cast<size_t>(k)], {}, {},
                                  grads[static_cast<size_t>(k)]);
                });
                for (int k = 0; k < m; ++k)
                    for (size_t i = 0; i < d_full.size(); ++i) d_full[i] += grads[static_cast<size_t>(k)][i];
            }
        }

        for (int i = 0; i < ps; ++i)
            d_theta[static_cast<size_t>(i)] = d_full[static_cast<size_t>(state.stoch_begin + i)];
        std::span<const double> eps_row(eps.row(j), static_cast<size_t>(ps));
        var::accumulate_reparam_grad(state, d_theta, eps_row, g_mu, g_log_var);
    }

    // KL regularization, normalized per training sample
    auto [kl_h_raw, kl_l_raw] = var::kl_to_prior(state, prior);
    double n_train = static_cast<double>(std::max(in.n_train, 1));
    rep.kl_h = kl_h_raw / n_train;
    rep.kl_L = kl_l_raw / n_train;
    if (!std::isfinite(rep.kl_h) || !std::isfinite(rep.kl_L))
        throw numeric_error("objective: KL term is not finite");
    var::kl_gradients(state, prior, cfg.kl_scale / n_train, g_mu, g_log_var);

    rep.objective = -(rep.nll + cfg.kl_scale * (rep.kl_h + rep.kl_L) + rep.unc_cost);
    double gn = 0.0;
    for (double g : g_mu) gn += g * g;
    for (double g : g_log_var) gn += g * g;
    rep.grad_norm = std::sqrt(gn);
    return rep;
}

namespace {

struct ValMetrics {
    double auroc = 0.0, auprc = 0.0;
};

ValMetrics epoch_val(const net::FusionNet& fnet, std::span<const double> params,
                     const var::VarState* vs, const std::vector<data::MultimodalSample>& val,
                     int j_eval, uint64_t seed, int threads) {
    ValMetrics vm;
    if (val.empty()) return vm;
    auto preds = eval::predict(fnet, params, vs, val, j_eval, seed, threads);
    std::vector<double> sc(val.size());
    std::vector<int> lb(val.size());
    for (size_t i = 0; i < val.size(); ++i) {
        sc[i] = preds[i].mean_prob;
        lb[i] = val[i].label;
    }
    vm.auroc = eval::auroc(sc, lb).value_or(0.0);
    vm.auprc = eval::auprc(sc, lb).value_or(0.0);
    return vm;
}

void validate_cfg(const TrainConfig& cfg) {
    if (cfg.mode != "deterministic" && cfg.mode != "stochastic")
        throw config_error("train: mode must be deterministic|stochastic");
    if (cfg.lr <= 0.0 || cfg.epochs < 1 || cfg.batch_size < 1)
        throw config_error("train: bad lr/epochs/batch_size");
    if (cfg.context_batch_size < 1) throw config_error("train: context_batch_size must be >= 1");
    if (cfg.j_train < 1 || cfg.j_prime < 1) throw config_error("train: J and J' must be >= 1");
    if (cfg.s2 <= 0.0) throw config_error("train: s2 must be > 0");
    if (cfg.prior_variance <= 0.0) throw config_error("train: prior_variance must be > 0");
    if (cfg.tau < 0.0) throw config_error("train: tau must be >= 0");
    if (cfg.kl_scale < 0.0) throw config_error("train: kl_scale must be >= 0");
}

TrainResult train_deterministic(const net::FusionNet& fnet,
                                const std::vector<data::MultimodalSample>& train_split,
                                const std::vector<data::MultimodalSample>& val_split,
                                std::span<const double> warmstart, const TrainConfig& cfg) {
    std::vector<double> params =
        warmstart.empty() ? fnet.init_params(derive_seed(cfg.seed, hash_str("det_init")))
                          : std::vector<double>(warmstart.begin(), warmstart.end());
    const int n = static_cast<int>(train_split.size());
    const int n_params = fnet.param_count();
    opt::AdamState adam;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    long total_steps = steps_per_epoch * cfg.epochs;
    long step = 0;

    TrainResult res;
    res.scope = "";
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, hash_str("det_shuffle"), static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        EpochStats es;
        es.epoch = epoch;
        int steps_done = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, n - start);
            std::vector<net::ForwardCache> caches(static_cast<size_t>(bsz));
            std::vector<double> probs(static_cast<size_t>(bsz)), labels(static_cast<size_t>(bsz));
            parallel_for(bsz, cfg.threads, [&](int b) {
                const auto& s = train_split[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
                probs[static_cast<size_t>(b)] = fnet.forward(params, s, &caches[static_cast<size_t>(b)]).prob;
                labels[static_cast<size_t>(b)] = s.label;
            });
            double bce = bce_nll(probs, labels);
            if (!std::isfinite(bce)) throw numeric_error("train: BCE is not finite");
            std::vector<std::vector<double>> grads(static_cast<size_t>(bsz));
            parallel_for(bsz, cfg.threads, [&](int b) {
                grads[static_cast<size_t>(b)].assign(static_cast<size_t>(n_params), 0.0);
                double p = std::min(std::max(probs[static_cast<size_t>(b)], 1e-12), 1.0 - 1e-12);
                fnet.backward(params, caches[static_cast<size_t>(b)],
                              (p - labels[static_cast<size_t>(b)]) / bsz, {}, {},
                              grads[static_cast<size_t>(b)]);
            });
            std::vector<double> grad(static_cast<size_t>(n_params), 0.0);
            for (int b = 0; b < bsz; ++b)
                for (size_t i = 0; i < grad.size(); ++i) grad[i] += grads[static_cast<size_t>(b)][i];
            // L2 reading of the deterministic regularizer grid
            if (cfg.kl_scale > 0.0) {
                double reg = cfg.kl_scale / static_cast<double>(n);
                for (int i = 0; i < n_params; ++i) grad[static_cast<size_t>(i)] += reg * params[static_cast<size_t>(i)];
            }
            opt::adam_step(params, grad, adam, opt::cosine_lr(cfg.lr, step, total_steps));
            ++step;
            es.nll += bce;
            ++steps_done;
        }
        es.nll /= std::max(steps_done, 1);
        auto vm = epoch_val(fnet, params, nullptr, val_split, 1,
                            derive_seed(cfg.seed, hash_str("epoch_val"), static_cast<uint64_t>(epoch)),
                            cfg.threads);
        es.val_auroc = vm.auroc;
        es.val_auprc = vm.auprc;
        res.history.push_back(es);
    }
    res.params = std::move(params);
    return res;
}

TrainResult train_stochastic(const net::FusionNet& fnet,
                             const std::vector<data::MultimodalSample>& train_split,
                             const std::vector<data::MultimodalSample>& val_split,
                             const ctx::ContextSet* context, std::span<const double> warmstart,
                             const TrainConfig& cfg) {
    if (warmstart.empty())
        throw config_error("train: stochastic mode requires a deterministic warm-start checkpoint "
                           "(run `certain train` in deterministic mode first)");
    const bool use_context = !cfg.uninformative && cfg.tau > 0.0;
    if (use_context && (!context || context->items.empty()))
        throw config_error("train: stochastic mode with tau > 0 requires a context set "
                           "(run `certain context` first)");

    var::VarState state = var::make_state(fnet, warmstart, cfg.stochastic_scope);
    var::BasePrior prior = var::make_prior(state, warmstart, cfg.prior_variance, cfg.uninformative);
    std::vector<double> base(warmstart.begin(), warmstart.end());

    // Frozen covariance features from the warm-start encoders.
    Mat all_features;
    if (use_context) all_features = context_features(fnet, base, *context, cfg.threads);

    ObjectiveConfig ocfg;
    ocfg.tau = cfg.uninformative ? 0.0 : cfg.tau;
    ocfg.s1 = cfg.s1;
    ocfg.s2 = cfg.s2;
    ocfg.j = cfg.j_train;
    ocfg.j_prime = cfg.j_prime;
    ocfg.context_batch = cfg.context_batch_size;
    ocfg.kl_scale = cfg.kl_scale;

    const int n = static_cast<int>(train_split.size());
    const int ps = state.count();
    opt::AdamState adam_mu, adam_lv;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    long total_steps = steps_per_epoch * cfg.epochs;
    long step = 0;

    std::vector<int> ctx_scratch;
    if (use_context) {
        ctx_scratch.resize(static_cast<size_t>(context->size()));
        std::iota(ctx_scratch.begin(), ctx_scratch.end(), 0);
    }

    TrainResult res;
    res.scope = cfg.stochastic_scope;
    res.stoch_begin = state.stoch_begin;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, hash_str("sto_shuffle"), static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        EpochStats es;
        es.epoch = epoch;
        int steps_done = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, n - start);
            StepInputs in;
            in.n_train = n;
            in.batch.reserve(static_cast<size_t>(bsz));
            for (int b = 0; b < bsz; ++b)
                in.batch.push_back(&train_split[static_cast<size_t>(order[static_cast<size_t>(start + b)])]);

            Rng step_rng(derive_seed(cfg.seed, hash_str("sto_step"), static_cast<uint64_t>(step)));
            if (use_context) {
                int m = std::min(cfg.context_batch_size, context->size());
                for (int jp = 0; jp < cfg.j_prime; ++jp) {
                    // partial Fisher-Yates: M draws without replacement
                    ContextBatchView cb;
                    cb.items.reserve(static_cast<size_t>(m));
                    cb.features = Mat(m, all_features.cols);
                    for (int k = 0; k < m; ++k) {
                        int pick = k + step_rng.index(context->size() - k);
                        std::swap(ctx_scratch[static_cast<size_t>(k)], ctx_scratch[static_cast<size_t>(pick)]);
                        int idx = ctx_scratch[static_cast<size_t>(k)];
                        cb.items.push_back(&context->items[static_cast<size_t>(idx)]);
                        for (int col = 0; col < all_features.cols; ++col)
                            cb.features(k, col) = all_features(idx, col);
                    }
                    in.context.push_back(std::move(cb));
                }
            }

            Mat eps(cfg.j_train, ps);
            for (double& e : eps.v) e = step_rng.normal();
            std::vector<double> g_mu(static_cast<size_t>(ps), 0.0), g_lv(static_cast<size_t>(ps), 0.0);
            StepReport rep =
                stochastic_step(fnet, state, base, prior, in, ocfg, eps, g_mu, g_lv, cfg.threads);

            double lr = opt::cosine_lr(cfg.lr, step, total_steps);
            opt::adam_step(state.mu, g_mu, adam_mu, lr);
            opt::adam_step(state.log_var, g_lv, adam_lv, lr);
            ++step;
            es.nll += rep.nll;
            es.kl_h += rep.kl_h;
            es.kl_L += rep.kl_L;
            es.unc_cost += rep.unc_cost;
            ++steps_done;
        }
        double inv = 1.0 / std::max(steps_done, 1);
        es.nll *= inv;
        es.kl_h *= inv;
        es.kl_L *= inv;
        es.unc_cost *= inv;
        auto vm = epoch_val(fnet, base, &state, val_split, cfg.epoch_val_samples,
                            derive_seed(cfg.seed, hash_str("epoch_val"), static_cast<uint64_t>(epoch)),
                            cfg.threads);
        es.val_auroc = vm.auroc;
        es.val_auprc = vm.auprc;
        res.history.push_back(es);
    }
    res.params = var::assemble(state, base, state.mu);
    res.log_var = state.log_var;
    return res;
}

}  // namespace

TrainResult train(const net::FusionNet& fnet, const std::vector<data::MultimodalSample>& train_split,
                  const std::vector<data::MultimodalSample>& val_split,
                  const ctx::ContextSet* context, std::span<const double> warmstart,
                  const TrainConfig& cfg) {
    validate_cfg(cfg);
    if (train_split.empty()) throw config_error("train: empty training split");
    if (cfg.mode == "deterministic")
        return train_deterministic(fnet, train_split, val_split, warmstart, cfg);
    return train_stochastic(fnet, train_split, val_split, context, warmstart, cfg);
}

}  // namespace certain::obj
