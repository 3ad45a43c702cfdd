#include "certain/varparams.hpp"

#include <cmath>

#include "certain/util.hpp"

namespace certain::var {

VarState make_state(const net::FusionNet& net, std::span<const double> init_params,
                    const std::string& scope, double init_log_var) {
    if (scope != "all" && scope != "final_layer")
        throw config_error("stochastic_scope must be 'all' or 'final_layer', got '" + scope + "'");
    if (static_cast<int>(init_params.size()) != net.param_count())
        throw shape_error("init parameter vector size mismatch");
    VarState st;
    st.full_count = net.param_count();
    st.head_offset = net.head_offset();
    st.stoch_begin = scope == "all" ? 0 : net.head_offset();
    st.mu.assign(init_params.begin() + st.stoch_begin, init_params.end());
    st.log_var.assign(st.mu.size(), init_log_var);
    return st;
}

BasePrior make_prior(const VarState& state, std::span<const double> center_params,
                     double prior_variance, bool uninformative) {
    if (prior_variance <= 0.0) throw config_error("prior_variance must be > 0");
    BasePrior prior;
    prior.tau_h = prior.tau_L = 1.0 / prior_variance;
    prior.theta_h_star.assign(static_cast<size_t>(state.h_count()), 0.0);
    if (!uninformative) {
        if (static_cast<int>(center_params.size()) != state.full_count)
            throw shape_error("prior center parameter vector size mismatch");
        for (int i = 0; i < state.h_count(); ++i)
            prior.theta_h_star[static_cast<size_t>(i)] =
                center_params[static_cast<size_t>(state.stoch_begin + i)];
    }
    return prior;
}

std::vector<double> sample(const VarState& state, Rng& rng, std::vector<double>* eps_out) {
    const int n = state.count();
    std::vector<double> theta(static_cast<size_t>(n));
    if (eps_out) eps_out->resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double e = rng.normal();
        if (eps_out) (*eps_out)[static_cast<size_t>(i)] = e;
        theta[static_cast<size_t>(i)] =
            state.mu[static_cast<size_t>(i)] + std::exp(0.5 * state.log_var[static_cast<size_t>(i)]) * e;
    }
    return theta;
}

std::vector<double> assemble(const VarState& state, std::span<const double> base_params,
                             std::span<const double> theta) {
    if (static_cast<int>(base_params.size()) != state.full_count)
        throw shape_error("assemble: base parameter vector size mismatch");
    if (static_cast<int>(theta.size()) != state.count())
        throw shape_error("assemble: stochastic slice size mismatch");
    std::vector<double> full(base_params.begin(), base_params.end());
    for (int i = 0; i < state.count(); ++i)
        full[static_cast<size_t>(state.stoch_begin + i)] = theta[static_cast<size_t>(i)];
    return full;
}

void accumulate_reparam_grad(const VarState& state, std::span<const double> d_theta,
                             std::span<const double> eps, std::span<double> g_mu,
                             std::span<double> g_log_var) {
    const int n = state.count();
    for (int i = 0; i < n; ++i) {
        double dt = d_theta[static_cast<size_t>(i)];
        g_mu[static_cast<size_t>(i)] += dt;
        g_log_var[static_cast<size_t>(i)] +=
            dt * 0.5 * std::exp(0.5 * state.log_var[static_cast<size_t>(i)]) * eps[static_cast<size_t>(i)];
    }
}

namespace {
inline double kl_coord(double mu, double log_var, double m, double tau) {
    double s2 = std::exp(log_var);
    double d = mu - m;
    return 0.5 * (tau * s2 + tau * d * d - 1.0 - std::log(tau * s2));
}
}  // namespace

std::pair<double, double> kl_to_prior(const VarState& state, const BasePrior& prior) {
    if (prior.tau_h <= 0.0 || prior.tau_L <= 0.0)
        throw config_error("prior precisions must be strictly positive");
    if (static_cast<int>(prior.theta_h_star.size()) != state.h_count())
        throw shape_error("prior theta_h_star length does not match partition");
    double kl_h = 0.0, kl_l = 0.0;
    const int nh = state.h_count(), n = state.count();
    for (int i = 0; i < nh; ++i)
        kl_h += kl_coord(state.mu[static_cast<size_t>(i)], state.log_var[static_cast<size_t>(i)],
                         prior.theta_h_star[static_cast<size_t>(i)], prior.tau_h);
    for (int i = nh; i < n; ++i)
        kl_l += kl_coord(state.mu[static_cast<size_t>(i)], state.log_var[static_cast<size_t>(i)], 0.0,
                         prior.tau_L);
    return {kl_h, kl_l};
}

void kl_gradients(const VarState& state, const BasePrior& prior, double scale,
                  std::span<double> g_mu, std::span<double> g_log_var) {
    const int nh = state.h_count(), n = state.count();
    for (int i = 0; i < n; ++i) {
        bool head = i >= nh;
        double tau = head ? prior.tau_L : prior.tau_h;
        double m = head ? 0.0 : prior.theta_h_star[static_cast<size_t>(i)];
        double s2 = std::exp(state.log_var[static_cast<size_t>(i)]);
        g_mu[static_cast<size_t>(i)] += scale * tau * (state.mu[static_cast<size_t>(i)] - m);
        g_log_var[static_cast<size_t>(i)] += scale * 0.5 * (tau * s2 - 1.0);
    }
}

double kl_monte_carlo(const VarState& state, const BasePrior& prior, int n_samples, Rng& rng) {
    if (n_samples < 1) throw config_error("kl_monte_carlo: n_samples must be >= 1");
    const int nh = state.h_count(), n = state.count();
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        double lq = 0.0, lp = 0.0;
        for (int i = 0; i < n; ++i) {
            double lv = state.log_var[static_cast<size_t>(i)];
            double sd = std::exp(0.5 * lv);
            double e = rng.normal();
            double x = state.mu[static_cast<size_t>(i)] + sd * e;
            lq += -0.5 * lv - 0.5 * e * e;  // log N(x; mu, s2) up to the shared constant
            bool head = i >= nh;
            double tau = head ? prior.tau_L : prior.tau_h;
            double m = head ? 0.0 : prior.theta_h_star[static_cast<size_t>(i)];
            lp += 0.5 * std::log(tau) - 0.5 * tau * (x - m) * (x - m);
        }
        acc += lq - lp;
    }
    return acc / static_cast<double>(n_samples);
}

}  // namespace certain::var
