#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "certain/net.hpp"
#include "certain/rng.hpp"

namespace certain::var {

// Mean-field Gaussian over the stochastic parameters. The stochastic range
// is a contiguous slice [stoch_begin, full_count) of the full parameter
// vector: the whole vector for scope "all", only the head for scope
// "final_layer". Within the slice, [0, h_count) are encoder parameters and
// the rest the final layer.
struct VarState {
    std::vector<double> mu;
    std::vector<double> log_var;
    int stoch_begin = 0;
    int head_offset = 0;  // index into the full parameter vector
    int full_count = 0;

    int count() const { return static_cast<int>(mu.size()); }
    int h_count() const { return head_offset - stoch_begin; }
    int l_count() const { return count() - h_count(); }
};

// Layered base prior: N(theta_h_star, 1/tau_h) over the encoder slice and
// N(0, 1/tau_L) over the final layer.
struct BasePrior {
    std::vector<double> theta_h_star;  // length h_count
    double tau_h = 1.0;
    double tau_L = 1.0;
};

VarState make_state(const net::FusionNet& net, std::span<const double> init_params,
                    const std::string& scope, double init_log_var = -10.0);

BasePrior make_prior(const VarState& state, std::span<const double> center_params,
                     double prior_variance, bool uninformative);

// theta = mu + exp(log_var/2) .* eps with eps ~ N(0, I). eps is retained so
// gradients with respect to (mu, log_var) can flow through downstream losses.
std::vector<double> sample(const VarState& state, Rng& rng, std::vector<double>* eps_out = nullptr);

// Full parameter vector: base values outside the stochastic slice, theta
// inside it.
std::vector<double> assemble(const VarState& state, std::span<const double> base_params,
                             std::span<const double> theta);

// Chain rule through the reparameterization: given dL/dtheta over the
// stochastic slice, accumulate dL/dmu and dL/dlog_var.
void accumulate_reparam_grad(const VarState& state, std::span<const double> d_theta,
                             std::span<const double> eps, std::span<double> g_mu,
                             std::span<double> g_log_var);

// Analytic KL(q || p) split into the (encoder, final-layer) contributions.
// Per coordinate: 0.5 * (tau*s2 + tau*(mu-m)^2 - 1 - ln(tau*s2)).
std::pair<double, double> kl_to_prior(const VarState& state, const BasePrior& prior);

// Accumulates scale * dKL/d(mu, log_var).
void kl_gradients(const VarState& state, const BasePrior& prior, double scale,
                  std::span<double> g_mu, std::span<double> g_log_var);

// Simple Monte Carlo estimate of E_q[ln q - ln p]; test oracle for the
// analytic form.
double kl_monte_carlo(const VarState& state, const BasePrior& prior, int n_samples, Rng& rng);

}  // namespace certain::var
