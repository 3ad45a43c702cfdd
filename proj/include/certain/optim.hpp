#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "certain/util.hpp"

namespace certain::opt {

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
};

// Standard Adam with bias correction.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grads.size()) throw shape_error("adam_step: size mismatch");
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
        st.t = 0;
    }
    ++st.t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
        double mhat = st.m[i] / c1;
        double vhat = st.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// Cosine decay to zero over total steps (final learning-rate fraction 0).
inline double cosine_lr(double base, long step, long total_steps) {
    if (total_steps <= 0) return base;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    if (frac > 1.0) frac = 1.0;
    return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace certain::opt
