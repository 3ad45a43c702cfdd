#pragma once

// Test-only oracles. These stay independent of the implementation paths they
// check: finite differences for gradients, exhaustive enumeration for metrics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

// Central finite differences of a scalar function of a flat vector.
inline std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double eps = 1e-5) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + eps;
        double up = f(x);
        x[i] = keep - eps;
        double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

// Max relative error with an absolute floor so near-zero coordinates compare
// absolutely.
inline double max_rel_error(std::span<const double> a, std::span<const double> b,
                            double floor = 1e-4) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({floor, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// AUROC by exhaustive pairwise comparison, ties credited one half.
inline double pairwise_auroc(std::span<const double> scores, std::span<const int> labels) {
    double num = 0.0;
    long long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

// AUROC by trapezoidal integration of the ROC curve over unique thresholds.
inline double trapezoid_auroc(std::span<const double> scores, std::span<const int> labels) {
    std::vector<double> uniq(scores.begin(), scores.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    int pos = 0, neg = 0;
    for (int y : labels) (y == 1 ? pos : neg) += 1;
    // sweep thresholds from above the max down to below the min
    std::vector<std::pair<double, double>> curve;  // (fpr, tpr)
    curve.emplace_back(0.0, 0.0);
    for (auto it = uniq.rbegin(); it != uniq.rend(); ++it) {
        double th = *it;
        int tp = 0, fp = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= th) (labels[i] == 1 ? tp : fp) += 1;
        }
        curve.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
    }
    curve.emplace_back(1.0, 1.0);
    double area = 0.0;
    for (size_t k = 1; k < curve.size(); ++k)
        area += (curve[k].first - curve[k - 1].first) * 0.5 * (curve[k].second + curve[k - 1].second);
    return area;
}

}  // namespace oracle
