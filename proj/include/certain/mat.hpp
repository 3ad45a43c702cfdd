#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace certain {

// Dense row-major matrix of doubles. Deliberately minimal: the numeric core
// of this project is hand-written loops, not a linear algebra DSL.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }

    double* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    size_t size() const { return v.size(); }
};

inline bool operator==(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// NaN when either vector has zero norm; callers decide how to handle that.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return std::nan("");
    return dot(a, b) / (na * nb);
}

// Cholesky factorization of a symmetric positive definite matrix (row-major,
// n x n). ok=false when a pivot is not strictly positive.
struct Cholesky {
    int n = 0;
    std::vector<double> l;  // lower triangular, row-major
    bool ok = false;
};

inline Cholesky cholesky(std::span<const double> a, int n) {
    Cholesky c;
    c.n = n;
    c.l.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < j; ++k) s -= c.l[static_cast<size_t>(i) * n + k] * c.l[static_cast<size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0) return c;  // not SPD
                c.l[static_cast<size_t>(i) * n + j] = std::sqrt(s);
            } else {
                c.l[static_cast<size_t>(i) * n + j] = s / c.l[static_cast<size_t>(j) * n + j];
            }
        }
    }
    c.ok = true;
    return c;
}

// Solves A x = b given A = L L^T.
inline std::vector<double> chol_solve(const Cholesky& c, std::span<const double> b) {
    int n = c.n;
    std::vector<double> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = b[static_cast<size_t>(i)];
        for (int k = 0; k < i; ++k) s -= c.l[static_cast<size_t>(i) * n + k] * y[static_cast<size_t>(k)];
        y[static_cast<size_t>(i)] = s / c.l[static_cast<size_t>(i) * n + i];
    }
    std::vector<double> x(static_cast<size_t>(n));
    for (int i = n - 1; i >= 0; --i) {
        double s = y[static_cast<size_t>(i)];
        for (int k = i + 1; k < n; ++k) s -= c.l[static_cast<size_t>(k) * n + i] * x[static_cast<size_t>(k)];
        x[static_cast<size_t>(i)] = s / c.l[static_cast<size_t>(i) * n + i];
    }
    return x;
}

}  // namespace certain
