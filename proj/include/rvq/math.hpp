#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rvq/errors.hpp"

namespace rvq {

inline constexpr double kPi = 3.14159265358979323846;

using Vec = std::vector<double>;

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_l2(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double l2_norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec sub(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline void add_in_place(Vec& a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline void sub_in_place(Vec& a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// y = W x + b
inline Vec affine(const Matrix& w, const Vec& b, const Vec& x) {
    Vec y(w.rows);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double s = b[r];
        const double* row = &w.data[r * w.cols];
        for (std::size_t c = 0; c < w.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

/// y = W^T g
inline Vec matvec_transpose(const Matrix& w, const Vec& g) {
    Vec y(w.cols, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const double* row = &w.data[r * w.cols];
        for (std::size_t c = 0; c < w.cols; ++c) y[c] += row[c] * g[r];
    }
    return y;
}

/// W += g x^T (outer-product accumulate)
inline void accumulate_outer(Matrix& w, const Vec& g, const Vec& x) {
    for (std::size_t r = 0; r < w.rows; ++r) {
        double* row = &w.data[r * w.cols];
        for (std::size_t c = 0; c < w.cols; ++c) row[c] += g[r] * x[c];
    }
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double mean(const Vec& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double variance(const Vec& v) {
    if (v.empty()) return 0.0;
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

} // namespace rvq
