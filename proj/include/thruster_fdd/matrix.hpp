#pragma once

#include "errors.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tfdd {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t k = 0; k < n; ++k) m(k, k) = 1.0;
        return m;
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

/// out += m * x
inline void gemv_acc(const Matrix& m, std::span<const double> x, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* w = m.data.data() + r * m.cols;
        double s = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) s += w[c] * x[c];
        out[r] += s;
    }
}

/// out += m^T * d
inline void gemv_t_acc(const Matrix& m, std::span<const double> d, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* w = m.data.data() + r * m.cols;
        const double dr = d[r];
        if (dr == 0.0) continue;
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += w[c] * dr;
    }
}

/// m += d * x^T
inline void outer_acc(Matrix& m, std::span<const double> d, std::span<const double> x) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* w = m.data.data() + r * m.cols;
        const double dr = d[r];
        if (dr == 0.0) continue;
        for (std::size_t c = 0; c < m.cols; ++c) w[c] += dr * x[c];
    }
}

} // namespace tfdd
