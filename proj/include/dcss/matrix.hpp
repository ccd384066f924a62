#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dcss {

// Dense row-major matrix of doubles. All linear algebra in the library
// goes through this type; heavy products are dispatched to BLAS.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// C = alpha * op(A) * op(B) + beta * C
inline void gemm(bool trans_a, bool trans_b, double alpha, const Matrix& a,
                 const Matrix& b, double beta, Matrix& c) {
    const std::size_t m = trans_a ? a.cols : a.rows;
    const std::size_t k = trans_a ? a.rows : a.cols;
    const std::size_t kb = trans_b ? b.cols : b.rows;
    const std::size_t n = trans_b ? b.rows : b.cols;
    if (k != kb || c.rows != m || c.cols != n)
        throw std::invalid_argument("gemm: shape mismatch");
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a.data.data(),
                static_cast<int>(a.cols), b.data.data(), static_cast<int>(b.cols),
                beta, c.data.data(), static_cast<int>(c.cols));
}

inline double squared_distance(const double* x, const double* y, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double t = x[k] - y[k];
        s += t * t;
    }
    return s;
}

inline double euclidean_distance(const double* x, const double* y, std::size_t d) {
    return std::sqrt(squared_distance(x, y, d));
}

}  // namespace dcss
