#pragma once

#include <cstddef>
#include <span>

// Dense helpers for the desk-scale encoders. Fixed loop order keeps results
// bit-reproducible.

namespace llmser::detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// y = W x, W is (rows x cols) row-major.
inline void matvec(std::span<const double> w, std::span<const double> x, std::span<double> y,
                   std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        const double* wr = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) s += wr[j] * x[j];
        y[i] = s;
    }
}

// y += W x
inline void matvec_add(std::span<const double> w, std::span<const double> x, std::span<double> y,
                       std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        const double* wr = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) s += wr[j] * x[j];
        y[i] += s;
    }
}

// y += W^T x, W is (rows x cols); x has rows elements, y has cols.
inline void matvec_t_add(std::span<const double> w, std::span<const double> x, std::span<double> y,
                         std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = x[i];
        const double* wr = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) y[j] += wr[j] * xi;
    }
}

// G += a b^T
inline void outer_add(std::span<double> g, std::span<const double> a, std::span<const double> b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ai = a[i];
        double* gr = g.data() + i * b.size();
        for (std::size_t j = 0; j < b.size(); ++j) gr[j] += ai * b[j];
    }
}

// Y = X W, X is (n x k) row-major, W is (k x m) row-major, Y is (n x m).
inline void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
                   std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t r = 0; r < n; ++r) {
        double* yr = y.data() + r * m;
        for (std::size_t c = 0; c < m; ++c) yr[c] = 0.0;
        const double* xr = x.data() + r * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = xr[p];
            const double* wr = w.data() + p * m;
            for (std::size_t c = 0; c < m; ++c) yr[c] += xv * wr[c];
        }
    }
}

// dW += X^T dY
inline void matmul_grad_w(std::span<const double> x, std::span<const double> dy,
                          std::span<double> dw, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.data() + r * k;
        const double* dyr = dy.data() + r * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = xr[p];
            double* dwr = dw.data() + p * m;
            for (std::size_t c = 0; c < m; ++c) dwr[c] += xv * dyr[c];
        }
    }
}

// dX += dY W^T
inline void matmul_grad_x(std::span<const double> dy, std::span<const double> w,
                          std::span<double> dx, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t r = 0; r < n; ++r) {
        const double* dyr = dy.data() + r * m;
        double* dxr = dx.data() + r * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* wr = w.data() + p * m;
            double s = 0.0;
            for (std::size_t c = 0; c < m; ++c) s += dyr[c] * wr[c];
            dxr[p] += s;
        }
    }
}

}  // namespace llmser::detail
