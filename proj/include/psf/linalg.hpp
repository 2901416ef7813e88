#pragma once

// Dense matrix/vector kernels, elementwise nonlinearities with derivatives,
// and the quadratic tensor mode-product. No broadcasting: every shape
// mismatch is an error.

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "psf/common.hpp"

namespace psf {

using Vector = std::vector<double>;

// Row-major dense matrix. The layout is part of the checkpoint format.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double* row(std::size_t i) { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }
};

// d3 slices of d1 x d2 matrices, slice-major, each slice row-major.
struct Tensor3 {
    std::size_t d1 = 0;
    std::size_t d2 = 0;
    std::size_t d3 = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(std::size_t a, std::size_t b, std::size_t c, double fill = 0.0)
        : d1(a), d2(b), d3(c), data(a * b * c, fill) {}

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[k * d1 * d2 + i * d2 + j];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[k * d1 * d2 + i * d2 + j];
    }

    const double* slice(std::size_t k) const { return data.data() + k * d1 * d2; }
    double* slice(std::size_t k) { return data.data() + k * d1 * d2; }
};

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const Vector& a, const Vector& b) {
    require_same_dim(a.size(), b.size(), "dot");
    return dot(a.data(), b.data(), a.size());
}

// y = M x
inline Vector matvec(const Matrix& m, const Vector& x) {
    require_same_dim(m.cols, x.size(), "matvec");
    Vector y(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) y[i] = dot(m.row(i), x.data(), m.cols);
    return y;
}

// y += M x
inline void matvec_add(const Matrix& m, const Vector& x, Vector& y) {
    require_same_dim(m.cols, x.size(), "matvec_add");
    require_same_dim(m.rows, y.size(), "matvec_add out");
    for (std::size_t i = 0; i < m.rows; ++i) y[i] += dot(m.row(i), x.data(), m.cols);
}

// y = M^T x
inline Vector matvec_t(const Matrix& m, const Vector& x) {
    require_same_dim(m.rows, x.size(), "matvec_t");
    Vector y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += xi * r[j];
    }
    return y;
}

// y += M^T x
inline void matvec_t_add(const Matrix& m, const Vector& x, Vector& y) {
    require_same_dim(m.rows, x.size(), "matvec_t_add");
    require_same_dim(m.cols, y.size(), "matvec_t_add out");
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += xi * r[j];
    }
}

// G += u v^T
inline void outer_add(Matrix& g, const Vector& u, const Vector& v) {
    require_same_dim(g.rows, u.size(), "outer_add rows");
    require_same_dim(g.cols, v.size(), "outer_add cols");
    for (std::size_t i = 0; i < g.rows; ++i) {
        const double ui = u[i];
        double* r = g.row(i);
        for (std::size_t j = 0; j < g.cols; ++j) r[j] += ui * v[j];
    }
}

inline void add_in_place(Vector& a, const Vector& b) {
    require_same_dim(a.size(), b.size(), "add");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline void axpy(double alpha, const Vector& x, Vector& y) {
    require_same_dim(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector hadamard(const Vector& a, const Vector& b) {
    require_same_dim(a.size(), b.size(), "hadamard");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
    return c;
}

// result[j] = x^T H_j x for every slice j; the noiseless measurement map.
inline Vector mode_product_quadratic(const Tensor3& h, const Vector& x) {
    require_same_dim(h.d1, x.size(), "mode_product_quadratic d1");
    require_same_dim(h.d2, x.size(), "mode_product_quadratic d2");
    const std::size_t n = x.size();
    Vector out(h.d3);
    for (std::size_t k = 0; k < h.d3; ++k) {
        const double* s = h.slice(k);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += x[i] * dot(s + i * n, x.data(), n);
        }
        out[k] = acc;
    }
    return out;
}

enum class Activation { sigmoid, tanh, relu, identity };

inline Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ValueError("unknown activation: " + s);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// f(v[i]) and f'(v[i]) for each entry. relu's derivative at exactly 0 is 0.
inline void activation(Activation kind, const Vector& v, Vector& value, Vector& deriv) {
    const std::size_t n = v.size();
    value.resize(n);
    deriv.resize(n);
    switch (kind) {
        case Activation::sigmoid:
            for (std::size_t i = 0; i < n; ++i) {
                const double s = sigmoid(v[i]);
                value[i] = s;
                deriv[i] = s * (1.0 - s);
            }
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < n; ++i) {
                const double t = std::tanh(v[i]);
                value[i] = t;
                deriv[i] = 1.0 - t * t;
            }
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < n; ++i) {
                value[i] = v[i] > 0.0 ? v[i] : 0.0;
                deriv[i] = v[i] > 0.0 ? 1.0 : 0.0;
            }
            break;
        case Activation::identity:
            for (std::size_t i = 0; i < n; ++i) {
                value[i] = v[i];
                deriv[i] = 1.0;
            }
            break;
    }
}

inline std::pair<Vector, Vector> activation(Activation kind, const Vector& v) {
    Vector value, deriv;
    activation(kind, v, value, deriv);
    return {std::move(value), std::move(deriv)};
}

}  // namespace psf
