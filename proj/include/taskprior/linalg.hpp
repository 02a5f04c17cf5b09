#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace taskprior {

using Vector = std::vector<double>;

// Dense row-major matrix. Sized for desk-scale models; no BLAS.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    double& operator()(int r, int c) {
        return data[static_cast<std::size_t>(r) * cols + c];
    }
    double operator()(int r, int c) const {
        return data[static_cast<std::size_t>(r) * cols + c];
    }

    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const {
        return data.data() + static_cast<std::size_t>(r) * cols;
    }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }
    bool empty() const { return data.empty(); }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
    }
};

inline double dot(const Vector& a, const Vector& b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const Vector& a) { return std::sqrt(dot(a, a)); }

inline void scale(Vector& a, double c) {
    for (double& x : a) x *= c;
}

inline bool all_finite(const Vector& a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace taskprior
