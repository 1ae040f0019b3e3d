#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "aima/common.hpp"

namespace aima {

/// Dense row-major 2-D array of doubles. Vectors are [1,n]; scalars [1,1].
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), data(std::size_t(r) * c, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }
    static Tensor row(std::vector<double> v) {
        Tensor t;
        t.rows = 1;
        t.cols = int(v.size());
        t.data = std::move(v);
        return t;
    }

    std::size_t size() const { return data.size(); }
    double& at(int r, int c) { return data[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[std::size_t(r) * cols + c]; }
    double* row_ptr(int r) { return data.data() + std::size_t(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + std::size_t(r) * cols; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace aima
