// Dense row-major double matrix, the only numeric container in the project.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "jetjepa/common.hpp"
#include "jetjepa/rng.hpp"

namespace jetjepa {

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    static Mat from_rows(const std::vector<std::vector<double>>& data) {
        Mat m(static_cast<int>(data.size()), data.empty() ? 0 : static_cast<int>(data[0].size()));
        for (int i = 0; i < m.rows; ++i)
            for (int j = 0; j < m.cols; ++j) m(i, j) = data[static_cast<size_t>(i)][static_cast<size_t>(j)];
        return m;
    }

    static Mat gaussian(int r, int c, double sigma, Rng& rng) {
        Mat m(r, c);
        for (auto& x : m.v) x = rng.gaussian(0.0, sigma);
        return m;
    }

    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return v.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    double* row_ptr(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
};

// C += A * B  (A: n x k, B: k x m). ikj order for cache friendliness.
inline void matmul_acc(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row_ptr(i);
        double* cr = c.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = ar[k];
            if (av == 0.0) continue;
            const double* br = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
}

// C += A * B^T  (A: n x k, B: m x k).
inline void matmul_nt_acc(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row_ptr(i);
        double* cr = c.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* br = b.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            cr[j] += acc;
        }
    }
}

// C += A^T * B  (A: k x n, B: k x m).
inline void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    for (int k = 0; k < a.rows; ++k) {
        const double* ar = a.row_ptr(k);
        const double* br = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            double* cr = c.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
}

inline double dot_all(const Mat& a, const Mat& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

} // namespace jetjepa
