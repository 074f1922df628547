#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace bsdeuq {

// Dense row-major matrix of doubles. Kept deliberately small; the library
// only needs batched affine maps and their transposed products.
struct Matrix {
    std::vector<double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double value = 0.0) : data(r * c, value), rows(r), cols(c) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row_ptr(std::size_t i) { return data.data() + i * cols; }
    const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

    void assign(std::size_t r, std::size_t c, double value = 0.0) {
        rows = r;
        cols = c;
        data.assign(r * c, value);
    }

    void fill(double value) { std::fill(data.begin(), data.end(), value); }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
    }
};

// C = A * B^T, with A [m x k] and B [n x k]; rows of both operands are
// contiguous, which keeps the inner loop a plain dot product.
inline void matmul_abt(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.cols);
    c.assign(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* bj = b.row_ptr(j);
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) sum += ai[k] * bj[k];
            ci[j] = sum;
        }
    }
}

// C = A * B, with A [m x k] and B [k x n].
inline void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.rows);
    c.assign(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
}

// C += A^T * B, with A [m x k] and B [m x n]; accumulates into C [k x n].
inline void matmul_atb_accum(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        const double* bi = b.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            double* ck = c.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) ck[j] += aik * bi[j];
        }
    }
}

} // namespace bsdeuq
