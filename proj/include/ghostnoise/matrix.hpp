#pragma once

#include <cstddef>
#include <vector>

namespace ghostnoise {

/// Minimal row-major matrix for weights and (batch x feature) activations.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d);

    double operator()(std::size_t i, std::size_t j) const {
        return data[i * cols + j];
    }
    double& operator()(std::size_t i, std::size_t j) {
        return data[i * cols + j];
    }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double* row(std::size_t i) { return data.data() + i * cols; }
    std::size_t size() const { return data.size(); }
};

/// c = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& c);

/// c = a^T * b (a is k x m, b is k x n, c is m x n)
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);

/// c = a * b^T (a is m x k, b is n x k, c is m x n)
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);

Matrix transpose(const Matrix& a);

}  // namespace ghostnoise
