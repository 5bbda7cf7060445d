#include "ghostnoise/matrix.hpp"

#include <stdexcept>

namespace ghostnoise {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != r * c) {
        throw std::invalid_argument("Matrix: data length mismatch");
    }
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(a.rows * b.cols, 0.0);
    // i-k-j order: the inner loop runs over contiguous rows of b and c and
    // vectorizes without reassociating any reduction.
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.rows != b.rows) {
        throw std::invalid_argument("matmul_tn: inner dimension mismatch");
    }
    c.rows = a.cols;
    c.cols = b.cols;
    c.data.assign(a.cols * b.cols, 0.0);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = ak[i];
            double* ci = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols != b.cols) {
        throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    }
    const Matrix bt = transpose(b);
    matmul(a, bt, c);
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

}  // namespace ghostnoise
