#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bogcn {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Sized for the small operands this
/// project works with (graph cells, embedding blocks, BLR precision
/// matrices); no view/expression machinery.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    Vector row_copy(std::size_t i) const {
        return Vector(row(i), row(i) + cols_);
    }
    void set_row(std::size_t i, const Vector& v) {
        assert(v.size() == cols_);
        std::copy(v.begin(), v.end(), row(i));
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_ta(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_tb(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Vector matvec(const Matrix& m, const Vector& v);
// M^T * v
Vector matvec_t(const Matrix& m, const Vector& v);

double dot(const Vector& a, const Vector& b);
double norm_sq(const Vector& v);

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Throws std::runtime_error when the pivot drops below a tiny floor, which
/// for our precision matrices (alpha*I + beta*Phi^T*Phi, alpha > 0) signals
/// an internal error rather than bad input.
Matrix cholesky(const Matrix& spd);

/// Solve L*y = b with L lower triangular.
Vector solve_lower(const Matrix& l, const Vector& b);
/// Solve L^T*x = y with L lower triangular.
Vector solve_lower_transposed(const Matrix& l, const Vector& y);
/// Solve (L*L^T)*x = b.
Vector cholesky_solve(const Matrix& l, const Vector& b);
/// Inverse of L*L^T, column by column via triangular solves.
Matrix cholesky_inverse(const Matrix& l);
/// log|L*L^T| = 2 * sum_i log L_ii
double cholesky_logdet(const Matrix& l);

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace bogcn
