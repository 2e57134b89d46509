#include "bogcn/linalg.hpp"

#include <algorithm>

namespace bogcn {

Matrix matmul(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.rows());
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b.row(p);
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

Matrix matmul_ta(const Matrix& a, const Matrix& b) {
    assert(a.rows() == b.rows());
    Matrix c(a.cols(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t p = 0; p < n; ++p) {
        const double* ap = a.row(p);
        const double* bp = b.row(p);
        for (std::size_t i = 0; i < k; ++i) {
            const double api = ap[i];
            double* ci = c.row(i);
            for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
        }
    }
    return c;
}

Matrix matmul_tb(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.cols());
    Matrix c(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.row(j);
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Vector matvec(const Matrix& m, const Vector& v) {
    assert(m.cols() == v.size());
    Vector out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* mi = m.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += mi[j] * v[j];
        out[i] = s;
    }
    return out;
}

Vector matvec_t(const Matrix& m, const Vector& v) {
    assert(m.rows() == v.size());
    Vector out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* mi = m.row(i);
        const double vi = v[i];
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += mi[j] * vi;
    }
    return out;
}

double dot(const Vector& a, const Vector& b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm_sq(const Vector& v) { return dot(v, v); }

Matrix cholesky(const Matrix& spd) {
    assert(spd.rows() == spd.cols());
    const std::size_t n = spd.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = spd(j, j);
        for (std::size_t p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
        if (d <= 0.0 || !std::isfinite(d))
            throw std::runtime_error("cholesky: matrix not positive definite");
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = spd(i, j);
            for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

Vector solve_lower(const Matrix& l, const Vector& b) {
    const std::size_t n = b.size();
    assert(l.rows() == n);
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        const double* li = l.row(i);
        for (std::size_t j = 0; j < i; ++j) s -= li[j] * y[j];
        y[i] = s / li[i];
    }
    return y;
}

Vector solve_lower_transposed(const Matrix& l, const Vector& y) {
    const std::size_t n = y.size();
    assert(l.rows() == n);
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= l(j, ii) * x[j];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

Vector cholesky_solve(const Matrix& l, const Vector& b) {
    return solve_lower_transposed(l, solve_lower(l, b));
}

Matrix cholesky_inverse(const Matrix& l) {
    const std::size_t n = l.rows();
    Matrix inv(n, n);
    Vector e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        Vector col = cholesky_solve(l, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
        e[j] = 0.0;
    }
    // enforce exact symmetry lost to round-off in the per-column solves
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = v;
            inv(j, i) = v;
        }
    return inv;
}

double cholesky_logdet(const Matrix& l) {
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

}  // namespace bogcn
