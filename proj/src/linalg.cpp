#include "mfsgd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mfsgd {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw std::invalid_argument("matmul: dimension mismatch");
    Matrix out(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double v = x.at(i, k);
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < y.cols; ++j) out.at(i, j) += v * y.at(k, j);
        }
    }
    return out;
}

std::vector<double> matvec(const Matrix& x, const std::vector<double>& v) {
    if (x.cols != v.size()) throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<double> out(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) s += x.at(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

SymEig jacobi_eigensym(const Matrix& m, int max_sweeps) {
    if (m.rows != m.cols) throw std::invalid_argument("jacobi: matrix must be square");
    const std::size_t n = m.rows;
    Matrix a = m;
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
        }
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    SymEig eig;
    eig.values.resize(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = a.at(i, i);
    std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return diag[l] < diag[r]; });
    eig.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        eig.values[j] = diag[order[j]];
        for (std::size_t i = 0; i < n; ++i) eig.vectors.at(i, j) = v.at(i, order[j]);
    }
    return eig;
}

double min_eigenvalue_sym(const Matrix& m) {
    return jacobi_eigensym(m).values.front();
}

Matrix psd_sqrt_factor(const Matrix& m, double clamp_tol) {
    const SymEig eig = jacobi_eigensym(m);
    const std::size_t n = m.rows;
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double lam = eig.values[j];
        if (lam < 0.0) {
            if (lam < -clamp_tol) {
                throw std::runtime_error("psd_sqrt_factor: matrix eigenvalue below -tolerance");
            }
            lam = 0.0;
        }
        const double s = std::sqrt(lam);
        for (std::size_t i = 0; i < n; ++i) l.at(i, j) = eig.vectors.at(i, j) * s;
    }
    return l;
}

}  // namespace mfsgd
