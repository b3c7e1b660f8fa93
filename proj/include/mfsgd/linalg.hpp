#pragma once

#include <cstddef>
#include <vector>

namespace mfsgd {

// Dense row-major matrix; everything here is small (mode counts <= 32).
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Matrix identity(std::size_t n);
    static Matrix zero(std::size_t n) { return Matrix(n, n); }
};

Matrix matmul(const Matrix& x, const Matrix& y);
std::vector<double> matvec(const Matrix& x, const std::vector<double>& v);

struct SymEig {
    std::vector<double> values;  // ascending
    Matrix vectors;              // columns are eigenvectors
};

// Cyclic Jacobi rotations; fine for the small symmetric matrices used here.
SymEig jacobi_eigensym(const Matrix& m, int max_sweeps = 64);

double min_eigenvalue_sym(const Matrix& m);

// Factor L with L L^T = m for symmetric PSD m, via eigendecomposition.
// Eigenvalues in [-clamp_tol, 0) are clamped to zero; anything below
// -clamp_tol throws std::runtime_error (quadrature noise must not fabricate
// noise directions).
Matrix psd_sqrt_factor(const Matrix& m, double clamp_tol);

}  // namespace mfsgd
