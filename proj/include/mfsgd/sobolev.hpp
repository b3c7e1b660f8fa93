#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mfsgd/core.hpp"

namespace mfsgd {

// ---------------------------------------------------------------------------
// domain
// ---------------------------------------------------------------------------

// Box Theta = (-B, B)^D with B = 3 sqrt(D) C_o, where C_o bounds the particle
// support K = [-C_o, C_o]^D. C_o is estimated from runs (observed bound times
// a safety factor), never known a priori.
struct SobolevDomain {
    int dim = 2;          // D = d + 1
    double c_o = 1.0;     // support radius
    double box_b = 1.0;   // B
    int order = 0;        // J used for normalization / dual norms

    static SobolevDomain from_support(int dim, double c_o, int order);

    // Paper floor J = 3 ceil(D/2) + 7 for reporting.
    static int order_report(int dim) { return 3 * ((dim + 1) / 2) + 7; }
    // J_1 = 2 ceil(D/2) + 4, the norm giving the uniform Xi bound.
    static int order_uniform_bound(int dim) { return 2 * ((dim + 1) / 2) + 4; }
    // L = ceil(D/2) + 3 from the Sobolev embedding bound.
    static int order_embedding(int dim) { return (dim + 1) / 2 + 3; }
};

// Counts particles with any coordinate outside K = [-C_o, C_o]^D.
std::size_t count_outside_support(const ParticleEnsemble& ens, const SobolevDomain& dom);

// ---------------------------------------------------------------------------
// tensor sine basis
// ---------------------------------------------------------------------------

// e_a(z) = scale * prod_j sin(a_j pi (z_j + B) / (2B)), a_j >= 1.
//
// These vanish on the boundary of Theta and their derivatives of every order
// are frequency-orthogonal axis by axis, so distinct multi-indices are
// orthogonal in every <.,.>_J inner product and the norms have closed form:
// per-axis integral of the squared k-th derivative over (-B, B) is
// B * omega_j^{2k} with omega_j = a_j pi / (2B).
struct SineMode {
    std::vector<int> index;  // multi-index a, size D
    double box_b = 1.0;
    double scale = 1.0;
    bool normalized = false;

    SineMode() = default;
    SineMode(std::vector<int> a, double b) : index(std::move(a)), box_b(b) {}

    int dim() const { return static_cast<int>(index.size()); }
    double omega(int j) const {
        return static_cast<double>(index[static_cast<std::size_t>(j)]) * std::numbers::pi /
               (2.0 * box_b);
    }

    // ||e_a||_J from the closed-form product of per-axis derivative factors
    // (of the unscaled mode).
    double sobolev_norm(int order_j) const;

    // Returns a copy scaled so that ||.||_J = 1 in the given order
    // (order 0 gives L^2(Theta) normalization).
    SineMode unit(int order_j) const;

    std::string id() const;

    // z maps to (c, w_1 .. w_d): axis 0 is c.
    double value(double c, std::span<const double> w) const {
        double v = scale;
        v *= std::sin(omega(0) * (c + box_b));
        for (std::size_t j = 0; j < w.size(); ++j) {
            v *= std::sin(omega(static_cast<int>(j) + 1) * (w[j] + box_b));
        }
        return v;
    }

    void gradient(double c, std::span<const double> w, double& dc, std::span<double> dw) const;
    void hessian(double c, std::span<const double> w, double& dcc, std::span<double> dcw,
                 std::span<double> dww) const;

    ScalarField as_field() const;
};

// First `count` multi-indices in D axes, graded order: ascending |a|_1, then
// lexicographic. The lowest mode is (1, 1, ..., 1).
std::vector<std::vector<int>> graded_multi_indices(int dim, std::size_t count);

// Convenience: first `count` unit-normalized sine modes on the domain.
std::vector<SineMode> leading_modes(const SobolevDomain& dom, std::size_t count, int norm_order);

// ---------------------------------------------------------------------------
// bump function
// ---------------------------------------------------------------------------

// b(z) = h(2 - |z|/r) / (h(|z|/r - 1) + h(2 - |z|/r)), h(v) = exp(-1/v^2) 1{v>0}.
// Equal to one for |z| <= r, zero for |z| >= 2r, C-infinity everywhere.
struct BumpFunction {
    double radius = 1.0;

    static double h(double v) { return v > 0.0 ? std::exp(-1.0 / (v * v)) : 0.0; }

    double value_radial(double rho) const {
        const double s = rho / radius;
        if (s <= 1.0) return 1.0;
        if (s >= 2.0) return 0.0;
        const double top = h(2.0 - s);
        return top / (h(s - 1.0) + top);
    }

    double value(double c, std::span<const double> w) const {
        double q = c * c;
        for (double wj : w) q += wj * wj;
        return value_radial(std::sqrt(q));
    }
};

inline double bump_eval(const BumpFunction& b, std::span<const double> z) {
    double q = 0.0;
    for (double zj : z) q += zj * zj;
    return b.value_radial(std::sqrt(q));
}

// Multiplies a field by the bump; used to turn globally defined test
// functions into elements of W_0^{J,2}(Theta) without changing pairings
// against measures supported in K.
ScalarField bump_multiply(const BumpFunction& b, const ScalarField& f);

// ---------------------------------------------------------------------------
// signed particle measures and pairings
// ---------------------------------------------------------------------------

// Finite signed combination sum_k coef_k * nu_k of particle probability
// measures; eta = sqrt(N) (mu^N - mu_bar) is the motivating case.
struct SignedParticleMeasure {
    struct Term {
        double coef = 1.0;
        const ParticleEnsemble* ens = nullptr;
    };
    std::vector<Term> terms;

    double total_variation_bound() const {
        double tv = 0.0;
        for (const auto& t : terms) tv += std::abs(t.coef);
        return tv;
    }
};

struct PairingResult {
    double value = 0.0;
    std::size_t outside_support = 0;  // particles found outside K; reported, never clipped
};

// Exact particle sum of the basis function against the signed measure. The
// sine formula is global, so the pairing is computed even when particles sit
// outside K; the count is reported.
PairingResult measure_pairing(const SignedParticleMeasure& nu, const SineMode& mode,
                              const SobolevDomain& dom);

// All pairings <e_a / ||e_a||_J, nu> for a in [1, a_max]^D at once, using
// per-particle sine recurrences. Returns values in graded-index order of
// `modes_out` (also filled).
std::vector<double> basis_pairings(const SignedParticleMeasure& nu, const SobolevDomain& dom,
                                   int a_max, int norm_order, std::vector<SineMode>* modes_out,
                                   std::size_t* outside_support);

struct DualNormResult {
    double value = 0.0;          // sqrt(sum of squared normalized pairings), truncated
    double tail_bound = 0.0;     // TV-based bound on the omitted modes
    int a_max = 0;
    int order = 0;
    std::size_t outside_support = 0;
};

// Truncated Parseval estimate of ||nu||_{-J}: monotone non-decreasing in
// a_max and a lower bound of the exact dual norm.
DualNormResult dual_norm_truncated(const SignedParticleMeasure& nu, const SobolevDomain& dom,
                                   int a_max);

// Partial sum of ||e_a||_L^2 / ||e_a||_J^2 over a in [1, a_max]^D; converges
// as a_max grows when J - L > D/2 (Hilbert-Schmidt embedding shadow).
double hs_ratio_partial_sum(const SobolevDomain& dom, int order_l, int order_j, int a_max);

// ---------------------------------------------------------------------------
// quadrature
// ---------------------------------------------------------------------------

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration.
QuadratureRule gauss_legendre(int n);

// Composite Gauss-Legendre rule over [lo, hi] with `panels` equal panels.
QuadratureRule composite_gauss_legendre(double lo, double hi, int panels, int nodes_per_panel);

}  // namespace mfsgd
