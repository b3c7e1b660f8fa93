#pragma once

#include <span>
#include <vector>

#include "mfsgd/core.hpp"
#include "mfsgd/linalg.hpp"
#include "mfsgd/meanfield.hpp"
#include "mfsgd/sobolev.hpp"

namespace mfsgd {

// ---------------------------------------------------------------------------
// limit operator R and the Gaussian martingale covariance
// ---------------------------------------------------------------------------

// R_{x,y,mu}[h] = (y - <c sigma(w.x), mu>) <grad(c sigma(w.x)) . grad h, mu>,
// both pairings taken from the reference ensemble at a snapshot time.
template <class F>
double r_eval(const MeanFieldTrajectory& ref, double t, const F& f, std::span<const double> x,
              double y, const Activation& act) {
    const ParticleEnsemble& mu = ref.snapshot_at(t);
    const std::size_t n = mu.size();
    const int d = mu.d;
    CompensatedSum g, a;
    std::vector<double> dwbuf(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const double ci = mu.c[i];
        const auto wi = mu.w_row(i);
        double s, ds;
        act.value_deriv(dot(wi, x), s, ds);
        double fdc;
        f.gradient(ci, wi, fdc, dwbuf);
        g.add(ci * s);
        a.add(s * fdc + ci * ds * dot(x, dwbuf));
    }
    const double gv = g.value() / static_cast<double>(n);
    const double av = a.value() / static_cast<double>(n);
    return (y - gv) * av;
}

// Covariance rates Q(s) and accumulated covariances int_0^t Q(s) ds of the
// limiting Gaussian martingale over the registered trace fields:
//   Q_ab(s) = alpha^2 sum_m p_m (R_m[f_a] - Rbar[f_a]) (R_m[f_b] - Rbar[f_b])
// with R_m[f] = resid_m(s) * (S1 + S2)_{f,m}(s) read from the traces.
struct GaussianMartingaleModel {
    std::vector<double> times;
    std::size_t n_fields = 0;
    std::vector<Matrix> rate;         // Q(s_k), PSD by construction
    std::vector<Matrix> accumulated;  // trapezoid prefix integrals

    std::size_t index_of_time(double t) const;
    double covariance(double t, std::size_t a, std::size_t b) const;
};

GaussianMartingaleModel build_martingale_model(const MomentTraces& traces,
                                               const DataDistribution& dist, double alpha);

// Convenience for the quadratic-variation match: the accumulated variance of
// a single registered field, alpha^2 int_0^t sum_m p_m (R_m[f]-Rbar[f])^2 ds.
double martingale_variance_limit(const MomentTraces& traces, const DataDistribution& dist,
                                 double alpha, double t, std::size_t field_index);

// ---------------------------------------------------------------------------
// Galerkin closure of the limit SPDE
// ---------------------------------------------------------------------------

struct GalerkinOptions {
    int quad_panels = 24;      // composite Gauss-Legendre panels per axis
    int quad_nodes = 8;        // nodes per panel
    bool apply_bump = true;    // multiply drift integrands by the bump
    double psd_tol = 1e-10;    // eigenvalue clamp window for noise factors
    double idempotence_tol = 1e-6;
};

struct GalerkinSystem {
    SobolevDomain dom;
    BumpFunction bump;
    double alpha = 0.0;
    std::vector<SineMode> modes;  // L2(Theta)-normalized
    std::vector<double> times;
    std::vector<Matrix> drift;  // G(s_k)
    GaussianMartingaleModel noise;
    Matrix sigma0;
    std::vector<double> projection_residual;  // per mode, relative, mid-grid
    bool quadrature_warning = false;
    GalerkinOptions options;
};

// Assembles G(s), Q(s), Sigma_0 for the first n_modes sine modes at d = 1
// (D = 2). The reference trajectory must carry traces for exactly these
// modes (integrate with leading_modes(dom, n_modes, 0)) and a snapshot at
// t = 0. The drift integrands are multiplied by the bump so the projected
// functions are compactly supported inside Theta; pairings against measures
// supported in K are unchanged.
GalerkinSystem assemble_galerkin(const SobolevDomain& dom, std::size_t n_modes,
                                 const MeanFieldTrajectory& ref, const DataDistribution& dist,
                                 const Activation& act, double alpha,
                                 const GalerkinOptions& options = {});

struct SpdePaths {
    std::vector<double> times;  // output grid
    std::size_t n_paths = 0;
    std::size_t n_modes = 0;
    std::vector<double> data;  // [path][time][mode]

    std::size_t idx(std::size_t p, std::size_t j, std::size_t a) const {
        return (p * times.size() + j) * n_modes + a;
    }
    // rows [path][mode] at one output time, for covariance estimation
    std::vector<double> rows_at(std::size_t j) const;
};

// Euler-Maruyama on dh = G(s) h ds + dxi(s), xi increments Gaussian with
// covariance Q(s) ds; h(0) ~ N(0, Sigma_0). G and Q are piecewise constant
// within grid cells; dt must divide the grid spacing. Deterministic given
// the seed (per-path derived streams).
SpdePaths simulate_spde(const GalerkinSystem& system, std::size_t n_paths, double dt,
                        std::uint64_t seed, std::span<const double> output_times);

}  // namespace mfsgd
