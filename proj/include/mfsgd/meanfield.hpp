#pragma once

#include <span>
#include <string>
#include <vector>

#include "mfsgd/core.hpp"
#include "mfsgd/sobolev.hpp"

namespace mfsgd {

// Moment traces recorded on the integrator step grid: data residuals
// y_m - <c sigma(w.x_m), mu_t> and, per registered sine mode f, the two
// gradient pairings
//   S1_{f,m}(t) = <sigma(w.x_m) d_c f, mu_t>,
//   S2_{f,m}(t) = <c sigma'(w.x_m) x_m . grad_w f, mu_t>.
// These are the ingredients of the limit operator R, the martingale
// covariance, the Galerkin drift and the Gamma remainders.
struct MomentTraces {
    std::vector<double> times;  // step grid, size n_steps + 1
    std::size_t n_data = 0;
    std::size_t n_fields = 0;
    std::vector<std::string> field_ids;
    std::vector<double> resid;  // [k][m]
    std::vector<double> s1;     // [k][f][m]
    std::vector<double> s2;     // [k][f][m]

    double resid_at(std::size_t k, std::size_t m) const { return resid[k * n_data + m]; }
    double s1_at(std::size_t k, std::size_t f, std::size_t m) const {
        return s1[(k * n_fields + f) * n_data + m];
    }
    double s2_at(std::size_t k, std::size_t f, std::size_t m) const {
        return s2[(k * n_fields + f) * n_data + m];
    }
    std::size_t index_of_time(double t) const;  // throws std::out_of_range off-grid
};

struct MeanFieldTrajectory {
    std::size_t m_particles = 0;
    int d = 0;
    double horizon = 0.0;
    double h = 0.0;  // effective step, T / n_steps
    double alpha = 0.0;
    std::string scheme = "rk4";
    double observed_bound = 0.0;  // running max of |c_i| + ||w_i|| over the run
    std::vector<double> grid;                 // snapshot times
    std::vector<ParticleEnsemble> snapshots;  // states at grid times
    MomentTraces traces;                      // empty unless requested

    const ParticleEnsemble& snapshot_at(double t) const;
};

// Right-hand side of the deterministic particle system, with the residual
// taken against the ensemble's own empirical measure (self-consistent
// McKean-Vlasov approximation; the exact law is recovered as M -> infinity):
//   dc_i/dt = alpha sum_m p_m (y_m - <c sigma(w.x_m), mu>) sigma(w_i.x_m)
//   dw_i/dt = alpha sum_m p_m (y_m - <c sigma(w.x_m), mu>) c_i sigma'(w_i.x_m) x_m
void meanfield_rhs(const ParticleEnsemble& ens, const DataDistribution& dist, double alpha,
                   const Activation& act, std::span<double> dc, std::span<double> dw);

// Classical fixed-step RK4 on [0, T]. h is normalized to T / round(T/h) so
// the grid always lands on T exactly; snapshot times must align with the
// step grid. Deterministic. Throws std::overflow_error when the state turns
// non-finite.
MeanFieldTrajectory integrate_meanfield(const ParticleEnsemble& init, const DataDistribution& dist,
                                        double alpha, const Activation& act, double horizon,
                                        double h, std::span<const double> snapshot_grid,
                                        const std::vector<SineMode>& trace_modes = {},
                                        bool record_traces = false);

// <f, mu_t> from the stored snapshot at t; off-grid times are refused.
template <class F>
double meanfield_pairing(const MeanFieldTrajectory& traj, const F& f, double t) {
    const ParticleEnsemble& snap = traj.snapshot_at(t);
    return pair_measure(snap, [&](double c, std::span<const double> w) { return f.value(c, w); });
}

}  // namespace mfsgd
