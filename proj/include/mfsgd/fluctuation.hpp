#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfsgd/core.hpp"
#include "mfsgd/linalg.hpp"
#include "mfsgd/meanfield.hpp"
#include "mfsgd/sgd.hpp"

namespace mfsgd {

// ---------------------------------------------------------------------------
// pairings of the fluctuation process
// ---------------------------------------------------------------------------

// <f, eta^N_t> = sqrt(N) (<f, mu^N_t> - <f, mu_bar_t>), the mean-field
// pairing taken from the large independent reference ensemble.
template <class F>
double eta_pairing(const SgdTrajectory& sgd, const MeanFieldTrajectory& ref, const F& f, double t) {
    const ParticleEnsemble& mu_n = sgd.snapshot_at(t);
    const double a = pair_measure(mu_n, [&](double c, std::span<const double> w) { return f.value(c, w); });
    const double b = meanfield_pairing(ref, f, t);
    return std::sqrt(static_cast<double>(sgd.config.n)) * (a - b);
}

// Checks that the coupled deterministic run shares the SGD run's initial
// particles (bitwise) and width. Throws std::invalid_argument.
void require_coupling(const SgdTrajectory& sgd, const MeanFieldTrajectory& coupled);

struct XiZ {
    double xi = 0.0;  // sqrt(N) (<f, mu^N_t> - <f, mu~^N_t>)
    double z = 0.0;   // sqrt(N) (<f, mu~^N_t> - <f, mu_bar_t>)
};

// Decomposition eta = Xi + Z; xi + z equals eta_pairing exactly (same
// pairings, same arithmetic).
template <class F>
XiZ xi_z_split(const SgdTrajectory& sgd, const MeanFieldTrajectory& coupled,
               const MeanFieldTrajectory& ref, const F& f, double t) {
    require_coupling(sgd, coupled);
    const double sqn = std::sqrt(static_cast<double>(sgd.config.n));
    const auto fv = [&](double c, std::span<const double> w) { return f.value(c, w); };
    const double a = pair_measure(sgd.snapshot_at(t), fv);
    const double b = pair_measure(coupled.snapshot_at(t), fv);
    const double r = meanfield_pairing(ref, f, t);
    return {sqn * (a - b), sqn * (b - r)};
}

// ---------------------------------------------------------------------------
// cross-replica samples
// ---------------------------------------------------------------------------

// s[replica][time][field] matrices of <f, eta^N_t> and the parallel Xi / Z
// components; the martingale matrix is filled only when collected.
struct FluctuationSamples {
    std::vector<std::string> f_ids;
    std::vector<double> times;
    std::size_t replicas = 0;
    std::size_t n = 0;  // ensemble width
    std::vector<double> eta, xi, z;
    std::vector<double> martingale;  // optional; empty when not collected

    std::size_t idx(std::size_t r, std::size_t j, std::size_t f) const {
        return (r * times.size() + j) * f_ids.size() + f;
    }
    double eta_at(std::size_t r, std::size_t j, std::size_t f) const { return eta[idx(r, j, f)]; }

    std::size_t time_index(double t) const;  // throws std::out_of_range

    // column of eta samples across replicas at (t, field)
    std::vector<double> eta_column(double t, std::size_t f) const;

    // max |eta - (xi + z)| over all cells; the decomposition identity
    double decomposition_defect() const;
};

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

struct GaussianityResult {
    double statistic = 0.0;
    double p_value = 0.0;
    bool reject = false;
};

// One-sample Kolmogorov-Smirnov test of the standardized samples against the
// standard normal; asymptotic p-value with the Stephens small-sample factor,
// good to two decimals for n >= 50. Degenerate samples (zero variance) throw
// std::domain_error.
GaussianityResult gaussianity_test(std::span<const double> samples, double significance);

// Survival function of the Kolmogorov distribution.
double kolmogorov_q(double lambda);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

// Least-squares fit of log(error) against log(N). Requires >= 3 widths and
// strictly positive errors.
RateFit rate_fit(std::span<const double> n_values, std::span<const double> errors);

struct CovarianceEstimate {
    Matrix cov;  // unbiased sample covariance across replicas
    Matrix se;   // jackknife standard errors, entrywise
    std::size_t replicas = 0;
};

// Covariance of {<f_i, eta^N_t>}_i across replicas at time t for the given
// field subset. Requires >= 30 replicas.
CovarianceEstimate covariance_estimate(const FluctuationSamples& samples, double t,
                                       std::span<const std::size_t> field_indices);

// Plain sample covariance of rows[r][q] data with jackknife SEs (shared by
// the SPDE path statistics).
CovarianceEstimate sample_covariance(const std::vector<double>& rows, std::size_t n_rows,
                                     std::size_t n_cols);

// ---------------------------------------------------------------------------
// Gamma remainders
// ---------------------------------------------------------------------------

// Accumulates the quadratic remainder terms
//   Gamma^1_t = -(alpha/sqrt(N)) int_0^t sum_m p_m <c sigma(w.x_m), eta_s>
//                <sigma(w.x_m) d_c f, eta_s> ds
// (and Gamma^2 with the grad_w pairing) on a uniform time grid, with the
// mean-field side of each eta pairing taken from reference traces.
class GammaAccumulator {
public:
    // trace_field: index of f in the reference traces. The grid must be a
    // subset of the reference step grid.
    GammaAccumulator(const DataDistribution& dist, const Activation& act, double alpha,
                     std::size_t n, std::vector<double> grid, const MomentTraces& traces,
                     std::size_t trace_field, SineMode field);

    // Feed from the SGD run: called with (steps completed, state).
    StateObserver observer();

    double gamma1_at_end() const;
    double gamma2_at_end() const;

private:
    void feed(std::size_t grid_index, const ParticleEnsemble& ens);

    const DataDistribution& dist_;
    const Activation& act_;
    double alpha_;
    std::size_t n_;
    std::vector<double> grid_;
    std::vector<std::int64_t> target_steps_;
    std::size_t next_ = 0;
    SineMode field_;
    // reference-side values at grid times: [j][m]
    std::vector<double> ref_p_, ref_q1_, ref_q2_;
    // integrands at grid times
    std::vector<double> integrand1_, integrand2_;
};

}  // namespace mfsgd
