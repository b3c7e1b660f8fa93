#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsgd/batch_math.hpp"
#include "mfsgd/core.hpp"
#include "mfsgd/sobolev.hpp"

namespace mfsgd {

// floor(N t) with a guard against representation error in N * t.
inline std::int64_t steps_for(std::size_t n, double t) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(n) * t + 1e-9));
}

// One SGD update from a single datum. Every particle is updated from the
// same pre-step state; g(x_k) is evaluated before anything moves.
void sgd_step_inplace(ParticleEnsemble& ens, const Datum& datum, double alpha,
                      const Activation& act);
ParticleEnsemble sgd_step(const ParticleEnsemble& ens, const Datum& datum, double alpha,
                          const Activation& act);

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

// Per-test-function record of the pre-limit decomposition: centered
// martingale increments <f, M_k^{1}+M_k^{2}>, drift sums, and the remainder
// traces sup|V_t| and sum|G_k|.
struct FieldDiagnostics {
    std::string f_id;
    std::vector<double> increments;        // one entry per executed step
    std::vector<double> drift_integrands;  // alpha sum_m p_m resid_m A_m at state nu_k
    double martingale_sum = 0.0;           // <f, M^N_t> at the end of the run
    double drift1_sum = 0.0;               // sum_k D^{1,N}_k
    double drift2_sum = 0.0;               // sum_k D^{2,N}_k
    double g_abs_sum = 0.0;                // sum_k |G_k^N|
};

struct MartingaleDiagnostics {
    std::size_t n = 0;  // ensemble width used for scalings
    std::vector<FieldDiagnostics> fields;
};

// N * sum_{k < floor(N t)} increment_k^2: the quadratic variation of
// sqrt(N) <f, M^N> up to scaled time t.
double quadratic_variation(const MartingaleDiagnostics& diag, std::size_t field_index, double t);

// V_t^N from its defining integral over [floor(Nt)/N, t]: the measure is
// constant between jumps, so the integral is exactly
// -(t - floor(Nt)/N) * drift_integrand(nu_{floor(Nt)}). Zero at step
// boundaries.
double v_remainder_at(const MartingaleDiagnostics& diag, std::size_t field_index, double t);

struct RemainderTraces {
    double v_sup = 0.0;   // sup_t |V_t^N|, attained at pre-jump left limits
    double r1_sup = 0.0;  // N^{-3/2} sum_k |G_k^N|
};
RemainderTraces remainder_traces(const MartingaleDiagnostics& diag, std::size_t field_index);

// ---------------------------------------------------------------------------
// trajectory
// ---------------------------------------------------------------------------

struct SgdTrajectory {
    RunConfig config;
    std::vector<double> grid;                 // requested scaled times
    std::vector<ParticleEnsemble> snapshots;  // state after exactly floor(N t) steps
    ParticleEnsemble final_state;
    std::int64_t steps_executed = 0;

    const ParticleEnsemble& snapshot_at(double t) const;
};

// Called with (steps completed, state); invoked once at k = 0 and after
// every step. Used for grid-crossing pairings without storing snapshots.
using StateObserver = std::function<void(std::int64_t, const ParticleEnsemble&)>;

namespace detail {

inline std::string field_id_of(const ScalarField& f) { return f.id; }
template <class F>
inline auto field_id_of(const F& f) -> decltype(f.id()) {
    return f.id();
}

inline bool field_has_hessian(const ScalarField& f) { return f.has_hessian(); }
template <class F>
inline bool field_has_hessian(const F&) {
    return true;
}

// Workspace reused across steps; sized once per run.
struct SgdWorkspace {
    std::vector<double> u;     // scalar-argument buffer for batched libm calls
    std::vector<double> sig;   // sigma(w_i . x_m), column per datum [m * n + i]
    std::vector<double> dsig;  // sigma'(w_i . x_m), same layout
    std::vector<double> fdc;   // per-field gradient in c, column per field
    std::vector<double> fdw;   // per-field gradient in w, [q][i][j]
    std::vector<double> dc;    // per-step particle increments (diag only)
    std::vector<double> dw;
    std::vector<double> hess_dcw, hess_dww;  // scratch for hessian calls
    std::vector<double> trig;                // sine-mode gradient scratch, 4n
};

// Generic per-particle gradient fill into the field columns.
template <class FieldT>
void fill_field_gradients(std::span<const FieldT> fields, const ParticleEnsemble& ens,
                          SgdWorkspace& ws) {
    const std::size_t n = ens.size();
    const auto d = static_cast<std::size_t>(ens.d);
    for (std::size_t q = 0; q < fields.size(); ++q) {
        double* fdc = ws.fdc.data() + q * n;
        double* fdw = ws.fdw.data() + q * n * d;
        for (std::size_t i = 0; i < n; ++i) {
            fields[q].gradient(ens.c[i], ens.w_row(i), fdc[i], {fdw + i * d, d});
        }
    }
}

// Sine modes at d = 1: batched sin/cos over the two axes.
void fill_field_gradients(std::span<const SineMode> fields, const ParticleEnsemble& ens,
                          SgdWorkspace& ws);

}  // namespace detail

// Core loop. `fields` enables the decomposition diagnostics; observers see
// every state. Throws std::overflow_error when an update turns non-finite.
template <class FieldT>
SgdTrajectory run_sgd_diag(const RunConfig& config, const DataDistribution& dist,
                           const Activation& act, std::span<const double> grid,
                           std::span<const FieldT> fields, MartingaleDiagnostics* diag,
                           const StateObserver& observer = {});

// Plain simulation: floor(N T) steps, snapshots at floor(N t) for each grid
// point, deterministic given config.seed.
SgdTrajectory run_sgd(const RunConfig& config, const DataDistribution& dist, const Activation& act,
                      std::span<const double> grid);

// The centered per-step term <f, M^{1,N}_k + M^{2,N}_k> for one datum from a
// fixed state; the pi-weighted average over all outcomes is zero by
// construction.
template <class FieldT>
double martingale_increment(const ParticleEnsemble& ens, const Datum& datum, const FieldT& f,
                            double alpha, const DataDistribution& dist, const Activation& act);

// sum_m p_m (y_m - g(x_m))^2; the quantity the mean-field flow descends.
double dataset_loss(const ParticleEnsemble& ens, const DataDistribution& dist,
                    const Activation& act);

// ---------------------------------------------------------------------------
// template implementations
// ---------------------------------------------------------------------------

template <class FieldT>
double martingale_increment(const ParticleEnsemble& ens, const Datum& datum, const FieldT& f,
                            double alpha, const DataDistribution& dist, const Activation& act) {
    const std::size_t n = ens.size();
    const std::size_t md = dist.size();
    const int d = ens.d;
    // residuals and gradient pairings per datum
    std::vector<CompensatedSum> g(md);
    std::vector<CompensatedSum> a_pair(md);
    std::vector<double> dwbuf(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const double ci = ens.c[i];
        const auto wi = ens.w_row(i);
        double fdc;
        f.gradient(ci, wi, fdc, dwbuf);
        for (std::size_t m = 0; m < md; ++m) {
            const auto xm = dist.x_row(m);
            double s, ds;
            act.value_deriv(dot(wi, xm), s, ds);
            g[m].add(ci * s);
            a_pair[m].add(s * fdc + ci * ds * dot(xm, dwbuf));
        }
    }
    std::vector<double> resid(md), a_val(md);
    for (std::size_t m = 0; m < md; ++m) {
        resid[m] = dist.y[m] - g[m].value() / static_cast<double>(n);
        a_val[m] = a_pair[m].value() / static_cast<double>(n);
    }
    double mean_term = 0.0;
    for (std::size_t m = 0; m < md; ++m) mean_term += dist.p[m] * resid[m] * a_val[m];
    const double realized = resid[datum.index] * a_val[datum.index];
    return alpha / static_cast<double>(n) * (realized - mean_term);
}

template <class FieldT>
SgdTrajectory run_sgd_diag(const RunConfig& config, const DataDistribution& dist,
                           const Activation& act, std::span<const double> grid,
                           std::span<const FieldT> fields, MartingaleDiagnostics* diag,
                           const StateObserver& observer) {
    config.validate();
    if (config.d != dist.d) throw std::invalid_argument("run_sgd: config/dataset dimension mismatch");
    for (double t : grid) {
        if (t < 0.0 || t > config.horizon + 1e-12) {
            throw std::invalid_argument("run_sgd: grid point outside [0, T]");
        }
    }

    const std::size_t n = config.n;
    const int d = config.d;
    const std::size_t md = dist.size();
    const std::int64_t total_steps = steps_for(n, config.horizon);
    const double alpha = config.alpha;
    const bool with_diag = diag != nullptr && !fields.empty();

    Rng init_rng(derive_key(config.seed, {tag64("init")}));
    Rng data_rng(derive_key(config.seed, {tag64("data")}));

    SgdTrajectory traj;
    traj.config = config;
    traj.grid.assign(grid.begin(), grid.end());

    ParticleEnsemble ens = draw_initial_ensemble(n, d, config.init, init_rng);

    if (with_diag) {
        diag->n = n;
        diag->fields.assign(fields.size(), {});
        for (std::size_t q = 0; q < fields.size(); ++q) {
            diag->fields[q].f_id = detail::field_id_of(fields[q]);
            diag->fields[q].increments.reserve(static_cast<std::size_t>(total_steps));
            diag->fields[q].drift_integrands.reserve(static_cast<std::size_t>(total_steps));
        }
    }

    // snapshot targets sorted by step count, stable against duplicates
    std::vector<std::pair<std::int64_t, std::size_t>> targets;
    for (std::size_t j = 0; j < traj.grid.size(); ++j) {
        targets.emplace_back(steps_for(n, traj.grid[j]), j);
    }
    std::sort(targets.begin(), targets.end());
    traj.snapshots.resize(traj.grid.size());
    std::size_t next_target = 0;
    auto take_snapshots = [&](std::int64_t k) {
        while (next_target < targets.size() && targets[next_target].first == k) {
            ParticleEnsemble snap = ens;
            snap.time = traj.grid[targets[next_target].second];
            traj.snapshots[targets[next_target].second] = std::move(snap);
            ++next_target;
        }
    };
    take_snapshots(0);
    if (observer) observer(0, ens);

    const std::size_t nf = fields.size();
    const bool tanh_kind = act.kind == ActivationKind::Tanh;
    detail::SgdWorkspace ws;
    ws.u.resize(n);
    ws.sig.resize(n * md);   // column per datum: sig[m * n + i]
    ws.dsig.resize(n * md);
    if (with_diag) {
        ws.fdc.resize(n * nf);  // column per field
        ws.fdw.resize(n * nf * static_cast<std::size_t>(d));
        ws.dc.resize(n);
        ws.dw.resize(n * static_cast<std::size_t>(d));
        ws.hess_dcw.resize(static_cast<std::size_t>(d));
        ws.hess_dww.resize(static_cast<std::size_t>(d) * static_cast<std::size_t>(d));
        ws.trig.resize(4 * n);
    }
    std::vector<double> resid(md), a1(md * nf), a2(md * nf), dwbuf(static_cast<std::size_t>(d));

    const double inv_n = 1.0 / static_cast<double>(n);

    // fills sigma / sigma' columns for datum m from the current state
    auto fill_sigma = [&](std::size_t m) {
        const auto xm = dist.x_row(m);
        double* u = ws.u.data();
        if (d == 1) {
            const double x0 = xm[0];
            const double* w = ens.w.data();
            for (std::size_t i = 0; i < n; ++i) u[i] = w[i] * x0;
        } else {
            for (std::size_t i = 0; i < n; ++i) u[i] = dot(ens.w_row(i), xm);
        }
        double* s = ws.sig.data() + m * n;
        double* ds = ws.dsig.data() + m * n;
        if (tanh_kind) {
            tanh_batch(u, s, n);
            for (std::size_t i = 0; i < n; ++i) ds[i] = 1.0 - s[i] * s[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) act.value_deriv(u[i], s[i], ds[i]);
        }
    };

    auto residual_of = [&](std::size_t m) {
        const double* s = ws.sig.data() + m * n;
        const double* c = ens.c.data();
        const double g =
            block_compensated_sum(n, [&](std::size_t i) { return c[i] * s[i]; }) * inv_n;
        return dist.y[m] - g;
    };

    // particle update from datum mk; records increments when requested
    auto apply_update = [&](std::size_t mk, double delta, bool record_deltas) {
        const auto xk = dist.x_row(mk);
        const double* s = ws.sig.data() + mk * n;
        const double* dsg = ws.dsig.data() + mk * n;
        double bound = ens.observed_bound;
        if (d == 1) {
            const double x0 = xk[0];
            double* c = ens.c.data();
            double* w = ens.w.data();
            if (record_deltas) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double ci = c[i];
                    const double dci = delta * s[i];
                    const double dwi = delta * ci * dsg[i] * x0;
                    c[i] = ci + dci;
                    w[i] += dwi;
                    ws.dc[i] = dci;
                    ws.dw[i] = dwi;
                    const double bi = std::abs(c[i]) + std::abs(w[i]);
                    if (bi > bound) bound = bi;
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    const double ci = c[i];
                    c[i] = ci + delta * s[i];
                    w[i] += delta * ci * dsg[i] * x0;
                    const double bi = std::abs(c[i]) + std::abs(w[i]);
                    if (bi > bound) bound = bi;
                }
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const double ci = ens.c[i];
                const double dci = delta * s[i];
                const double coef = delta * ci * dsg[i];
                ens.c[i] = ci + dci;
                if (record_deltas) ws.dc[i] = dci;
                auto wi = ens.w_row_mut(i);
                double wn = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dwj = coef * xk[static_cast<std::size_t>(j)];
                    if (record_deltas) ws.dw[i * static_cast<std::size_t>(d) + j] = dwj;
                    wi[static_cast<std::size_t>(j)] += dwj;
                    wn += wi[static_cast<std::size_t>(j)] * wi[static_cast<std::size_t>(j)];
                }
                const double bi = std::abs(ens.c[i]) + std::sqrt(wn);
                if (bi > bound) bound = bi;
            }
        }
        ens.observed_bound = bound;
    };

    for (std::int64_t k = 0; k < total_steps; ++k) {
        const std::size_t mk = dist.sample_index(data_rng);

        if (!with_diag) {
            fill_sigma(mk);
            const double delta = alpha * inv_n * residual_of(mk);
            if (!std::isfinite(delta)) {
                throw std::overflow_error("run_sgd: non-finite update at step " + std::to_string(k));
            }
            apply_update(mk, delta, false);
        } else {
            for (std::size_t m = 0; m < md; ++m) {
                fill_sigma(m);
                resid[m] = residual_of(m);
            }
            detail::fill_field_gradients(fields, ens, ws);
            // gradient pairings A1, A2 per (field, datum)
            for (std::size_t q = 0; q < nf; ++q) {
                const double* fdc = ws.fdc.data() + q * n;
                const double* fdw = ws.fdw.data() + q * n * static_cast<std::size_t>(d);
                for (std::size_t m = 0; m < md; ++m) {
                    const double* s = ws.sig.data() + m * n;
                    const double* dsg = ws.dsig.data() + m * n;
                    const double* c = ens.c.data();
                    a1[q * md + m] = block_compensated_sum(n, [&](std::size_t i) {
                                         return s[i] * fdc[i];
                                     }) * inv_n;
                    if (d == 1) {
                        const double x0 = dist.x_row(m)[0];
                        a2[q * md + m] = block_compensated_sum(n, [&](std::size_t i) {
                                             return c[i] * dsg[i] * x0 * fdw[i];
                                         }) * inv_n;
                    } else {
                        const auto xm = dist.x_row(m);
                        a2[q * md + m] = block_compensated_sum(n, [&](std::size_t i) {
                                             double xv = 0.0;
                                             for (int j = 0; j < d; ++j) {
                                                 xv += xm[static_cast<std::size_t>(j)] *
                                                       fdw[i * static_cast<std::size_t>(d) + j];
                                             }
                                             return c[i] * dsg[i] * xv;
                                         }) * inv_n;
                    }
                }
                double mean1 = 0.0, mean2 = 0.0;
                for (std::size_t m = 0; m < md; ++m) {
                    mean1 += dist.p[m] * resid[m] * a1[q * md + m];
                    mean2 += dist.p[m] * resid[m] * a2[q * md + m];
                }
                const double mean_term = mean1 + mean2;
                auto& fd = diag->fields[q];
                // same product structure as the mean accumulation, so a
                // degenerate one-point law cancels exactly
                const double realized =
                    resid[mk] * a1[q * md + mk] + resid[mk] * a2[q * md + mk];
                const double inc = alpha * inv_n * (realized - mean_term);
                fd.increments.push_back(inc);
                fd.drift_integrands.push_back(alpha * mean_term);
                fd.martingale_sum += inc;
                fd.drift1_sum += alpha * inv_n * mean1;
                fd.drift2_sum += alpha * inv_n * mean2;
            }

            const double delta = alpha * inv_n * resid[mk];
            if (!std::isfinite(delta)) {
                throw std::overflow_error("run_sgd: non-finite update at step " + std::to_string(k));
            }
            apply_update(mk, delta, true);

            // G_k^N: second-order Taylor remainder, evaluated at the
            // post-step point (an upper-bound surrogate for the mean-value
            // point on the segment).
            for (std::size_t q = 0; q < nf; ++q) {
                if (!detail::field_has_hessian(fields[q])) continue;
                CompensatedSum gk;
                for (std::size_t i = 0; i < n; ++i) {
                    double fcc;
                    fields[q].hessian(ens.c[i], ens.w_row(i), fcc, ws.hess_dcw, ws.hess_dww);
                    const double dci = ws.dc[i];
                    double cross = 0.0, quad = 0.0;
                    const double* dwi = ws.dw.data() + i * static_cast<std::size_t>(d);
                    for (int j = 0; j < d; ++j) {
                        cross += ws.hess_dcw[static_cast<std::size_t>(j)] * dwi[j];
                        for (int l = 0; l < d; ++l) {
                            quad += dwi[j] * ws.hess_dww[static_cast<std::size_t>(j * d + l)] * dwi[l];
                        }
                    }
                    gk.add(0.5 * fcc * dci * dci + dci * cross + 0.5 * quad);
                }
                const double g_k = static_cast<double>(n) * gk.value();
                diag->fields[q].g_abs_sum += std::abs(g_k);
            }
        }

        ens.step = k + 1;
        ens.time = static_cast<double>(k + 1) * inv_n;
        take_snapshots(k + 1);
        if (observer) observer(k + 1, ens);
    }

    traj.steps_executed = total_steps;
    traj.final_state = std::move(ens);
    return traj;
}

}  // namespace mfsgd
