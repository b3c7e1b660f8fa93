#include "mfsgd/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfsgd/batch_math.hpp"

namespace mfsgd {

std::size_t MomentTraces::index_of_time(double t) const {
    if (times.size() >= 2) {
        const double h = times[1] - times[0];
        const double kf = t / h;
        const auto k = static_cast<std::size_t>(std::llround(kf));
        if (k < times.size() && std::abs(times[k] - t) <= 1e-9 * std::max(1.0, times.back())) {
            return k;
        }
    } else if (!times.empty() && std::abs(times[0] - t) <= 1e-12) {
        return 0;
    }
    throw std::out_of_range("moment traces: time not on the step grid");
}

const ParticleEnsemble& MeanFieldTrajectory::snapshot_at(double t) const {
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (std::abs(grid[j] - t) <= 1e-12 * std::max(1.0, horizon)) return snapshots[j];
    }
    throw std::out_of_range("meanfield snapshot: time not on the snapshot grid");
}

namespace {

struct RhsScratch {
    std::vector<double> u, sig, dsig;
};

// Fills sigma / sigma' columns [m * n + i] for every datum at the given state.
void fill_sigma_columns(const ParticleEnsemble& ens, const DataDistribution& dist,
                        const Activation& act, RhsScratch& scratch) {
    const std::size_t n = ens.size();
    const std::size_t md = dist.size();
    const int d = ens.d;
    const bool tanh_kind = act.kind == ActivationKind::Tanh;
    scratch.u.resize(n);
    scratch.sig.resize(n * md);
    scratch.dsig.resize(n * md);
    double* u = scratch.u.data();
    for (std::size_t m = 0; m < md; ++m) {
        const auto xm = dist.x_row(m);
        if (d == 1) {
            const double x0 = xm[0];
            const double* w = ens.w.data();
            for (std::size_t i = 0; i < n; ++i) u[i] = w[i] * x0;
        } else {
            for (std::size_t i = 0; i < n; ++i) u[i] = dot(ens.w_row(i), xm);
        }
        double* s = scratch.sig.data() + m * n;
        double* ds = scratch.dsig.data() + m * n;
        if (tanh_kind) {
            tanh_batch(u, s, n);
            for (std::size_t i = 0; i < n; ++i) ds[i] = 1.0 - s[i] * s[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) act.value_deriv(u[i], s[i], ds[i]);
        }
    }
}

void meanfield_rhs_scratch(const ParticleEnsemble& ens, const DataDistribution& dist, double alpha,
                           const Activation& act, std::span<double> dc, std::span<double> dw,
                           RhsScratch& scratch) {
    const std::size_t n = ens.size();
    const std::size_t md = dist.size();
    const int d = ens.d;
    fill_sigma_columns(ens, dist, act, scratch);

    std::fill(dc.begin(), dc.end(), 0.0);
    std::fill(dw.begin(), dw.end(), 0.0);
    const double* c = ens.c.data();
    for (std::size_t m = 0; m < md; ++m) {
        const double* s = scratch.sig.data() + m * n;
        const double* ds = scratch.dsig.data() + m * n;
        const double g =
            block_compensated_sum(n, [&](std::size_t i) { return c[i] * s[i]; }) /
            static_cast<double>(n);
        const double pr = alpha * dist.p[m] * (dist.y[m] - g);
        const auto xm = dist.x_row(m);
        if (d == 1) {
            const double prx = pr * xm[0];
            for (std::size_t i = 0; i < n; ++i) {
                dc[i] += pr * s[i];
                dw[i] += prx * c[i] * ds[i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                dc[i] += pr * s[i];
                const double coef = pr * c[i] * ds[i];
                for (int j = 0; j < d; ++j) {
                    dw[i * static_cast<std::size_t>(d) + j] +=
                        coef * xm[static_cast<std::size_t>(j)];
                }
            }
        }
    }
}

}  // namespace

void meanfield_rhs(const ParticleEnsemble& ens, const DataDistribution& dist, double alpha,
                   const Activation& act, std::span<double> dc, std::span<double> dw) {
    RhsScratch scratch;
    meanfield_rhs_scratch(ens, dist, alpha, act, dc, dw, scratch);
}

namespace {

// resid + per-mode gradient pairings of the current state, appended to the
// trace arrays. Sine values for all registered modes come from per-axis
// angle-addition recurrences off one sincos per axis.
void record_traces_row(const ParticleEnsemble& ens, const DataDistribution& dist,
                       const Activation& act, const std::vector<SineMode>& modes,
                       MomentTraces& traces, RhsScratch& scratch) {
    const std::size_t n = ens.size();
    const std::size_t md = dist.size();
    const std::size_t nf = modes.size();
    const int d = ens.d;
    const int dim = d + 1;

    int a_max = 1;
    for (const auto& mode : modes) {
        for (int aj : mode.index) a_max = std::max(a_max, aj);
    }
    const double box_b = modes.empty() ? 1.0 : modes[0].box_b;
    const double base = std::numbers::pi / (2.0 * box_b);

    fill_sigma_columns(ens, dist, act, scratch);

    std::vector<CompensatedSum> g(md);
    std::vector<CompensatedSum> acc1(nf * md), acc2(nf * md);
    std::vector<double> sinr(static_cast<std::size_t>(dim) * (a_max + 1));
    std::vector<double> cosr(static_cast<std::size_t>(dim) * (a_max + 1));
    std::vector<double> sg(md), dsg(md);

    for (std::size_t i = 0; i < n; ++i) {
        const double ci = ens.c[i];
        const auto wi = ens.w_row(i);
        for (std::size_t m = 0; m < md; ++m) {
            sg[m] = scratch.sig[m * n + i];
            dsg[m] = scratch.dsig[m * n + i];
            g[m].add(ci * sg[m]);
        }
        if (nf > 0) {
            for (int ax = 0; ax < dim; ++ax) {
                const double z = (ax == 0) ? ci : wi[static_cast<std::size_t>(ax - 1)];
                const double u = base * (z + box_b);
                const double s1 = std::sin(u), c1 = std::cos(u);
                double* srow = sinr.data() + static_cast<std::size_t>(ax) * (a_max + 1);
                double* crow = cosr.data() + static_cast<std::size_t>(ax) * (a_max + 1);
                srow[0] = 0.0;
                crow[0] = 1.0;
                double sk = 0.0, ck = 1.0;
                for (int k = 1; k <= a_max; ++k) {
                    const double sn = sk * c1 + ck * s1;
                    const double cn = ck * c1 - sk * s1;
                    srow[k] = sn;
                    crow[k] = cn;
                    sk = sn;
                    ck = cn;
                }
            }
            for (std::size_t q = 0; q < nf; ++q) {
                const SineMode& mode = modes[q];
                const int a0 = mode.index[0];
                // df/dc: cos on axis 0
                double fdc = mode.scale * mode.omega(0) * cosr[static_cast<std::size_t>(a0)];
                for (int ax = 1; ax < dim; ++ax) {
                    fdc *= sinr[static_cast<std::size_t>(ax) * (a_max + 1) +
                                mode.index[static_cast<std::size_t>(ax)]];
                }
                for (std::size_t m = 0; m < md; ++m) {
                    acc1[q * md + m].add(sg[m] * fdc);
                }
                // df/dw_j: cos on axis j+1
                for (int j = 0; j < d; ++j) {
                    double fdw = mode.scale * mode.omega(j + 1);
                    for (int ax = 0; ax < dim; ++ax) {
                        const int idx = mode.index[static_cast<std::size_t>(ax)];
                        const double* row =
                            (ax == j + 1 ? cosr.data() : sinr.data()) +
                            static_cast<std::size_t>(ax) * (a_max + 1);
                        fdw *= row[idx];
                    }
                    for (std::size_t m = 0; m < md; ++m) {
                        acc2[q * md + m].add(ci * dsg[m] * dist.x_row(m)[static_cast<std::size_t>(j)] *
                                             fdw);
                    }
                }
            }
        }
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t m = 0; m < md; ++m) {
        traces.resid.push_back(dist.y[m] - g[m].value() * inv_n);
    }
    for (std::size_t q = 0; q < nf; ++q) {
        for (std::size_t m = 0; m < md; ++m) traces.s1.push_back(acc1[q * md + m].value() * inv_n);
    }
    for (std::size_t q = 0; q < nf; ++q) {
        for (std::size_t m = 0; m < md; ++m) traces.s2.push_back(acc2[q * md + m].value() * inv_n);
    }
}

}  // namespace

MeanFieldTrajectory integrate_meanfield(const ParticleEnsemble& init, const DataDistribution& dist,
                                        double alpha, const Activation& act, double horizon,
                                        double h, std::span<const double> snapshot_grid,
                                        const std::vector<SineMode>& trace_modes,
                                        bool record_traces) {
    if (!(horizon > 0.0)) throw std::invalid_argument("integrate_meanfield: T must be > 0");
    if (!(h > 0.0)) throw std::invalid_argument("integrate_meanfield: h must be > 0");
    if (init.d != dist.d) throw std::invalid_argument("integrate_meanfield: dimension mismatch");

    const auto n_steps = static_cast<std::size_t>(std::max<long long>(1, std::llround(horizon / h)));
    const double h_eff = horizon / static_cast<double>(n_steps);

    MeanFieldTrajectory traj;
    traj.m_particles = init.size();
    traj.d = init.d;
    traj.horizon = horizon;
    traj.h = h_eff;
    traj.alpha = alpha;
    traj.grid.assign(snapshot_grid.begin(), snapshot_grid.end());
    traj.snapshots.resize(traj.grid.size());

    // map snapshot times to step indices, strictly
    std::vector<std::pair<std::size_t, std::size_t>> targets;
    for (std::size_t j = 0; j < traj.grid.size(); ++j) {
        const double t = traj.grid[j];
        if (t < -1e-12 || t > horizon + 1e-12) {
            throw std::invalid_argument("integrate_meanfield: snapshot time outside [0, T]");
        }
        const auto k = static_cast<std::size_t>(std::llround(t / h_eff));
        if (k > n_steps || std::abs(k * h_eff - t) > 1e-9 * std::max(1.0, horizon)) {
            throw std::invalid_argument("integrate_meanfield: snapshot time not on the step grid");
        }
        targets.emplace_back(k, j);
    }
    std::sort(targets.begin(), targets.end());

    const bool tracing = record_traces || !trace_modes.empty();
    if (tracing) {
        traj.traces.n_data = dist.size();
        traj.traces.n_fields = trace_modes.size();
        for (const auto& m : trace_modes) traj.traces.field_ids.push_back(m.id());
        traj.traces.times.reserve(n_steps + 1);
        traj.traces.resid.reserve((n_steps + 1) * dist.size());
    }

    ParticleEnsemble state = init;
    state.time = 0.0;
    const std::size_t n = state.size();
    const std::size_t wsize = n * static_cast<std::size_t>(state.d);
    std::vector<double> k1c(n), k2c(n), k3c(n), k4c(n);
    std::vector<double> k1w(wsize), k2w(wsize), k3w(wsize), k4w(wsize);
    ParticleEnsemble stage = state;
    RhsScratch scratch;

    std::size_t next_target = 0;
    auto handle_step = [&](std::size_t k) {
        state.time = static_cast<double>(k) * h_eff;
        while (next_target < targets.size() && targets[next_target].first == k) {
            ParticleEnsemble snap = state;
            snap.time = traj.grid[targets[next_target].second];
            traj.snapshots[targets[next_target].second] = std::move(snap);
            ++next_target;
        }
        if (tracing) {
            traj.traces.times.push_back(state.time);
            record_traces_row(state, dist, act, trace_modes, traj.traces, scratch);
        }
    };
    handle_step(0);

    for (std::size_t k = 0; k < n_steps; ++k) {
        meanfield_rhs_scratch(state, dist, alpha, act, k1c, k1w, scratch);
        for (std::size_t i = 0; i < n; ++i) stage.c[i] = state.c[i] + 0.5 * h_eff * k1c[i];
        for (std::size_t i = 0; i < wsize; ++i) stage.w[i] = state.w[i] + 0.5 * h_eff * k1w[i];
        meanfield_rhs_scratch(stage, dist, alpha, act, k2c, k2w, scratch);
        for (std::size_t i = 0; i < n; ++i) stage.c[i] = state.c[i] + 0.5 * h_eff * k2c[i];
        for (std::size_t i = 0; i < wsize; ++i) stage.w[i] = state.w[i] + 0.5 * h_eff * k2w[i];
        meanfield_rhs_scratch(stage, dist, alpha, act, k3c, k3w, scratch);
        for (std::size_t i = 0; i < n; ++i) stage.c[i] = state.c[i] + h_eff * k3c[i];
        for (std::size_t i = 0; i < wsize; ++i) stage.w[i] = state.w[i] + h_eff * k3w[i];
        meanfield_rhs_scratch(stage, dist, alpha, act, k4c, k4w, scratch);
        const double w6 = h_eff / 6.0;
        for (std::size_t i = 0; i < n; ++i) {
            state.c[i] += w6 * (k1c[i] + 2.0 * k2c[i] + 2.0 * k3c[i] + k4c[i]);
        }
        for (std::size_t i = 0; i < wsize; ++i) {
            state.w[i] += w6 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
        }
        if (!std::isfinite(state.c[0])) {
            throw std::overflow_error("integrate_meanfield: non-finite state");
        }
        state.update_observed_bound();
        handle_step(k + 1);
    }

    traj.observed_bound = state.observed_bound;
    return traj;
}

}  // namespace mfsgd
