#include "mfsgd/sgd.hpp"

#include <algorithm>

namespace mfsgd {

namespace detail {

void fill_field_gradients(std::span<const SineMode> fields, const ParticleEnsemble& ens,
                          SgdWorkspace& ws) {
    const std::size_t n = ens.size();
    if (ens.d != 1) {
        fill_field_gradients<SineMode>(fields, ens, ws);
        return;
    }
    double* u = ws.u.data();
    double* s0 = ws.trig.data();
    double* c0 = s0 + n;
    double* s1 = c0 + n;
    double* c1 = s1 + n;
    for (std::size_t q = 0; q < fields.size(); ++q) {
        const SineMode& f = fields[q];
        const double om0 = f.omega(0), om1 = f.omega(1), b = f.box_b;
        for (std::size_t i = 0; i < n; ++i) u[i] = om0 * (ens.c[i] + b);
        sin_batch(u, s0, n);
        cos_batch(u, c0, n);
        for (std::size_t i = 0; i < n; ++i) u[i] = om1 * (ens.w[i] + b);
        sin_batch(u, s1, n);
        cos_batch(u, c1, n);
        double* fdc = ws.fdc.data() + q * n;
        double* fdw = ws.fdw.data() + q * n;
        const double k0 = f.scale * om0, k1 = f.scale * om1;
        for (std::size_t i = 0; i < n; ++i) {
            fdc[i] = k0 * c0[i] * s1[i];
            fdw[i] = k1 * s0[i] * c1[i];
        }
    }
}

}  // namespace detail

void sgd_step_inplace(ParticleEnsemble& ens, const Datum& datum, double alpha,
                      const Activation& act) {
    const std::size_t n = ens.size();
    const int d = ens.d;
    if (datum.x.size() != static_cast<std::size_t>(d)) {
        throw std::invalid_argument("sgd_step: datum dimension mismatch");
    }
    std::vector<double> sig(n), dsig(n);
    CompensatedSum g_acc;
    for (std::size_t i = 0; i < n; ++i) {
        double s, ds;
        act.value_deriv(dot(ens.w_row(i), datum.x), s, ds);
        sig[i] = s;
        dsig[i] = ds;
        g_acc.add(ens.c[i] * s);
    }
    const double g = n > 0 ? g_acc.value() / static_cast<double>(n) : 0.0;
    const double delta = alpha / static_cast<double>(n) * (datum.y - g);
    if (!std::isfinite(delta)) throw std::overflow_error("sgd_step: non-finite update");
    double bound = ens.observed_bound;
    for (std::size_t i = 0; i < n; ++i) {
        const double ci = ens.c[i];
        ens.c[i] = ci + delta * sig[i];
        const double coef = delta * ci * dsig[i];
        auto wi = ens.w_row_mut(i);
        double wn = 0.0;
        for (int j = 0; j < d; ++j) {
            wi[static_cast<std::size_t>(j)] += coef * datum.x[static_cast<std::size_t>(j)];
            wn += wi[static_cast<std::size_t>(j)] * wi[static_cast<std::size_t>(j)];
        }
        bound = std::max(bound, std::abs(ens.c[i]) + std::sqrt(wn));
    }
    ens.observed_bound = bound;
    ens.step += 1;
}

ParticleEnsemble sgd_step(const ParticleEnsemble& ens, const Datum& datum, double alpha,
                          const Activation& act) {
    ParticleEnsemble out = ens;
    sgd_step_inplace(out, datum, alpha, act);
    return out;
}

double quadratic_variation(const MartingaleDiagnostics& diag, std::size_t field_index, double t) {
    const auto& fd = diag.fields.at(field_index);
    const std::int64_t k_max = steps_for(diag.n, t);
    if (k_max < 0 || static_cast<std::size_t>(k_max) > fd.increments.size()) {
        throw std::out_of_range("quadratic_variation: time beyond recorded horizon");
    }
    CompensatedSum acc;
    for (std::int64_t k = 0; k < k_max; ++k) {
        const double inc = fd.increments[static_cast<std::size_t>(k)];
        acc.add(inc * inc);
    }
    return static_cast<double>(diag.n) * acc.value();
}

double v_remainder_at(const MartingaleDiagnostics& diag, std::size_t field_index, double t) {
    const auto& fd = diag.fields.at(field_index);
    const std::int64_t k = steps_for(diag.n, t);
    const double theta = t - static_cast<double>(k) / static_cast<double>(diag.n);
    if (theta <= 0.0) return 0.0;
    if (k < 0 || static_cast<std::size_t>(k) >= fd.drift_integrands.size()) {
        throw std::out_of_range("v_remainder_at: time beyond recorded horizon");
    }
    return -theta * fd.drift_integrands[static_cast<std::size_t>(k)];
}

RemainderTraces remainder_traces(const MartingaleDiagnostics& diag, std::size_t field_index) {
    const auto& fd = diag.fields.at(field_index);
    RemainderTraces out;
    double sup = 0.0;
    for (double v : fd.drift_integrands) sup = std::max(sup, std::abs(v));
    out.v_sup = sup / static_cast<double>(diag.n);
    out.r1_sup = fd.g_abs_sum / std::pow(static_cast<double>(diag.n), 1.5);
    return out;
}

const ParticleEnsemble& SgdTrajectory::snapshot_at(double t) const {
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (std::abs(grid[j] - t) <= 1e-12) return snapshots[j];
    }
    throw std::out_of_range("snapshot_at: time not on the trajectory grid");
}

SgdTrajectory run_sgd(const RunConfig& config, const DataDistribution& dist, const Activation& act,
                      std::span<const double> grid) {
    return run_sgd_diag<ScalarField>(config, dist, act, grid, {}, nullptr);
}

double dataset_loss(const ParticleEnsemble& ens, const DataDistribution& dist,
                    const Activation& act) {
    double loss = 0.0;
    for (std::size_t m = 0; m < dist.size(); ++m) {
        const double r = dist.y[m] - network_eval(ens, dist.x_row(m), act);
        loss += dist.p[m] * r * r;
    }
    return loss;
}

}  // namespace mfsgd
