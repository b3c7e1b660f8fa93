#include "mfsgd/fluctuation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mfsgd {

void require_coupling(const SgdTrajectory& sgd, const MeanFieldTrajectory& coupled) {
    if (coupled.m_particles != sgd.config.n) {
        throw std::invalid_argument("coupling violated: tilde system width differs from N");
    }
    const ParticleEnsemble& a = sgd.snapshot_at(0.0);
    const ParticleEnsemble& b = coupled.snapshot_at(0.0);
    if (a.c != b.c || a.w != b.w) {
        throw std::invalid_argument("coupling violated: initial particles differ");
    }
}

std::size_t FluctuationSamples::time_index(double t) const {
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (std::abs(times[j] - t) <= 1e-12) return j;
    }
    throw std::out_of_range("fluctuation samples: time not on the grid");
}

std::vector<double> FluctuationSamples::eta_column(double t, std::size_t f) const {
    const std::size_t j = time_index(t);
    std::vector<double> col(replicas);
    for (std::size_t r = 0; r < replicas; ++r) col[r] = eta[idx(r, j, f)];
    return col;
}

double FluctuationSamples::decomposition_defect() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < eta.size(); ++i) {
        worst = std::max(worst, std::abs(eta[i] - (xi[i] + z[i])));
    }
    return worst;
}

double kolmogorov_q(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 128; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

static double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

GaussianityResult gaussianity_test(std::span<const double> samples, double significance) {
    const std::size_t n = samples.size();
    if (n < 50) throw std::invalid_argument("gaussianity_test: need at least 50 samples");

    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
        throw std::domain_error("gaussianity_test: degenerate samples (zero variance)");
    }

    std::vector<double> zs(n);
    for (std::size_t i = 0; i < n; ++i) zs[i] = (samples[i] - mean) / sd;
    std::sort(zs.begin(), zs.end());

    double d_stat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double phi = normal_cdf(zs[i]);
        const double hi = static_cast<double>(i + 1) / static_cast<double>(n) - phi;
        const double lo = phi - static_cast<double>(i) / static_cast<double>(n);
        d_stat = std::max({d_stat, hi, lo});
    }

    const double sq = std::sqrt(static_cast<double>(n));
    const double lambda = (sq + 0.12 + 0.11 / sq) * d_stat;
    GaussianityResult res;
    res.statistic = d_stat;
    res.p_value = kolmogorov_q(lambda);
    res.reject = res.p_value < significance;
    return res;
}

RateFit rate_fit(std::span<const double> n_values, std::span<const double> errors) {
    if (n_values.size() != errors.size()) throw std::invalid_argument("rate_fit: size mismatch");
    if (n_values.size() < 3) throw std::invalid_argument("rate_fit: need at least 3 widths");
    const std::size_t k = n_values.size();
    std::vector<double> lx(k), ly(k);
    for (std::size_t i = 0; i < k; ++i) {
        if (!(n_values[i] > 0.0)) throw std::invalid_argument("rate_fit: widths must be positive");
        if (!(errors[i] > 0.0)) throw std::invalid_argument("rate_fit: errors must be positive");
        lx[i] = std::log(n_values[i]);
        ly[i] = std::log(errors[i]);
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(k);
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(k);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double e = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ss_res += e * e;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

CovarianceEstimate sample_covariance(const std::vector<double>& rows, std::size_t n_rows,
                                     std::size_t n_cols) {
    if (n_rows < 30) throw std::invalid_argument("covariance: need at least 30 replicas");
    if (rows.size() != n_rows * n_cols) throw std::invalid_argument("covariance: bad layout");

    std::vector<double> mean(n_cols, 0.0);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t q = 0; q < n_cols; ++q) mean[q] += rows[r * n_cols + q];
    }
    for (double& v : mean) v /= static_cast<double>(n_rows);

    // sums of centered products for O(1) leave-one-out updates
    Matrix sab(n_cols, n_cols);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t a = 0; a < n_cols; ++a) {
            const double xa = rows[r * n_cols + a] - mean[a];
            for (std::size_t b = a; b < n_cols; ++b) {
                sab.at(a, b) += xa * (rows[r * n_cols + b] - mean[b]);
            }
        }
    }

    CovarianceEstimate est;
    est.replicas = n_rows;
    est.cov = Matrix(n_cols, n_cols);
    est.se = Matrix(n_cols, n_cols);
    const double R = static_cast<double>(n_rows);
    for (std::size_t a = 0; a < n_cols; ++a) {
        for (std::size_t b = a; b < n_cols; ++b) {
            est.cov.at(a, b) = est.cov.at(b, a) = sab.at(a, b) / (R - 1.0);
        }
    }

    // jackknife: centered moments of the leave-one-out covariance
    for (std::size_t a = 0; a < n_cols; ++a) {
        for (std::size_t b = a; b < n_cols; ++b) {
            double mean_loo = 0.0;
            std::vector<double> loo(n_rows);
            for (std::size_t r = 0; r < n_rows; ++r) {
                const double xa = rows[r * n_cols + a] - mean[a];
                const double xb = rows[r * n_cols + b] - mean[b];
                // centered product sum without replica r, re-centered around
                // the leave-one-out mean
                const double s = sab.at(a, b) - xa * xb - xa * xb / (R - 1.0);
                loo[r] = s / (R - 2.0);
                mean_loo += loo[r];
            }
            mean_loo /= R;
            double var = 0.0;
            for (std::size_t r = 0; r < n_rows; ++r) {
                var += (loo[r] - mean_loo) * (loo[r] - mean_loo);
            }
            const double se = std::sqrt((R - 1.0) / R * var);
            est.se.at(a, b) = est.se.at(b, a) = se;
        }
    }
    return est;
}

CovarianceEstimate covariance_estimate(const FluctuationSamples& samples, double t,
                                       std::span<const std::size_t> field_indices) {
    const std::size_t j = samples.time_index(t);
    const std::size_t q = field_indices.size();
    std::vector<double> rows(samples.replicas * q);
    for (std::size_t r = 0; r < samples.replicas; ++r) {
        for (std::size_t f = 0; f < q; ++f) {
            rows[r * q + f] = samples.eta[samples.idx(r, j, field_indices[f])];
        }
    }
    return sample_covariance(rows, samples.replicas, q);
}

GammaAccumulator::GammaAccumulator(const DataDistribution& dist, const Activation& act,
                                   double alpha, std::size_t n, std::vector<double> grid,
                                   const MomentTraces& traces, std::size_t trace_field,
                                   SineMode field)
    : dist_(dist), act_(act), alpha_(alpha), n_(n), grid_(std::move(grid)),
      field_(std::move(field)) {
    const std::size_t md = dist_.size();
    ref_p_.resize(grid_.size() * md);
    ref_q1_.resize(grid_.size() * md);
    ref_q2_.resize(grid_.size() * md);
    for (std::size_t j = 0; j < grid_.size(); ++j) {
        const std::size_t k = traces.index_of_time(grid_[j]);
        for (std::size_t m = 0; m < md; ++m) {
            ref_p_[j * md + m] = dist_.y[m] - traces.resid_at(k, m);
            ref_q1_[j * md + m] = traces.s1_at(k, trace_field, m);
            ref_q2_[j * md + m] = traces.s2_at(k, trace_field, m);
        }
        target_steps_.push_back(steps_for(n_, grid_[j]));
    }
    integrand1_.assign(grid_.size(), 0.0);
    integrand2_.assign(grid_.size(), 0.0);
}

void GammaAccumulator::feed(std::size_t j, const ParticleEnsemble& ens) {
    const std::size_t md = dist_.size();
    const std::size_t n = ens.size();
    const int d = ens.d;
    std::vector<CompensatedSum> p(md), q1(md), q2(md);
    std::vector<double> dwbuf(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const double ci = ens.c[i];
        const auto wi = ens.w_row(i);
        double fdc;
        field_.gradient(ci, wi, fdc, dwbuf);
        for (std::size_t m = 0; m < md; ++m) {
            const auto xm = dist_.x_row(m);
            double s, ds;
            act_.value_deriv(dot(wi, xm), s, ds);
            p[m].add(ci * s);
            q1[m].add(s * fdc);
            q2[m].add(ci * ds * dot(xm, dwbuf));
        }
    }
    double i1 = 0.0, i2 = 0.0;
    for (std::size_t m = 0; m < md; ++m) {
        const double dp = p[m].value() / static_cast<double>(n) - ref_p_[j * md + m];
        const double dq1 = q1[m].value() / static_cast<double>(n) - ref_q1_[j * md + m];
        const double dq2 = q2[m].value() / static_cast<double>(n) - ref_q2_[j * md + m];
        i1 += dist_.p[m] * dp * dq1;
        i2 += dist_.p[m] * dp * dq2;
    }
    // <., eta> = sqrt(N) * delta, so the 1/sqrt(N) prefactor nets sqrt(N)
    integrand1_[j] = -alpha_ * std::sqrt(static_cast<double>(n_)) * i1;
    integrand2_[j] = -alpha_ * std::sqrt(static_cast<double>(n_)) * i2;
}

StateObserver GammaAccumulator::observer() {
    return [this](std::int64_t k, const ParticleEnsemble& ens) {
        while (next_ < target_steps_.size() && target_steps_[next_] == k) {
            feed(next_, ens);
            ++next_;
        }
    };
}

static double trapezoid(const std::vector<double>& grid, const std::vector<double>& values) {
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
        acc += 0.5 * (grid[j + 1] - grid[j]) * (values[j] + values[j + 1]);
    }
    return acc;
}

double GammaAccumulator::gamma1_at_end() const { return trapezoid(grid_, integrand1_); }
double GammaAccumulator::gamma2_at_end() const { return trapezoid(grid_, integrand2_); }

}  // namespace mfsgd
