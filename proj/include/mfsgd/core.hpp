#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfsgd/rng.hpp"

namespace mfsgd {

// ---------------------------------------------------------------------------
// numerics
// ---------------------------------------------------------------------------

// Neumaier compensated accumulator. Ensemble pairings are averages of up to
// 1e6 mixed-sign terms and the fluctuation checks look at O(N^-1/2) signals,
// so plain summation error is not acceptable.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
}

// Compensated accumulation of vectorizable chunk sums: plain summation
// within 4096-element chunks (exactly representable partials at our scales
// keep ~1e-12 relative error at width 10^6), Neumaier across chunks.
template <class F>
double block_compensated_sum(std::size_t n, F&& term) {
    CompensatedSum acc;
    constexpr std::size_t kChunk = 4096;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t end = std::min(n, start + kChunk);
        double partial = 0.0;
        for (std::size_t i = start; i < end; ++i) partial += term(i);
        acc.add(partial);
    }
    return acc.value();
}

// ---------------------------------------------------------------------------
// activation
// ---------------------------------------------------------------------------

enum class ActivationKind { Tanh, Sigmoid, CustomSmooth };

// Smooth bounded activation with declared sup-bounds on sigma, sigma',
// sigma''. The built-ins carry exact bounds; custom activations declare
// theirs and are spot-checked, not proven.
struct Activation {
    ActivationKind kind = ActivationKind::Tanh;
    double bound_value = 1.0;
    double bound_deriv = 1.0;
    double bound_second = 0.7699;
    std::function<double(double)> custom_value;
    std::function<double(double)> custom_deriv;
    std::function<double(double)> custom_second;

    static Activation make_tanh();
    static Activation make_sigmoid();
    static Activation make_custom(std::function<double(double)> value,
                                  std::function<double(double)> deriv,
                                  std::function<double(double)> second,
                                  double bound_value, double bound_deriv, double bound_second);

    double value(double u) const;
    double deriv(double u) const;
    double second(double u) const;

    // Value and first derivative from a single transcendental for the
    // built-in kinds; this is the hot path of every particle loop.
    void value_deriv(double u, double& s, double& ds) const {
        s = 0.0;
        ds = 0.0;
        switch (kind) {
            case ActivationKind::Tanh: {
                s = std::tanh(u);
                ds = 1.0 - s * s;
                return;
            }
            case ActivationKind::Sigmoid: {
                s = 1.0 / (1.0 + std::exp(-u));
                ds = s * (1.0 - s);
                return;
            }
            case ActivationKind::CustomSmooth: {
                s = custom_value(u);
                ds = custom_deriv(u);
                return;
            }
        }
    }
};

Activation activation_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// data distribution
// ---------------------------------------------------------------------------

// Finite weighted dataset {(x_m, y_m, p_m)} on compact support. Restricting
// the data law to finite discrete distributions makes every data integral an
// exact weighted sum.
struct DataDistribution {
    int d = 0;
    std::vector<double> x;    // size() * d, row-major
    std::vector<double> y;    // size()
    std::vector<double> p;    // probability weights
    std::vector<double> cum;  // cumulative weights for inverse-CDF sampling
    double support_bound = 0.0;

    std::size_t size() const { return y.size(); }
    std::span<const double> x_row(std::size_t m) const {
        return {x.data() + m * static_cast<std::size_t>(d), static_cast<std::size_t>(d)};
    }

    // Validates invariants: weights sum to 1 within 1e-12, points within the
    // declared support bound. Throws std::invalid_argument.
    static DataDistribution make(int d, std::vector<double> x_flat, std::vector<double> y,
                                 std::vector<double> p, double support_bound);

    std::size_t sample_index(Rng& rng) const;
};

struct Datum {
    std::span<const double> x;
    double y = 0.0;
    std::size_t index = 0;
};

inline Datum sample_datum(const DataDistribution& dist, Rng& rng) {
    const std::size_t m = dist.sample_index(rng);
    return {dist.x_row(m), dist.y[m], m};
}

inline Datum datum_at(const DataDistribution& dist, std::size_t m) {
    return {dist.x_row(m), dist.y[m], m};
}

// ---------------------------------------------------------------------------
// particle ensemble
// ---------------------------------------------------------------------------

// N particles (c_i, w_i) in R^{1+d}. Serves both as the SGD state at step k
// and as the deterministic coupled-system state at time t.
struct ParticleEnsemble {
    int d = 0;
    std::vector<double> c;
    std::vector<double> w;  // N * d, row-major
    double time = 0.0;
    std::int64_t step = 0;
    double observed_bound = 0.0;  // running max of |c_i| + ||w_i||, never decreased

    std::size_t size() const { return c.size(); }
    std::span<const double> w_row(std::size_t i) const {
        return {w.data() + i * static_cast<std::size_t>(d), static_cast<std::size_t>(d)};
    }
    std::span<double> w_row_mut(std::size_t i) {
        return {w.data() + i * static_cast<std::size_t>(d), static_cast<std::size_t>(d)};
    }

    // Folds the current particle positions into observed_bound.
    void update_observed_bound();
};

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

// Initial law: product of uniforms, c ~ U[c_lo, c_hi], w_j ~ U[w_lo_j, w_hi_j].
// Compactly supported i.i.d. initialization as required.
struct InitLaw {
    double c_lo = -1.0, c_hi = 1.0;
    std::vector<double> w_lo, w_hi;  // size d

    void validate(int d) const;
};

struct RunConfig {
    std::size_t n = 0;        // network width N
    double horizon = 1.0;     // T
    double alpha = 1.0;       // learning rate
    std::uint64_t seed = 0;
    int d = 1;
    std::size_t replicas = 1;
    InitLaw init;

    void validate() const;
};

ParticleEnsemble draw_initial_ensemble(std::size_t n, int d, const InitLaw& law, Rng& rng);

// ---------------------------------------------------------------------------
// pairings
// ---------------------------------------------------------------------------

// g(x) = (1/N) sum_i c_i sigma(w_i . x); equals <c sigma(w.x), nu^N>.
double network_eval(const ParticleEnsemble& ens, std::span<const double> x, const Activation& act);

// <f, nu^N> = (1/N) sum_i f(c_i, w_i) for any callable f(c, w).
template <class F>
double pair_measure(const ParticleEnsemble& ens, F&& f) {
    CompensatedSum acc;
    const std::size_t n = ens.size();
    for (std::size_t i = 0; i < n; ++i) {
        acc.add(f(ens.c[i], ens.w_row(i)));
    }
    return n == 0 ? 0.0 : acc.value() / static_cast<double>(n);
}

// Generic differentiable test function on R^{1+d}. Closed-form families
// (sine modes) provide an inlined equivalent interface for hot loops.
struct ScalarField {
    std::string id;
    std::function<double(double, std::span<const double>)> value;
    // gradient: fills (df/dc, df/dw_1..df/dw_d)
    std::function<void(double, std::span<const double>, double&, std::span<double>)> gradient;
    // second derivatives (optional; required by remainder traces):
    // fills f_cc, f_cw[j], f_ww[j][l] (row-major d x d)
    std::function<void(double, std::span<const double>, double&, std::span<double>, std::span<double>)>
        hessian;

    bool has_hessian() const { return static_cast<bool>(hessian); }
};

}  // namespace mfsgd
