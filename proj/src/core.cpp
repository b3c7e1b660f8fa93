#include "mfsgd/core.hpp"

#include <algorithm>
#include <stdexcept>

namespace mfsgd {

Activation Activation::make_tanh() {
    Activation a;
    a.kind = ActivationKind::Tanh;
    a.bound_value = 1.0;
    a.bound_deriv = 1.0;
    // sup |d^2 tanh| = 4/(3 sqrt(3)) at u = +-atanh(1/sqrt(3))
    a.bound_second = 4.0 / (3.0 * std::sqrt(3.0));
    return a;
}

Activation Activation::make_sigmoid() {
    Activation a;
    a.kind = ActivationKind::Sigmoid;
    a.bound_value = 1.0;
    a.bound_deriv = 0.25;
    a.bound_second = 1.0 / (6.0 * std::sqrt(3.0));
    return a;
}

Activation Activation::make_custom(std::function<double(double)> value,
                                   std::function<double(double)> deriv,
                                   std::function<double(double)> second, double bound_value,
                                   double bound_deriv, double bound_second) {
    if (!value || !deriv || !second) {
        throw std::invalid_argument("custom activation requires value, deriv and second callables");
    }
    Activation a;
    a.kind = ActivationKind::CustomSmooth;
    a.custom_value = std::move(value);
    a.custom_deriv = std::move(deriv);
    a.custom_second = std::move(second);
    a.bound_value = bound_value;
    a.bound_deriv = bound_deriv;
    a.bound_second = bound_second;
    return a;
}

double Activation::value(double u) const {
    switch (kind) {
        case ActivationKind::Tanh: return std::tanh(u);
        case ActivationKind::Sigmoid: return 1.0 / (1.0 + std::exp(-u));
        case ActivationKind::CustomSmooth: return custom_value(u);
    }
    return 0.0;
}

double Activation::deriv(double u) const {
    switch (kind) {
        case ActivationKind::Tanh: {
            const double s = std::tanh(u);
            return 1.0 - s * s;
        }
        case ActivationKind::Sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-u));
            return s * (1.0 - s);
        }
        case ActivationKind::CustomSmooth: return custom_deriv(u);
    }
    return 0.0;
}

double Activation::second(double u) const {
    switch (kind) {
        case ActivationKind::Tanh: {
            const double s = std::tanh(u);
            return -2.0 * s * (1.0 - s * s);
        }
        case ActivationKind::Sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-u));
            return s * (1.0 - s) * (1.0 - 2.0 * s);
        }
        case ActivationKind::CustomSmooth: return custom_second(u);
    }
    return 0.0;
}

Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::make_tanh();
    if (name == "sigmoid") return Activation::make_sigmoid();
    throw std::invalid_argument("unknown activation: " + name);
}

DataDistribution DataDistribution::make(int d, std::vector<double> x_flat, std::vector<double> y,
                                        std::vector<double> p, double support_bound) {
    if (d < 1) throw std::invalid_argument("data dimension must be >= 1");
    const std::size_t m = y.size();
    if (m == 0) throw std::invalid_argument("dataset must be non-empty");
    if (x_flat.size() != m * static_cast<std::size_t>(d)) {
        throw std::invalid_argument("x size does not match point count and dimension");
    }
    if (p.size() != m) throw std::invalid_argument("weight count does not match point count");

    double psum = 0.0;
    for (double pi : p) {
        if (!(pi >= 0.0)) throw std::invalid_argument("weights must be non-negative");
        psum += pi;
    }
    if (std::abs(psum - 1.0) > 1e-12) {
        throw std::invalid_argument("weights must sum to 1 within 1e-12");
    }

    for (std::size_t i = 0; i < m; ++i) {
        double mx = std::abs(y[i]);
        for (int j = 0; j < d; ++j) {
            mx = std::max(mx, std::abs(x_flat[i * static_cast<std::size_t>(d) + j]));
        }
        if (mx > support_bound) {
            throw std::invalid_argument("data point outside declared support bound");
        }
    }

    DataDistribution dist;
    dist.d = d;
    dist.x = std::move(x_flat);
    dist.y = std::move(y);
    dist.p = std::move(p);
    dist.support_bound = support_bound;
    dist.cum.resize(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        acc += dist.p[i];
        dist.cum[i] = acc;
    }
    dist.cum.back() = 1.0;
    return dist;
}

std::size_t DataDistribution::sample_index(Rng& rng) const {
    const double u = rng.uniform01();
    // inverse CDF; datasets are tiny so a linear scan is fine
    for (std::size_t m = 0; m + 1 < cum.size(); ++m) {
        if (u < cum[m]) return m;
    }
    return cum.size() - 1;
}

void ParticleEnsemble::update_observed_bound() {
    double mx = observed_bound;
    const std::size_t n = size();
    for (std::size_t i = 0; i < n; ++i) {
        double wn = 0.0;
        for (double wj : w_row(i)) wn += wj * wj;
        mx = std::max(mx, std::abs(c[i]) + std::sqrt(wn));
    }
    observed_bound = mx;
}

void InitLaw::validate(int d) const {
    if (!(c_lo <= c_hi)) throw std::invalid_argument("init law: c bounds inverted");
    if (w_lo.size() != static_cast<std::size_t>(d) || w_hi.size() != static_cast<std::size_t>(d)) {
        throw std::invalid_argument("init law: w bound size does not match dimension");
    }
    for (int j = 0; j < d; ++j) {
        if (!(w_lo[j] <= w_hi[j])) throw std::invalid_argument("init law: w bounds inverted");
    }
}

void RunConfig::validate() const {
    if (n < 1) throw std::invalid_argument("config: N must be >= 1");
    if (!(horizon > 0.0)) throw std::invalid_argument("config: T must be > 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("config: alpha must be > 0");
    if (replicas < 1) throw std::invalid_argument("config: replica count must be >= 1");
    if (d < 1) throw std::invalid_argument("config: dimension must be >= 1");
    init.validate(d);
}

ParticleEnsemble draw_initial_ensemble(std::size_t n, int d, const InitLaw& law, Rng& rng) {
    law.validate(d);
    ParticleEnsemble ens;
    ens.d = d;
    ens.c.resize(n);
    ens.w.resize(n * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n; ++i) {
        ens.c[i] = rng.uniform(law.c_lo, law.c_hi);
        for (int j = 0; j < d; ++j) {
            ens.w[i * static_cast<std::size_t>(d) + j] = rng.uniform(law.w_lo[j], law.w_hi[j]);
        }
    }
    ens.update_observed_bound();
    return ens;
}

double network_eval(const ParticleEnsemble& ens, std::span<const double> x, const Activation& act) {
    if (x.size() != static_cast<std::size_t>(ens.d)) {
        throw std::invalid_argument("network_eval: input dimension mismatch");
    }
    CompensatedSum acc;
    const std::size_t n = ens.size();
    for (std::size_t i = 0; i < n; ++i) {
        acc.add(ens.c[i] * act.value(dot(ens.w_row(i), x)));
    }
    return n == 0 ? 0.0 : acc.value() / static_cast<double>(n);
}

}  // namespace mfsgd
