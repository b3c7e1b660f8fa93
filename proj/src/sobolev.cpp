#include "mfsgd/sobolev.hpp"

#include <algorithm>
#include <stdexcept>

namespace mfsgd {

SobolevDomain SobolevDomain::from_support(int dim, double c_o, int order) {
    if (dim < 1) throw std::invalid_argument("sobolev domain: dimension must be >= 1");
    if (!(c_o > 0.0)) throw std::invalid_argument("sobolev domain: support radius must be > 0");
    SobolevDomain dom;
    dom.dim = dim;
    dom.c_o = c_o;
    dom.box_b = 3.0 * std::sqrt(static_cast<double>(dim)) * c_o;
    dom.order = order;
    return dom;
}

std::size_t count_outside_support(const ParticleEnsemble& ens, const SobolevDomain& dom) {
    std::size_t bad = 0;
    const std::size_t n = ens.size();
    for (std::size_t i = 0; i < n; ++i) {
        bool outside = std::abs(ens.c[i]) > dom.c_o;
        if (!outside) {
            for (double wj : ens.w_row(i)) {
                if (std::abs(wj) > dom.c_o) {
                    outside = true;
                    break;
                }
            }
        }
        if (outside) ++bad;
    }
    return bad;
}

double SineMode::sobolev_norm(int order_j) const {
    // Truncated product over axes of per-axis factor vectors
    // v_j[k] = B * omega_j^{2k}; the norm is sqrt(sum_{|k| <= J} prod_j v_j[k_j]).
    const int J = order_j;
    std::vector<double> poly(static_cast<std::size_t>(J) + 1, 0.0);
    poly[0] = 1.0;
    for (int j = 0; j < dim(); ++j) {
        const double om2 = omega(j) * omega(j);
        std::vector<double> axis(static_cast<std::size_t>(J) + 1);
        axis[0] = box_b;
        for (int k = 1; k <= J; ++k) axis[static_cast<std::size_t>(k)] = axis[k - 1] * om2;
        std::vector<double> next(static_cast<std::size_t>(J) + 1, 0.0);
        for (int t = 0; t <= J; ++t) {
            for (int k = 0; k <= t; ++k) {
                next[static_cast<std::size_t>(t)] += poly[t - k] * axis[static_cast<std::size_t>(k)];
            }
        }
        poly.swap(next);
    }
    double total = 0.0;
    for (double v : poly) total += v;
    return std::sqrt(total);
}

SineMode SineMode::unit(int order_j) const {
    SineMode m = *this;
    m.scale = scale / sobolev_norm(order_j);
    m.normalized = true;
    return m;
}

std::string SineMode::id() const {
    std::string s = "sine";
    for (int aj : index) {
        s += '_';
        s += std::to_string(aj);
    }
    return s;
}

void SineMode::gradient(double c, std::span<const double> w, double& dc,
                        std::span<double> dw) const {
    const int D = dim();
    double sin_v[16], cos_v[16];
    const double u0 = omega(0) * (c + box_b);
    sin_v[0] = std::sin(u0);
    cos_v[0] = std::cos(u0);
    for (int j = 1; j < D; ++j) {
        const double u = omega(j) * (w[static_cast<std::size_t>(j - 1)] + box_b);
        sin_v[j] = std::sin(u);
        cos_v[j] = std::cos(u);
    }
    for (int j = 0; j < D; ++j) {
        double g = scale * omega(j);
        for (int l = 0; l < D; ++l) g *= (l == j) ? cos_v[l] : sin_v[l];
        if (j == 0) {
            dc = g;
        } else {
            dw[static_cast<std::size_t>(j - 1)] = g;
        }
    }
}

void SineMode::hessian(double c, std::span<const double> w, double& dcc, std::span<double> dcw,
                       std::span<double> dww) const {
    const int D = dim();
    double sin_v[16], cos_v[16];
    const double u0 = omega(0) * (c + box_b);
    sin_v[0] = std::sin(u0);
    cos_v[0] = std::cos(u0);
    for (int j = 1; j < D; ++j) {
        const double u = omega(j) * (w[static_cast<std::size_t>(j - 1)] + box_b);
        sin_v[j] = std::sin(u);
        cos_v[j] = std::cos(u);
    }
    auto second = [&](int j, int l) {
        double v = scale;
        if (j == l) {
            v *= -omega(j) * omega(j);
            for (int q = 0; q < D; ++q) v *= sin_v[q];
        } else {
            v *= omega(j) * omega(l);
            for (int q = 0; q < D; ++q) v *= (q == j || q == l) ? cos_v[q] : sin_v[q];
        }
        return v;
    };
    dcc = second(0, 0);
    const int d = D - 1;
    for (int j = 0; j < d; ++j) {
        dcw[static_cast<std::size_t>(j)] = second(0, j + 1);
        for (int l = 0; l < d; ++l) {
            dww[static_cast<std::size_t>(j * d + l)] = second(j + 1, l + 1);
        }
    }
}

ScalarField SineMode::as_field() const {
    SineMode copy = *this;
    ScalarField f;
    f.id = copy.id();
    f.value = [copy](double c, std::span<const double> w) { return copy.value(c, w); };
    f.gradient = [copy](double c, std::span<const double> w, double& dc, std::span<double> dw) {
        copy.gradient(c, w, dc, dw);
    };
    f.hessian = [copy](double c, std::span<const double> w, double& dcc, std::span<double> dcw,
                       std::span<double> dww) { copy.hessian(c, w, dcc, dcw, dww); };
    return f;
}

std::vector<std::vector<int>> graded_multi_indices(int dim, std::size_t count) {
    std::vector<std::vector<int>> out;
    if (count == 0) return out;
    // enumerate by total degree, lexicographic within a degree
    for (int total = dim; out.size() < count; ++total) {
        std::vector<int> a(static_cast<std::size_t>(dim), 1);
        // distribute (total - dim) extra among axes, lexicographic ascending in a
        std::function<void(int, int)> rec = [&](int axis, int remaining) {
            if (out.size() >= count) return;
            if (axis == dim - 1) {
                a[static_cast<std::size_t>(axis)] = 1 + remaining;
                out.push_back(a);
                return;
            }
            for (int extra = 0; extra <= remaining; ++extra) {
                a[static_cast<std::size_t>(axis)] = 1 + extra;
                rec(axis + 1, remaining - extra);
                if (out.size() >= count) return;
            }
        };
        rec(0, total - dim);
    }
    return out;
}

std::vector<SineMode> leading_modes(const SobolevDomain& dom, std::size_t count, int norm_order) {
    std::vector<SineMode> modes;
    for (auto& idx : graded_multi_indices(dom.dim, count)) {
        modes.push_back(SineMode(std::move(idx), dom.box_b).unit(norm_order));
    }
    return modes;
}

ScalarField bump_multiply(const BumpFunction& b, const ScalarField& f) {
    ScalarField g;
    g.id = "bump*" + f.id;
    g.value = [b, fv = f.value](double c, std::span<const double> w) {
        return b.value(c, w) * fv(c, w);
    };
    // Gradient and hessian of the product would need bump derivatives; the
    // bump-multiplied fields are used for value pairings only.
    return g;
}

PairingResult measure_pairing(const SignedParticleMeasure& nu, const SineMode& mode,
                              const SobolevDomain& dom) {
    PairingResult out;
    CompensatedSum acc;
    for (const auto& term : nu.terms) {
        const ParticleEnsemble& ens = *term.ens;
        out.outside_support += count_outside_support(ens, dom);
        CompensatedSum part;
        const std::size_t n = ens.size();
        for (std::size_t i = 0; i < n; ++i) {
            part.add(mode.value(ens.c[i], ens.w_row(i)));
        }
        if (n > 0) acc.add(term.coef * part.value() / static_cast<double>(n));
    }
    out.value = acc.value();
    return out;
}

std::vector<double> basis_pairings(const SignedParticleMeasure& nu, const SobolevDomain& dom,
                                   int a_max, int norm_order, std::vector<SineMode>* modes_out,
                                   std::size_t* outside_support) {
    if (a_max < 1) throw std::invalid_argument("basis_pairings: a_max must be >= 1");
    const int D = dom.dim;
    std::size_t n_modes = 1;
    for (int j = 0; j < D; ++j) {
        n_modes *= static_cast<std::size_t>(a_max);
        if (n_modes > (1u << 22)) throw std::invalid_argument("basis_pairings: truncation too large");
    }

    std::vector<CompensatedSum> acc(n_modes);
    std::size_t outside = 0;

    // per-particle sine tables per axis via the angle-addition recurrence
    std::vector<double> table(static_cast<std::size_t>(D * a_max));
    std::vector<double> prod_stack(n_modes);
    for (const auto& term : nu.terms) {
        const ParticleEnsemble& ens = *term.ens;
        outside += count_outside_support(ens, dom);
        const std::size_t n = ens.size();
        const double coef = n > 0 ? term.coef / static_cast<double>(n) : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (int j = 0; j < D; ++j) {
                const double zj = (j == 0) ? ens.c[i] : ens.w_row(i)[static_cast<std::size_t>(j - 1)];
                const double u = std::numbers::pi * (zj + dom.box_b) / (2.0 * dom.box_b);
                const double s1 = std::sin(u), c1 = std::cos(u);
                double sk = s1, ck = c1;
                double* row = table.data() + static_cast<std::size_t>(j) * a_max;
                row[0] = s1;
                for (int k = 1; k < a_max; ++k) {
                    const double sn = sk * c1 + ck * s1;
                    const double cn = ck * c1 - sk * s1;
                    row[k] = sn;
                    sk = sn;
                    ck = cn;
                }
            }
            // tensor products over all multi-indices, last axis fastest
            std::size_t m = 0;
            std::vector<int> idx(static_cast<std::size_t>(D), 0);
            while (true) {
                double v = coef;
                for (int j = 0; j < D; ++j) {
                    v *= table[static_cast<std::size_t>(j) * a_max + idx[static_cast<std::size_t>(j)]];
                }
                acc[m].add(v);
                ++m;
                int axis = D - 1;
                while (axis >= 0 && ++idx[static_cast<std::size_t>(axis)] == a_max) {
                    idx[static_cast<std::size_t>(axis)] = 0;
                    --axis;
                }
                if (axis < 0) break;
            }
        }
    }

    // normalization per mode
    std::vector<double> out(n_modes);
    std::vector<int> idx(static_cast<std::size_t>(D), 1);
    std::size_t m = 0;
    while (true) {
        SineMode mode(idx, dom.box_b);
        out[m] = acc[m].value() / mode.sobolev_norm(norm_order);
        if (modes_out) modes_out->push_back(mode.unit(norm_order));
        ++m;
        int axis = D - 1;
        while (axis >= 0 && ++idx[static_cast<std::size_t>(axis)] == a_max + 1) {
            idx[static_cast<std::size_t>(axis)] = 1;
            --axis;
        }
        if (axis < 0) break;
    }
    if (outside_support) *outside_support = outside;
    return out;
}

DualNormResult dual_norm_truncated(const SignedParticleMeasure& nu, const SobolevDomain& dom,
                                   int a_max) {
    DualNormResult res;
    res.a_max = a_max;
    res.order = dom.order;
    std::size_t outside = 0;
    const auto pairings = basis_pairings(nu, dom, a_max, dom.order, nullptr, &outside);
    res.outside_support = outside;
    CompensatedSum sq;
    for (double v : pairings) sq.add(v * v);
    res.value = std::sqrt(sq.value());

    // TV-based bound on omitted modes: |<e_a/||e_a||_J, nu>| <= TV / ||e_a||_J,
    // summed over the next dyadic shell (modes beyond 4*a_max are negligible
    // by comparison for the orders used here).
    const double tv = nu.total_variation_bound();
    double tail = 0.0;
    const int ext = 4 * a_max;
    std::vector<int> idx(static_cast<std::size_t>(dom.dim), 1);
    while (true) {
        bool in_core = true;
        for (int v : idx) in_core = in_core && (v <= a_max);
        if (!in_core) {
            SineMode mode(idx, dom.box_b);
            const double nrm = mode.sobolev_norm(dom.order);
            tail += (tv * tv) / (nrm * nrm);
        }
        int axis = dom.dim - 1;
        while (axis >= 0 && ++idx[static_cast<std::size_t>(axis)] == ext + 1) {
            idx[static_cast<std::size_t>(axis)] = 1;
            --axis;
        }
        if (axis < 0) break;
    }
    res.tail_bound = std::sqrt(tail);
    return res;
}

double hs_ratio_partial_sum(const SobolevDomain& dom, int order_l, int order_j, int a_max) {
    double sum = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(dom.dim), 1);
    while (true) {
        SineMode mode(idx, dom.box_b);
        const double nl = mode.sobolev_norm(order_l);
        const double nj = mode.sobolev_norm(order_j);
        sum += (nl * nl) / (nj * nj);
        int axis = dom.dim - 1;
        while (axis >= 0 && ++idx[static_cast<std::size_t>(axis)] == a_max + 1) {
            idx[static_cast<std::size_t>(axis)] = 1;
            --axis;
        }
        if (axis < 0) break;
    }
    return sum;
}

QuadratureRule gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        // Newton iteration from the Chebyshev-based initial guess
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            const double dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        const double dp = n * (x * p1 - p0) / (x * x - 1.0);
        rule.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
        rule.weights[static_cast<std::size_t>(n - 1 - i)] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return rule;
}

QuadratureRule composite_gauss_legendre(double lo, double hi, int panels, int nodes_per_panel) {
    if (panels < 1 || !(hi > lo)) throw std::invalid_argument("composite rule: bad interval");
    const QuadratureRule base = gauss_legendre(nodes_per_panel);
    QuadratureRule rule;
    const double width = (hi - lo) / panels;
    for (int p = 0; p < panels; ++p) {
        const double a = lo + p * width;
        for (std::size_t i = 0; i < base.nodes.size(); ++i) {
            rule.nodes.push_back(a + 0.5 * width * (base.nodes[i] + 1.0));
            rule.weights.push_back(0.5 * width * base.weights[i]);
        }
    }
    return rule;
}

}  // namespace mfsgd
