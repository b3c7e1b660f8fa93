#include "mfsgd/spde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfsgd/rng.hpp"

namespace mfsgd {

std::size_t GaussianMartingaleModel::index_of_time(double t) const {
    if (times.size() >= 2) {
        const double h = times[1] - times[0];
        const auto k = static_cast<std::size_t>(std::llround(t / h));
        if (k < times.size() && std::abs(times[k] - t) <= 1e-9 * std::max(1.0, times.back())) {
            return k;
        }
    }
    throw std::out_of_range("martingale model: time not on the grid");
}

double GaussianMartingaleModel::covariance(double t, std::size_t a, std::size_t b) const {
    return accumulated[index_of_time(t)].at(a, b);
}

GaussianMartingaleModel build_martingale_model(const MomentTraces& traces,
                                               const DataDistribution& dist, double alpha) {
    if (traces.times.empty()) throw std::invalid_argument("martingale model: traces are empty");
    const std::size_t nf = traces.n_fields;
    const std::size_t md = traces.n_data;
    GaussianMartingaleModel model;
    model.times = traces.times;
    model.n_fields = nf;
    model.rate.reserve(model.times.size());

    std::vector<double> r(nf * md), rbar(nf);
    for (std::size_t k = 0; k < model.times.size(); ++k) {
        for (std::size_t f = 0; f < nf; ++f) {
            rbar[f] = 0.0;
            for (std::size_t m = 0; m < md; ++m) {
                r[f * md + m] = traces.resid_at(k, m) * (traces.s1_at(k, f, m) + traces.s2_at(k, f, m));
                rbar[f] += dist.p[m] * r[f * md + m];
            }
        }
        Matrix q(nf, nf);
        for (std::size_t m = 0; m < md; ++m) {
            const double pm = dist.p[m];
            for (std::size_t a = 0; a < nf; ++a) {
                const double da = r[a * md + m] - rbar[a];
                for (std::size_t b = a; b < nf; ++b) {
                    q.at(a, b) += alpha * alpha * pm * da * (r[b * md + m] - rbar[b]);
                }
            }
        }
        for (std::size_t a = 0; a < nf; ++a) {
            for (std::size_t b = a + 1; b < nf; ++b) q.at(b, a) = q.at(a, b);
        }
        model.rate.push_back(std::move(q));
    }

    model.accumulated.reserve(model.times.size());
    Matrix acc(nf, nf);
    model.accumulated.push_back(acc);
    for (std::size_t k = 0; k + 1 < model.times.size(); ++k) {
        const double dt = model.times[k + 1] - model.times[k];
        for (std::size_t i = 0; i < acc.a.size(); ++i) {
            acc.a[i] += 0.5 * dt * (model.rate[k].a[i] + model.rate[k + 1].a[i]);
        }
        model.accumulated.push_back(acc);
    }
    return model;
}

double martingale_variance_limit(const MomentTraces& traces, const DataDistribution& dist,
                                 double alpha, double t, std::size_t field_index) {
    const std::size_t k_end = traces.index_of_time(t);
    const std::size_t md = traces.n_data;
    std::vector<double> integrand(k_end + 1);
    for (std::size_t k = 0; k <= k_end; ++k) {
        double rbar = 0.0;
        double second = 0.0;
        for (std::size_t m = 0; m < md; ++m) {
            const double rm =
                traces.resid_at(k, m) * (traces.s1_at(k, field_index, m) + traces.s2_at(k, field_index, m));
            rbar += dist.p[m] * rm;
            second += dist.p[m] * rm * rm;
        }
        integrand[k] = alpha * alpha * (second - rbar * rbar);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 <= k_end; ++k) {
        acc += 0.5 * (traces.times[k + 1] - traces.times[k]) * (integrand[k] + integrand[k + 1]);
    }
    return acc;
}

namespace {

struct QuadGrid2d {
    QuadratureRule rule;  // shared per axis
    // per-axis sine/cosine tables at nodes: [node][index], index 0..a_max
    std::vector<double> sin_t, cos_t;
    int a_max = 0;

    void build(double box_b, int panels, int nodes, int max_index) {
        rule = composite_gauss_legendre(-box_b, box_b, panels, nodes);
        a_max = max_index;
        const std::size_t nn = rule.nodes.size();
        sin_t.assign(nn * (a_max + 1), 0.0);
        cos_t.assign(nn * (a_max + 1), 0.0);
        for (std::size_t i = 0; i < nn; ++i) {
            const double u = std::numbers::pi * (rule.nodes[i] + box_b) / (2.0 * box_b);
            const double s1 = std::sin(u), c1 = std::cos(u);
            double sk = 0.0, ck = 1.0;
            sin_t[i * (a_max + 1)] = 0.0;
            cos_t[i * (a_max + 1)] = 1.0;
            for (int k = 1; k <= a_max; ++k) {
                const double sn = sk * c1 + ck * s1;
                const double cn = ck * c1 - sk * s1;
                sin_t[i * (a_max + 1) + k] = sn;
                cos_t[i * (a_max + 1) + k] = cn;
                sk = sn;
                ck = cn;
            }
        }
    }
};

}  // namespace

GalerkinSystem assemble_galerkin(const SobolevDomain& dom, std::size_t n_modes,
                                 const MeanFieldTrajectory& ref, const DataDistribution& dist,
                                 const Activation& act, double alpha,
                                 const GalerkinOptions& options) {
    if (dom.dim != 2) throw std::invalid_argument("galerkin assembly supports d = 1 (D = 2) only");
    if (ref.traces.times.empty()) {
        throw std::invalid_argument("galerkin assembly requires reference moment traces");
    }
    if (ref.traces.n_fields < n_modes) {
        throw std::invalid_argument("reference traces carry fewer fields than requested modes");
    }

    GalerkinSystem sys;
    sys.dom = dom;
    sys.bump = BumpFunction{std::sqrt(static_cast<double>(dom.dim)) * dom.c_o};
    sys.alpha = alpha;
    sys.options = options;
    sys.modes = leading_modes(dom, n_modes, 0);
    for (std::size_t a = 0; a < n_modes; ++a) {
        if (ref.traces.field_ids[a] != sys.modes[a].id()) {
            throw std::invalid_argument("reference trace fields do not match galerkin modes");
        }
    }

    const std::size_t md = dist.size();
    int max_index = 1;
    for (const auto& mode : sys.modes) {
        max_index = std::max({max_index, mode.index[0], mode.index[1]});
    }

    QuadGrid2d qg;
    qg.build(dom.box_b, options.quad_panels, options.quad_nodes, max_index);
    const std::size_t nn = qg.rule.nodes.size();
    const int tab = qg.a_max + 1;

    // s-independent projection blocks:
    //   p1[m][a][b] = int b(z) (sigma_m d_c f_a + c sigma'_m x_m d_w f_a) f_b dz
    //   p2[m][b]    = int b(z) c sigma_m f_b dz
    std::vector<double> p1(md * n_modes * n_modes, 0.0);
    std::vector<double> p2(md * n_modes, 0.0);
    // gram[a][b] for the quadrature self-test
    std::vector<double> gram(n_modes * n_modes, 0.0);

    std::vector<double> sig_m(md), dsig_m(md);
    std::vector<double> fval(n_modes), fdc(n_modes), fdw(n_modes);
    for (std::size_t iw = 0; iw < nn; ++iw) {
        const double wv = qg.rule.nodes[iw];
        for (std::size_t m = 0; m < md; ++m) {
            double s, ds;
            act.value_deriv(wv * dist.x_row(m)[0], s, ds);
            sig_m[m] = s;
            dsig_m[m] = ds;
        }
        for (std::size_t ic = 0; ic < nn; ++ic) {
            const double cv = qg.rule.nodes[ic];
            const double weight = qg.rule.weights[ic] * qg.rule.weights[iw];
            double bump_v = 1.0;
            if (options.apply_bump) {
                bump_v = sys.bump.value_radial(std::sqrt(cv * cv + wv * wv));
            }
            for (std::size_t a = 0; a < n_modes; ++a) {
                const SineMode& mode = sys.modes[a];
                const int ac = mode.index[0], aw = mode.index[1];
                const double sc = qg.sin_t[ic * tab + ac], cc = qg.cos_t[ic * tab + ac];
                const double sw = qg.sin_t[iw * tab + aw], cw = qg.cos_t[iw * tab + aw];
                fval[a] = mode.scale * sc * sw;
                fdc[a] = mode.scale * mode.omega(0) * cc * sw;
                fdw[a] = mode.scale * mode.omega(1) * sc * cw;
            }
            for (std::size_t a = 0; a < n_modes; ++a) {
                for (std::size_t b = 0; b < n_modes; ++b) gram[a * n_modes + b] += weight * fval[a] * fval[b];
            }
            if (bump_v == 0.0) continue;
            const double wb = weight * bump_v;
            for (std::size_t m = 0; m < md; ++m) {
                const double xm = dist.x_row(m)[0];
                const double c_sig = cv * sig_m[m];
                for (std::size_t b = 0; b < n_modes; ++b) {
                    p2[m * n_modes + b] += wb * c_sig * fval[b];
                }
                for (std::size_t a = 0; a < n_modes; ++a) {
                    const double ba = sig_m[m] * fdc[a] + cv * dsig_m[m] * xm * fdw[a];
                    const double wba = wb * ba;
                    for (std::size_t b = 0; b < n_modes; ++b) {
                        p1[(m * n_modes + a) * n_modes + b] += wba * fval[b];
                    }
                }
            }
        }
    }

    // quadrature self-test: the mode family must come back orthonormal
    for (std::size_t a = 0; a < n_modes && !sys.quadrature_warning; ++a) {
        for (std::size_t b = 0; b < n_modes; ++b) {
            const double target = (a == b) ? 1.0 : 0.0;
            if (std::abs(gram[a * n_modes + b] - target) > options.idempotence_tol) {
                sys.quadrature_warning = true;
                break;
            }
        }
    }

    // G(s_k) = alpha sum_m p_m [resid_m(k) P1_m - S_{a,m}(k) (x) P2_m]
    sys.times = ref.traces.times;
    sys.drift.reserve(sys.times.size());
    for (std::size_t k = 0; k < sys.times.size(); ++k) {
        Matrix g(n_modes, n_modes);
        for (std::size_t m = 0; m < md; ++m) {
            const double pm = dist.p[m];
            const double resid = ref.traces.resid_at(k, m);
            for (std::size_t a = 0; a < n_modes; ++a) {
                const double s_am = ref.traces.s1_at(k, a, m) + ref.traces.s2_at(k, a, m);
                for (std::size_t b = 0; b < n_modes; ++b) {
                    g.at(a, b) += alpha * pm *
                                  (resid * p1[(m * n_modes + a) * n_modes + b] -
                                   s_am * p2[m * n_modes + b]);
                }
            }
        }
        sys.drift.push_back(std::move(g));
    }

    // martingale noise over the same modes
    MomentTraces sub = ref.traces;
    if (ref.traces.n_fields != n_modes) {
        // restrict traces to the leading modes
        sub.n_fields = n_modes;
        sub.field_ids.assign(ref.traces.field_ids.begin(), ref.traces.field_ids.begin() + n_modes);
        sub.s1.clear();
        sub.s2.clear();
        const std::size_t kq = ref.traces.times.size();
        for (std::size_t k = 0; k < kq; ++k) {
            for (std::size_t f = 0; f < n_modes; ++f) {
                for (std::size_t m = 0; m < md; ++m) {
                    sub.s1.push_back(ref.traces.s1_at(k, f, m));
                    sub.s2.push_back(ref.traces.s2_at(k, f, m));
                }
            }
        }
    }
    sys.noise = build_martingale_model(sub, dist, alpha);

    // initial covariance from the reference ensemble at t = 0
    const ParticleEnsemble& mu0 = ref.snapshot_at(0.0);
    {
        const std::size_t n = mu0.size();
        std::vector<double> vals(n_modes);
        std::vector<CompensatedSum> mean(n_modes);
        std::vector<CompensatedSum> prod(n_modes * n_modes);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t a = 0; a < n_modes; ++a) {
                vals[a] = sys.modes[a].value(mu0.c[i], mu0.w_row(i));
                mean[a].add(vals[a]);
            }
            for (std::size_t a = 0; a < n_modes; ++a) {
                for (std::size_t b = a; b < n_modes; ++b) prod[a * n_modes + b].add(vals[a] * vals[b]);
            }
        }
        sys.sigma0 = Matrix(n_modes, n_modes);
        for (std::size_t a = 0; a < n_modes; ++a) {
            for (std::size_t b = a; b < n_modes; ++b) {
                const double ma = mean[a].value() / static_cast<double>(n);
                const double mb = mean[b].value() / static_cast<double>(n);
                const double pab = prod[a * n_modes + b].value() / static_cast<double>(n);
                sys.sigma0.at(a, b) = sys.sigma0.at(b, a) = pab - ma * mb;
            }
        }
    }

    // relative projection residual per mode at the mid-grid time
    {
        const std::size_t kmid = sys.times.size() / 2;
        sys.projection_residual.assign(n_modes, 0.0);
        std::vector<double> norm_sq(n_modes, 0.0);
        std::vector<double> coef_sq(n_modes, 0.0);
        std::vector<double> coefs(n_modes * n_modes, 0.0);  // [a][b]
        for (std::size_t iw = 0; iw < nn; ++iw) {
            const double wv = qg.rule.nodes[iw];
            for (std::size_t m = 0; m < md; ++m) {
                double s, ds;
                act.value_deriv(wv * dist.x_row(m)[0], s, ds);
                sig_m[m] = s;
                dsig_m[m] = ds;
            }
            for (std::size_t ic = 0; ic < nn; ++ic) {
                const double cv = qg.rule.nodes[ic];
                const double weight = qg.rule.weights[ic] * qg.rule.weights[iw];
                double bump_v = 1.0;
                if (options.apply_bump) {
                    bump_v = sys.bump.value_radial(std::sqrt(cv * cv + wv * wv));
                }
                if (bump_v == 0.0) continue;
                for (std::size_t a = 0; a < n_modes; ++a) {
                    const SineMode& mode = sys.modes[a];
                    const int ac = mode.index[0], aw = mode.index[1];
                    const double sc = qg.sin_t[ic * tab + ac], cc = qg.cos_t[ic * tab + ac];
                    const double sw = qg.sin_t[iw * tab + aw], cw = qg.cos_t[iw * tab + aw];
                    fval[a] = mode.scale * sc * sw;
                    fdc[a] = mode.scale * mode.omega(0) * cc * sw;
                    fdw[a] = mode.scale * mode.omega(1) * sc * cw;
                }
                for (std::size_t a = 0; a < n_modes; ++a) {
                    double phi = 0.0;
                    for (std::size_t m = 0; m < md; ++m) {
                        const double xm = dist.x_row(m)[0];
                        const double ba = sig_m[m] * fdc[a] + cv * dsig_m[m] * xm * fdw[a];
                        const double s_am =
                            ref.traces.s1_at(kmid, a, m) + ref.traces.s2_at(kmid, a, m);
                        phi += alpha * dist.p[m] *
                               (ref.traces.resid_at(kmid, m) * ba - cv * sig_m[m] * s_am);
                    }
                    phi *= bump_v;
                    norm_sq[a] += weight * phi * phi;
                    for (std::size_t b = 0; b < n_modes; ++b) {
                        coefs[a * n_modes + b] += weight * phi * fval[b];
                    }
                }
            }
        }
        for (std::size_t a = 0; a < n_modes; ++a) {
            coef_sq[a] = 0.0;
            for (std::size_t b = 0; b < n_modes; ++b) {
                coef_sq[a] += coefs[a * n_modes + b] * coefs[a * n_modes + b];
            }
            if (norm_sq[a] > 0.0) {
                const double rem = std::max(0.0, norm_sq[a] - coef_sq[a]);
                sys.projection_residual[a] = std::sqrt(rem / norm_sq[a]);
            }
        }
    }

    return sys;
}

std::vector<double> SpdePaths::rows_at(std::size_t j) const {
    std::vector<double> rows(n_paths * n_modes);
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t a = 0; a < n_modes; ++a) rows[p * n_modes + a] = data[idx(p, j, a)];
    }
    return rows;
}

SpdePaths simulate_spde(const GalerkinSystem& system, std::size_t n_paths, double dt,
                        std::uint64_t seed, std::span<const double> output_times) {
    const std::size_t nm = system.modes.size();
    if (system.times.size() < 2) throw std::invalid_argument("simulate_spde: degenerate grid");
    const double spacing = system.times[1] - system.times[0];
    const auto n_sub = static_cast<std::size_t>(std::llround(spacing / dt));
    if (n_sub < 1 || std::abs(static_cast<double>(n_sub) * dt - spacing) > 1e-9 * spacing) {
        throw std::invalid_argument("simulate_spde: dt must divide the grid spacing");
    }

    // output times must sit on the grid
    std::vector<std::size_t> out_cells;
    for (double t : output_times) {
        out_cells.push_back(system.noise.index_of_time(t));
    }

    // noise factors per grid cell (left endpoint; piecewise constant)
    const std::size_t n_cells = system.times.size() - 1;
    std::vector<Matrix> factors;
    factors.reserve(n_cells);
    for (std::size_t k = 0; k < n_cells; ++k) {
        factors.push_back(psd_sqrt_factor(system.noise.rate[k], system.options.psd_tol));
    }
    const Matrix init_factor = psd_sqrt_factor(system.sigma0, system.options.psd_tol);

    SpdePaths paths;
    paths.times.assign(output_times.begin(), output_times.end());
    paths.n_paths = n_paths;
    paths.n_modes = nm;
    paths.data.resize(n_paths * paths.times.size() * nm);

    const double sq_dt = std::sqrt(dt);
    std::vector<double> h(nm), gh(nm), xi(nm), noise(nm);
    for (std::size_t p = 0; p < n_paths; ++p) {
        Rng rng(derive_key(seed, {tag64("path"), p}));
        for (std::size_t a = 0; a < nm; ++a) xi[a] = rng.normal();
        for (std::size_t a = 0; a < nm; ++a) {
            double s = 0.0;
            for (std::size_t b = 0; b < nm; ++b) s += init_factor.at(a, b) * xi[b];
            h[a] = s;
        }
        std::size_t out_j = 0;
        auto emit = [&](std::size_t cell_boundary) {
            while (out_j < out_cells.size() && out_cells[out_j] == cell_boundary) {
                for (std::size_t a = 0; a < nm; ++a) paths.data[paths.idx(p, out_j, a)] = h[a];
                ++out_j;
            }
        };
        emit(0);
        for (std::size_t k = 0; k < n_cells; ++k) {
            const Matrix& g = system.drift[k];
            const Matrix& l = factors[k];
            for (std::size_t s = 0; s < n_sub; ++s) {
                for (std::size_t a = 0; a < nm; ++a) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < nm; ++b) acc += g.at(a, b) * h[b];
                    gh[a] = acc;
                }
                for (std::size_t a = 0; a < nm; ++a) xi[a] = rng.normal();
                for (std::size_t a = 0; a < nm; ++a) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < nm; ++b) acc += l.at(a, b) * xi[b];
                    noise[a] = acc;
                }
                for (std::size_t a = 0; a < nm; ++a) h[a] += dt * gh[a] + sq_dt * noise[a];
            }
            emit(k + 1);
        }
    }
    return paths;
}

}  // namespace mfsgd
