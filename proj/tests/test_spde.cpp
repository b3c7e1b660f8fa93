#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "mfsgd/fluctuation.hpp"
#include "mfsgd/spde.hpp"

using namespace mfsgd;

namespace {

DataDistribution three_point() {
    return DataDistribution::make(1, {-1.0, 0.2, 0.9}, {0.4, -0.2, 0.7}, {0.3, 0.4, 0.3}, 1.0);
}

MeanFieldTrajectory reference_run(std::size_t m, const std::vector<SineMode>& modes,
                                  double alpha = 1.0, std::uint64_t seed = 404) {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    InitLaw law;
    law.w_lo = {-1.0};
    law.w_hi = {1.0};
    Rng rng(derive_key(seed, {tag64("reference")}));
    const auto init = draw_initial_ensemble(m, 1, law, rng);
    const std::vector<double> grid{0.0, 0.5, 1.0};
    return integrate_meanfield(init, dist, alpha, act, 1.0, 0.01, grid, modes, true);
}

struct CoordC {
    double value(double c, std::span<const double>) const { return c; }
    void gradient(double, std::span<const double>, double& dc, std::span<double> dw) const {
        dc = 1.0;
        for (auto& v : dw) v = 0.0;
    }
};

struct ConstField {
    void gradient(double, std::span<const double>, double& dc, std::span<double> dw) const {
        dc = 0.0;
        for (auto& v : dw) v = 0.0;
    }
};

}  // namespace

TEST_SUITE_BEGIN("spde");

TEST_CASE("jacobi eigensolver on a known matrix") {
    Matrix m(2, 2);
    m.at(0, 0) = 2.0;
    m.at(0, 1) = m.at(1, 0) = 1.0;
    m.at(1, 1) = 2.0;
    const auto eig = jacobi_eigensym(m);
    CHECK(eig.values[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(eig.values[1] == doctest::Approx(3.0).epsilon(1e-12));
    // reconstruct
    Matrix r(2, 2);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 2; ++k) {
                s += eig.vectors.at(i, k) * eig.values[k] * eig.vectors.at(j, k);
            }
            r.at(i, j) = s;
        }
    }
    CHECK(r.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("psd factor reconstructs and rejects indefinite input") {
    Matrix m(2, 2);
    m.at(0, 0) = 4.0;
    m.at(0, 1) = m.at(1, 0) = 2.0;
    m.at(1, 1) = 3.0;
    const auto l = psd_sqrt_factor(m, 1e-10);
    const auto ll = matmul(l, [&] {
        Matrix t(2, 2);
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 2; ++j) t.at(i, j) = l.at(j, i);
        }
        return t;
    }());
    CHECK(ll.at(0, 0) == doctest::Approx(4.0).epsilon(1e-10));
    CHECK(ll.at(1, 0) == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(ll.at(1, 1) == doctest::Approx(3.0).epsilon(1e-10));

    Matrix bad(2, 2);
    bad.at(0, 0) = 1.0;
    bad.at(1, 1) = -1.0;
    CHECK_THROWS_AS(psd_sqrt_factor(bad, 1e-10), std::runtime_error);
    // tiny negative eigenvalues are clamped, not fatal
    Matrix tiny(1, 1);
    tiny.at(0, 0) = -1e-12;
    CHECK_NOTHROW(psd_sqrt_factor(tiny, 1e-10));
}

TEST_CASE("r_eval: constants, zero residual and the singleton hand formula") {
    const auto act = Activation::make_tanh();
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    const auto modes = leading_modes(dom, 1, 0);
    // singleton reference ensemble: build a trajectory with one particle
    ParticleEnsemble one;
    one.d = 1;
    one.c = {0.8};
    one.w = {0.5};
    one.update_observed_bound();
    const auto dist = three_point();
    const std::vector<double> grid{0.0};
    const auto traj = integrate_meanfield(one, dist, 1.0, act, 1e-3, 1e-3, grid);

    const std::vector<double> x{0.6};
    // constant field annihilated by the gradient
    CHECK(r_eval(traj, 0.0, ConstField{}, x, 0.9, act) == 0.0);

    // zero residual: y = <c sigma(w.x), mu>
    const double g = 0.8 * std::tanh(0.5 * 0.6);
    CHECK(r_eval(traj, 0.0, CoordC{}, x, g, act) == doctest::Approx(0.0).epsilon(1e-14));

    // hand formula with f(c, w) = c: (y - c0 sigma(w0 x)) sigma(w0 x)
    const double y = 0.9;
    const double expected = (y - g) * std::tanh(0.5 * 0.6);
    CHECK(r_eval(traj, 0.0, CoordC{}, x, y, act) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("r_eval is linear in the test function") {
    const auto act = Activation::make_tanh();
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    const auto modes = leading_modes(dom, 3, 0);
    const auto traj = reference_run(500, modes);
    const std::vector<double> x{0.2};
    const double y = 0.4;

    const SineMode& f1 = modes[0];
    const SineMode& f2 = modes[1];
    const double a = 1.7;
    // combination field a*f1 + f2
    ScalarField combo;
    combo.id = "combo";
    combo.value = [&, a](double c, std::span<const double> w) {
        return a * f1.value(c, w) + f2.value(c, w);
    };
    combo.gradient = [&, a](double c, std::span<const double> w, double& dc,
                            std::span<double> dw) {
        double d1;
        std::vector<double> g1(w.size()), g2(w.size());
        f1.gradient(c, w, d1, g1);
        double d2;
        f2.gradient(c, w, d2, g2);
        dc = a * d1 + d2;
        for (std::size_t j = 0; j < w.size(); ++j) dw[j] = a * g1[j] + g2[j];
    };
    const double lhs = r_eval(traj, 0.5, combo, x, y, act);
    const double rhs =
        a * r_eval(traj, 0.5, f1, x, y, act) + r_eval(traj, 0.5, f2, x, y, act);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("martingale covariance: symmetry, positivity, degenerate law, t = 0") {
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    const auto modes = leading_modes(dom, 3, 0);
    const auto traj = reference_run(500, modes);
    const auto dist = three_point();
    const auto model = build_martingale_model(traj.traces, dist, 1.0);

    CHECK(model.covariance(0.0, 0, 1) == 0.0);
    for (std::size_t a = 0; a < 3; ++a) {
        CHECK(model.covariance(1.0, a, a) >= 0.0);
        for (std::size_t b = 0; b < 3; ++b) {
            CHECK(model.covariance(1.0, a, b) ==
                  doctest::Approx(model.covariance(1.0, b, a)).epsilon(1e-12));
        }
    }
    // rates are PSD and accumulation is monotone
    for (std::size_t k = 0; k < model.rate.size(); k += 25) {
        CHECK(min_eigenvalue_sym(model.rate[k]) >= -1e-10);
    }
    Matrix diff(3, 3);
    const std::size_t k1 = model.index_of_time(0.5), k2 = model.index_of_time(1.0);
    for (std::size_t i = 0; i < 9; ++i) {
        diff.a[i] = model.accumulated[k2].a[i] - model.accumulated[k1].a[i];
    }
    CHECK(min_eigenvalue_sym(diff) >= -1e-10);

    // degenerate single-point law: centered R term vanishes
    const auto single = DataDistribution::make(1, {0.5}, {0.3}, {1.0}, 1.0);
    const auto act = Activation::make_tanh();
    InitLaw law;
    law.w_lo = {-1.0};
    law.w_hi = {1.0};
    Rng rng(derive_key(11, {tag64("reference")}));
    const auto init = draw_initial_ensemble(200, 1, law, rng);
    const std::vector<double> grid{0.0, 1.0};
    const auto tj = integrate_meanfield(init, single, 1.0, act, 1.0, 0.01, grid, modes, true);
    const auto m2 = build_martingale_model(tj.traces, single, 1.0);
    CHECK(m2.covariance(1.0, 0, 0) == 0.0);
}

TEST_CASE("martingale variance limit agrees with the model diagonal") {
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    const auto modes = leading_modes(dom, 2, 0);
    const auto traj = reference_run(500, modes);
    const auto dist = three_point();
    const auto model = build_martingale_model(traj.traces, dist, 1.0);
    const double direct = martingale_variance_limit(traj.traces, dist, 1.0, 1.0, 0);
    CHECK(direct == doctest::Approx(model.covariance(1.0, 0, 0)).epsilon(1e-12));
}

TEST_CASE("galerkin assembly with zero learning rate gives zero drift and noise") {
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    const auto modes = leading_modes(dom, 4, 0);
    const auto traj = reference_run(400, modes, 0.0);
    const auto dist = three_point();
    GalerkinOptions options;
    options.quad_panels = 12;
    options.quad_nodes = 6;
    const auto sys = assemble_galerkin(dom, 4, traj, dist, Activation::make_tanh(), 0.0, options);
    for (const auto& g : sys.drift) {
        for (double v : g.a) CHECK(v == 0.0);
    }
    for (const auto& q : sys.noise.rate) {
        for (double v : q.a) CHECK(v == 0.0);
    }
    CHECK_FALSE(sys.quadrature_warning);
}

TEST_CASE("galerkin drift row vanishes at the degenerate zero-coefficient state") {
    // all y_m = 0 and all c_i = 0: residuals vanish, and for the lowest mode
    // d_c f(0, w) = 0, so both the B and C rows for that mode are zero
    const auto act = Activation::make_tanh();
    const auto dist = DataDistribution::make(1, {-1.0, 0.5}, {0.0, 0.0}, {0.5, 0.5}, 1.0);
    const auto dom = SobolevDomain::from_support(2, 2.0, 0);
    const auto modes = leading_modes(dom, 2, 0);
    ParticleEnsemble zero_c;
    zero_c.d = 1;
    for (int i = 0; i < 50; ++i) {
        zero_c.c.push_back(0.0);
        zero_c.w.push_back(-1.0 + 2.0 * i / 49.0);
    }
    zero_c.update_observed_bound();
    const std::vector<double> grid{0.0, 1.0};
    const auto traj = integrate_meanfield(zero_c, dist, 1.0, act, 1.0, 0.01, grid, modes, true);
    GalerkinOptions options;
    options.quad_panels = 12;
    options.quad_nodes = 6;
    const auto sys = assemble_galerkin(dom, 2, traj, dist, act, 1.0, options);
    for (std::size_t b = 0; b < 2; ++b) {
        CHECK(std::abs(sys.drift[0].at(0, b)) <= 1e-10);
    }
}

TEST_CASE("galerkin quadrature self-test recovers the orthonormal gram") {
    const auto dom = SobolevDomain::from_support(2, 1.5, 0);
    const auto modes = leading_modes(dom, 6, 0);
    const auto traj = reference_run(300, modes);
    const auto dist = three_point();
    const auto sys = assemble_galerkin(dom, 6, traj, dist, Activation::make_tanh(), 1.0);
    CHECK_FALSE(sys.quadrature_warning);
    CHECK(min_eigenvalue_sym(sys.sigma0) >= -1e-10);
    for (double r : sys.projection_residual) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("spde paths: frozen system keeps the initial value exactly") {
    GalerkinSystem sys;
    sys.dom = SobolevDomain::from_support(2, 1.0, 0);
    sys.alpha = 0.0;
    sys.modes = leading_modes(sys.dom, 2, 0);
    sys.times = {0.0, 0.5, 1.0};
    sys.drift.assign(3, Matrix::zero(2));
    sys.noise.times = sys.times;
    sys.noise.n_fields = 2;
    sys.noise.rate.assign(3, Matrix::zero(2));
    sys.noise.accumulated.assign(3, Matrix::zero(2));
    sys.sigma0 = Matrix::identity(2);
    const auto paths = simulate_spde(sys, 50, 0.05, 7, std::vector<double>{0.0, 1.0});
    for (std::size_t p = 0; p < paths.n_paths; ++p) {
        for (std::size_t a = 0; a < 2; ++a) {
            CHECK(paths.data[paths.idx(p, 0, a)] == paths.data[paths.idx(p, 1, a)]);
        }
    }
}

TEST_CASE("spde paths follow the exponential for constant diagonal drift") {
    GalerkinSystem sys;
    sys.dom = SobolevDomain::from_support(2, 1.0, 0);
    sys.modes = leading_modes(sys.dom, 1, 0);
    sys.times = {0.0, 0.5, 1.0};
    Matrix g(1, 1);
    const double lambda = -0.8;
    g.at(0, 0) = lambda;
    sys.drift.assign(3, g);
    sys.noise.times = sys.times;
    sys.noise.n_fields = 1;
    sys.noise.rate.assign(3, Matrix::zero(1));
    sys.noise.accumulated.assign(3, Matrix::zero(1));
    sys.sigma0 = Matrix::identity(1);
    const double dt = 1e-3;
    const auto paths = simulate_spde(sys, 20, dt, 11, std::vector<double>{0.0, 1.0});
    for (std::size_t p = 0; p < paths.n_paths; ++p) {
        const double h0 = paths.data[paths.idx(p, 0, 0)];
        const double h1 = paths.data[paths.idx(p, 1, 0)];
        CHECK(h1 == doctest::Approx(h0 * std::exp(lambda)).epsilon(50 * dt));
    }
}

TEST_CASE("driftless spde matches the analytic covariance") {
    GalerkinSystem sys;
    sys.dom = SobolevDomain::from_support(2, 1.0, 0);
    sys.modes = leading_modes(sys.dom, 2, 0);
    sys.times = {0.0, 0.5, 1.0};
    sys.drift.assign(3, Matrix::zero(2));
    Matrix q(2, 2);
    q.at(0, 0) = 0.5;
    q.at(1, 1) = 0.2;
    q.at(0, 1) = q.at(1, 0) = 0.1;
    sys.noise.times = sys.times;
    sys.noise.n_fields = 2;
    sys.noise.rate.assign(3, q);
    sys.noise.accumulated.assign(3, Matrix::zero(2));
    Matrix sigma0(2, 2);
    sigma0.at(0, 0) = 1.0;
    sigma0.at(1, 1) = 2.0;
    sys.sigma0 = sigma0;

    const std::size_t n_paths = 20000;
    const auto paths = simulate_spde(sys, n_paths, 0.01, 14, std::vector<double>{1.0});
    const auto est = sample_covariance(paths.rows_at(0), n_paths, 2);
    // target: Sigma0 + t * Q at t = 1
    for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
            const double target = sigma0.at(a, b) + q.at(a, b);
            CHECK(std::abs(est.cov.at(a, b) - target) <= 3.0 * est.se.at(a, b) + 1e-9);
        }
    }
}

TEST_CASE("spde validates the step against the grid spacing") {
    GalerkinSystem sys;
    sys.dom = SobolevDomain::from_support(2, 1.0, 0);
    sys.modes = leading_modes(sys.dom, 1, 0);
    sys.times = {0.0, 0.5, 1.0};
    sys.drift.assign(3, Matrix::zero(1));
    sys.noise.times = sys.times;
    sys.noise.n_fields = 1;
    sys.noise.rate.assign(3, Matrix::zero(1));
    sys.noise.accumulated.assign(3, Matrix::zero(1));
    sys.sigma0 = Matrix::zero(1);
    CHECK_THROWS_AS(simulate_spde(sys, 2, 0.3, 1, std::vector<double>{1.0}),
                    std::invalid_argument);
}

TEST_SUITE_END();
