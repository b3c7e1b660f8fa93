#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "mfsgd/fluctuation.hpp"
#include "mfsgd/sgd.hpp"
#include "mfsgd/sobolev.hpp"

using namespace mfsgd;

namespace {

DataDistribution three_point() {
    return DataDistribution::make(1, {-1.0, 0.2, 0.9}, {0.4, -0.2, 0.7}, {0.3, 0.4, 0.3}, 1.0);
}

RunConfig small_config(std::size_t n, double horizon = 1.0) {
    RunConfig config;
    config.n = n;
    config.horizon = horizon;
    config.alpha = 1.0;
    config.seed = 99;
    config.d = 1;
    config.init.w_lo = {-1.0};
    config.init.w_hi = {1.0};
    return config;
}

ParticleEnsemble single_particle(double c, double w) {
    ParticleEnsemble ens;
    ens.d = 1;
    ens.c = {c};
    ens.w = {w};
    ens.update_observed_bound();
    return ens;
}

ScalarField linear_in_c() {
    ScalarField f;
    f.id = "c";
    f.value = [](double c, std::span<const double>) { return c; };
    f.gradient = [](double, std::span<const double>, double& dc, std::span<double> dw) {
        dc = 1.0;
        for (auto& v : dw) v = 0.0;
    };
    return f;
}

}  // namespace

TEST_SUITE_BEGIN("sgd");

TEST_CASE("sgd_step with zero learning rate leaves the ensemble unchanged") {
    const auto act = Activation::make_tanh();
    const auto ens = single_particle(0.8, -0.4);
    const std::vector<double> x{1.0};
    const Datum datum{x, 0.5, 0};
    const auto out = sgd_step(ens, datum, 0.0, act);
    CHECK(out.c == ens.c);
    CHECK(out.w == ens.w);
}

TEST_CASE("sgd_step hand computation") {
    // N=1, d=1, c=1, w=0, (x,y)=(1,1), tanh, alpha=0.1:
    // g = tanh(0) = 0, c' = 1 + 0.1*1*0 = 1, w' = 0 + 0.1*1*1*sech^2(0)*1 = 0.1
    const auto act = Activation::make_tanh();
    const auto ens = single_particle(1.0, 0.0);
    const std::vector<double> x{1.0};
    const auto out = sgd_step(ens, {x, 1.0, 0}, 0.1, act);
    CHECK(out.c[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(out.w[0] == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("sgd_step with zero residual is a fixed point") {
    const auto act = Activation::make_tanh();
    const auto ens = single_particle(0.7, 0.3);
    const std::vector<double> x{0.5};
    const double y = network_eval(ens, x, act);
    const auto out = sgd_step(ens, {x, y, 0}, 1.0, act);
    CHECK(out.c == ens.c);
    CHECK(out.w == ens.w);
}

TEST_CASE("sgd_step is a pure function of the pre-step state") {
    const auto act = Activation::make_tanh();
    Rng rng(derive_key(31, {tag64("sgd-test")}));
    ParticleEnsemble ens;
    ens.d = 1;
    for (int i = 0; i < 50; ++i) {
        ens.c.push_back(rng.uniform(-1, 1));
        ens.w.push_back(rng.uniform(-1, 1));
    }
    ens.update_observed_bound();
    const std::vector<double> x{0.7};
    const auto once = sgd_step(ens, {x, 0.4, 0}, 1.0, act);
    const auto twice = sgd_step(ens, {x, 0.4, 0}, 1.0, act);
    CHECK(once.c == twice.c);
    CHECK(once.w == twice.w);
}

TEST_CASE("run_sgd executes exactly floor(NT) steps and snapshots at floor(Nt)") {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    auto config = small_config(100);
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const auto traj = run_sgd(config, dist, act, grid);
    CHECK(traj.steps_executed == 100);
    CHECK(traj.snapshots[0].step == 0);
    CHECK(traj.snapshots[1].step == 50);
    CHECK(traj.snapshots[2].step == 100);
}

TEST_CASE("run_sgd with floor(NT) = 0 returns the initial ensemble") {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    auto config = small_config(3, 0.2);  // floor(3 * 0.2) = 0
    const std::vector<double> grid{0.2};
    const auto traj = run_sgd(config, dist, act, grid);
    CHECK(traj.steps_executed == 0);
    CHECK(traj.snapshots[0].c == traj.final_state.c);
}

TEST_CASE("run_sgd is bitwise deterministic given the seed") {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    auto config = small_config(64);
    const std::vector<double> grid{0.5, 1.0};
    const auto a = run_sgd(config, dist, act, grid);
    const auto b = run_sgd(config, dist, act, grid);
    CHECK(a.final_state.c == b.final_state.c);
    CHECK(a.final_state.w == b.final_state.w);
    CHECK(a.snapshots[0].c == b.snapshots[0].c);
}

TEST_CASE("run_sgd rejects grid points outside the horizon") {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    auto config = small_config(16);
    const std::vector<double> grid{1.5};
    CHECK_THROWS_AS(run_sgd(config, dist, act, grid), std::invalid_argument);
}

TEST_CASE("martingale increment vanishes for a degenerate data law") {
    const auto act = Activation::make_tanh();
    const auto dist = DataDistribution::make(1, {0.5}, {0.3}, {1.0}, 1.0);
    const auto ens = single_particle(0.9, 0.2);
    const auto f = linear_in_c();
    CHECK(martingale_increment(ens, datum_at(dist, 0), f, 1.0, dist, act) == 0.0);
}

TEST_CASE("martingale increment vanishes for constant test functions") {
    const auto act = Activation::make_tanh();
    const auto dist = three_point();
    const auto ens = single_particle(0.9, 0.2);
    ScalarField f;
    f.id = "const";
    f.value = [](double, std::span<const double>) { return 3.0; };
    f.gradient = [](double, std::span<const double>, double& dc, std::span<double> dw) {
        dc = 0.0;
        for (auto& v : dw) v = 0.0;
    };
    for (std::size_t m = 0; m < dist.size(); ++m) {
        CHECK(martingale_increment(ens, datum_at(dist, m), f, 1.0, dist, act) == 0.0);
    }
}

TEST_CASE("martingale increment matches brute force on a two-point law") {
    const auto act = Activation::make_tanh();
    const auto dist = DataDistribution::make(1, {0.5, -0.8}, {0.3, -0.1}, {0.4, 0.6}, 1.0);
    const auto ens = single_particle(0.9, 0.2);
    const auto f = linear_in_c();
    const double alpha = 0.7;

    // brute force from the definition, N = 1: <sigma(w.x) d_c f, nu> = sigma(w x)
    auto brute = [&](std::size_t mk) {
        auto a_of = [&](double x) { return std::tanh(0.2 * x); };
        auto resid = [&](double x, double y) { return y - 0.9 * std::tanh(0.2 * x); };
        const double realized = resid(dist.x[mk], dist.y[mk]) * a_of(dist.x[mk]);
        double mean = 0.0;
        for (std::size_t m = 0; m < 2; ++m) mean += dist.p[m] * resid(dist.x[m], dist.y[m]) * a_of(dist.x[m]);
        return alpha * (realized - mean);
    };
    for (std::size_t m = 0; m < 2; ++m) {
        CHECK(martingale_increment(ens, datum_at(dist, m), f, alpha, dist, act) ==
              doctest::Approx(brute(m)).epsilon(1e-13));
    }
}

TEST_CASE("martingale increments have zero conditional mean") {
    const auto act = Activation::make_tanh();
    const auto dist = three_point();
    Rng rng(derive_key(37, {tag64("sgd-test")}));
    ParticleEnsemble ens;
    ens.d = 1;
    for (int i = 0; i < 20; ++i) {
        ens.c.push_back(rng.uniform(-1, 1));
        ens.w.push_back(rng.uniform(-1, 1));
    }
    ens.update_observed_bound();
    const auto f = linear_in_c();
    double mean = 0.0;
    for (std::size_t m = 0; m < dist.size(); ++m) {
        mean += dist.p[m] * martingale_increment(ens, datum_at(dist, m), f, 1.0, dist, act);
    }
    CHECK(std::abs(mean) <= 1e-12);
}

TEST_CASE("martingale increment is zero when the learning rate is zero") {
    const auto act = Activation::make_tanh();
    const auto dist = three_point();
    const auto ens = single_particle(0.9, 0.2);
    const auto f = linear_in_c();
    CHECK(martingale_increment(ens, datum_at(dist, 0), f, 0.0, dist, act) == 0.0);
}

TEST_CASE("diagnostics: quadratic variation, V trace and recomputation oracle") {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    auto config = small_config(50);
    const std::vector<double> grid{1.0};
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    std::vector<SineMode> fields{SineMode({1, 1}, dom.box_b).unit(0)};

    MartingaleDiagnostics diag;
    const auto traj = run_sgd_diag<SineMode>(config, dist, act, grid, fields, &diag);
    REQUIRE(diag.fields.size() == 1);
    REQUIRE(diag.fields[0].increments.size() == 50);

    // independent recomputation of the quadratic variation from the list
    double recompute = 0.0;
    for (double inc : diag.fields[0].increments) recompute += inc * inc;
    recompute *= 50.0;
    CHECK(quadratic_variation(diag, 0, 1.0) == doctest::Approx(recompute).epsilon(1e-12));

    CHECK(quadratic_variation(diag, 0, 0.0) == 0.0);
    CHECK_THROWS_AS(quadratic_variation(diag, 0, 2.0), std::out_of_range);

    // V vanishes exactly at step boundaries, and is nonzero just after
    CHECK(v_remainder_at(diag, 0, 0.2) == 0.0);  // 0.2 * 50 = 10 exactly
    CHECK(v_remainder_at(diag, 0, 0.21) != 0.0);

    const auto traces = remainder_traces(diag, 0);
    CHECK(traces.v_sup > 0.0);
    CHECK(traces.r1_sup > 0.0);
}

TEST_CASE("single-point data law gives identically zero increments") {
    const auto dist = DataDistribution::make(1, {0.5}, {0.3}, {1.0}, 1.0);
    const auto act = Activation::make_tanh();
    auto config = small_config(30);
    const std::vector<double> grid{1.0};
    const auto dom = SobolevDomain::from_support(2, 3.0, 0);
    std::vector<SineMode> fields{SineMode({1, 1}, dom.box_b).unit(0)};
    MartingaleDiagnostics diag;
    run_sgd_diag<SineMode>(config, dist, act, grid, fields, &diag);
    CHECK(quadratic_variation(diag, 0, 1.0) == 0.0);
}

TEST_CASE("V trace scales like 1/N under the shared-seed protocol") {
    const auto dist = three_point();
    const auto act = Activation::make_tanh();
    const auto dom = SobolevDomain::from_support(2, 4.0, 0);
    std::vector<SineMode> fields{SineMode({1, 1}, dom.box_b).unit(0)};

    std::vector<double> n_values{250, 500, 1000, 2000};
    std::vector<double> v_sups;
    for (double nv : n_values) {
        auto config = small_config(static_cast<std::size_t>(nv));
        config.seed = 2024;  // shared data/init streams across widths
        const std::vector<double> grid{1.0};
        MartingaleDiagnostics diag;
        run_sgd_diag<SineMode>(config, dist, act, grid, fields, &diag);
        v_sups.push_back(remainder_traces(diag, 0).v_sup);
    }
    const RateFit fit = rate_fit(n_values, v_sups);
    CHECK(fit.slope > -1.3);
    CHECK(fit.slope < -0.7);
}

TEST_CASE("non-finite updates abort with an overflow error") {
    const auto act = Activation::make_custom(
        [](double u) { return std::exp(u); }, [](double u) { return std::exp(u); },
        [](double u) { return std::exp(u); }, 1e308, 1e308, 1e308);
    const auto dist = DataDistribution::make(1, {1.0}, {1.0}, {1.0}, 1.0);
    RunConfig config;
    config.n = 1;
    config.horizon = 5.0;
    config.alpha = 1e300;
    config.seed = 1;
    config.d = 1;
    config.init.c_lo = 1e154;
    config.init.c_hi = 1e154;
    config.init.w_lo = {300.0};
    config.init.w_hi = {300.0};
    const std::vector<double> grid{5.0};
    CHECK_THROWS_AS(run_sgd(config, dist, act, grid), std::overflow_error);
}

TEST_SUITE_END();
