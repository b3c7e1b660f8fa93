#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "mfsgd/core.hpp"
#include "mfsgd/rng.hpp"

using namespace mfsgd;

namespace {

ParticleEnsemble make_ensemble(int d, std::vector<double> c, std::vector<double> w) {
    ParticleEnsemble ens;
    ens.d = d;
    ens.c = std::move(c);
    ens.w = std::move(w);
    ens.update_observed_bound();
    return ens;
}

}  // namespace

TEST_SUITE_BEGIN("core");

TEST_CASE("network_eval antisymmetric coefficients cancel") {
    const auto act = Activation::make_tanh();
    const auto ens = make_ensemble(2, {1.0, -1.0}, {0.3, -0.7, 0.3, -0.7});
    const std::vector<double> x{1.5, 0.25};
    CHECK(network_eval(ens, x, act) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("network_eval tanh at zero argument") {
    const auto act = Activation::make_tanh();
    const auto ens = make_ensemble(1, {2.0}, {0.0});
    const std::vector<double> x{1.0};
    CHECK(network_eval(ens, x, act) == 0.0);
}

TEST_CASE("network_eval matches direct summation oracle") {
    const auto act = Activation::make_tanh();
    Rng rng(derive_key(7, {tag64("core-test")}));
    const int d = 3;
    std::vector<double> c(3), w(9);
    for (auto& v : c) v = rng.uniform(-2.0, 2.0);
    for (auto& v : w) v = rng.uniform(-2.0, 2.0);
    const auto ens = make_ensemble(d, c, w);
    const std::vector<double> x{0.4, -1.1, 0.9};
    double direct = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double u = 0.0;
        for (int j = 0; j < d; ++j) u += w[i * 3 + j] * x[static_cast<std::size_t>(j)];
        direct += c[i] * std::tanh(u);
    }
    direct /= 3.0;
    CHECK(network_eval(ens, x, act) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("network_eval rejects dimension mismatch") {
    const auto act = Activation::make_tanh();
    const auto ens = make_ensemble(2, {1.0}, {0.1, 0.2});
    const std::vector<double> x{1.0};
    CHECK_THROWS_AS(network_eval(ens, x, act), std::invalid_argument);
}

TEST_CASE("network_eval linear in c") {
    const auto act = Activation::make_tanh();
    Rng rng(derive_key(11, {tag64("core-test")}));
    std::vector<double> c(5), w(5);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    const std::vector<double> x{0.8};
    const auto base = network_eval(make_ensemble(1, c, w), x, act);
    for (double lambda : {-1.0, 0.0, 2.0}) {
        auto scaled = c;
        for (auto& v : scaled) v *= lambda;
        CHECK(network_eval(make_ensemble(1, scaled, w), x, act) ==
              doctest::Approx(lambda * base).epsilon(1e-13));
    }
}

TEST_CASE("pair_measure of the constant one is exactly one") {
    Rng rng(derive_key(3, {tag64("core-test")}));
    std::vector<double> c(100000), w(100000);
    for (auto& v : c) v = rng.uniform(-5.0, 5.0);
    for (auto& v : w) v = rng.uniform(-5.0, 5.0);
    const auto ens = make_ensemble(1, c, w);
    const double one = pair_measure(ens, [](double, std::span<const double>) { return 1.0; });
    CHECK(std::abs(one - 1.0) <= 1e-14);
}

TEST_CASE("pair_measure hand sum") {
    const auto ens = make_ensemble(1, {1.0, 3.0}, {0.0, 0.0});
    CHECK(pair_measure(ens, [](double c, std::span<const double>) { return c; }) ==
          doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("pair_measure of c sigma(w.x) equals network_eval") {
    const auto act = Activation::make_tanh();
    Rng rng(derive_key(5, {tag64("core-test")}));
    std::vector<double> c(17), w(17 * 2);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    const auto ens = make_ensemble(2, c, w);
    const std::vector<double> x{0.3, -0.6};
    const double paired = pair_measure(ens, [&](double ci, std::span<const double> wi) {
        return ci * act.value(dot(wi, x));
    });
    CHECK(paired == doctest::Approx(network_eval(ens, x, act)).epsilon(1e-12));
}

TEST_CASE("sample_datum degenerate and zero-weight cases") {
    Rng rng(derive_key(9, {tag64("core-test")}));
    const auto single = DataDistribution::make(1, {0.5}, {1.0}, {1.0}, 1.0);
    for (int k = 0; k < 100; ++k) CHECK(sample_datum(single, rng).index == 0);

    const auto skewed = DataDistribution::make(1, {0.5, -0.5}, {1.0, -1.0}, {1.0, 0.0}, 1.0);
    for (int k = 0; k < 1000; ++k) CHECK(sample_datum(skewed, rng).index == 0);
}

TEST_CASE("sample_datum law of large numbers") {
    Rng rng(derive_key(13, {tag64("core-test")}));
    const auto dist = DataDistribution::make(1, {0.5, -0.5}, {1.0, -1.0}, {0.5, 0.5}, 1.0);
    const int draws = 1000000;
    int first = 0;
    for (int k = 0; k < draws; ++k) {
        if (sample_datum(dist, rng).index == 0) ++first;
    }
    CHECK(std::abs(static_cast<double>(first) / draws - 0.5) < 0.01);
}

TEST_CASE("sampling is reproducible bitwise") {
    const auto dist = DataDistribution::make(1, {0.5, -0.5, 0.0}, {1.0, -1.0, 0.3},
                                             {0.2, 0.5, 0.3}, 1.0);
    Rng a(derive_key(42, {tag64("data")}));
    Rng b(derive_key(42, {tag64("data")}));
    for (int k = 0; k < 5000; ++k) {
        CHECK(sample_datum(dist, a).index == sample_datum(dist, b).index);
    }
}

TEST_CASE("data distribution invariants") {
    CHECK_THROWS_AS(DataDistribution::make(1, {0.5}, {1.0}, {0.9}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(DataDistribution::make(1, {2.5}, {1.0}, {1.0}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(DataDistribution::make(1, {0.5}, {3.0}, {1.0}, 1.0), std::invalid_argument);
    CHECK_NOTHROW(DataDistribution::make(1, {0.5}, {1.0}, {1.0 + 1e-13}, 1.0));
}

TEST_CASE("activation derivative matches finite differences") {
    for (const auto& act : {Activation::make_tanh(), Activation::make_sigmoid()}) {
        const double step = 1e-5;
        for (int i = 0; i < 100; ++i) {
            const double u = -5.0 + 10.0 * i / 99.0;
            const double fd = (act.value(u + step) - act.value(u - step)) / (2.0 * step);
            const double d = act.deriv(u);
            CHECK(std::abs(d - fd) <= 1e-6 * std::max(1.0, std::abs(d)));
        }
    }
}

TEST_CASE("activation declared bounds hold on sampled inputs") {
    Rng rng(derive_key(17, {tag64("core-test")}));
    for (const auto& act : {Activation::make_tanh(), Activation::make_sigmoid()}) {
        for (int k = 0; k < 2000; ++k) {
            const double u = rng.uniform(-20.0, 20.0);
            CHECK(std::abs(act.value(u)) <= act.bound_value + 1e-12);
            CHECK(std::abs(act.deriv(u)) <= act.bound_deriv + 1e-12);
            CHECK(std::abs(act.second(u)) <= act.bound_second + 1e-12);
        }
    }
}

TEST_CASE("observed bound is non-decreasing") {
    auto ens = make_ensemble(1, {1.0}, {2.0});
    const double b0 = ens.observed_bound;
    CHECK(b0 == doctest::Approx(3.0));
    ens.c[0] = 0.1;
    ens.w[0] = 0.1;
    ens.update_observed_bound();
    CHECK(ens.observed_bound == b0);
}

TEST_CASE("initial ensemble draws are reproducible and within the law") {
    InitLaw law;
    law.c_lo = -1.0;
    law.c_hi = 2.0;
    law.w_lo = {-0.5};
    law.w_hi = {0.5};
    Rng a(derive_key(21, {tag64("init")}));
    Rng b(derive_key(21, {tag64("init")}));
    const auto e1 = draw_initial_ensemble(500, 1, law, a);
    const auto e2 = draw_initial_ensemble(500, 1, law, b);
    CHECK(e1.c == e2.c);
    CHECK(e1.w == e2.w);
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1.c[i] >= -1.0);
        CHECK(e1.c[i] <= 2.0);
        CHECK(std::abs(e1.w[i]) <= 0.5);
    }
}

TEST_CASE("compensated sum keeps tiny terms") {
    CompensatedSum acc;
    acc.add(1e16);
    for (int i = 0; i < 10000; ++i) acc.add(1e-3);
    acc.add(-1e16);
    CHECK(acc.value() == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_SUITE_END();
