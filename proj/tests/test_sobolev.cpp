#include <doctest.h>

#include <cmath>

#include "mfsgd/sobolev.hpp"

using namespace mfsgd;

namespace {

// Quadrature oracle for the W^{J,2} inner product of two tensor sine modes:
// per-axis integrals of k-th derivative products by composite Gauss-Legendre,
// assembled over all multi-indices |k| <= J. Independent of the closed-form
// norm path.
double axis_derivative_integral(const QuadratureRule& rule, double box_b, int a, int b, int k) {
    const double om_a = a * std::numbers::pi / (2.0 * box_b);
    const double om_b = b * std::numbers::pi / (2.0 * box_b);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double z = rule.nodes[i];
        const double da = std::pow(om_a, k) * std::sin(om_a * (z + box_b) + k * std::numbers::pi / 2.0);
        const double db = std::pow(om_b, k) * std::sin(om_b * (z + box_b) + k * std::numbers::pi / 2.0);
        acc += rule.weights[i] * da * db;
    }
    return acc;
}

double inner_product_quadrature(const SineMode& f, const SineMode& g, int order_j,
                                const QuadratureRule& rule) {
    const int dim = f.dim();
    const double box_b = f.box_b;
    // axis tables I_k[axis] for this pair
    std::vector<std::vector<double>> table(static_cast<std::size_t>(dim));
    for (int ax = 0; ax < dim; ++ax) {
        for (int k = 0; k <= order_j; ++k) {
            table[static_cast<std::size_t>(ax)].push_back(axis_derivative_integral(
                rule, box_b, f.index[static_cast<std::size_t>(ax)],
                g.index[static_cast<std::size_t>(ax)], k));
        }
    }
    // sum over multi-indices |k| <= J of products (D = 2 here)
    REQUIRE(dim == 2);
    double total = 0.0;
    for (int k1 = 0; k1 <= order_j; ++k1) {
        for (int k2 = 0; k1 + k2 <= order_j; ++k2) {
            total += table[0][static_cast<std::size_t>(k1)] * table[1][static_cast<std::size_t>(k2)];
        }
    }
    return f.scale * g.scale * total;
}

ParticleEnsemble point_mass(double c, double w) {
    ParticleEnsemble ens;
    ens.d = 1;
    ens.c = {c};
    ens.w = {w};
    ens.update_observed_bound();
    return ens;
}

}  // namespace

TEST_SUITE_BEGIN("sobolev");

TEST_CASE("domain construction") {
    const auto dom = SobolevDomain::from_support(2, 2.0, 6);
    CHECK(dom.box_b == doctest::Approx(3.0 * std::sqrt(2.0) * 2.0).epsilon(1e-15));
    CHECK(SobolevDomain::order_report(2) == 10);
    CHECK(SobolevDomain::order_uniform_bound(2) == 6);
    CHECK(SobolevDomain::order_embedding(2) == 4);
}

TEST_CASE("bump function plateau, support and midpoint") {
    const BumpFunction b{1.0};
    CHECK(b.value_radial(0.5) == 1.0);
    CHECK(b.value_radial(2.5) == 0.0);
    CHECK(b.value_radial(1.5) == doctest::Approx(0.5).epsilon(1e-15));
    for (int i = 0; i <= 64; ++i) {
        const double rho = 3.0 * i / 64.0;
        const double v = b.value_radial(rho);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (rho <= 1.0) CHECK(v == 1.0);
        if (rho >= 2.0) CHECK(v == 0.0);
    }
}

TEST_CASE("bump function is numerically smooth across the seams") {
    const BumpFunction b{1.0};
    const double step = 1e-4;
    for (double seam : {1.0, 2.0}) {
        const double left = (b.value_radial(seam) - b.value_radial(seam - step)) / step;
        const double right = (b.value_radial(seam + step) - b.value_radial(seam)) / step;
        CHECK(std::abs(left - right) <= 1e-4);
    }
}

TEST_CASE("basis norm closed form matches the quadrature oracle in 1-D") {
    const double box_b = 5.0;
    const auto rule = composite_gauss_legendre(-box_b, box_b, 32, 8);
    SineMode mode({1}, box_b);

    // J = 0: ||e||_0 = sqrt(B)
    CHECK(mode.sobolev_norm(0) == doctest::Approx(std::sqrt(box_b)).epsilon(1e-13));
    double quad0 = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double s = std::sin(std::numbers::pi * (rule.nodes[i] + box_b) / (2.0 * box_b));
        quad0 += rule.weights[i] * s * s;
    }
    CHECK(mode.sobolev_norm(0) == doctest::Approx(std::sqrt(quad0)).epsilon(1e-12));

    // J = 1, a = 1: sqrt(B + B (pi/(2B))^2)
    const double om = std::numbers::pi / (2.0 * box_b);
    CHECK(mode.sobolev_norm(1) ==
          doctest::Approx(std::sqrt(box_b + box_b * om * om)).epsilon(1e-13));
    const double quad1 = quad0 + axis_derivative_integral(rule, box_b, 1, 1, 1);
    CHECK(mode.sobolev_norm(1) == doctest::Approx(std::sqrt(quad1)).epsilon(1e-12));
}

TEST_CASE("basis norm is strictly increasing in each index for J >= 1") {
    const double box_b = 4.0;
    for (int j : {1, 3, 6}) {
        double prev = 0.0;
        for (int a = 1; a <= 8; ++a) {
            const double cur = SineMode({a, 2}, box_b).sobolev_norm(j);
            CHECK(cur > prev);
            prev = cur;
        }
    }
}

TEST_CASE("first hundred normalized modes have identity Gram under quadrature") {
    const auto dom = SobolevDomain::from_support(2, 1.2, 6);
    const auto rule = composite_gauss_legendre(-dom.box_b, dom.box_b, 48, 8);
    std::vector<SineMode> modes;
    for (int a1 = 1; a1 <= 10; ++a1) {
        for (int a2 = 1; a2 <= 10; ++a2) {
            modes.push_back(SineMode({a1, a2}, dom.box_b).unit(dom.order));
        }
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        for (std::size_t j = i; j < modes.size(); ++j) {
            const double ip = inner_product_quadrature(modes[i], modes[j], dom.order, rule);
            const double target = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(ip - target));
        }
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("graded multi-index enumeration") {
    const auto idx = graded_multi_indices(2, 6);
    REQUIRE(idx.size() == 6);
    CHECK(idx[0] == std::vector<int>{1, 1});
    CHECK(idx[1] == std::vector<int>{1, 2});
    CHECK(idx[2] == std::vector<int>{2, 1});
    CHECK(idx[3] == std::vector<int>{1, 3});
    CHECK(idx[4] == std::vector<int>{2, 2});
    CHECK(idx[5] == std::vector<int>{3, 1});
}

TEST_CASE("sine mode gradient and hessian match finite differences") {
    const SineMode mode = SineMode({3, 2}, 4.0).unit(0);
    const double c = 0.7;
    const std::vector<double> w{-1.3};
    double dc;
    std::vector<double> dw(1);
    mode.gradient(c, w, dc, dw);
    const double step = 1e-6;
    auto val = [&](double cc, double ww) { return mode.value(cc, std::vector<double>{ww}); };
    CHECK(dc == doctest::Approx((val(c + step, w[0]) - val(c - step, w[0])) / (2 * step)).epsilon(1e-6));
    CHECK(dw[0] == doctest::Approx((val(c, w[0] + step) - val(c, w[0] - step)) / (2 * step)).epsilon(1e-6));

    double dcc;
    std::vector<double> dcw(1), dww(1);
    mode.hessian(c, w, dcc, dcw, dww);
    CHECK(dcc == doctest::Approx((val(c + step, w[0]) - 2 * val(c, w[0]) + val(c - step, w[0])) /
                                 (step * step))
                     .epsilon(1e-3));
    CHECK(dww[0] == doctest::Approx((val(c, w[0] + step) - 2 * val(c, w[0]) + val(c, w[0] - step)) /
                                    (step * step))
                        .epsilon(1e-3));
    const double cross = (val(c + step, w[0] + step) - val(c + step, w[0] - step) -
                          val(c - step, w[0] + step) + val(c - step, w[0] - step)) /
                         (4 * step * step);
    CHECK(dcw[0] == doctest::Approx(cross).epsilon(1e-4));
}

TEST_CASE("measure pairing: zero measure, point mass, two-point difference") {
    const auto dom = SobolevDomain::from_support(2, 1.5, 6);
    const SineMode mode = SineMode({2, 3}, dom.box_b).unit(dom.order);

    SignedParticleMeasure zero;
    CHECK(measure_pairing(zero, mode, dom).value == 0.0);

    const auto p1 = point_mass(0.4, -0.8);
    SignedParticleMeasure delta;
    delta.terms.push_back({1.0, &p1});
    CHECK(measure_pairing(delta, mode, dom).value ==
          doctest::Approx(mode.value(0.4, std::vector<double>{-0.8})).epsilon(1e-15));

    const auto p2 = point_mass(-0.2, 0.9);
    SignedParticleMeasure diff;
    diff.terms.push_back({1.0, &p1});
    diff.terms.push_back({-1.0, &p2});
    const double direct = mode.value(0.4, std::vector<double>{-0.8}) -
                          mode.value(-0.2, std::vector<double>{0.9});
    CHECK(measure_pairing(diff, mode, dom).value == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("pairing reports particles outside the support box") {
    const auto dom = SobolevDomain::from_support(2, 1.0, 6);
    const auto outside = point_mass(1.5, 0.0);
    SignedParticleMeasure nu;
    nu.terms.push_back({1.0, &outside});
    const auto res = measure_pairing(nu, SineMode({1, 1}, dom.box_b).unit(dom.order), dom);
    CHECK(res.outside_support == 1);
    CHECK(std::isfinite(res.value));
}

TEST_CASE("basis pairings agree with per-mode measure pairings") {
    const auto dom = SobolevDomain::from_support(2, 1.5, 6);
    const auto p1 = point_mass(0.3, 0.5);
    const auto p2 = point_mass(-0.4, 0.2);
    SignedParticleMeasure nu;
    nu.terms.push_back({2.0, &p1});
    nu.terms.push_back({-1.0, &p2});
    std::vector<SineMode> modes;
    const auto vals = basis_pairings(nu, dom, 3, dom.order, &modes, nullptr);
    REQUIRE(vals.size() == 9);
    REQUIRE(modes.size() == 9);
    for (std::size_t q = 0; q < modes.size(); ++q) {
        CHECK(vals[q] == doctest::Approx(measure_pairing(nu, modes[q], dom).value).epsilon(1e-11));
    }
}

TEST_CASE("dual norm: zero measure, monotone truncation, tail decay") {
    const auto dom = SobolevDomain::from_support(2, 1.5, 6);
    SignedParticleMeasure zero;
    CHECK(dual_norm_truncated(zero, dom, 4).value == 0.0);

    const auto p = point_mass(0.6, -0.3);
    SignedParticleMeasure delta;
    delta.terms.push_back({1.0, &p});
    double prev = 0.0;
    for (int a_max : {1, 2, 4, 8}) {
        const double v = dual_norm_truncated(delta, dom, a_max).value;
        CHECK(v >= prev);
        prev = v;
    }
    // at the reporting order the tail beyond a_max = 8 is negligible:
    // normalized pairings decay like prod_j omega_j^{-J}, checked by doubling
    const auto dom_big = SobolevDomain::from_support(2, 1.5, SobolevDomain::order_report(2));
    const double v8 = dual_norm_truncated(delta, dom_big, 8).value;
    const double v16 = dual_norm_truncated(delta, dom_big, 16).value;
    CHECK(std::abs(v16 - v8) < 1e-6);
    // the TV-based tail bound is conservative but must dominate the change
    const double tail = dual_norm_truncated(delta, dom_big, 8).tail_bound;
    CHECK(tail >= std::abs(v16 - v8));
    CHECK(tail < 1e-3);
}

TEST_CASE("bump-multiplied pairing equals plain pairing on supported measures") {
    const auto dom = SobolevDomain::from_support(2, 1.5, 6);
    const BumpFunction b{std::sqrt(2.0) * dom.c_o};
    const auto p1 = point_mass(0.9, -1.0);  // |c| + |w| < C_o ensures |z| < r
    SignedParticleMeasure nu;
    nu.terms.push_back({1.0, &p1});
    const SineMode mode = SineMode({4, 2}, dom.box_b).unit(dom.order);
    const ScalarField plain = mode.as_field();
    const ScalarField bumped = bump_multiply(b, plain);
    const double direct = pair_measure(p1, [&](double c, std::span<const double> w) {
        return plain.value(c, w);
    });
    const double via_bump = pair_measure(p1, [&](double c, std::span<const double> w) {
        return bumped.value(c, w);
    });
    CHECK(std::abs(direct - via_bump) <= 1e-12);
}

TEST_CASE("hilbert-schmidt ratio partial sums converge when J - L > D/2") {
    const auto dom = SobolevDomain::from_support(2, 1.5, 10);
    const int order_l = SobolevDomain::order_embedding(2);  // 4
    const int order_j = SobolevDomain::order_report(2);     // 10
    double prev = hs_ratio_partial_sum(dom, order_l, order_j, 2);
    double last_change = 1.0;
    for (int a_max : {4, 8, 16, 32}) {
        const double cur = hs_ratio_partial_sum(dom, order_l, order_j, a_max);
        CHECK(cur >= prev);
        last_change = (cur - prev) / cur;
        prev = cur;
    }
    CHECK(last_change < 1e-3);
}

TEST_CASE("gauss-legendre integrates polynomials exactly") {
    const auto rule = gauss_legendre(5);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        acc += rule.weights[i] * std::pow(rule.nodes[i], 8);
    }
    CHECK(acc == doctest::Approx(2.0 / 9.0).epsilon(1e-13));
    const auto comp = composite_gauss_legendre(0.0, 2.0, 4, 3);
    double lin = 0.0;
    for (std::size_t i = 0; i < comp.nodes.size(); ++i) lin += comp.weights[i] * comp.nodes[i];
    CHECK(lin == doctest::Approx(2.0).epsilon(1e-13));
}

TEST_SUITE_END();
