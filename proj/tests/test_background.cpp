#include "fixtures.hpp"
#include "tmax_cases.hpp"

#include "coneflow/errors.hpp"

#include <doctest.h>

using namespace coneflow;
using fixtures::kPi;

namespace {

// Composite midpoint rule with many panels; independent of the library quadrature.
double chi_midpoint(double gamma, double eps, double x, int panels) {
    const double e2g = std::pow(eps * eps, gamma), h = x / panels;
    double sum = 0.0;
    for (int i = 0; i < panels; ++i) {
        const double r = (i + 0.5) * h;
        sum += (std::pow(eps * eps + r, gamma) - e2g) / r;
    }
    return sum * h / gamma;
}

// Richardson extrapolation of two midpoint sums (fourth order).
double chi_reference(double gamma, double eps, double x) {
    const double coarse = chi_midpoint(gamma, eps, x, 1'000'000), fine = chi_midpoint(gamma, eps, x, 2'000'000);
    return (4.0 * fine - coarse) / 3.0;
}

double min_ratio(std::span<const double> a, std::span<const double> b) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size(); ++i) m = std::min(m, a[i] / b[i]);
    return m;
}

}  // namespace

TEST_SUITE("background") {

TEST_CASE("maximal time matches the hand-derived table exactly") {
    for (const auto& c : kTmaxCases) {
        CAPTURE(c.volume);
        CAPTURE(c.m);
        CAPTURE(c.gamma);
        CAPTURE(c.eta);
        CHECK(background::compute_tmax(c.volume, c.c1, c.m, c.gamma, c.eta) == tmax_expected(c));
    }
    CHECK_THROWS_AS(background::compute_tmax(0.0, 2.0, 1, 0.5, 0.0), ConfigError);
    CHECK(background::c1_degree(grid::SurfaceKind::SphereP1) == 2.0);
    CHECK(background::c1_degree(grid::SurfaceKind::Torus) == 0.0);
}

TEST_CASE("chi closed forms and quadrature") {
    for (double eps : {0.0, 0.1, 0.7})
        for (double x : {0.0, 0.2, 1.0}) CHECK(background::cgp_chi_value(1.0, eps, x) == doctest::Approx(x).epsilon(1e-12));
    // eps = 0: (1/gamma) int_0^x r^(gamma-1) dr = x^gamma / gamma^2.
    CHECK(background::cgp_chi_value(0.5, 0.0, 0.25) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(background::cgp_chi_value(0.5, 0.0, 0.0) == 0.0);

    const double ref = chi_midpoint(0.5, 1.0, 1.0, 1'000'000);
    CHECK(std::abs(background::cgp_chi_value(0.5, 1.0, 1.0) - ref) <= 1e-8);
    for (double g : {0.2, 0.5, 0.9})
        for (double eps : {0.01, 0.1})
            for (double x : {1e-4, 0.3, 1.0}) {
                CAPTURE(g);
                CAPTURE(eps);
                CAPTURE(x);
                CHECK(std::abs(background::cgp_chi_value(g, eps, x) - chi_reference(g, eps, x)) <= 1e-8);
            }
    const double xs[] = {0.5};
    CHECK_THROWS_AS(background::cgp_chi(0.0, 0.1, xs), ConfigError);
    CHECK_THROWS_AS(background::cgp_chi(0.5, 1.5, xs), ConfigError);
}

TEST_CASE("chi is monotone, vanishes at the divisor and is bounded uniformly in eps") {
    double sup_over_eps = 0.0;
    for (double eps : {0.2, 0.1, 0.05, 0.025, 0.0}) {
        double prev = -1.0;
        for (int i = 0; i <= 200; ++i) {
            const double v = background::cgp_chi_value(0.5, eps, i / 200.0);
            REQUIRE(v >= prev);
            prev = v;
        }
        CHECK(background::cgp_chi_value(0.5, eps, 0.0) == 0.0);
        sup_over_eps = std::max(sup_over_eps, prev);
    }
    // The eps = 0 profile x^gamma / gamma^2 dominates the family.
    CHECK(sup_over_eps == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("calabi volume form") {
    auto t = fixtures::torus(32);
    const auto flat = background::calabi_volume_form(*t, grid::Values(t->size(), 0.0));
    CHECK(grid::sup(flat.h) - grid::inf(flat.h) <= 1e-12);
    CHECK(grid::integrate(*t, flat.omega_density) == doctest::Approx(1.0).epsilon(1e-12));

    auto s = fixtures::sphere(32);
    const auto ric = background::background_ricci(*s);
    CHECK(grid::integrate(*s, ric) == doctest::Approx(2.0).epsilon(1e-10));
    const auto ke = background::calabi_volume_form(*s, ric);
    const auto w = s->area_weight();
    for (std::size_t p = 0; p < s->size(); ++p) REQUIRE(ke.omega_density[p] == doctest::Approx(w[p]).epsilon(1e-8));
    const auto back = background::ricci_of_volume(*s, ke.omega_density);
    for (std::size_t p = 0; p < s->size(); ++p) REQUIRE(std::abs(back[p] - ric[p]) <= 1e-8);

    const auto bump = grid::sample(*s, [](double a, double b) { return 0.3 * std::cos(a) * std::cos(a) + 0.1 * std::sin(a) * std::cos(b); });
    const auto dbump = grid::ddc_density(*s, bump);
    grid::Values target(ric);
    for (std::size_t p = 0; p < s->size(); ++p) target[p] += dbump[p];
    const auto perturbed = background::calabi_volume_form(*s, target);
    const auto back2 = background::ricci_of_volume(*s, perturbed.omega_density);
    for (std::size_t p = 0; p < s->size(); ++p) REQUIRE(std::abs(back2[p] - target[p]) <= 1e-8);
    CHECK(grid::integrate(*s, perturbed.omega_density) == doctest::Approx(2.0).epsilon(1e-10));
    for (double f : perturbed.omega_density) REQUIRE(f > 0.0);

    grid::Values wrong(ric);
    for (auto& x : wrong) x *= 1.1;
    CHECK_THROWS_AS(background::calabi_volume_form(*s, wrong), ConfigError);
}

TEST_CASE("cone metric validity") {
    auto s = fixtures::sphere(32);
    const auto div = fixtures::one_point(*s);
    const auto w = s->area_weight();

    const auto tiny = background::cgp_metric(*s, div, 0.5, 0.1, 1e-9);
    CHECK(tiny.valid);
    for (std::size_t p = 0; p < s->size(); ++p) REQUIRE(tiny.density[p] == doctest::Approx(w[p]).epsilon(1e-6));

    const auto small = background::cgp_metric(*s, div, 0.5, 0.1, 0.05);
    CHECK(small.valid);
    CHECK(min_ratio(small.density, w) >= 0.5);

    const auto big = background::cgp_metric(*s, div, 0.5, 0.1, 50.0);
    CHECK_FALSE(big.valid);
    CHECK_FALSE(big.offending_nodes.empty());
    CHECK_THROWS_AS(background::cgp_metric(*s, div, 0.5, 0.1, 0.0), ConfigError);
}

TEST_CASE("k selection") {
    auto s = fixtures::sphere(32);
    const auto div = fixtures::one_point(*s);
    // Without a cone chi = |s|^2 for every eps, so the choice ignores the eps list.
    const double eps1[] = {0.2, 0.1}, eps2[] = {0.01};
    background::KSearch search;
    const double k1 = background::select_k(*s, div, 1.0, eps1, 4.0, 0.5, 0.0, search);
    CHECK(k1 == background::select_k(*s, div, 1.0, eps2, 4.0, 0.5, 0.0, search));
    background::KSearch low;
    low.k_max = k1 / 2;
    CHECK(background::select_k(*s, div, 1.0, eps1, 4.0, 0.5, 0.0, low) == low.k_max);

    const double eps[] = {0.1, 0.05, 0.02};
    const double k = background::select_k(*s, div, 0.5, eps, 4.0, 0.6, 0.0);
    CHECK(k > 0.0);
    CHECK(k < search.k_max);
    for (double e : eps) {
        CHECK(background::cgp_metric(*s, div, 0.5, e, k).valid);
        CHECK(background::cgp_metric(*s, div, 0.5, e, k / 2).valid);
    }
    // One grid step up must break validity or the sandwich for some epsilon.
    bool next_admissible = true;
    for (double e : eps) {
        const double up = k / search.shrink;
        if (!background::cgp_metric(*s, div, 0.5, e, up).valid) next_admissible = false;
        else if (background::sandwich_constant(fixtures::cone_pack(s, e, up, 0.6)) > 4.0) next_admissible = false;
    }
    CHECK_FALSE(next_admissible);
    CHECK_THROWS_AS(background::select_k(*s, div, 0.5, std::span<const double>{}, 4.0, 0.6, 0.0), ConfigError);

    background::KSearch strict;
    strict.k_floor = 0.5;
    CHECK_THROWS_AS(background::select_k(*s, div, 0.5, eps, 1.01, 0.6, 0.0, strict), ConfigError);
}

TEST_CASE("flat untwisted pack is trivial") {
    const auto pack = fixtures::flat_pack(fixtures::torus(32));
    CHECK(grid::max_abs(pack.nu_gamma) == 0.0);
    CHECK(grid::sup(pack.F_eps) - grid::inf(pack.F_eps) <= 1e-14);
    CHECK(grid::max_abs(pack.F_eps) <= 1e-14);
    const auto p0 = pack.omega_path_eps(0.0), p1 = pack.omega_path_eps(pack.params.T);
    for (std::size_t i = 0; i < p0.size(); ++i) REQUIRE(p0[i] == p1[i]);
    CHECK(pack.equivalence_constant == doctest::Approx(1.0));
    CHECK(std::isinf(pack.tmax));
}

TEST_CASE("gamma = 1 without the cone term gives F = h") {
    auto s = fixtures::sphere(32);
    background::FlowParams fp;
    fp.gamma = 1.0;
    fp.epsilon = 0.1;
    fp.k = 0.0;
    fp.T = 0.5;
    const auto pack = background::build_pack(s, fixtures::one_point(*s), fp);
    for (std::size_t p = 0; p < pack.size(); ++p) REQUIRE(pack.F_eps[p] == doctest::Approx(pack.h_gamma[p]).epsilon(1e-13));
    CHECK(grid::max_abs(pack.cone_log) == 0.0);
}

TEST_CASE("cone pack invariants") {
    auto s = fixtures::sphere(64);
    const auto div = fixtures::one_point(*s);
    const double eps[] = {0.2, 0.1, 0.05, 0.025};
    // At T = 1 the path ratio reaches 1 - 0.75 omega / omega_eps, so C = 4 is out of reach.
    const double k = background::select_k(*s, div, 0.5, eps, 16.0, 1.0, 0.0);
    std::vector<double> f_sup;
    for (double e : eps) {
        const auto pack = fixtures::cone_pack(s, e, k, 1.0);
        CHECK(pack.tmax == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
        CHECK(grid::integrate(*s, pack.nu_gamma) == doctest::Approx(-1.5).epsilon(1e-10));
        for (double t : {0.0, 0.25, 0.5, 1.0}) CHECK(grid::inf(pack.omega_path(t)) > 0.0);
        CHECK(std::isfinite(pack.F_sup_abs));
        CHECK(grid::inf(pack.chi) == 0.0);
        CHECK(pack.chi_sup <= 4.0);
        // Sandwich certificate at sampled times.
        const double C = pack.equivalence_constant;
        for (double t : {0.0, 0.3, 0.7, 1.0}) {
            const auto path = pack.omega_path_eps(t);
            for (std::size_t p = 0; p < pack.size(); ++p) {
                const double r = path[p] / pack.omega_cone_eps[p];
                REQUIRE(r <= C * (1 + 1e-12));
                REQUIRE(r >= 1 / C * (1 - 1e-12));
            }
        }
        double off = 0.0;
        for (std::size_t p = 0; p < pack.size(); ++p)
            if (p != div.nodes[0]) off = std::max(off, std::abs(pack.F_eps[p]));
        f_sup.push_back(off);
    }
    // Off the divisor node sup |F| saturates: increments shrink and the geometric tail stays finite.
    for (std::size_t i = 2; i < f_sup.size(); ++i) {
        const double prev = f_sup[i - 1] - f_sup[i - 2], inc = f_sup[i] - f_sup[i - 1];
        CHECK(inc < 0.8 * prev);
    }
    const double r = (f_sup[3] - f_sup[2]) / (f_sup[2] - f_sup[1]);
    CHECK(f_sup[3] + (f_sup[3] - f_sup[2]) * r / (1 - r) < 3.0);

    background::FlowParams fp;
    fp.gamma = 0.5;
    fp.T = 1.5;
    CHECK_THROWS_AS(background::build_pack(s, div, fp), ConfigError);
}

TEST_CASE("kappa perturbation must have zero integral") {
    auto s = fixtures::sphere(32);
    background::FlowParams fp;
    fp.gamma = 0.5;
    fp.k = 0.01;
    fp.T = 0.5;
    background::KappaChoice kc;
    kc.perturbation.assign(s->size(), 0.01);
    CHECK_THROWS_AS(background::build_pack(s, fixtures::one_point(*s), fp, kc), ConfigError);
    const auto w = s->area_weight();
    kc.perturbation = grid::sample(*s, [](double a, double) { return 0.05 * std::cos(a); });
    for (std::size_t p = 0; p < s->size(); ++p) kc.perturbation[p] *= w[p];
    const auto pack = background::build_pack(s, fixtures::one_point(*s), fp, kc);
    CHECK(grid::integrate(*s, pack.nu_gamma) == doctest::Approx(-1.5).epsilon(1e-10));
}

}
