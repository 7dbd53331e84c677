#include "fixtures.hpp"

#include "coneflow/errors.hpp"
#include "coneflow/initialdata.hpp"

#include <doctest.h>

#include <random>

using namespace coneflow;
using initial::DatumKind;

namespace {

initial::InitialDatum datum(grid::SurfaceHandle s, const std::string& text) {
    const auto div = fixtures::one_point(*s);
    return initial::make_initial(std::move(s), div, initial::parse_datum(text));
}

}  // namespace

TEST_SUITE("initialdata") {

TEST_CASE("datum catalog parsing") {
    const auto z = initial::parse_datum("zero_lelong(alpha=0.5, c=0.05)");
    CHECK(z.kind == DatumKind::ZeroLelongUnbounded);
    CHECK(z.get("alpha", 0) == 0.5);
    CHECK(z.get("c", 0) == 0.05);
    CHECK(initial::parse_datum(z.to_string()).params == z.params);
    CHECK(initial::parse_datum("smooth").kind == DatumKind::Smooth);
    CHECK(initial::parse_datum(" log_pole(c=0.2) ").get("c", 0) == 0.2);
    CHECK(initial::parse_datum("cone(k=0.1,gamma=0.5)").kind == DatumKind::DonaldsonCone);
    CHECK(initial::parse_datum("random(seed=7)").kind == DatumKind::Random);

    CHECK_THROWS_AS(initial::parse_datum("blob(c=1)"), ConfigError);
    CHECK_THROWS_AS(initial::parse_datum("log_pole(c=0.2"), ConfigError);
    CHECK_THROWS_AS(initial::parse_datum("log_pole(alpha=0.2)"), ConfigError);
    CHECK_THROWS_AS(initial::parse_datum("log_pole(c)"), ConfigError);
    CHECK_THROWS_AS(initial::parse_datum("log_pole(c=abc)"), ConfigError);
    CHECK_THROWS_AS(initial::parse_datum("log_pole(c=0.2x)"), ConfigError);
}

TEST_CASE("smooth zero datum") {
    auto s = fixtures::sphere(64);
    const auto d = datum(s, "smooth");
    CHECK(grid::max_abs(d.phi0.values) == 0.0);
    REQUIRE(d.lelong_estimate.size() == 1);
    CHECK(d.lelong_estimate[0] == 0.0);
    CHECK(std::isinf(d.integrability_estimate));
    CHECK(d.psh_margin == doctest::Approx(grid::inf(s->area_weight())).epsilon(1e-14));
    CHECK(d.psh_margin_relative == doctest::Approx(1.0).epsilon(1e-14));
}

namespace {

// Least-squares slope of the exact profile -c (-log|s|^2)^(1/2) + c against log r on the estimator's radii.
double window_slope(int n, double c) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (double r = 0.25; r >= 4.0 / n - 1e-15; r *= 0.5, ++m) {
        const double s2 = r * r / (1 + r * r), x = std::log(r);
        const double y = -c * std::sqrt(std::max(-std::log(s2), 1.0)) + c;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace

TEST_CASE("zero Lelong datum") {
    auto s = fixtures::sphere(64);
    const auto d = datum(s, "zero_lelong(alpha=0.5,c=0.05)");
    // At N = 64 the fit window [1/16, 1/4] sees the profile's true slope, which decays only like 1/sqrt(log r).
    CHECK(d.lelong_estimate.at(0) == doctest::Approx(window_slope(64, d.spec.get("c", 0))).epsilon(0.05));
    CHECK(d.lelong_estimate.at(0) < 0.15 * datum(s, "log_pole(c=0.2)").lelong_estimate.at(0));
    const auto fine = datum(fixtures::sphere(128), "zero_lelong(alpha=0.5,c=0.05)");
    CHECK(fine.lelong_estimate.at(0) <= 0.02);
    CHECK(fine.lelong_estimate.at(0) < d.lelong_estimate.at(0));
    CHECK(d.psh_margin_relative >= -initial::kPshTolerance);
    CHECK(std::isinf(d.integrability_estimate));
    CHECK(d.phi0.singular());
    CHECK(grid::is_admissible(d.phi0));
    // Unbounded below near the point, bounded above by c.
    CHECK(grid::sup(d.phi0.values) <= 0.05 + 1e-12);
    CHECK(grid::inf(d.phi0.values) < 0.0);
    CHECK_THROWS_AS(datum(s, "zero_lelong(alpha=1.5)"), ConfigError);
}

TEST_CASE("zero Lelong estimate decreases under refinement") {
    double prev = std::numeric_limits<double>::infinity();
    for (int n : {64, 128}) {
        auto s = fixtures::sphere(n);
        const auto div = fixtures::one_point(*s);
        // Pure -(-log|s|^2)^(1/2) profile without the psh rescaling.
        grid::Values f(s->size());
        for (std::size_t p = 0; p < f.size(); ++p)
            f[p] = div.s_h_sq[p] > 0 ? -std::sqrt(std::max(-std::log(div.s_h_sq[p]), 1.0)) : -10.0;
        const double nu = initial::lelong_estimate(*s, f, div.nodes[0]);
        CHECK(nu < prev);
        prev = nu;
    }
}

TEST_CASE("log pole Lelong number and Skoda sandwich") {
    auto s = fixtures::sphere(64);
    const auto d = datum(s, "log_pole(c=0.2)");
    const double nu = d.lelong_estimate.at(0);
    CHECK(nu >= 0.18);
    CHECK(nu <= 0.22);
    CHECK(std::abs(d.integrability_estimate - 1.0 / nu) <= 0.15 / nu);
}

TEST_CASE("Lelong estimate of elementary fields") {
    auto s = fixtures::sphere(64);
    const auto div = fixtures::one_point(*s);
    grid::Values pole(s->size());
    for (std::size_t p = 0; p < pole.size(); ++p) pole[p] = div.s_h_sq[p] > 0 ? 0.15 * std::log(div.s_h_sq[p]) : -20.0;  // 0.3 log|s|
    CHECK(initial::lelong_estimate(*s, pole, div.nodes[0]) == doctest::Approx(0.3).epsilon(0.05));

    const auto smooth = grid::sample(*s, [](double a, double b) { return std::cos(a) + 0.5 * std::sin(a) * std::sin(b); });
    CHECK(std::abs(initial::lelong_estimate(*s, smooth, div.nodes[0])) <= 0.01);
    CHECK(std::isinf(initial::integrability_index(*s, smooth, div.nodes[0], initial::default_probe_grid())));

    CHECK_FALSE(initial::diagnostics_resolvable(*fixtures::sphere(32)));
    CHECK(initial::diagnostics_resolvable(*s));
    auto coarse = fixtures::sphere(32);
    const auto cdiv = fixtures::one_point(*coarse);
    CHECK_THROWS_AS(initial::lelong_estimate(*coarse, grid::Values(coarse->size(), 0.0), cdiv.nodes[0]), ConfigError);
    const auto cd = initial::make_initial(coarse, cdiv, initial::parse_datum("log_pole(c=0.2)"));
    CHECK(std::isnan(cd.lelong_estimate.at(0)));
}

TEST_CASE("softmax bounds") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    const double ln2 = std::log(2.0);
    for (int i = 0; i < 10000; ++i) {
        const double a = u(rng), b = u(rng), sigma = 0.01 + std::abs(u(rng)) / 5;
        const double m = std::max(a, b), v = initial::softmax(a, b, sigma);
        REQUIRE(v >= m);
        REQUIRE(v <= m + sigma * ln2 + 1e-15);
    }
    for (double sigma : {1e-1, 1e-3, 1e-6}) CHECK(initial::softmax(-4.0, -4.0, sigma) == doctest::Approx(-4.0 + sigma * ln2));
    CHECK(initial::softmax(-4.0, -4.0, 0.0) == -4.0);
    CHECK(initial::softmax(-std::numeric_limits<double>::infinity(), -4.0, 0.1) == -4.0);
    CHECK(initial::softmax(1000.0, -1000.0, 1e-3) == 1000.0);
}

TEST_CASE("ladder of a bounded datum is inert") {
    auto s = fixtures::sphere(32);
    const auto d = initial::make_initial(s, {}, initial::parse_datum("smooth(amp=0.1)"));
    const int js[] = {2, 4, 8};
    const auto lad = initial::truncation_ladder(d, js, 0.1);
    REQUIRE(lad.levels.size() == 3);
    for (const auto& lvl : lad.levels)
        for (std::size_t p = 0; p < s->size(); ++p) {
            REQUIRE(lvl.phi[p] >= d.phi0.values[p]);
            REQUIRE(lvl.phi[p] - d.phi0.values[p] <= 0.1 * std::log(2.0));
        }
}

TEST_CASE("ladder invariants on singular data") {
    auto s = fixtures::sphere(64);
    for (const char* text : {"zero_lelong(alpha=0.5,c=0.05)", "log_pole(c=0.2)"}) {
        CAPTURE(text);
        const auto d = datum(s, text);
        const int js[] = {2, 4, 8, 16};
        const double sigma = 0.1;
        const auto lad = initial::truncation_ladder(d, js, sigma);
        const double top = grid::sup(d.phi0.values);
        for (std::size_t i = 0; i < lad.levels.size(); ++i) {
            const auto& lvl = lad.levels[i];
            for (std::size_t p = 0; p < s->size(); ++p) {
                REQUIRE(lvl.phi[p] >= -lvl.j - 1e-12);
                REQUIRE(lvl.phi[p] <= std::max(top, double(-lvl.j)) + sigma * std::log(2.0) + 1e-12);
                if (i > 0) REQUIRE(lvl.phi[p] <= lad.levels[i - 1].phi[p] + 1e-9);
            }
        }
    }
    const int bad[] = {4, 2};
    CHECK_THROWS_AS(initial::truncation_ladder(datum(s, "smooth"), bad, 0.1), ConfigError);
    const int ok[] = {2};
    CHECK_THROWS_AS(initial::truncation_ladder(datum(s, "smooth"), ok, 0.0), ConfigError);
}

TEST_CASE("log pole ladder converges away from the pole") {
    auto s = fixtures::sphere(64);
    const auto d = datum(s, "log_pole(c=0.2)");
    const auto div = fixtures::one_point(*s);
    const int js[] = {2, 4, 8};
    const auto lad = initial::truncation_ladder(d, js, 0.1);
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& lvl : lad.levels) {
        const double r_j = std::exp(-lvl.j / 0.2);
        double gap = 0.0;
        for (std::size_t p = 0; p < s->size(); ++p)
            if (div.s_h_sq[p] > r_j) gap = std::max(gap, lvl.phi[p] - d.phi0.values[p]);
        CHECK(gap <= prev);
        prev = gap;
    }
}

TEST_CASE("non-psh data are rejected") {
    auto s = fixtures::sphere(32);
    CHECK_THROWS_AS(initial::make_initial(s, {}, initial::parse_datum("smooth(amp=5)")), ConfigError);
    CHECK_THROWS_AS(initial::make_initial(s, {}, initial::parse_datum("log_pole(c=0.2)")), ConfigError);
}

}
