#include "fixtures.hpp"

#include "coneflow/errors.hpp"
#include "coneflow/flow.hpp"
#include "coneflow/initialdata.hpp"
#include "coneflow/selfcheck.hpp"

#include <doctest.h>

#include <cstring>

using namespace coneflow;
using fixtures::kPi;

namespace {

std::vector<double> uniform_times(double spacing, double T) {
    std::vector<double> t;
    for (int i = 1; i * spacing <= T + 1e-12; ++i) t.push_back(i * spacing);
    return t;
}

double cone_k(const grid::ModelSurface& s) {
    const double eps[] = {0.2, 0.1, 0.05};
    return background::select_k(s, fixtures::one_point(s), 0.5, eps, 4.0, 0.6, 0.0);
}

grid::Values smooth_sphere_datum(const grid::ModelSurface& s) {
    return grid::sample(s, [](double a, double b) { return 0.05 * std::cos(a) + 0.03 * std::sin(a) * std::cos(b); });
}

double sup_diff(std::span<const double> a, std::span<const double> b, double shift = 0.0) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i] - shift));
    return m;
}

}  // namespace

TEST_SUITE("flow") {

TEST_CASE("rhs on the flat torus and under constant shifts") {
    const auto flat = fixtures::flat_pack(fixtures::torus(32));
    CHECK(grid::max_abs(flow::rhs(flat, 0.1, grid::Values(flat.size(), 0.0))) == 0.0);

    auto s = fixtures::sphere(32);
    const auto pack = fixtures::cone_pack(s, 0.1, cone_k(*s));
    const auto phi = smooth_sphere_datum(*s);
    grid::Values shifted(phi);
    for (auto& v : shifted) v += 0.7;
    CHECK(sup_diff(flow::rhs(pack, 0.2, phi), flow::rhs(pack, 0.2, shifted)) <= 1e-12);
}

TEST_CASE("reduced and unreduced right-hand sides agree") {
    auto s = fixtures::sphere(32);
    const auto pack = fixtures::cone_pack(s, 0.05, cone_k(*s));
    const auto phi = smooth_sphere_datum(*s);
    // The two forms differ by rounding in ddc(phi + k chi) - k ddc chi, which scales with k |ddc chi| / omega.
    double cond = 1.0;
    for (std::size_t p = 0; p < pack.size(); ++p) cond = std::max(cond, pack.params.k * std::abs(pack.ddc_chi[p]) / pack.omega[p]);
    MESSAGE("conditioning factor " << cond);
    for (double t : {0.0, 0.3, 0.6}) {
        const auto reduced = flow::rhs(pack, t, phi);
        const auto unreduced = flow::rhs_unreduced(pack, t, flow::unreduced_potential(pack, phi));
        CHECK(sup_diff(reduced, unreduced) <= 1e-12 * cond);
    }
}

TEST_CASE("non-positive metric is a positivity error") {
    auto s = fixtures::sphere(32);
    const auto pack = fixtures::cone_pack(s, 0.1, cone_k(*s));
    const auto bad = grid::sample(*s, [](double a, double) { return 5.0 * std::cos(a); });
    CHECK_THROWS_AS(flow::rhs(pack, 0.0, bad), PositivityError);
    CHECK_THROWS_AS(flow::make_state(pack, 0.0, bad), PositivityError);
}

TEST_CASE("stationary torus state does not move") {
    const auto pack = fixtures::flat_pack(fixtures::torus(32));
    const auto state = flow::make_state(pack, 0.0, grid::Values(pack.size(), 0.0));
    for (auto scheme : {flow::Scheme::SemiImplicitNewton, flow::Scheme::ExplicitRK2}) {
        flow::StepControl sc;
        sc.scheme = scheme;
        const auto next = flow::step(pack, state, sc, 1e-3);
        CHECK(next.t > 0.0);
        CHECK(grid::max_abs(next.phi) == 0.0);
    }
    const auto times = uniform_times(0.05, 0.5);
    const auto traj = flow::run_flow(pack, 1, grid::Values(pack.size(), 0.0), {}, times);
    CHECK(traj.termination == flow::Termination::ReachedT);
    for (const auto& snap : traj.snapshots) REQUIRE(grid::max_abs(snap.phi) == 0.0);
}

TEST_CASE("heat-equation linearization on the torus") {
    // V = 1/(4 pi) makes the linearized operator the Euclidean Laplacian.
    auto s = fixtures::torus(32, 1.0 / (4 * kPi));
    const auto pack = fixtures::flat_pack(s, 0.1);
    const auto phi0 = grid::sample(*s, [](double x, double) { return 0.01 * std::cos(2 * kPi * x); });
    flow::StepControl sc;
    sc.dt_init = 1e-4;
    sc.dt_max = 1e-4;
    sc.growth = 1.0;
    sc.dt_min = 1e-7;
    const double times[] = {0.01, 0.05};
    const auto traj = flow::run_flow(pack, 1, phi0, sc, times);
    const double a1 = traj.series[0].osc_phi / 2, a2 = traj.series[1].osc_phi / 2;
    const double rate = std::log(a1 / a2) / 0.04;
    CHECK(rate == doctest::Approx(4 * kPi * kPi).epsilon(0.05));
}

TEST_CASE("both schemes agree under dt refinement") {
    auto s = fixtures::torus(32, 1.0 / (4 * kPi));
    const auto pack = fixtures::flat_pack(s, 0.1);
    const auto phi0 = grid::sample(*s, [](double x, double y) { return 0.01 * std::cos(2 * kPi * x) + 0.005 * std::sin(2 * kPi * y); });
    const double times[] = {0.05};
    flow::StepControl newton;
    newton.dt_init = newton.dt_max = 2.5e-5;
    newton.growth = 1.0;
    newton.dt_min = 1e-8;
    flow::StepControl rk;
    rk.scheme = flow::Scheme::ExplicitRK2;
    rk.dt_init = 1e-5;
    rk.dt_max = 2.5e-5;
    rk.dt_min = 1e-9;
    rk.rk_tolerance = 1e-9;
    const auto a = flow::run_flow(pack, 1, phi0, newton, times);
    const auto b = flow::run_flow(pack, 1, phi0, rk, times);
    CHECK(sup_diff(a.snapshots[0].phi, b.snapshots[0].phi) <= 1e-4);
}

TEST_CASE("dt refinement order of the implicit scheme") {
    const auto r = selfcheck::dt_refinement_order();
    CHECK(r.pass);
    // Halving dt shrinks the change by at least 1.8.
    CHECK(std::pow(2.0, r.value) >= 1.8);
}

TEST_CASE("sphere cone run reaches T with positive metric") {
    auto s = fixtures::sphere(32);
    const auto div = fixtures::one_point(*s);
    const double eps[] = {0.1};
    const double k = background::select_k(*s, div, 0.5, eps, 16.0, 1.0, 0.0);
    const auto pack = fixtures::cone_pack(s, 0.1, k, 1.0);
    const auto traj = flow::run_flow(pack, 1, smooth_sphere_datum(*s), {}, uniform_times(0.05, 1.0));
    CHECK(traj.termination == flow::Termination::ReachedT);
    REQUIRE(traj.snapshots.size() == 20);
    CHECK(traj.snapshots.back().t == doctest::Approx(1.0));
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& row : traj.series) {
        REQUIRE(row.min_ratio > 0.0);
        if (row.t >= 0.1) lo = std::min(lo, row.min_ratio);
    }
    CHECK(lo > 0.05);
    // Cached time derivative matches a fresh evaluation.
    const auto& last = traj.snapshots.back();
    CHECK(sup_diff(last.phi_dot, flow::rhs(pack, last.t, last.phi)) <= 1e-12);
    // Snapshots store the reduced potential; t = 0 holds phi_j - k chi.
    grid::Values start(smooth_sphere_datum(*s));
    for (std::size_t p = 0; p < start.size(); ++p) start[p] -= k * pack.chi[p];
    CHECK(sup_diff(traj.initial.phi, start) == 0.0);
}

TEST_CASE("constant shifts are carried along exactly") {
    auto s = fixtures::sphere(32);
    const auto pack = fixtures::cone_pack(s, 0.1, cone_k(*s));
    const auto phi0 = smooth_sphere_datum(*s);
    grid::Values up(phi0);
    for (auto& v : up) v += 1.0;
    const auto times = uniform_times(0.05, 0.6);
    const auto a = flow::run_flow(pack, 1, phi0, {}, times);
    const auto b = flow::run_flow(pack, 1, up, {}, times);
    REQUIRE(a.snapshots.size() == b.snapshots.size());
    for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
        CHECK(a.snapshots[i].t == b.snapshots[i].t);
        CHECK(sup_diff(b.snapshots[i].phi, a.snapshots[i].phi, 1.0) <= 1e-10);
    }
}

TEST_CASE("runs are deterministic") {
    auto s = fixtures::sphere(32);
    const auto pack = fixtures::cone_pack(s, 0.05, cone_k(*s));
    const auto times = uniform_times(0.1, 0.6);
    const auto a = flow::run_flow(pack, 1, smooth_sphere_datum(*s), {}, times);
    const auto b = flow::run_flow(pack, 1, smooth_sphere_datum(*s), {}, times);
    REQUIRE(a.series.size() == b.series.size());
    for (std::size_t i = 0; i < a.series.size(); ++i)
        CHECK(std::memcmp(&a.series[i], &b.series[i], sizeof(flow::SeriesRow)) == 0);
    CHECK(a.steps == b.steps);
    CHECK(a.snapshots.back().phi == b.snapshots.back().phi);
}

TEST_CASE("log pole control loses positivity") {
    auto s = fixtures::sphere(32);
    const auto div = fixtures::one_point(*s);
    const auto d = initial::make_initial(s, div, initial::parse_datum("log_pole(c=0.2)"));
    const int js[] = {8};
    const auto lad = initial::truncation_ladder(d, js, 0.1);
    const auto pack = fixtures::cone_pack(s, 0.1, cone_k(*s));
    const auto traj = flow::run_flow(pack, 8, lad.levels[0].phi, {}, uniform_times(0.05, 0.6));
    CHECK(traj.termination != flow::Termination::ReachedT);
    CHECK_FALSE(traj.note.empty());
}

TEST_CASE("checkpoint and step-control validation") {
    const auto pack = fixtures::flat_pack(fixtures::torus(16));
    const grid::Values z(pack.size(), 0.0);
    const double unordered[] = {0.2, 0.1};
    CHECK_THROWS_AS(flow::run_flow(pack, 1, z, {}, unordered), ConfigError);
    const double late[] = {0.6};
    CHECK_THROWS_AS(flow::run_flow(pack, 1, z, {}, late), ConfigError);
    flow::StepControl sc;
    sc.dt_min = 1.0;
    CHECK_THROWS_AS(sc.validate(), ConfigError);
    CHECK(flow::scheme_from_string("rk2") == flow::Scheme::ExplicitRK2);
    CHECK_THROWS_AS(flow::scheme_from_string("euler"), ConfigError);
    CHECK(flow::termination_from_string(flow::to_string(flow::Termination::StepFloor)) == flow::Termination::StepFloor);
}

TEST_CASE("static Monge-Ampere solves") {
    auto t = fixtures::torus(32);
    const auto w = t->area_weight();
    const grid::Values data(w.begin(), w.end());
    const auto trivial = flow::static_ma_solve(*t, data, grid::Values(t->size(), 0.0), data);
    CHECK(grid::max_abs(trivial.u) <= 1e-12);
    CHECK(trivial.residual <= 1e-9);

    const auto manufactured = selfcheck::manufactured_static_solve();
    CHECK(manufactured.value <= 1e-8);

    auto s = fixtures::sphere(32);
    const auto div = fixtures::one_point(*s);
    const auto sw = s->area_weight();
    const grid::Values omega(sw.begin(), sw.end());
    std::vector<double> sups;
    for (double eps : {0.1, 0.05}) {
        grid::Values weighted(omega);
        for (std::size_t p = 0; p < omega.size(); ++p) weighted[p] /= std::sqrt(eps * eps + div.s_h_sq[p]);
        const auto sol = flow::static_ma_solve(*s, omega, grid::Values(s->size(), 0.0), weighted);
        CHECK(sol.residual <= 1e-9);
        CHECK(std::isfinite(grid::max_abs(sol.u)));
        sups.push_back(grid::max_abs(sol.u));
    }
    CHECK(std::abs(sups[1] - sups[0]) <= 0.25 * sups[0]);

    grid::Values bad(omega);
    bad[3] = -1.0;
    CHECK_THROWS_AS(flow::static_ma_solve(*s, omega, grid::Values(s->size(), 0.0), bad), ConfigError);
}

TEST_CASE("time reparametrization view") {
    // Constant psi: u(t) = C e^t c exactly.
    const auto flat = fixtures::flat_pack(fixtures::torus(16), 0.9);
    const auto times = uniform_times(0.01, 0.9);
    const auto steady = flow::run_flow(flat, 1, grid::Values(flat.size(), 0.3), {}, times);
    const flow::ReparamView view(flat, steady, 2.0);
    for (double t : {0.0, 0.1, 0.5}) {
        const auto u = view.u(t);
        for (double v : u) REQUIRE(v == doctest::Approx(2.0 * std::exp(t) * 0.3).epsilon(1e-14));
    }

    auto s = fixtures::sphere(32);
    const auto pack = fixtures::cone_pack(s, 0.1, cone_k(*s));
    const auto traj = flow::run_flow(pack, 1, smooth_sphere_datum(*s), {}, uniform_times(0.01, 0.6));
    const flow::ReparamView rv(pack, traj, 1.0);
    const auto u0 = rv.u(0.0), psi0 = rv.psi(0.0);
    for (std::size_t p = 0; p < u0.size(); ++p) REQUIRE(u0[p] == doctest::Approx(psi0[p]).epsilon(1e-14));
    CHECK(rv.pulled_back_time(0.3) == doctest::Approx(1.0 - std::exp(-0.3)));
    CHECK(rv.max_time() >= 0.6);

    // Chain rule: du/dt = u + psi_dot(pulled-back time), up to the checkpoint spacing.
    const double t = 0.25, h = 1e-3;
    const auto up = rv.u(t + h), um = rv.u(t - h), uc = rv.u(t), pd = rv.psi_dot(rv.pulled_back_time(t));
    double err = 0.0, scale = 0.0;
    for (std::size_t p = 0; p < uc.size(); ++p) {
        const double fd = (up[p] - um[p]) / (2 * h);
        err = std::max(err, std::abs(fd - (uc[p] + pd[p])));
        scale = std::max(scale, std::abs(uc[p] + pd[p]));
    }
    CHECK(err <= 0.05 * scale);

    CHECK_THROWS_AS(rv.u(5.0), ConfigError);
    CHECK_THROWS_AS(flow::ReparamView(pack, traj, 0.5), ConfigError);
}

}
