#include "coneflow/selfcheck.hpp"

#include "coneflow/flow.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace coneflow::selfcheck {

namespace {

using grid::SurfaceKind;
using grid::Values;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string describe(const char* what, double a, double b) {
    std::ostringstream o;
    o << what << " " << a << " / " << b;
    return o.str();
}

// Smooth torus flow from 0.1 cos(2 pi x) with uniform steps.
Values torus_run(int n, double dt, double T) {
    auto s = grid::ModelSurface::build(SurfaceKind::Torus, n, 1.0);
    background::FlowParams fp;
    fp.gamma = 1.0;
    fp.epsilon = 0.1;
    fp.T = T;
    const auto pack = background::build_pack(s, {}, fp);
    const Values phi0 = grid::sample(*s, [](double a, double) { return 0.1 * std::cos(kTwoPi * a); });
    flow::StepControl sc;
    sc.dt_init = dt;
    sc.dt_max = dt;
    sc.dt_min = dt * 1e-3;
    sc.growth = 1.0;
    sc.newton_tolerance = 1e-13;
    const double cps[] = {T};
    const auto traj = flow::run_flow(pack, 0, phi0, sc, cps);
    return traj.snapshots.back().phi;
}

double max_diff_coarse(const Values& fine, int nf, const Values& coarse, int nc) {
    const int ratio = nf / nc;
    double m = 0.0;
    for (int r = 0; r < nc; ++r)
        for (int c = 0; c < nc; ++c)
            m = std::max(m, std::abs(coarse[std::size_t(r) * nc + c] -
                                     fine[std::size_t(r * ratio) * nf + std::size_t(c * ratio)]));
    return m;
}

}  // namespace

Result manufactured_static_solve(int resolution) {
    auto s = grid::ModelSurface::build(SurfaceKind::Torus, resolution, 1.0);
    const Values exact = grid::sample(*s, [](double a, double) { return 0.1 * std::cos(kTwoPi * a); });
    const auto w = s->area_weight();
    const Values d = grid::ddc_density(*s, exact);
    Values coupling(s->size()), data(w.begin(), w.end());
    for (std::size_t p = 0; p < s->size(); ++p) coupling[p] = std::log((w[p] + d[p]) / w[p]) - exact[p];
    const auto sol = flow::static_ma_solve(*s, data, coupling, data, 1e-12);
    double err = 0.0;
    for (std::size_t p = 0; p < s->size(); ++p) err = std::max(err, std::abs(sol.u[p] - exact[p]));
    return {"manufactured_static_solve", err, 1e-8, err <= 1e-8, describe("max error / tolerance", err, 1e-8)};
}

Result poisson_residual(int resolution) {
    auto s = grid::ModelSurface::build(SurfaceKind::SphereP1, resolution, 2.0);
    Values rhs = grid::sample(*s, [](double a, double b) {
        return std::cos(a) + 0.3 * std::sin(a) * std::sin(a) * std::cos(2.0 * b) + 0.2 * std::sin(a) * std::sin(b);
    });
    const double mean = grid::integrate_function(*s, rhs) / s->total_volume();
    for (auto& v : rhs) v -= mean;
    const Values u = grid::poisson_solve(*s, rhs);
    const Values lap = grid::laplacian(*s, u);
    double res = 0.0;
    for (std::size_t p = 0; p < s->size(); ++p) res = std::max(res, std::abs(lap[p] - rhs[p]));
    return {"poisson_residual", res, 1e-10, res <= 1e-10, describe("max residual / tolerance", res, 1e-10)};
}

Result dt_refinement_order() {
    const double T = 0.1;
    const Values a = torus_run(32, 0.01, T), b = torus_run(32, 0.005, T), c = torus_run(32, 0.0025, T);
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        d1 = std::max(d1, std::abs(a[p] - b[p]));
        d2 = std::max(d2, std::abs(b[p] - c[p]));
    }
    const double order = std::log2(d1 / d2);
    const bool pass = std::abs(order - 1.0) <= 0.2;
    std::ostringstream o;
    o << "differences " << d1 << ", " << d2 << " give order " << order << " (nominal 1)";
    return {"dt_refinement_order", order, 1.0, pass, o.str()};
}

Result grid_refinement_order() {
    const double T = 0.05, dt = 0.005;
    const Values a = torus_run(32, dt, T), b = torus_run(64, dt, T), c = torus_run(128, dt, T);
    const double d1 = max_diff_coarse(b, 64, a, 32);
    const double d2 = max_diff_coarse(c, 128, b, 64);
    const double order = std::log2(d1 / d2);
    const bool pass = std::abs(order - 2.0) <= 0.4;
    std::ostringstream o;
    o << "differences " << d1 << ", " << d2 << " give order " << order << " (nominal 2)";
    return {"grid_refinement_order", order, 2.0, pass, o.str()};
}

std::vector<Result> run_all() {
    return {manufactured_static_solve(), poisson_residual(), dt_refinement_order(), grid_refinement_order()};
}

}  // namespace coneflow::selfcheck
