#include "coneflow/flow.hpp"

#include "coneflow/errors.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace coneflow::flow {

using background::BackgroundPack;

std::string to_string(Scheme s) { return s == Scheme::ExplicitRK2 ? "rk2" : "newton"; }

std::string to_string(Termination t) {
    switch (t) {
        case Termination::ReachedT: return "reached_T";
        case Termination::StepFloor: return "step_floor";
        case Termination::PositivityLoss: return "positivity_loss";
    }
    return "unknown";
}

Scheme scheme_from_string(const std::string& s) {
    if (s == "rk2" || s == "explicit_rk2") return Scheme::ExplicitRK2;
    if (s == "newton" || s == "semi_implicit_newton") return Scheme::SemiImplicitNewton;
    throw ConfigError("unknown scheme '" + s + "' (expected rk2 or newton)");
}

Termination termination_from_string(const std::string& s) {
    if (s == "reached_T") return Termination::ReachedT;
    if (s == "step_floor") return Termination::StepFloor;
    if (s == "positivity_loss") return Termination::PositivityLoss;
    throw RuntimeFailure("unknown termination '" + s + "'");
}

void StepControl::validate() const {
    if (!(dt_min > 0.0 && dt_min < dt_init && dt_init <= dt_max))
        throw ConfigError("step control requires 0 < dt_min < dt_init <= dt_max");
    if (!(safety > 0.0 && safety <= 1.0)) throw ConfigError("step control safety must lie in (0, 1]");
    if (!(growth >= 1.0)) throw ConfigError("step control growth must be >= 1");
    if (newton_max_iterations < 1) throw ConfigError("newton_max_iterations must be positive");
}

Values metric_density(const BackgroundPack& pack, double t, std::span<const double> phi) {
    Values d = grid::ddc_density(*pack.surface, phi);
    for (std::size_t p = 0; p < d.size(); ++p)
        d[p] += pack.omega[p] + t * pack.nu_gamma[p] + pack.params.k * pack.ddc_chi[p];
    return d;
}

namespace {

std::vector<std::size_t> nonpositive(std::span<const double> d) {
    std::vector<std::size_t> bad;
    for (std::size_t p = 0; p < d.size(); ++p)
        if (!(d[p] > 0.0)) bad.push_back(p);
    return bad;
}

[[noreturn]] void throw_positivity(double t, std::vector<std::size_t> bad) {
    std::ostringstream msg;
    msg << "metric density is not positive at t = " << t << " on " << bad.size() << " node(s), first " << bad.front();
    throw PositivityError(msg.str(), std::move(bad));
}

Values rhs_from_density(const BackgroundPack& pack, std::span<const double> d) {
    Values out(d.size());
    for (std::size_t p = 0; p < d.size(); ++p) out[p] = std::log(d[p] / pack.omega_cone_eps[p]) + pack.F_eps[p];
    return out;
}

}  // namespace

Values rhs(const BackgroundPack& pack, double t, std::span<const double> phi) {
    const Values d = metric_density(pack, t, phi);
    if (auto bad = nonpositive(d); !bad.empty()) throw_positivity(t, std::move(bad));
    return rhs_from_density(pack, d);
}

Values rhs_unreduced(const BackgroundPack& pack, double t, std::span<const double> varphi) {
    Values d = grid::ddc_density(*pack.surface, varphi);
    for (std::size_t p = 0; p < d.size(); ++p) d[p] += pack.omega[p] + t * pack.nu_gamma[p];
    if (auto bad = nonpositive(d); !bad.empty()) throw_positivity(t, std::move(bad));
    Values out(d.size());
    for (std::size_t p = 0; p < d.size(); ++p)
        out[p] = std::log(d[p] / pack.omega[p]) + pack.h_gamma[p] + pack.cone_log[p];
    return out;
}

Values unreduced_potential(const BackgroundPack& pack, std::span<const double> phi) {
    Values out(phi.begin(), phi.end());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] += pack.params.k * pack.chi[p];
    return out;
}

SeriesRow series_row(const BackgroundPack& pack, double t, std::span<const double> phi,
                     std::span<const double> phi_dot) {
    const Values d = metric_density(pack, t, phi);
    SeriesRow row{};
    row.t = t;
    row.sup_phi = grid::sup(phi);
    row.inf_phi = grid::inf(phi);
    row.osc_phi = row.sup_phi - row.inf_phi;
    row.sup_phidot = grid::sup(phi_dot);
    row.inf_phidot = grid::inf(phi_dot);
    row.min_ratio = std::numeric_limits<double>::infinity();
    row.max_ratio = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < d.size(); ++p) {
        const double r = d[p] / pack.omega_cone_eps[p];
        row.min_ratio = std::min(row.min_ratio, r);
        row.max_ratio = std::max(row.max_ratio, r);
    }
    return row;
}

FlowState make_state(const BackgroundPack& pack, double t, Values phi) {
    FlowState s;
    s.t = t;
    const Values d = metric_density(pack, t, phi);
    if (auto bad = nonpositive(d); !bad.empty()) throw_positivity(t, std::move(bad));
    s.min_metric_density = grid::inf(d);
    s.phi_dot = rhs_from_density(pack, d);
    s.phi = std::move(phi);
    return s;
}

struct Stepper::Impl {
    const BackgroundPack& pack;
    StepControl control;
    Eigen::SparseMatrix<double> m;
    Eigen::SparseMatrix<double> jac;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool analyzed{false};
    double err_prev{-1.0};

    Impl(const BackgroundPack& p, StepControl c) : pack(p), control(c) {
        m = grid::ddc_matrix(*pack.surface);
        m.makeCompressed();
        jac = m;
    }

    // Values of I - dt diag(1/d) M on the pattern of M (M carries the full diagonal).
    void assemble(double dt, std::span<const double> d) {
        for (int k = 0; k < m.outerSize(); ++k) {
            Eigen::SparseMatrix<double>::InnerIterator src(m, k), dst(jac, k);
            for (; src; ++src, ++dst) {
                double v = -dt * src.value() / d[src.row()];
                if (src.row() == src.col()) v += 1.0;
                dst.valueRef() = v;
            }
        }
    }

    bool newton(FlowState& state, double dt) {
        const double t1 = state.t + dt;
        const std::size_t n = state.phi.size();
        auto residual = [&](const Values& x, Values& d, Values& g) {
            d = metric_density(pack, t1, x);
            for (double v : d)
                if (!(v > 0.0)) return std::numeric_limits<double>::infinity();
            g.resize(n);
            double r = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                g[p] = x[p] - state.phi[p] - dt * (std::log(d[p] / pack.omega_cone_eps[p]) + pack.F_eps[p]);
                r = std::max(r, std::abs(g[p]));
            }
            return r;
        };

        Values x(n), d, g;
        for (std::size_t p = 0; p < n; ++p) x[p] = state.phi[p] + dt * state.phi_dot[p];
        double res = residual(x, d, g);
        if (!std::isfinite(res)) {
            x = state.phi;
            res = residual(x, d, g);
            if (!std::isfinite(res)) return false;
        }
        Values x_try, d_try, g_try;
        for (int it = 0; it < control.newton_max_iterations; ++it) {
            if (res <= control.newton_tolerance) break;
            assemble(dt, d);
            if (!analyzed) {
                lu.analyzePattern(jac);
                analyzed = true;
            }
            lu.factorize(jac);
            if (lu.info() != Eigen::Success) return false;
            Eigen::Map<const Eigen::VectorXd> gv(g.data(), Eigen::Index(n));
            const Eigen::VectorXd delta = lu.solve(gv);
            double alpha = 1.0;
            bool moved = false;
            while (alpha >= 1.0 / 1024.0) {
                x_try.resize(n);
                for (std::size_t p = 0; p < n; ++p) x_try[p] = x[p] - alpha * delta[Eigen::Index(p)];
                const double r_try = residual(x_try, d_try, g_try);
                if (r_try < (1.0 - 1e-4 * alpha) * res || (r_try <= control.newton_tolerance)) {
                    x.swap(x_try);
                    d.swap(d_try);
                    g.swap(g_try);
                    res = r_try;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!moved) return false;
        }
        if (res > control.newton_tolerance) return false;
        state.t = t1;
        state.phi = std::move(x);
        state.phi_dot = rhs_from_density(pack, d);
        state.min_metric_density = grid::inf(d);
        return true;
    }

    bool rk2(FlowState& state, double dt, double& dt_next) {
        const double t1 = state.t + dt;
        const std::size_t n = state.phi.size();
        Values stage(n);
        for (std::size_t p = 0; p < n; ++p) stage[p] = state.phi[p] + dt * state.phi_dot[p];
        Values d = metric_density(pack, t1, stage);
        if (!nonpositive(d).empty()) {
            dt_next = 0.5 * dt;
            return false;
        }
        const Values k2 = rhs_from_density(pack, d);
        Values next(n);
        double err = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            next[p] = state.phi[p] + 0.5 * dt * (state.phi_dot[p] + k2[p]);
            err = std::max(err, 0.5 * dt * std::abs(k2[p] - state.phi_dot[p]));
        }
        d = metric_density(pack, t1, next);
        const double tol = control.rk_tolerance;
        if (!nonpositive(d).empty()) {
            dt_next = 0.5 * dt;
            return false;
        }
        // PI controller on the embedded Euler/Heun difference.
        const double e = std::max(err, 1e-300);
        double factor = control.safety * std::pow(tol / e, 0.35);
        if (err_prev > 0.0) factor *= std::pow(err_prev / tol, 0.2);
        factor = std::clamp(factor, 0.2, 2.0);
        if (err > tol) {
            dt_next = dt * std::min(factor, 0.9);
            return false;
        }
        err_prev = std::max(err, 1e-3 * tol);
        dt_next = std::min(control.dt_max, dt * factor);
        state.t = t1;
        state.phi = std::move(next);
        state.phi_dot = rhs_from_density(pack, d);
        state.min_metric_density = grid::inf(d);
        return true;
    }
};

Stepper::Stepper(const BackgroundPack& pack, StepControl control) : impl_(std::make_unique<Impl>(pack, control)) {
    control.validate();
}

Stepper::~Stepper() = default;

bool Stepper::try_step(FlowState& state, double dt, double& dt_next) {
    bool ok = false;
    if (impl_->control.scheme == Scheme::SemiImplicitNewton) {
        ok = impl_->newton(state, dt);
        dt_next = ok ? std::min(impl_->control.dt_max, dt * impl_->control.growth) : 0.5 * dt;
    } else {
        ok = impl_->rk2(state, dt, dt_next);
    }
    if (ok) {
        ++state.step_count;
    } else {
        ++state.rejected_steps;
    }
    return ok;
}

FlowState step(const BackgroundPack& pack, const FlowState& state, const StepControl& control, double dt) {
    Stepper stepper(pack, control);
    FlowState next = state;
    double dt_next = dt;
    for (double h = dt; h >= control.dt_min; h = dt_next) {
        FlowState trial = state;
        if (stepper.try_step(trial, h, dt_next)) return trial;
        next.rejected_steps = trial.rejected_steps;
    }
    throw RuntimeFailure("step: dt fell below dt_min");
}

Trajectory run_flow(const BackgroundPack& pack, int j, std::span<const double> phi_j, const StepControl& control,
                    std::span<const double> checkpoints, std::string run_id) {
    control.validate();
    const double T = pack.params.T;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        if (!(checkpoints[i] > 0.0 && checkpoints[i] <= T * (1.0 + 1e-12)))
            throw ConfigError("checkpoints must lie in (0, T]");
        if (i > 0 && !(checkpoints[i] > checkpoints[i - 1])) throw ConfigError("checkpoints must increase");
    }
    Trajectory traj;
    traj.run_id = std::move(run_id);
    traj.j = j;
    traj.epsilon = pack.params.epsilon;
    traj.initial_level.assign(phi_j.begin(), phi_j.end());

    Values phi0(phi_j.begin(), phi_j.end());
    for (std::size_t p = 0; p < phi0.size(); ++p) phi0[p] -= pack.params.k * pack.chi[p];
    FlowState state;
    try {
        state = make_state(pack, 0.0, phi0);
    } catch (const PositivityError& e) {
        traj.initial = {0.0, phi0, Values(phi0.size(), std::numeric_limits<double>::quiet_NaN())};
        traj.termination = Termination::PositivityLoss;
        traj.note = e.what();
        return traj;
    }
    traj.initial = {0.0, state.phi, state.phi_dot};

    Stepper stepper(pack, control);
    double dt = control.dt_init;
    for (double cp : checkpoints) {
        while (state.t < cp) {
            double h = std::min(dt, cp - state.t);
            const bool lands = state.t + h >= cp - 1e-13 * std::max(1.0, cp);
            if (lands) h = cp - state.t;
            double dt_next = h;
            const bool ok = stepper.try_step(state, h, dt_next);
            if (!ok) {
                if (dt_next < control.dt_min) {
                    traj.termination = Termination::StepFloor;
                    std::ostringstream msg;
                    msg << "step size fell below dt_min at t = " << state.t;
                    traj.note = msg.str();
                    traj.steps = state.step_count;
                    traj.rejected = state.rejected_steps;
                    return traj;
                }
                dt = dt_next;
                continue;
            }
            if (lands) state.t = cp;
            // The proposal keeps growing from the unclipped size so the schedule ignores checkpoint placement.
            dt = control.scheme == Scheme::SemiImplicitNewton ? std::min(control.dt_max, dt * control.growth)
                                                              : std::max(dt_next, control.dt_min * 2);
        }
        traj.snapshots.push_back({state.t, state.phi, state.phi_dot});
        traj.series.push_back(series_row(pack, state.t, state.phi, state.phi_dot));
    }
    traj.steps = state.step_count;
    traj.rejected = state.rejected_steps;
    return traj;
}

StaticSolveResult static_ma_solve(const grid::ModelSurface& s, std::span<const double> bg,
                                  std::span<const double> coupling, std::span<const double> data, double tolerance,
                                  int max_iterations) {
    const std::size_t n = s.size();
    for (std::size_t p = 0; p < n; ++p) {
        if (!(data[p] > 0.0) || !std::isfinite(data[p]) || !(bg[p] > 0.0))
            throw ConfigError("static_ma_solve: data and background must be positive and finite");
    }
    Eigen::SparseMatrix<double> m = grid::ddc_matrix(s);
    m.makeCompressed();
    Eigen::SparseMatrix<double> jac = m;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(jac);

    auto residual = [&](const Values& u, Values& b, Values& r) {
        b = grid::ddc_density(s, u);
        r.resize(n);
        double mx = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            b[p] += bg[p];
            if (!(b[p] > 0.0)) return std::numeric_limits<double>::infinity();
            r[p] = std::log(b[p]) - u[p] - coupling[p] - std::log(data[p]);
            mx = std::max(mx, std::abs(r[p]));
        }
        return mx;
    };

    StaticSolveResult out;
    Values u(n), b, r;
    for (std::size_t p = 0; p < n; ++p) u[p] = std::log(bg[p] / data[p]) - coupling[p];
    double res = residual(u, b, r);
    if (!std::isfinite(res)) {
        std::fill(u.begin(), u.end(), 0.0);
        res = residual(u, b, r);
    }
    out.history.push_back(res);
    Values u_try, b_try, r_try;
    int it = 0;
    for (; it < max_iterations && res > tolerance; ++it) {
        // Jacobian diag(1/b) M - I.
        for (int k = 0; k < m.outerSize(); ++k) {
            Eigen::SparseMatrix<double>::InnerIterator src(m, k), dst(jac, k);
            for (; src; ++src, ++dst) {
                double v = src.value() / b[src.row()];
                if (src.row() == src.col()) v -= 1.0;
                dst.valueRef() = v;
            }
        }
        lu.factorize(jac);
        if (lu.info() != Eigen::Success) break;
        Eigen::Map<const Eigen::VectorXd> rv(r.data(), Eigen::Index(n));
        const Eigen::VectorXd delta = lu.solve(rv);
        double alpha = 1.0;
        bool moved = false;
        while (alpha >= 1.0 / 4096.0) {
            u_try.resize(n);
            for (std::size_t p = 0; p < n; ++p) u_try[p] = u[p] - alpha * delta[Eigen::Index(p)];
            const double rt = residual(u_try, b_try, r_try);
            if (rt < (1.0 - 1e-4 * alpha) * res) {
                u.swap(u_try);
                b.swap(b_try);
                r.swap(r_try);
                res = rt;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        out.history.push_back(res);
        if (!moved) break;
    }
    if (res > tolerance) {
        std::ostringstream msg;
        msg << "static_ma_solve stagnated; residual history:";
        for (double h : out.history) msg << ' ' << h;
        throw RuntimeFailure(msg.str());
    }
    out.u = std::move(u);
    out.residual = res;
    out.iterations = it;
    return out;
}

ReparamView::ReparamView(const BackgroundPack& pack, const Trajectory& traj, double c_tilde)
    : pack_(&pack), traj_(&traj), c_(c_tilde) {
    if (!(c_tilde * pack.tmax > 1.0)) throw ConfigError("time_reparam: C_tilde must exceed 1 / T_max");
    if (traj.snapshots.empty()) throw ConfigError("time_reparam: trajectory has no checkpoints");
}

double ReparamView::pulled_back_time(double t) const { return (1.0 - std::exp(-t)) / c_; }

double ReparamView::max_time() const {
    const double s = traj_->snapshots.back().t;
    if (c_ * s >= 1.0) return std::numeric_limits<double>::infinity();
    return -std::log1p(-c_ * s);
}

namespace {

template <class Pick>
Values interpolate_in_time(const Trajectory& traj, double s, Pick pick) {
    const double last = traj.snapshots.back().t;
    if (s < 0.0 || s > last * (1.0 + 1e-12)) throw ConfigError("time_reparam: requested time outside coverage");
    const Snapshot* lo = &traj.initial;
    const Snapshot* hi = &traj.snapshots.front();
    for (std::size_t i = 0; i < traj.snapshots.size() && traj.snapshots[i].t < s; ++i) {
        lo = &traj.snapshots[i];
        hi = i + 1 < traj.snapshots.size() ? &traj.snapshots[i + 1] : &traj.snapshots[i];
    }
    const auto& a = pick(*lo);
    const auto& b = pick(*hi);
    const double w = hi->t > lo->t ? (s - lo->t) / (hi->t - lo->t) : 0.0;
    Values out(a.size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = (1.0 - w) * a[p] + w * b[p];
    return out;
}

}  // namespace

Values ReparamView::psi(double s) const {
    const Values phi = interpolate_in_time(*traj_, s, [](const Snapshot& x) -> const Values& { return x.phi; });
    return unreduced_potential(*pack_, phi);
}

Values ReparamView::psi_dot(double s) const {
    return interpolate_in_time(*traj_, s, [](const Snapshot& x) -> const Values& { return x.phi_dot; });
}

Values ReparamView::u(double t) const {
    Values v = psi(pulled_back_time(t));
    const double scale = c_ * std::exp(t);
    for (auto& x : v) x *= scale;
    return v;
}

}  // namespace coneflow::flow
