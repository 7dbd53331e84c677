#include "coneflow/estimates.hpp"

#include "coneflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace coneflow::estimates {

using background::BackgroundPack;
using flow::Trajectory;

std::string to_string(ConstantMode m) {
    switch (m) {
        case ConstantMode::FromPack: return "from_pack";
        case ConstantMode::Fitted: return "fitted";
        case ConstantMode::NotApplicable: return "none";
    }
    return "none";
}

std::size_t checkpoint_index(const Trajectory& traj, double t) {
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i)
        if (std::abs(traj.snapshots[i].t - t) <= 1e-12 * std::max(1.0, std::abs(t))) return i;
    std::ostringstream msg;
    msg << "run " << traj.run_id << " has no checkpoint at t = " << t;
    throw ConfigError(msg.str());
}

namespace {

void require_complete(const Trajectory& traj) {
    if (traj.termination != flow::Termination::ReachedT)
        throw RuntimeFailure("run " + traj.run_id + " did not reach T (" + flow::to_string(traj.termination) + ")");
}

Values unreduced(const BackgroundPack& pack, std::span<const double> phi) { return flow::unreduced_potential(pack, phi); }

// log(omega_{gamma t eps} / omega_{gamma eps}) + F at one time.
Values barrier_field(const BackgroundPack& pack, double t) {
    Values path = pack.omega_path_eps(t);
    for (std::size_t p = 0; p < path.size(); ++p) path[p] = std::log(path[p] / pack.omega_cone_eps[p]) + pack.F_eps[p];
    return path;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}
std::size_t argmin(std::span<const double> v) {
    return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

void ensure_same_grid(const Trajectory& a, const Trajectory& b) {
    if (a.snapshots.size() != b.snapshots.size())
        throw ConfigError("runs " + a.run_id + " and " + b.run_id + " have different checkpoint counts");
    for (std::size_t i = 0; i < a.snapshots.size(); ++i)
        if (a.snapshots[i].t != b.snapshots[i].t)
            throw ConfigError("runs " + a.run_id + " and " + b.run_id + " have different checkpoint times");
    if (a.initial_level.size() != b.initial_level.size())
        throw ConfigError("runs " + a.run_id + " and " + b.run_id + " live on different grids");
}

}  // namespace

BarrierConstants barrier_constants(const BackgroundPack& pack, double t0) {
    // Each node's path density is affine in t, so the log ratio is monotone and the extremes sit at t0 or T.
    const Values a = barrier_field(pack, t0);
    const Values b = barrier_field(pack, pack.params.T);
    BarrierConstants c{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (std::size_t p = 0; p < a.size(); ++p) {
        c.upper = std::max({c.upper, a[p], b[p]});
        c.lower = std::max({c.lower, -a[p], -b[p]});
    }
    return c;
}

namespace {

EstimateReport barrier(const BackgroundPack& pack, const Trajectory& traj, double t0, double tolerance, bool upper) {
    require_complete(traj);
    EstimateReport r;
    r.estimate_id = upper ? "upper_barrier" : "lower_barrier";
    r.run_ids = {traj.run_id};
    r.constant_mode = ConstantMode::FromPack;
    r.tolerance = tolerance;
    r.eps_list = {traj.epsilon};
    r.j_list = {traj.j};
    const std::size_t i0 = t0 == 0.0 ? std::size_t(-1) : checkpoint_index(traj, t0);
    const auto& base = i0 == std::size_t(-1) ? traj.initial : traj.snapshots[i0];
    const BarrierConstants bc = barrier_constants(pack, t0);
    const double c = upper ? bc.upper : bc.lower;
    r.parameters = {{"t0", t0}, {"C", c}};
    const double ref = upper ? grid::sup(base.phi) : grid::inf(base.phi);
    r.witness = {t0, upper ? argmax(base.phi) : argmin(base.phi)};
    r.margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = i0 == std::size_t(-1) ? 0 : i0 + 1; i < traj.snapshots.size(); ++i) {
        const auto& snap = traj.snapshots[i];
        const std::size_t node = upper ? argmax(snap.phi) : argmin(snap.phi);
        const double gap = upper ? ref + c * (snap.t - t0) - snap.phi[node] : snap.phi[node] - (ref - c * (snap.t - t0));
        if (gap < r.margin) {
            r.margin = gap;
            r.witness = {snap.t, node};
        }
    }
    r.finalize();
    return r;
}

}  // namespace

EstimateReport check_upper_barrier(const BackgroundPack& pack, const Trajectory& traj, double t0, double tolerance) {
    return barrier(pack, traj, t0, tolerance, true);
}

EstimateReport check_lower_barrier(const BackgroundPack& pack, const Trajectory& traj, double t0, double tolerance) {
    return barrier(pack, traj, t0, tolerance, false);
}

EstimateReport check_hstat(const BackgroundPack& pack, const Trajectory& traj, double shift_t0, double tolerance) {
    require_complete(traj);
    EstimateReport r;
    r.estimate_id = "hstat";
    r.run_ids = {traj.run_id};
    r.tolerance = tolerance;
    r.eps_list = {traj.epsilon};
    r.j_list = {traj.j};
    r.parameters = {{"n", 1.0}, {"shift_t0", shift_t0}};
    const auto& phi_j = traj.initial_level;
    // H(0) = 0 by definition.
    double max_h = 0.0;
    double bound_margin = std::numeric_limits<double>::infinity();
    r.witness = {0.0, 0};
    for (const auto& snap : traj.snapshots) {
        const Values u = unreduced(pack, snap.phi);
        for (std::size_t p = 0; p < u.size(); ++p) {
            const double h = snap.t * snap.phi_dot[p] - (u[p] - phi_j[p]) - snap.t;
            if (h > max_h) {
                max_h = h;
                r.witness = {snap.t, p};
            }
            bound_margin = std::min(bound_margin, (u[p] - phi_j[p]) / snap.t + 1.0 - snap.phi_dot[p]);
        }
    }
    r.margin = 0.0 - max_h;
    r.diagnostics["max_H"] = max_h;
    r.diagnostics["derived_bound_margin"] = bound_margin;
    if (shift_t0 > 0.0) {
        const std::size_t i0 = checkpoint_index(traj, shift_t0);
        const Values base = unreduced(pack, traj.snapshots[i0].phi);
        double shifted = std::numeric_limits<double>::infinity();
        for (std::size_t i = i0 + 1; i < traj.snapshots.size(); ++i) {
            const auto& snap = traj.snapshots[i];
            const Values u = unreduced(pack, snap.phi);
            const double dt = snap.t - shift_t0;
            for (std::size_t p = 0; p < u.size(); ++p)
                shifted = std::min(shifted, (u[p] - base[p]) / dt + 1.0 - snap.phi_dot[p]);
        }
        r.diagnostics["shifted_margin"] = shifted;
    }
    r.pass = r.margin >= -tolerance && bound_margin >= -tolerance;
    return r;
}

EstimateReport check_osc(std::span<const Trajectory> family, std::span<const double> times, double max_spread) {
    if (family.size() < 3) throw ConfigError("check_osc needs a family of at least three runs over j");
    EstimateReport r;
    r.estimate_id = "osc";
    r.tolerance = 0.0;
    r.parameters = {{"max_spread", max_spread}};
    for (const auto& traj : family) {
        require_complete(traj);
        ensure_same_grid(family.front(), traj);
        r.run_ids.push_back(traj.run_id);
        r.j_list.push_back(traj.j);
    }
    r.eps_list = {family.front().epsilon};
    double worst_spread = 0.0;
    for (double t : times) {
        double hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
        std::size_t hi_run = 0;
        for (std::size_t k = 0; k < family.size(); ++k) {
            const auto& snap = family[k].snapshots[checkpoint_index(family[k], t)];
            const double osc = grid::sup(snap.phi) - grid::inf(snap.phi);
            if (osc > hi) {
                hi = osc;
                hi_run = k;
            }
            lo = std::min(lo, osc);
        }
        const double margin = max_spread * hi - (hi - lo);
        std::ostringstream key;
        key << "spread@" << t;
        r.diagnostics[key.str()] = hi > 0.0 ? (hi - lo) / hi : 0.0;
        worst_spread = std::max(worst_spread, hi > 0.0 ? (hi - lo) / hi : 0.0);
        if (margin < r.margin) {
            r.margin = margin;
            r.witness = {t, hi_run};
        }
    }
    r.diagnostics["max_relative_spread"] = worst_spread;
    r.note = "witness node field holds the index of the run with the largest oscillation";
    r.finalize();
    return r;
}

EstimateReport check_phidot_lower(const BackgroundPack& pack, const Trajectory& traj, double t0, double t_prime,
                                  double tolerance) {
    require_complete(traj);
    const double T = pack.params.T;
    if (!(t0 < t_prime && t_prime < T)) throw ConfigError("check_phidot_lower needs t0 < T' < T");
    EstimateReport r;
    r.estimate_id = "phidot_lower";
    r.run_ids = {traj.run_id};
    r.constant_mode = ConstantMode::Fitted;
    r.tolerance = tolerance;
    r.eps_list = {traj.epsilon};
    r.j_list = {traj.j};
    const double a = 2.0 / (T - t_prime);
    const auto& base = t0 == 0.0 ? traj.initial : traj.snapshots[checkpoint_index(traj, t0)];
    const double osc0 = grid::sup(base.phi) - grid::inf(base.phi);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i)
        if (traj.snapshots[i].t > t0 && traj.snapshots[i].t <= t_prime * (1.0 + 1e-12)) idx.push_back(i);
    if (idx.empty()) throw ConfigError("check_phidot_lower: no checkpoints in (t0, T']");
    // Smallest C making the bound hold at T', where log(t - t0) is largest; earlier samples test the rate.
    const auto& fit = traj.snapshots[idx.back()];
    const double c = std::log(fit.t - t0) - a * osc0 - grid::inf(fit.phi_dot);
    r.parameters = {{"t0", t0}, {"T_prime", t_prime}, {"A", a}, {"C", c}, {"osc_t0", osc0}};
    for (std::size_t i : idx) {
        const auto& snap = traj.snapshots[i];
        const std::size_t node = argmin(snap.phi_dot);
        const double m = snap.phi_dot[node] - std::log(snap.t - t0) + a * osc0 + c;
        if (m < r.margin) {
            r.margin = m;
            r.witness = {snap.t, node};
        }
    }
    r.finalize();
    return r;
}

EstimateReport check_density_ratio(const BackgroundPack& pack, const Trajectory& traj, double t0, double ratio_cap) {
    require_complete(traj);
    EstimateReport r;
    r.estimate_id = "density_ratio";
    r.run_ids = {traj.run_id};
    r.tolerance = 0.0;
    r.eps_list = {traj.epsilon};
    r.j_list = {traj.j};
    const std::size_t i0 = checkpoint_index(traj, t0);
    // C(s) for every checkpoint s >= t0, accumulated backwards from T.
    std::vector<double> c_tail(traj.snapshots.size(), 1.0);
    std::vector<Witness> w_tail(traj.snapshots.size());
    double c = 1.0;
    Witness w{traj.snapshots.back().t, 0};
    for (std::size_t i = traj.snapshots.size(); i-- > i0;) {
        const auto& snap = traj.snapshots[i];
        const Values d = flow::metric_density(pack, snap.t, snap.phi);
        for (std::size_t p = 0; p < d.size(); ++p) {
            const double ratio = d[p] / pack.omega_cone_eps[p];
            const double cp = ratio > 0.0 ? std::max(ratio, 1.0 / ratio) : std::numeric_limits<double>::infinity();
            if (!(cp <= c)) {
                c = cp;
                w = {snap.t, p};
            }
        }
        c_tail[i] = c;
        w_tail[i] = w;
    }
    double worst_growth = 1.0;
    for (std::size_t i = i0; i + 1 < traj.snapshots.size(); ++i)
        worst_growth = std::max(worst_growth, c_tail[i + 1] / c_tail[i]);
    r.parameters = {{"t0", t0}, {"C", c_tail[i0]}, {"ratio_cap", ratio_cap}};
    r.diagnostics["monotone_in_t0_growth"] = worst_growth;
    r.margin = std::log(ratio_cap) - std::log(c_tail[i0]);
    r.witness = w_tail[i0];
    r.finalize();
    r.pass = r.pass && worst_growth <= 1.05;
    return r;
}

ComparisonVerdict check_comparison(const BackgroundPack& pack, const Trajectory& u, const Trajectory& v,
                                   double tolerance) {
    require_complete(u);
    require_complete(v);
    ensure_same_grid(u, v);
    if (u.epsilon != v.epsilon) throw ConfigError("check_comparison: runs use different epsilon");
    (void)pack;
    ComparisonVerdict out;
    out.run_u = u.run_id;
    out.run_v = v.run_id;
    out.tolerance = tolerance;
    Values g0(u.initial.phi.size());
    for (std::size_t p = 0; p < g0.size(); ++p) g0[p] = u.initial.phi[p] - v.initial.phi[p];
    out.initial_sup_gap = grid::sup(g0);
    out.initial_inf_gap = grid::inf(g0);
    out.max_excess = -std::numeric_limits<double>::infinity();
    out.min_deficit = std::numeric_limits<double>::infinity();
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < u.snapshots.size(); ++i) {
        Values g(g0.size());
        for (std::size_t p = 0; p < g.size(); ++p) g[p] = u.snapshots[i].phi[p] - v.snapshots[i].phi[p];
        const std::size_t hi = argmax(g), lo = argmin(g);
        const double excess = g[hi] - out.initial_sup_gap;
        const double deficit = g[lo] - out.initial_inf_gap;
        out.max_excess = std::max(out.max_excess, excess);
        out.min_deficit = std::min(out.min_deficit, deficit);
        if (excess > worst) {
            worst = excess;
            out.witness = {u.snapshots[i].t, hi};
        }
        if (-deficit > worst) {
            worst = -deficit;
            out.witness = {u.snapshots[i].t, lo};
        }
    }
    out.pass = out.max_excess <= tolerance && out.min_deficit >= -tolerance;
    return out;
}

flow::StaticSolveResult envelope_static_solve(const BackgroundPack& pack, std::span<const double> phi_j, double l) {
    const auto& s = *pack.surface;
    const double gamma = pack.params.gamma, eps2 = pack.params.epsilon * pack.params.epsilon;
    Values coupling(pack.size()), data(pack.size());
    for (std::size_t p = 0; p < pack.size(); ++p) {
        coupling[p] = -pack.h_gamma[p] - 2.0 * l * phi_j[p];
        const double norm = pack.divisor.s_h_sq.empty() ? 1.0 : pack.divisor.s_h_sq[p];
        data[p] = pack.omega[p] / std::pow(eps2 + norm, 1.0 - gamma);
    }
    return flow::static_ma_solve(s, pack.omega, coupling, data);
}

EstimateReport check_lower_envelope(const BackgroundPack& pack, const Trajectory& traj, double l, double tolerance) {
    require_complete(traj);
    const double inv_tmax = std::isfinite(pack.tmax) ? 1.0 / pack.tmax : 0.0;
    const double needed = std::max(inv_tmax, 1.0);
    if (!(2.0 * l > needed)) {
        std::ostringstream msg;
        msg << "check_lower_envelope needs 2l > max(1/T_max, 1) = " << needed << ", got l = " << l;
        throw ConfigError(msg.str());
    }
    EstimateReport r;
    r.estimate_id = "lower_envelope";
    r.run_ids = {traj.run_id};
    r.constant_mode = ConstantMode::FromPack;
    r.tolerance = tolerance;
    r.eps_list = {traj.epsilon};
    r.j_list = {traj.j};
    const auto& phi_j = traj.initial_level;
    const auto solve = envelope_static_solve(pack, phi_j, l);
    const double c = grid::max_abs(solve.u);
    r.parameters = {{"l", l}, {"C", c}, {"t_end", 1.0 / (2.0 * l)}};
    r.diagnostics["static_residual"] = solve.residual;
    r.diagnostics["static_iterations"] = solve.iterations;
    r.diagnostics["l_condition_margin"] = 2.0 * l - needed;
    double sharp = std::numeric_limits<double>::infinity();
    std::size_t checked = 0;
    for (const auto& snap : traj.snapshots) {
        const double t = snap.t;
        if (!(t < 1.0 / (2.0 * l))) break;
        ++checked;
        const Values psi = unreduced(pack, snap.phi);
        const double tail = t * std::log(t) - t;
        for (std::size_t p = 0; p < psi.size(); ++p) {
            const double m = psi[p] - (1.0 - 2.0 * l * t) * phi_j[p] + c * t - tail;
            if (m < r.margin) {
                r.margin = m;
                r.witness = {t, p};
            }
            sharp = std::min(sharp, psi[p] - (1.0 - 2.0 * l * t) * phi_j[p] - t * solve.u[p] - tail);
        }
    }
    if (checked == 0) throw ConfigError("check_lower_envelope: no checkpoints in (0, 1/(2l))");
    r.diagnostics["subsolution_margin"] = sharp;
    r.finalize();
    return r;
}

EstimateReport check_monotone_eps(std::span<const RunRef> family, double t, double tolerance) {
    if (family.size() < 2) throw ConfigError("check_monotone_eps needs at least two runs over epsilon");
    EstimateReport r;
    r.estimate_id = "monotone_eps";
    r.tolerance = tolerance;
    r.parameters = {{"t", t}};
    for (std::size_t i = 0; i < family.size(); ++i) {
        require_complete(*family[i].traj);
        if (i > 0) {
            if (!(family[i].traj->epsilon < family[i - 1].traj->epsilon))
                throw ConfigError("check_monotone_eps: family must be sorted by decreasing epsilon");
            if (family[i].traj->j != family[0].traj->j)
                throw ConfigError("check_monotone_eps: family must share j");
        }
        r.run_ids.push_back(family[i].traj->run_id);
        r.eps_list.push_back(family[i].traj->epsilon);
    }
    r.j_list = {family[0].traj->j};
    Values prev;
    for (std::size_t i = 0; i < family.size(); ++i) {
        const auto& traj = *family[i].traj;
        const Values cur = unreduced(*family[i].pack, traj.snapshots[checkpoint_index(traj, t)].phi);
        if (i > 0) {
            for (std::size_t p = 0; p < cur.size(); ++p) {
                const double m = prev[p] - cur[p];
                if (m < r.margin) {
                    r.margin = m;
                    r.witness = {t, p};
                }
            }
        }
        prev = cur;
    }
    r.finalize();
    return r;
}

std::vector<double> l1_times() {
    std::vector<double> out;
    for (int m = 5; m >= 0; --m) out.push_back(0.2 * std::ldexp(1.0, -m));
    return out;
}

EstimateReport check_l1_convergence(const BackgroundPack& pack, const Trajectory& traj, std::span<const double> phi0,
                                    double tol_l1) {
    require_complete(traj);
    const auto& s = *pack.surface;
    EstimateReport r;
    r.estimate_id = "l1_convergence";
    r.run_ids = {traj.run_id};
    r.tolerance = 0.0;
    r.eps_list = {traj.epsilon};
    r.j_list = {traj.j};
    Values abs0(phi0.size());
    for (std::size_t p = 0; p < abs0.size(); ++p) abs0[p] = std::abs(phi0[p]);
    const double norm0 = grid::integrate_function(s, abs0);
    if (tol_l1 < 0.0) tol_l1 = 1e-2 * norm0 + 1e-3 * s.total_volume();
    r.parameters = {{"tol_l1", tol_l1}, {"phi0_l1", norm0}};
    // Distances at t_0 > t_1 > ... (decreasing time); each must drop below the previous one.
    const auto times = l1_times();
    double prev = std::numeric_limits<double>::infinity();
    double prev_t = 0.0;
    for (auto it = times.rbegin(); it != times.rend(); ++it) {
        const auto& snap = traj.snapshots[checkpoint_index(traj, *it)];
        const Values u = unreduced(pack, snap.phi);
        Values diff(u.size());
        for (std::size_t p = 0; p < u.size(); ++p) diff[p] = std::abs(u[p] - phi0[p]);
        const double dist = grid::integrate_function(s, diff);
        std::ostringstream key;
        key << "distance@" << *it;
        r.diagnostics[key.str()] = dist;
        const bool at_limit = prev == 0.0 && dist == 0.0;
        if (std::isfinite(prev) && !at_limit && prev - dist < r.margin) {
            r.margin = prev - dist;
            r.witness = {*it, argmax(diff)};
        }
        prev = dist;
        prev_t = *it;
    }
    const double final_margin = tol_l1 - prev;
    r.diagnostics["final_distance"] = prev;
    r.diagnostics["final_margin"] = final_margin;
    if (final_margin < r.margin) {
        r.margin = final_margin;
        r.witness = {prev_t, 0};
    }
    r.finalize();
    r.pass = r.pass && r.margin > 0.0;
    return r;
}

EstimateReport check_reparam_ordering(const BackgroundPack& pack, const Trajectory& psi, const Trajectory& phi,
                                      double c_tilde, double tolerance) {
    require_complete(psi);
    require_complete(phi);
    ensure_same_grid(psi, phi);
    for (std::size_t p = 0; p < psi.initial_level.size(); ++p)
        if (psi.initial_level[p] > phi.initial_level[p])
            throw ConfigError("check_reparam_ordering: initial data are not ordered (psi0 > phi0 somewhere)");
    EstimateReport r;
    r.estimate_id = "reparam_ordering";
    r.run_ids = {psi.run_id, phi.run_id};
    r.tolerance = tolerance;
    r.eps_list = {psi.epsilon};
    r.j_list = {psi.j, phi.j};
    r.parameters = {{"C_tilde", c_tilde}};
    const flow::ReparamView vpsi(pack, psi, c_tilde), vphi(pack, phi, c_tilde);
    double direct = std::numeric_limits<double>::infinity();
    double max_gap = -std::numeric_limits<double>::infinity();
    for (const auto& snap : psi.snapshots) {
        const Values a = vpsi.psi(snap.t), b = vphi.psi(snap.t);
        double gap_sup = -std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < a.size(); ++p) {
            direct = std::min(direct, b[p] - a[p]);
            gap_sup = std::max(gap_sup, a[p] - b[p]);
            if (b[p] - a[p] < r.margin) {
                r.margin = b[p] - a[p];
                r.witness = {snap.t, p};
            }
        }
        max_gap = std::max(max_gap, gap_sup);
        // Transformed ordering at the reparametrized time whose pull-back is this checkpoint.
        if (c_tilde * snap.t < 1.0) {
            const double t = -std::log1p(-c_tilde * snap.t);
            const Values ua = vpsi.u(t), ub = vphi.u(t);
            for (std::size_t p = 0; p < ua.size(); ++p) {
                if (ub[p] - ua[p] < r.margin) {
                    r.margin = ub[p] - ua[p];
                    r.witness = {t, p};
                }
            }
        }
    }
    r.diagnostics["direct_margin"] = direct;
    r.diagnostics["max_sup_gap"] = max_gap;
    r.finalize();
    return r;
}

}  // namespace coneflow::estimates
