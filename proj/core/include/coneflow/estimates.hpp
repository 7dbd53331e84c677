#pragma once

#include "coneflow/flow.hpp"

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace coneflow::estimates {

using grid::Values;

inline constexpr double kDefaultTolerance = 1e-6;

// Constants are either computed from the background data or fitted at one sample.
enum class ConstantMode { FromPack, Fitted, NotApplicable };

std::string to_string(ConstantMode m);

struct Witness {
    double t{0.0};
    std::size_t node{0};
};

struct EstimateReport {
    std::string estimate_id;
    std::vector<std::string> run_ids;
    std::map<std::string, double> parameters;
    std::vector<double> eps_list;
    std::vector<int> j_list;
    ConstantMode constant_mode{ConstantMode::NotApplicable};
    double margin{std::numeric_limits<double>::infinity()};
    Witness witness;
    double tolerance{kDefaultTolerance};
    bool pass{false};
    // Recorded side quantities (auxiliary constants, secondary margins).
    std::map<std::string, double> diagnostics;
    std::string note;

    void finalize() { pass = margin >= -tolerance; }
};

struct ComparisonVerdict {
    std::string run_u;
    std::string run_v;
    double initial_sup_gap{0.0};  // sup(u0 - v0)
    double initial_inf_gap{0.0};  // inf(u0 - v0)
    double max_excess{0.0};       // max over t of sup(u - v)(t) - sup(u0 - v0)
    double min_deficit{0.0};      // min over t of inf(u - v)(t) - inf(u0 - v0)
    Witness witness;
    double tolerance{0.0};
    bool pass{false};
};

// A trajectory together with the background it was computed on.
struct RunRef {
    const background::BackgroundPack* pack;
    const flow::Trajectory* traj;
};

// Index of the checkpoint at time t (matched to 1e-12 relative); throws ConfigError if absent.
std::size_t checkpoint_index(const flow::Trajectory& traj, double t);

// Sup over nodes of log(omega_{gamma t eps} / omega_{gamma eps}) + F on [t0, T], and the same for its negative.
struct BarrierConstants {
    double upper;
    double lower;
};
BarrierConstants barrier_constants(const background::BackgroundPack& pack, double t0);

EstimateReport check_upper_barrier(const background::BackgroundPack& pack, const flow::Trajectory& traj, double t0,
                                   double tolerance = kDefaultTolerance);
EstimateReport check_lower_barrier(const background::BackgroundPack& pack, const flow::Trajectory& traj, double t0,
                                   double tolerance = kDefaultTolerance);

// H = t phidot - (varphi(t) - phi_j) - t, with the shifted form started at `shift_t0` when positive.
EstimateReport check_hstat(const background::BackgroundPack& pack, const flow::Trajectory& traj,
                           double shift_t0 = 0.0, double tolerance = kDefaultTolerance);

// Relative osc spread across a j-family at each time, against `max_spread`.
EstimateReport check_osc(std::span<const flow::Trajectory> family, std::span<const double> times,
                         double max_spread = 0.05);

EstimateReport check_phidot_lower(const background::BackgroundPack& pack, const flow::Trajectory& traj, double t0,
                                  double t_prime, double tolerance = kDefaultTolerance);

// Reports the equivalence constant C(t0) with ratio in [1/C, C] on [t0, T]; fails when C exceeds `ratio_cap`.
EstimateReport check_density_ratio(const background::BackgroundPack& pack, const flow::Trajectory& traj, double t0,
                                   double ratio_cap = 1e8);

ComparisonVerdict check_comparison(const background::BackgroundPack& pack, const flow::Trajectory& u,
                                   const flow::Trajectory& v, double tolerance = 1e-8);

// Sub-solution (1 - 2lt) phi_j + t u + (t log t - t) with u from the static solve.
EstimateReport check_lower_envelope(const background::BackgroundPack& pack, const flow::Trajectory& traj, double l,
                                    double tolerance = kDefaultTolerance);

// Static solution used by the envelope check.
flow::StaticSolveResult envelope_static_solve(const background::BackgroundPack& pack, std::span<const double> phi_j,
                                              double l);

// Family ordered by strictly decreasing epsilon, sharing j.
EstimateReport check_monotone_eps(std::span<const RunRef> family, double t, double tolerance = kDefaultTolerance);

// Geometric checkpoints 0.2 * 2^-m, m = 0..5.
std::vector<double> l1_times();

// ||varphi(t_m) - phi0||_1 with respect to omega.
EstimateReport check_l1_convergence(const background::BackgroundPack& pack, const flow::Trajectory& traj,
                                    std::span<const double> phi0, double tol_l1 = -1.0);

EstimateReport check_reparam_ordering(const background::BackgroundPack& pack, const flow::Trajectory& psi,
                                      const flow::Trajectory& phi, double c_tilde,
                                      double tolerance = kDefaultTolerance);

}  // namespace coneflow::estimates
