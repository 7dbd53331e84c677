#pragma once

#include "coneflow/background.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coneflow::flow {

using grid::Values;

enum class Scheme { ExplicitRK2, SemiImplicitNewton };
enum class Termination { ReachedT, StepFloor, PositivityLoss };

std::string to_string(Scheme s);
std::string to_string(Termination t);
Scheme scheme_from_string(const std::string& s);
Termination termination_from_string(const std::string& s);

struct StepControl {
    Scheme scheme{Scheme::SemiImplicitNewton};
    double dt_init{1e-4};
    double dt_min{1e-9};
    double dt_max{1e-2};
    double safety{0.9};
    // Newton: geometric growth of dt between accepted steps.
    double growth{1.25};
    // ExplicitRK2: local error target for the PI controller.
    double rk_tolerance{1e-7};
    double newton_tolerance{1e-10};
    int newton_max_iterations{30};

    void validate() const;
};

struct FlowState {
    double t{0.0};
    Values phi;
    Values phi_dot;
    double min_metric_density{0.0};
    std::int64_t step_count{0};
    std::int64_t rejected_steps{0};
};

struct SeriesRow {
    double t, sup_phi, inf_phi, osc_phi, sup_phidot, inf_phidot, min_ratio, max_ratio;
};

struct Snapshot {
    double t;
    Values phi;
    Values phi_dot;
};

struct Trajectory {
    std::string run_id;
    int j{0};
    double epsilon{0.0};
    Values initial_level;  // phi_j
    Snapshot initial;      // state at t = 0
    std::vector<Snapshot> snapshots;
    std::vector<SeriesRow> series;
    Termination termination{Termination::ReachedT};
    std::string note;
    std::int64_t steps{0};
    std::int64_t rejected{0};
};

// Density of omega_{gamma t eps} + ddc phi.
Values metric_density(const background::BackgroundPack& pack, double t, std::span<const double> phi);

// log((omega_{gamma t eps} + ddc phi) / omega_{gamma eps}) + F_eps.
Values rhs(const background::BackgroundPack& pack, double t, std::span<const double> phi);

// Unreduced form: log((omega_{gamma t} + ddc varphi) / omega) + h_gamma + (1 - gamma) log(eps^2 + |s|^2).
Values rhs_unreduced(const background::BackgroundPack& pack, double t, std::span<const double> varphi);

// varphi = phi + k chi.
Values unreduced_potential(const background::BackgroundPack& pack, std::span<const double> phi);

SeriesRow series_row(const background::BackgroundPack& pack, double t, std::span<const double> phi,
                     std::span<const double> phi_dot);

FlowState make_state(const background::BackgroundPack& pack, double t, Values phi);

// Advances one step of size `dt`; `dt_next` receives the controller's proposal.
class Stepper {
public:
    Stepper(const background::BackgroundPack& pack, StepControl control);
    ~Stepper();
    Stepper(const Stepper&) = delete;
    Stepper& operator=(const Stepper&) = delete;

    // Returns false when the step had to be rejected (state unchanged).
    bool try_step(FlowState& state, double dt, double& dt_next);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// One accepted step starting from `dt`, halving on rejection.
FlowState step(const background::BackgroundPack& pack, const FlowState& state, const StepControl& control,
               double dt);

Trajectory run_flow(const background::BackgroundPack& pack, int j, std::span<const double> phi_j,
                    const StepControl& control, std::span<const double> checkpoints, std::string run_id = "run");

struct StaticSolveResult {
    Values u;
    double residual{0.0};
    int iterations{0};
    std::vector<double> history;
};

// Solves background + ddc u = e^{u + coupling} * data (densities relative to coordinate measure).
StaticSolveResult static_ma_solve(const grid::ModelSurface& s, std::span<const double> background_density,
                                  std::span<const double> coupling, std::span<const double> data,
                                  double tolerance = 1e-9, int max_iterations = 60);

// u(t) = C e^t psi((1 - e^{-t}) / C) built from the unreduced potential of a trajectory.
class ReparamView {
public:
    ReparamView(const background::BackgroundPack& pack, const Trajectory& traj, double c_tilde);

    double c_tilde() const noexcept { return c_; }
    double pulled_back_time(double t) const;
    // Largest t whose pulled-back time is covered by the trajectory.
    double max_time() const;
    Values u(double t) const;
    Values psi(double s) const;
    Values psi_dot(double s) const;

private:
    const background::BackgroundPack* pack_;
    const Trajectory* traj_;
    double c_;
};

}  // namespace coneflow::flow
