#pragma once

#include "coneflow/flow.hpp"
#include "coneflow/initialdata.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coneflow::config {

struct SurfaceSpec {
    grid::SurfaceKind kind{grid::SurfaceKind::Torus};
    int resolution{32};
    double volume{1.0};

    bool operator==(const SurfaceSpec&) const = default;
};

struct FlowSpec {
    double gamma{1.0};
    std::vector<double> eps_list{0.1};
    std::optional<double> k;  // empty selects k automatically
    double k_equivalence{4.0};
    double T{0.5};
    double eta_degree{0.0};

    bool operator==(const FlowSpec&) const = default;
};

struct InitialSpec {
    initial::DatumSpec datum;
    std::vector<int> j_list{1};
    double sigma{0.1};
    // Each run gets a companion started from phi_j + shift (used by the comparison check).
    std::optional<double> companion_shift;

    bool operator==(const InitialSpec& o) const {
        return datum.kind == o.datum.kind && datum.params == o.datum.params && j_list == o.j_list &&
               sigma == o.sigma && companion_shift == o.companion_shift;
    }
};

struct CheckpointSpec {
    double spacing{0.01};
    std::vector<double> extra;

    bool operator==(const CheckpointSpec&) const = default;
};

struct VerifySpec {
    std::vector<std::string> checks;
    std::vector<double> t0_list{0.1};
    std::vector<double> osc_times{0.1};
    double phidot_t0{0.0};
    std::optional<double> t_prime;  // defaults to 2T/3
    double l{2.0};
    double c_tilde{1.0};
    double monotone_t{0.2};
    double tolerance{1e-6};
    double comparison_tolerance{1e-8};
    double max_osc_spread{0.05};

    bool operator==(const VerifySpec&) const = default;
};

struct StepSpec {
    flow::StepControl control;

    bool operator==(const StepSpec& o) const;
};

struct RunConfig {
    SurfaceSpec surface;
    std::vector<grid::DivisorPoint> divisor;
    FlowSpec flow;
    InitialSpec initial;
    StepSpec steps;
    CheckpointSpec checkpoints;
    VerifySpec verify;
    std::string output_dir{"coneflow-out"};
    std::uint64_t seed{1};

    bool operator==(const RunConfig& o) const;

    // Uniform grid up to T merged with the extra times (and the L1 times when that check is selected).
    std::vector<double> checkpoint_times() const;
    double tmax() const;
};

// Names accepted in [verify] checks.
const std::vector<std::string>& known_checks();

// Parses and validates; ConfigError messages carry the offending line number when there is one.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

std::string emit_config(const RunConfig& cfg);

// Constraint checks that need the whole config (T < T_max, epsilon floor, divisor requirements).
void validate(const RunConfig& cfg);

// Smallest admissible epsilon: twice the squared grid spacing.
double epsilon_floor(const SurfaceSpec& s);

}  // namespace coneflow::config
