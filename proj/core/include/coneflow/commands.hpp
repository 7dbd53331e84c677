#pragma once

#include "coneflow/archive.hpp"
#include "coneflow/config.hpp"
#include "coneflow/estimates.hpp"
#include "coneflow/initialdata.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace coneflow::commands {

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kConfigError = 2, kRuntimeError = 3 };

struct Options {
    std::optional<std::filesystem::path> out;  // replaces the configured output directory
    int jobs{1};
    std::vector<std::string> only;             // estimate ids; empty uses the config selection
    double tolerance_scale{1.0};
};

// Everything derived from a config before any flow is run.
struct Experiment {
    config::RunConfig cfg;
    grid::SurfaceHandle surface;
    grid::DivisorData divisor;
    double k{0.0};
    std::vector<background::BackgroundPack> packs;  // one per epsilon, same order as the config
    initial::InitialDatum datum;
    initial::RegularizationLadder ladder;
};

Experiment prepare(const config::RunConfig& cfg);

struct RunPlan {
    std::string id;
    std::size_t eps_index{0};
    int j{0};
    bool companion{false};
    grid::Values start;  // phi_j, shifted for companions
};

std::vector<RunPlan> plan_runs(const Experiment& exp);

// Output directory after applying --out and CONEFLOW_OUT.
std::filesystem::path resolve_output(const config::RunConfig& cfg, const Options& opt);

struct LoadedArchive {
    std::filesystem::path root;
    archive::Manifest manifest;
    Experiment exp;
    std::vector<RunPlan> plans;
    std::vector<flow::Trajectory> trajectories;  // parallel to plans
    std::vector<bool> ok;
};

// Verifies hashes, rebuilds the background from the archived config and checks it against the stored pack files.
LoadedArchive load_archive(const std::filesystem::path& root);

// Runs the selected estimate checks on a loaded archive without re-simulating.
std::vector<estimates::EstimateReport> verify_reports(const LoadedArchive& a, const std::vector<std::string>& selection,
                                                      double tolerance_scale);

std::string report_record(const estimates::EstimateReport& r);
std::string tmax_report(const config::RunConfig& cfg);

int cmd_tmax(const config::RunConfig& cfg, std::ostream& out);
int cmd_run(const config::RunConfig& cfg, const Options& opt, std::ostream& out);
int cmd_verify(const std::filesystem::path& archive_root, const Options& opt, std::ostream& out);
int cmd_export(const std::filesystem::path& archive_root, const std::string& what, const std::string& run_id,
               double t, std::ostream& out);
int cmd_selfcheck(std::ostream& out);

}  // namespace coneflow::commands
