// coneflow command-line driver: tmax, run, verify, export, selfcheck.

#include "coneflow/commands.hpp"
#include "coneflow/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace cmd = coneflow::commands;

namespace {

std::filesystem::path archive_root(const std::string& positional, const std::string& out, const std::string& config) {
    if (!positional.empty()) return positional;
    if (!out.empty()) return out;
    if (!config.empty()) return cmd::resolve_output(coneflow::config::load_config(config), {});
    throw coneflow::ConfigError("no archive given (pass a directory, --out or --config)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Numerical experiments for conical parabolic Monge-Ampere flows on model surfaces"};
    app.require_subcommand(1);

    std::string config_path, out_dir, archive, what, run_id;
    int jobs = 1;
    double tolerance_scale = 1.0, time = 0.0;
    std::vector<std::string> only;

    auto* tmax = app.add_subcommand("tmax", "Print the maximal existence time for a config");
    tmax->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);

    auto* run = app.add_subcommand("run", "Run every (epsilon, j) trajectory and write an archive");
    run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Archive directory (overrides the config and CONEFLOW_OUT)");
    run->add_option("--jobs", jobs, "Trajectories run concurrently")->check(CLI::PositiveNumber);

    auto* verify = app.add_subcommand("verify", "Check estimates on an archive without re-simulating");
    verify->add_option("archive", archive, "Archive directory");
    verify->add_option("--config", config_path, "Locate the archive through this config");
    verify->add_option("--out", out_dir, "Archive directory");
    verify->add_option("--only", only, "Estimate ids to check")->delimiter(',');
    verify->add_option("--tolerance-scale", tolerance_scale, "Multiplier for every tolerance")
        ->check(CLI::PositiveNumber);

    auto* exp = app.add_subcommand("export", "Write CSV files from an archive");
    exp->add_option("archive", archive, "Archive directory")->required();
    exp->add_option("what", what, "series or snapshot")->required();
    exp->add_option("--run", run_id, "Run id (all runs for series when omitted)");
    exp->add_option("--time", time, "Checkpoint time for snapshots");

    auto* self = app.add_subcommand("selfcheck", "Run the numerical self-checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cmd::kConfigError;
    }

    try {
        cmd::Options opt;
        if (!out_dir.empty()) opt.out = out_dir;
        opt.jobs = jobs;
        opt.only = only;
        opt.tolerance_scale = tolerance_scale;
        if (*tmax) return cmd::cmd_tmax(coneflow::config::load_config(config_path), std::cout);
        if (*run) return cmd::cmd_run(coneflow::config::load_config(config_path), opt, std::cout);
        if (*verify) return cmd::cmd_verify(archive_root(archive, out_dir, config_path), opt, std::cout);
        if (*exp) return cmd::cmd_export(archive, what, run_id, time, std::cout);
        if (*self) return cmd::cmd_selfcheck(std::cout);
    } catch (const coneflow::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return cmd::kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::kRuntimeError;
    }
    return cmd::kOk;
}
