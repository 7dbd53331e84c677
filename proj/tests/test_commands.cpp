#include "fixtures.hpp"

#include "coneflow/commands.hpp"
#include "coneflow/errors.hpp"

#include <doctest.h>

#include <sstream>

using namespace coneflow;
namespace fs = std::filesystem;
namespace cmd = coneflow::commands;

namespace {

const char* kTorus = R"([surface]
kind = torus
resolution = 32

[flow]
epsilon = 0.2, 0.1
T = 0.3

[initial]
datum = smooth(amp=0.05)
j = 1, 2, 3
companion_shift = 0.5

[checkpoints]
spacing = 0.05

[verify]
checks = all
t0 = 0.1
osc_times = 0.1, 0.2
)";

cmd::Options into(const fs::path& dir, int jobs = 1) {
    cmd::Options o;
    o.out = dir;
    o.jobs = jobs;
    return o;
}

int run(const std::string& text, const fs::path& dir, int jobs = 1) {
    std::ostringstream out;
    return cmd::cmd_run(config::parse_config(text), into(dir, jobs), out);
}

}  // namespace

TEST_SUITE("commands") {

TEST_CASE("tmax report") {
    std::ostringstream out;
    CHECK(cmd::cmd_tmax(config::parse_config(kTorus), out) == cmd::kOk);
    CHECK(out.str().find("T_max = inf") != std::string::npos);
}

TEST_CASE("plan has main runs and companions") {
    const auto exp = cmd::prepare(config::parse_config(kTorus));
    const auto plans = cmd::plan_runs(exp);
    REQUIRE(plans.size() == 12);
    std::size_t companions = 0;
    for (const auto& p : plans) {
        companions += p.companion;
        if (p.companion) {
            const auto& main = *std::find_if(plans.begin(), plans.end(),
                                             [&](const cmd::RunPlan& q) {
                                                 return !q.companion && q.j == p.j && q.eps_index == p.eps_index;
                                             });
            for (std::size_t i = 0; i < p.start.size(); ++i) REQUIRE(p.start[i] == main.start[i] + 0.5);
        }
    }
    CHECK(companions == 6);
}

TEST_CASE("run, verify, corrupt") {
    const auto root = fixtures::scratch("cmd_pipeline");
    REQUIRE(run(kTorus, root) == cmd::kOk);
    CHECK(fs::exists(root / "manifest.txt"));
    CHECK(archive::load_verified(root).status == "complete");

    std::ostringstream out;
    CHECK(cmd::cmd_verify(root, {}, out) == cmd::kOk);
    for (const auto& id : config::known_checks()) {
        CAPTURE(id);
        CHECK(fs::exists(root / "reports" / (id + ".txt")));
    }
    CHECK(out.str().find("FAIL") == std::string::npos);
    // verify rewrites the manifest with the report hashes, and the archive still loads.
    CHECK(archive::load_verified(root).files.size() > 2);

    cmd::Options only;
    only.only = {"hstat"};
    std::ostringstream one;
    CHECK(cmd::cmd_verify(root, only, one) == cmd::kOk);
    CHECK(one.str().find("hstat") != std::string::npos);
    CHECK(one.str().find("osc") == std::string::npos);

    // Tamper with one trajectory: the hash check refuses it.
    const auto file = root / "runs" / "e0_j1" / "checkpoints.ckrf";
    auto bytes = archive::read_file(file);
    bytes[bytes.size() / 2] ^= 1;
    archive::write_file(file, bytes);
    CHECK_THROWS_AS(cmd::load_archive(root), RuntimeFailure);
}

TEST_CASE("a corrupted trajectory with valid hashes fails verification") {
    const auto root = fixtures::scratch("cmd_corrupt");
    REQUIRE(run(kTorus, root) == cmd::kOk);
    const auto exp = cmd::prepare(config::parse_config(kTorus));
    const auto file = root / "runs" / "e0_j1" / "checkpoints.ckrf";
    auto traj = archive::decode_trajectory(archive::read_file(file), *exp.surface);
    traj.snapshots.back().phi[7] += 1.0;
    archive::write_file(file, archive::encode_trajectory(*exp.surface, traj));
    auto m = archive::Manifest::parse(archive::read_file(root / archive::kManifestName));
    archive::record_file(m, root, "runs/e0_j1/checkpoints.ckrf");
    archive::write_file(root / archive::kManifestName, m.to_text());

    cmd::Options only;
    only.only = {"upper_barrier"};
    std::ostringstream out;
    CHECK(cmd::cmd_verify(root, only, out) == cmd::kVerificationFailed);
    CHECK(out.str().find("FAIL") != std::string::npos);
}

TEST_CASE("comparison needs companions") {
    std::string text = kTorus;
    text.erase(text.find("companion_shift"), std::string("companion_shift = 0.5\n").size());
    const auto root = fixtures::scratch("cmd_nocompanion");
    REQUIRE(run(text, root) == cmd::kOk);
    cmd::Options only;
    only.only = {"comparison"};
    std::ostringstream out;
    CHECK_THROWS_AS(cmd::cmd_verify(root, only, out), ConfigError);
}

TEST_CASE("runs are deterministic across thread counts") {
    const auto a = fixtures::scratch("cmd_det_a");
    const auto b = fixtures::scratch("cmd_det_b");
    REQUIRE(run(kTorus, a, 1) == cmd::kOk);
    REQUIRE(run(kTorus, b, 4) == cmd::kOk);
    const auto ma = archive::load_verified(a), mb = archive::load_verified(b);
    REQUIRE(ma.files.size() == mb.files.size());
    for (std::size_t i = 0; i < ma.files.size(); ++i) {
        CHECK(ma.files[i].path == mb.files[i].path);
        CHECK(ma.files[i].sha256 == mb.files[i].sha256);
    }
}

TEST_CASE("export is reproducible") {
    const auto root = fixtures::scratch("cmd_export");
    REQUIRE(run(kTorus, root) == cmd::kOk);
    std::ostringstream out;
    REQUIRE(cmd::cmd_export(root, "series", "", 0.0, out) == cmd::kOk);
    REQUIRE(cmd::cmd_export(root, "snapshot", "e0_j2", 0.1, out) == cmd::kOk);
    const auto series = archive::read_file(root / "exports" / "e0_j2.series.csv");
    const auto snap = archive::read_file(root / "exports" / "e0_j2.snapshot_t0.1.csv");
    REQUIRE(cmd::cmd_export(root, "series", "e0_j2", 0.0, out) == cmd::kOk);
    REQUIRE(cmd::cmd_export(root, "snapshot", "e0_j2", 0.1, out) == cmd::kOk);
    CHECK(archive::read_file(root / "exports" / "e0_j2.series.csv") == series);
    CHECK(archive::read_file(root / "exports" / "e0_j2.snapshot_t0.1.csv") == snap);

    CHECK_THROWS_AS(cmd::cmd_export(root, "plots", "", 0.0, out), ConfigError);
    CHECK_THROWS_AS(cmd::cmd_export(root, "series", "nope", 0.0, out), ConfigError);
    CHECK_THROWS_AS(cmd::cmd_export(root, "snapshot", "", 0.1, out), ConfigError);
    CHECK_THROWS_AS(cmd::cmd_export(root, "snapshot", "e0_j2", 0.123, out), ConfigError);
}

TEST_CASE("output directory resolution") {
    auto cfg = config::parse_config(kTorus);
    cfg.output_dir = "rel/out";
    CHECK(cmd::resolve_output(cfg, into("/x/y")) == fs::path("/x/y"));
    const char* old = std::getenv("CONEFLOW_OUT");
    const std::string saved = old ? old : "";
    ::setenv("CONEFLOW_OUT", "/base", 1);
    CHECK(cmd::resolve_output(cfg, {}) == fs::path("/base/rel/out"));
    ::unsetenv("CONEFLOW_OUT");
    CHECK(cmd::resolve_output(cfg, {}) == fs::path("rel/out"));
    if (old) ::setenv("CONEFLOW_OUT", saved.c_str(), 1);
}

TEST_CASE("selfcheck") {
    std::ostringstream out;
    CHECK(cmd::cmd_selfcheck(out) == cmd::kOk);
    CHECK(out.str().find("FAIL") == std::string::npos);
}

}
