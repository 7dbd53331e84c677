#include "coneflow/commands.hpp"

#include "coneflow/errors.hpp"
#include "coneflow/selfcheck.hpp"
#include "format.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace coneflow::commands {

namespace fs = std::filesystem;
using estimates::EstimateReport;

Experiment prepare(const config::RunConfig& cfg) {
    config::validate(cfg);
    Experiment e;
    e.cfg = cfg;
    e.surface = grid::ModelSurface::build(cfg.surface.kind, cfg.surface.resolution, cfg.surface.volume);
    if (!cfg.divisor.empty()) e.divisor = grid::divisor_section(*e.surface, cfg.divisor);
    if (cfg.flow.k) {
        e.k = *cfg.flow.k;
    } else if (cfg.divisor.empty()) {
        e.k = 0.0;
    } else {
        e.k = background::select_k(*e.surface, e.divisor, cfg.flow.gamma, cfg.flow.eps_list, cfg.flow.k_equivalence,
                                   cfg.flow.T, cfg.flow.eta_degree);
    }
    for (double eps : cfg.flow.eps_list) {
        background::FlowParams fp;
        fp.gamma = cfg.flow.gamma;
        fp.epsilon = eps;
        fp.k = e.k;
        fp.T = cfg.flow.T;
        fp.eta_degree = cfg.flow.eta_degree;
        e.packs.push_back(background::build_pack(e.surface, e.divisor, fp));
    }
    initial::DatumSpec spec = cfg.initial.datum;
    if (spec.kind == initial::DatumKind::Random && !spec.params.contains("seed"))
        spec.params["seed"] = double(cfg.seed);
    e.datum = initial::make_initial(e.surface, e.divisor, spec);
    e.ladder = initial::truncation_ladder(e.datum, cfg.initial.j_list, cfg.initial.sigma);
    return e;
}

std::vector<RunPlan> plan_runs(const Experiment& exp) {
    std::vector<RunPlan> plans;
    for (std::size_t i = 0; i < exp.packs.size(); ++i) {
        for (const auto& lvl : exp.ladder.levels) {
            const std::string id = "e" + std::to_string(i) + "_j" + std::to_string(lvl.j);
            plans.push_back({id, i, lvl.j, false, lvl.phi});
            if (exp.cfg.initial.companion_shift) {
                grid::Values shifted = lvl.phi;
                for (auto& v : shifted) v += *exp.cfg.initial.companion_shift;
                plans.push_back({id + "_c", i, lvl.j, true, std::move(shifted)});
            }
        }
    }
    return plans;
}

fs::path resolve_output(const config::RunConfig& cfg, const Options& opt) {
    if (opt.out) return *opt.out;
    const fs::path dir(cfg.output_dir);
    if (dir.is_relative()) {
        if (const char* env = std::getenv("CONEFLOW_OUT"); env && *env) return fs::path(env) / dir;
    }
    return dir;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const fs::path& root, const archive::Manifest& m) {
    archive::write_file(root / archive::kManifestName, m.to_text());
}

std::string pack_path(std::size_t i) { return "pack/e" + std::to_string(i) + ".ckrf"; }

}  // namespace

std::string tmax_report(const config::RunConfig& cfg) {
    const double c1 = background::c1_degree(cfg.surface.kind);
    const int m = int(cfg.divisor.size());
    const double g = cfg.flow.gamma, e = cfg.flow.eta_degree;
    const double slope = background::class_slope(c1, m, g, e);
    const double tmax = background::compute_tmax(cfg.surface.volume, c1, m, g, e);
    std::ostringstream o;
    char buf[64];
    o << "surface = " << grid::to_string(cfg.surface.kind) << "\n";
    o << "V = " << format_double(cfg.surface.volume) << "\n";
    o << "c1 = " << format_double(c1) << ", m = " << m << ", gamma = " << format_double(g)
      << ", e = " << format_double(e) << "\n";
    o << "slope = -c1 + (1 - gamma) m + e = " << format_double(-c1) << " + " << format_double((1.0 - g) * m) << " + "
      << format_double(e) << " = " << format_double(slope) << "\n";
    if (std::isfinite(tmax))
        std::snprintf(buf, sizeof buf, "%.10g", tmax);
    else
        std::snprintf(buf, sizeof buf, "inf");
    o << "T_max = " << buf << "\n";
    return o.str();
}

int cmd_tmax(const config::RunConfig& cfg, std::ostream& out) {
    out << tmax_report(cfg);
    return kOk;
}

int cmd_run(const config::RunConfig& cfg, const Options& opt, std::ostream& out) {
    const Experiment exp = prepare(cfg);
    const auto plans = plan_runs(exp);
    const fs::path root = resolve_output(cfg, opt);
    fs::create_directories(root);
    for (const char* stale : {"runs", "pack", "reports", "exports"}) fs::remove_all(root / stale);

    archive::Manifest manifest;
    manifest.created = utc_now();
    manifest.status = "incomplete";
    write_manifest(root, manifest);

    archive::write_file(root / "config.ini", config::emit_config(cfg));
    for (std::size_t i = 0; i < exp.packs.size(); ++i)
        archive::write_file(root / pack_path(i), archive::encode_pack(exp.packs[i]));

    const auto checkpoints = cfg.checkpoint_times();
    std::vector<archive::RunRecord> records(plans.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < plans.size(); i = next++) {
            const auto& plan = plans[i];
            auto& rec = records[i];
            rec.id = plan.id;
            rec.epsilon = exp.packs[plan.eps_index].params.epsilon;
            rec.j = plan.j;
            rec.companion = plan.companion;
            try {
                const auto traj = flow::run_flow(exp.packs[plan.eps_index], plan.j, plan.start, cfg.steps.control,
                                                 checkpoints, plan.id);
                const fs::path dir = root / "runs" / plan.id;
                archive::write_file(dir / "checkpoints.ckrf", archive::encode_trajectory(*exp.surface, traj));
                archive::write_file(dir / "series.csv", archive::series_csv(traj));
                rec.status = traj.termination == flow::Termination::ReachedT ? "ok" : "failed";
                rec.note = flow::to_string(traj.termination) + (traj.note.empty() ? "" : ": " + traj.note);
            } catch (const std::exception& e) {
                rec.status = "failed";
                rec.note = e.what();
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(opt.jobs, int(plans.size())));
    std::vector<std::jthread> pool;
    for (int i = 1; i < jobs; ++i) pool.emplace_back(worker);
    worker();
    pool.clear();

    manifest.runs = records;
    std::size_t failed = 0;
    for (const auto& r : records) failed += r.status != "ok";
    record_file(manifest, root, "config.ini");
    for (std::size_t i = 0; i < exp.packs.size(); ++i) record_file(manifest, root, pack_path(i));
    for (const auto& r : records) {
        for (const char* f : {"checkpoints.ckrf", "series.csv"}) {
            const std::string rel = "runs/" + r.id + "/" + f;
            if (fs::exists(root / rel)) record_file(manifest, root, rel);
        }
    }
    manifest.status = failed == 0 ? "complete" : "failed";
    write_manifest(root, manifest);

    out << "archive " << root.string() << ": " << records.size() << " run(s), " << failed << " failed, k = "
        << format_double(exp.k) << "\n";
    for (const auto& r : records)
        if (r.status != "ok") out << "  run " << r.id << " failed: " << r.note << "\n";
    return failed == 0 ? kOk : kRuntimeError;
}

LoadedArchive load_archive(const fs::path& root) {
    LoadedArchive a;
    a.root = root;
    a.manifest = archive::load_verified(root);
    a.exp = prepare(config::parse_config(archive::read_file(root / "config.ini")));
    for (std::size_t i = 0; i < a.exp.packs.size(); ++i) {
        if (archive::encode_pack(a.exp.packs[i]) != archive::read_file(root / pack_path(i)))
            throw RuntimeFailure("background rebuilt from the archived config differs from " + pack_path(i));
    }
    a.plans = plan_runs(a.exp);
    for (const auto& plan : a.plans) {
        const auto rec = std::find_if(a.manifest.runs.begin(), a.manifest.runs.end(),
                                      [&](const archive::RunRecord& r) { return r.id == plan.id; });
        if (rec == a.manifest.runs.end()) throw RuntimeFailure("manifest lacks run " + plan.id);
        const fs::path file = root / "runs" / plan.id / "checkpoints.ckrf";
        if (fs::exists(file)) {
            a.trajectories.push_back(archive::decode_trajectory(archive::read_file(file), *a.exp.surface));
        } else {
            flow::Trajectory t;
            t.run_id = plan.id;
            t.j = plan.j;
            t.termination = flow::Termination::PositivityLoss;
            t.note = rec->note;
            a.trajectories.push_back(std::move(t));
        }
        a.ok.push_back(rec->status == "ok");
    }
    return a;
}

namespace {

struct Families {
    // Main (non-companion) run indices per epsilon index, ordered by j.
    std::vector<std::vector<std::size_t>> by_eps;
    std::map<std::size_t, std::size_t> companion_of;
};

Families families(const LoadedArchive& a) {
    Families f;
    f.by_eps.resize(a.exp.packs.size());
    for (std::size_t i = 0; i < a.plans.size(); ++i) {
        if (a.plans[i].companion)
            f.companion_of[i - 1] = i;
        else
            f.by_eps[a.plans[i].eps_index].push_back(i);
    }
    return f;
}

bool has_times(const flow::Trajectory& t, const std::vector<double>& times) {
    for (double x : times) {
        bool found = false;
        for (const auto& s : t.snapshots) found = found || std::abs(s.t - x) <= 1e-12 * std::max(1.0, x);
        if (!found) return false;
    }
    return true;
}

EstimateReport comparison_report(const estimates::ComparisonVerdict& v) {
    EstimateReport r;
    r.estimate_id = "comparison";
    r.run_ids = {v.run_u, v.run_v};
    r.tolerance = v.tolerance;
    r.margin = -std::max(v.max_excess, -v.min_deficit);
    r.witness = v.witness;
    r.diagnostics = {{"initial_sup_gap", v.initial_sup_gap},
                     {"initial_inf_gap", v.initial_inf_gap},
                     {"max_excess", v.max_excess},
                     {"min_deficit", v.min_deficit}};
    r.pass = v.pass;
    return r;
}

}  // namespace

std::vector<EstimateReport> verify_reports(const LoadedArchive& a, const std::vector<std::string>& requested,
                                           double scale) {
    const auto& cfg = a.exp.cfg;
    const auto& v = cfg.verify;
    const auto fam = families(a);
    const std::size_t n_j = cfg.initial.j_list.size();
    const std::size_t n_eps = cfg.flow.eps_list.size();
    const double tol = v.tolerance * scale;

    std::vector<std::string> selection = requested.empty() ? v.checks : requested;
    const bool strict = !selection.empty();
    const double t_end = 1.0 / (2.0 * v.l);
    const double tmax = a.exp.packs.front().tmax;
    const bool envelope_ok = 2.0 * v.l > std::max(std::isfinite(tmax) ? 1.0 / tmax : 0.0, 1.0) &&
                             !a.trajectories.empty() && cfg.checkpoint_times().front() < t_end;
    std::map<std::string, std::string> requirement_missing;
    if (n_j < 3) requirement_missing["osc"] = "check 'osc' needs at least three j levels";
    if (n_eps < 2) requirement_missing["monotone_eps"] = "check 'monotone_eps' needs at least two epsilon values";
    if (!cfg.initial.companion_shift)
        requirement_missing["comparison"] = "check 'comparison' needs paired runs: set [initial] companion_shift";
    if (n_j < 2) requirement_missing["reparam_ordering"] = "check 'reparam_ordering' needs at least two j levels";
    if (!envelope_ok)
        requirement_missing["lower_envelope"] =
            "check 'lower_envelope' needs 2l > max(1/T_max, 1) and checkpoints below 1/(2l)";
    if (!has_times(a.trajectories.front(), estimates::l1_times()) && a.ok.front())
        requirement_missing["l1_convergence"] = "check 'l1_convergence' needs checkpoints at 0.2 * 2^-m, m = 0..5";
    if (selection.empty()) {
        for (const auto& c : config::known_checks())
            if (!requirement_missing.contains(c)) selection.push_back(c);
    }
    for (const auto& c : selection) {
        const auto& known = config::known_checks();
        if (std::find(known.begin(), known.end(), c) == known.end()) throw ConfigError("unknown check '" + c + "'");
        if (strict && requirement_missing.contains(c)) throw ConfigError(requirement_missing.at(c));
    }

    std::vector<EstimateReport> out;
    std::vector<std::string> failed_runs;
    for (std::size_t i = 0; i < a.plans.size(); ++i)
        if (!a.ok[i]) failed_runs.push_back(a.plans[i].id);
    if (!failed_runs.empty()) {
        EstimateReport r;
        r.estimate_id = "runs_completed";
        r.run_ids = failed_runs;
        r.tolerance = 0.0;
        r.margin = -double(failed_runs.size());
        r.note = "runs that did not reach T are excluded from the estimate checks";
        r.finalize();
        out.push_back(r);
    }

    auto main_runs = [&] {
        std::vector<std::size_t> idx;
        for (const auto& f : fam.by_eps)
            for (std::size_t i : f)
                if (a.ok[i]) idx.push_back(i);
        return idx;
    };
    auto pack_of = [&](std::size_t i) -> const background::BackgroundPack& { return a.exp.packs[a.plans[i].eps_index]; };
    auto family_ok = [&](const std::vector<std::size_t>& idx, const std::string& check) {
        for (std::size_t i : idx)
            if (!a.ok[i]) throw RuntimeFailure("check '" + check + "' needs run " + a.plans[i].id + ", which failed");
    };

    for (const auto& check : selection) {
        if (check == "upper_barrier" || check == "lower_barrier") {
            for (std::size_t i : main_runs())
                for (double t0 : v.t0_list)
                    out.push_back(check == "upper_barrier"
                                      ? estimates::check_upper_barrier(pack_of(i), a.trajectories[i], t0, tol)
                                      : estimates::check_lower_barrier(pack_of(i), a.trajectories[i], t0, tol));
        } else if (check == "hstat") {
            const double shifted = v.t0_list.empty() ? 0.0 : v.t0_list.front();
            for (std::size_t i : main_runs())
                out.push_back(estimates::check_hstat(pack_of(i), a.trajectories[i], shifted, tol));
        } else if (check == "osc") {
            for (const auto& f : fam.by_eps) {
                family_ok(f, check);
                std::vector<flow::Trajectory> members;
                for (std::size_t i : f) members.push_back(a.trajectories[i]);
                out.push_back(estimates::check_osc(members, v.osc_times, v.max_osc_spread));
            }
        } else if (check == "phidot_lower") {
            const double tp = v.t_prime.value_or(2.0 * cfg.flow.T / 3.0);
            for (std::size_t i : main_runs())
                out.push_back(estimates::check_phidot_lower(pack_of(i), a.trajectories[i], v.phidot_t0, tp, tol));
        } else if (check == "density_ratio") {
            const double t0 = v.t0_list.empty() ? cfg.checkpoint_times().front() : v.t0_list.front();
            for (std::size_t i : main_runs())
                out.push_back(estimates::check_density_ratio(pack_of(i), a.trajectories[i], t0));
        } else if (check == "comparison") {
            for (std::size_t i : main_runs()) {
                const auto it = fam.companion_of.find(i);
                if (it == fam.companion_of.end())
                    throw ConfigError("check 'comparison' needs companion runs; set [initial] companion_shift");
                const std::size_t c = it->second;
                family_ok({c}, check);
                out.push_back(comparison_report(estimates::check_comparison(
                    pack_of(i), a.trajectories[i], a.trajectories[c], v.comparison_tolerance * scale)));
            }
        } else if (check == "lower_envelope") {
            for (std::size_t i : main_runs())
                out.push_back(estimates::check_lower_envelope(pack_of(i), a.trajectories[i], v.l, tol));
        } else if (check == "monotone_eps") {
            for (std::size_t jj = 0; jj < n_j; ++jj) {
                std::vector<std::size_t> idx;
                for (const auto& f : fam.by_eps) idx.push_back(f[jj]);
                family_ok(idx, check);
                std::vector<estimates::RunRef> refs;
                for (std::size_t i : idx) refs.push_back({&pack_of(i), &a.trajectories[i]});
                out.push_back(estimates::check_monotone_eps(refs, v.monotone_t, tol));
            }
        } else if (check == "l1_convergence") {
            for (std::size_t i : main_runs())
                out.push_back(estimates::check_l1_convergence(pack_of(i), a.trajectories[i], a.exp.datum.phi0.values));
        } else if (check == "reparam_ordering") {
            for (const auto& f : fam.by_eps) {
                family_ok(f, check);
                for (std::size_t q = 0; q + 1 < f.size(); ++q)
                    out.push_back(estimates::check_reparam_ordering(pack_of(f[q]), a.trajectories[f[q + 1]],
                                                                    a.trajectories[f[q]], v.c_tilde, tol));
            }
        }
    }
    return out;
}

std::string report_record(const EstimateReport& r) {
    std::ostringstream o;
    auto join_map = [](const std::map<std::string, double>& m) {
        std::string s;
        for (const auto& [k, v] : m) s += (s.empty() ? "" : ", ") + k + "=" + num(v);
        return s;
    };
    o << "[report]\n";
    o << "estimate_id = " << r.estimate_id << "\n";
    o << "run_ids = ";
    for (std::size_t i = 0; i < r.run_ids.size(); ++i) o << (i ? ", " : "") << r.run_ids[i];
    o << "\nconstant_mode = " << estimates::to_string(r.constant_mode) << "\n";
    o << "parameters = " << join_map(r.parameters) << "\n";
    o << "eps_list = ";
    for (std::size_t i = 0; i < r.eps_list.size(); ++i) o << (i ? ", " : "") << num(r.eps_list[i]);
    o << "\nj_list = ";
    for (std::size_t i = 0; i < r.j_list.size(); ++i) o << (i ? ", " : "") << r.j_list[i];
    o << "\nmargin = " << num(r.margin) << "\n";
    o << "witness_t = " << num(r.witness.t) << "\n";
    o << "witness_node = " << r.witness.node << "\n";
    o << "tolerance = " << num(r.tolerance) << "\n";
    o << "pass = " << (r.pass ? "true" : "false") << "\n";
    o << "diagnostics = " << join_map(r.diagnostics) << "\n";
    if (!r.note.empty()) o << "note = " << r.note << "\n";
    return o.str();
}

int cmd_verify(const fs::path& root, const Options& opt, std::ostream& out) {
    const LoadedArchive a = load_archive(root);
    const auto reports = verify_reports(a, opt.only, opt.tolerance_scale);

    std::map<std::string, std::vector<const EstimateReport*>> by_id;
    std::vector<std::string> order;
    for (const auto& r : reports) {
        if (!by_id.contains(r.estimate_id)) order.push_back(r.estimate_id);
        by_id[r.estimate_id].push_back(&r);
    }
    archive::Manifest manifest = a.manifest;
    fs::remove_all(root / "reports");
    std::ostringstream summary;
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %8s %8s %24s  %s\n", "estimate", "records", "passed", "worst_margin",
                  "verdict");
    summary << line;
    bool all = true;
    for (const auto& id : order) {
        std::string text;
        std::size_t passed = 0;
        double worst = std::numeric_limits<double>::infinity();
        for (const auto* r : by_id[id]) {
            text += report_record(*r) + "\n";
            passed += r->pass;
            worst = std::min(worst, r->margin);
        }
        const bool ok = passed == by_id[id].size();
        all = all && ok;
        const std::string rel = "reports/" + id + ".txt";
        archive::write_file(root / rel, text);
        record_file(manifest, root, rel);
        std::snprintf(line, sizeof line, "%-18s %8zu %8zu %24.17g  %s\n", id.c_str(), by_id[id].size(), passed, worst,
                      ok ? "PASS" : "FAIL");
        summary << line;
    }
    archive::write_file(root / "reports/summary.txt", summary.str());
    record_file(manifest, root, "reports/summary.txt");
    write_manifest(root, manifest);
    out << summary.str();
    return all ? kOk : kVerificationFailed;
}

int cmd_export(const fs::path& root, const std::string& what, const std::string& run_id, double t, std::ostream& out) {
    if (what != "series" && what != "snapshot")
        throw ConfigError("unknown export target '" + what + "' (expected series or snapshot)");
    const LoadedArchive a = load_archive(root);
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < a.plans.size(); ++i)
        if (run_id.empty() || a.plans[i].id == run_id) targets.push_back(i);
    if (targets.empty()) throw ConfigError("archive has no run '" + run_id + "'");
    if (what == "snapshot" && run_id.empty()) throw ConfigError("snapshot export needs a run id");
    for (std::size_t i : targets) {
        const auto& traj = a.trajectories[i];
        fs::path file;
        std::string body;
        if (what == "series") {
            file = root / "exports" / (traj.run_id + ".series.csv");
            body = archive::series_csv(traj);
        } else {
            file = root / "exports" / (traj.run_id + ".snapshot_t" + format_double(t) + ".csv");
            body = archive::snapshot_csv(a.exp.packs[a.plans[i].eps_index], traj, t);
        }
        archive::write_file(file, body);
        out << file.string() << "\n";
    }
    return kOk;
}

int cmd_selfcheck(std::ostream& out) {
    bool all = true;
    for (const auto& r : selfcheck::run_all()) {
        out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        all = all && r.pass;
    }
    return all ? kOk : kVerificationFailed;
}

}  // namespace coneflow::commands
