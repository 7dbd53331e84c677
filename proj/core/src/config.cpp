#include "coneflow/config.hpp"

#include "coneflow/background.hpp"
#include "coneflow/errors.hpp"
#include "coneflow/estimates.hpp"
#include "format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace coneflow::config {

bool StepSpec::operator==(const StepSpec& o) const {
    const auto& a = control;
    const auto& b = o.control;
    return a.scheme == b.scheme && a.dt_init == b.dt_init && a.dt_min == b.dt_min && a.dt_max == b.dt_max &&
           a.safety == b.safety && a.growth == b.growth && a.rk_tolerance == b.rk_tolerance &&
           a.newton_tolerance == b.newton_tolerance && a.newton_max_iterations == b.newton_max_iterations;
}

bool RunConfig::operator==(const RunConfig& o) const {
    return surface == o.surface && divisor == o.divisor && flow == o.flow && initial == o.initial &&
           steps == o.steps && checkpoints == o.checkpoints && verify == o.verify && output_dir == o.output_dir &&
           seed == o.seed;
}

const std::vector<std::string>& known_checks() {
    static const std::vector<std::string> names{
        "upper_barrier", "lower_barrier", "hstat",          "osc",           "phidot_lower",     "density_ratio",
        "comparison",    "lower_envelope", "monotone_eps", "l1_convergence", "reparam_ordering"};
    return names;
}

double RunConfig::tmax() const {
    return background::compute_tmax(surface.volume, background::c1_degree(surface.kind), int(divisor.size()),
                                    flow.gamma, flow.eta_degree);
}

std::vector<double> RunConfig::checkpoint_times() const {
    std::vector<double> t;
    const double T = flow.T;
    const long count = std::lround(std::floor(T / checkpoints.spacing + 1e-9));
    for (long i = 1; i <= count; ++i) t.push_back(double(i) * checkpoints.spacing);
    t.insert(t.end(), checkpoints.extra.begin(), checkpoints.extra.end());
    if (std::find(verify.checks.begin(), verify.checks.end(), "l1_convergence") != verify.checks.end()) {
        for (double x : estimates::l1_times())
            if (x <= T) t.push_back(x);
    }
    if (t.empty() || std::abs(t.back() - T) > 0.0) t.push_back(T);
    std::sort(t.begin(), t.end());
    std::vector<double> out;
    for (double x : t) {
        if (!(x > 0.0 && x <= T)) continue;
        if (!out.empty() && std::abs(x - out.back()) <= 1e-12 * std::max(1.0, x)) continue;
        out.push_back(x);
    }
    return out;
}

double epsilon_floor(const SurfaceSpec& s) {
    const double h = s.kind == grid::SurfaceKind::Torus ? 1.0 / s.resolution : std::numbers::pi / s.resolution;
    return 2.0 * h * h;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg);
}

double to_double(const std::string& v, int line, const std::string& key) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size())
        fail(line, "'" + key + "' expects a number, got '" + v + "'");
    return out;
}

long long to_int(const std::string& v, int line, const std::string& key) {
    long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size())
        fail(line, "'" + key + "' expects an integer, got '" + v + "'");
    return out;
}

std::vector<double> to_doubles(const std::string& v, int line, const std::string& key) {
    std::vector<double> out;
    if (trim(v).empty()) return out;
    for (const auto& item : split(v, ',')) out.push_back(to_double(item, line, key));
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, int)>;

std::map<std::string, std::map<std::string, Setter>> setters() {
    std::map<std::string, std::map<std::string, Setter>> m;
    m["surface"]["kind"] = [](RunConfig& c, const std::string& v, int line) {
        try {
            c.surface.kind = grid::surface_kind_from_string(v);
        } catch (const ConfigError& e) {
            fail(line, e.what());
        }
    };
    m["surface"]["resolution"] = [](RunConfig& c, const std::string& v, int line) {
        c.surface.resolution = int(to_int(v, line, "resolution"));
    };
    m["surface"]["volume"] = [](RunConfig& c, const std::string& v, int line) {
        c.surface.volume = to_double(v, line, "volume");
    };
    m["divisor"]["point"] = [](RunConfig& c, const std::string& v, int line) {
        const auto xs = to_doubles(v, line, "point");
        if (xs.size() != 2) fail(line, "'point' expects 'colatitude, longitude'");
        c.divisor.push_back({xs[0], xs[1]});
    };
    m["flow"]["gamma"] = [](RunConfig& c, const std::string& v, int line) { c.flow.gamma = to_double(v, line, "gamma"); };
    m["flow"]["epsilon"] = [](RunConfig& c, const std::string& v, int line) {
        c.flow.eps_list = to_doubles(v, line, "epsilon");
        if (c.flow.eps_list.empty()) fail(line, "'epsilon' needs at least one value");
    };
    m["flow"]["k"] = [](RunConfig& c, const std::string& v, int line) {
        if (v == "auto")
            c.flow.k.reset();
        else
            c.flow.k = to_double(v, line, "k");
    };
    m["flow"]["k_equivalence"] = [](RunConfig& c, const std::string& v, int line) {
        c.flow.k_equivalence = to_double(v, line, "k_equivalence");
    };
    m["flow"]["T"] = [](RunConfig& c, const std::string& v, int line) { c.flow.T = to_double(v, line, "T"); };
    m["flow"]["eta_degree"] = [](RunConfig& c, const std::string& v, int line) {
        c.flow.eta_degree = to_double(v, line, "eta_degree");
    };
    m["initial"]["datum"] = [](RunConfig& c, const std::string& v, int line) {
        try {
            c.initial.datum = initial::parse_datum(v);
        } catch (const ConfigError& e) {
            fail(line, e.what());
        }
    };
    m["initial"]["j"] = [](RunConfig& c, const std::string& v, int line) {
        c.initial.j_list.clear();
        for (const auto& item : split(v, ',')) c.initial.j_list.push_back(int(to_int(item, line, "j")));
    };
    m["initial"]["sigma"] = [](RunConfig& c, const std::string& v, int line) {
        c.initial.sigma = to_double(v, line, "sigma");
    };
    m["initial"]["companion_shift"] = [](RunConfig& c, const std::string& v, int line) {
        if (v == "none")
            c.initial.companion_shift.reset();
        else
            c.initial.companion_shift = to_double(v, line, "companion_shift");
    };
    auto& st = m["steps"];
    st["scheme"] = [](RunConfig& c, const std::string& v, int line) {
        try {
            c.steps.control.scheme = flow::scheme_from_string(v);
        } catch (const ConfigError& e) {
            fail(line, e.what());
        }
    };
    auto num = [](double flow::StepControl::*field, const char* key) {
        return [field, key](RunConfig& c, const std::string& v, int line) {
            c.steps.control.*field = to_double(v, line, key);
        };
    };
    st["dt_init"] = num(&flow::StepControl::dt_init, "dt_init");
    st["dt_min"] = num(&flow::StepControl::dt_min, "dt_min");
    st["dt_max"] = num(&flow::StepControl::dt_max, "dt_max");
    st["safety"] = num(&flow::StepControl::safety, "safety");
    st["growth"] = num(&flow::StepControl::growth, "growth");
    st["rk_tolerance"] = num(&flow::StepControl::rk_tolerance, "rk_tolerance");
    st["newton_tolerance"] = num(&flow::StepControl::newton_tolerance, "newton_tolerance");
    st["newton_max_iterations"] = [](RunConfig& c, const std::string& v, int line) {
        c.steps.control.newton_max_iterations = int(to_int(v, line, "newton_max_iterations"));
    };
    m["checkpoints"]["spacing"] = [](RunConfig& c, const std::string& v, int line) {
        c.checkpoints.spacing = to_double(v, line, "spacing");
    };
    m["checkpoints"]["extra"] = [](RunConfig& c, const std::string& v, int line) {
        c.checkpoints.extra = to_doubles(v, line, "extra");
    };
    auto& ve = m["verify"];
    ve["checks"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.checks.clear();
        if (trim(v).empty()) return;
        for (const auto& item : split(v, ',')) {
            if (item == "all") {
                c.verify.checks = known_checks();
                continue;
            }
            const auto& known = known_checks();
            if (std::find(known.begin(), known.end(), item) == known.end()) fail(line, "unknown check '" + item + "'");
            c.verify.checks.push_back(item);
        }
    };
    ve["t0"] = [](RunConfig& c, const std::string& v, int line) { c.verify.t0_list = to_doubles(v, line, "t0"); };
    ve["osc_times"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.osc_times = to_doubles(v, line, "osc_times");
    };
    ve["phidot_t0"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.phidot_t0 = to_double(v, line, "phidot_t0");
    };
    ve["t_prime"] = [](RunConfig& c, const std::string& v, int line) {
        if (v == "auto")
            c.verify.t_prime.reset();
        else
            c.verify.t_prime = to_double(v, line, "t_prime");
    };
    ve["l"] = [](RunConfig& c, const std::string& v, int line) { c.verify.l = to_double(v, line, "l"); };
    ve["c_tilde"] = [](RunConfig& c, const std::string& v, int line) { c.verify.c_tilde = to_double(v, line, "c_tilde"); };
    ve["monotone_t"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.monotone_t = to_double(v, line, "monotone_t");
    };
    ve["tolerance"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.tolerance = to_double(v, line, "tolerance");
    };
    ve["comparison_tolerance"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.comparison_tolerance = to_double(v, line, "comparison_tolerance");
    };
    ve["max_osc_spread"] = [](RunConfig& c, const std::string& v, int line) {
        c.verify.max_osc_spread = to_double(v, line, "max_osc_spread");
    };
    m["output"]["directory"] = [](RunConfig& c, const std::string& v, int) { c.output_dir = v; };
    m["output"]["seed"] = [](RunConfig& c, const std::string& v, int line) {
        const long long s = to_int(v, line, "seed");
        if (s < 0) fail(line, "'seed' must be non-negative");
        c.seed = std::uint64_t(s);
    };
    return m;
}

std::string join(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + format_double(xs[i]);
    return out;
}

}  // namespace

void validate(const RunConfig& c) {
    const auto& s = c.surface;
    if (s.resolution < grid::kMinResolution)
        throw ConfigError("surface resolution must be at least " + std::to_string(grid::kMinResolution));
    if (!(s.volume > 0.0)) throw ConfigError("surface volume must be positive");
    if (s.kind == grid::SurfaceKind::Torus && !c.divisor.empty())
        throw ConfigError("divisor points are only supported on the sphere");
    for (const auto& p : c.divisor)
        if (!(p.colatitude > 0.0 && p.colatitude < std::numbers::pi))
            throw ConfigError("divisor colatitude must lie strictly between the poles");
    const auto& f = c.flow;
    if (!(f.gamma > 0.0 && f.gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (f.k && !(*f.k > 0.0)) throw ConfigError("k must be positive");
    if (!(f.k_equivalence > 1.0)) throw ConfigError("k_equivalence must exceed 1");
    if (!(f.T > 0.0)) throw ConfigError("T must be positive");
    const double tmax = c.tmax();
    if (!(f.T < tmax)) {
        std::ostringstream msg;
        msg << "T = " << format_double(f.T) << " violates T < T_max = " << format_double(tmax);
        throw ConfigError(msg.str());
    }
    const double floor = epsilon_floor(s);
    for (std::size_t i = 0; i < f.eps_list.size(); ++i) {
        const double e = f.eps_list[i];
        if (!(e > 0.0 && e <= 1.0)) throw ConfigError("epsilon values must lie in (0, 1]");
        if (e < floor) {
            std::ostringstream msg;
            msg << "epsilon = " << format_double(e) << " is below the resolvability floor 2h^2 = " << format_double(floor);
            throw ConfigError(msg.str());
        }
        if (i > 0 && !(e < f.eps_list[i - 1])) throw ConfigError("epsilon list must be strictly decreasing");
    }
    const auto kind = c.initial.datum.kind;
    const bool singular = kind == initial::DatumKind::DonaldsonCone || kind == initial::DatumKind::ZeroLelongUnbounded ||
                          kind == initial::DatumKind::LogPole;
    if (singular && c.divisor.empty())
        throw ConfigError("initial datum " + initial::to_string(kind) + " needs at least one divisor point");
    const auto& j = c.initial.j_list;
    if (j.empty()) throw ConfigError("j list must not be empty");
    for (std::size_t i = 0; i < j.size(); ++i)
        if (j[i] <= 0 || (i > 0 && j[i] <= j[i - 1])) throw ConfigError("j list must be positive and increasing");
    if (!(c.initial.sigma > 0.0)) throw ConfigError("sigma must be positive");
    c.steps.control.validate();
    if (!(c.checkpoints.spacing > 0.0)) throw ConfigError("checkpoint spacing must be positive");
    for (double t : c.checkpoints.extra)
        if (!(t > 0.0 && t <= f.T)) throw ConfigError("extra checkpoints must lie in (0, T]");
    const auto& v = c.verify;
    if (!(v.tolerance >= 0.0 && v.comparison_tolerance >= 0.0)) throw ConfigError("tolerances must be non-negative");
    if (v.t_prime && !(*v.t_prime > v.phidot_t0 && *v.t_prime < f.T)) throw ConfigError("t_prime must lie in (phidot_t0, T)");
    if (!(v.c_tilde > 0.0)) throw ConfigError("c_tilde must be positive");
    const bool reparam = std::find(v.checks.begin(), v.checks.end(), "reparam_ordering") != v.checks.end();
    if (reparam && std::isfinite(tmax) && !(v.c_tilde * tmax > 1.0))
        throw ConfigError("c_tilde must exceed 1/T_max when reparam_ordering is selected");
    if (c.output_dir.empty()) throw ConfigError("output directory must not be empty");
}

RunConfig parse_config(std::string_view text) {
    static const auto table = setters();
    RunConfig cfg;
    std::string section;
    std::set<std::pair<std::string, std::string>> seen;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string l = trim(raw);
        if (l.empty() || l[0] == ';') continue;
        if (l.front() == '[') {
            if (l.back() != ']') fail(line, "malformed section header '" + l + "'");
            section = trim(std::string_view(l).substr(1, l.size() - 2));
            if (!table.contains(section)) fail(line, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = l.find('=');
        if (eq == std::string::npos) fail(line, "expected 'key = value'");
        if (section.empty()) fail(line, "key outside of any section");
        const std::string key = trim(std::string_view(l).substr(0, eq));
        const std::string value = trim(std::string_view(l).substr(eq + 1));
        const auto& keys = table.at(section);
        const auto it = keys.find(key);
        if (it == keys.end()) fail(line, "unknown key '" + key + "' in [" + section + "]");
        if (key != "point" && !seen.insert({section, key}).second) fail(line, "duplicate key '" + key + "'");
        it->second(cfg, value, line);
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string emit_config(const RunConfig& c) {
    std::ostringstream o;
    o << "[surface]\n"
      << "kind = " << grid::to_string(c.surface.kind) << "\n"
      << "resolution = " << c.surface.resolution << "\n"
      << "volume = " << format_double(c.surface.volume) << "\n\n";
    o << "[divisor]\n";
    for (const auto& p : c.divisor)
        o << "point = " << format_double(p.colatitude) << ", " << format_double(p.longitude) << "\n";
    o << "\n[flow]\n"
      << "gamma = " << format_double(c.flow.gamma) << "\n"
      << "epsilon = " << join(c.flow.eps_list) << "\n"
      << "k = " << (c.flow.k ? format_double(*c.flow.k) : std::string("auto")) << "\n"
      << "k_equivalence = " << format_double(c.flow.k_equivalence) << "\n"
      << "T = " << format_double(c.flow.T) << "\n"
      << "eta_degree = " << format_double(c.flow.eta_degree) << "\n\n";
    o << "[initial]\n"
      << "datum = " << c.initial.datum.to_string() << "\n"
      << "j = ";
    for (std::size_t i = 0; i < c.initial.j_list.size(); ++i) o << (i ? ", " : "") << c.initial.j_list[i];
    o << "\nsigma = " << format_double(c.initial.sigma) << "\n"
      << "companion_shift = "
      << (c.initial.companion_shift ? format_double(*c.initial.companion_shift) : std::string("none")) << "\n\n";
    const auto& s = c.steps.control;
    o << "[steps]\n"
      << "scheme = " << flow::to_string(s.scheme) << "\n"
      << "dt_init = " << format_double(s.dt_init) << "\n"
      << "dt_min = " << format_double(s.dt_min) << "\n"
      << "dt_max = " << format_double(s.dt_max) << "\n"
      << "safety = " << format_double(s.safety) << "\n"
      << "growth = " << format_double(s.growth) << "\n"
      << "rk_tolerance = " << format_double(s.rk_tolerance) << "\n"
      << "newton_tolerance = " << format_double(s.newton_tolerance) << "\n"
      << "newton_max_iterations = " << s.newton_max_iterations << "\n\n";
    o << "[checkpoints]\n"
      << "spacing = " << format_double(c.checkpoints.spacing) << "\n"
      << "extra = " << join(c.checkpoints.extra) << "\n\n";
    const auto& v = c.verify;
    o << "[verify]\n"
      << "checks = ";
    for (std::size_t i = 0; i < v.checks.size(); ++i) o << (i ? ", " : "") << v.checks[i];
    o << "\nt0 = " << join(v.t0_list) << "\n"
      << "osc_times = " << join(v.osc_times) << "\n"
      << "phidot_t0 = " << format_double(v.phidot_t0) << "\n"
      << "t_prime = " << (v.t_prime ? format_double(*v.t_prime) : std::string("auto")) << "\n"
      << "l = " << format_double(v.l) << "\n"
      << "c_tilde = " << format_double(v.c_tilde) << "\n"
      << "monotone_t = " << format_double(v.monotone_t) << "\n"
      << "tolerance = " << format_double(v.tolerance) << "\n"
      << "comparison_tolerance = " << format_double(v.comparison_tolerance) << "\n"
      << "max_osc_spread = " << format_double(v.max_osc_spread) << "\n\n";
    o << "[output]\n"
      << "directory = " << c.output_dir << "\n"
      << "seed = " << c.seed << "\n";
    return o.str();
}

}  // namespace coneflow::config
