#include "coneflow/initialdata.hpp"

#include "coneflow/errors.hpp"
#include "format.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>

namespace coneflow::initial {

using grid::ModelSurface;
using grid::SurfaceKind;

namespace {

constexpr double kPi = std::numbers::pi;

const std::map<std::string, DatumKind>& names() {
    static const std::map<std::string, DatumKind> table{
        {"smooth", DatumKind::Smooth},         {"random", DatumKind::Random},
        {"cone", DatumKind::DonaldsonCone},    {"zero_lelong", DatumKind::ZeroLelongUnbounded},
        {"log_pole", DatumKind::LogPole},
    };
    return table;
}

const std::map<DatumKind, std::vector<std::string>>& allowed_keys() {
    static const std::map<DatumKind, std::vector<std::string>> table{
        {DatumKind::Smooth, {"amp", "shift"}},
        {DatumKind::Random, {"amp", "seed", "shift"}},
        {DatumKind::DonaldsonCone, {"k", "gamma"}},
        {DatumKind::ZeroLelongUnbounded, {"alpha", "c"}},
        {DatumKind::LogPole, {"c"}},
    };
    return table;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\"");
    const auto e = s.find_last_not_of(" \t\"");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// Deterministic uniform in [-1, 1) from raw engine bits.
double uniform_pm1(std::mt19937_64& rng) {
    const std::uint64_t bits = rng() >> 11;
    return 2.0 * (static_cast<double>(bits) * 0x1.0p-53) - 1.0;
}

// Radial profile g(x) of a singular datum in x = |s|_h^2, and the flux x g'(x).
struct Profile {
    DatumKind kind;
    double a;  // c
    double b;  // alpha

    double value(double x) const {
        if (kind == DatumKind::LogPole) return 0.5 * a * std::log(x);
        const double l = std::max(-std::log(x), 1.0);
        return -a * std::pow(l, b) + a;
    }
    double flux(double x) const {
        if (kind == DatumKind::LogPole) return 0.5 * a;
        const double l = -std::log(x);
        return l > 1.0 ? a * b * std::pow(l, b - 1.0) : 0.0;
    }
};

// Singular node value chosen so that the discrete ddc mass of the cell equals the continuum mass
// of the cap of the same omega-area: (1 - X) X g'(X), X = cap area fraction.
void complete_singular_nodes(const ModelSurface& s, const grid::DivisorData& divisor, const Profile& prof,
                             Values& phi) {
    const auto w = s.area_weight();
    for (std::size_t node : divisor.nodes) {
        const auto& st = s.stencil(node);
        double sum_a = 0.0, sum_aphi = 0.0;
        for (int q = 0; q < 4; ++q) {
            sum_a += st.coef[q];
            sum_aphi += st.coef[q] * phi[st.nbr[q]];
        }
        const double cap = w[node] * s.cell_measure() / s.total_volume();
        const double mass = (1.0 - cap) * prof.flux(cap);
        phi[node] = (sum_aphi - 2.0 * grid::kTwoPi * mass) / sum_a;
    }
}

// Nodes within three of the widest cell sides of a divisor node.
std::vector<std::size_t> pole_neighbourhood(const ModelSurface& s, std::span<const std::size_t> nodes) {
    const double widest = s.kind() == SurfaceKind::Torus ? 1.0 / s.resolution() : 2.0 * kPi / s.resolution();
    const double radius = 3.0 * widest;
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < s.size(); ++p) {
        for (std::size_t n : nodes) {
            double dist;
            if (s.kind() == SurfaceKind::Torus) {
                const auto a = s.coords(p), b = s.coords(n);
                const double dx = std::remainder(a[0] - b[0], 1.0), dy = std::remainder(a[1] - b[1], 1.0);
                dist = std::hypot(dx, dy);
            } else {
                const auto a = s.position(p), b = s.position(n);
                dist = std::acos(std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0));
            }
            if (dist <= radius) {
                out.push_back(p);
                break;
            }
        }
    }
    return out;
}

Values sphere_random(const ModelSurface& s, std::mt19937_64& rng) {
    // Linear combination of degree <= 2 polynomials in the unit normal.
    double c[9];
    for (double& v : c) v = uniform_pm1(rng);
    Values out(s.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
        const auto x = s.position(p);
        out[p] = c[0] * x[0] + c[1] * x[1] + c[2] * x[2] + c[3] * x[0] * x[1] + c[4] * x[1] * x[2] +
                 c[5] * x[0] * x[2] + c[6] * (x[0] * x[0] - x[1] * x[1]) + c[7] * (3 * x[2] * x[2] - 1) + c[8];
    }
    return out;
}

Values torus_random(const ModelSurface& s, std::mt19937_64& rng) {
    struct Mode {
        int kx, ky;
        double amp, phase;
    };
    std::vector<Mode> modes;
    for (int kx = 0; kx <= 2; ++kx)
        for (int ky = -2; ky <= 2; ++ky) {
            if (kx == 0 && ky <= 0) continue;
            const double amp = uniform_pm1(rng) / (kx * kx + ky * ky);
            const double phase = kPi * uniform_pm1(rng);
            modes.push_back({kx, ky, amp, phase});
        }
    const double c0 = uniform_pm1(rng);
    return grid::sample(s, [&](double x, double y) {
        double v = c0;
        for (const auto& m : modes) v += m.amp * std::cos(grid::kTwoPi * (m.kx * x + m.ky * y) + m.phase);
        return v;
    });
}

}  // namespace

std::string to_string(DatumKind kind) {
    for (const auto& [name, k] : names())
        if (k == kind) return name;
    return "unknown";
}

double DatumSpec::get(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

std::string DatumSpec::to_string() const {
    std::ostringstream out;
    out << initial::to_string(kind) << "(";
    bool first = true;
    for (const auto& [k, v] : params) {
        if (!first) out << ",";
        out << k << "=" << format_double(v);
        first = false;
    }
    out << ")";
    return out.str();
}

DatumSpec parse_datum(const std::string& raw) {
    const std::string text = trim(raw);
    const auto open = text.find('(');
    const std::string name = trim(text.substr(0, open));
    const auto it = names().find(name);
    if (it == names().end()) throw ConfigError("unknown initial datum '" + name + "'");
    DatumSpec spec;
    spec.kind = it->second;
    if (open == std::string::npos) return spec;
    const auto close = text.rfind(')');
    if (close == std::string::npos || close < open) throw ConfigError("initial datum '" + text + "': missing ')'");
    std::stringstream body(text.substr(open + 1, close - open - 1));
    std::string item;
    const auto& keys = allowed_keys().at(spec.kind);
    while (std::getline(body, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("initial datum parameter '" + item + "' lacks '='");
        const std::string key = trim(item.substr(0, eq));
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw ConfigError("initial datum '" + name + "' has no parameter '" + key + "'");
        try {
            std::size_t used = 0;
            const std::string val = trim(item.substr(eq + 1));
            spec.params[key] = std::stod(val, &used);
            if (used != val.size()) throw std::invalid_argument(val);
        } catch (const std::logic_error&) {
            throw ConfigError("initial datum parameter '" + key + "' is not a number");
        }
    }
    return spec;
}

double psh_margin_relative(const ModelSurface& s, std::span<const double> u, double omega_scale,
                           std::span<const std::size_t> exempt) {
    const Values d = grid::ddc_density(s, u);
    const auto w = s.area_weight();
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < d.size(); ++p) {
        if (std::find(exempt.begin(), exempt.end(), p) != exempt.end()) continue;
        m = std::min(m, (omega_scale * w[p] + d[p]) / w[p]);
    }
    return m;
}

InitialDatum make_initial(grid::SurfaceHandle surface, const grid::DivisorData& divisor, const DatumSpec& spec) {
    const ModelSurface& s = *surface;
    const bool needs_divisor = spec.kind == DatumKind::DonaldsonCone || spec.kind == DatumKind::ZeroLelongUnbounded ||
                               spec.kind == DatumKind::LogPole;
    if (needs_divisor && divisor.nodes.empty())
        throw ConfigError("initial datum " + initial::to_string(spec.kind) + " needs a divisor");

    InitialDatum d;
    d.spec = spec;
    d.phi0.surface = surface;
    d.phi0.tag = spec.to_string();
    std::vector<std::size_t> exempt;

    auto build_singular = [&](const Profile& prof) {
        Values phi(s.size());
        for (std::size_t p = 0; p < s.size(); ++p) phi[p] = divisor.s_h_sq[p] > 0.0 ? prof.value(divisor.s_h_sq[p]) : 0.0;
        complete_singular_nodes(s, divisor, prof, phi);
        return phi;
    };

    switch (spec.kind) {
        case DatumKind::Smooth: {
            const double amp = spec.get("amp", 0.0), shift = spec.get("shift", 0.0);
            d.phi0.values = grid::sample(s, [&](double a, double) {
                return shift + amp * (s.kind() == SurfaceKind::Torus ? std::cos(grid::kTwoPi * a) : std::cos(a));
            });
            break;
        }
        case DatumKind::Random: {
            std::mt19937_64 rng(static_cast<std::uint64_t>(spec.get("seed", 1.0)));
            Values v = s.kind() == SurfaceKind::Torus ? torus_random(s, rng) : sphere_random(s, rng);
            const double amp = spec.get("amp", 0.05), shift = spec.get("shift", 0.0);
            const double scale = amp / std::max(grid::max_abs(v), 1e-300);
            for (auto& x : v) x = shift + scale * x;
            d.phi0.values = std::move(v);
            break;
        }
        case DatumKind::DonaldsonCone: {
            const double k = spec.get("k", 0.05), g = spec.get("gamma", 0.5);
            d.phi0.values.resize(s.size());
            for (std::size_t p = 0; p < s.size(); ++p) d.phi0.values[p] = k * std::pow(divisor.s_h_sq[p], g);
            break;
        }
        case DatumKind::ZeroLelongUnbounded: {
            const double alpha = spec.get("alpha", 0.5);
            if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("zero_lelong: alpha must lie in (0, 1)");
            double c = spec.get("c", 0.05);
            for (int attempt = 0;; ++attempt) {
                d.phi0.values = build_singular({DatumKind::ZeroLelongUnbounded, c, alpha});
                if (psh_margin_relative(s, d.phi0.values, 1.0) >= -kPshTolerance) break;
                if (attempt == 30) throw ConfigError("zero_lelong: no admissible c found");
                c *= 0.5;
            }
            d.spec.params["c"] = c;
            d.spec.params["alpha"] = alpha;
            d.phi0.tag = d.spec.to_string();
            d.phi0.singular_nodes = divisor.nodes;
            break;
        }
        case DatumKind::LogPole: {
            const double c = spec.get("c", 0.2);
            d.phi0.values = build_singular({DatumKind::LogPole, c, 0.0});
            d.phi0.singular_nodes = divisor.nodes;
            // Out-of-hypothesis control: the pole's grid neighbourhood is exempt from the psh check.
            exempt = pole_neighbourhood(s, divisor.nodes);
            break;
        }
    }

    const Values dens = grid::ddc_density(s, d.phi0.values);
    const auto w = s.area_weight();
    d.psh_margin = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < s.size(); ++p) {
        if (std::find(exempt.begin(), exempt.end(), p) != exempt.end()) continue;
        d.psh_margin = std::min(d.psh_margin, w[p] + dens[p]);
    }
    d.psh_margin_relative = psh_margin_relative(s, d.phi0.values, 1.0, exempt);
    if (d.psh_margin_relative < -kPshTolerance) {
        std::ostringstream msg;
        msg << "initial datum " << d.phi0.tag << " is not omega-psh: relative margin " << d.psh_margin_relative;
        throw ConfigError(msg.str());
    }

    if (divisor.nodes.empty()) {
        d.lelong_estimate = {};
    } else if (spec.kind == DatumKind::Smooth || spec.kind == DatumKind::Random) {
        d.lelong_estimate.assign(divisor.nodes.size(), 0.0);
    }
    if (needs_divisor && !diagnostics_resolvable(s)) {
        d.lelong_estimate.assign(divisor.nodes.size(), std::numeric_limits<double>::quiet_NaN());
        d.integrability_estimate = std::numeric_limits<double>::quiet_NaN();
    } else if (needs_divisor) {
        const auto probes = default_probe_grid();
        double idx = std::numeric_limits<double>::infinity();
        for (std::size_t node : divisor.nodes) {
            d.lelong_estimate.push_back(lelong_estimate(s, d.phi0.values, node));
            idx = std::min(idx, integrability_index(s, d.phi0.values, node, probes));
        }
        d.integrability_estimate = idx;
    }
    return d;
}

double softmax(double a, double b, double sigma) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    const double m = std::max(a, b);
    if (sigma <= 0.0) return m;
    return m + sigma * std::log1p(std::exp(-std::abs(a - b) / sigma));
}

RegularizationLadder truncation_ladder(const InitialDatum& datum, std::span<const int> j_list, double sigma) {
    if (j_list.empty()) throw ConfigError("truncation_ladder: empty j list");
    for (std::size_t i = 0; i < j_list.size(); ++i) {
        if (j_list[i] <= 0 || (i > 0 && j_list[i] <= j_list[i - 1]))
            throw ConfigError("truncation_ladder: j list must be strictly increasing and positive");
    }
    if (!(sigma > 0.0)) throw ConfigError("truncation_ladder: sigma must be positive");
    const ModelSurface& s = *datum.phi0.surface;
    RegularizationLadder ladder;
    ladder.sigma = sigma;
    for (int j : j_list) {
        Values phi(datum.phi0.values.size());
        for (std::size_t p = 0; p < phi.size(); ++p) phi[p] = softmax(datum.phi0.values[p], -double(j), sigma);
        if (!ladder.levels.empty()) {
            const auto& prev = ladder.levels.back().phi;
            for (std::size_t p = 0; p < phi.size(); ++p)
                if (phi[p] > prev[p] + 1e-9) throw RuntimeFailure("truncation_ladder: monotonicity violated");
        }
        ladder.levels.push_back({j, std::move(phi)});
    }
    std::vector<std::size_t> exempt;
    if (datum.spec.kind == DatumKind::LogPole)
        exempt = pole_neighbourhood(s, datum.phi0.singular_nodes);
    for (const auto& lvl : ladder.levels) {
        if (psh_margin_relative(s, lvl.phi, 1.0 + kLadderPshDelta, exempt) < -kPshTolerance)
            throw ConfigError("truncation_ladder: level j = " + std::to_string(lvl.j) + " is not omega-psh");
    }
    return ladder;
}

namespace {

// Bilinear interpolation at (a, b) in surface coordinates.
double interpolate(const ModelSurface& s, std::span<const double> f, double a, double b) {
    const int n = s.resolution();
    if (s.kind() == SurfaceKind::Torus) {
        const double fx = a * n, fy = b * n;
        const double x0 = std::floor(fx), y0 = std::floor(fy);
        const double tx = fx - x0, ty = fy - y0;
        auto wrap = [n](long v) { return int(((v % n) + n) % n); };
        const int c0 = wrap(long(x0)), c1 = wrap(long(x0) + 1), r0 = wrap(long(y0)), r1 = wrap(long(y0) + 1);
        return (1 - ty) * ((1 - tx) * f[s.node(r0, c0)] + tx * f[s.node(r0, c1)]) +
               ty * ((1 - tx) * f[s.node(r1, c0)] + tx * f[s.node(r1, c1)]);
    }
    const double dth = kPi / n, dph = 2.0 * kPi / n;
    double fr = a / dth - 0.5;
    fr = std::clamp(fr, 0.0, double(n - 1));
    const int r0 = std::min(int(std::floor(fr)), n - 2);
    const double tr = fr - r0;
    double fc = b / dph;
    fc -= n * std::floor(fc / n);
    const int c0 = int(std::floor(fc)) % n;
    const int c1 = (c0 + 1) % n;
    const double tc = fc - std::floor(fc);
    return (1 - tr) * ((1 - tc) * f[s.node(r0, c0)] + tc * f[s.node(r0, c1)]) +
           tr * ((1 - tc) * f[s.node(r0 + 1, c0)] + tc * f[s.node(r0 + 1, c1)]);
}

// Surface coordinates of the point at chart position r e^{i alpha} around a node.
std::array<double, 2> chart_point(const ModelSurface& s, std::size_t node, double r, double alpha) {
    if (s.kind() == SurfaceKind::Torus) {
        const auto c = s.coords(node);
        return {c[0] + r * std::cos(alpha), c[1] + r * std::sin(alpha)};
    }
    const auto p = s.position(node);
    const auto c = s.coords(node);
    // Tangent frame: e_theta and e_phi at p.
    const std::array<double, 3> e1{std::cos(c[0]) * std::cos(c[1]), std::cos(c[0]) * std::sin(c[1]), -std::sin(c[0])};
    const std::array<double, 3> e2{-std::sin(c[1]), std::cos(c[1]), 0.0};
    const double d = 2.0 * std::atan(r);
    std::array<double, 3> q{};
    for (int i = 0; i < 3; ++i)
        q[i] = std::cos(d) * p[i] + std::sin(d) * (std::cos(alpha) * e1[i] + std::sin(alpha) * e2[i]);
    return {std::acos(std::clamp(q[2], -1.0, 1.0)), std::atan2(q[1], q[0])};
}

std::vector<double> dyadic_radii(const ModelSurface& s) {
    std::vector<double> radii;
    for (double r = 0.25; r >= 4.0 / s.resolution() - 1e-15; r *= 0.5) radii.push_back(r);
    return radii;
}

}  // namespace

bool diagnostics_resolvable(const ModelSurface& s) { return dyadic_radii(s).size() >= 3; }

double circle_mean(const ModelSurface& s, std::span<const double> field, std::size_t node, double r, int samples) {
    double acc = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double alpha = 2.0 * kPi * (i + 0.5) / samples;
        const auto q = chart_point(s, node, r, alpha);
        acc += interpolate(s, field, q[0], q[1]);
    }
    return acc / samples;
}

double lelong_estimate(const ModelSurface& s, std::span<const double> field, std::size_t node) {
    const auto radii = dyadic_radii(s);
    if (radii.size() < 3) throw ConfigError("lelong_estimate: resolution too small for three dyadic radii");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (double r : radii) {
        const double x = std::log(r), y = circle_mean(s, field, node, r);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double m = double(radii.size());
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return std::max(slope, 0.0);
}

std::vector<double> default_probe_grid() {
    std::vector<double> g;
    for (double c = 0.1; c <= 20.0; c *= 1.02) g.push_back(c);
    return g;
}

double integrability_index(const ModelSurface& s, std::span<const double> field, std::size_t node,
                           std::span<const double> probe_c_grid) {
    const auto radii = dyadic_radii(s);
    if (radii.size() < 3) throw ConfigError("integrability_index: resolution too small");
    // Circle means of e^{-2 c field} on a log-uniform radial grid; shells are integrated in log r.
    constexpr int per_shell = 8;
    const std::size_t shells = radii.size() - 1;
    constexpr int samples = 128;
    // Field samples per shell and ring, taken once and reused for every probe.
    std::vector<std::vector<double>> values(shells);
    std::vector<std::vector<double>> weights(shells);
    for (std::size_t k = 0; k < shells; ++k) {
        for (int i = 0; i < per_shell; ++i) {
            const double r = std::exp(std::log(radii[k + 1]) + (i + 0.5) / per_shell * std::log(2.0));
            for (int a = 0; a < samples; ++a) {
                const auto q = chart_point(s, node, r, 2.0 * kPi * (a + 0.5) / samples);
                values[k].push_back(interpolate(s, field, q[0], q[1]));
                weights[k].push_back(r * r / samples);  // dA = r^2 d(log r) d(alpha)
            }
        }
    }
    double best = 0.0;
    for (double c : probe_c_grid) {
        std::vector<double> xs, ys;
        for (std::size_t k = 0; k < shells; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < values[k].size(); ++i) acc += std::exp(-2.0 * c * values[k][i]) * weights[k][i];
            xs.push_back(std::log(radii[k + 1]));
            ys.push_back(std::log(acc));
        }
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sx += xs[i];
            sy += ys[i];
            sxx += xs[i] * xs[i];
            sxy += xs[i] * ys[i];
        }
        const double m = double(xs.size());
        const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        // Shell integrals shrink toward the point iff the local integral converges.
        if (slope > 0.0) {
            best = c;
        } else {
            return best;
        }
    }
    return std::numeric_limits<double>::infinity();
}

}  // namespace coneflow::initial
