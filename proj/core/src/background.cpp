#include "coneflow/background.hpp"

#include "coneflow/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace coneflow::background {

using grid::ModelSurface;
using grid::SurfaceKind;

double class_slope(double c1_degree, int divisor_degree, double gamma, double eta_degree) {
    return -c1_degree + (1.0 - gamma) * divisor_degree + eta_degree;
}

double compute_tmax(double volume, double c1_degree, int divisor_degree, double gamma, double eta_degree) {
    if (!(volume > 0.0)) throw ConfigError("compute_tmax: volume must be positive");
    const double slope = class_slope(c1_degree, divisor_degree, gamma, eta_degree);
    if (slope >= 0.0) return std::numeric_limits<double>::infinity();
    return volume / -slope;
}

double c1_degree(SurfaceKind kind) { return kind == SurfaceKind::Torus ? 0.0 : 2.0; }

Values background_ricci(const ModelSurface& s) {
    Values ric(s.size(), 0.0);
    if (s.kind() == SurfaceKind::SphereP1) {
        const auto w = s.area_weight();
        for (std::size_t p = 0; p < ric.size(); ++p) ric[p] = 2.0 * w[p] / s.total_volume();
    }
    return ric;
}

Values ricci_of_volume(const ModelSurface& s, std::span<const double> f) {
    const auto w = s.area_weight();
    Values log_ratio(s.size());
    for (std::size_t p = 0; p < log_ratio.size(); ++p) log_ratio[p] = std::log(f[p] / w[p]);
    Values ric = background_ricci(s);
    const Values d = grid::ddc_density(s, log_ratio);
    for (std::size_t p = 0; p < ric.size(); ++p) ric[p] -= d[p];
    return ric;
}

CalabiResult calabi_volume_form(const ModelSurface& s, std::span<const double> target) {
    const double c1 = c1_degree(s.kind());
    const double total = grid::integrate(s, target);
    if (std::abs(total - c1) > 1e-8 * std::max(1.0, std::abs(c1))) {
        std::ostringstream msg;
        msg.precision(12);
        msg << "calabi_volume_form: target integrates to " << total << " but c1 = " << c1;
        throw ConfigError(msg.str());
    }
    const auto w = s.area_weight();
    const Values ric = background_ricci(s);
    Values rhs(s.size());
    const double four_pi = 2.0 * grid::kTwoPi;
    for (std::size_t p = 0; p < rhs.size(); ++p) rhs[p] = four_pi * (target[p] - ric[p]) / w[p];
    Values h = grid::poisson_solve(s, rhs);

    Values e(s.size());
    for (std::size_t p = 0; p < e.size(); ++p) e[p] = std::exp(-h[p]);
    const double shift = std::log(grid::integrate_function(s, e) / s.total_volume());
    CalabiResult out;
    out.h = std::move(h);
    out.omega_density.resize(s.size());
    for (std::size_t p = 0; p < s.size(); ++p) {
        out.h[p] += shift;
        out.omega_density[p] = std::exp(-out.h[p]) * w[p];
    }
    return out;
}

double cgp_chi_value(double gamma, double epsilon, double x) {
    if (x <= 0.0) return 0.0;
    if (gamma == 1.0) return x;
    if (epsilon == 0.0) return std::pow(x, gamma) / (gamma * gamma);
    using boost::math::quadrature::gauss;
    const double e2 = epsilon * epsilon;
    const double e2g = std::pow(e2, gamma);
    double total = 0.0;
    // Near r = 0 the integrand is analytic: e2^gamma expm1(gamma log1p(r / e2)) / r.
    const double a = std::min(x, e2);
    auto near = [&](double r) {
        if (r == 0.0) return gamma * e2g / e2;
        return e2g * std::expm1(gamma * std::log1p(r / e2)) / r;
    };
    total += gauss<double, 30>::integrate(near, 0.0, a);
    if (x > e2) {
        // Logarithmic variable r = e^u removes the 1/r profile.
        auto far = [&](double u) {
            const double r = std::exp(u);
            return e2g * std::expm1(gamma * std::log1p(r / e2));
        };
        // Nearest complex singularity sits at distance pi from the left end; panels of length <= 1 suffice.
        const double lo = std::log(e2);
        const double hi = std::log(x);
        const int panels = std::max(1, static_cast<int>(std::ceil(hi - lo)));
        const double width = (hi - lo) / panels;
        for (int i = 0; i < panels; ++i)
            total += gauss<double, 30>::integrate(far, lo + i * width, lo + (i + 1) * width);
    }
    return total / gamma;
}

Values cgp_chi(double gamma, double epsilon, std::span<const double> s_h_sq) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("cgp_chi: gamma must lie in (0, 1]");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("cgp_chi: epsilon must lie in [0, 1]");
    Values out(s_h_sq.size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = cgp_chi_value(gamma, epsilon, s_h_sq[p]);
    return out;
}

namespace {

Values divisor_norm(const ModelSurface& s, const grid::DivisorData& divisor) {
    if (divisor.s_h_sq.empty()) return Values(s.size(), 1.0);
    return divisor.s_h_sq;
}

ConeMetric cone_from_ddc(const Values& omega, const Values& ddc_chi, double k) {
    ConeMetric m;
    m.density.resize(omega.size());
    for (std::size_t p = 0; p < omega.size(); ++p) {
        m.density[p] = omega[p] + k * ddc_chi[p];
        if (!(m.density[p] >= 0.5 * omega[p])) {
            m.valid = false;
            m.offending_nodes.push_back(p);
        }
    }
    return m;
}

}  // namespace

ConeMetric cgp_metric(const ModelSurface& s, const grid::DivisorData& divisor, double gamma, double epsilon,
                      double k) {
    if (!(k > 0.0)) throw ConfigError("cgp_metric: k must be positive");
    const Values chi = cgp_chi(gamma, epsilon, divisor_norm(s, divisor));
    const Values d = grid::ddc_density(s, chi);
    const auto w = s.area_weight();
    return cone_from_ddc(Values(w.begin(), w.end()), d, k);
}

double select_k(const ModelSurface& s, const grid::DivisorData& divisor, double gamma,
                std::span<const double> eps_list, double equivalence_c, double T, double eta_degree,
                KSearch search) {
    if (eps_list.empty()) throw ConfigError("select_k: eps_list is empty");
    const auto w = s.area_weight();
    const Values omega(w.begin(), w.end());
    const double slope = class_slope(c1_degree(s.kind()), divisor.degree, gamma, eta_degree);
    std::vector<Values> ddcs;
    for (double eps : eps_list) ddcs.push_back(grid::ddc_density(s, cgp_chi(gamma, eps, divisor_norm(s, divisor))));

    for (double k = search.k_max; k >= search.k_floor * (1.0 - 1e-12); k *= search.shrink) {
        bool ok = true;
        for (const auto& d : ddcs) {
            const ConeMetric m = cone_from_ddc(omega, d, k);
            if (!m.valid) {
                ok = false;
                break;
            }
            // Ratio (omega_eps + t nu) / omega_eps is affine in t: extremes at t = 0 and t = T.
            for (std::size_t p = 0; p < omega.size() && ok; ++p) {
                const double r = 1.0 + T * slope / s.total_volume() * omega[p] / m.density[p];
                if (!(r >= 1.0 / equivalence_c && r <= equivalence_c)) ok = false;
            }
            if (!ok) break;
        }
        if (ok) return k;
    }
    throw ConfigError("select_k: no admissible k above the floor " + std::to_string(search.k_floor));
}

Values BackgroundPack::omega_path(double t) const {
    Values out(omega.size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = omega[p] + t * nu_gamma[p];
    return out;
}

Values BackgroundPack::omega_path_eps(double t) const {
    Values out(omega.size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = omega[p] + t * nu_gamma[p] + params.k * ddc_chi[p];
    return out;
}

double sandwich_constant(const BackgroundPack& pack, int time_samples) {
    double c = 1.0;
    for (int i = 0; i < time_samples; ++i) {
        const double t = pack.params.T * i / std::max(1, time_samples - 1);
        const Values path = pack.omega_path_eps(t);
        for (std::size_t p = 0; p < path.size(); ++p) {
            const double r = path[p] / pack.omega_cone_eps[p];
            c = std::max({c, r, 1.0 / r});
        }
    }
    return c;
}

BackgroundPack build_pack(grid::SurfaceHandle surface, grid::DivisorData divisor, FlowParams params,
                          const KappaChoice& kappa) {
    const ModelSurface& s = *surface;
    if (!(params.gamma > 0.0 && params.gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(params.epsilon > 0.0 && params.epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
    if (!(params.k >= 0.0)) throw ConfigError("k must be non-negative");
    if (s.kind() == SurfaceKind::Torus && divisor.degree != 0) throw ConfigError("torus runs use an empty divisor");

    BackgroundPack pack;
    pack.surface = surface;
    pack.params = params;
    const double V = s.total_volume();
    pack.slope = class_slope(c1_degree(s.kind()), divisor.degree, params.gamma, params.eta_degree);
    pack.tmax = compute_tmax(V, c1_degree(s.kind()), divisor.degree, params.gamma, params.eta_degree);
    if (!(params.T > 0.0 && params.T < pack.tmax)) {
        std::ostringstream msg;
        msg << "horizon T = " << params.T << " must satisfy 0 < T < T_max = " << pack.tmax;
        throw ConfigError(msg.str());
    }

    const auto w = s.area_weight();
    pack.omega.assign(w.begin(), w.end());
    const std::size_t n = s.size();
    if (divisor.s_h_sq.empty()) {
        divisor.s_h_sq.assign(n, 1.0);
        divisor.theta_density.assign(n, 0.0);
    }
    pack.theta = divisor.theta_density;

    if (params.eta_density.empty()) {
        pack.eta.resize(n);
        for (std::size_t p = 0; p < n; ++p) pack.eta[p] = params.eta_degree * w[p] / V;
    } else {
        pack.eta = params.eta_density;
        if (std::abs(grid::integrate(s, pack.eta) - params.eta_degree) > 1e-8 * std::max(1.0, std::abs(params.eta_degree)))
            throw ConfigError("eta density does not integrate to eta_degree");
    }

    // kappa = omega scaled to the degree of [omega] + T * slope, plus a zero-integral perturbation.
    pack.nu_gamma.resize(n);
    const double scale = (V + params.T * pack.slope) / V;
    if (!kappa.perturbation.empty() && std::abs(grid::integrate(s, kappa.perturbation)) > 1e-8)
        throw ConfigError("kappa perturbation must integrate to zero");
    for (std::size_t p = 0; p < n; ++p) {
        const double kap = scale * w[p] + (kappa.perturbation.empty() ? 0.0 : kappa.perturbation[p]);
        if (!(kap > 0.0)) throw ConfigError("kappa representative is not positive");
        pack.nu_gamma[p] = (kap - w[p]) / params.T;
    }

    // Ric(Omega_gamma) = -nu + (1 - gamma) theta + eta.
    Values target(n);
    for (std::size_t p = 0; p < n; ++p)
        target[p] = -pack.nu_gamma[p] + (1.0 - params.gamma) * pack.theta[p] + pack.eta[p];
    CalabiResult cal = calabi_volume_form(s, target);
    pack.h_gamma = std::move(cal.h);

    pack.chi = cgp_chi(params.gamma, params.epsilon, divisor.s_h_sq);
    pack.ddc_chi = grid::ddc_density(s, pack.chi);
    pack.chi_sup = grid::sup(pack.chi);
    pack.omega_cone_eps.resize(n);
    pack.F_eps.resize(n);
    pack.cone_log.resize(n);
    const double e2 = params.epsilon * params.epsilon;
    std::vector<std::size_t> bad;
    for (std::size_t p = 0; p < n; ++p) {
        pack.omega_cone_eps[p] = w[p] + params.k * pack.ddc_chi[p];
        if (!(pack.omega_cone_eps[p] > 0.0)) bad.push_back(p);
        pack.cone_log[p] = (1.0 - params.gamma) * std::log(e2 + divisor.s_h_sq[p]);
        pack.F_eps[p] = std::log(pack.omega_cone_eps[p] / w[p]) + pack.cone_log[p] + pack.h_gamma[p];
    }
    if (!bad.empty()) throw PositivityError("omega_{gamma eps} is not positive; reduce k", bad);
    pack.F_sup_abs = grid::max_abs(pack.F_eps);

    const int samples = 33;
    for (int i = 0; i < samples; ++i) {
        const double t = params.T * i / (samples - 1);
        const Values path = pack.omega_path(t);
        const Values path_eps = pack.omega_path_eps(t);
        for (std::size_t p = 0; p < n; ++p) {
            if (!(path[p] > 0.0) || !(path_eps[p] > 0.0)) {
                std::ostringstream msg;
                msg << "reference path loses positivity at t = " << t << ", node " << p;
                throw PositivityError(msg.str(), {p});
            }
        }
    }
    pack.divisor = std::move(divisor);
    pack.equivalence_constant = sandwich_constant(pack, samples);
    return pack;
}

}  // namespace coneflow::background
