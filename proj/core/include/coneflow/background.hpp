#pragma once

#include "coneflow/grid.hpp"

#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace coneflow::background {

using grid::Values;

// sup{t >= 0 : V + t (-c1 + (1 - gamma) m + e) > 0}; +inf when the slope is non-negative.
double compute_tmax(double volume, double c1_degree, int divisor_degree, double gamma, double eta_degree);

// Degree of the class change per unit time: -c1 + (1 - gamma) m + e.
double class_slope(double c1_degree, int divisor_degree, double gamma, double eta_degree);

// First Chern number of the model surface.
double c1_degree(grid::SurfaceKind kind);

struct FlowParams {
    double gamma{1.0};
    double epsilon{0.1};
    double k{0.0};
    double T{0.5};
    double eta_degree{0.0};
    // Density of eta relative to coordinate measure; empty means eta = (eta_degree / V) omega.
    Values eta_density;
};

struct CalabiResult {
    Values h;
    Values omega_density;  // density of Omega = e^{-h} omega
};

// Finds Omega = e^{-h} omega with Ric(Omega) = target and total mass V.
// Ric(e^{-h} omega) = Ric(omega) + ddc h, so only a Poisson solve is required.
CalabiResult calabi_volume_form(const grid::ModelSurface& s, std::span<const double> target_ricci_density);

// Ricci density of the background omega (round Kahler-Einstein or flat).
Values background_ricci(const grid::ModelSurface& s);

// Ricci density of a volume form given by its density f relative to coordinate measure.
Values ricci_of_volume(const grid::ModelSurface& s, std::span<const double> f);

// (1/gamma) int_0^x ((eps^2 + r)^gamma - eps^{2 gamma}) / r dr.
double cgp_chi_value(double gamma, double epsilon, double x);
Values cgp_chi(double gamma, double epsilon, std::span<const double> s_h_sq);

struct ConeMetric {
    Values density;
    bool valid{true};
    std::vector<std::size_t> offending_nodes;
};

// omega + k ddc chi; valid when it dominates omega / 2 everywhere.
ConeMetric cgp_metric(const grid::ModelSurface& s, const grid::DivisorData& divisor, double gamma, double epsilon,
                      double k);

struct KSearch {
    double k_max{1.0};
    double k_floor{1.0 / 4096.0};
    double shrink{0.5};
};

// Largest k on the geometric grid k_max * shrink^i that keeps every epsilon valid and the
// path sandwich within equivalence_c on [0, T].
double select_k(const grid::ModelSurface& s, const grid::DivisorData& divisor, double gamma,
                std::span<const double> eps_list, double equivalence_c, double T, double eta_degree,
                KSearch search = {});

struct KappaChoice {
    // Zero-integral perturbation added to the scaled background form, relative to coordinate measure.
    Values perturbation;
};

struct BackgroundPack {
    grid::SurfaceHandle surface;
    grid::DivisorData divisor;
    FlowParams params;
    double tmax{std::numeric_limits<double>::infinity()};
    double slope{0.0};

    Values omega;     // background density
    Values theta;     // curvature density of (L_D, h)
    Values eta;       // twist density
    Values h_gamma;
    Values nu_gamma;  // density of nu_gamma
    Values chi;
    Values ddc_chi;
    Values omega_cone_eps;
    Values F_eps;
    Values cone_log;  // (1 - gamma) log(eps^2 + |s|^2)

    double equivalence_constant{1.0};
    double chi_sup{0.0};
    double F_sup_abs{0.0};

    std::size_t size() const noexcept { return omega.size(); }
    // Density of omega_{gamma t} = omega + t nu.
    Values omega_path(double t) const;
    // Density of omega_{gamma t eps} = omega_{gamma t} + k ddc chi.
    Values omega_path_eps(double t) const;
};

BackgroundPack build_pack(grid::SurfaceHandle surface, grid::DivisorData divisor, FlowParams params,
                          const KappaChoice& kappa = {});

// Sandwich constant of omega_{gamma t eps} against omega_{gamma eps} sampled on [0, T].
double sandwich_constant(const BackgroundPack& pack, int time_samples = 33);

}  // namespace coneflow::background
