#pragma once

#include "coneflow/grid.hpp"

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace coneflow::initial {

using grid::Values;

enum class DatumKind { Smooth, Random, DonaldsonCone, ZeroLelongUnbounded, LogPole };

std::string to_string(DatumKind kind);

// A catalog entry such as zero_lelong(alpha=0.5,c=0.05).
struct DatumSpec {
    DatumKind kind{DatumKind::Smooth};
    std::map<std::string, double> params;

    double get(const std::string& key, double fallback) const;
    std::string to_string() const;
};

DatumSpec parse_datum(const std::string& text);

struct InitialDatum {
    DatumSpec spec;
    grid::ScalarField phi0;
    std::vector<double> lelong_estimate;   // one per divisor point; NaN when the grid is too coarse
    double integrability_estimate{std::numeric_limits<double>::infinity()};
    double psh_margin{0.0};                // min density of omega + ddc phi0 off the exempt set
    double psh_margin_relative{0.0};       // same, divided by the local omega density
};

inline constexpr double kPshTolerance = 1e-6;

// Builds the datum; zero_lelong shrinks c until the discrete psh margin passes.
InitialDatum make_initial(grid::SurfaceHandle surface, const grid::DivisorData& divisor, const DatumSpec& spec);

struct RegularizationLevel {
    int j;
    Values phi;
};

struct RegularizationLadder {
    std::vector<RegularizationLevel> levels;
    double sigma{0.1};
};

// sigma log(e^{a/sigma} + e^{b/sigma}), evaluated without overflow.
double softmax(double a, double b, double sigma);

// Ladder relative slack for psh of the smoothed levels.
inline constexpr double kLadderPshDelta = 1e-3;

RegularizationLadder truncation_ladder(const InitialDatum& datum, std::span<const int> j_list, double sigma);

// True when at least three dyadic radii in [4/N, 1/4] exist.
bool diagnostics_resolvable(const grid::ModelSurface& s);

// Least-squares slope of circle means against log r over dyadic radii in [4/N, 1/4], clamped at 0.
double lelong_estimate(const grid::ModelSurface& s, std::span<const double> field, std::size_t point_node);

// Largest probe c such that e^{-2 c field} has converging dyadic-shell integrals near the point.
double integrability_index(const grid::ModelSurface& s, std::span<const double> field, std::size_t point_node,
                           std::span<const double> probe_c_grid);

std::vector<double> default_probe_grid();

// Circle mean of a grid field at chart radius r around a node (bilinear interpolation).
double circle_mean(const grid::ModelSurface& s, std::span<const double> field, std::size_t point_node, double r,
                   int samples = 256);

// Relative psh margin: min over nodes outside `exempt` of (omega + ddc u) / omega.
double psh_margin_relative(const grid::ModelSurface& s, std::span<const double> u, double omega_scale,
                           std::span<const std::size_t> exempt = {});

}  // namespace coneflow::initial
