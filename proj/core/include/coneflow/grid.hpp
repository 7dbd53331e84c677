#pragma once

#include <Eigen/SparseCore>

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coneflow::grid {

using Values = std::vector<double>;

enum class SurfaceKind { Torus, SphereP1 };

std::string to_string(SurfaceKind kind);
SurfaceKind surface_kind_from_string(const std::string& name);

inline constexpr int kMinResolution = 16;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Node (row, col) is stored at row * cols + col.
// Torus: row = y index, col = x index, x = col / N, y = row / N.
// Sphere: row = colatitude index (cell centred), col = longitude index.
class ModelSurface {
public:
    static std::shared_ptr<const ModelSurface> build(SurfaceKind kind, int resolution, double volume);

    SurfaceKind kind() const noexcept { return kind_; }
    int resolution() const noexcept { return n_; }
    int rows() const noexcept { return n_; }
    int cols() const noexcept { return n_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(n_) * n_; }
    double total_volume() const noexcept { return volume_; }

    // Coordinate measure of one cell: dx*dy (torus) or dtheta*dphi (sphere).
    double cell_measure() const noexcept { return cell_; }
    // Density of the background form relative to the coordinate measure.
    std::span<const double> area_weight() const noexcept { return weight_; }

    // Torus: (x, y).  Sphere: (colatitude, longitude).
    std::array<double, 2> coords(std::size_t node) const;
    // Unit vector of a sphere node; torus nodes are embedded as (x, y, 0).
    std::array<double, 3> position(std::size_t node) const;
    std::size_t node(int row, int col) const noexcept {
        return static_cast<std::size_t>(row) * n_ + static_cast<std::size_t>(col);
    }
    std::size_t nearest_node(double a, double b) const;
    // Grid spacing in the geodesic sense of the background (used for resolvability floors).
    double spacing() const noexcept;

    // Five-point flux stencil: neighbour index and symmetric coefficient (0 for a closed face).
    struct Stencil {
        std::array<std::size_t, 4> nbr;
        std::array<double, 4> coef;
    };
    const Stencil& stencil(std::size_t node) const { return stencil_[node]; }

private:
    ModelSurface() = default;

    SurfaceKind kind_{SurfaceKind::Torus};
    int n_{0};
    double volume_{0.0};
    double cell_{0.0};
    Values weight_;
    std::vector<Stencil> stencil_;
};

using SurfaceHandle = std::shared_ptr<const ModelSurface>;

struct ScalarField {
    SurfaceHandle surface;
    Values values;
    std::string tag;
    // Nodes where the field is allowed to be non-finite.
    std::vector<std::size_t> singular_nodes;

    bool singular() const noexcept { return !singular_nodes.empty(); }
};

// Checks finiteness outside the registered singular set.
bool is_admissible(const ScalarField& field);

// Density of sqrt(-1) d dbar u relative to coordinate measure, Delta_euclid / 2 per chart.
Values ddbar_density(const ModelSurface& s, std::span<const double> u);
// The normalized operator used by all geometric constructions: ddbar_density / (2 pi).
// With it, the curvature of a degree-m line bundle integrates to m.
Values ddc_density(const ModelSurface& s, std::span<const double> u);
// Delta_omega u = 2 ddbar_density(u) / area_weight.
Values laplacian(const ModelSurface& s, std::span<const double> u);
ScalarField laplacian(const ScalarField& field);

// Sparse matrix M with (M u) = ddc_density(u) at every node.
Eigen::SparseMatrix<double> ddc_matrix(const ModelSurface& s);

// Quadrature of a density (relative to coordinate measure).
double integrate(const ModelSurface& s, std::span<const double> density);
// Quadrature of a function against omega.
double integrate_function(const ModelSurface& s, std::span<const double> f);

// Solves Delta_omega u = rhs with the integral of u against omega equal to zero.
Values poisson_solve(const ModelSurface& s, std::span<const double> rhs);

struct DivisorPoint {
    double colatitude;
    double longitude;

    bool operator==(const DivisorPoint&) const = default;
};

struct DivisorData {
    std::vector<std::size_t> nodes;
    Values s_h_sq;
    Values theta_density;
    int degree{0};
};

// |s|_h^2 for a point p and unit vector q with the Fubini-Study metric on O(1):
// |z|^2 / (1 + |z|^2) in the stereographic chart centred at p.
double fs_section_norm_sq(const std::array<double, 3>& p, const std::array<double, 3>& q);

DivisorData divisor_section(const ModelSurface& s, std::span<const DivisorPoint> points);

// Values of f at each node.
template <class F>
Values sample(const ModelSurface& s, F&& f) {
    Values v(s.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto c = s.coords(i);
        v[i] = f(c[0], c[1]);
    }
    return v;
}

double max_abs(std::span<const double> v);
double sup(std::span<const double> v);
double inf(std::span<const double> v);

}  // namespace coneflow::grid
