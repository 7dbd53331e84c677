#include "coneflow/grid.hpp"

#include "coneflow/errors.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace coneflow::grid {

namespace {

constexpr double kPi = std::numbers::pi;

}  // namespace

std::string to_string(SurfaceKind kind) {
    return kind == SurfaceKind::Torus ? "torus" : "sphere";
}

SurfaceKind surface_kind_from_string(const std::string& name) {
    if (name == "torus") return SurfaceKind::Torus;
    if (name == "sphere" || name == "sphere_p1") return SurfaceKind::SphereP1;
    throw ConfigError("unknown surface kind '" + name + "' (expected torus or sphere)");
}

SurfaceHandle ModelSurface::build(SurfaceKind kind, int resolution, double volume) {
    if (resolution < kMinResolution) {
        throw ConfigError("surface resolution " + std::to_string(resolution) + " is below the minimum " +
                          std::to_string(kMinResolution));
    }
    if (!(volume > 0.0) || !std::isfinite(volume)) {
        throw ConfigError("surface volume must be positive and finite");
    }
    std::shared_ptr<ModelSurface> s(new ModelSurface());
    s->kind_ = kind;
    s->n_ = resolution;
    s->volume_ = volume;
    const int n = resolution;
    const std::size_t total = static_cast<std::size_t>(n) * n;
    s->weight_.assign(total, 0.0);
    s->stencil_.resize(total);

    if (kind == SurfaceKind::Torus) {
        const double h = 1.0 / n;
        s->cell_ = h * h;
        std::fill(s->weight_.begin(), s->weight_.end(), volume);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) {
                auto& st = s->stencil_[s->node(r, c)];
                st.nbr = {s->node(r, (c + 1) % n), s->node(r, (c + n - 1) % n), s->node((r + 1) % n, c),
                          s->node((r + n - 1) % n, c)};
                st.coef = {1.0, 1.0, 1.0, 1.0};
            }
        }
        return s;
    }

    const double dth = kPi / n;
    const double dph = 2.0 * kPi / n;
    s->cell_ = dth * dph;
    for (int r = 0; r < n; ++r) {
        const double top = r * dth;
        const double bot = (r + 1) * dth;
        // Exact cell-averaged sin(theta): the cell's share of the round area is exact.
        const double sin_eff = (std::cos(top) - std::cos(bot)) / dth;
        const double sin_top = r == 0 ? 0.0 : std::sin(top);
        const double sin_bot = r == n - 1 ? 0.0 : std::sin(bot);
        for (int c = 0; c < n; ++c) {
            const std::size_t p = s->node(r, c);
            s->weight_[p] = volume * sin_eff / (4.0 * kPi);
            auto& st = s->stencil_[p];
            st.nbr = {s->node(r, (c + 1) % n), s->node(r, (c + n - 1) % n), s->node(std::min(r + 1, n - 1), c),
                      s->node(std::max(r - 1, 0), c)};
            const double phi_coef = dth / (sin_eff * dph);
            st.coef = {phi_coef, phi_coef, sin_bot * dph / dth, sin_top * dph / dth};
        }
    }
    return s;
}

std::array<double, 2> ModelSurface::coords(std::size_t node) const {
    const int r = static_cast<int>(node / n_);
    const int c = static_cast<int>(node % n_);
    if (kind_ == SurfaceKind::Torus) return {double(c) / n_, double(r) / n_};
    return {(r + 0.5) * kPi / n_, c * 2.0 * kPi / n_};
}

std::array<double, 3> ModelSurface::position(std::size_t node) const {
    const auto [a, b] = coords(node);
    if (kind_ == SurfaceKind::Torus) return {a, b, 0.0};
    return {std::sin(a) * std::cos(b), std::sin(a) * std::sin(b), std::cos(a)};
}

std::size_t ModelSurface::nearest_node(double a, double b) const {
    if (kind_ == SurfaceKind::Torus) {
        const auto wrap = [this](double v) {
            int i = static_cast<int>(std::lround(v * n_)) % n_;
            return i < 0 ? i + n_ : i;
        };
        return node(wrap(b), wrap(a));
    }
    int r = static_cast<int>(std::floor(a / (kPi / n_)));
    r = std::clamp(r, 0, n_ - 1);
    int c = static_cast<int>(std::lround(b / (2.0 * kPi / n_))) % n_;
    if (c < 0) c += n_;
    return node(r, c);
}

double ModelSurface::spacing() const noexcept {
    return kind_ == SurfaceKind::Torus ? 1.0 / n_ : kPi / n_;
}

bool is_admissible(const ScalarField& field) {
    for (std::size_t i = 0; i < field.values.size(); ++i) {
        if (std::isfinite(field.values[i])) continue;
        if (std::find(field.singular_nodes.begin(), field.singular_nodes.end(), i) == field.singular_nodes.end())
            return false;
    }
    return true;
}

Values ddbar_density(const ModelSurface& s, std::span<const double> u) {
    Values out(s.size());
    const double scale = 0.5 / s.cell_measure();
    for (std::size_t p = 0; p < out.size(); ++p) {
        const auto& st = s.stencil(p);
        double acc = 0.0;
        for (int q = 0; q < 4; ++q) acc += st.coef[q] * (u[st.nbr[q]] - u[p]);
        out[p] = scale * acc;
    }
    return out;
}

Values ddc_density(const ModelSurface& s, std::span<const double> u) {
    Values out = ddbar_density(s, u);
    for (auto& v : out) v /= kTwoPi;
    return out;
}

Values laplacian(const ModelSurface& s, std::span<const double> u) {
    Values out = ddbar_density(s, u);
    const auto w = s.area_weight();
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = 2.0 * out[p] / w[p];
    return out;
}

ScalarField laplacian(const ScalarField& field) {
    if (field.singular()) throw ConfigError("laplacian of a singular field needs a mask-aware caller");
    return {field.surface, laplacian(*field.surface, field.values), "laplacian(" + field.tag + ")", {}};
}

Eigen::SparseMatrix<double> ddc_matrix(const ModelSurface& s) {
    const double scale = 0.5 / (s.cell_measure() * kTwoPi);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(s.size() * 5);
    for (std::size_t p = 0; p < s.size(); ++p) {
        const auto& st = s.stencil(p);
        double diag = 0.0;
        for (int q = 0; q < 4; ++q) {
            if (st.coef[q] == 0.0) continue;
            trips.emplace_back(int(p), int(st.nbr[q]), scale * st.coef[q]);
            diag -= scale * st.coef[q];
        }
        trips.emplace_back(int(p), int(p), diag);
    }
    Eigen::SparseMatrix<double> m(int(s.size()), int(s.size()));
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

double integrate(const ModelSurface& s, std::span<const double> density) {
    double acc = 0.0;
    for (double d : density) acc += d;
    return acc * s.cell_measure();
}

double integrate_function(const ModelSurface& s, std::span<const double> f) {
    const auto w = s.area_weight();
    double acc = 0.0;
    for (std::size_t p = 0; p < f.size(); ++p) acc += f[p] * w[p];
    return acc * s.cell_measure();
}

Values poisson_solve(const ModelSurface& s, std::span<const double> rhs) {
    const std::size_t n = s.size();
    const auto w = s.area_weight();
    const double mean_num = integrate_function(s, rhs);
    Values absr(rhs.begin(), rhs.end());
    for (auto& v : absr) v = std::abs(v);
    const double scale = std::max(1.0, integrate_function(s, absr));
    if (std::abs(mean_num) > 1e-8 * scale) {
        throw ConfigError("poisson_solve: right-hand side is not compatible (integral " + std::to_string(mean_num) +
                          ")");
    }
    const double mean = mean_num / s.total_volume();

    // Saddle-point system [M w; w^T 0] with M = ddc_matrix, constraint = zero omega-mean.
    const Eigen::SparseMatrix<double> m = ddc_matrix(s);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(m.nonZeros() + 2 * n);
    for (int k = 0; k < m.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
            trips.emplace_back(int(it.row()), int(it.col()), it.value());
    for (std::size_t p = 0; p < n; ++p) {
        const double c = w[p] / s.total_volume();
        trips.emplace_back(int(p), int(n), c);
        trips.emplace_back(int(n), int(p), c);
    }
    Eigen::SparseMatrix<double> a(int(n + 1), int(n + 1));
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw RuntimeFailure("poisson_solve: factorization failed");

    Eigen::VectorXd b(n + 1);
    for (std::size_t p = 0; p < n; ++p) b[p] = (rhs[p] - mean) * w[p] / (2.0 * kTwoPi);
    b[n] = 0.0;
    Eigen::VectorXd x = lu.solve(b);
    for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXd r = b - a * x;
        x += lu.solve(r);
    }
    return Values(x.data(), x.data() + n);
}

double fs_section_norm_sq(const std::array<double, 3>& p, const std::array<double, 3>& q) {
    const double dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    return std::clamp(0.5 * (1.0 - dot), 0.0, 1.0);
}

DivisorData divisor_section(const ModelSurface& s, std::span<const DivisorPoint> points) {
    if (s.kind() != SurfaceKind::SphereP1) {
        throw ConfigError("divisor_section: divisors are supported on the sphere only");
    }
    DivisorData d;
    d.degree = static_cast<int>(points.size());
    d.s_h_sq.assign(s.size(), 1.0);
    const double dth = kPi / s.resolution();
    for (const auto& pt : points) {
        if (pt.colatitude < dth || pt.colatitude > kPi - dth) {
            throw ConfigError("divisor_section: divisor point lies in a polar cell");
        }
        const std::size_t node = s.nearest_node(pt.colatitude, pt.longitude);
        if (std::find(d.nodes.begin(), d.nodes.end(), node) != d.nodes.end()) {
            throw ConfigError("divisor_section: divisor points must be distinct on the grid");
        }
        d.nodes.push_back(node);
        const auto p = s.position(node);
        for (std::size_t q = 0; q < s.size(); ++q) d.s_h_sq[q] *= fs_section_norm_sq(p, s.position(q));
        d.s_h_sq[node] = 0.0;
    }
    for (std::size_t n : d.nodes) d.s_h_sq[n] = 0.0;
    // The Fubini-Study metric on O(1) has curvature equal to the normalized round form.
    d.theta_density.resize(s.size());
    const auto w = s.area_weight();
    for (std::size_t q = 0; q < s.size(); ++q) d.theta_density[q] = d.degree * w[q] / s.total_volume();
    return d;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double sup(std::span<const double> v) { return *std::max_element(v.begin(), v.end()); }
double inf(std::span<const double> v) { return *std::min_element(v.begin(), v.end()); }

}  // namespace coneflow::grid
