#pragma once

#include "coneflow/background.hpp"
#include "coneflow/grid.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <string>

namespace fixtures {

using namespace coneflow;

inline constexpr double kPi = std::numbers::pi;

inline grid::SurfaceHandle torus(int n = 32, double volume = 1.0) {
    return grid::ModelSurface::build(grid::SurfaceKind::Torus, n, volume);
}

inline grid::SurfaceHandle sphere(int n = 32, double volume = 2.0) {
    return grid::ModelSurface::build(grid::SurfaceKind::SphereP1, n, volume);
}

inline const grid::DivisorPoint kEquator{kPi / 2, 0.0};

inline grid::DivisorData one_point(const grid::ModelSurface& s) {
    return grid::divisor_section(s, std::span(&kEquator, 1));
}

inline background::BackgroundPack cone_pack(grid::SurfaceHandle s, double eps, double k, double T = 0.6,
                                            double gamma = 0.5) {
    background::FlowParams fp;
    fp.gamma = gamma;
    fp.epsilon = eps;
    fp.k = k;
    fp.T = T;
    auto div = one_point(*s);
    return background::build_pack(std::move(s), std::move(div), fp);
}

inline background::BackgroundPack flat_pack(grid::SurfaceHandle s, double T = 0.5) {
    background::FlowParams fp;
    fp.T = T;
    return background::build_pack(std::move(s), {}, fp);
}

// Fresh scratch directory under CONEFLOW_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch(const std::string& name) {
    const char* env = std::getenv("CONEFLOW_TEST_TMP");
    const std::filesystem::path base = env ? env : std::filesystem::temp_directory_path() / "coneflow-tests";
    const auto dir = base / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
