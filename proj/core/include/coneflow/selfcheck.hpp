#pragma once

#include <string>
#include <vector>

namespace coneflow::selfcheck {

struct Result {
    std::string name;
    double value;
    double threshold;
    bool pass;
    std::string detail;
};

// Static solve against u* = 0.1 cos(2 pi x) on the torus; value is the max-norm error.
Result manufactured_static_solve(int resolution = 64);

// Poisson solve of a zero-mean smooth right-hand side on the sphere; value is the max residual.
Result poisson_residual(int resolution = 64);

// Observed order of the implicit scheme under dt halving on a smooth torus run (nominal 1).
Result dt_refinement_order();

// Observed order of the torus discretization under N doubling (nominal 2).
Result grid_refinement_order();

std::vector<Result> run_all();

}  // namespace coneflow::selfcheck
