#pragma once

#include <limits>

// Hand-derived maximal times: slope = -c1 + (1 - gamma) m + e, T_max = V / |slope| when slope < 0.
// Expected values are exact rationals num / den (den = 0 means no finite bound).
struct TmaxCase {
    double volume, c1;
    int m;
    double gamma, eta;
    long num, den;
};

inline constexpr TmaxCase kTmaxCases[] = {
    {2.0, 2.0, 1, 1.0, 0.0, 1, 1},     // slope -2
    {1.0, 0.0, 0, 1.0, 0.0, 1, 0},     // flat torus
    {2.0, 2.0, 1, 0.5, 0.0, 4, 3},     // slope -3/2
    {1.0, 2.0, 0, 1.0, 0.0, 1, 2},     // slope -2, V = 1
    {2.0, 2.0, 2, 0.5, 0.0, 2, 1},     // slope -1
    {2.0, 2.0, 4, 0.5, 0.0, 1, 0},     // slope 0
    {3.0, 2.0, 1, 0.25, 0.0, 12, 5},   // slope -5/4
    {1.0, 0.0, 0, 1.0, -0.5, 2, 1},    // twisted torus, slope -1/2
    {2.0, 2.0, 1, 0.5, 0.5, 2, 1},     // slope -1
    {4.0, 2.0, 3, 0.5, -1.0, 8, 3},    // slope -3/2
    {1.0, 2.0, 1, 1.0, 1.0, 1, 1},     // slope -1
    {2.0, 2.0, 3, 0.25, 0.0, 1, 0},    // slope +1/4
};

inline double tmax_expected(const TmaxCase& c) {
    return c.den == 0 ? std::numeric_limits<double>::infinity() : double(c.num) / double(c.den);
}
