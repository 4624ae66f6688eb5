#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "epiinit/types.hpp"

namespace epiinit {

/// Gaussian-kernel density estimate evaluated on a uniform grid.
struct KdeCurve {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

inline double trapezoid_integral(const std::vector<double>& grid, const std::vector<double>& values) {
    double total = 0.0;
    for (size_t i = 1; i < grid.size(); ++i)
        total += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    return total;
}

/**
 * Gaussian KDE with the Silverman rule-of-thumb bandwidth 1.06 sigma n^{-1/5},
 * evaluated on a uniform grid spanning [min - 3h, max + 3h]. Requires at least
 * two distinct samples; a point mass has no density estimate.
 */
inline KdeCurve kde_fit(std::span<const double> samples, int grid_size = 512) {
    const size_t n = samples.size();
    if (n < 2) throw InvalidParameterError("kde_fit: need at least two samples");
    if (grid_size < 2) throw InvalidParameterError("kde_fit: grid_size must be at least 2");
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / double(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / double(n - 1));
    if (sd == 0.0) throw NumericalError("kde_fit: degenerate samples form a point mass");

    KdeCurve curve;
    curve.bandwidth = 1.06 * sd * std::pow(double(n), -0.2);
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it - 3.0 * curve.bandwidth;
    const double hi = *hi_it + 3.0 * curve.bandwidth;
    curve.grid.resize(grid_size);
    curve.density.assign(grid_size, 0.0);
    const double step = (hi - lo) / double(grid_size - 1);
    const double inv_h = 1.0 / curve.bandwidth;
    const double norm = inv_h / (double(n) * std::sqrt(2.0 * M_PI));
    for (int g = 0; g < grid_size; ++g) {
        const double xg = lo + step * g;
        curve.grid[g] = xg;
        double acc = 0.0;
        for (double v : samples) {
            const double z = (xg - v) * inv_h;
            acc += std::exp(-0.5 * z * z);
        }
        curve.density[g] = norm * acc;
    }
    return curve;
}

/// Quantile of the distribution described by a KDE curve (trapezoid CDF).
inline double kde_quantile(const KdeCurve& curve, double p) {
    const double total = trapezoid_integral(curve.grid, curve.density);
    const double target = p * total;
    double acc = 0.0;
    for (size_t i = 1; i < curve.grid.size(); ++i) {
        const double seg = 0.5 * (curve.density[i] + curve.density[i - 1]) *
                           (curve.grid[i] - curve.grid[i - 1]);
        if (acc + seg >= target && seg > 0.0) {
            const double frac = (target - acc) / seg;
            return curve.grid[i - 1] + frac * (curve.grid[i] - curve.grid[i - 1]);
        }
        acc += seg;
    }
    return curve.grid.back();
}

}  // namespace epiinit
