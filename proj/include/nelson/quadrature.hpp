#pragma once

#include "nelson/types.hpp"

#include <vector>

namespace nelson {

struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on [a, b] (Golub-Welsch).
Rule1D gauss_legendre(int n, double a = -1.0, double b = 1.0);

/// Probabilists' Gauss-Hermite rule: integrates f against N(0, 1).
Rule1D gauss_hermite_normal(int n);

/// Composite Simpson weights on an arbitrary increasing grid. Uniform grids
/// with an odd number of points get the classical 1-4-2-...-4-1 rule; other
/// grids fall back to the trapezoid rule.
std::vector<double> simpson_weights(const std::vector<double>& grid);

/// Uniform grid with n points on [a, b].
std::vector<double> linspace(double a, double b, int n);

/// Standard normal quantile.
double normal_quantile(double p);

struct QuadratureOptions {
  int gh_order = 20;         // Gauss-Hermite order per dimension (Gaussian slices)
  int time_slices = 129;     // Simpson points in time for continuous flows
  int gl_per_interval = 4;   // Gauss-Legendre points per time-knot interval
  int gl_per_cell = 4;       // Gauss-Legendre points per spatial knot cell (dual rule)
};

}  // namespace nelson
