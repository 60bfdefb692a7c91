#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>

namespace nelson {

// State dimension is small (q <= 3); fixed-capacity Eigen types keep the
// hot simulation and quadrature loops free of heap traffic.
inline constexpr int kMaxDim = 3;

using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

using ScalarField = std::function<double(double t, const Point& x)>;
using VectorField = std::function<Point(double t, const Point& x)>;
using MatrixField = std::function<Matrix(double t, const Point& x)>;

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when input validation fails (bad config, non-finite arguments, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised by iterative numerical routines that exhaust their budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

inline Point zero_point(int dim) { return Point::Zero(dim); }

inline bool all_finite(const Point& x) { return x.allFinite(); }

}  // namespace nelson
