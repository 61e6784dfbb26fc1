#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "scalelab/numerics.hpp"

namespace scalelab {

/// Number of distinct correlation coefficients for dimensionality n.
constexpr std::size_t correlation_count(std::size_t n) { return n * (n - 1) / 2; }

/// Position of rho_{a,b} (a < b) in the packed row-major upper triangle.
std::size_t correlation_index(std::size_t n, std::size_t a, std::size_t b);

/// Parameters of a K-component Gaussian mixture in n <= 3 dimensions.
/// Per-component blocks are stored contiguously: mu[i*n .. i*n+n), etc.
struct MixtureParams {
  std::size_t n = 0;
  std::size_t K = 0;
  std::vector<double> alpha;
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> rho;

  std::span<const double> mean(std::size_t i) const { return {mu.data() + i * n, n}; }
  std::span<const double> stddev(std::size_t i) const { return {sigma.data() + i * n, n}; }
  std::span<const double> correlation(std::size_t i) const {
    return {rho.data() + i * correlation_count(n), correlation_count(n)};
  }

  /// Checks sizes, alpha summing to one within 1e-9 and positive sigma.
  void validate() const;
};

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
};

/// Regular voxel grid; voxel i on an axis is centred at lo + (i + 1/2) * width / side.
struct GridSpec {
  std::size_t n = 3;
  std::size_t side = 16;
  std::array<Interval, 3> domain{};

  void validate() const;
  double spacing(std::size_t axis) const { return (domain[axis].hi - domain[axis].lo) / static_cast<double>(side); }
  double center(std::size_t axis, std::size_t i) const {
    return domain[axis].lo + (static_cast<double>(i) + 0.5) * spacing(axis);
  }
  std::size_t voxel_count() const;
  double voxel_volume() const;
  std::vector<std::size_t> shape() const { return std::vector<std::size_t>(n, side); }
  /// Coordinates of the centre of the voxel with row-major flat index.
  std::array<double, 3> voxel_center(std::size_t flat) const;
};

/// Covariance with sigma_i^2 on the diagonal and rho_ij sigma_i sigma_j off it.
Matrix build_covariance(std::span<const double> sigma, std::span<const double> rho);

inline constexpr std::array<double, 8> kJitterLadder{0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};

struct JitteredMatrix {
  Matrix matrix;
  Matrix factor;  // Cholesky factor of matrix
  double jitter = 0.0;
};

/// Adds the smallest ladder jitter that makes s factorizable. Throws
/// NotPositiveDefinite when even 1e-2 is not enough.
JitteredMatrix ensure_pd(const Matrix& s);

double gaussian_pdf(std::span<const double> x, std::span<const double> mu, const Matrix& s);

/// One mixture component with everything needed for repeated evaluation.
struct PreparedComponent {
  std::vector<double> mean;
  Matrix covariance;  // after jitter
  Matrix factor;      // Cholesky factor
  Matrix precision;   // covariance inverse
  double log_norm = 0.0;  // -n/2 log(2 pi) - 1/2 log|S|
  double jitter = 0.0;

  /// Density at x; also writes x - mean into displacement when non-empty.
  double density(std::span<const double> x, std::span<double> displacement = {}) const;
};

std::vector<PreparedComponent> prepare_components(const MixtureParams& params);

double mixture_density(std::span<const double> x, const MixtureParams& params);

/// Mixture density at every voxel centre, shape side^n.
Tensor render_grid(const MixtureParams& params, const GridSpec& grid);

}  // namespace scalelab
