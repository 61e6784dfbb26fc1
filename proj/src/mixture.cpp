#include "scalelab/mixture.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace scalelab {

std::size_t correlation_index(std::size_t n, std::size_t a, std::size_t b) {
  if (a > b) std::swap(a, b);
  if (a == b || b >= n) throw Error("invalid correlation index");
  // Rows 0..a-1 contribute (n-1) + (n-2) + ... entries.
  return a * (2 * n - a - 1) / 2 + (b - a - 1);
}

void MixtureParams::validate() const {
  if (n < 1 || n > 3) throw Error("mixture dimensionality must be 1, 2 or 3");
  if (K < 1) throw Error("mixture needs at least one component");
  if (alpha.size() != K || mu.size() != K * n || sigma.size() != K * n ||
      rho.size() != K * correlation_count(n))
    throw Error("mixture parameter arrays have inconsistent sizes");
  double total = 0.0;
  for (double a : alpha) total += a;
  if (std::abs(total - 1.0) > 1e-9) throw Error("mixture weights sum to " + std::to_string(total) + ", not 1");
  for (double s : sigma)
    if (!(s > 0.0)) throw Error("mixture standard deviations must be positive");
}

void GridSpec::validate() const {
  if (n < 1 || n > 3) throw Error("grid dimensionality must be 1, 2 or 3");
  if (side < 2) throw Error("grid side must be at least 2");
  for (std::size_t a = 0; a < n; ++a)
    if (!(domain[a].hi > domain[a].lo)) throw Error("grid domain interval is empty");
}

std::size_t GridSpec::voxel_count() const {
  std::size_t c = 1;
  for (std::size_t a = 0; a < n; ++a) c *= side;
  return c;
}

double GridSpec::voxel_volume() const {
  double v = 1.0;
  for (std::size_t a = 0; a < n; ++a) v *= spacing(a);
  return v;
}

std::array<double, 3> GridSpec::voxel_center(std::size_t flat) const {
  std::array<double, 3> x{};
  for (std::size_t a = n; a-- > 0;) {
    x[a] = center(a, flat % side);
    flat /= side;
  }
  return x;
}

Matrix build_covariance(std::span<const double> sigma, std::span<const double> rho) {
  const std::size_t n = sigma.size();
  if (rho.size() != correlation_count(n)) throw Error("correlation count does not match dimensionality");
  for (double s : sigma)
    if (!(s > 0.0)) throw Error("standard deviation must be positive");
  Matrix cov(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    cov(a, a) = sigma[a] * sigma[a];
    for (std::size_t b = a + 1; b < n; ++b) {
      const double v = rho[correlation_index(n, a, b)] * sigma[a] * sigma[b];
      cov(a, b) = v;
      cov(b, a) = v;
    }
  }
  return cov;
}

JitteredMatrix ensure_pd(const Matrix& s) {
  for (double eps : kJitterLadder) {
    Matrix candidate = s;
    for (std::size_t i = 0; i < s.rows(); ++i) candidate(i, i) += eps;
    try {
      Matrix factor = cholesky(candidate);
      return {std::move(candidate), std::move(factor), eps};
    } catch (const NotPositiveDefinite& e) {
      if (eps == kJitterLadder.back()) throw;
    }
  }
  throw Error("unreachable");
}

namespace {

double log_normalizer(const Matrix& factor) {
  const auto n = static_cast<double>(factor.rows());
  double log_det = 0.0;
  for (std::size_t i = 0; i < factor.rows(); ++i) log_det += 2.0 * std::log(factor(i, i));
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * log_det;
}

double quadratic_form(const Matrix& factor, std::span<const double> d) {
  const auto z = forward_substitute(factor, d);
  double q = 0.0;
  for (double v : z) q += v * v;
  return q;
}

}  // namespace

double gaussian_pdf(std::span<const double> x, std::span<const double> mu, const Matrix& s) {
  if (x.size() != mu.size() || s.rows() != x.size()) throw Error("gaussian_pdf dimension mismatch");
  const Matrix factor = cholesky(s);
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - mu[i];
  return std::exp(log_normalizer(factor) - 0.5 * quadratic_form(factor, d));
}

double PreparedComponent::density(std::span<const double> x, std::span<double> displacement) const {
  const std::size_t n = mean.size();
  std::array<double, 3> d{};
  for (std::size_t i = 0; i < n; ++i) d[i] = x[i] - mean[i];
  if (!displacement.empty())
    for (std::size_t i = 0; i < n; ++i) displacement[i] = d[i];
  return std::exp(log_norm - 0.5 * quadratic_form(factor, std::span<const double>(d.data(), n)));
}

std::vector<PreparedComponent> prepare_components(const MixtureParams& params) {
  std::vector<PreparedComponent> out;
  out.reserve(params.K);
  for (std::size_t i = 0; i < params.K; ++i) {
    const auto m = params.mean(i);
    auto pd = ensure_pd(build_covariance(params.stddev(i), params.correlation(i)));
    PreparedComponent c;
    c.mean.assign(m.begin(), m.end());
    c.precision = cholesky_inverse(pd.factor);
    c.log_norm = log_normalizer(pd.factor);
    c.jitter = pd.jitter;
    c.covariance = std::move(pd.matrix);
    c.factor = std::move(pd.factor);
    out.push_back(std::move(c));
  }
  return out;
}

double mixture_density(std::span<const double> x, const MixtureParams& params) {
  params.validate();
  if (x.size() != params.n) throw Error("mixture_density point has wrong dimensionality");
  const auto comps = prepare_components(params);
  double total = 0.0;
  for (std::size_t i = 0; i < params.K; ++i) total += params.alpha[i] * comps[i].density(x);
  return total;
}

Tensor render_grid(const MixtureParams& params, const GridSpec& grid) {
  grid.validate();
  params.validate();
  if (params.n != grid.n)
    throw Error("mixture has dimensionality " + std::to_string(params.n) + " but grid has " +
                std::to_string(grid.n));
  const auto comps = prepare_components(params);
  Tensor out(grid.shape());
  for (std::size_t v = 0; v < out.size(); ++v) {
    const auto c = grid.voxel_center(v);
    const std::span<const double> x(c.data(), grid.n);
    double total = 0.0;
    for (std::size_t i = 0; i < params.K; ++i) total += params.alpha[i] * comps[i].density(x);
    out[v] = total;
  }
  return out;
}

}  // namespace scalelab
