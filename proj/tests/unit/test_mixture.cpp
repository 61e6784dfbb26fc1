#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scalelab/mixture.hpp"
#include "scalelab/numerics.hpp"
#include "scalelab/rng.hpp"

using namespace scalelab;

namespace {

MixtureParams single(std::size_t n, std::vector<double> mu, std::vector<double> sigma, std::vector<double> rho) {
  MixtureParams p;
  p.n = n;
  p.K = 1;
  p.alpha = {1.0};
  p.mu = std::move(mu);
  p.sigma = std::move(sigma);
  p.rho = std::move(rho);
  return p;
}

}  // namespace

TEST(Covariance, DiagonalAndCorrelatedCases) {
  const std::vector<double> sigma{1, 2};
  Matrix s = build_covariance(sigma, std::vector<double>{0.0});
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_EQ(s(1, 1), 4.0);
  EXPECT_EQ(s(0, 1), 0.0);
  s = build_covariance(sigma, std::vector<double>{0.5});
  EXPECT_EQ(s(0, 1), 1.0);
  EXPECT_EQ(s(1, 0), 1.0);
  EXPECT_EQ(s(1, 1), 4.0);
}

TEST(Covariance, ExactlySymmetricWithPackedOrder) {
  const std::vector<double> sigma{0.3, 0.7, 1.1}, rho{0.1, 0.2, 0.3};
  const Matrix s = build_covariance(sigma, rho);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s(i, j), s(j, i));
  EXPECT_EQ(s(0, 1), 0.1 * 0.3 * 0.7);
  EXPECT_EQ(s(0, 2), 0.2 * 0.3 * 1.1);
  EXPECT_EQ(s(1, 2), 0.3 * 0.7 * 1.1);
}

TEST(Covariance, StrongCorrelationsFailCholesky) {
  const Matrix s = build_covariance(std::vector<double>{1, 1, 1}, std::vector<double>{0.9, 0.9, 0.0});
  EXPECT_THROW(cholesky(s), NotPositiveDefinite);
}

TEST(EnsurePd, PositiveDefiniteInputsAreUntouched) {
  auto r = ensure_pd(Matrix::identity(3));
  EXPECT_EQ(r.jitter, 0.0);
  EXPECT_EQ(r.matrix(1, 1), 1.0);
  const Matrix s(2, 2, {4, 2, 2, 3});
  r = ensure_pd(s);
  EXPECT_EQ(r.jitter, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.matrix.values()[i], s.values()[i]);
}

TEST(EnsurePd, BorderlineMatrixTakesTheSmallestSufficientRung) {
  // Minimum eigenvalue of this correlation matrix is about -1.3e-4.
  const Matrix s = build_covariance(std::vector<double>{1, 1, 1}, std::vector<double>{0.7072, 0.7072, 0.0});
  const auto r = ensure_pd(s);
  EXPECT_EQ(r.jitter, 1e-3);
  EXPECT_EQ(r.matrix(0, 0), 1.0 + 1e-3);
}

TEST(EnsurePd, HopelessMatrixExhaustsTheLadder) {
  // Minimum eigenvalue about -0.273: no rung up to 1e-2 can repair it.
  const Matrix s = build_covariance(std::vector<double>{1, 1, 1}, std::vector<double>{0.9, 0.9, 0.0});
  EXPECT_THROW(ensure_pd(s), NotPositiveDefinite);
}

TEST(GaussianPdf, ClosedForms) {
  EXPECT_NEAR(gaussian_pdf(std::vector<double>{0}, std::vector<double>{0}, Matrix(1, 1, {1.0})), 0.3989422804014327,
              1e-15);
  EXPECT_NEAR(gaussian_pdf(std::vector<double>{0.5, -1}, std::vector<double>{0.5, -1}, Matrix(2, 2, {1, 0, 0, 4})),
              0.079577471545947673, 1e-15);
}

TEST(GaussianPdf, ThreeDimensionalReference) {
  const std::vector<double> sigma{0.2, 0.3, 0.25}, rho{0.4, 0.1, 0.3};
  const Matrix s = build_covariance(sigma, rho);
  const double p = gaussian_pdf(std::vector<double>{0.05, 0.1, -0.2}, std::vector<double>{0.1, 0.0, -0.1}, s);
  EXPECT_NEAR(p, 3.6399244837670541, 1e-12);
}

TEST(GaussianPdf, SymmetricAboutTheMean) {
  const Matrix s = build_covariance(std::vector<double>{0.3, 0.5, 0.4}, std::vector<double>{0.2, 0.1, 0.25});
  const std::vector<double> mu{0.1, -0.2, 0.3};
  Rng rng(4, 4);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> a(3), b(3);
    for (std::size_t j = 0; j < 3; ++j) {
      const double d = rng.uniform(-0.5, 0.5);
      a[j] = mu[j] + d;
      b[j] = mu[j] - d;
    }
    EXPECT_NEAR(gaussian_pdf(a, mu, s), gaussian_pdf(b, mu, s), 1e-13);
  }
}

TEST(GaussianPdf, CholeskyMatchesDirectInverse) {
  Rng rng(11, 11);
  for (std::size_t n = 1; n <= 3; ++n)
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> sigma(n), rho(correlation_count(n)), x(n), mu(n);
      for (auto& v : sigma) v = rng.uniform(0.1, 1.0);
      for (auto& v : rho) v = rng.uniform(0.0, 0.4);
      for (auto& v : x) v = rng.uniform(-1, 1);
      for (auto& v : mu) v = rng.uniform(-1, 1);
      const Matrix s = build_covariance(sigma, rho);
      const Matrix inv = cholesky_inverse(cholesky(s));
      // Determinant by cofactor expansion, independent of the factorization.
      double det = 0;
      if (n == 1) det = s(0, 0);
      if (n == 2) det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
      if (n == 3)
        det = s(0, 0) * (s(1, 1) * s(2, 2) - s(1, 2) * s(2, 1)) - s(0, 1) * (s(1, 0) * s(2, 2) - s(1, 2) * s(2, 0)) +
              s(0, 2) * (s(1, 0) * s(2, 1) - s(1, 1) * s(2, 0));
      double q = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) q += (x[i] - mu[i]) * inv(i, j) * (x[j] - mu[j]);
      const double direct =
          std::exp(-0.5 * q) / std::sqrt(std::pow(2 * std::numbers::pi, static_cast<double>(n)) * det);
      const double viaL = gaussian_pdf(x, mu, s);
      EXPECT_NEAR(viaL / direct, 1.0, 1e-10);
    }
}

TEST(GaussianPdf, RejectsIndefiniteCovariance) {
  EXPECT_THROW(gaussian_pdf(std::vector<double>{0, 0}, std::vector<double>{0, 0}, Matrix(2, 2, {1, 2, 2, 1})),
               NotPositiveDefinite);
}

TEST(MixtureDensity, SingleComponentEqualsPdf) {
  const auto p = single(2, {0.1, -0.2}, {0.2, 0.3}, {0.25});
  const std::vector<double> x{0.0, 0.05};
  EXPECT_DOUBLE_EQ(mixture_density(x, p), gaussian_pdf(x, p.mu, build_covariance(p.sigma, p.rho)));
}

TEST(MixtureDensity, IdenticalComponentsCollapse) {
  MixtureParams p;
  p.n = 2;
  p.K = 2;
  p.alpha = {0.5, 0.5};
  p.mu = {0.1, 0.2, 0.1, 0.2};
  p.sigma = {0.3, 0.4, 0.3, 0.4};
  p.rho = {0.2, 0.2};
  const auto one = single(2, {0.1, 0.2}, {0.3, 0.4}, {0.2});
  const std::vector<double> x{0.3, -0.1};
  EXPECT_NEAR(mixture_density(x, p), mixture_density(x, one), 1e-15);
}

TEST(MixtureDensity, TwoComponentProbeReference) {
  MixtureParams p;
  p.n = 2;
  p.K = 2;
  p.alpha = {0.3, 0.7};
  p.mu = {0.1, -0.2, -0.3, 0.25};
  // S1 = [[.04,.01],[.01,.09]] -> sigma (.2,.3), rho 1/6; S2 = diag(.0625,.01).
  p.sigma = {0.2, 0.3, 0.25, 0.1};
  p.rho = {0.01 / (0.2 * 0.3), 0.0};
  EXPECT_NEAR(mixture_density(std::vector<double>{0.0, 0.05}, p), 0.75588085205109068, 1e-13);
}

TEST(MixtureParamsCheck, ValidateCatchesBadWeights) {
  auto p = single(1, {0.0}, {0.1}, {});
  p.validate();
  p.alpha = {0.9};
  EXPECT_THROW(p.validate(), Error);
  p.alpha = {1.0};
  p.sigma = {0.0};
  EXPECT_THROW(p.validate(), Error);
}

TEST(Grid, VoxelCentresAndLayout) {
  GridSpec g;
  g.n = 2;
  g.side = 4;
  EXPECT_DOUBLE_EQ(g.spacing(0), 0.5);
  EXPECT_DOUBLE_EQ(g.center(0, 0), -0.75);
  EXPECT_DOUBLE_EQ(g.center(0, 3), 0.75);
  const auto c = g.voxel_center(1);  // last axis runs fastest
  EXPECT_DOUBLE_EQ(c[0], -0.75);
  EXPECT_DOUBLE_EQ(c[1], -0.25);
  EXPECT_EQ(g.voxel_count(), 16u);
  EXPECT_DOUBLE_EQ(g.voxel_volume(), 0.25);
}

TEST(RenderGrid, QuadratureIntegratesToOne) {
  GridSpec g;
  g.n = 3;
  g.side = 64;
  const auto p = single(3, {0, 0, 0}, {0.08, 0.08, 0.08}, {0, 0, 0});
  const Tensor t = render_grid(p, g);
  EXPECT_NEAR(tree_sum(t.values()) * g.voxel_volume(), 1.0, 1e-3);
}

TEST(RenderGrid, WideDomainTwoDimensional) {
  GridSpec g;
  g.n = 2;
  g.side = 128;
  const auto p = single(2, {0.05, -0.02}, {0.1, 0.07}, {0.3});
  const Tensor t = render_grid(p, g);
  EXPECT_NEAR(tree_sum(t.values()) * g.voxel_volume(), 1.0, 1e-3);
}

TEST(RenderGrid, PeakSitsOnTheMeanVoxel) {
  GridSpec g;
  g.n = 2;
  g.side = 8;
  const auto p = single(2, {g.center(0, 2), g.center(1, 5)}, {0.2, 0.3}, {0.1});
  const Tensor t = render_grid(p, g);
  const auto it = std::max_element(t.values().begin(), t.values().end());
  EXPECT_EQ(static_cast<std::size_t>(it - t.values().begin()), 2u * 8u + 5u);
}

TEST(RenderGrid, DeterministicAndShapeChecked) {
  GridSpec g;
  g.n = 3;
  g.side = 8;
  const auto p = single(3, {0.1, 0, -0.1}, {0.2, 0.3, 0.25}, {0.1, 0.2, 0.05});
  EXPECT_TRUE(render_grid(p, g).identical(render_grid(p, g)));
  EXPECT_EQ(render_grid(p, g).shape(), (std::vector<std::size_t>{8, 8, 8}));
  g.n = 2;
  EXPECT_THROW(render_grid(p, g), Error);
}

TEST(RenderGrid, NormalizationImprovesWithResolution) {
  // Narrow enough that the mass outside the domain is below 1e-12.
  const auto p = single(2, {0.0, 0.05}, {0.1, 0.12}, {0.2});
  double prev = 1.0;
  for (std::size_t side : {8u, 16u, 32u, 64u}) {
    GridSpec g;
    g.n = 2;
    g.side = side;
    const double err = std::abs(tree_sum(render_grid(p, g).values()) * g.voxel_volume() - 1.0);
    EXPECT_LE(err, prev + 1e-10);
    prev = err;
  }
  EXPECT_LT(prev, 1e-6);
}
