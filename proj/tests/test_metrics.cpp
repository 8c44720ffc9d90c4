#include "oracles.hpp"

#include "pcn/metrics.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace pcn;

namespace {

TEST(Rmse, ClosedForms) {
  const auto x = Grid4<double>::Constant({1, 1, 8, 8}, 0.25);
  EXPECT_EQ(rmse(x, x), 0.0);
  EXPECT_EQ(rmse(Grid4<double>::Constant({1, 1, 8, 8}, 0.75), x), 0.5);
}

TEST(Rmse, MatchesTwoPassOracle) {
  Rng rng(1);
  const auto z = oracle::random_grid({2, 1, 17, 13}, rng, 0, 1);
  const auto x = oracle::random_grid(z.shape(), rng, 0, 1);
  EXPECT_NEAR(rmse(z, x), oracle::rmse(z, x), 1e-12);
}

TEST(Rmse, RegionCrop) {
  Rng rng(2);
  const auto z = oracle::random_grid({1, 1, 20, 20}, rng);
  auto x = z;
  x(0, 0, 0, 0) += 1.0;
  EXPECT_EQ(rmse(z, x, Region{5, 5, 8, 8}), 0.0);
  EXPECT_GT(rmse(z, x), 0.0);
  EXPECT_THROW(rmse(z, x, Region{15, 15, 8, 8}), ShapeError);
  EXPECT_THROW(rmse(z, Grid4<double>(Shape4{1, 1, 20, 19})), ShapeError);
}

TEST(Psnr, ClosedForms) {
  EXPECT_EQ(psnr_from_rmse(0.1, 1.0), 20.0);
  EXPECT_EQ(psnr_from_rmse(0.0), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr_from_rmse(0.05) - psnr_from_rmse(0.1), 20.0 * std::log10(2.0), 1e-12);
  EXPECT_THROW(psnr_from_rmse(0.1, 0.0), std::invalid_argument);
  const auto x = Grid4<double>::Constant({1, 1, 4, 4}, 0.5);
  EXPECT_EQ(psnr(x, x), std::numeric_limits<double>::infinity());
}

TEST(Psnr, DecreasesWithRmse) {
  double last = std::numeric_limits<double>::infinity();
  for (double r = 0.001; r < 1.0; r *= 1.3) {
    const double p = psnr_from_rmse(r);
    EXPECT_LT(p, last);
    last = p;
  }
}

TEST(Ssim, IdenticalImagesGiveExactlyOne) {
  Rng rng(3);
  const auto z = oracle::random_grid({2, 1, 32, 32}, rng, 0, 1);
  EXPECT_EQ(ssim(z, z), 1.0);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double a = 0.3, b = 0.7, c1 = 0.01 * 0.01;
  const auto za = Grid4<double>::Constant({1, 1, 16, 16}, a);
  const auto xb = Grid4<double>::Constant({1, 1, 16, 16}, b);
  EXPECT_EQ(ssim(za, xb), (2 * a * b + c1) / (a * a + b * b + c1));
}

TEST(Ssim, MatchesBruteForceWindows) {
  Rng rng(4);
  const auto z = oracle::random_grid({1, 1, 32, 32}, rng, 0, 1);
  const auto x = oracle::random_grid(z.shape(), rng, 0, 1);
  EXPECT_NEAR(ssim(z, x), oracle::ssim(z, x), 1e-10);
  EXPECT_NEAR(ssim(z, x, 2.0, 5), oracle::ssim(z, x, 2.0, 5), 1e-10);
}

TEST(Ssim, SymmetricButNotAffineInvariant) {
  Rng rng(5);
  const auto z = oracle::random_grid({1, 1, 24, 24}, rng, 0, 1);
  auto x = oracle::random_grid(z.shape(), rng, 0, 1);
  x.vec() = 0.5 * (x.vec() + z.vec());
  EXPECT_NEAR(ssim(z, x), ssim(x, z), 1e-12);
  Grid4<double> scaled = x;
  scaled.vec() = 0.5 * x.vec().array() + 0.2;
  EXPECT_GT(std::abs(ssim(z, scaled) - ssim(z, x)), 1e-3);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  const auto z = Grid4<double>::Constant({1, 1, 10, 30}, 0.5);
  EXPECT_THROW(ssim(z, z), ShapeError);
}

TEST(Report, MeanSdRowsMatchRecomputation) {
  MetricsReport r;
  r.images = {{"a", 0.1, 20.0, 0.9}, {"b", 0.2, 13.979400086720375, 0.8}, {"c", 0.05, 26.020599913279625, 0.95}};
  const MeanSd p = r.psnr_db();
  const double mean = (20.0 + 13.979400086720375 + 26.020599913279625) / 3.0;
  double ss = 0;
  for (const auto& m : r.images) ss += (m.psnr_db - mean) * (m.psnr_db - mean);
  EXPECT_DOUBLE_EQ(p.mean, mean);
  EXPECT_DOUBLE_EQ(p.sd, std::sqrt(ss / 2.0));
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,rmse,psnr_db,ssim");
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
  EXPECT_NE(csv.find("\nsd,"), std::string::npos);
}

TEST(Report, SingleImageHasZeroSd) {
  const MeanSd m = mean_sd({3.5});
  EXPECT_EQ(m.mean, 3.5);
  EXPECT_EQ(m.sd, 0.0);
}

TEST(Baseline, LambdaZeroGammaOneReturnsInput) {
  Rng rng(6);
  const auto y = oracle::random_grid({1, 1, 16, 16}, rng, 0, 1);
  const auto start = oracle::random_grid(y.shape(), rng, 0, 1);
  EXPECT_EQ(gradient_descent_denoise(y, 0.0, 1.0, 1, &start).vec(), y.vec());
  EXPECT_EQ(gradient_descent_denoise(y, 0.0, 1.0, 1).vec(), y.vec());
}

TEST(Baseline, HalfStepFromZero) {
  Rng rng(7);
  const auto y = oracle::random_grid({1, 1, 16, 16}, rng, 0, 1);
  const Grid4<double> zero(y.shape());
  const auto x = gradient_descent_denoise(y, 0.0, 0.5, 1, &zero);
  EXPECT_EQ(x.vec(), (0.5 * y.vec()).eval());
}

TEST(Baseline, LaplacianIsGradientOfRoughness) {
  Rng rng(8);
  auto x = oracle::random_grid({1, 1, 7, 9}, rng);
  const auto lap = grid_laplacian(x);
  Grid4<double> g = lap;
  g.vec() *= 2.0;
  auto f = [&] { return roughness(x); };
  EXPECT_LT(oracle::worst_grad_error(f, x.data(), g.data(), x.size()), 1e-6);
}

TEST(Baseline, ConvergesToFirstOrderOptimum) {
  Rng rng(9);
  const auto y = oracle::random_grid({1, 1, 24, 24}, rng, 0, 1);
  for (double lambda : {0.0, 0.1, 1.0}) {
    const double gamma = 1.0 / (1.0 + 16.0 * lambda);
    const auto x = gradient_descent_denoise(y, lambda, gamma, 5000);
    Grid4<double> r = grid_laplacian(x);
    r.vec() = (x.vec() - y.vec()) + 2.0 * lambda * r.vec();
    EXPECT_LT(r.vec().norm(), 1e-6 * y.vec().norm()) << "lambda " << lambda;
  }
}

TEST(Baseline, ObjectiveNeverIncreasesBelowStabilityBound) {
  Rng rng(10);
  const auto y = oracle::random_grid({1, 1, 20, 20}, rng, 0, 1);
  for (double lambda : {0.05, 0.5, 2.0}) {
    const double bound = 2.0 / (1.0 + 16.0 * lambda);
    for (double frac : {0.1, 0.5, 0.9, 0.99}) {
      Grid4<double> x = y;
      double prev = baseline_objective(x, y, lambda);
      for (int it = 0; it < 50; ++it) {
        x = gradient_descent_denoise(y, lambda, frac * bound, 1, &x);
        const double cur = baseline_objective(x, y, lambda);
        ASSERT_LE(cur, prev + 1e-12 * std::abs(prev)) << lambda << " " << frac;
        prev = cur;
      }
    }
  }
}

TEST(Baseline, DivergenceIsReported) {
  Rng rng(11);
  const auto y = oracle::random_grid({1, 1, 16, 16}, rng, 0, 1);
  try {
    gradient_descent_denoise(y, 1.0, 1.0, 200);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("smaller step"), std::string::npos);
  }
  EXPECT_THROW(gradient_descent_denoise(y, 0.1, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(gradient_descent_denoise(y, -0.1, 0.5, 1), std::invalid_argument);
}

}  // namespace
