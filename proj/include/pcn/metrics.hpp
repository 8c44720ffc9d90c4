#pragma once

// Image quality metrics and the classical gradient-descent denoiser.

#include "pcn/grid4.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcn {

/// Rectangular evaluation region (e.g. a lesion crop).
struct Region {
  Index top = 0;
  Index left = 0;
  Index height = 0;
  Index width = 0;
};

template <typename Scalar>
double rmse(const Grid4<Scalar>& z, const Grid4<Scalar>& x, std::optional<Region> region = std::nullopt);

/// 20 log10(i_max / rmse); +inf when rmse is 0.
double psnr_from_rmse(double rmse, double i_max = 1.0);

template <typename Scalar>
double psnr(const Grid4<Scalar>& z, const Grid4<Scalar>& x, double i_max = 1.0);

/// Mean SSIM over every valid window x window position (uniform weights,
/// population statistics, c1 = (0.01 i_max)^2, c2 = (0.03 i_max)^2),
/// averaged over all (n, c) planes.
template <typename Scalar>
double ssim(const Grid4<Scalar>& z, const Grid4<Scalar>& x, double i_max = 1.0, Index window = 11);

struct ImageMetrics {
  std::string id;
  double rmse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single value
};

MeanSd mean_sd(const std::vector<double>& values);

struct MetricsReport {
  std::vector<ImageMetrics> images;

  MeanSd rmse() const;
  MeanSd psnr_db() const;
  MeanSd ssim() const;

  /// `id,rmse,psnr_db,ssim` rows followed by `mean,...` and `sd,...`.
  std::string to_csv() const;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// R(x): sum of squared horizontal and vertical forward differences per plane.
template <typename Scalar>
double roughness(const Grid4<Scalar>& x);

/// Graph Laplacian of the 4-neighbour pixel grid; grad R(x) = 2 L x.
template <typename Scalar>
Grid4<Scalar> grid_laplacian(const Grid4<Scalar>& x);

/// Objective decreased by gradient_descent_denoise: 0.5 ||x - y||^2 + lambda R(x).
template <typename Scalar>
double baseline_objective(const Grid4<Scalar>& x, const Grid4<Scalar>& y, double lambda);

/// x <- x - gamma [(x - y) + lambda grad R(x)] starting from x = y (or `start`).
/// Throws DivergenceError when the objective rises 10 iterations in a row.
template <typename Scalar>
Grid4<Scalar> gradient_descent_denoise(const Grid4<Scalar>& y, double lambda, double gamma, int n_iter,
                                       const Grid4<Scalar>* start = nullptr);

}  // namespace pcn
