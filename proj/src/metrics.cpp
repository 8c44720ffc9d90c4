#include "pcn/metrics.hpp"

#include "pcn/text.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace pcn {
namespace {

template <typename Scalar>
void require_same(const Grid4<Scalar>& a, const Grid4<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

// Means are shifted by the first sample and moments are two-pass, so a
// constant window has exactly zero variance and its own value as mean.
double ssim_plane(ConstRowMatrixMap<double> z, ConstRowMatrixMap<double> x, double i_max, Index window) {
  const double c1 = (0.01 * i_max) * (0.01 * i_max);
  const double c2 = (0.03 * i_max) * (0.03 * i_max);
  const Index rows = z.rows() - window + 1, cols = z.cols() - window + 1;
  const double count = static_cast<double>(window * window);
  double first = 0.0, total = 0.0;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const auto wz = z.block(i, j, window, window).array();
      const auto wx = x.block(i, j, window, window).array();
      const double mz = wz(0, 0) + (wz - wz(0, 0)).sum() / count;
      const double mx = wx(0, 0) + (wx - wx(0, 0)).sum() / count;
      const double vz = (wz - mz).square().sum() / count;
      const double vx = (wx - mx).square().sum() / count;
      const double cov = ((wz - mz) * (wx - mx)).sum() / count;
      const double s = (2.0 * mz * mx + c1) / (mz * mz + mx * mx + c1) * ((2.0 * cov + c2) / (vz + vx + c2));
      if (i == 0 && j == 0) first = s;
      total += s - first;
    }
  }
  return first + total / static_cast<double>(rows * cols);
}

}  // namespace

template <typename Scalar>
double rmse(const Grid4<Scalar>& z, const Grid4<Scalar>& x, std::optional<Region> region) {
  require_same(z, x, "rmse");
  if (region) {
    return rmse(crop(z, region->top, region->left, region->height, region->width),
                crop(x, region->top, region->left, region->height, region->width));
  }
  if (z.size() == 0) throw ShapeError("rmse: empty images");
  const double sq = (z.vec() - x.vec()).template cast<double>().squaredNorm();
  return std::sqrt(sq / static_cast<double>(z.size()));
}

double psnr_from_rmse(double rmse_value, double i_max) {
  if (!(i_max > 0.0)) throw std::invalid_argument("psnr: i_max must be positive, got " + format_double(i_max));
  if (rmse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(i_max / rmse_value);
}

template <typename Scalar>
double psnr(const Grid4<Scalar>& z, const Grid4<Scalar>& x, double i_max) {
  if (!(i_max > 0.0)) throw std::invalid_argument("psnr: i_max must be positive, got " + format_double(i_max));
  return psnr_from_rmse(rmse(z, x), i_max);
}

template <typename Scalar>
double ssim(const Grid4<Scalar>& z, const Grid4<Scalar>& x, double i_max, Index window) {
  require_same(z, x, "ssim");
  const Shape4& s = z.shape();
  if (window < 1 || s.h < window || s.w < window) {
    throw ShapeError("ssim: image " + s.str() + " is smaller than the " + std::to_string(window) + "x" +
                     std::to_string(window) + " window");
  }
  const Grid4<double> zd = z.template cast<double>();
  const Grid4<double> xd = x.template cast<double>();
  double total = 0.0;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) total += ssim_plane(zd.plane(n, c), xd.plane(n, c), i_max, window);
  return total / static_cast<double>(s.n * s.c);
}

MeanSd mean_sd(const std::vector<double>& values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1 || !std::isfinite(mean)) return {mean, values.size() == 1 ? 0.0 : mean - mean};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

namespace {
template <typename F>
MeanSd column(const std::vector<ImageMetrics>& rows, F f) {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(f(r));
  return mean_sd(v);
}
}  // namespace

MeanSd MetricsReport::rmse() const { return column(images, [](const ImageMetrics& m) { return m.rmse; }); }
MeanSd MetricsReport::psnr_db() const { return column(images, [](const ImageMetrics& m) { return m.psnr_db; }); }
MeanSd MetricsReport::ssim() const { return column(images, [](const ImageMetrics& m) { return m.ssim; }); }

std::string MetricsReport::to_csv() const {
  std::string out = "id,rmse,psnr_db,ssim\n";
  for (const auto& m : images) {
    out += m.id + "," + format_double(m.rmse) + "," + format_double(m.psnr_db) + "," + format_double(m.ssim) + "\n";
  }
  const MeanSd r = rmse(), p = psnr_db(), s = ssim();
  out += "mean," + format_double(r.mean) + "," + format_double(p.mean) + "," + format_double(s.mean) + "\n";
  out += "sd," + format_double(r.sd) + "," + format_double(p.sd) + "," + format_double(s.sd) + "\n";
  return out;
}

template <typename Scalar>
double roughness(const Grid4<Scalar>& x) {
  const Shape4& s = x.shape();
  double r = 0.0;
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const auto p = x.plane(n, c).template cast<double>();
      r += (p.rightCols(s.w - 1) - p.leftCols(s.w - 1)).squaredNorm();
      r += (p.bottomRows(s.h - 1) - p.topRows(s.h - 1)).squaredNorm();
    }
  }
  return r;
}

template <typename Scalar>
Grid4<Scalar> grid_laplacian(const Grid4<Scalar>& x) {
  const Shape4& s = x.shape();
  Grid4<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const auto p = x.plane(n, c);
      auto o = out.plane(n, c);
      if (s.w > 1) {
        const auto dh = (p.rightCols(s.w - 1) - p.leftCols(s.w - 1)).eval();
        o.leftCols(s.w - 1) -= dh;
        o.rightCols(s.w - 1) += dh;
      }
      if (s.h > 1) {
        const auto dv = (p.bottomRows(s.h - 1) - p.topRows(s.h - 1)).eval();
        o.topRows(s.h - 1) -= dv;
        o.bottomRows(s.h - 1) += dv;
      }
    }
  }
  return out;
}

template <typename Scalar>
double baseline_objective(const Grid4<Scalar>& x, const Grid4<Scalar>& y, double lambda) {
  require_same(x, y, "baseline_objective");
  return 0.5 * (x.vec() - y.vec()).template cast<double>().squaredNorm() + lambda * roughness(x);
}

template <typename Scalar>
Grid4<Scalar> gradient_descent_denoise(const Grid4<Scalar>& y, double lambda, double gamma, int n_iter,
                                       const Grid4<Scalar>* start) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gradient_descent_denoise: gamma must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("gradient_descent_denoise: lambda must be non-negative");
  if (n_iter < 0) throw std::invalid_argument("gradient_descent_denoise: n_iter must be non-negative");
  if (start) require_same(*start, y, "gradient_descent_denoise");

  Grid4<Scalar> x = start ? *start : y;
  // Written as (1-g) x + g y - 2 g lambda L x so that g = 1, lambda = 0 lands on y exactly.
  const Scalar keep = static_cast<Scalar>(1.0 - gamma);
  const Scalar g = static_cast<Scalar>(gamma);
  const Scalar step_reg = static_cast<Scalar>(2.0 * gamma * lambda);
  double previous = baseline_objective(x, y, lambda);
  int rises = 0;
  for (int it = 0; it < n_iter; ++it) {
    const Grid4<Scalar> lap = grid_laplacian(x);
    x.vec() = keep * x.vec() + g * y.vec() - step_reg * lap.vec();
    const double current = baseline_objective(x, y, lambda);
    rises = current > previous ? rises + 1 : 0;
    if (rises >= 10 || !std::isfinite(current)) {
      throw DivergenceError("gradient descent diverged at iteration " + std::to_string(it + 1) + " (gamma " +
                            format_double(gamma) + ", lambda " + format_double(lambda) +
                            "); use a smaller step size, below 2/(1+16*lambda)");
    }
    previous = current;
  }
  return x;
}

#define PCN_INSTANTIATE_METRICS(S)                                                                        \
  template double rmse(const Grid4<S>&, const Grid4<S>&, std::optional<Region>);                          \
  template double psnr(const Grid4<S>&, const Grid4<S>&, double);                                         \
  template double ssim(const Grid4<S>&, const Grid4<S>&, double, Index);                                  \
  template double roughness(const Grid4<S>&);                                                             \
  template Grid4<S> grid_laplacian(const Grid4<S>&);                                                      \
  template double baseline_objective(const Grid4<S>&, const Grid4<S>&, double);                           \
  template Grid4<S> gradient_descent_denoise(const Grid4<S>&, double, double, int, const Grid4<S>*);

PCN_INSTANTIATE_METRICS(float)
PCN_INSTANTIATE_METRICS(double)

}  // namespace pcn
