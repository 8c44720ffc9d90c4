#include "pcn/data.hpp"

#include "pcn/clone_net.hpp"
#include "pcn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace pcn {

void PhantomSpec::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1], got " + std::to_string(v));
  };
  if (height < 64 || width < 64) {
    throw ConfigError("phantom size must be at least 64x64, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (n_ellipses < 0) throw ConfigError("n_ellipses must be non-negative");
  if (n_lesions < 0) throw ConfigError("n_lesions must be non-negative");
  unit(intensity_min, "intensity_min");
  unit(intensity_max, "intensity_max");
  unit(background, "background");
  unit(lesion_contrast, "lesion_contrast");
  if (intensity_min > intensity_max) throw ConfigError("intensity_min exceeds intensity_max");
  if (!(blur_sigma >= 0.0)) throw ConfigError("blur_sigma must be non-negative");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
}

namespace {

// Separable Gaussian with clamped edges, written as x + sum w_k (x_k - x) so a
// constant image is reproduced exactly.
void blur_inplace(RowMatrix<double>& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) w[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;

  const Index h = img.rows(), wd = img.cols();
  RowMatrix<double> tmp(h, wd);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < wd; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const Index jj = std::clamp<Index>(j + k, 0, wd - 1);
        acc += w[k + radius] * (img(i, jj) - img(i, j));
      }
      tmp(i, j) = img(i, j) + acc;
    }
  }
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < wd; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const Index ii = std::clamp<Index>(i + k, 0, h - 1);
        acc += w[k + radius] * (tmp(ii, j) - tmp(i, j));
      }
      img(i, j) = tmp(i, j) + acc;
    }
  }
}

}  // namespace

template <typename Scalar>
Grid4<Scalar> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Index h = spec.height, w = spec.width;
  RowMatrix<double> img = RowMatrix<double>::Constant(h, w, spec.background);
  Rng rng(derive_seed(spec.seed, 0x9a17));
  const double side = static_cast<double>(std::min(h, w));

  for (int e = 0; e < spec.n_ellipses; ++e) {
    const double cy = rng.uniform(0.2, 0.8) * h;
    const double cx = rng.uniform(0.2, 0.8) * w;
    const double a = rng.uniform(0.08, 0.35) * side;
    const double b = rng.uniform(0.08, 0.35) * side;
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double level = rng.uniform(spec.intensity_min, spec.intensity_max);
    const double grade = rng.uniform(0.0, 0.3);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const double dy = i + 0.5 - cy, dx = j + 0.5 - cx;
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / b;
        const double r2 = u * u + v * v;
        if (r2 <= 1.0) img(i, j) = level * (1.0 - grade * r2);
      }
    }
  }
  for (int l = 0; l < spec.n_lesions; ++l) {
    const double cy = rng.uniform(0.1, 0.9) * h;
    const double cx = rng.uniform(0.1, 0.9) * w;
    const double r = rng.uniform(1.5, 3.5);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const double dy = i + 0.5 - cy, dx = j + 0.5 - cx;
        if (dy * dy + dx * dx <= r * r) img(i, j) += spec.lesion_contrast;
      }
    }
  }
  blur_inplace(img, spec.blur_sigma);

  Grid4<Scalar> out(Shape4{1, 1, h, w});
  out.plane(0, 0) = img.cwiseMax(0.0).cwiseMin(1.0).template cast<Scalar>();
  return out;
}

template <typename Scalar>
Grid4<Scalar> simulate_low_dose(const Grid4<Scalar>& clean, double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative, got " + std::to_string(noise_sigma));
  Grid4<Scalar> out = clean;
  if (noise_sigma == 0.0) return out;
  Rng rng(derive_seed(seed, 0x7015e));
  for (Index i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(clean.data()[i]) + noise_sigma * rng.normal();
    out.data()[i] = static_cast<Scalar>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

template <typename Scalar>
ImagePair<Scalar> make_synthetic_pair(const PhantomSpec& spec, std::uint64_t seed, int index) {
  PhantomSpec s = spec;
  s.seed = derive_seed(seed, 2 * static_cast<std::uint64_t>(index));
  Grid4<Scalar> clean = generate_phantom<Scalar>(s);
  Grid4<Scalar> noisy =
      simulate_low_dose(clean, spec.noise_sigma, derive_seed(seed, 2 * static_cast<std::uint64_t>(index) + 1));
  char id[32];
  std::snprintf(id, sizeof id, "img%04d", index);
  return {std::move(noisy), std::move(clean), id};
}

Index patch_count(Index dim, Index patch, Index stride) {
  if (patch < 1 || stride < 1) throw ConfigError("patch and stride must be positive");
  return dim < patch ? 0 : (dim - patch) / stride + 1;
}

template <typename Scalar>
std::vector<PatchPair<Scalar>> extract_patches(const ImagePair<Scalar>& pair, Index patch, Index stride) {
  const Shape4& s = pair.low_dose.shape();
  if (s != pair.normal_dose.shape()) {
    throw ShapeError("image pair '" + pair.id + "': low-dose " + s.str() + " vs normal-dose " +
                     pair.normal_dose.shape().str());
  }
  if (s.h < patch || s.w < patch) {
    throw ShapeError("image '" + pair.id + "' " + s.str() + " is smaller than the " + std::to_string(patch) + "x" +
                     std::to_string(patch) + " patch");
  }
  const Index rows = patch_count(s.h, patch, stride), cols = patch_count(s.w, patch, stride);
  std::vector<PatchPair<Scalar>> out;
  out.reserve(rows * cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const Index top = i * stride, left = j * stride;
      out.push_back({crop(pair.low_dose, top, left, patch, patch), crop(pair.normal_dose, top, left, patch, patch),
                     top, left});
    }
  }
  return out;
}

template <typename Scalar>
PatchDataset<Scalar> build_patch_dataset(const std::vector<ImagePair<Scalar>>& pairs, Index patch, Index stride,
                                         Index max_patches) {
  std::vector<PatchPair<Scalar>> all;
  for (const auto& p : pairs) {
    auto ps = extract_patches(p, patch, stride);
    for (auto& pp : ps) {
      if (max_patches > 0 && static_cast<Index>(all.size()) >= max_patches) break;
      all.push_back(std::move(pp));
    }
    if (max_patches > 0 && static_cast<Index>(all.size()) >= max_patches) break;
  }
  if (all.empty()) throw ConfigError("no training patches could be extracted");
  const Index n = static_cast<Index>(all.size());
  PatchDataset<Scalar> ds{Grid4<Scalar>(Shape4{n, 1, patch, patch}), Grid4<Scalar>(Shape4{n, 1, patch, patch})};
  const Index item = patch * patch;
  for (Index i = 0; i < n; ++i) {
    ds.low.vec().segment(i * item, item) = all[i].low.vec();
    ds.normal.vec().segment(i * item, item) = all[i].normal.vec();
  }
  return ds;
}

template <typename Scalar>
Grid4<Scalar> gather(const Grid4<Scalar>& g, std::span<const Index> items) {
  const Shape4& s = g.shape();
  Shape4 os = s;
  os.n = static_cast<Index>(items.size());
  Grid4<Scalar> out(os);
  const Index item = s.item();
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (items[b] < 0 || items[b] >= s.n) throw ShapeError("gather: item index out of range for " + s.str());
    out.vec().segment(static_cast<Index>(b) * item, item) = g.vec().segment(items[b] * item, item);
  }
  return out;
}

BatchIterator::BatchIterator(Index n_items, Index batch_size, std::uint64_t seed)
    : n_items_(n_items), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1, got " + std::to_string(batch_size));
  if (n_items < 1) throw ConfigError("dataset is empty");
}

std::vector<std::vector<Index>> BatchIterator::epoch(int epoch) const {
  std::vector<Index> order(n_items_);
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(seed_, 0xe90c0000ull + static_cast<std::uint64_t>(epoch)));
  for (Index i = n_items_ - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<Index>> batches;
  for (Index b = 0; b < batches_per_epoch(); ++b) {
    batches.emplace_back(order.begin() + b * batch_size_, order.begin() + (b + 1) * batch_size_);
  }
  return batches;
}

#define PCN_INSTANTIATE_DATA(S)                                                                              \
  template Grid4<S> generate_phantom<S>(const PhantomSpec&);                                                 \
  template Grid4<S> simulate_low_dose(const Grid4<S>&, double, std::uint64_t);                               \
  template ImagePair<S> make_synthetic_pair<S>(const PhantomSpec&, std::uint64_t, int);                      \
  template std::vector<PatchPair<S>> extract_patches(const ImagePair<S>&, Index, Index);                     \
  template PatchDataset<S> build_patch_dataset(const std::vector<ImagePair<S>>&, Index, Index, Index);      \
  template Grid4<S> gather(const Grid4<S>&, std::span<const Index>);

PCN_INSTANTIATE_DATA(float)
PCN_INSTANTIATE_DATA(double)

}  // namespace pcn
