#pragma once

// Synthetic paired low/normal-dose images and the patch pipeline used for training.

#include "pcn/grid4.hpp"
#include "pcn/trainer.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pcn {

/// Piecewise-smooth phantom: background, graded random ellipses, small bright
/// lesions, and a light Gaussian blur.
struct PhantomSpec {
  Index height = 64;
  Index width = 64;
  int n_ellipses = 8;
  double intensity_min = 0.2;
  double intensity_max = 0.8;
  double background = 0.05;
  int n_lesions = 2;
  double lesion_contrast = 0.15;
  double blur_sigma = 0.7;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename Scalar>
struct ImagePair {
  Grid4<Scalar> low_dose;
  Grid4<Scalar> normal_dose;
  std::string id;
};

template <typename Scalar>
struct PatchPair {
  Grid4<Scalar> low;
  Grid4<Scalar> normal;
  Index top = 0;
  Index left = 0;
};

/// (1, 1, height, width) clean image in [0, 1]; a pure function of the spec.
template <typename Scalar>
Grid4<Scalar> generate_phantom(const PhantomSpec& spec);

/// y = clamp(x + n, 0, 1) with n ~ N(0, sigma^2) i.i.d.
template <typename Scalar>
Grid4<Scalar> simulate_low_dose(const Grid4<Scalar>& clean, double noise_sigma, std::uint64_t seed);

/// Phantom plus its noisy copy, seeded from (seed, image index).
template <typename Scalar>
ImagePair<Scalar> make_synthetic_pair(const PhantomSpec& spec, std::uint64_t seed, int index);

/// floor((dim - patch) / stride) + 1 for dim >= patch, else 0.
Index patch_count(Index dim, Index patch, Index stride);

/// All fully contained patches at top-left positions (i*stride, j*stride), row-major order.
template <typename Scalar>
std::vector<PatchPair<Scalar>> extract_patches(const ImagePair<Scalar>& pair, Index patch = 55, Index stride = 4);

/// Patches from every pair (in order) stacked into an (N, 1, p, p) dataset; max_patches = 0 keeps all.
template <typename Scalar>
PatchDataset<Scalar> build_patch_dataset(const std::vector<ImagePair<Scalar>>& pairs, Index patch, Index stride,
                                         Index max_patches = 0);

/// Copies the listed batch items into a new grid.
template <typename Scalar>
Grid4<Scalar> gather(const Grid4<Scalar>& g, std::span<const Index> items);

/// Seeded epoch-wise shuffling into full mini-batches; the trailing partial batch is dropped.
class BatchIterator {
 public:
  BatchIterator(Index n_items, Index batch_size, std::uint64_t seed);

  Index batches_per_epoch() const { return n_items_ / batch_size_; }
  std::vector<std::vector<Index>> epoch(int epoch) const;

 private:
  Index n_items_;
  Index batch_size_;
  std::uint64_t seed_;
};

}  // namespace pcn
