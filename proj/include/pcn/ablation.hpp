#pragma once

// Training runs driven by a RunConfig, and the ablation grid runner built on them.

#include "pcn/io.hpp"
#include "pcn/metrics.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pcn {

/// Trains from scratch (parameters seeded by config.train.seed) or continues
/// `resume`, whose config must equal `config`. `on_epoch` sees the checkpoint
/// after every finished epoch.
Checkpoint train_run(const RunConfig& config, const std::vector<ImagePair<float>>& pairs,
                     std::optional<Checkpoint> resume = std::nullopt, std::optional<int> stop_after = std::nullopt,
                     const std::function<void(const Checkpoint&)>& on_epoch = {});

/// Per-image metrics of x_T against the normal-dose images.
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<ImagePair<float>>& pairs);

struct AblationArm {
  std::string id;
  RunConfig config;
  std::vector<std::uint64_t> seeds;
};

/// INI-like grid: `key=value` lines before the first `[id]` header are shared
/// defaults; each `[id]` block overrides them. `seeds=0,1,2` lists the training
/// seeds (default: the block's `seed`). Every block is validated on parse.
std::vector<AblationArm> parse_ablation_grid(std::string_view text);

struct ArmResult {
  std::string id;
  std::vector<std::uint64_t> seeds;
  std::vector<ConvergenceLog> logs;    // one per seed
  std::vector<MetricsReport> reports;  // one per seed, on the evaluation images
  /// Pooled over every (seed, image) pair.
  MeanSd psnr;
  MeanSd ssim;
  MeanSd rmse;
  /// Mean PSNR of x_t over every (seed, image) pair, t = 1..T.
  std::vector<double> clone_psnr;
};

struct AblationOptions {
  std::filesystem::path out_dir;
  int jobs = 1;
  /// Progress lines; called under a lock.
  std::function<void(const std::string&)> progress;
};

/// Runs every (arm, seed) job, writing `<out>/<id>/seed<k>.ckpt`, `.log.csv`
/// and `.eval.csv`, then `<out>/summary.csv`.
std::vector<ArmResult> run_ablation(const std::vector<AblationArm>& arms, const std::vector<ImagePair<float>>& train,
                                    const std::vector<ImagePair<float>>& eval, const AblationOptions& options);

/// `config_id,psnr_mean,psnr_sd,ssim_mean,ssim_sd,rmse_mean,rmse_sd,psnr_clone1..K`;
/// K is the largest n_clones, shorter arms leave trailing cells empty.
std::string ablation_summary_csv(const std::vector<ArmResult>& results);

}  // namespace pcn
