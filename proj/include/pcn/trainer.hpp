#pragma once

#include "pcn/clone_net.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcn {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  ParameterSet<Scalar> m;
  ParameterSet<Scalar> v;
  std::int64_t step = 0;

  static AdamState fresh(const ParameterSet<Scalar>& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

struct TrainConfig {
  int batch_size = 128;
  int n_epochs = 60;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  std::uint64_t seed = 0;
  /// When false the wall_seconds column is written as 0 so logs are reproducible byte for byte.
  bool record_wall_time = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_rmse = 0.0;
  double wall_seconds = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Per-epoch convergence log; CSV `epoch,lr,train_rmse,wall_seconds`.
struct ConvergenceLog {
  std::vector<EpochRecord> rows;

  std::string to_csv() const;
  static ConvergenceLog from_csv(const std::string& text);
  friend bool operator==(const ConvergenceLog&, const ConvergenceLog&) = default;
};

/// Stacked training patches, both (N, 1, p, p).
template <typename Scalar>
struct PatchDataset {
  Grid4<Scalar> low;
  Grid4<Scalar> normal;

  Index size() const { return low.shape().n; }
};

/// Everything needed to continue training exactly where it stopped.
template <typename Scalar>
struct TrainState {
  ParameterSet<Scalar> params;
  AdamState<Scalar> adam;
  int epochs_done = 0;
  ConvergenceLog log;

  static TrainState start(ParameterSet<Scalar> params) {
    AdamState<Scalar> adam = AdamState<Scalar>::fresh(params);
    return {std::move(params), std::move(adam), 0, {}};
  }
};

/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; theta -= lr mhat / (sqrt(vhat) + eps).
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const ParameterGradients<Scalar>& grads, AdamState<Scalar>& state,
               double lr);

/// Geometric decay from lr_initial at epoch 0 to lr_final at epoch n_epochs-1.
double lr_schedule(int epoch, const TrainConfig& config);

/// RMSE of x_T against the normal-dose patches, evaluated in chunks of `chunk`.
template <typename Scalar>
double evaluate_rmse(const CloneNetConfig& config, const ParameterSet<Scalar>& params,
                     const PatchDataset<Scalar>& data, Index chunk = 128);

/// Called after each finished epoch with the updated state.
template <typename Scalar>
using EpochCallback = std::function<void(const TrainState<Scalar>&)>;

/// Runs epochs state.epochs_done .. min(n_epochs, stop_after)-1. Each epoch
/// shuffles with a seed derived from (seed, epoch), steps Adam once per full
/// mini-batch, then logs the training RMSE of the updated parameters.
template <typename Scalar>
TrainState<Scalar> train(const CloneNetConfig& config, TrainState<Scalar> state, const PatchDataset<Scalar>& data,
                         const TrainConfig& train_config, std::optional<int> stop_after = std::nullopt,
                         const EpochCallback<Scalar>& on_epoch = {});

}  // namespace pcn
