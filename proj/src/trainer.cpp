#include "pcn/trainer.hpp"

#include "pcn/data.hpp"
#include "pcn/text.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace pcn {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1, got " + std::to_string(batch_size));
  if (n_epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(n_epochs));
  if (!(lr_initial > 0.0) || !(lr_final > 0.0)) throw ConfigError("learning rates must be positive");
  if (lr_final > lr_initial) throw ConfigError("lr_final must not exceed lr_initial");
}

std::string ConvergenceLog::to_csv() const {
  std::string out = "epoch,lr,train_rmse,wall_seconds\n";
  for (const EpochRecord& r : rows) {
    out += std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.train_rmse) + "," +
           format_double(r.wall_seconds) + "\n";
  }
  return out;
}

ConvergenceLog ConvergenceLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_rmse,wall_seconds") {
    throw std::invalid_argument("convergence log: missing or unexpected header");
  }
  ConvergenceLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string_view v(line);
    std::string_view fields[4];
    for (int i = 0; i < 4; ++i) {
      const auto comma = v.find(',');
      if ((i < 3) == (comma == std::string_view::npos)) throw std::invalid_argument("convergence log: bad row '" + line + "'");
      fields[i] = v.substr(0, comma);
      v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
    }
    log.rows.push_back({parse_int<int>(fields[0], "epoch"), parse_double(fields[1], "lr"),
                        parse_double(fields[2], "train_rmse"), parse_double(fields[3], "wall_seconds")});
  }
  return log;
}

template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const ParameterGradients<Scalar>& grads, AdamState<Scalar>& state,
               double lr) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sets differ in tensor count");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].dims != g[i].dims || p[i].dims != m[i].dims || p[i].dims != v[i].dims) {
      throw ShapeError("adam_step: shape mismatch for " + p[i].name);
    }
  }

  ++state.step;
  using S = AdamState<Scalar>;
  const Scalar b1 = static_cast<Scalar>(S::beta1), b2 = static_cast<Scalar>(S::beta2);
  const Scalar bc1 = static_cast<Scalar>(1.0 - std::pow(S::beta1, static_cast<double>(state.step)));
  const Scalar bc2 = static_cast<Scalar>(1.0 - std::pow(S::beta2, static_cast<double>(state.step)));
  const Scalar eps = static_cast<Scalar>(S::epsilon);
  const Scalar rate = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto gi = g[i].vec().array();
    auto mi = m[i].vec().array();
    auto vi = v[i].vec().array();
    mi = b1 * mi + (Scalar(1) - b1) * gi;
    vi = b2 * vi + (Scalar(1) - b2) * gi.square();
    p[i].vec().array() -= rate * (mi / bc1) / ((vi / bc2).sqrt() + eps);
  }
}

double lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.n_epochs) {
    throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(config.n_epochs) + ")");
  }
  if (config.n_epochs == 1) return config.lr_initial;
  const double frac = static_cast<double>(epoch) / static_cast<double>(config.n_epochs - 1);
  return config.lr_initial * std::pow(config.lr_final / config.lr_initial, frac);
}

template <typename Scalar>
double evaluate_rmse(const CloneNetConfig& config, const ParameterSet<Scalar>& params,
                     const PatchDataset<Scalar>& data, Index chunk) {
  const Index n = data.size();
  if (n == 0) throw ConfigError("evaluate_rmse: empty dataset");
  double sum = 0.0;
  for (Index first = 0; first < n; first += chunk) {
    const Index count = std::min(chunk, n - first);
    const Grid4<Scalar> y = batch_slice(data.low, first, count);
    const Grid4<Scalar> z = batch_slice(data.normal, first, count);
    const Grid4<Scalar> x = denoise(y, config, params).back();
    sum += (x.vec() - z.vec()).template cast<double>().squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(data.low.size()));
}

template <typename Scalar>
TrainState<Scalar> train(const CloneNetConfig& config, TrainState<Scalar> state, const PatchDataset<Scalar>& data,
                         const TrainConfig& train_config, std::optional<int> stop_after,
                         const EpochCallback<Scalar>& on_epoch) {
  config.validate();
  train_config.validate();
  check_parameters(config, state.params);
  if (data.low.shape() != data.normal.shape()) {
    throw ShapeError("training data: low-dose " + data.low.shape().str() + " vs normal-dose " +
                     data.normal.shape().str());
  }
  if (data.size() < train_config.batch_size) {
    throw ConfigError("batch_size " + std::to_string(train_config.batch_size) + " exceeds the " +
                      std::to_string(data.size()) + " training patches");
  }

  const BatchIterator batches(data.size(), train_config.batch_size, train_config.seed);
  const int last = stop_after ? std::min(*stop_after, train_config.n_epochs) : train_config.n_epochs;
  for (int epoch = state.epochs_done; epoch < last; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, train_config);
    const auto order = batches.epoch(epoch);
    for (std::size_t b = 0; b < order.size(); ++b) {
      const Grid4<Scalar> y = gather(data.low, std::span<const Index>(order[b]));
      const Grid4<Scalar> z = gather(data.normal, std::span<const Index>(order[b]));
      NetworkOutput<Scalar> fwd = network_forward(y, config, state.params);
      NetworkLoss<Scalar> loss = network_loss(fwd.outputs, z, config.loss_mode);
      if (!std::isfinite(loss.loss)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch index " +
                            std::to_string(b));
      }
      const ParameterGradients<Scalar> grads = network_backward(fwd.trace, loss.output_grads, state.params);
      adam_step(state.params, grads, state.adam, lr);
    }
    const double rmse = evaluate_rmse(config, state.params, data, train_config.batch_size);
    const double wall =
        train_config.record_wall_time
            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
            : 0.0;
    state.log.rows.push_back({epoch, lr, rmse, wall});
    state.epochs_done = epoch + 1;
    if (on_epoch) on_epoch(state);
  }
  return state;
}

#define PCN_INSTANTIATE_TRAINER(S)                                                                               \
  template void adam_step(ParameterSet<S>&, const ParameterGradients<S>&, AdamState<S>&, double);                \
  template double evaluate_rmse(const CloneNetConfig&, const ParameterSet<S>&, const PatchDataset<S>&, Index);  \
  template TrainState<S> train(const CloneNetConfig&, TrainState<S>, const PatchDataset<S>&, const TrainConfig&, \
                               std::optional<int>, const EpochCallback<S>&);

PCN_INSTANTIATE_TRAINER(float)
PCN_INSTANTIATE_TRAINER(double)

}  // namespace pcn
