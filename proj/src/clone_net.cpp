#include "pcn/clone_net.hpp"

#include "pcn/rng.hpp"

#include <cmath>
#include <cstring>

namespace pcn {

std::string_view to_string(TransferMode m) { return m == TransferMode::image ? "image" : "feature"; }
std::string_view to_string(InputMode m) { return m == InputMode::previous_only ? "previous_only" : "coupled"; }
std::string_view to_string(ResidualMode m) {
  return m == ResidualMode::incremental ? "incremental" : "brute_force";
}
std::string_view to_string(LossMode m) { return m == LossMode::last_only ? "last_only" : "parallel"; }

namespace {

template <typename Mode>
Mode parse_mode(std::string_view s, std::string_view field, Mode a, Mode b) {
  if (s == to_string(a)) return a;
  if (s == to_string(b)) return b;
  throw ConfigError(std::string(field) + ": expected '" + std::string(to_string(a)) + "' or '" +
                    std::string(to_string(b)) + "', got '" + std::string(s) + "'");
}

}  // namespace

TransferMode parse_transfer_mode(std::string_view s) {
  return parse_mode(s, "transfer_mode", TransferMode::image, TransferMode::feature);
}
InputMode parse_input_mode(std::string_view s) {
  return parse_mode(s, "input_mode", InputMode::previous_only, InputMode::coupled);
}
ResidualMode parse_residual_mode(std::string_view s) {
  return parse_mode(s, "residual_mode", ResidualMode::incremental, ResidualMode::brute_force);
}
LossMode parse_loss_mode(std::string_view s) {
  return parse_mode(s, "loss_mode", LossMode::last_only, LossMode::parallel);
}

std::vector<Shortcut> ModuleTopology::symmetric_shortcuts(int n_layers) {
  std::vector<Shortcut> out;
  const int h = n_layers / 2;
  for (int e = 2; e < h; e += 2) out.push_back({e, h - e});
  return out;
}

void ModuleTopology::validate() const {
  if (n_layers < 2 || n_layers % 2 != 0) {
    throw ConfigError("n_layers must be an even positive integer, got " + std::to_string(n_layers));
  }
  if (n_kernels < 1) throw ConfigError("n_kernels must be positive, got " + std::to_string(n_kernels));
  const int h = half();
  for (const Shortcut& s : shortcuts) {
    const std::string pair = std::to_string(s.encoder) + ":" + std::to_string(s.decoder);
    if (s.encoder < 1 || s.encoder > h || s.decoder < 1 || s.decoder > h) {
      throw ConfigError("shortcut " + pair + " is outside the " + std::to_string(h) + "-layer encoder/decoder");
    }
    if (s.encoder + s.decoder != h) {
      throw ConfigError("shortcut " + pair + " joins activations of different spatial size (encoder + decoder must equal " +
                        std::to_string(h) + ")");
    }
  }
}

void CloneNetConfig::validate() const {
  if (n_clones < 1) throw ConfigError("n_clones must be positive, got " + std::to_string(n_clones));
  if (transfer_mode == TransferMode::feature && input_mode != InputMode::coupled) {
    throw ConfigError("transfer_mode=feature requires input_mode=coupled (F_0 from the noisy input is "
                      "concatenated with the transferred features)");
  }
  topology.validate();
}

Index CloneNetConfig::low_level_in_channels() const {
  return transfer_mode == TransferMode::image && input_mode == InputMode::coupled ? 2 : 1;
}

Index CloneNetConfig::module_in_channels() const {
  return transfer_mode == TransferMode::feature ? 2 * Index{topology.n_kernels} : Index{topology.n_kernels};
}

Index CloneNetConfig::min_image_size() const { return 2 * topology.half() + 1 + 2; }

CloneNetConfig CloneNetConfig::sequential(int n_clones, ModuleTopology topology) {
  return {n_clones, TransferMode::image, InputMode::previous_only, ResidualMode::incremental, LossMode::last_only,
          std::move(topology)};
}

CloneNetConfig CloneNetConfig::parallel(int n_clones, ModuleTopology topology) {
  return {n_clones, TransferMode::feature, InputMode::coupled, ResidualMode::brute_force, LossMode::parallel,
          std::move(topology)};
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename Scalar>
ParameterSet<Scalar> ParameterSet<Scalar>::zeros(const CloneNetConfig& config) {
  config.validate();
  const Index k = config.topology.n_kernels;
  const int h = config.topology.half();
  ParameterSet p;
  p.low_level = ConvKernel<Scalar>::conv(k, config.low_level_in_channels());
  p.module_layers.push_back(ConvKernel<Scalar>::conv(k, config.module_in_channels()));
  for (int i = 1; i < h; ++i) p.module_layers.push_back(ConvKernel<Scalar>::conv(k, k));
  for (int i = 0; i < h; ++i) p.module_layers.push_back(ConvKernel<Scalar>::deconv(k, k));
  p.recovery = ConvKernel<Scalar>::deconv(k, 1);
  return p;
}

template <typename Scalar>
ParameterSet<Scalar> ParameterSet<Scalar>::zeros_like() const {
  ParameterSet p;
  p.low_level = low_level.zeros_like();
  for (const auto& l : module_layers) p.module_layers.push_back(l.zeros_like());
  p.recovery = recovery.zeros_like();
  return p;
}

namespace {

template <typename T, typename Kernel>
void push_kernel(std::vector<NamedTensor<T>>& out, const std::string& prefix, Kernel& k) {
  const Shape4& s = k.weights.shape();
  out.push_back({prefix + ".weight", {s.n, s.c, s.h, s.w}, k.weights.data(), k.weights.size()});
  out.push_back({prefix + ".bias", {k.bias.size()}, k.bias.data(), k.bias.size()});
}

}  // namespace

template <typename Scalar>
std::vector<NamedTensor<Scalar>> ParameterSet<Scalar>::tensors() & {
  std::vector<NamedTensor<Scalar>> out;
  push_kernel(out, "low_level", low_level);
  for (std::size_t i = 0; i < module_layers.size(); ++i) push_kernel(out, "module." + std::to_string(i), module_layers[i]);
  push_kernel(out, "recovery", recovery);
  return out;
}

template <typename Scalar>
std::vector<NamedTensor<const Scalar>> ParameterSet<Scalar>::tensors() const& {
  std::vector<NamedTensor<const Scalar>> out;
  push_kernel(out, "low_level", low_level);
  for (std::size_t i = 0; i < module_layers.size(); ++i) push_kernel(out, "module." + std::to_string(i), module_layers[i]);
  push_kernel(out, "recovery", recovery);
  return out;
}

template <typename Scalar>
Index ParameterSet<Scalar>::count() const {
  Index n = 0;
  for (const auto& t : tensors()) n += t.size;
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::set_zero() {
  for (auto& t : tensors()) t.vec().setZero();
}

template <typename Scalar>
std::uint64_t ParameterSet<Scalar>::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data);
    for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(t.size); ++i) {
      h = (h ^ bytes[i]) * 0x100000001b3ull;
    }
  }
  return h;
}

template <typename Scalar>
template <typename To>
ParameterSet<To> ParameterSet<Scalar>::cast() const {
  auto conv = [](const ConvKernel<Scalar>& k) {
    return ConvKernel<To>{k.weights.template cast<To>(), k.bias.template cast<To>()};
  };
  ParameterSet<To> p;
  p.low_level = conv(low_level);
  for (const auto& l : module_layers) p.module_layers.push_back(conv(l));
  p.recovery = conv(recovery);
  return p;
}

template <typename Scalar>
ParameterSet<Scalar> init_parameters(const CloneNetConfig& config, std::uint64_t seed) {
  ParameterSet<Scalar> p = ParameterSet<Scalar>::zeros(config);
  Rng rng(derive_seed(seed, 0x1417));
  auto fill = [&](ConvKernel<Scalar>& k, Index fan_in) {
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < k.weights.size(); ++i) k.weights.data()[i] = static_cast<Scalar>(rng.uniform(-a, a));
  };
  // Conv weights are (out, in, 3, 3); deconv weights are (in, out, 3, 3). Either way
  // the fan-in is the number of input channels times the nine taps.
  const int h = config.topology.half();
  fill(p.low_level, p.low_level.weights.shape().c * kKernelTaps);
  for (int i = 0; i < 2 * h; ++i) {
    auto& k = p.module_layers[i];
    fill(k, (i < h ? k.weights.shape().c : k.weights.shape().n) * kKernelTaps);
  }
  fill(p.recovery, p.recovery.weights.shape().n * kKernelTaps);
  return p;
}

template <typename Scalar>
void check_parameters(const CloneNetConfig& config, const ParameterSet<Scalar>& params) {
  const ParameterSet<Scalar> expected = ParameterSet<Scalar>::zeros(config);
  const auto want = expected.tensors();
  const auto got = params.tensors();
  if (want.size() != got.size()) {
    throw ShapeError("parameter set has " + std::to_string(got.size()) + " tensors, config requires " +
                     std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].dims != got[i].dims) {
      auto str = [](const std::vector<Index>& d) {
        std::string s = "(";
        for (std::size_t j = 0; j < d.size(); ++j) s += (j ? "," : "") + std::to_string(d[j]);
        return s + ")";
      };
      throw ShapeError("parameter " + want[i].name + " has dims " + str(got[i].dims) + ", config requires " +
                       str(want[i].dims));
    }
  }
}

// ---------------------------------------------------------------------------
// Forward

template <typename Scalar>
Grid4<Scalar> extract_low_features(const Grid4<Scalar>& y, const ConvKernel<Scalar>& kernel) {
  if (y.shape().c != kernel.weights.shape().c) {
    throw ShapeError("extract_low_features: input " + y.shape().str() + " has " + std::to_string(y.shape().c) +
                     " channels, low-level kernel " + kernel.weights.shape().str() + " expects " +
                     std::to_string(kernel.weights.shape().c));
  }
  return relu_forward(conv2d_forward(y, kernel));
}

template <typename Scalar>
Grid4<Scalar> module_forward(const Grid4<Scalar>& input, const std::vector<ConvKernel<Scalar>>& layers,
                             const ModuleTopology& topology, ModuleActivations<Scalar>* activations) {
  const int h = topology.half();
  if (static_cast<int>(layers.size()) != 2 * h) {
    throw ShapeError("module_forward: " + std::to_string(layers.size()) + " layers for an " +
                     std::to_string(topology.n_layers) + "-layer topology");
  }
  const Index min_side = 2 * h + 1;
  if (input.shape().h < min_side || input.shape().w < min_side) {
    throw ShapeError("module_forward: input " + input.shape().str() + " too small; an " +
                     std::to_string(topology.n_layers) + "-layer module needs at least " + std::to_string(min_side) +
                     "x" + std::to_string(min_side));
  }

  ModuleActivations<Scalar> local;
  ModuleActivations<Scalar>& acts = activations ? *activations : local;
  acts.encoder.clear();
  acts.decoder.clear();

  const Grid4<Scalar>* current = &input;
  for (int i = 0; i < h; ++i) {
    acts.encoder.push_back(relu_forward(conv2d_forward(*current, layers[i])));
    current = &acts.encoder.back();
  }
  Grid4<Scalar> x = acts.encoder.back();
  for (int j = 1; j <= h; ++j) {
    Grid4<Scalar> s = deconv2d_forward(x, layers[h + j - 1]);
    for (const Shortcut& sc : topology.shortcuts) {
      if (sc.decoder == j) s.vec() += acts.encoder[sc.encoder - 1].vec();
    }
    x = relu_forward(s);
    if (activations) acts.decoder.push_back(x);
  }
  return x;
}

template <typename Scalar>
Grid4<Scalar> recover_image(const Grid4<Scalar>& features, const Grid4<Scalar>& anchor,
                            const ConvKernel<Scalar>& kernel, Grid4<Scalar>* pre_activation) {
  Grid4<Scalar> sum = deconv2d_forward(features, kernel);
  if (sum.shape() != anchor.shape()) {
    throw ShapeError("recover_image: residual " + sum.shape().str() + " does not match anchor " +
                     anchor.shape().str());
  }
  sum.vec() += anchor.vec();
  Grid4<Scalar> x = relu_forward(sum);
  if (pre_activation) *pre_activation = std::move(sum);
  return x;
}

namespace {

template <typename Scalar>
void check_input(const Grid4<Scalar>& y, const CloneNetConfig& config) {
  const Shape4& s = y.shape();
  if (s.c != 1) throw ShapeError("network input must have one channel, got " + s.str());
  const Index min_side = config.min_image_size();
  if (s.h < min_side || s.w < min_side) {
    throw ShapeError("image " + s.str() + " too small for a " + std::to_string(config.topology.n_layers) +
                     "-layer clone: minimum size is " + std::to_string(min_side) + "x" + std::to_string(min_side) +
                     " (2*(n_layers/2)+1 plus 2 for recovery)");
  }
}

// Shared by network_forward (trace != nullptr) and denoise.
template <typename Scalar>
std::vector<Grid4<Scalar>> run_clones(const Grid4<Scalar>& y, const CloneNetConfig& config,
                                      const ParameterSet<Scalar>& params, ForwardTrace<Scalar>* trace,
                                      bool keep_all_outputs) {
  config.validate();
  check_parameters(config, params);
  check_input(y, config);

  const bool feature = config.transfer_mode == TransferMode::feature;
  const bool coupled = config.input_mode == InputMode::coupled;
  const bool brute = config.residual_mode == ResidualMode::brute_force;

  if (trace) {
    trace->config = config;
    trace->params_fingerprint = params.fingerprint();
    trace->y = y;
    trace->clones.assign(config.n_clones, {});
  }

  Grid4<Scalar> f0;
  if (feature) f0 = extract_low_features(y, params.low_level);

  std::vector<Grid4<Scalar>> outputs;
  Grid4<Scalar> prev_x = y;        // x_{t-1}, x_0 = y
  Grid4<Scalar> prev_features;     // F_{t-1} in feature mode
  for (int t = 0; t < config.n_clones; ++t) {
    CloneTrace<Scalar> local;
    CloneTrace<Scalar>& ct = trace ? trace->clones[t] : local;

    Grid4<Scalar> module_in;
    if (feature) {
      module_in = concat_channels(f0, t == 0 ? f0 : prev_features);
    } else {
      Grid4<Scalar> low_in = coupled ? concat_channels(y, prev_x) : prev_x;
      module_in = extract_low_features(low_in, params.low_level);
      if (trace) {
        ct.low_input = std::move(low_in);
        ct.low_features = module_in;
      }
    }

    Grid4<Scalar> features = module_forward(module_in, params.module_layers, config.topology,
                                            trace ? &ct.module : nullptr);
    if (trace) ct.module_input = std::move(module_in);

    Grid4<Scalar> x = recover_image(features, brute ? y : prev_x, params.recovery,
                                    trace ? &ct.recovery_sum : nullptr);
    if (trace) ct.output = x;
    if (keep_all_outputs || t + 1 == config.n_clones) outputs.push_back(x);
    prev_x = std::move(x);
    if (feature) prev_features = std::move(features);
  }
  if (trace) trace->f0 = std::move(f0);
  return outputs;
}

template <typename Scalar>
void add_to(ConvKernel<Scalar>& acc, const ConvGrads<Scalar>& g) {
  acc.weights.vec() += g.weights.vec();
  acc.bias += g.bias;
}

template <typename Scalar>
void add_grid(Grid4<Scalar>& acc, const Grid4<Scalar>& g) {
  if (acc.empty()) {
    acc = g;
  } else {
    acc.vec() += g.vec();
  }
}

// Reverse of module_forward. Returns dL/d(module input).
template <typename Scalar>
Grid4<Scalar> module_backward(Grid4<Scalar> grad, const Grid4<Scalar>& input, const ModuleActivations<Scalar>& acts,
                              const ParameterSet<Scalar>& params, const ModuleTopology& topology,
                              ParameterGradients<Scalar>& grads) {
  const int h = topology.half();
  std::vector<Grid4<Scalar>> grad_encoder(h);
  for (int j = h; j >= 1; --j) {
    relu_mask_inplace(grad, acts.decoder[j - 1]);
    for (const Shortcut& sc : topology.shortcuts) {
      if (sc.decoder == j) add_grid(grad_encoder[sc.encoder - 1], grad);
    }
    const Grid4<Scalar>& layer_in = j == 1 ? acts.encoder[h - 1] : acts.decoder[j - 2];
    ConvGrads<Scalar> g = deconv2d_backward(grad, layer_in, params.module_layers[h + j - 1]);
    add_to(grads.module_layers[h + j - 1], g);
    grad = std::move(g.input);
  }
  for (int i = h; i >= 1; --i) {
    if (!grad_encoder[i - 1].empty()) grad.vec() += grad_encoder[i - 1].vec();
    relu_mask_inplace(grad, acts.encoder[i - 1]);
    const Grid4<Scalar>& layer_in = i == 1 ? input : acts.encoder[i - 2];
    ConvGrads<Scalar> g = conv2d_backward(grad, layer_in, params.module_layers[i - 1]);
    add_to(grads.module_layers[i - 1], g);
    grad = std::move(g.input);
  }
  return grad;
}

}  // namespace

template <typename Scalar>
NetworkOutput<Scalar> network_forward(const Grid4<Scalar>& y, const CloneNetConfig& config,
                                      const ParameterSet<Scalar>& params) {
  NetworkOutput<Scalar> out;
  out.outputs = run_clones(y, config, params, &out.trace, true);
  return out;
}

template <typename Scalar>
NetworkLoss<Scalar> network_loss(const std::vector<Grid4<Scalar>>& outputs, const Grid4<Scalar>& z,
                                 LossMode mode) {
  if (outputs.empty()) throw ShapeError("network_loss: no clone outputs");
  const std::size_t T = outputs.size();
  NetworkLoss<Scalar> out;
  double sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    LossValue<Scalar> lv = mse_loss(outputs[t], z);
    out.clone_mse.push_back(lv.loss);
    if (mode == LossMode::parallel) {
      sum += lv.loss;
      lv.grad.vec() /= static_cast<Scalar>(T);
    } else if (t + 1 != T) {
      lv.grad.set_zero();
    }
    out.output_grads.push_back(std::move(lv.grad));
  }
  out.loss = mode == LossMode::parallel ? sum / static_cast<double>(T) : out.clone_mse.back();
  return out;
}

template <typename Scalar>
ParameterGradients<Scalar> network_backward(const ForwardTrace<Scalar>& trace,
                                             const std::vector<Grid4<Scalar>>& output_grads,
                                             const ParameterSet<Scalar>& params) {
  const CloneNetConfig& config = trace.config;
  const int T = config.n_clones;
  if (static_cast<int>(trace.clones.size()) != T || trace.clones.empty()) {
    throw std::invalid_argument("network_backward: trace holds no forward pass for this config");
  }
  if (trace.params_fingerprint != params.fingerprint()) {
    throw std::invalid_argument("network_backward: stale trace (parameters changed since the forward pass)");
  }
  if (static_cast<int>(output_grads.size()) != T) {
    throw ShapeError("network_backward: " + std::to_string(output_grads.size()) + " output gradients for " +
                     std::to_string(T) + " clones");
  }
  for (int t = 0; t < T; ++t) {
    if (output_grads[t].shape() != trace.clones[t].output.shape()) {
      throw ShapeError("network_backward: gradient " + output_grads[t].shape().str() + " for clone " +
                       std::to_string(t + 1) + " output " + trace.clones[t].output.shape().str());
    }
  }

  const bool feature = config.transfer_mode == TransferMode::feature;
  const bool coupled = config.input_mode == InputMode::coupled;
  const bool incremental = config.residual_mode == ResidualMode::incremental;
  const Index k = config.topology.n_kernels;

  ParameterGradients<Scalar> grads = params.zeros_like();
  std::vector<Grid4<Scalar>> grad_x(output_grads.begin(), output_grads.end());
  std::vector<Grid4<Scalar>> grad_transfer(T);  // feature mode: dL/dF_t via clone t+1
  Grid4<Scalar> grad_f0;

  for (int t = T - 1; t >= 0; --t) {
    const CloneTrace<Scalar>& ct = trace.clones[t];
    Grid4<Scalar> grad_sum = std::move(grad_x[t]);
    relu_mask_inplace(grad_sum, ct.output);
    if (incremental && t > 0) add_grid(grad_x[t - 1], grad_sum);

    const Grid4<Scalar>& features = ct.module.decoder.back();
    ConvGrads<Scalar> rg = deconv2d_backward(grad_sum, features, params.recovery);
    add_to(grads.recovery, rg);
    Grid4<Scalar> grad_features = std::move(rg.input);
    if (!grad_transfer[t].empty()) grad_features.vec() += grad_transfer[t].vec();

    Grid4<Scalar> grad_in =
        module_backward(std::move(grad_features), ct.module_input, ct.module, params, config.topology, grads);

    if (feature) {
      auto [grad_low, grad_prev] = split_channels(grad_in, k);
      add_grid(grad_f0, grad_low);
      if (t > 0) {
        grad_transfer[t - 1] = std::move(grad_prev);
      } else {
        grad_f0.vec() += grad_prev.vec();
      }
    } else {
      relu_mask_inplace(grad_in, ct.low_features);
      ConvGrads<Scalar> lg = conv2d_backward(grad_in, ct.low_input, params.low_level);
      add_to(grads.low_level, lg);
      if (t > 0) {
        if (coupled) {
          add_grid(grad_x[t - 1], split_channels(lg.input, 1).second);
        } else {
          add_grid(grad_x[t - 1], lg.input);
        }
      }
    }
  }

  if (feature) {
    relu_mask_inplace(grad_f0, trace.f0);
    add_to(grads.low_level, conv2d_backward(grad_f0, trace.y, params.low_level));
  }
  return grads;
}

template <typename Scalar>
std::vector<Grid4<Scalar>> denoise(const Grid4<Scalar>& y, const CloneNetConfig& config,
                                   const ParameterSet<Scalar>& params, bool all_clones) {
  return run_clones<Scalar>(y, config, params, nullptr, all_clones);
}

#define PCN_INSTANTIATE_CLONE_NET(S)                                                                          \
  template struct ParameterSet<S>;                                                                            \
  template ParameterSet<S> init_parameters(const CloneNetConfig&, std::uint64_t);                             \
  template void check_parameters(const CloneNetConfig&, const ParameterSet<S>&);                              \
  template Grid4<S> extract_low_features(const Grid4<S>&, const ConvKernel<S>&);                              \
  template Grid4<S> module_forward(const Grid4<S>&, const std::vector<ConvKernel<S>>&, const ModuleTopology&, \
                                   ModuleActivations<S>*);                                                    \
  template Grid4<S> recover_image(const Grid4<S>&, const Grid4<S>&, const ConvKernel<S>&, Grid4<S>*);         \
  template NetworkOutput<S> network_forward(const Grid4<S>&, const CloneNetConfig&, const ParameterSet<S>&);  \
  template NetworkLoss<S> network_loss(const std::vector<Grid4<S>>&, const Grid4<S>&, LossMode);              \
  template ParameterGradients<S> network_backward(const ForwardTrace<S>&, const std::vector<Grid4<S>>&,      \
                                                  const ParameterSet<S>&);                                    \
  template std::vector<Grid4<S>> denoise(const Grid4<S>&, const CloneNetConfig&, const ParameterSet<S>&, bool);

PCN_INSTANTIATE_CLONE_NET(float)
PCN_INSTANTIATE_CLONE_NET(double)

template ParameterSet<double> ParameterSet<float>::cast<double>() const;
template ParameterSet<float> ParameterSet<double>::cast<float>() const;
template ParameterSet<float> ParameterSet<float>::cast<float>() const;
template ParameterSet<double> ParameterSet<double>::cast<double>() const;

}  // namespace pcn
