#pragma once

// Configurable clone-network family: one weight-shared clone (low-level feature
// extraction, encoder/decoder CNN module, residual image recovery) unrolled T
// times. The four mode axes select anything from a sequential-clone chain to
// the full parallel-clone network.

#include "pcn/grid4.hpp"
#include "pcn/layers.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace pcn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// What one clone hands to the next: its output image or its high-level features.
enum class TransferMode { image, feature };
/// Whether each clone also sees the noisy input y.
enum class InputMode { previous_only, coupled };
/// Recovery anchor: x_{t-1} (incremental) or y (brute_force).
enum class ResidualMode { incremental, brute_force };
/// Loss on x_T only, or the mean over all clone outputs.
enum class LossMode { last_only, parallel };

std::string_view to_string(TransferMode m);
std::string_view to_string(InputMode m);
std::string_view to_string(ResidualMode m);
std::string_view to_string(LossMode m);
TransferMode parse_transfer_mode(std::string_view s);
InputMode parse_input_mode(std::string_view s);
ResidualMode parse_residual_mode(std::string_view s);
LossMode parse_loss_mode(std::string_view s);

/// Additive skip from encoder layer `encoder` (post-ReLU) into decoder layer
/// `decoder` (before its ReLU). Both indices are 1-based within their half.
struct Shortcut {
  int encoder = 0;
  int decoder = 0;
  friend bool operator==(const Shortcut&, const Shortcut&) = default;
};

struct ModuleTopology {
  int n_layers = 10;
  int n_kernels = 48;
  std::vector<Shortcut> shortcuts = symmetric_shortcuts(10);

  int half() const { return n_layers / 2; }

  /// Every-second-layer symmetric pairing: encoder i (even, i < half) feeds
  /// decoder half - i, the only decoder layer with matching spatial size.
  static std::vector<Shortcut> symmetric_shortcuts(int n_layers);

  void validate() const;
  friend bool operator==(const ModuleTopology&, const ModuleTopology&) = default;
};

struct CloneNetConfig {
  int n_clones = 4;
  TransferMode transfer_mode = TransferMode::feature;
  InputMode input_mode = InputMode::coupled;
  ResidualMode residual_mode = ResidualMode::brute_force;
  LossMode loss_mode = LossMode::parallel;
  ModuleTopology topology;

  /// Throws ConfigError naming the offending field or combination.
  void validate() const;

  Index low_level_in_channels() const;
  Index module_in_channels() const;
  /// Smallest admissible image side: one pixel must survive the low-level
  /// convolution and every encoder convolution.
  Index min_image_size() const;

  static CloneNetConfig sequential(int n_clones, ModuleTopology topology = {});
  static CloneNetConfig parallel(int n_clones, ModuleTopology topology = {});

  friend bool operator==(const CloneNetConfig&, const CloneNetConfig&) = default;
};

/// Read-only view of one named parameter tensor.
template <typename Scalar>
struct NamedTensor {
  std::string name;
  std::vector<Index> dims;
  Scalar* data = nullptr;
  Index size = 0;

  using VecType = std::conditional_t<std::is_const_v<Scalar>, const Vector<std::remove_const_t<Scalar>>,
                                     Vector<Scalar>>;
  Eigen::Map<VecType> vec() const { return {data, size}; }
};

/// The one parameter set shared by every clone.
template <typename Scalar>
struct ParameterSet {
  ConvKernel<Scalar> low_level;
  /// half() convolutions (out, in, 3, 3) then half() deconvolutions (in, out, 3, 3).
  std::vector<ConvKernel<Scalar>> module_layers;
  /// Deconvolution n_kernels -> 1.
  ConvKernel<Scalar> recovery;

  static ParameterSet zeros(const CloneNetConfig& config);
  ParameterSet zeros_like() const;

  /// Views in fixed order: low_level, module.0 .. module.{L-1}, recovery; weight
  /// before bias. Not available on temporaries.
  std::vector<NamedTensor<Scalar>> tensors() &;
  std::vector<NamedTensor<const Scalar>> tensors() const&;
  void tensors() && = delete;

  Index count() const;
  void set_zero();
  /// Byte hash of all values; used to detect traces made with different parameters.
  std::uint64_t fingerprint() const;

  template <typename To>
  ParameterSet<To> cast() const;
};

template <typename Scalar>
using ParameterGradients = ParameterSet<Scalar>;

/// Seeded zero-mean uniform init with half-width sqrt(1/fan_in); zero biases.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const CloneNetConfig& config, std::uint64_t seed);

/// Throws ShapeError if any tensor disagrees with the config.
template <typename Scalar>
void check_parameters(const CloneNetConfig& config, const ParameterSet<Scalar>& params);

template <typename Scalar>
struct ModuleActivations {
  std::vector<Grid4<Scalar>> encoder;  // post-ReLU, one per conv layer
  std::vector<Grid4<Scalar>> decoder;  // post-ReLU, one per deconv layer; back() is F_t
};

template <typename Scalar>
struct CloneTrace {
  Grid4<Scalar> low_input;     // image mode: x_{t-1} or Cat(y, x_{t-1})
  Grid4<Scalar> low_features;  // image mode: F_l(low_input)
  Grid4<Scalar> module_input;  // F_t^in
  ModuleActivations<Scalar> module;
  Grid4<Scalar> recovery_sum;  // anchor + Deconv(F_t), before the ReLU
  Grid4<Scalar> output;        // x_t
};

template <typename Scalar>
struct ForwardTrace {
  CloneNetConfig config;
  std::uint64_t params_fingerprint = 0;
  Grid4<Scalar> y;
  Grid4<Scalar> f0;  // feature mode: F_l(y), shared by all clones
  std::vector<CloneTrace<Scalar>> clones;
};

template <typename Scalar>
struct NetworkOutput {
  std::vector<Grid4<Scalar>> outputs;  // x_1 .. x_T
  ForwardTrace<Scalar> trace;
};

template <typename Scalar>
struct NetworkLoss {
  double loss = 0.0;
  std::vector<double> clone_mse;            // MSE(x_t, z) for every clone
  std::vector<Grid4<Scalar>> output_grads;  // dL/dx_t
};

/// F_0 = ReLU(Conv(y)).
template <typename Scalar>
Grid4<Scalar> extract_low_features(const Grid4<Scalar>& y, const ConvKernel<Scalar>& kernel);

/// Encoder (conv+ReLU) x half, then decoder (deconv + shortcuts, ReLU) x half.
/// Output has the input's spatial size and n_kernels channels.
template <typename Scalar>
Grid4<Scalar> module_forward(const Grid4<Scalar>& input, const std::vector<ConvKernel<Scalar>>& layers,
                             const ModuleTopology& topology, ModuleActivations<Scalar>* activations = nullptr);

/// x_t = ReLU(anchor + Deconv(F_t)).
template <typename Scalar>
Grid4<Scalar> recover_image(const Grid4<Scalar>& features, const Grid4<Scalar>& anchor,
                            const ConvKernel<Scalar>& kernel, Grid4<Scalar>* pre_activation = nullptr);

template <typename Scalar>
NetworkOutput<Scalar> network_forward(const Grid4<Scalar>& y, const CloneNetConfig& config,
                                      const ParameterSet<Scalar>& params);

template <typename Scalar>
NetworkLoss<Scalar> network_loss(const std::vector<Grid4<Scalar>>& outputs, const Grid4<Scalar>& z,
                                 LossMode mode);

/// Reverse pass through the whole unrolled network; gradients of all clones
/// accumulate into the one shared parameter set.
template <typename Scalar>
ParameterGradients<Scalar> network_backward(const ForwardTrace<Scalar>& trace,
                                             const std::vector<Grid4<Scalar>>& output_grads,
                                             const ParameterSet<Scalar>& params);

/// Fully convolutional inference on whole images. Returns [x_T], or x_1..x_T
/// when all_clones is set. Keeps no trace.
template <typename Scalar>
std::vector<Grid4<Scalar>> denoise(const Grid4<Scalar>& y, const CloneNetConfig& config,
                                   const ParameterSet<Scalar>& params, bool all_clones = false);

}  // namespace pcn
