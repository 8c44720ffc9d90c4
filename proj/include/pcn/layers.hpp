#pragma once

// Forward and backward kernels for the layer primitives of the clone networks.
// Every convolution is 3x3, stride 1, unpadded. conv2d uses cross-correlation;
// deconv2d is defined as its exact adjoint, so both share one weight layout.

#include "pcn/grid4.hpp"

#include <utility>

namespace pcn {

inline constexpr Index kKernelSize = 3;
inline constexpr Index kKernelTaps = kKernelSize * kKernelSize;

/// 3x3 kernel bank.
///
/// Used by conv2d the weights are (out, in, 3, 3) and bias has length out.
/// Used by deconv2d the same array is read as (in, out, 3, 3), i.e. the layout
/// of the convolution it is the adjoint of, and bias has length out = dims[1].
template <typename Scalar>
struct ConvKernel {
  Grid4<Scalar> weights;
  Vector<Scalar> bias;

  static ConvKernel conv(Index out_channels, Index in_channels) {
    return {Grid4<Scalar>(Shape4{out_channels, in_channels, kKernelSize, kKernelSize}),
            Vector<Scalar>::Zero(out_channels)};
  }
  static ConvKernel deconv(Index in_channels, Index out_channels) {
    return {Grid4<Scalar>(Shape4{in_channels, out_channels, kKernelSize, kKernelSize}),
            Vector<Scalar>::Zero(out_channels)};
  }

  void set_zero() {
    weights.set_zero();
    bias.setZero();
  }
  ConvKernel zeros_like() const { return {Grid4<Scalar>(weights.shape()), Vector<Scalar>::Zero(bias.size())}; }
};

template <typename Scalar>
struct ConvGrads {
  Grid4<Scalar> input;
  Grid4<Scalar> weights;
  Vector<Scalar> bias;
};

template <typename Scalar>
struct LossValue {
  double loss = 0.0;
  Grid4<Scalar> grad;
};

/// (n,c,h,w) -> (n,k,h-2,w-2).
template <typename Scalar>
Grid4<Scalar> conv2d_forward(const Grid4<Scalar>& input, const ConvKernel<Scalar>& kernel);

/// Gradients of a scalar loss through conv2d_forward given dL/d(out).
/// grad_weights and grad_bias are summed over the batch.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Grid4<Scalar>& grad_out, const Grid4<Scalar>& input,
                                  const ConvKernel<Scalar>& kernel);

/// (n,c,h,w) -> (n,k,h+2,w+2); <conv(x;w), u> = <x, deconv(u;w)> with zero bias.
template <typename Scalar>
Grid4<Scalar> deconv2d_forward(const Grid4<Scalar>& input, const ConvKernel<Scalar>& kernel);

template <typename Scalar>
ConvGrads<Scalar> deconv2d_backward(const Grid4<Scalar>& grad_out, const Grid4<Scalar>& input,
                                    const ConvKernel<Scalar>& kernel);

template <typename Scalar>
Grid4<Scalar> relu_forward(const Grid4<Scalar>& input);

/// Subgradient at exactly zero is 0. Passing the ReLU output instead of its input
/// gives the same mask.
template <typename Scalar>
Grid4<Scalar> relu_backward(const Grid4<Scalar>& grad_out, const Grid4<Scalar>& input);

/// In-place variant: grad <- grad * [activation > 0].
template <typename Scalar>
void relu_mask_inplace(Grid4<Scalar>& grad, const Grid4<Scalar>& activation);

template <typename Scalar>
Grid4<Scalar> concat_channels(const Grid4<Scalar>& a, const Grid4<Scalar>& b);

/// Inverse of concat_channels: the first `first_channels` channels, then the rest.
template <typename Scalar>
std::pair<Grid4<Scalar>, Grid4<Scalar>> split_channels(const Grid4<Scalar>& g, Index first_channels);

/// Per-element mean squared error and its gradient 2(pred-target)/N.
template <typename Scalar>
LossValue<Scalar> mse_loss(const Grid4<Scalar>& pred, const Grid4<Scalar>& target);

}  // namespace pcn
