#include "pcn/layers.hpp"

#include <algorithm>
#include <cstring>

namespace pcn {
namespace {

// Unfolds one (c,h,w) image into a (c*9) x ((h-2)*(w-2)) patch matrix.
// Row c*9 + di*3 + dj holds input[c, i+di, j+dj] at column i*(w-2) + j.
template <typename Scalar>
void im2col(const Scalar* image, Index channels, Index h, Index w, RowMatrix<Scalar>& cols) {
  const Index oh = h - 2, ow = w - 2;
  cols.resize(channels * kKernelTaps, oh * ow);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = image + c * h * w;
    for (Index di = 0; di < kKernelSize; ++di) {
      for (Index dj = 0; dj < kKernelSize; ++dj) {
        Scalar* dst = cols.data() + (c * kKernelTaps + di * kKernelSize + dj) * oh * ow;
        for (Index i = 0; i < oh; ++i) {
          std::memcpy(dst + i * ow, plane + (i + di) * w + dj, sizeof(Scalar) * ow);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the patch matrix into a (c,h,w) image.
template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index channels, Index h, Index w, Scalar* image) {
  const Index oh = h - 2, ow = w - 2;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = image + c * h * w;
    for (Index di = 0; di < kKernelSize; ++di) {
      for (Index dj = 0; dj < kKernelSize; ++dj) {
        const Scalar* src = cols.data() + (c * kKernelTaps + di * kKernelSize + dj) * oh * ow;
        for (Index i = 0; i < oh; ++i) {
          Scalar* row = plane + (i + di) * w + dj;
          const Scalar* s = src + i * ow;
          for (Index j = 0; j < ow; ++j) row[j] += s[j];
        }
      }
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename Scalar>
void check_kernel(const ConvKernel<Scalar>& k, Index bias_len, const char* op) {
  const Shape4& ws = k.weights.shape();
  require(ws.h == kKernelSize && ws.w == kKernelSize,
          std::string(op) + ": kernel must be 3x3, got weights " + ws.str());
  require(k.bias.size() == bias_len, std::string(op) + ": bias length " + std::to_string(k.bias.size()) +
                                         " does not match weights " + ws.str());
}

template <typename Scalar>
ConstRowMatrixMap<Scalar> weight_matrix(const ConvKernel<Scalar>& k) {
  const Shape4& ws = k.weights.shape();
  return {k.weights.data(), ws.n, ws.c * kKernelTaps};
}

}  // namespace

template <typename Scalar>
Grid4<Scalar> conv2d_forward(const Grid4<Scalar>& input, const ConvKernel<Scalar>& kernel) {
  const Shape4& s = input.shape();
  const Shape4& ws = kernel.weights.shape();
  check_kernel(kernel, ws.n, "conv2d_forward");
  require(ws.c == s.c, "conv2d_forward: input " + s.str() + " incompatible with kernel " + ws.str());
  require(s.h >= kKernelSize && s.w >= kKernelSize,
          "conv2d_forward: input " + s.str() + " smaller than kernel " + ws.str());

  Grid4<Scalar> out(Shape4{s.n, ws.n, s.h - 2, s.w - 2});
  const auto weights = weight_matrix(kernel);
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < s.n; ++n) {
    im2col(input.data() + n * s.item(), s.c, s.h, s.w, cols);
    auto o = out.item(n);
    o.noalias() = weights * cols;
    o.colwise() += kernel.bias;
  }
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Grid4<Scalar>& grad_out, const Grid4<Scalar>& input,
                                  const ConvKernel<Scalar>& kernel) {
  const Shape4& s = input.shape();
  const Shape4& ws = kernel.weights.shape();
  const Shape4& gs = grad_out.shape();
  check_kernel(kernel, ws.n, "conv2d_backward");
  require(ws.c == s.c && s.h >= 3 && s.w >= 3,
          "conv2d_backward: input " + s.str() + " incompatible with kernel " + ws.str());
  require(gs == Shape4{s.n, ws.n, s.h - 2, s.w - 2},
          "conv2d_backward: grad_out " + gs.str() + " does not match forward output of input " + s.str() +
              " and kernel " + ws.str());

  ConvGrads<Scalar> g{Grid4<Scalar>(s), Grid4<Scalar>(ws), Vector<Scalar>::Zero(ws.n)};
  const auto weights = weight_matrix(kernel);
  RowMatrixMap<Scalar> grad_w(g.weights.data(), ws.n, ws.c * kKernelTaps);
  RowMatrix<Scalar> cols, grad_cols;
  for (Index n = 0; n < s.n; ++n) {
    const auto go = grad_out.item(n);
    im2col(input.data() + n * s.item(), s.c, s.h, s.w, cols);
    grad_w.noalias() += go * cols.transpose();
    g.bias += go.rowwise().sum();
    grad_cols.noalias() = weights.transpose() * go;
    col2im_add(grad_cols, s.c, s.h, s.w, g.input.data() + n * s.item());
  }
  return g;
}

template <typename Scalar>
Grid4<Scalar> deconv2d_forward(const Grid4<Scalar>& input, const ConvKernel<Scalar>& kernel) {
  const Shape4& s = input.shape();
  const Shape4& ws = kernel.weights.shape();
  check_kernel(kernel, ws.c, "deconv2d_forward");
  require(ws.n == s.c, "deconv2d_forward: input " + s.str() + " incompatible with kernel " + ws.str());

  const Shape4 os{s.n, ws.c, s.h + 2, s.w + 2};
  Grid4<Scalar> out(os);
  const auto weights = weight_matrix(kernel);
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < s.n; ++n) {
    cols.noalias() = weights.transpose() * input.item(n);
    col2im_add(cols, os.c, os.h, os.w, out.data() + n * os.item());
    out.item(n).colwise() += kernel.bias;
  }
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> deconv2d_backward(const Grid4<Scalar>& grad_out, const Grid4<Scalar>& input,
                                    const ConvKernel<Scalar>& kernel) {
  const Shape4& s = input.shape();
  const Shape4& ws = kernel.weights.shape();
  const Shape4& gs = grad_out.shape();
  check_kernel(kernel, ws.c, "deconv2d_backward");
  require(ws.n == s.c, "deconv2d_backward: input " + s.str() + " incompatible with kernel " + ws.str());
  require(gs == Shape4{s.n, ws.c, s.h + 2, s.w + 2},
          "deconv2d_backward: grad_out " + gs.str() + " does not match forward output of input " + s.str() +
              " and kernel " + ws.str());

  ConvGrads<Scalar> g{Grid4<Scalar>(s), Grid4<Scalar>(ws), Vector<Scalar>::Zero(ws.c)};
  const auto weights = weight_matrix(kernel);
  RowMatrixMap<Scalar> grad_w(g.weights.data(), ws.n, ws.c * kKernelTaps);
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < s.n; ++n) {
    im2col(grad_out.data() + n * gs.item(), gs.c, gs.h, gs.w, cols);
    g.input.item(n).noalias() = weights * cols;
    grad_w.noalias() += input.item(n) * cols.transpose();
    g.bias += grad_out.item(n).rowwise().sum();
  }
  return g;
}

template <typename Scalar>
Grid4<Scalar> relu_forward(const Grid4<Scalar>& input) {
  Grid4<Scalar> out(input.shape());
  out.vec() = input.vec().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
Grid4<Scalar> relu_backward(const Grid4<Scalar>& grad_out, const Grid4<Scalar>& input) {
  require(grad_out.shape() == input.shape(),
          "relu_backward: grad_out " + grad_out.shape().str() + " vs input " + input.shape().str());
  Grid4<Scalar> g = grad_out;
  relu_mask_inplace(g, input);
  return g;
}

template <typename Scalar>
void relu_mask_inplace(Grid4<Scalar>& grad, const Grid4<Scalar>& activation) {
  require(grad.shape() == activation.shape(),
          "relu mask: grad " + grad.shape().str() + " vs activation " + activation.shape().str());
  grad.vec() = (activation.vec().array() > Scalar(0)).select(grad.vec(), Scalar(0));
}

template <typename Scalar>
Grid4<Scalar> concat_channels(const Grid4<Scalar>& a, const Grid4<Scalar>& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  require(sa.n == sb.n && sa.same_spatial(sb),
          "concat_channels: cannot concatenate " + sa.str() + " and " + sb.str());
  Grid4<Scalar> out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (Index n = 0; n < sa.n; ++n) {
    auto o = out.item(n);
    o.topRows(sa.c) = a.item(n);
    o.bottomRows(sb.c) = b.item(n);
  }
  return out;
}

template <typename Scalar>
std::pair<Grid4<Scalar>, Grid4<Scalar>> split_channels(const Grid4<Scalar>& g, Index first_channels) {
  const Shape4& s = g.shape();
  require(first_channels >= 0 && first_channels <= s.c,
          "split_channels: cannot take " + std::to_string(first_channels) + " channels from " + s.str());
  Grid4<Scalar> a(Shape4{s.n, first_channels, s.h, s.w});
  Grid4<Scalar> b(Shape4{s.n, s.c - first_channels, s.h, s.w});
  for (Index n = 0; n < s.n; ++n) {
    a.item(n) = g.item(n).topRows(first_channels);
    b.item(n) = g.item(n).bottomRows(s.c - first_channels);
  }
  return {std::move(a), std::move(b)};
}

template <typename Scalar>
LossValue<Scalar> mse_loss(const Grid4<Scalar>& pred, const Grid4<Scalar>& target) {
  require(pred.shape() == target.shape(),
          "mse_loss: prediction " + pred.shape().str() + " vs target " + target.shape().str());
  const Index count = pred.size();
  require(count > 0, "mse_loss: empty grids");
  LossValue<Scalar> out{0.0, Grid4<Scalar>(pred.shape())};
  out.grad.vec() = pred.vec() - target.vec();
  out.loss = out.grad.vec().template cast<double>().squaredNorm() / static_cast<double>(count);
  out.grad.vec() *= Scalar(2) / static_cast<Scalar>(count);
  return out;
}

#define PCN_INSTANTIATE_LAYERS(S)                                                                        \
  template Grid4<S> conv2d_forward(const Grid4<S>&, const ConvKernel<S>&);                               \
  template ConvGrads<S> conv2d_backward(const Grid4<S>&, const Grid4<S>&, const ConvKernel<S>&);         \
  template Grid4<S> deconv2d_forward(const Grid4<S>&, const ConvKernel<S>&);                             \
  template ConvGrads<S> deconv2d_backward(const Grid4<S>&, const Grid4<S>&, const ConvKernel<S>&);       \
  template Grid4<S> relu_forward(const Grid4<S>&);                                                       \
  template Grid4<S> relu_backward(const Grid4<S>&, const Grid4<S>&);                                     \
  template void relu_mask_inplace(Grid4<S>&, const Grid4<S>&);                                           \
  template Grid4<S> concat_channels(const Grid4<S>&, const Grid4<S>&);                                   \
  template std::pair<Grid4<S>, Grid4<S>> split_channels(const Grid4<S>&, Index);                         \
  template LossValue<S> mse_loss(const Grid4<S>&, const Grid4<S>&);

PCN_INSTANTIATE_LAYERS(float)
PCN_INSTANTIATE_LAYERS(double)

}  // namespace pcn
