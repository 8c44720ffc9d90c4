#include "oracles.hpp"

#include "pcn/layers.hpp"

#include <gtest/gtest.h>

using namespace pcn;

namespace {

TEST(Grid4, ShapeAndLayout) {
  Grid4<double> g(Shape4{2, 3, 4, 5});
  EXPECT_EQ(g.size(), 120);
  g(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(g.data()[119], 7.0);
  EXPECT_EQ(g.plane(1, 2)(3, 4), 7.0);
  EXPECT_EQ(g.item(1)(2, 19), 7.0);
  EXPECT_THROW(Grid4<double>(Shape4{1, -1, 2, 2}), ShapeError);
  EXPECT_THROW(Grid4<double>(Shape4{1, 1, 2, 2}, Vector<double>::Zero(3)), ShapeError);
}

TEST(Grid4, CropAndBatchSlice) {
  Rng rng(1);
  const Grid4<double> g = oracle::random_grid({3, 2, 6, 7}, rng);
  const Grid4<double> c = crop(g, 1, 2, 3, 4);
  EXPECT_EQ(c.shape(), (Shape4{3, 2, 3, 4}));
  EXPECT_EQ(c(2, 1, 2, 3), g(2, 1, 3, 5));
  const Grid4<double> b = batch_slice(g, 1, 2);
  EXPECT_EQ(b(1, 1, 5, 6), g(2, 1, 5, 6));
  EXPECT_THROW(crop(g, 4, 0, 3, 3), ShapeError);
  EXPECT_THROW(batch_slice(g, 2, 2), ShapeError);
}

TEST(Conv2d, SingleTapIdentityKernel) {
  auto k = ConvKernel<double>::conv(1, 1);
  k.weights(0, 0, 1, 1) = 1.0;
  Rng rng(2);
  const Grid4<double> x = oracle::random_grid({1, 1, 5, 5}, rng);
  const Grid4<double> y = conv2d_forward(x, k);
  EXPECT_EQ(y.shape(), (Shape4{1, 1, 3, 3}));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(y(0, 0, i, j), x(0, 0, i + 1, j + 1));
}

TEST(Conv2d, ConstantInputSumsWeights) {
  auto k = ConvKernel<double>::conv(1, 1);
  k.weights = Grid4<double>::Constant(k.weights.shape(), 1.0);
  k.bias[0] = 0.5;
  const Grid4<double> y = conv2d_forward(Grid4<double>::Constant({1, 1, 4, 4}, 1.0), k);
  for (Index i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], 9.5);
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(3);
  const auto x = oracle::random_grid({2, 3, 7, 6}, rng);
  const auto k = oracle::random_conv(4, 3, rng);
  const auto a = conv2d_forward(x, k);
  const auto b = oracle::conv(x, k);
  ASSERT_EQ(a.shape(), b.shape());
  EXPECT_LT((a.vec() - b.vec()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Conv2d, RejectsBadShapes) {
  Rng rng(4);
  const auto k = oracle::random_conv(2, 3, rng);
  EXPECT_THROW(conv2d_forward(oracle::random_grid({1, 2, 5, 5}, rng), k), ShapeError);
  EXPECT_THROW(conv2d_forward(oracle::random_grid({1, 3, 2, 5}, rng), k), ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  Grid4<double> x = oracle::random_grid({2, 3, 6, 6}, rng);
  auto k = oracle::random_conv(2, 3, rng);
  const auto r = oracle::random_grid({2, 2, 4, 4}, rng);
  auto f = [&] { return oracle::dot(conv2d_forward(x, k), r); };
  const auto g = conv2d_backward(r, x, k);
  EXPECT_LT(oracle::worst_grad_error(f, x.data(), g.input.data(), x.size()), 1e-5);
  EXPECT_LT(oracle::worst_grad_error(f, k.weights.data(), g.weights.data(), k.weights.size()), 1e-5);
  EXPECT_LT(oracle::worst_grad_error(f, k.bias.data(), g.bias.data(), k.bias.size()), 1e-5);
}

TEST(Deconv2d, MatchesScatterLoops) {
  Rng rng(6);
  const auto u = oracle::random_grid({2, 3, 4, 5}, rng);
  const auto k = oracle::random_deconv(3, 2, rng);
  const auto a = deconv2d_forward(u, k);
  const auto b = oracle::deconv(u, k);
  ASSERT_EQ(a.shape(), (Shape4{2, 2, 6, 7}));
  EXPECT_LT((a.vec() - b.vec()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Deconv2d, SingleOneScattersKernel) {
  Rng rng(7);
  auto k = oracle::random_deconv(1, 1, rng);
  k.bias.setZero();
  Grid4<double> u(Shape4{1, 1, 1, 1});
  u(0, 0, 0, 0) = 1.0;
  const auto y = deconv2d_forward(u, k);
  EXPECT_EQ((y.vec() - k.weights.vec()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Deconv2d, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  Grid4<double> u = oracle::random_grid({1, 2, 4, 4}, rng);
  auto k = oracle::random_deconv(2, 3, rng);
  const auto r = oracle::random_grid({1, 3, 6, 6}, rng);
  auto f = [&] { return oracle::dot(deconv2d_forward(u, k), r); };
  const auto g = deconv2d_backward(r, u, k);
  EXPECT_LT(oracle::worst_grad_error(f, u.data(), g.input.data(), u.size()), 1e-5);
  EXPECT_LT(oracle::worst_grad_error(f, k.weights.data(), g.weights.data(), k.weights.size()), 1e-5);
  EXPECT_LT(oracle::worst_grad_error(f, k.bias.data(), g.bias.data(), k.bias.size()), 1e-5);
}

TEST(Deconv2d, AdjointOfConv) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Index c = 1 + Index(rng.below(3)), k_out = 1 + Index(rng.below(3));
    const Index h = 3 + Index(rng.below(5)), w = 3 + Index(rng.below(5));
    const auto x = oracle::random_grid({2, c, h, w}, rng);
    auto k = oracle::random_conv(k_out, c, rng);
    k.bias.setZero();
    const auto u = oracle::random_grid({2, k_out, h - 2, w - 2}, rng);
    auto kd = k;
    kd.bias = Vector<double>::Zero(c);
    const double lhs = oracle::dot(conv2d_forward(x, k), u);
    const double rhs = oracle::dot(x, deconv2d_forward(u, kd));
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Deconv2d, InvertsSizeRule) {
  Rng rng(10);
  const auto x = oracle::random_grid({1, 2, 9, 8}, rng);
  const auto conv = oracle::random_conv(3, 2, rng);
  const auto dec = oracle::random_deconv(3, 2, rng);
  EXPECT_EQ(deconv2d_forward(conv2d_forward(x, conv), dec).shape(), x.shape());
}

TEST(Relu, ForwardAndMask) {
  Grid4<double> x(Shape4{1, 1, 1, 4}, Vector<double>{{-1.0, 0.0, 2.0, -0.0}});
  const auto y = relu_forward(x);
  EXPECT_EQ(y(0, 0, 0, 0), 0.0);
  EXPECT_EQ(y(0, 0, 0, 2), 2.0);
  const auto g = relu_backward(Grid4<double>::Constant(x.shape(), 3.0), x);
  EXPECT_EQ(g(0, 0, 0, 0), 0.0);
  EXPECT_EQ(g(0, 0, 0, 1), 0.0);
  EXPECT_EQ(g(0, 0, 0, 2), 3.0);
  EXPECT_EQ(relu_backward(Grid4<double>::Constant(x.shape(), 3.0), y).vec(), g.vec());
}

TEST(Relu, GradientMatchesFiniteDifferencesAwayFromZero) {
  Rng rng(11);
  Grid4<double> x = oracle::random_grid({1, 2, 4, 4}, rng);
  for (Index i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.5;
  const auto r = oracle::random_grid(x.shape(), rng);
  auto f = [&] { return oracle::dot(relu_forward(x), r); };
  const auto g = relu_backward(r, x);
  EXPECT_LT(oracle::worst_grad_error(f, x.data(), g.data(), x.size()), 1e-5);
}

TEST(Channels, ConcatSplitRoundTrip) {
  Rng rng(12);
  const auto a = oracle::random_grid({2, 1, 3, 3}, rng);
  const auto b = oracle::random_grid({2, 4, 3, 3}, rng);
  const auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape4{2, 5, 3, 3}));
  EXPECT_EQ(c(1, 0, 2, 2), a(1, 0, 2, 2));
  EXPECT_EQ(c(1, 3, 0, 1), b(1, 2, 0, 1));
  const auto [a2, b2] = split_channels(c, 1);
  EXPECT_EQ(a2.vec(), a.vec());
  EXPECT_EQ(b2.vec(), b.vec());
  EXPECT_THROW(concat_channels(a, oracle::random_grid({2, 1, 3, 4}, rng)), ShapeError);
}

TEST(Mse, ValueAndGradient) {
  Rng rng(13);
  Grid4<double> p = oracle::random_grid({2, 1, 3, 3}, rng);
  const auto z = oracle::random_grid(p.shape(), rng);
  const auto lv = mse_loss(p, z);
  EXPECT_NEAR(lv.loss, std::pow(oracle::rmse(p, z), 2), 1e-15);
  EXPECT_EQ(mse_loss(z, z).loss, 0.0);
  auto f = [&] { return mse_loss(p, z).loss; };
  EXPECT_LT(oracle::worst_grad_error(f, p.data(), lv.grad.data(), p.size()), 1e-6);
}

TEST(FloatPath, AgreesWithDouble) {
  Rng rng(14);
  const auto x = oracle::random_grid({2, 3, 8, 8}, rng);
  const auto k = oracle::random_conv(4, 3, rng);
  const ConvKernel<float> kf{k.weights.cast<float>(), k.bias.cast<float>()};
  const auto yf = conv2d_forward(x.cast<float>(), kf);
  const auto yd = conv2d_forward(x, k);
  EXPECT_LT((yf.cast<double>().vec() - yd.vec()).cwiseAbs().maxCoeff(), 1e-5);
}

}  // namespace
