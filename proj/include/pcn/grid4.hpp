#pragma once

#include <Eigen/Core>

#include <array>
#include <stdexcept>
#include <string>

namespace pcn {

using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Extent of a (batch, channel, height, width) array.
struct Shape4 {
  Index n = 1;
  Index c = 1;
  Index h = 1;
  Index w = 1;

  Index size() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  Index item() const { return c * h * w; }
  bool same_spatial(const Shape4& o) const { return h == o.h && w == o.w; }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstRowMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense row-major 4-D array. Storage is a single Eigen vector so whole-grid
/// arithmetic composes as ordinary Eigen expressions through vec().
template <typename Scalar_>
class Grid4 {
 public:
  using Scalar = Scalar_;

  Grid4() : shape_{0, 0, 0, 0} {}
  explicit Grid4(const Shape4& shape) : shape_(checked(shape)), data_(Vector<Scalar>::Zero(shape.size())) {}
  Grid4(const Shape4& shape, Scalar value)
      : shape_(checked(shape)), data_(Vector<Scalar>::Constant(shape.size(), value)) {}
  Grid4(const Shape4& shape, Vector<Scalar> data) : shape_(checked(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("grid data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    }
  }

  static Grid4 Zero(const Shape4& shape) { return Grid4(shape); }
  static Grid4 Constant(const Shape4& shape, Scalar value) { return Grid4(shape, value); }

  const Shape4& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar& operator()(Index n, Index c, Index i, Index j) { return data_[offset(n, c, i, j)]; }
  Scalar operator()(Index n, Index c, Index i, Index j) const { return data_[offset(n, c, i, j)]; }

  Vector<Scalar>& vec() { return data_; }
  const Vector<Scalar>& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  /// Batch item n viewed as a (channels x pixels) matrix.
  RowMatrixMap<Scalar> item(Index n) { return {data_.data() + n * shape_.item(), shape_.c, shape_.plane()}; }
  ConstRowMatrixMap<Scalar> item(Index n) const {
    return {data_.data() + n * shape_.item(), shape_.c, shape_.plane()};
  }

  /// One (h x w) image plane.
  RowMatrixMap<Scalar> plane(Index n, Index c) {
    return {data_.data() + n * shape_.item() + c * shape_.plane(), shape_.h, shape_.w};
  }
  ConstRowMatrixMap<Scalar> plane(Index n, Index c) const {
    return {data_.data() + n * shape_.item() + c * shape_.plane(), shape_.h, shape_.w};
  }

  template <typename To>
  Grid4<To> cast() const {
    return Grid4<To>(shape_, data_.template cast<To>().eval());
  }

  void set_zero() { data_.setZero(); }

 private:
  static Shape4 checked(const Shape4& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw ShapeError("negative extent in shape " + s.str());
    return s;
  }
  Index offset(Index n, Index c, Index i, Index j) const {
    return ((n * shape_.c + c) * shape_.h + i) * shape_.w + j;
  }

  Shape4 shape_;
  Vector<Scalar> data_;
};

template <typename Scalar>
bool all_finite(const Grid4<Scalar>& g) {
  return g.vec().allFinite();
}

/// Copies a spatial window [top, top+h) x [left, left+w) out of every (n, c) plane.
template <typename Scalar>
Grid4<Scalar> crop(const Grid4<Scalar>& g, Index top, Index left, Index h, Index w) {
  const Shape4& s = g.shape();
  if (top < 0 || left < 0 || top + h > s.h || left + w > s.w) {
    throw ShapeError("crop window exceeds grid " + s.str());
  }
  Grid4<Scalar> out(Shape4{s.n, s.c, h, w});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) out.plane(n, c) = g.plane(n, c).block(top, left, h, w);
  return out;
}

/// Selects batch items [first, first+count).
template <typename Scalar>
Grid4<Scalar> batch_slice(const Grid4<Scalar>& g, Index first, Index count) {
  const Shape4& s = g.shape();
  if (first < 0 || count < 0 || first + count > s.n) throw ShapeError("batch slice out of range for " + s.str());
  Shape4 out_shape = s;
  out_shape.n = count;
  return Grid4<Scalar>(out_shape, g.vec().segment(first * s.item(), count * s.item()).eval());
}

}  // namespace pcn
