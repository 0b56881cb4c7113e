#ifndef DCDA_TENSOR_HPP
#define DCDA_TENSOR_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dcda/errors.hpp"

namespace dcda {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Dimension list of a dense tensor, outermost first.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  [[nodiscard]] Index rank() const { return static_cast<Index>(dims_.size()); }
  [[nodiscard]] Index operator[](Index i) const { return dims_[static_cast<std::size_t>(i)]; }
  [[nodiscard]] Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
  }
  [[nodiscard]] const std::vector<Index>& dims() const { return dims_; }

  friend bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) out << (i ? "," : "") << dims_[i];
    out << ']';
    return out.str();
  }

 private:
  std::vector<Index> dims_;
};

/// Dense row-major tensor (NCHW for images) backed by a contiguous Eigen array.
///
/// Element-wise math goes through array(), which is an ordinary Eigen array
/// expression; the plane/sample maps expose 2-D views without copying.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Storage = ArrayX<Scalar>;
  using PlaneMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstPlaneMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(shape_.numel())) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Storage::Constant(shape_.numel(), fill)) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor storage of " + std::to_string(data_.size()) + " elements does not match shape " +
                       shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] Index dim(Index i) const { return shape_[i]; }
  [[nodiscard]] Index rank() const { return shape_.rank(); }
  [[nodiscard]] Index size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  [[nodiscard]] const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  [[nodiscard]] const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
  [[nodiscard]] Scalar at(Index n, Index c, Index h, Index w) const { return data_[offset(n, c, h, w)]; }

  /// H x W view of one channel plane of a rank-4 tensor.
  PlaneMap plane(Index n, Index c) {
    return PlaneMap(data_.data() + offset(n, c, 0, 0), shape_[2], shape_[3]);
  }
  [[nodiscard]] ConstPlaneMap plane(Index n, Index c) const {
    return ConstPlaneMap(data_.data() + offset(n, c, 0, 0), shape_[2], shape_[3]);
  }

  /// C x (H*W) view of one sample; rows are channels.
  PlaneMap sample(Index n) {
    const Index inner = shape_.numel() / shape_[0];
    const Index channels = shape_.rank() > 1 ? shape_[1] : 1;
    return PlaneMap(data_.data() + n * inner, channels, inner / channels);
  }
  [[nodiscard]] ConstPlaneMap sample(Index n) const {
    const Index inner = shape_.numel() / shape_[0];
    const Index channels = shape_.rank() > 1 ? shape_[1] : 1;
    return ConstPlaneMap(data_.data() + n * inner, channels, inner / channels);
  }

  /// Same storage reinterpreted under another shape of equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  [[nodiscard]] bool all_finite() const { return data_.allFinite(); }

 private:
  [[nodiscard]] Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  Storage data_;
};

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace dcda

#endif  // DCDA_TENSOR_HPP
