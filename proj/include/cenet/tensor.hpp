#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cenet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-d array backed by an Eigen vector.
///
/// The last dimension is contiguous, so any tensor can be viewed as a
/// (numel / last) x last row-major matrix without copying.
template <typename Scalar_>
struct Tensor {
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Shape shape;
  Vector data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Vector::Zero(numel(shape))) {}
  Tensor(Shape s, Scalar fill) : shape(std::move(s)), data(Vector::Constant(numel(shape), fill)) {}
  Tensor(Shape s, Vector values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
      throw std::invalid_argument("tensor: data size does not match shape " + shape_string(shape));
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(Index i) const { return shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  bool empty() const { return data.size() == 0; }

  Scalar* ptr() { return data.data(); }
  const Scalar* ptr() const { return data.data(); }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("tensor: item() on tensor of shape " + shape_string(shape));
    return data[0];
  }

  Index last() const { return shape.empty() ? 1 : shape.back(); }
  Index rows() const { return last() == 0 ? 0 : size() / last(); }

  MatrixMap matrix() { return MatrixMap(ptr(), rows(), last()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(ptr(), rows(), last()); }
  MatrixMap matrix(Index r, Index c) { return MatrixMap(ptr(), r, c); }
  ConstMatrixMap matrix(Index r, Index c) const { return ConstMatrixMap(ptr(), r, c); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, data.template cast<Other>());
  }

  Tensor reshaped(Shape s) const {
    if (numel(s) != size())
      throw std::invalid_argument("tensor: cannot reshape " + shape_string(shape) + " to " + shape_string(s));
    return Tensor(std::move(s), data);
  }
};

template <typename Scalar>
bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape == b.shape;
}

inline void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

}  // namespace cenet
