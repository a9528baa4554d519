#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "viewflow/error.hpp"

namespace viewflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Wider type used when reducing over many Scalar values.
template <typename Scalar>
using Accumulator = std::conditional_t<(sizeof(Scalar) < sizeof(double)), double, Scalar>;

/// Dense row-major N-dimensional array. Every dimension is strictly positive.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using MatrixMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }
  const std::vector<Scalar>& values() const noexcept { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  template <typename... Index>
  Scalar& operator()(Index... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Index>
  const Scalar& operator()(Index... idx) const {
    return data_[offset(idx...)];
  }

  /// 2-D view for linear algebra; the tensor must be rank 2.
  MatrixMap matrix() {
    require_rank(2);
    return MatrixMap(data_.data(), Eigen::Index(shape_[0]), Eigen::Index(shape_[1]));
  }
  ConstMatrixMap matrix() const {
    require_rank(2);
    return ConstMatrixMap(data_.data(), Eigen::Index(shape_[0]), Eigen::Index(shape_[1]));
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Scalar v) { return static_cast<To>(v); });
    return Tensor<To>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape_)
      if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_string(shape_));
  }

  void require_rank(std::size_t rank) const {
    if (ndim() != rank)
      throw DimensionError("expected rank-" + std::to_string(rank) + " tensor, got " + shape_string(shape_));
  }

  template <typename... Index>
  std::size_t offset(Index... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizeof...(Index); ++i) off = off * shape_[i] + index[i];
    return off;
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws NumericError naming `op` when `t` holds NaN or Inf.
template <typename Scalar>
const Tensor<Scalar>& ensure_finite(const Tensor<Scalar>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  return t;
}

}  // namespace viewflow
