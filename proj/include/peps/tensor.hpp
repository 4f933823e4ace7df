#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace peps {

using Shape = std::vector<std::size_t>;

/// Raised when tensor extents or axis specifications are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical backend fails or produces non-finite output.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense real tensor stored row-major. Rank 0 is a scalar with one entry.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  /// Matrix with `values` on the diagonal.
  static Tensor diagonal(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;
  std::size_t offset(std::span<const std::size_t> index) const;

  /// Same data, new extents; total size must be preserved.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  Tensor& operator*=(double factor);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator*(double factor, Tensor t);
Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

double frobenius_norm(const Tensor& t);
/// Sum of elementwise products; shapes must match.
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);
bool all_finite(const Tensor& t);

/// Generalized transpose: output axis k is input axis perm[k].
Tensor permute(const Tensor& a, std::span<const std::size_t> perm);
Tensor permute(const Tensor& a, std::initializer_list<std::size_t> perm);

/// Permute, then merge consecutive runs of permuted axes. `groups[k]` is the
/// number of permuted axes fused into output axis k.
Tensor permute_reshape(const Tensor& a, std::span<const std::size_t> perm,
                       std::span<const std::size_t> groups);

using AxisPair = std::pair<std::size_t, std::size_t>;

/// Sums over the paired axes. Free axes of `a` come first, then free axes of
/// `b`, both in their original order.
Tensor contract(const Tensor& a, const Tensor& b, std::span<const AxisPair> pairs);
Tensor contract(const Tensor& a, const Tensor& b, std::initializer_list<AxisPair> pairs);

/// Matrix product of rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

/// Embeds `a` into a zero tensor of larger (or equal) extents.
Tensor pad_to(const Tensor& a, const Shape& shape);

}  // namespace peps
