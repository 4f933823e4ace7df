#include "peps/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace peps {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
  }
}

bool is_identity(std::span<const std::size_t> perm) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] != i) return false;
  }
  return true;
}

void check_permutation(std::span<const std::size_t> perm, std::size_t rank) {
  if (perm.size() != rank) throw ShapeError("permutation length does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("invalid permutation");
    seen[p] = true;
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::diagonal(std::span<const double> values) {
  const auto n = values.size();
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = values[i];
  return t;
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t off = 0;
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    if (index[k] >= shape_[k]) throw ShapeError("index out of range");
    off = off * shape_[k] + index[k];
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  check_extents(shape);
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

Tensor& Tensor::operator*=(double factor) {
  for (auto& x : data_) x *= factor;
  return *this;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeError("shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeError("shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor operator*(double factor, Tensor t) { return t *= factor; }
Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }

double frobenius_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("size mismatch in dot");
  return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()))
      .dot(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double x : t.values()) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double x) { return std::isfinite(x); });
}

Tensor permute(const Tensor& a, std::span<const std::size_t> perm) {
  const auto rank = a.rank();
  check_permutation(perm, rank);
  if (is_identity(perm)) return a;

  Shape out_shape(rank);
  for (std::size_t k = 0; k < rank; ++k) out_shape[k] = a.extent(perm[k]);

  std::vector<std::size_t> in_stride(rank);
  std::size_t s = 1;
  for (std::size_t k = rank; k-- > 0;) {
    in_stride[k] = s;
    s *= a.extent(k);
  }
  // Stride in the input for each output axis.
  std::vector<std::size_t> stride(rank);
  for (std::size_t k = 0; k < rank; ++k) stride[k] = in_stride[perm[k]];

  Tensor out(out_shape);
  const double* src = a.data();
  double* dst = out.data();
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t inner_stride = stride[rank - 1];
  const std::size_t outer = out.size() / inner;

  std::vector<std::size_t> counter(rank, 0);
  std::size_t src_off = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* p = src + src_off;
    for (std::size_t i = 0; i < inner; ++i) dst[i] = p[i * inner_stride];
    dst += inner;
    // Advance the odometer over all axes but the last.
    for (std::size_t k = rank - 1; k-- > 0;) {
      ++counter[k];
      src_off += stride[k];
      if (counter[k] < out_shape[k]) break;
      src_off -= stride[k] * out_shape[k];
      counter[k] = 0;
    }
  }
  return out;
}

Tensor permute(const Tensor& a, std::initializer_list<std::size_t> perm) {
  return permute(a, std::span<const std::size_t>(perm.begin(), perm.size()));
}

Tensor permute_reshape(const Tensor& a, std::span<const std::size_t> perm,
                       std::span<const std::size_t> groups) {
  Tensor p = permute(a, perm);
  if (std::accumulate(groups.begin(), groups.end(), std::size_t{0}) != p.rank()) {
    throw ShapeError("grouping does not cover all permuted axes");
  }
  Shape shape;
  std::size_t axis = 0;
  for (auto g : groups) {
    if (g == 0) throw ShapeError("empty axis group");
    std::size_t e = 1;
    for (std::size_t k = 0; k < g; ++k) e *= p.extent(axis++);
    shape.push_back(e);
  }
  return std::move(p).reshaped(std::move(shape));
}

Tensor contract(const Tensor& a, const Tensor& b, std::span<const AxisPair> pairs) {
  std::vector<bool> used_a(a.rank(), false), used_b(b.rank(), false);
  std::size_t k_size = 1;
  for (const auto& [ia, ib] : pairs) {
    if (ia >= a.rank() || ib >= b.rank()) {
      throw ShapeError("contract: axis pair (" + std::to_string(ia) + "," + std::to_string(ib) +
                       ") out of range");
    }
    if (used_a[ia] || used_b[ib]) {
      throw ShapeError("contract: axis repeated in pair (" + std::to_string(ia) + "," +
                       std::to_string(ib) + ")");
    }
    if (a.extent(ia) != b.extent(ib)) {
      throw ShapeError("contract: extent mismatch on axis pair (" + std::to_string(ia) + "," +
                       std::to_string(ib) + "): " + std::to_string(a.extent(ia)) + " vs " +
                       std::to_string(b.extent(ib)));
    }
    used_a[ia] = used_b[ib] = true;
    k_size *= a.extent(ia);
  }

  std::vector<std::size_t> perm_a, perm_b;
  Shape out_shape;
  std::size_t m_size = 1, n_size = 1;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (!used_a[i]) {
      perm_a.push_back(i);
      out_shape.push_back(a.extent(i));
      m_size *= a.extent(i);
    }
  }
  for (const auto& pr : pairs) perm_a.push_back(pr.first);
  for (const auto& pr : pairs) perm_b.push_back(pr.second);
  for (std::size_t i = 0; i < b.rank(); ++i) {
    if (!used_b[i]) {
      perm_b.push_back(i);
      out_shape.push_back(b.extent(i));
      n_size *= b.extent(i);
    }
  }

  const Tensor ap = permute(a, perm_a);
  const Tensor bp = permute(b, perm_b);
  Tensor out(out_shape);
  const auto m = static_cast<Eigen::Index>(m_size);
  const auto n = static_cast<Eigen::Index>(n_size);
  const auto k = static_cast<Eigen::Index>(k_size);
  MutMap(out.data(), m, n).noalias() = ConstMap(ap.data(), m, k) * ConstMap(bp.data(), k, n);
  return out;
}

Tensor contract(const Tensor& a, const Tensor& b, std::initializer_list<AxisPair> pairs) {
  return contract(a, b, std::span<const AxisPair>(pairs.begin(), pairs.size()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects matrices");
  return contract(a, b, {{1, 0}});
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose expects a matrix");
  return permute(m, {1, 0});
}

Tensor pad_to(const Tensor& a, const Shape& shape) {
  if (shape.size() != a.rank()) throw ShapeError("pad_to: rank mismatch");
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (shape[k] < a.extent(k)) throw ShapeError("pad_to: target smaller than source");
  }
  if (shape == a.shape()) return a;
  Tensor out(shape);
  const auto rank = a.rank();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    out[out.offset(idx)] = a[flat];
    for (std::size_t k = rank; k-- > 0;) {
      if (++idx[k] < a.extent(k)) break;
      idx[k] = 0;
    }
  }
  return out;
}

}  // namespace peps
