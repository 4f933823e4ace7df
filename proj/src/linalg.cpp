#include "peps/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace peps {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

void require_matrix(const Tensor& m, const char* who) {
  if (m.rank() != 2) throw ShapeError(std::string(who) + ": expected a rank-2 tensor, got " +
                                      shape_string(m.shape()));
}

Tensor from_eigen(const RowMat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), t.data());
  return t;
}

ConstMap as_eigen(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.extent(0)),
                  static_cast<Eigen::Index>(t.extent(1)));
}

RowMat symmetrized(const Tensor& m) {
  require_matrix(m, "symmetric eigensolver");
  if (m.extent(0) != m.extent(1)) throw ShapeError("symmetric eigensolver: matrix not square");
  const auto a = as_eigen(m);
  return 0.5 * (a + a.transpose());
}

}  // namespace

SvdResult svd_truncate(const Tensor& m, std::size_t max_rank, double rel_cutoff) {
  require_matrix(m, "svd_truncate");
  if (max_rank == 0) throw ShapeError("svd_truncate: max_rank must be positive");
  if (!all_finite(m)) throw NumericalError("svd_truncate: non-finite input");

  const auto a = as_eigen(m);
  Eigen::BDCSVD<RowMat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("svd_truncate: SVD did not converge");

  const auto& sv = svd.singularValues();
  const auto full = static_cast<std::size_t>(sv.size());
  if (full > 0 && !std::isfinite(sv(0))) throw NumericalError("svd_truncate: non-finite spectrum");
  const double s1 = full > 0 ? sv(0) : 0.0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < full; ++i) {
    if (sv(static_cast<Eigen::Index>(i)) >= rel_cutoff * s1) ++above;
  }
  const std::size_t keep = std::max<std::size_t>(1, std::min({max_rank, above, full}));

  double total = 0.0, kept = 0.0;
  for (std::size_t i = 0; i < full; ++i) {
    const double s2 = sv(static_cast<Eigen::Index>(i)) * sv(static_cast<Eigen::Index>(i));
    total += s2;
    if (i < keep) kept += s2;
  }

  SvdResult out;
  const auto k = static_cast<Eigen::Index>(keep);
  out.u = from_eigen(svd.matrixU().leftCols(k));
  out.vt = from_eigen(svd.matrixV().leftCols(k).transpose());
  out.s.assign(sv.data(), sv.data() + keep);
  out.discarded_weight = total > 0.0 ? std::max(0.0, (total - kept) / total) : 0.0;
  return out;
}

QrResult qr(const Tensor& m) {
  require_matrix(m, "qr");
  const auto a = as_eigen(m);
  const auto rows = a.rows(), cols = a.cols();
  const auto k = std::min(rows, cols);
  Eigen::HouseholderQR<RowMat> dec(a);
  RowMat q = dec.householderQ() * RowMat::Identity(rows, k);
  RowMat r = dec.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
  return {from_eigen(q), from_eigen(r)};
}

LqResult lq(const Tensor& m) {
  auto [q, r] = qr(transpose(m));
  return {transpose(r), transpose(q)};
}

EighResult eigh(const Tensor& m) {
  const RowMat a = symmetrized(m);
  Eigen::SelfAdjointEigenSolver<RowMat> es(a);
  if (es.info() != Eigen::Success) throw NumericalError("eigh: eigensolver did not converge");
  const auto n = a.rows();
  EighResult out;
  out.values.resize(static_cast<std::size_t>(n));
  RowMat vecs(n, n);
  // Eigen returns ascending order.
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values[static_cast<std::size_t>(i)] = es.eigenvalues()(n - 1 - i);
    vecs.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  out.vectors = from_eigen(vecs);
  return out;
}

std::vector<double> solve_hermitian_psd(const Tensor& n, std::span<const double> b,
                                        double rel_cutoff) {
  const auto dec = eigh(n);
  const auto dim = dec.values.size();
  if (b.size() != dim) throw ShapeError("solve_hermitian_psd: rhs length mismatch");
  const double lmax = dim > 0 ? dec.values.front() : 0.0;
  if (!(lmax > 0.0)) {
    std::ostringstream os;
    os << "environment not positive: lambda_max = " << lmax;
    throw NotPositiveError(os.str(), dec.values);
  }
  const auto v = as_eigen(dec.vectors);
  Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd proj = v.transpose() * rhs;
  for (std::size_t i = 0; i < dim; ++i) {
    const double l = dec.values[i];
    proj(static_cast<Eigen::Index>(i)) = (l >= rel_cutoff * lmax && l > 0.0) ? proj(static_cast<Eigen::Index>(i)) / l : 0.0;
  }
  Eigen::VectorXd x = v * proj;
  return {x.data(), x.data() + x.size()};
}

Tensor sqrt_psd(const Tensor& m) {
  const auto dec = eigh(m);
  const auto n = static_cast<Eigen::Index>(dec.values.size());
  const auto v = as_eigen(dec.vectors);
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = std::sqrt(std::max(0.0, dec.values[static_cast<std::size_t>(i)]));
  RowMat out = v * s.asDiagonal() * v.transpose();
  return from_eigen(out);
}

Tensor expm_symmetric(const Tensor& h, double tau) {
  const auto dec = eigh(h);
  const auto n = static_cast<Eigen::Index>(dec.values.size());
  const auto v = as_eigen(dec.vectors);
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < n; ++i) e(i) = std::exp(-tau * dec.values[static_cast<std::size_t>(i)]);
  RowMat out = v * e.asDiagonal() * v.transpose();
  // Exact symmetry.
  RowMat sym = 0.5 * (out + out.transpose());
  return from_eigen(sym);
}

}  // namespace peps
