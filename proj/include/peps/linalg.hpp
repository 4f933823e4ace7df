#pragma once

#include <vector>

#include "peps/tensor.hpp"

namespace peps {

/// Raised by solve_hermitian_psd when the matrix has no positive eigenvalue.
class NotPositiveError : public NumericalError {
 public:
  NotPositiveError(const std::string& what, std::vector<double> spectrum)
      : NumericalError(what), spectrum_(std::move(spectrum)) {}
  const std::vector<double>& spectrum() const noexcept { return spectrum_; }

 private:
  std::vector<double> spectrum_;
};

inline constexpr double kSvdCutoff = 1e-12;
inline constexpr double kSolveCutoff = 1e-10;

struct SvdResult {
  Tensor u;                 // m x k, orthonormal columns
  std::vector<double> s;    // nonincreasing
  Tensor vt;                // k x n, orthonormal rows
  double discarded_weight;  // sum of dropped s^2 over total s^2
};

/// Truncated SVD of a matrix. Kept rank is min(max_rank, #{s_i >= rel_cutoff * s_1},
/// min(m, n)) and at least one.
SvdResult svd_truncate(const Tensor& m, std::size_t max_rank, double rel_cutoff = kSvdCutoff);

struct QrResult {
  Tensor q;  // m x k isometry, k = min(m, n)
  Tensor r;  // k x n
};
QrResult qr(const Tensor& m);

/// m = l * q with q having orthonormal rows.
struct LqResult {
  Tensor l;
  Tensor q;
};
LqResult lq(const Tensor& m);

struct EighResult {
  std::vector<double> values;  // nonincreasing
  Tensor vectors;              // columns are eigenvectors, same order
};
/// Eigendecomposition of (m + m^T) / 2.
EighResult eigh(const Tensor& m);

/// Pseudo-inverse solve of a positive semidefinite system. Eigenvalues below
/// rel_cutoff * lambda_max (and all negative ones) are discarded.
std::vector<double> solve_hermitian_psd(const Tensor& n, std::span<const double> b,
                                        double rel_cutoff = kSolveCutoff);

/// Principal square root of the PSD part of a symmetric matrix.
Tensor sqrt_psd(const Tensor& m);

/// exp(-tau * h) for symmetric h.
Tensor expm_symmetric(const Tensor& h, double tau);

}  // namespace peps
