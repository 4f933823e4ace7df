#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "peps/tensor.hpp"

namespace peps {

/// Boundary operator of a partially contracted norm network. Site index order
/// is (left-bond, ket-leg, bra-leg, right-bond). The represented operator is
/// exp(log_scale) times the plain chain contraction.
struct BoundaryMpo {
  std::vector<Tensor> sites;
  double log_scale = 0.0;

  std::size_t length() const noexcept { return sites.size(); }
  std::size_t max_bond() const;
  bool separable() const;

  /// All sites are 1x1x1x1 ones: the boundary beyond a lattice edge.
  static BoundaryMpo trivial(std::size_t length);
};

/// One row of the ket layer. Sites have order (physical, up, left, down,
/// right); the bra is the same tensors (real field).
struct SandwichRow {
  std::vector<Tensor> ket_sites;
  std::size_t length() const noexcept { return ket_sites.size(); }
};

/// Boundary stored as a purification. Site order is (left-bond, system-leg,
/// purification-leg, right-bond). The traced boundary has scale
/// exp(2 * log_scale).
struct PurificationMps {
  std::vector<Tensor> sites;
  double log_scale = 0.0;

  std::size_t length() const noexcept { return sites.size(); }
  std::size_t max_bond() const;
  std::size_t max_purification() const;

  static PurificationMps trivial(std::size_t length);
};

/// Raised when an ALS fit gets worse on two consecutive sweeps.
class AlsDivergence : public std::runtime_error {
 public:
  AlsDivergence(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

struct AlsOptions {
  double tol = 1e-10;
  int max_sweeps = 100;
  /// Evaluate the relative distance to the exact product. This needs the norm
  /// of the uncompressed chain and is skipped in hot loops.
  bool compute_error = true;
};

struct CompressResult {
  BoundaryMpo boundary;
  double truncation_error = 0.0;  // relative Frobenius distance, NaN if not computed
  int sweeps = 0;
};

void validate(const BoundaryMpo& mpo);
void validate(const PurificationMps& pur);

/// Left sites become left isometries and right sites right isometries over
/// the fused (ket, bra) legs. The center is normalized and its norm moves to
/// log_scale.
BoundaryMpo canonicalize(const BoundaryMpo& mpo, std::size_t center);

/// Absorbs one sandwich row into a boundary and compresses the result to bond
/// dimension d_prime by single-site ALS. Without `initial`, the fit starts from
/// a sequential SVD truncation of the product built left to right; with it,
/// the fit is warm-started from that chain, provided d_prime is at least the
/// squared row bond.
CompressResult apply_row_compress(const BoundaryMpo& boundary, const SandwichRow& row,
                                  std::size_t d_prime, const AlsOptions& options = {},
                                  const BoundaryMpo* initial = nullptr);

/// Optimal separable (D'=1) positive boundary for the row applied to a
/// separable positive boundary.
BoundaryMpo compress_separable(const BoundaryMpo& boundary, const SandwichRow& row,
                               double tol = 1e-10, int max_sweeps = 100,
                               std::uint64_t seed = 0x5eedULL);

/// 1 - |tr(a^T b)| after normalizing both chains to unit Frobenius norm.
double fidelity_distance(const BoundaryMpo& a, const BoundaryMpo& b);

/// Overlap <a|b> of the plain chains (log scales ignored).
double chain_overlap(const BoundaryMpo& a, const BoundaryMpo& b);

/// Applies the ket layer of a row to a purification; the physical leg joins
/// the purification leg and the bond is compressed to d_doubleprime.
PurificationMps sl_apply_ket_row(const PurificationMps& pur, const SandwichRow& row,
                                 std::size_t d_doubleprime, const AlsOptions& options = {});

/// Projects each site's purification leg on the top eigenvectors of its
/// reduced density matrix in canonical form.
PurificationMps sl_reduce_purification(const PurificationMps& pur, std::size_t d_prime_target);

/// Traces the purification legs: a positive boundary of bond (D'')^2.
BoundaryMpo purification_to_boundary(const PurificationMps& pur);

/// Eigenvalues of a separable site matrix, normalized so the first is 1.
std::vector<double> local_spectrum(const BoundaryMpo& mpo, std::size_t site);

/// Dense ket-by-bra matrix of a short chain, including exp(log_scale).
Tensor boundary_to_dense(const BoundaryMpo& mpo);

/// Squared norm of the uncompressed product of a boundary and a row,
/// relative to exp(2 log_scale).
double product_norm_squared(const BoundaryMpo& boundary, const SandwichRow& row);

void write_chain(std::ostream& os, const BoundaryMpo& mpo);
BoundaryMpo read_boundary(std::istream& is);
void write_chain(std::ostream& os, const PurificationMps& pur);
PurificationMps read_purification(std::istream& is);

}  // namespace peps
