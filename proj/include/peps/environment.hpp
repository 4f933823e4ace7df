#pragma once

#include <optional>
#include <string>
#include <vector>

#include "peps/chain.hpp"
#include "peps/hamiltonian.hpp"
#include "peps/state.hpp"

namespace peps {

/// How boundaries are approximated. Cluster{delta, D'} contracts rows farther
/// than delta from the target separably and the remaining delta rows with a
/// general bond-D' boundary.
struct EnvironmentSpec {
  enum class Kind { kFull, kCluster, kSeparable, kSingleLayer };
  Kind kind = Kind::kFull;
  std::size_t delta = 0;
  std::size_t d_prime = 16;
  std::size_t d_doubleprime = 0;  // single layer bond; 0 means D
  std::size_t d_prime_pur = 0;    // single layer purification cap; 0 means D
  AlsOptions als{1e-10, 100, false};

  static EnvironmentSpec full(std::size_t d_prime);
  static EnvironmentSpec cluster(std::size_t delta, std::size_t d_prime);
  static EnvironmentSpec separable();
  static EnvironmentSpec single_layer(std::size_t d_doubleprime, std::size_t d_prime_pur);

  /// Rows of general contraction on one side of a target row.
  std::size_t general_rows(std::size_t side) const;
  std::string label() const;
};

enum class Side { kAbove, kBelow };

/// Boundary of all rows above (or below) `row`; its ket/bra legs face the
/// target row's up (or down) legs.
BoundaryMpo boundary_for_row(const PepsState& p, std::size_t row, Side side,
                             const EnvironmentSpec& spec);

/// sep[k] is the separable boundary of rows 0..k-1, k = 0..L.
std::vector<BoundaryMpo> separable_prefixes(const PepsState& p, const AlsOptions& als);

/// Boundary above `row` built from a cached separable prefix, with `general`
/// rows of bond-D' compression. `warm`, if given, seeds each compression.
BoundaryMpo cluster_boundary(const PepsState& p, std::size_t row, std::size_t general,
                             std::size_t d_prime, const std::vector<BoundaryMpo>& sep,
                             const AlsOptions& als, const std::vector<BoundaryMpo>* warm = nullptr,
                             std::vector<BoundaryMpo>* trail = nullptr);

struct NormResult {
  double log_norm = 0.0;
  int sign = 1;
};

struct RowEnvironment {
  BoundaryMpo top;
  BoundaryMpo bottom;
};

RowEnvironment row_environment(const PepsState& p, std::size_t row, const EnvironmentSpec& spec);

/// Transfer tensors E[t, k, b, bt] (top bond, ket bond, bra bond, bottom
/// bond). Left transfers absorb one column from the left, right transfers from
/// the right. The result is rescaled to unit norm; the log of the factor is
/// returned through `log_scale`.
Tensor transfer_left(const Tensor& e, const Tensor& top, const Tensor& ket, const Tensor& bottom,
                     double* log_scale = nullptr);
Tensor transfer_right(const Tensor& e, const Tensor& top, const Tensor& ket, const Tensor& bottom,
                      double* log_scale = nullptr);
Tensor transfer_edge();

/// Closes top, row and bottom into a number.
NormResult close_row(const RowEnvironment& env, const SandwichRow& row);

/// Norm of the state: boundaries from both edges meet at the middle row.
NormResult norm(const PepsState& p, const EnvironmentSpec& spec);

/// Pieces around a horizontal bond: the row environment plus left and right
/// in-row transfers (columns < col and > col + 1).
struct BondEnvironment {
  RowEnvironment rows;
  Tensor left;
  Tensor right;
  double log_left = 0.0;
  double log_right = 0.0;
};

BondEnvironment bond_environment(const PepsState& p, const Bond& bond, const EnvironmentSpec& spec);

/// Two-site reduced matrix rho[s, s', t, t'] of a horizontal pair, unnormalized.
Tensor pair_density(const BondEnvironment& env, const Tensor& a, const Tensor& b, std::size_t col);

struct NormStudyRow {
  EnvironmentSpec spec;
  double log_norm = 0.0;
  double relative_error = 0.0;
  double wall_ms = 0.0;
};

/// Norm under each spec and its relative deviation from the reference spec.
std::vector<NormStudyRow> norm_error_study(const PepsState& p, const std::vector<EnvironmentSpec>& specs,
                                           const EnvironmentSpec& reference);

/// Row environments for every row of the lattice. Full and separable
/// boundaries are built incrementally from both edges; cluster boundaries
/// reuse the separable prefixes. Rows are processed on up to `workers`
/// threads where they are independent.
std::vector<RowEnvironment> all_row_environments(const PepsState& p, const EnvironmentSpec& spec,
                                                 std::size_t workers = 1);

}  // namespace peps
