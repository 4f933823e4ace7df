#pragma once

#include <array>
#include <string>
#include <vector>

#include "peps/tensor.hpp"

namespace peps {

enum class Orientation { kHorizontal, kVertical };

/// Nearest-neighbor bond. Horizontal joins (row, col)-(row, col+1), vertical
/// joins (row, col)-(row+1, col). The first site is always the upper/left one.
struct Bond {
  std::size_t row = 0;
  std::size_t col = 0;
  Orientation orientation = Orientation::kHorizontal;
  friend bool operator==(const Bond&, const Bond&) = default;
};

/// Ising: H = -sum sz sz - B sum sx. Heisenberg: H = sum S.S with S = sigma/2.
struct HamiltonianSpec {
  enum class Model { kIsing, kHeisenberg };
  Model model = Model::kHeisenberg;
  double field = 0.0;
  std::size_t side = 0;

  static HamiltonianSpec ising(double field, std::size_t side) { return {Model::kIsing, field, side}; }
  static HamiltonianSpec heisenberg(std::size_t side) { return {Model::kHeisenberg, 0.0, side}; }
  std::string label() const;
};

/// All 2L(L-1) bonds: horizontal row-major, then vertical row-major.
std::vector<Bond> all_bonds(std::size_t side);

/// Number of bonds touching a site.
std::size_t coordination(std::size_t side, std::size_t row, std::size_t col);

/// Two-site term as a 4x4 matrix over (s_first s_second). The Ising field of
/// each site is shared evenly among its bonds, so the bond terms sum to H.
Tensor bond_hamiltonian(const HamiltonianSpec& h, const Bond& bond);

struct TrotterGate {
  double tau = 0.0;
  Tensor matrix;  // exp(-tau h_bond), 4x4
  Bond bond;
};

/// Gates of one parity class: horizontal bonds with even/odd left column or
/// vertical bonds with even/odd upper row.
struct GateSet {
  Orientation orientation = Orientation::kHorizontal;
  std::size_t parity = 0;
  std::vector<TrotterGate> gates;
};

/// Order: horizontal-even, horizontal-odd, vertical-even, vertical-odd.
std::array<GateSet, 4> make_gates(const HamiltonianSpec& h, double tau);

/// The same bond after reflecting the lattice across its main diagonal.
Bond transposed_bond(const Bond& b);

}  // namespace peps
