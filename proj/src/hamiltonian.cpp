#include "peps/hamiltonian.hpp"

#include <cmath>
#include <sstream>

#include "peps/linalg.hpp"

namespace peps {

namespace {

// Kronecker product of two 2x2 matrices, first factor most significant.
Tensor kron(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  Tensor k({4, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t q = 0; q < 2; ++q) k[(2 * i + j) * 4 + 2 * p + q] = a[2 * i + p] * b[2 * j + q];
  return k;
}

constexpr std::array<double, 4> kId = {1, 0, 0, 1};
constexpr std::array<double, 4> kX = {0, 1, 1, 0};
constexpr std::array<double, 4> kZ = {1, 0, 0, -1};

}  // namespace

std::string HamiltonianSpec::label() const {
  std::ostringstream os;
  if (model == Model::kIsing) {
    os << "ising(B=" << field << ")";
  } else {
    os << "heisenberg";
  }
  os << " L=" << side;
  return os.str();
}

std::vector<Bond> all_bonds(std::size_t side) {
  std::vector<Bond> out;
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c + 1 < side; ++c) out.push_back({r, c, Orientation::kHorizontal});
  for (std::size_t r = 0; r + 1 < side; ++r)
    for (std::size_t c = 0; c < side; ++c) out.push_back({r, c, Orientation::kVertical});
  return out;
}

std::size_t coordination(std::size_t side, std::size_t row, std::size_t col) {
  std::size_t n = 0;
  if (row > 0) ++n;
  if (row + 1 < side) ++n;
  if (col > 0) ++n;
  if (col + 1 < side) ++n;
  return n;
}

Tensor bond_hamiltonian(const HamiltonianSpec& h, const Bond& bond) {
  if (h.model == HamiltonianSpec::Model::kHeisenberg) {
    // S.S = (XX + YY + ZZ) / 4; the YY product is real.
    Tensor m = kron(kX, kX) + kron(kZ, kZ);
    Tensor yy({4, 4});
    yy.at({0, 3}) = -1.0;
    yy.at({3, 0}) = -1.0;
    yy.at({1, 2}) = 1.0;
    yy.at({2, 1}) = 1.0;
    m += yy;
    m *= 0.25;
    return m;
  }
  const std::size_t r2 = bond.orientation == Orientation::kVertical ? bond.row + 1 : bond.row;
  const std::size_t c2 = bond.orientation == Orientation::kHorizontal ? bond.col + 1 : bond.col;
  const double fa = h.field / static_cast<double>(coordination(h.side, bond.row, bond.col));
  const double fb = h.field / static_cast<double>(coordination(h.side, r2, c2));
  Tensor m = -1.0 * kron(kZ, kZ);
  m -= fa * kron(kX, kId);
  m -= fb * kron(kId, kX);
  return m;
}

std::array<GateSet, 4> make_gates(const HamiltonianSpec& h, double tau) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("make_gates: tau must be finite and non-negative");
  std::array<GateSet, 4> sets;
  sets[0] = {Orientation::kHorizontal, 0, {}};
  sets[1] = {Orientation::kHorizontal, 1, {}};
  sets[2] = {Orientation::kVertical, 0, {}};
  sets[3] = {Orientation::kVertical, 1, {}};
  for (const auto& b : all_bonds(h.side)) {
    const std::size_t parity = (b.orientation == Orientation::kHorizontal ? b.col : b.row) % 2;
    const std::size_t k = (b.orientation == Orientation::kHorizontal ? 0 : 2) + parity;
    sets[k].gates.push_back({tau, expm_symmetric(bond_hamiltonian(h, b), tau), b});
  }
  return sets;
}

Bond transposed_bond(const Bond& b) {
  return {b.col, b.row,
          b.orientation == Orientation::kHorizontal ? Orientation::kVertical : Orientation::kHorizontal};
}

}  // namespace peps
