#pragma once

#include <optional>
#include <string>
#include <vector>

#include "peps/environment.hpp"
#include "peps/hamiltonian.hpp"
#include "peps/state.hpp"

namespace peps {

struct BondTerm {
  Bond bond;
  double value = 0.0;
};

struct EnergyReport {
  double energy_per_site = 0.0;
  std::vector<BondTerm> terms;
  std::string spec;
  std::optional<double> reference;
  std::optional<double> relative_error;  // |E - E0| / |E0|
};

/// Sum of bond expectation values over L^2. Each term is a Rayleigh quotient
/// with the norm taken from the same environment.
EnergyReport energy(const PepsState& p, const HamiltonianSpec& h, const EnvironmentSpec& spec,
                    std::size_t workers = 1);

/// Attaches a reference energy and the relative error.
void set_reference(EnergyReport& report, double reference);

std::string to_json(const EnergyReport& report);
/// Per-bond CSV (row, col, orientation, value) with a schema comment line.
std::string to_csv(const EnergyReport& report);

/// H applied to a dense vector; site (r, c) is digit r*L + c, most significant first.
std::vector<double> apply_hamiltonian(const HamiltonianSpec& h, const std::vector<double>& v);

/// <psi|H|psi> / <psi|psi> / L^2 from the exact statevector.
double statevector_energy(const PepsState& p, const HamiltonianSpec& h);

struct GroundState {
  double energy_per_site = 0.0;
  std::vector<double> vector;
  int restarts = 0;
};

/// Restarted Lanczos with full reorthogonalization, matrix-free.
GroundState exact_ground_state(const HamiltonianSpec& h, bool keep_vector = false,
                               std::uint64_t seed = 7);

/// Exact diagonalization for L <= 4, a stored constant for the 10x10
/// Heisenberg model, otherwise std::invalid_argument.
double reference_energy(const HamiltonianSpec& h);

inline constexpr double kHeisenberg10x10Reference = -0.628655;

}  // namespace peps
