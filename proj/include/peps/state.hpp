#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "peps/chain.hpp"
#include "peps/tensor.hpp"

namespace peps {

/// Leg positions of a site tensor.
enum Leg : std::size_t { kPhys = 0, kUp = 1, kLeft = 2, kDown = 3, kRight = 4 };

/// Finite PEPS on an L x L open-boundary square lattice. Site tensors have
/// order (physical, up, left, down, right); legs facing the lattice edge have
/// extent 1. Sites are stored row-major with row 0 at the top.
struct PepsState {
  std::size_t side = 0;
  std::size_t phys_dim = 0;
  std::vector<Tensor> tensors;

  Tensor& at(std::size_t row, std::size_t col) { return tensors[row * side + col]; }
  const Tensor& at(std::size_t row, std::size_t col) const { return tensors[row * side + col]; }
  std::size_t bond_dim() const;
  SandwichRow row(std::size_t r) const;
};

/// Gamma-lambda form. horizontal[r][c] sits on the bond (r,c)-(r,c+1),
/// vertical[r][c] on (r,c)-(r+1,c). Each lambda is a positive diagonal kept
/// nonincreasing with its first entry equal to 1.
struct GammaLambdaState {
  std::size_t side = 0;
  std::size_t phys_dim = 0;
  std::vector<Tensor> gammas;
  std::vector<std::vector<std::vector<double>>> horizontal;  // L x (L-1)
  std::vector<std::vector<std::vector<double>>> vertical;    // (L-1) x L

  Tensor& at(std::size_t row, std::size_t col) { return gammas[row * side + col]; }
  const Tensor& at(std::size_t row, std::size_t col) const { return gammas[row * side + col]; }
  std::size_t bond_dim() const;
};

/// Throws ShapeError when edge legs are not trivial or neighbor bonds disagree.
void validate(const PepsState& p);
void validate(const GammaLambdaState& s);

/// Product state embedded in bond-D tensors. `pattern[site]` is the local
/// amplitude vector (length d). Every entry that is zero in the embedding is
/// replaced by uniform noise in [-amplitude, amplitude].
PepsState product_with_noise(std::size_t side, std::size_t d, std::size_t bond,
                             const std::vector<std::vector<double>>& pattern, std::uint64_t seed,
                             double amplitude);

/// Neel pattern (up on even sublattice) or uniform spin-up, for d = 2.
std::vector<std::vector<double>> neel_pattern(std::size_t side);
std::vector<std::vector<double>> uniform_pattern(std::size_t side, std::vector<double> local);

/// Gamma-lambda state with all lambdas equal to one.
GammaLambdaState to_gamma_lambda(const PepsState& p);

/// Multiplies each Gamma by the square root of its adjacent lambdas.
PepsState absorb_lambdas(const GammaLambdaState& s);

/// Exact coefficient vector; site (r, c) is the (r*L + c)-th most significant
/// digit. Guarded to d^(L^2) <= 2^20.
std::vector<double> peps_to_statevector(const PepsState& p);

/// Reflection across the main diagonal.
PepsState transpose_lattice(const PepsState& p);
GammaLambdaState transpose_lattice(const GammaLambdaState& s);

/// Reflection across the horizontal midline (row r <-> row L-1-r).
PepsState flip_vertical(const PepsState& p);

/// Embeds every bond in extent `bond`, filling new entries with uniform noise.
PepsState grow_bond(const PepsState& p, std::size_t bond, std::uint64_t seed, double amplitude);
GammaLambdaState grow_bond(const GammaLambdaState& s, std::size_t bond, std::uint64_t seed,
                           double amplitude);

/// Rescales every site tensor to unit Frobenius norm.
PepsState normalize_sites(PepsState p);

struct StateProvenance {
  std::uint64_t seed = 0;
  std::string note;
};

/// Writes `dir/manifest.json` and `dir/tensors.bin` (tensor snapshots).
void save_state(const std::filesystem::path& dir, const PepsState& p, const StateProvenance& prov = {});
void save_state(const std::filesystem::path& dir, const GammaLambdaState& s,
                const StateProvenance& prov = {});

struct LoadedState {
  std::string form;  // "plain" or "gamma-lambda"
  PepsState plain;
  GammaLambdaState gamma_lambda;
  StateProvenance provenance;
};
LoadedState load_state(const std::filesystem::path& dir);

}  // namespace peps
