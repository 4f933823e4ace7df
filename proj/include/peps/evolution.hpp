#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "peps/environment.hpp"
#include "peps/hamiltonian.hpp"
#include "peps/state.hpp"

namespace peps {

// ---- simple update -------------------------------------------------------------------------

/// One gate on one bond of a gamma-lambda state, truncated to `max_bond`.
/// Vertical bonds are handled through a lattice transpose.
void su_gate_update(GammaLambdaState& s, const TrotterGate& gate, std::size_t max_bond);

/// All four gate sets in order.
void su_step(GammaLambdaState& s, const std::array<GateSet, 4>& sets, std::size_t max_bond);

// ---- environment-based update ----------------------------------------------------------------

struct GateUpdateOptions {
  double tol = 1e-12;  // relative cost change, relative to <phi|N|phi>
  int max_sweeps = 50;
  double solve_cutoff = 1e-10;
};

struct GateUpdateResult {
  Tensor a;  // updated left tensor (phys, up, left, down, right)
  Tensor b;  // updated right tensor
  std::vector<double> bond_spectrum;  // weighted singular values, first = 1
  double cost = 0.0;                  // final distance over <phi|N|phi>
  int sweeps = 0;
};

/// Fixed pieces around a horizontal pair at columns (col, col+1).
struct PairEnvironment {
  Tensor left;  // transfer over columns < col
  Tensor right;  // transfer over columns > col + 1
  Tensor top0, top1, bottom0, bottom1;
};

/// Applies a two-site gate to the pair (a, b) and refits bond dimension
/// `max_bond` in the metric of the environment, working on the reduced
/// (physical + bond) factors of a QR split.
GateUpdateResult gate_update_als(const Tensor& a, const Tensor& b, const Tensor& gate,
                                 const PairEnvironment& env, std::size_t max_bond,
                                 const GateUpdateOptions& options = {});

/// Called after each environment-based update with the bond in lattice
/// coordinates, the weighted bond spectrum and the row environment used.
using GateObserver =
    std::function<void(const Bond& bond, const std::vector<double>& spectrum, const RowEnvironment& env,
                       std::size_t env_col)>;

/// State-level wrapper: environment per `spec`, horizontal or vertical bond.
PepsState gate_update_als(const PepsState& p, const TrotterGate& gate, const EnvironmentSpec& spec,
                          std::size_t max_bond, const GateUpdateOptions& options = {});

/// Applies the gates of a horizontal set that sit on `row` against a fixed
/// row environment. Used for timing single row updates.
void row_update(PepsState& p, std::size_t row, const GateSet& set, const RowEnvironment& env,
                std::size_t max_bond, const GateUpdateOptions& options = {});

enum class SweepMode { kSequential, kParallel };

/// Boundaries of the previous sweep, used to warm-start compressions.
struct SweepCache {
  // [gate set][row][side] -> boundary trail of the cluster part
  std::array<std::vector<std::array<std::vector<BoundaryMpo>, 2>>, 4> trails;
};

struct SweepContext {
  EnvironmentSpec spec;
  std::size_t max_bond = 2;
  SweepMode mode = SweepMode::kSequential;
  std::size_t workers = 1;
  GateUpdateOptions update;
  SweepCache* cache = nullptr;
  GateObserver observer;
};

/// Updates every bond of one gate set. Sequential mode rebuilds top boundaries
/// from already-updated rows; parallel mode updates every row against a
/// snapshot of the state taken at the start of the sweep.
void sweep(PepsState& p, const GateSet& set, std::size_t set_index, const SweepContext& ctx);

// ---- schedules -------------------------------------------------------------------------------

struct Stage {
  std::size_t steps = 0;
  double tau = 0.01;
  std::size_t bond = 2;
  std::optional<EnvironmentSpec> env;  // none: simple update
  SweepMode mode = SweepMode::kSequential;
};

struct Schedule {
  std::vector<Stage> stages;
};

/// Parses {"stages":[{"steps":..,"tau":..,"D":..,"env":..,"mode":..}]}.
/// env is "simple", "separable", {"full":{"dprime":n}},
/// {"cluster":{"delta":k,"dprime":n}} or {"single_layer":{...}}.
Schedule schedule_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Schedule& s);
nlohmann::json spec_to_json(const EnvironmentSpec& s);
EnvironmentSpec spec_from_json(const nlohmann::json& j);

struct TraceRow {
  std::size_t step = 0;
  double tau = 0.0;
  std::size_t bond = 0;
  double energy_per_site = 0.0;
  double wall_ms = 0.0;
};

struct EvolveOptions {
  HamiltonianSpec hamiltonian;
  /// Energy used for monitoring; defaults to Cluster{1, D^2} when unset.
  std::optional<EnvironmentSpec> monitor;
  std::size_t monitor_every = 0;  // 0: only at the end of each stage
  std::size_t workers = 1;
  std::uint64_t growth_seed = 1;
  double growth_noise = 1e-8;
  bool record_wall_time = true;
  GateObserver observer;
  /// Called after every completed step with (global step, state).
  std::function<void(std::size_t, const GammaLambdaState*, const PepsState*)> on_step;
  /// Called with each monitoring row as soon as it is recorded.
  std::function<void(const TraceRow&)> on_record;
};

/// Evolving state: gamma-lambda while running simple update, plain otherwise.
struct EvolvingState {
  std::optional<GammaLambdaState> gamma_lambda;
  std::optional<PepsState> plain;
  PepsState as_plain() const;
  std::size_t bond_dim() const;
};

struct EvolveResult {
  EvolvingState state;
  std::vector<TraceRow> trace;
  std::size_t steps_done = 0;
};

/// Runs the stages in order. `start_step` skips that many global steps
/// (used to resume from a checkpoint). Throws NumericalError with the step
/// number when a tensor becomes non-finite.
EvolveResult evolve(EvolvingState initial, const Schedule& schedule, const EvolveOptions& options,
                    std::size_t start_step = 0);

// ---- cost model ----------------------------------------------------------------------------------

struct CostPrediction {
  double sequential = 0.0;    // full update sweep
  double parallel_row = 0.0;  // one row update in the parallel cluster scheme
  double speedup = 0.0;
};

/// Sequential full update 2(L-2) t_B + L t_U; parallel row 2(delta-1) t_B + t_U
/// (t_U alone for delta <= 1).
CostPrediction cost_model(std::size_t side, std::size_t delta, double t_boundary, double t_update);

}  // namespace peps
