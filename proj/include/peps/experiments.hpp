#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "peps/evolution.hpp"
#include "peps/observables.hpp"

namespace peps {

/// Malformed or inconsistent experiment input.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Budget { kSmall, kFull };
Budget budget_from_string(const std::string& s);
std::string to_string(Budget b);

using Logger = std::function<void(const std::string&)>;

// ---- experiment configs ----------------------------------------------------------------------

struct InitialSpec {
  std::string kind = "auto";  // auto, neel, up, plus, file
  std::size_t bond = 2;
  double noise = 0.01;
  std::string path;  // state directory for kind == "file"
};

struct ExperimentConfig {
  HamiltonianSpec hamiltonian;
  InitialSpec initial;
  Schedule schedule;
  std::optional<EnvironmentSpec> monitor;
  std::size_t monitor_every = 0;
  std::optional<EnvironmentSpec> final_env;  // default Full{max(64, 2 D^2)}
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;
  std::size_t workers = 1;
  std::optional<double> reference;
  bool record_wall_time = false;  // off keeps reruns byte-identical
};

/// Top-level keys: model, side, initial, schedule, monitor, monitor_every,
/// final_env, seed, checkpoint_every, workers, reference, record_wall_time.
/// Unknown keys throw.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

HamiltonianSpec hamiltonian_from_json(const nlohmann::json& j, std::size_t side);
nlohmann::json to_json(const HamiltonianSpec& h);

/// Product state with noise on the padded entries, or a stored state.
EvolvingState initial_state(const HamiltonianSpec& h, const InitialSpec& init, std::uint64_t seed);

/// Environment for final energies: Full{max(64, 2 D^2)}.
EnvironmentSpec final_energy_spec(std::size_t bond);

// ---- bond-dimension ladders ---------------------------------------------------------------

/// One rung: grow to `bond`, run `fork` (its end seeds the next rung), then
/// `tail` (its end is the reported state).
struct Rung {
  std::size_t bond = 2;
  std::vector<Stage> fork;
  std::vector<Stage> tail;
};

struct RungResult {
  std::size_t bond = 0;
  double energy = 0.0;      // final state under final_energy_spec
  double error_half = 0.0;  // |E(final) - E(half of tail)|
  double error_fork = 0.0;  // |E(final) - E(end of fork)|
  double wall_ms = 0.0;
  EvolvingState final_state;
  EvolvingState fork_state;
};

/// Runs the rungs in order; rung i+1 starts from the fork state of rung i.
std::vector<RungResult> run_ladder(const EvolvingState& start, const std::vector<Rung>& rungs,
                                   const EvolveOptions& options, const Logger& log = {});

// ---- tables -----------------------------------------------------------------------------------

struct TableRow {
  std::string row;
  std::string column;
  double value = 0.0;
  std::optional<double> expected;
  std::optional<double> error_half;
  std::optional<double> error_fork;
  double wall_ms = 0.0;
};

struct TableResult {
  std::string name;
  Budget budget = Budget::kSmall;
  std::vector<TableRow> rows;
  std::vector<std::string> notes;
  const TableRow* find(const std::string& row, const std::string& column) const;
};

/// Known names: T1, A1 ... A7.
TableResult run_table(const std::string& name, Budget budget, std::size_t workers, const Logger& log = {});
std::string to_csv(const TableResult& t);

// Building blocks shared with the acceptance harness.

/// SU ladder on the L x L Heisenberg model.
std::vector<RungResult> su_heisenberg_ladder(std::size_t side, std::size_t max_bond, Budget budget,
                                             const Logger& log = {});

/// Environment-based ladder starting from the D = 2 SU state converged at
/// tau = 0.01. `env_for(D)` picks the environment of each rung.
std::vector<RungResult> env_heisenberg_ladder(std::size_t side, std::size_t max_bond,
                                              const std::function<EnvironmentSpec(std::size_t)>& env_for,
                                              Budget budget, std::size_t workers, const Logger& log = {});

/// SU-then-CU0 Ising run for the bond-weight comparison.
struct BondWeightResult {
  double field = 0.0;
  double lambda2_su = 0.0;
  double lambda2_cu0 = 0.0;
  /// Second local eigenvalue of the separable boundary at the bond, one per
  /// observed position: top boundary of the lower row during its left and
  /// right gates, bottom boundary of the upper row during its left and right gates.
  std::vector<double> sigma2;
  std::vector<std::string> sigma_labels;
  GammaLambdaState su_state;
  PepsState cu0_state;
};
BondWeightResult ising_bond_weights(double field, Budget budget, const Logger& log = {});

/// The 11 x 11 Ising D = 2 SU state used by the bond-weight and norm studies.
GammaLambdaState ising_su_state(double field, Budget budget, const Logger& log = {});

// ---- studies ----------------------------------------------------------------------------------

struct NormRow {
  EnvironmentSpec spec;
  double log_norm = 0.0;
  double eps_n = 0.0;
  double wall_ms = 0.0;
};
std::vector<NormRow> norm_study(const PepsState& p, const std::vector<EnvironmentSpec>& specs,
                                const EnvironmentSpec& reference);

struct FidelityRow {
  EnvironmentSpec spec;
  std::size_t row = 0;
  double distance = 0.0;
  double wall_ms = 0.0;
};
/// Distance of the boundary above `row` to the reference boundary.
std::vector<FidelityRow> fidelity_study(const PepsState& p, std::size_t row,
                                        const std::vector<EnvironmentSpec>& specs,
                                        const EnvironmentSpec& reference);

struct ClusterEnergyRow {
  EnvironmentSpec spec;
  double energy = 0.0;
  double eps_e = 0.0;
  double wall_ms = 0.0;
};
std::vector<ClusterEnergyRow> cluster_energy_study(const PepsState& p, const HamiltonianSpec& h,
                                                   const std::vector<EnvironmentSpec>& specs,
                                                   const EnvironmentSpec& reference, std::size_t workers);

struct ParallelRun {
  EnvironmentSpec spec;
  SweepMode mode = SweepMode::kSequential;
  std::size_t workers = 1;
  std::vector<TraceRow> trace;
  EvolvingState final_state;
};
ParallelRun parallel_run(const EvolvingState& start, const HamiltonianSpec& h, const std::vector<Stage>& stages,
                         const EnvironmentSpec& spec, SweepMode mode, std::size_t workers,
                         const EnvironmentSpec& monitor, std::size_t monitor_every);

struct CostMeasurement {
  std::size_t side = 0;
  std::size_t delta = 0;
  double t_boundary_ms = 0.0;
  double t_update_ms = 0.0;
  double sequential_ms = 0.0;    // one measured sequential full-update sweep
  double parallel_row_ms = 0.0;  // one measured parallel cluster sweep divided by L
  CostPrediction predicted;
};
CostMeasurement measure_cost(const PepsState& p, const HamiltonianSpec& h, std::size_t delta, std::size_t d_prime,
                             std::size_t max_bond);

/// Study inputs: the state (stored or prepared by evolution) plus strategy
/// lists. See configs/ for examples.
struct StudyConfig {
  ExperimentConfig experiment;       // model, initial state and preparation schedule
  std::optional<std::string> state;  // stored state overrides the preparation
  std::vector<EnvironmentSpec> strategies;
  std::optional<EnvironmentSpec> reference;
  std::optional<std::size_t> row;  // fidelity target row, default L/2
  std::vector<Stage> stages;       // parallel: evolution stages, env and mode filled per run
  std::optional<EnvironmentSpec> monitor;
  std::size_t monitor_every = 10;
  std::vector<std::size_t> worker_counts{1, 2};
};
StudyConfig study_config_from_json(const nlohmann::json& j);

/// Writes `<kind>.csv` (and `cost.csv` for kind "parallel") into `out_dir`.
void run_study(const std::string& kind, const StudyConfig& cfg, const std::string& out_dir, std::size_t workers,
               const Logger& log = {});

}  // namespace peps
