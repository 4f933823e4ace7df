#include "peps/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peps/io.hpp"

namespace peps {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

std::size_t get_count(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + ": '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_real(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where + ": '" + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(where + ": '" + key + "' must be finite");
  return x;
}

EnvironmentSpec env_from(const json& j, const std::string& where) {
  try {
    return spec_from_json(j);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

std::string opt_real(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

Stage stage(std::size_t steps, double tau, std::size_t bond, std::optional<EnvironmentSpec> env = std::nullopt,
            SweepMode mode = SweepMode::kSequential) {
  return Stage{steps, tau, bond, std::move(env), mode};
}

std::size_t total_steps(const std::vector<Stage>& stages) {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

EvolvingState snapshot(const GammaLambdaState* gl, const PepsState* plain) {
  EvolvingState s;
  if (gl) s.gamma_lambda = *gl;
  if (plain) s.plain = *plain;
  return s;
}

// Step counts for the D = 2 SU preparation and the environment rungs.
struct LadderCounts {
  std::size_t su_coarse, su_mid, su_fine;  // D = 2 SU: tau 0.1, 0.01, 0.001
  std::size_t su_grow_mid, su_grow_fine;   // larger D SU rungs
  std::size_t env_mid, env_fine;           // environment rungs, D <= 5
  std::size_t env_mid_big, env_fine_big;   // environment rungs, D >= 6
};

LadderCounts counts_for(Budget b) {
  if (b == Budget::kFull) return {1000, 2000, 8000, 2000, 8000, 1000, 2000, 500, 1000};
  return {1000, 2000, 2000, 2000, 2000, 1000, 1000, 500, 500};
}

}  // namespace

// ---- budgets ----------------------------------------------------------------------------------

Budget budget_from_string(const std::string& s) {
  if (s == "small") return Budget::kSmall;
  if (s == "full") return Budget::kFull;
  throw ConfigError("budget must be 'small' or 'full', got '" + s + "'");
}

std::string to_string(Budget b) { return b == Budget::kSmall ? "small" : "full"; }

// ---- configs ------------------------------------------------------------------------------------

HamiltonianSpec hamiltonian_from_json(const json& j, std::size_t side) {
  check_keys(j, {"name", "field"}, "model");
  const auto name = j.at("name").get<std::string>();
  if (name == "heisenberg") {
    if (j.contains("field")) throw ConfigError("model: the Heisenberg model takes no field");
    return HamiltonianSpec::heisenberg(side);
  }
  if (name == "ising") return HamiltonianSpec::ising(j.contains("field") ? get_real(j, "field", "model") : 0.0, side);
  throw ConfigError("model: unknown name '" + name + "'");
}

json to_json(const HamiltonianSpec& h) {
  if (h.model == HamiltonianSpec::Model::kHeisenberg) return {{"name", "heisenberg"}};
  return {{"name", "ising"}, {"field", h.field}};
}

ExperimentConfig config_from_json(const json& j) {
  try {
    check_keys(j,
               {"model", "side", "initial", "schedule", "monitor", "monitor_every", "final_env", "seed",
                "checkpoint_every", "workers", "reference", "record_wall_time"},
               "config");
    ExperimentConfig c;
    const std::size_t side = get_count(j, "side", "config");
    if (side < 2) throw ConfigError("config: side must be at least 2");
    c.hamiltonian = hamiltonian_from_json(j.at("model"), side);
    if (j.contains("initial")) {
      const auto& i = j.at("initial");
      check_keys(i, {"kind", "bond", "noise", "path"}, "initial");
      if (i.contains("kind")) c.initial.kind = i.at("kind").get<std::string>();
      if (i.contains("bond")) c.initial.bond = get_count(i, "bond", "initial");
      if (i.contains("noise")) c.initial.noise = get_real(i, "noise", "initial");
      if (i.contains("path")) c.initial.path = i.at("path").get<std::string>();
      const auto& k = c.initial.kind;
      if (k != "auto" && k != "neel" && k != "up" && k != "plus" && k != "file") {
        throw ConfigError("initial: unknown kind '" + k + "'");
      }
      if (k == "file" && c.initial.path.empty()) throw ConfigError("initial: kind 'file' needs a path");
      if (c.initial.bond == 0) throw ConfigError("initial: bond must be positive");
      if (c.initial.noise < 0.0) throw ConfigError("initial: noise must be non-negative");
    }
    try {
      c.schedule = schedule_from_json(j.at("schedule"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (j.contains("monitor")) c.monitor = env_from(j.at("monitor"), "monitor");
    if (j.contains("monitor_every")) c.monitor_every = get_count(j, "monitor_every", "config");
    if (j.contains("final_env")) c.final_env = env_from(j.at("final_env"), "final_env");
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) throw ConfigError("config: seed must be an unsigned integer");
      c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("checkpoint_every")) c.checkpoint_every = get_count(j, "checkpoint_every", "config");
    if (j.contains("workers")) c.workers = std::max<std::size_t>(1, get_count(j, "workers", "config"));
    if (j.contains("reference")) {
      if (j.at("reference").is_string()) {
        if (j.at("reference").get<std::string>() != "exact") throw ConfigError("config: reference must be a number or \"exact\"");
        try {
          c.reference = reference_energy(c.hamiltonian);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("config: ") + e.what());
        }
      } else {
        c.reference = get_real(j, "reference", "config");
      }
    }
    if (j.contains("record_wall_time")) {
      if (!j.at("record_wall_time").is_boolean()) throw ConfigError("config: record_wall_time must be a boolean");
      c.record_wall_time = j.at("record_wall_time").get<bool>();
    }
    for (const auto& s : c.schedule.stages) {
      if (c.initial.kind != "file" && s.bond < c.initial.bond) {
        throw ConfigError("config: schedule bond dimension below the initial bond dimension");
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = to_json(c.hamiltonian);
  j["side"] = c.hamiltonian.side;
  j["initial"] = {{"kind", c.initial.kind}, {"bond", c.initial.bond}, {"noise", c.initial.noise}};
  if (!c.initial.path.empty()) j["initial"]["path"] = c.initial.path;
  j["schedule"] = to_json(c.schedule);
  if (c.monitor) j["monitor"] = spec_to_json(*c.monitor);
  j["monitor_every"] = c.monitor_every;
  if (c.final_env) j["final_env"] = spec_to_json(*c.final_env);
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["workers"] = c.workers;
  if (c.reference) j["reference"] = *c.reference;
  j["record_wall_time"] = c.record_wall_time;
  return j;
}

EvolvingState initial_state(const HamiltonianSpec& h, const InitialSpec& init, std::uint64_t seed) {
  EvolvingState s;
  const auto L = h.side;
  std::string kind = init.kind;
  if (kind == "auto") kind = h.model == HamiltonianSpec::Model::kHeisenberg ? "neel" : "up";
  if (kind == "file") {
    auto loaded = load_state(init.path);
    if (loaded.form == "plain") {
      if (loaded.plain.side != L) throw ConfigError("initial: stored state has the wrong side");
      s.plain = std::move(loaded.plain);
    } else {
      if (loaded.gamma_lambda.side != L) throw ConfigError("initial: stored state has the wrong side");
      s.gamma_lambda = std::move(loaded.gamma_lambda);
    }
    return s;
  }
  std::vector<std::vector<double>> pattern;
  const double r = std::sqrt(0.5);
  if (kind == "neel") pattern = neel_pattern(L);
  else if (kind == "up") pattern = uniform_pattern(L, {1.0, 0.0});
  else if (kind == "plus") pattern = uniform_pattern(L, {r, r});
  else throw ConfigError("initial: unknown kind '" + kind + "'");
  s.plain = product_with_noise(L, 2, init.bond, pattern, seed, init.noise);
  return s;
}

EnvironmentSpec final_energy_spec(std::size_t bond) {
  return EnvironmentSpec::full(std::max<std::size_t>(64, 2 * bond * bond));
}

// ---- ladders ------------------------------------------------------------------------------------

std::vector<RungResult> run_ladder(const EvolvingState& start, const std::vector<Rung>& rungs,
                                   const EvolveOptions& options, const Logger& log) {
  std::vector<RungResult> out;
  EvolvingState cur = start;
  const auto& h = options.hamiltonian;
  for (const auto& rung : rungs) {
    const auto t0 = Clock::now();
    EvolveOptions o = options;
    o.growth_seed = options.growth_seed + 1000 * rung.bond;
    o.on_step = nullptr;
    Schedule fork{rung.fork};
    auto fr = evolve(cur, fork, o);
    say(log, "D=" + std::to_string(rung.bond) + " fork done after " + std::to_string(fr.steps_done) + " steps");

    const std::size_t half = total_steps(rung.tail) / 2;
    std::optional<EvolvingState> half_state;
    o.growth_seed = options.growth_seed + 1000 * rung.bond + 500;
    o.on_step = [&](std::size_t k, const GammaLambdaState* gl, const PepsState* plain) {
      if (k == half) half_state = snapshot(gl, plain);
    };
    EvolveResult tr;
    if (rung.tail.empty()) {
      tr.state = fr.state;
    } else {
      tr = evolve(fr.state, Schedule{rung.tail}, o);
    }
    RungResult res;
    res.bond = rung.bond;
    const auto spec = final_energy_spec(rung.bond);
    res.energy = energy(tr.state.as_plain(), h, spec, options.workers).energy_per_site;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.error_half = half_state && half > 0
                         ? std::abs(res.energy - energy(half_state->as_plain(), h, spec, options.workers).energy_per_site)
                         : nan;
    res.error_fork = rung.tail.empty()
                         ? nan
                         : std::abs(res.energy - energy(fr.state.as_plain(), h, spec, options.workers).energy_per_site);
    res.wall_ms = since_ms(t0);
    res.final_state = std::move(tr.state);
    res.fork_state = fr.state;
    say(log, "D=" + std::to_string(rung.bond) + " E=" + format_real(res.energy) + " (" +
                 std::to_string(static_cast<long>(res.wall_ms)) + " ms)");
    out.push_back(std::move(res));
    cur = std::move(fr.state);
  }
  return out;
}

std::vector<RungResult> su_heisenberg_ladder(std::size_t side, std::size_t max_bond, Budget budget,
                                             const Logger& log) {
  const auto h = HamiltonianSpec::heisenberg(side);
  const auto n = counts_for(budget);
  std::vector<Rung> rungs;
  rungs.push_back({2, {stage(n.su_coarse, 0.1, 2), stage(n.su_mid, 0.01, 2)}, {stage(n.su_fine, 0.001, 2)}});
  for (std::size_t D = 3; D <= max_bond; ++D) {
    rungs.push_back({D, {stage(n.su_grow_mid, 0.01, D)}, {stage(n.su_grow_fine, 0.001, D)}});
  }
  EvolveOptions o;
  o.hamiltonian = h;
  o.record_wall_time = false;
  return run_ladder(initial_state(h, {}, 1), rungs, o, log);
}

std::vector<RungResult> env_heisenberg_ladder(std::size_t side, std::size_t max_bond,
                                              const std::function<EnvironmentSpec(std::size_t)>& env_for,
                                              Budget budget, std::size_t workers, const Logger& log) {
  const auto h = HamiltonianSpec::heisenberg(side);
  const auto n = counts_for(budget);
  EvolveOptions o;
  o.hamiltonian = h;
  o.record_wall_time = false;
  o.workers = workers;
  // Converged D = 2 SU state at tau = 0.01.
  Schedule prep{{stage(n.su_coarse, 0.1, 2), stage(n.su_mid, 0.01, 2)}};
  auto start = evolve(initial_state(h, {}, 1), prep, o).state;
  say(log, "SU preparation done");
  std::vector<Rung> rungs;
  for (std::size_t D = 2; D <= max_bond; ++D) {
    const auto env = env_for(D);
    const bool big = D >= 6;
    rungs.push_back({D,
                     {stage(big ? n.env_mid_big : n.env_mid, 0.01, D, env)},
                     {stage(big ? n.env_fine_big : n.env_fine, 0.001, D, env)}});
  }
  return run_ladder(start, rungs, o, log);
}

// ---- bond weights on the Ising model -------------------------------------------------------------

namespace {

constexpr std::size_t kIsingSide = 11;
constexpr std::size_t kBondRow = 4;  // vertical bond (4, 5)-(5, 5), zero based
constexpr std::size_t kBondCol = 5;

struct IsingCounts {
  std::size_t su_coarse, su_fine, cu0;
};

IsingCounts ising_counts(Budget b) {
  if (b == Budget::kFull) return {10000, 10000, 10000};
  return {1000, 1000, 300};
}

}  // namespace

GammaLambdaState ising_su_state(double field, Budget budget, const Logger& log) {
  const auto h = HamiltonianSpec::ising(field, kIsingSide);
  const auto n = ising_counts(budget);
  EvolveOptions o;
  o.hamiltonian = h;
  o.record_wall_time = false;
  o.monitor = EnvironmentSpec::separable();
  Schedule s{{stage(n.su_coarse, 0.1, 2), stage(n.su_fine, 0.01, 2)}};
  auto r = evolve(initial_state(h, {"up", 2, 0.01, ""}, 1), s, o);
  say(log, "Ising B=" + format_real(field) + " SU done, monitor E=" + format_real(r.trace.back().energy_per_site));
  return *r.state.gamma_lambda;
}

BondWeightResult ising_bond_weights(double field, Budget budget, const Logger& log) {
  BondWeightResult out;
  out.field = field;
  out.su_state = ising_su_state(field, budget, log);
  const auto& lam = out.su_state.vertical[kBondRow][kBondCol];
  out.lambda2_su = lam.size() > 1 ? lam[1] / lam[0] : 0.0;

  const auto h = HamiltonianSpec::ising(field, kIsingSide);
  const auto n = ising_counts(budget);
  out.sigma_labels = {"top of row 5, gate (5,4)-(5,5)", "top of row 5, gate (5,5)-(5,6)",
                      "bottom of row 4, gate (4,4)-(4,5)", "bottom of row 4, gate (4,5)-(4,6)"};
  out.sigma2.assign(4, std::numeric_limits<double>::quiet_NaN());
  EvolveOptions o;
  o.hamiltonian = h;
  o.record_wall_time = false;
  o.monitor = EnvironmentSpec::separable();
  o.observer = [&](const Bond& b, const std::vector<double>& spectrum, const RowEnvironment& env, std::size_t) {
    auto second = [](const std::vector<double>& v) { return v.size() > 1 ? v[1] / v[0] : 0.0; };
    if (b.orientation == Orientation::kVertical && b.row == kBondRow && b.col == kBondCol) {
      out.lambda2_cu0 = second(spectrum);
      return;
    }
    if (b.orientation != Orientation::kHorizontal) return;
    if (b.col + 1 != kBondCol && b.col != kBondCol) return;
    const std::size_t k = b.col == kBondCol ? 1 : 0;
    if (b.row == kBondRow + 1) out.sigma2[k] = second(local_spectrum(env.top, kBondCol));
    if (b.row == kBondRow) out.sigma2[2 + k] = second(local_spectrum(env.bottom, kBondCol));
  };
  EvolvingState s;
  s.gamma_lambda = out.su_state;
  Schedule cu{{stage(n.cu0, 0.01, 2, EnvironmentSpec::separable())}};
  auto r = evolve(s, cu, o);
  out.cu0_state = r.state.as_plain();
  say(log, "Ising B=" + format_real(field) + " CU0 done: lambda2 SU " + format_real(out.lambda2_su) + ", CU0 " +
               format_real(out.lambda2_cu0));
  return out;
}

// ---- tables -------------------------------------------------------------------------------------

const TableRow* TableResult::find(const std::string& row, const std::string& column) const {
  for (const auto& r : rows)
    if (r.row == row && r.column == column) return &r;
  return nullptr;
}

namespace {

using ExpectedColumn = std::vector<std::pair<std::size_t, double>>;  // (D, value)

std::optional<double> lookup(const ExpectedColumn& col, std::size_t D) {
  for (const auto& [d, v] : col)
    if (d == D) return v;
  return std::nullopt;
}

const ExpectedColumn kSu4{{2, -0.54404}, {3, -0.55396}, {4, -0.56281}, {5, -0.56628},
                       {6, -0.56684}, {7, -0.56696}, {8, -0.56715}};
const ExpectedColumn kSu10{{2, -0.61281}, {3, -0.61846}, {4, -0.62382}, {5, -0.62520},
                        {6, -0.62541}, {7, -0.62537}, {8, -0.62538}};
const ExpectedColumn kCu0_4{{2, -0.54404}, {3, -0.55397}, {4, -0.56287}, {5, -0.56637}, {6, -0.56694}, {7, -0.56706}};
const ExpectedColumn kCu0_10{{2, -0.61280}, {3, -0.61846}, {4, -0.62382}, {5, -0.62521}, {6, -0.62541}};
const ExpectedColumn kCu1_4{{2, -0.54458}, {3, -0.5605}, {4, -0.56999}, {5, -0.57238}, {6, -0.57153}, {7, -0.57194}};
const ExpectedColumn kCu1_10{{2, -0.61310}, {3, -0.62007}, {4, -0.62583}, {5, -0.62667}, {6, -0.6264}};
// Full update: D' = D^2 and D' = 2 D^2.
const ExpectedColumn kFuSq4{{2, -0.54458}, {3, -0.56101}, {4, -0.5738}, {5, -0.57408}, {6, -0.57418}, {7, -0.57408}};
const ExpectedColumn kFuTw4{{2, -0.54458}, {3, -0.5612}, {4, -0.5739}, {5, -0.57410}, {6, -0.57419}, {7, -0.57419}};
const ExpectedColumn kFuSq10{{2, -0.61310}, {3, -0.62002}, {4, -0.62636}, {5, -0.62732}, {6, -0.62751}};
const ExpectedColumn kFuTw10{{2, -0.61310}, {3, -0.62000}, {4, -0.62637}, {5, -0.62739}, {6, -0.62770}};

void add_rungs(TableResult& t, const std::vector<RungResult>& rungs, const std::string& column,
               const ExpectedColumn& expected, const std::string& row_suffix = "") {
  for (const auto& r : rungs) {
    TableRow row;
    row.row = "D=" + std::to_string(r.bond) + row_suffix;
    row.column = column;
    row.value = r.energy;
    row.expected = lookup(expected, r.bond);
    if (std::isfinite(r.error_half)) row.error_half = r.error_half;
    if (std::isfinite(r.error_fork)) row.error_fork = r.error_fork;
    row.wall_ms = r.wall_ms;
    t.rows.push_back(row);
  }
}

std::vector<std::size_t> sides_for(Budget b) {
  return b == Budget::kSmall ? std::vector<std::size_t>{4} : std::vector<std::size_t>{4, 10};
}

std::string side_label(std::size_t L) { return std::to_string(L) + "x" + std::to_string(L); }

// 10 x 10 runs from the converged SU state at fixed D (Tables A5, A6).
TableResult run_ten_by_ten(const std::string& name, Budget budget, std::size_t workers, const Logger& log) {
  TableResult t;
  t.name = name;
  t.budget = budget;
  if (budget == Budget::kSmall) {
    t.notes.push_back("10x10 rows run at full budget only");
    return t;
  }
  const std::size_t L = 10;
  const auto h = HamiltonianSpec::heisenberg(L);
  const std::size_t D = name == "A5" ? 2 : 4;
  auto su = su_heisenberg_ladder(L, D, budget, log);
  const EvolvingState start = su.back().fork_state;
  EvolveOptions o;
  o.hamiltonian = h;
  o.record_wall_time = false;
  o.workers = workers;
  struct Column {
    std::string label;
    std::function<EnvironmentSpec(std::size_t)> env;
    std::size_t mid, fine;
    std::vector<std::pair<std::size_t, double>> expected;  // (D', value)
  };
  std::vector<Column> cols;
  std::vector<std::size_t> dprimes;
  if (D == 2) {
    dprimes = {1, 2, 3, 4, 100};
    cols.push_back({"CU1", [](std::size_t d) { return EnvironmentSpec::cluster(1, d); }, 1000, 2000,
                    {{1, -0.61280}, {2, -0.61290}, {3, -0.61307}, {4, -0.61310}}});
    cols.push_back({"FU", [](std::size_t d) { return EnvironmentSpec::full(d); }, 1000, 2000,
                    {{1, -0.61280}, {2, -0.61289}, {3, -0.61307}, {4, -0.61310}, {100, -0.61310}}});
  } else {
    dprimes = {1, 2, 4, 12, 16, 20, 32};
    const std::vector<std::vector<double>> v{
        {-0.62382, -0.62481, -0.62513, -0.62583, -0.62583},
        {-0.62382, -0.62501, -0.62583, -0.62623, -0.62623, -0.62624},
        {-0.62382, -0.62506, -0.62600, -0.62631, -0.62632, -0.62632},
        {-0.62382, -0.62504, -0.62607, -0.62634, -0.62635, -0.62635},
        {-0.62382, -0.62508, -0.62602, -0.62635, -0.62636, -0.62636, -0.62637}};
    for (std::size_t k = 0; k < 5; ++k) {
      Column c;
      c.label = k < 4 ? "CU" + std::to_string(k + 1) : "FU";
      if (k < 4) c.env = [k](std::size_t d) { return EnvironmentSpec::cluster(k + 1, d); };
      else c.env = [](std::size_t d) { return EnvironmentSpec::full(d); };
      c.mid = k == 0 ? 1000 : (k == 1 ? 1000 : 500);
      c.fine = k == 0 ? 2000 : 1000;
      for (std::size_t i = 0; i < v[k].size(); ++i) c.expected.push_back({dprimes[i], v[k][i]});
      cols.push_back(c);
    }
  }
  for (const auto& c : cols) {
    for (const auto& [dp, ref] : c.expected) {
      const auto env = c.env(dp);
      Rung rung{D, {stage(c.mid, 0.01, D, env)}, {stage(c.fine, 0.001, D, env)}};
      auto res = run_ladder(start, {rung}, o, log);
      TableRow row;
      row.row = "D'=" + std::to_string(dp);
      row.column = c.label;
      row.value = res[0].energy;
      row.expected = ref;
      row.error_half = res[0].error_half;
      row.error_fork = res[0].error_fork;
      row.wall_ms = res[0].wall_ms;
      t.rows.push_back(row);
    }
  }
  return t;
}

}  // namespace

TableResult run_table(const std::string& name, Budget budget, std::size_t workers, const Logger& log) {
  TableResult t;
  t.name = name;
  t.budget = budget;
  const std::size_t max_d = budget == Budget::kSmall ? 4 : 0;
  auto cap = [&](std::size_t full_cap) { return max_d ? std::min(max_d, full_cap) : full_cap; };
  if (name == "A1") {
    for (auto L : sides_for(budget)) {
      add_rungs(t, su_heisenberg_ladder(L, cap(8), budget, log), side_label(L), L == 4 ? kSu4 : kSu10);
    }
  } else if (name == "A2" || name == "A3") {
    const bool cu0 = name == "A2";
    for (auto L : sides_for(budget)) {
      auto env = cu0 ? std::function<EnvironmentSpec(std::size_t)>([](std::size_t) { return EnvironmentSpec::separable(); })
                     : std::function<EnvironmentSpec(std::size_t)>(
                           [](std::size_t D) { return EnvironmentSpec::cluster(1, D * D); });
      const std::size_t top = L == 4 ? 7 : 6;
      add_rungs(t, env_heisenberg_ladder(L, cap(top), env, budget, workers, log), side_label(L),
                L == 4 ? (cu0 ? kCu0_4 : kCu1_4) : (cu0 ? kCu0_10 : kCu1_10));
    }
  } else if (name == "A4") {
    for (auto L : sides_for(budget)) {
      const std::size_t top = L == 4 ? 7 : 6;
      auto sq = env_heisenberg_ladder(
          L, cap(top), [](std::size_t D) { return EnvironmentSpec::full(D * D); }, budget, workers, log);
      // Small budget: the doubled D' ladder only at D = 2.
      const auto tw = env_heisenberg_ladder(
          L, budget == Budget::kSmall ? 2 : top, [](std::size_t D) { return EnvironmentSpec::full(2 * D * D); },
          budget, workers, log);
      for (const auto& r : sq) {
        const std::size_t D = r.bond;
        add_rungs(t, {r}, side_label(L), L == 4 ? kFuSq4 : kFuSq10, ",D'=" + std::to_string(D * D));
        for (const auto& q : tw)
          if (q.bond == D)
            add_rungs(t, {q}, side_label(L), L == 4 ? kFuTw4 : kFuTw10, ",D'=" + std::to_string(2 * D * D));
      }
    }
  } else if (name == "A5" || name == "A6") {
    return run_ten_by_ten(name, budget, workers, log);
  } else if (name == "A7") {
    const auto t0 = Clock::now();
    TableRow exact;
    exact.row = "Heisenberg";
    exact.column = "4x4 exact";
    exact.value = exact_ground_state(HamiltonianSpec::heisenberg(4)).energy_per_site;
    exact.expected = -0.57432544;
    exact.wall_ms = since_ms(t0);
    t.rows.push_back(exact);
    TableRow qmc;
    qmc.row = "Heisenberg";
    qmc.column = "10x10 stored";
    qmc.value = reference_energy(HamiltonianSpec::heisenberg(10));
    qmc.expected = kHeisenberg10x10Reference;
    t.rows.push_back(qmc);
    t.notes.push_back("10x10 value is a stored Monte Carlo constant, not recomputed");
  } else if (name == "T1") {
    const std::vector<double> su{0.006007, 0.026032, 0.078572, 0.071486};
    const std::vector<double> cu{0.006022, 0.026252, 0.078953, 0.071210};
    for (std::size_t k = 0; k < 4; ++k) {
      const double B = static_cast<double>(k + 1);
      const auto t0 = Clock::now();
      auto r = ising_bond_weights(B, budget, log);
      const double ms = since_ms(t0);
      const std::string col = "B=" + format_real(B);
      t.rows.push_back({"lambda2_SU", col, r.lambda2_su, su[k], {}, {}, ms});
      t.rows.push_back({"lambda2_CU0", col, r.lambda2_cu0, cu[k], {}, {}, 0.0});
      for (std::size_t i = 0; i < r.sigma2.size(); ++i) {
        t.rows.push_back({"Sigma2_CU0 " + r.sigma_labels[i], col, r.sigma2[i], std::nullopt, {}, {}, 0.0});
      }
    }
    t.notes.push_back("bond: vertical, rows 5-6, column 6 (one based); Sigma2 seen at four of six positions");
  } else {
    throw ConfigError("unknown table '" + name + "'");
  }
  if (budget == Budget::kSmall) t.notes.push_back("small budget: 4x4 rows, D <= 4, reduced step counts");
  return t;
}

std::string to_csv(const TableResult& t) {
  std::ostringstream os;
  os << "# schema: peps-table/1; table=" << t.name << "; budget=" << to_string(t.budget);
  for (const auto& n : t.notes) os << "; " << n;
  os << "\n";
  os << "row,column,value,expected,abs_delta,error_half,error_fork,wall_ms\n";
  for (const auto& r : t.rows) {
    const std::string delta = r.expected ? format_real(std::abs(r.value - *r.expected)) : std::string();
    os << '"' << r.row << "\",\"" << r.column << "\"," << format_real(r.value) << ',' << opt_real(r.expected) << ','
       << delta << ',' << opt_real(r.error_half) << ',' << opt_real(r.error_fork) << ','
       << format_real(r.wall_ms) << '\n';
  }
  return os.str();
}

// ---- studies ------------------------------------------------------------------------------------

std::vector<NormRow> norm_study(const PepsState& p, const std::vector<EnvironmentSpec>& specs,
                                const EnvironmentSpec& reference) {
  std::vector<EnvironmentSpec> all{reference};
  all.insert(all.end(), specs.begin(), specs.end());
  auto rows = norm_error_study(p, all, reference);
  std::vector<NormRow> out;
  for (const auto& r : rows) out.push_back({r.spec, r.log_norm, r.relative_error, r.wall_ms});
  return out;
}

std::vector<FidelityRow> fidelity_study(const PepsState& p, std::size_t row, const std::vector<EnvironmentSpec>& specs,
                                        const EnvironmentSpec& reference) {
  const auto ref = boundary_for_row(p, row, Side::kAbove, reference);
  std::vector<FidelityRow> out;
  std::vector<EnvironmentSpec> all{reference};
  all.insert(all.end(), specs.begin(), specs.end());
  for (const auto& s : all) {
    const auto t0 = Clock::now();
    const auto b = boundary_for_row(p, row, Side::kAbove, s);
    out.push_back({s, row, fidelity_distance(b, ref), since_ms(t0)});
  }
  return out;
}

std::vector<ClusterEnergyRow> cluster_energy_study(const PepsState& p, const HamiltonianSpec& h,
                                                   const std::vector<EnvironmentSpec>& specs,
                                                   const EnvironmentSpec& reference, std::size_t workers) {
  std::vector<ClusterEnergyRow> out;
  std::vector<EnvironmentSpec> all{reference};
  all.insert(all.end(), specs.begin(), specs.end());
  double ref = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto t0 = Clock::now();
    const double e = energy(p, h, all[i], workers).energy_per_site;
    if (i == 0) ref = e;
    out.push_back({all[i], e, std::abs(e - ref) / std::abs(ref), since_ms(t0)});
  }
  return out;
}

ParallelRun parallel_run(const EvolvingState& start, const HamiltonianSpec& h, const std::vector<Stage>& stages,
                         const EnvironmentSpec& spec, SweepMode mode, std::size_t workers,
                         const EnvironmentSpec& monitor, std::size_t monitor_every) {
  Schedule s;
  for (auto st : stages) {
    st.env = spec;
    st.mode = mode;
    s.stages.push_back(st);
  }
  EvolveOptions o;
  o.hamiltonian = h;
  o.monitor = monitor;
  o.monitor_every = monitor_every;
  o.workers = workers;
  o.record_wall_time = false;
  auto r = evolve(start, s, o);
  return {spec, mode, workers, std::move(r.trace), std::move(r.state)};
}

CostMeasurement measure_cost(const PepsState& p, const HamiltonianSpec& h, std::size_t delta, std::size_t d_prime,
                             std::size_t max_bond) {
  CostMeasurement m;
  const auto L = p.side;
  m.side = L;
  m.delta = delta;
  const auto sets = make_gates(h, 0.01);
  AlsOptions als{1e-10, 100, false};
  // t_B: one boundary step, averaged over the rows.
  {
    const auto t0 = Clock::now();
    BoundaryMpo b = BoundaryMpo::trivial(L);
    for (std::size_t r = 0; r + 1 < L; ++r) b = apply_row_compress(b, p.row(r), d_prime, als).boundary;
    m.t_boundary_ms = since_ms(t0) / static_cast<double>(L - 1);
  }
  // t_U: one row of horizontal gates against a fixed environment.
  {
    const std::size_t r = L / 2;
    const auto env = row_environment(p, r, EnvironmentSpec::full(d_prime));
    PepsState q = p;
    const auto t0 = Clock::now();
    row_update(q, r, sets[0], env, max_bond);
    m.t_update_ms = since_ms(t0);
  }
  {
    PepsState q = p;
    SweepContext ctx;
    ctx.spec = EnvironmentSpec::full(d_prime);
    ctx.max_bond = max_bond;
    const auto t0 = Clock::now();
    sweep(q, sets[0], 0, ctx);
    m.sequential_ms = since_ms(t0);
  }
  {
    PepsState q = p;
    SweepContext ctx;
    ctx.spec = EnvironmentSpec::cluster(delta, d_prime);
    ctx.max_bond = max_bond;
    ctx.mode = SweepMode::kParallel;
    const auto t0 = Clock::now();
    sweep(q, sets[0], 0, ctx);
    m.parallel_row_ms = since_ms(t0) / static_cast<double>(L);
  }
  m.predicted = cost_model(L, delta, m.t_boundary_ms, m.t_update_ms);
  return m;
}

StudyConfig study_config_from_json(const json& j) {
  try {
    check_keys(j,
               {"model", "side", "initial", "schedule", "seed", "state", "strategies", "reference", "row", "stages",
                "monitor", "monitor_every", "workers", "worker_counts"},
               "study");
    StudyConfig c;
    json base = {{"model", j.at("model")}, {"side", j.at("side")}};
    base["schedule"] = j.contains("schedule") ? j.at("schedule") : json{{"stages", json::array()}};
    if (j.contains("initial")) base["initial"] = j.at("initial");
    if (j.contains("seed")) base["seed"] = j.at("seed");
    if (j.contains("workers")) base["workers"] = j.at("workers");
    c.experiment = config_from_json(base);
    if (j.contains("state")) c.state = j.at("state").get<std::string>();
    if (j.contains("strategies")) {
      if (!j.at("strategies").is_array()) throw ConfigError("study: strategies must be an array");
      for (const auto& s : j.at("strategies")) c.strategies.push_back(env_from(s, "study.strategies"));
    }
    if (j.contains("reference")) c.reference = env_from(j.at("reference"), "study.reference");
    if (j.contains("row")) c.row = get_count(j, "row", "study");
    if (j.contains("stages")) {
      json sj{{"stages", j.at("stages")}};
      for (auto& st : sj["stages"])
        if (!st.contains("env")) st["env"] = "separable";  // placeholder, replaced per run
      try {
        for (auto st : schedule_from_json(sj).stages) c.stages.push_back(st);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("study.stages: ") + e.what());
      }
    }
    if (j.contains("monitor")) c.monitor = env_from(j.at("monitor"), "study.monitor");
    if (j.contains("monitor_every")) c.monitor_every = get_count(j, "monitor_every", "study");
    if (j.contains("worker_counts")) {
      c.worker_counts.clear();
      for (const auto& w : j.at("worker_counts")) {
        if (!w.is_number_unsigned() || w.get<std::size_t>() == 0) throw ConfigError("study: bad worker count");
        c.worker_counts.push_back(w.get<std::size_t>());
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("study: ") + e.what());
  }
}

namespace {

std::string spec_columns(const EnvironmentSpec& s) {
  std::ostringstream os;
  std::string kind;
  switch (s.kind) {
    case EnvironmentSpec::Kind::kFull: kind = "full"; break;
    case EnvironmentSpec::Kind::kCluster: kind = "cluster"; break;
    case EnvironmentSpec::Kind::kSeparable: kind = "separable"; break;
    case EnvironmentSpec::Kind::kSingleLayer: kind = "single_layer"; break;
  }
  const bool sl = s.kind == EnvironmentSpec::Kind::kSingleLayer;
  const bool has_dp = s.kind == EnvironmentSpec::Kind::kFull || s.kind == EnvironmentSpec::Kind::kCluster;
  os << kind << ',' << (s.kind == EnvironmentSpec::Kind::kCluster ? std::to_string(s.delta) : "") << ','
     << (has_dp ? std::to_string(s.d_prime) : "") << ',' << (sl ? std::to_string(s.d_doubleprime) : "") << ','
     << (sl ? std::to_string(s.d_prime_pur) : "");
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f << text;
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace

void run_study(const std::string& kind, const StudyConfig& cfg, const std::string& out_dir, std::size_t workers,
               const Logger& log) {
  if (kind != "norm" && kind != "fidelity" && kind != "cluster-energy" && kind != "parallel") {
    throw ConfigError("unknown study kind '" + kind + "'");
  }
  const auto& ex = cfg.experiment;
  const auto& h = ex.hamiltonian;
  EvolvingState st;
  if (cfg.state) {
    InitialSpec i;
    i.kind = "file";
    i.path = *cfg.state;
    st = initial_state(h, i, ex.seed);
  } else {
    st = initial_state(h, ex.initial, ex.seed);
    if (!ex.schedule.stages.empty()) {
      EvolveOptions o;
      o.hamiltonian = h;
      o.record_wall_time = false;
      o.workers = workers;
      o.monitor = EnvironmentSpec::separable();
      st = evolve(st, ex.schedule, o).state;
      say(log, "state prepared");
    }
  }
  const PepsState p = st.as_plain();
  const std::size_t D = p.bond_dim();
  const auto reference = cfg.reference.value_or(final_energy_spec(D));
  const std::filesystem::path dir(out_dir);
  std::ostringstream os;
  if (kind == "norm") {
    os << "# schema: peps-study-norm/1; reference=" << reference.label() << "\n";
    os << "strategy,delta,dprime,ddoubleprime,dprime_pur,log_norm,eps_N,wall_time_ms\n";
    for (const auto& r : norm_study(p, cfg.strategies, reference)) {
      os << spec_columns(r.spec) << ',' << format_real(r.log_norm) << ',' << format_real(r.eps_n) << ','
         << format_real(r.wall_ms) << '\n';
    }
    write_file(dir / "norm.csv", os.str());
  } else if (kind == "fidelity") {
    const std::size_t row = cfg.row.value_or(p.side / 2);
    os << "# schema: peps-study-fidelity/1; reference=" << reference.label() << "; row=" << row << "\n";
    os << "strategy,delta,dprime,ddoubleprime,dprime_pur,distance,wall_time_ms\n";
    for (const auto& r : fidelity_study(p, row, cfg.strategies, reference)) {
      os << spec_columns(r.spec) << ',' << format_real(r.distance) << ',' << format_real(r.wall_ms) << '\n';
    }
    write_file(dir / "fidelity.csv", os.str());
  } else if (kind == "cluster-energy") {
    os << "# schema: peps-study-cluster-energy/1; reference=" << reference.label() << "\n";
    os << "strategy,delta,dprime,ddoubleprime,dprime_pur,energy_per_site,eps_E,wall_time_ms\n";
    for (const auto& r : cluster_energy_study(p, h, cfg.strategies, reference, workers)) {
      os << spec_columns(r.spec) << ',' << format_real(r.energy) << ',' << format_real(r.eps_e) << ','
         << format_real(r.wall_ms) << '\n';
    }
    write_file(dir / "cluster-energy.csv", os.str());
  } else {
    if (cfg.stages.empty()) throw ConfigError("study parallel: 'stages' required");
    const auto monitor = cfg.monitor.value_or(EnvironmentSpec::full(std::max<std::size_t>(16, 2 * D * D)));
    os << "# schema: peps-study-parallel/1; monitor=" << monitor.label() << "\n";
    os << "strategy,delta,dprime,ddoubleprime,dprime_pur,mode,workers,step,tau,D,energy_per_site\n";
    std::ostringstream cost;
    cost << "# schema: peps-study-cost/1\n";
    cost << "side,delta,dprime,t_boundary_ms,t_update_ms,measured_sequential_ms,measured_parallel_row_ms,"
            "predicted_sequential_ms,predicted_parallel_row_ms,measured_speedup,predicted_speedup\n";
    for (const auto& spec : cfg.strategies) {
      std::vector<std::pair<SweepMode, std::size_t>> runs{{SweepMode::kSequential, 1}};
      for (auto w : cfg.worker_counts) runs.push_back({SweepMode::kParallel, w});
      for (const auto& [mode, w] : runs) {
        say(log, "parallel study: " + spec.label() + (mode == SweepMode::kParallel ? " parallel" : " sequential") +
                     " workers=" + std::to_string(w));
        auto run = parallel_run(st, h, cfg.stages, spec, mode, w, monitor, cfg.monitor_every);
        for (const auto& t : run.trace) {
          os << spec_columns(spec) << ',' << (mode == SweepMode::kParallel ? "parallel" : "sequential") << ',' << w << ',' << t.step
             << ',' << format_real(t.tau) << ',' << t.bond << ',' << format_real(t.energy_per_site) << '\n';
        }
      }
      if (spec.kind == EnvironmentSpec::Kind::kCluster) {
        const auto m = measure_cost(p, h, spec.delta, spec.d_prime, D);
        cost << m.side << ',' << m.delta << ',' << spec.d_prime << ',' << format_real(m.t_boundary_ms) << ','
             << format_real(m.t_update_ms) << ',' << format_real(m.sequential_ms) << ','
             << format_real(m.parallel_row_ms) << ',' << format_real(m.predicted.sequential) << ','
             << format_real(m.predicted.parallel_row) << ',' << format_real(m.sequential_ms / m.parallel_row_ms)
             << ',' << format_real(m.predicted.speedup) << '\n';
      }
    }
    write_file(dir / "parallel.csv", os.str());
    write_file(dir / "cost.csv", cost.str());
  }
}

}  // namespace peps
