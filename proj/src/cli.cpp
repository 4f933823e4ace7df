#include "peps/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "peps/experiments.hpp"
#include "peps/io.hpp"

namespace peps {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kTraceSchema = "peps-energy-trace/1";

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out = "out";
  std::string budget = "small";
};

json read_json(const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required");
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

std::size_t resolve_workers(const Common& c, std::size_t from_config) {
  if (c.workers) return std::max<std::size_t>(1, *c.workers);
  if (const char* env = std::getenv("PEPS_WORKERS")) {
    char* end = nullptr;
    const unsigned long long n = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || n == 0) throw ConfigError("PEPS_WORKERS must be a positive integer");
    return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, from_config);
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << text;
  }
  fs::rename(tmp, p);
}

template <class State>
void save_atomically(const fs::path& dir, const State& s, const StateProvenance& prov) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  save_state(tmp, s, prov);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

void save_evolving(const fs::path& dir, const EvolvingState& s, const StateProvenance& prov) {
  if (s.gamma_lambda) save_atomically(dir, *s.gamma_lambda, prov);
  else save_atomically(dir, *s.plain, prov);
}

std::string trace_line(const TraceRow& r) {
  std::ostringstream os;
  os << r.step << ',' << format_real(r.tau) << ',' << r.bond << ',' << format_real(r.energy_per_site) << ','
     << format_real(r.wall_ms) << '\n';
  return os.str();
}

std::string trace_header(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "# schema: " << kTraceSchema << "; seed=" << c.seed;
  if (c.monitor) os << "; monitor=" << c.monitor->label();
  os << "\nstep,tau,D,energy_per_site,wall_ms\n";
  return os.str();
}

std::size_t checkpoint_step(const StateProvenance& p) {
  const auto k = p.note.find("step=");
  if (k == std::string::npos) throw ConfigError("checkpoint has no step record");
  return std::stoull(p.note.substr(k + 5));
}

// Keeps the header and the rows up to `step`.
std::string truncated_trace(const fs::path& p, std::size_t step, const std::string& header) {
  std::ifstream f(p);
  if (!f) return header;
  std::string out, line;
  for (int n = 0; std::getline(f, line); ++n) {
    if (n < 2) out += line + '\n';
    else if (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= step) out += line + '\n';
  }
  return out.empty() ? header : out;
}

void write_energy(const fs::path& dir, const EnergyReport& r) {
  write_text(dir / "energy.json", to_json(r));
  write_text(dir / "energy.csv", to_csv(r));
}

int cmd_evolve(const Common& common, bool resume, std::ostream& log) {
  const json raw = read_json(common.config);
  ExperimentConfig cfg = config_from_json(raw);
  if (common.seed) cfg.seed = *common.seed;
  cfg.workers = resolve_workers(common, cfg.workers);
  const fs::path out(common.out);
  fs::create_directories(out);
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

  EvolvingState state = initial_state(cfg.hamiltonian, cfg.initial, cfg.seed);
  std::size_t start = 0;
  const fs::path ckpt = out / "checkpoint";
  std::string trace = trace_header(cfg);
  if (resume && fs::exists(ckpt / "manifest.json")) {
    auto loaded = load_state(ckpt);
    start = checkpoint_step(loaded.provenance);
    state = EvolvingState{};
    if (loaded.form == "plain") state.plain = std::move(loaded.plain);
    else state.gamma_lambda = std::move(loaded.gamma_lambda);
    trace = truncated_trace(out / "trace.csv", start, trace);
    log << "resuming from step " << start << "\n";
  }
  write_text(out / "trace.csv", trace);
  std::ofstream trace_file(out / "trace.csv", std::ios::app | std::ios::binary);

  EvolveOptions o;
  o.hamiltonian = cfg.hamiltonian;
  o.monitor = cfg.monitor;
  o.monitor_every = cfg.monitor_every;
  o.workers = cfg.workers;
  o.growth_seed = cfg.seed;
  o.record_wall_time = cfg.record_wall_time;
  std::size_t last_step = start;
  o.on_record = [&](const TraceRow& r) {
    trace_file << trace_line(r);
    trace_file.flush();
    log << "step " << r.step << " tau " << format_real(r.tau) << " D " << r.bond << " E "
        << format_real(r.energy_per_site) << "\n";
  };
  o.on_step = [&](std::size_t k, const GammaLambdaState* gl, const PepsState* plain) {
    last_step = k;
    if (cfg.checkpoint_every == 0 || k % cfg.checkpoint_every != 0) return;
    const StateProvenance prov{cfg.seed, "checkpoint step=" + std::to_string(k)};
    if (gl) save_atomically(ckpt, *gl, prov);
    else save_atomically(ckpt, *plain, prov);
  };

  EvolveResult result;
  try {
    result = evolve(state, cfg.schedule, o, start);
  } catch (const NumericalError& e) {
    trace_file.close();
    json prov{{"error", e.what()},
              {"last_completed_step", last_step},
              {"seed", cfg.seed},
              {"config", to_json(cfg)}};
    write_text(out / "provenance.json", prov.dump(2) + "\n");
    log << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  }
  trace_file.close();
  save_evolving(out / "state", result.state, {cfg.seed, "final"});
  std::size_t total = 0;
  for (const auto& s : cfg.schedule.stages) total += s.steps;
  if (total > 0) {
    const auto plain = result.state.as_plain();
    const auto spec = cfg.final_env.value_or(final_energy_spec(plain.bond_dim()));
    auto report = energy(plain, cfg.hamiltonian, spec, cfg.workers);
    if (cfg.reference) set_reference(report, *cfg.reference);
    write_energy(out, report);
    log << "final energy per site " << format_real(report.energy_per_site) << " (" << spec.label() << ")\n";
  }
  return kExitOk;
}

int cmd_table(const Common& common, const std::string& name, std::ostream& log) {
  const Budget budget = budget_from_string(common.budget);
  const std::size_t workers = resolve_workers(common, 1);
  const fs::path out(common.out);
  auto t = run_table(name, budget, workers, [&](const std::string& s) { log << s << "\n"; });
  write_text(out / (name + ".csv"), to_csv(t));
  log << "wrote " << (out / (name + ".csv")).string() << "\n";
  return kExitOk;
}

int cmd_study(const Common& common, const std::string& kind, std::ostream& log) {
  const json raw = read_json(common.config);
  StudyConfig cfg = study_config_from_json(raw);
  if (common.seed) cfg.experiment.seed = *common.seed;
  const std::size_t workers = resolve_workers(common, cfg.experiment.workers);
  run_study(kind, cfg, common.out, workers, [&](const std::string& s) { log << s << "\n"; });
  log << "wrote " << kind << ".csv to " << common.out << "\n";
  return kExitOk;
}

// {"model":..,"side":..,"state":DIR,"env":spec,"reference":x|"exact"}
int cmd_energy(const Common& common, std::ostream& log) {
  const json raw = read_json(common.config);
  json base;
  std::optional<EnvironmentSpec> env;
  std::string state_dir;
  try {
    for (const auto& item : raw.items()) {
      const auto& k = item.key();
      if (k == "model" || k == "side" || k == "reference" || k == "workers") base[k] = item.value();
      else if (k == "state") state_dir = item.value().get<std::string>();
      else if (k == "env") env = spec_from_json(item.value());
      else throw ConfigError("energy: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("energy: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("energy: ") + e.what());
  }
  if (state_dir.empty()) throw ConfigError("energy: 'state' is required");
  base["schedule"] = json{{"stages", json::array()}};
  const auto cfg = config_from_json(base);
  InitialSpec init;
  init.kind = "file";
  init.path = state_dir;
  const auto p = initial_state(cfg.hamiltonian, init, 0).as_plain();
  const auto spec = env.value_or(final_energy_spec(p.bond_dim()));
  auto report = energy(p, cfg.hamiltonian, spec, resolve_workers(common, cfg.workers));
  if (cfg.reference) set_reference(report, *cfg.reference);
  write_energy(common.out, report);
  log << "energy per site " << format_real(report.energy_per_site) << " (" << spec.label() << ")\n";
  return kExitOk;
}

// Checks a config file (experiment, study or energy) or a stored state.
int cmd_validate(const Common& common, const std::string& state_dir, const std::string& kind, std::ostream& log) {
  if (!state_dir.empty()) {
    const auto loaded = load_state(state_dir);
    if (loaded.form == "plain") validate(loaded.plain);
    else validate(loaded.gamma_lambda);
    log << "state ok (" << loaded.form << ")\n";
    return kExitOk;
  }
  const json raw = read_json(common.config);
  if (kind == "study") study_config_from_json(raw);
  else config_from_json(raw);
  log << "config ok\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& log) {
  CLI::App app{"Finite PEPS ground-state engine"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file");
    sub->add_option("--seed", common.seed, "random seed (overrides the config)");
    sub->add_option("--workers", common.workers, "worker threads (fallback: PEPS_WORKERS)")->check(CLI::PositiveNumber);
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--budget", common.budget, "small or full")->check(CLI::IsMember({"small", "full"}));
  };
  bool resume = false;
  std::string table_name, study_kind, state_dir, validate_kind = "experiment";
  auto* evolve_cmd = app.add_subcommand("evolve", "run an imaginary-time schedule");
  add_common(evolve_cmd);
  evolve_cmd->add_flag("--resume", resume, "continue from the checkpoint in --out");
  auto* table_cmd = app.add_subcommand("table", "reproduce a reference table");
  add_common(table_cmd);
  table_cmd->add_option("name", table_name, "T1, A1 ... A7")->required();
  auto* study_cmd = app.add_subcommand("study", "emit curve data");
  add_common(study_cmd);
  study_cmd->add_option("kind", study_kind, "norm, fidelity, cluster-energy or parallel")->required();
  auto* energy_cmd = app.add_subcommand("energy", "energy of a stored state");
  add_common(energy_cmd);
  auto* validate_cmd = app.add_subcommand("validate", "check a config or a stored state");
  add_common(validate_cmd);
  validate_cmd->add_option("--state", state_dir, "stored state directory");
  validate_cmd->add_option("--kind", validate_kind, "config kind")->check(CLI::IsMember({"experiment", "study"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*evolve_cmd) return cmd_evolve(common, resume, log);
    if (*table_cmd) return cmd_table(common, table_name, log);
    if (*study_cmd) return cmd_study(common, study_kind, log);
    if (*energy_cmd) return cmd_energy(common, log);
    if (*validate_cmd) return cmd_validate(common, state_dir, validate_kind, log);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    log << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    log << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    log << "numerical abort: " << e.what() << "\n";
    try {
      write_text(fs::path(common.out) / "provenance.json", json{{"error", e.what()}}.dump(2) + "\n");
    } catch (...) {
    }
    return kExitNumerical;
  } catch (const ShapeError& e) {
    log << "invalid state: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace peps
