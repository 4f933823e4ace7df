#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "peps/cli.hpp"
#include "peps/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("peps_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "peps");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log;
  return peps::run_cli(static_cast<int>(argv.size()), argv.data(), log);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

json su_config(std::size_t steps, std::size_t checkpoint_every = 0) {
  return {{"model", {{"name", "heisenberg"}}},
          {"side", 2},
          {"schedule", {{"stages", {{{"steps", steps}, {"tau", 0.05}, {"D", 2}}}}}},
          {"monitor", "separable"},
          {"monitor_every", 2},
          {"checkpoint_every", checkpoint_every},
          {"seed", 11}};
}

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

}  // namespace

TEST(Cli, ZeroStageScheduleWritesInitialStateOnly) {
  const auto dir = scratch("zero");
  json c = su_config(0);
  c["schedule"] = {{"stages", json::array()}};
  const auto cfg = write_config(dir, c);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "out").string()}), peps::kExitOk);
  EXPECT_TRUE(fs::exists(dir / "out" / "state" / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "out" / "energy.json"));
  EXPECT_EQ(data_lines(slurp(dir / "out" / "trace.csv")).size(), 1u);  // column header only
}

TEST(Cli, RerunIsByteIdentical) {
  const auto dir = scratch("rerun");
  const auto cfg = write_config(dir, su_config(10));
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "a").string()}), 0);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "b").string()}), 0);
  const auto a = slurp(dir / "a" / "trace.csv");
  EXPECT_EQ(a, slurp(dir / "b" / "trace.csv"));
  EXPECT_EQ(slurp(dir / "a" / "energy.json"), slurp(dir / "b" / "energy.json"));
  const auto lines = data_lines(a);
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(lines[0], "step,tau,D,energy_per_site,wall_ms");
  EXPECT_NE(a.find("# schema: peps-energy-trace/1"), std::string::npos);
}

TEST(Cli, SeedFlagOverridesConfig) {
  const auto dir = scratch("seed");
  const auto cfg = write_config(dir, su_config(4));
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "a").string()}), 0);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--seed", "12", "--out", (dir / "b").string()}), 0);
  EXPECT_NE(slurp(dir / "a" / "trace.csv"), slurp(dir / "b" / "trace.csv"));
}

TEST(Cli, ResumeFromCheckpointMatchesContinuousRun) {
  const auto dir = scratch("resume");
  const auto cfg = write_config(dir, su_config(20, 7));
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "full").string()}), 0);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "cut").string()}), 0);
  // Pretend the second run died after its step-14 checkpoint.
  fs::remove_all(dir / "cut" / "state");
  {
    const auto text = slurp(dir / "cut" / "trace.csv");
    std::ofstream f(dir / "cut" / "trace.csv", std::ios::binary);
    f << text.substr(0, text.find("\n16,") + 1);
  }
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "cut").string(), "--resume"}), 0);
  EXPECT_EQ(slurp(dir / "full" / "trace.csv"), slurp(dir / "cut" / "trace.csv"));
  EXPECT_EQ(slurp(dir / "full" / "energy.json"), slurp(dir / "cut" / "energy.json"));
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = scratch("config");
  json bad = su_config(2);
  bad["surprise"] = 1;
  const auto cfg = write_config(dir, bad);
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "o").string()}), peps::kExitConfig);
  EXPECT_EQ(run({"evolve", "--config", (dir / "missing.json").string()}), peps::kExitConfig);
  EXPECT_EQ(run({"evolve"}), peps::kExitConfig);
  EXPECT_EQ(run({"table", "Z9", "--out", (dir / "o").string()}), peps::kExitConfig);
  EXPECT_EQ(run({"table", "A1", "--budget", "huge"}), peps::kExitConfig);
  EXPECT_EQ(run({"frobnicate"}), peps::kExitConfig);
  EXPECT_EQ(run({"validate", "--config", cfg.string()}), peps::kExitConfig);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run({"validate", "--config", (dir / "broken.json").string()}), peps::kExitConfig);
  EXPECT_EQ(run({"validate", "--config", write_config(dir, su_config(2), "good.json").string()}), peps::kExitOk);
}

TEST(Cli, WorkersEnvironmentFallback) {
  const auto dir = scratch("workers");
  const auto cfg = write_config(dir, su_config(2));
  ::setenv("PEPS_WORKERS", "zero", 1);
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "a").string()}), peps::kExitConfig);
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--workers", "2", "--out", (dir / "b").string()}), 0);
  ::setenv("PEPS_WORKERS", "2", 1);
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "c").string()}), 0);
  ::unsetenv("PEPS_WORKERS");
  EXPECT_EQ(slurp(dir / "b" / "trace.csv"), slurp(dir / "c" / "trace.csv"));
}

TEST(Cli, NumericalAbortExitsThreeWithProvenance) {
  const auto dir = scratch("abort");
  json c = su_config(3);
  c["schedule"]["stages"][0]["tau"] = 1e4;  // exp(-tau h) overflows
  const auto cfg = write_config(dir, c);
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "o").string()}), peps::kExitNumerical);
  const auto prov = json::parse(slurp(dir / "o" / "provenance.json"));
  EXPECT_TRUE(prov.contains("error"));
  EXPECT_EQ(prov["seed"], 11);
  EXPECT_EQ(prov["last_completed_step"], 0);
}

TEST(Cli, EnergyAndValidateOnStoredState) {
  const auto dir = scratch("energy");
  const auto cfg = write_config(dir, su_config(6));
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir / "run").string()}), 0);
  EXPECT_EQ(run({"validate", "--state", (dir / "run" / "state").string()}), 0);
  const json e{{"model", {{"name", "heisenberg"}}}, {"side", 2}, {"state", (dir / "run" / "state").string()},
               {"reference", "exact"}};
  const auto ecfg = write_config(dir, e, "energy.json");
  ASSERT_EQ(run({"energy", "--config", ecfg.string(), "--out", (dir / "e").string()}), 0);
  const auto a = json::parse(slurp(dir / "run" / "energy.json"));
  const auto b = json::parse(slurp(dir / "e" / "energy.json"));
  EXPECT_EQ(a["energy_per_site"], b["energy_per_site"]);
  EXPECT_TRUE(b.contains("relative_error"));
  EXPECT_EQ(run({"validate", "--state", (dir / "nowhere").string()}), peps::kExitConfig);
}

TEST(Cli, FidelityStudyOnProductState) {
  const auto dir = scratch("study");
  const json s{{"model", {{"name", "heisenberg"}}},
               {"side", 4},
               {"initial", {{"kind", "neel"}, {"noise", 0.0}}},
               {"strategies", {"separable", {{"cluster", {{"delta", 1}, {"dprime", 4}}}}}},
               {"reference", {{"full", {{"dprime", 4}}}}}};
  const auto cfg = write_config(dir, s);
  ASSERT_EQ(run({"study", "fidelity", "--config", cfg.string(), "--out", (dir / "o").string()}), 0);
  const auto lines = data_lines(slurp(dir / "o" / "fidelity.csv"));
  ASSERT_EQ(lines.size(), 4u);  // header, reference row, two strategies
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = lines[i];
    const auto last = fields.rfind(',');
    const auto prev = fields.rfind(',', last - 1);
    EXPECT_LE(std::abs(std::stod(fields.substr(prev + 1, last - prev - 1))), 1e-12) << fields;
  }
  EXPECT_EQ(run({"study", "bogus", "--config", cfg.string(), "--out", (dir / "o").string()}), peps::kExitConfig);
}

TEST(Cli, TableWritesVersionedCsv) {
  const auto dir = scratch("table");
  ASSERT_EQ(run({"table", "A7", "--out", dir.string()}), 0);
  const auto csv = slurp(dir / "A7.csv");
  EXPECT_EQ(csv.rfind("# schema: peps-table/1", 0), 0u);
  EXPECT_NE(csv.find("\"Heisenberg\",\"4x4 exact\",-0.5743254"), std::string::npos);
}
