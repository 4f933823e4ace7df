#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <nlohmann/json.hpp>

#include "../support/oracles.hpp"
#include "peps/evolution.hpp"
#include "peps/linalg.hpp"
#include "peps/observables.hpp"

using namespace peps;

namespace {

std::vector<double> to_vec(const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); }

double fidelity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i];
  return ab * ab / (oracle::norm2(a) * oracle::norm2(b));
}

std::size_t site(const PepsState& p, std::size_t r, std::size_t c) { return r * p.side + c; }

std::vector<double> apply_gate_dense(const PepsState& p, const TrotterGate& g, const std::vector<double>& psi) {
  const auto& b = g.bond;
  const std::size_t i = site(p, b.row, b.col);
  const std::size_t j = b.orientation == Orientation::kHorizontal ? site(p, b.row, b.col + 1)
                                                                  : site(p, b.row + 1, b.col);
  return oracle::apply_pair(to_vec(g.matrix), p.side * p.side, i, j, psi);
}

GammaLambdaState random_gl(std::size_t side, std::size_t bond, std::uint64_t seed) {
  auto s = to_gamma_lambda(oracle::random_peps(side, bond, seed));
  Rng rng(seed + 5);
  auto fill = [&](std::vector<double>& l) {
    for (auto& x : l) x = rng.uniform(0.2, 1.0);
    std::sort(l.begin(), l.end(), std::greater<>());
    for (auto& x : l) x /= l.front();
  };
  for (auto& row : s.horizontal)
    for (auto& l : row) fill(l);
  for (auto& row : s.vertical)
    for (auto& l : row) fill(l);
  return s;
}

}  // namespace

TEST(Gates, MatchTaylorExponential) {
  for (auto h : {HamiltonianSpec::heisenberg(3), HamiltonianSpec::ising(1.3, 3)}) {
    auto sets = make_gates(h, 0.07);
    for (const auto& set : sets)
      for (const auto& g : set.gates) {
        auto ref = oracle::expm_neg(to_vec(bond_hamiltonian(h, g.bond)), 4, 0.07);
        auto got = to_vec(g.matrix);
        for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(got[k], ref[k], 1e-14);
      }
  }
}

TEST(Gates, SetsCoverEveryBondOnceWithoutOverlap) {
  auto sets = make_gates(HamiltonianSpec::heisenberg(5), 0.01);
  std::size_t total = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    std::set<std::pair<std::size_t, std::size_t>> used;
    for (const auto& g : sets[k].gates) {
      const auto& b = g.bond;
      EXPECT_EQ(b.orientation, k < 2 ? Orientation::kHorizontal : Orientation::kVertical);
      EXPECT_EQ((k < 2 ? b.col : b.row) % 2, k % 2);
      const auto other = b.orientation == Orientation::kHorizontal ? std::pair{b.row, b.col + 1}
                                                                   : std::pair{b.row + 1, b.col};
      EXPECT_TRUE(used.insert({b.row, b.col}).second);
      EXPECT_TRUE(used.insert(other).second);
    }
    total += sets[k].gates.size();
  }
  EXPECT_EQ(total, 2u * 5 * 4);
  EXPECT_EQ(all_bonds(5).size(), 40u);
}

TEST(Gates, IdentityLimitAndSemigroup) {
  const auto h = HamiltonianSpec::heisenberg(2);
  const Bond b{0, 0, Orientation::kHorizontal};
  auto g0 = make_gates(h, 0.0)[0].gates[0].matrix;
  EXPECT_LE(frobenius_norm(g0 - Tensor::identity(4).reshaped(g0.shape())), 1e-15);
  auto g1 = make_gates(h, 0.03)[0].gates[0].matrix.reshaped({4, 4});
  auto g2 = make_gates(h, 0.05)[0].gates[0].matrix.reshaped({4, 4});
  auto g3 = make_gates(h, 0.08)[0].gates[0].matrix.reshaped({4, 4});
  EXPECT_LE(frobenius_norm(contract(g1, g2, {{1, 0}}) - g3), 1e-14);
  (void)b;
}

TEST(Hamiltonian, SpectrumAndBondSum) {
  auto hb = bond_hamiltonian(HamiltonianSpec::heisenberg(3), {0, 0, Orientation::kHorizontal});
  auto ev = eigh(hb.reshaped({4, 4})).values;
  std::sort(ev.begin(), ev.end());
  EXPECT_NEAR(ev[0], -0.75, 1e-15);
  for (int k = 1; k < 4; ++k) EXPECT_NEAR(ev[k], 0.25, 1e-15);
  // Embedded bond terms add up to the dense Hamiltonian.
  for (auto h : {HamiltonianSpec::heisenberg(3), HamiltonianSpec::ising(0.7, 3)}) {
    auto ref = oracle::dense_hamiltonian(3, h.model == HamiltonianSpec::Model::kHeisenberg, h.field);
    const std::size_t dim = 512;
    std::vector<double> sum(dim * dim, 0.0);
    for (const auto& b : all_bonds(3)) {
      auto m = to_vec(bond_hamiltonian(h, b));
      const std::size_t i = b.row * 3 + b.col;
      const std::size_t j = b.orientation == Orientation::kHorizontal ? i + 1 : i + 3;
      for (std::size_t col = 0; col < dim; ++col) {
        std::vector<double> e(dim, 0.0);
        e[col] = 1.0;
        auto out = oracle::apply_pair(m, 9, i, j, e);
        for (std::size_t row = 0; row < dim; ++row) sum[row * dim + col] += out[row];
      }
    }
    for (std::size_t k = 0; k < sum.size(); ++k) ASSERT_NEAR(sum[k], ref[k], 1e-13);
  }
  EXPECT_EQ(coordination(3, 0, 0), 2u);
  EXPECT_EQ(coordination(3, 0, 1), 3u);
  EXPECT_EQ(coordination(3, 1, 1), 4u);
}

TEST(SimpleUpdate, ExactWithoutTruncation) {
  const auto h = HamiltonianSpec::heisenberg(2);
  for (std::size_t k = 0; k < 4; k += 2) {
    auto s = random_gl(2, 2, 10 + k);
    const auto gate = make_gates(h, 0.3)[k].gates[0];
    auto before = peps_to_statevector(absorb_lambdas(s));
    su_gate_update(s, gate, 16);
    validate(s);
    auto after = peps_to_statevector(absorb_lambdas(s));
    EXPECT_NEAR(fidelity(after, apply_gate_dense(absorb_lambdas(s), gate, before)), 1.0, 1e-12);
  }
}

TEST(SimpleUpdate, LambdaInvariants) {
  auto s = random_gl(4, 2, 20);
  auto sets = make_gates(HamiltonianSpec::ising(2.0, 4), 0.1);
  for (int step = 0; step < 3; ++step) su_step(s, sets, 2);
  validate(s);
  auto check = [](const std::vector<double>& l) {
    ASSERT_FALSE(l.empty());
    EXPECT_LE(l.size(), 2u);
    EXPECT_NEAR(l.front(), 1.0, 1e-14);
    for (std::size_t i = 1; i < l.size(); ++i) {
      EXPECT_LE(l[i], l[i - 1]);
      EXPECT_GE(l[i], 0.0);
    }
  };
  for (const auto& row : s.horizontal)
    for (const auto& l : row) check(l);
  for (const auto& row : s.vertical)
    for (const auto& l : row) check(l);
}

TEST(SimpleUpdate, IdentityGateKeepsState) {
  auto s = random_gl(3, 2, 30);
  auto before = peps_to_statevector(absorb_lambdas(s));
  su_step(s, make_gates(HamiltonianSpec::heisenberg(3), 0.0), 2);
  auto after = peps_to_statevector(absorb_lambdas(s));
  EXPECT_NEAR(fidelity(before, after), 1.0, 1e-10);
}

TEST(AlsUpdate, ExactGateWithLargeBond) {
  auto p = oracle::random_peps(3, 2, 40);
  const auto sets = make_gates(HamiltonianSpec::heisenberg(3), 0.4);
  for (std::size_t k : {0u, 1u, 2u, 3u}) {
    const auto& gate = sets[k].gates.back();
    auto q = gate_update_als(p, gate, EnvironmentSpec::full(64), 16);
    validate(q);
    auto target = apply_gate_dense(p, gate, peps_to_statevector(p));
    EXPECT_NEAR(fidelity(peps_to_statevector(q), target), 1.0, 1e-9) << "set " << k;
  }
}

TEST(AlsUpdate, CostEqualsDenseInfidelity) {
  auto p = oracle::random_peps(3, 2, 41);
  const auto sets = make_gates(HamiltonianSpec::heisenberg(3), 0.4);
  for (std::size_t k : {0u, 2u}) {
    const auto& gate = sets[k].gates[0];
    const Bond& b = gate.bond;
    auto target = apply_gate_dense(p, gate, peps_to_statevector(p));
    // Lattice-level call to read the cost through the low-level routine.
    PepsState work = b.orientation == Orientation::kHorizontal ? p : transpose_lattice(p);
    const Bond wb = b.orientation == Orientation::kHorizontal ? b : transposed_bond(b);
    auto env = bond_environment(work, wb, EnvironmentSpec::full(64));
    PairEnvironment pe{env.left, env.right, env.rows.top.sites[wb.col], env.rows.top.sites[wb.col + 1],
                       env.rows.bottom.sites[wb.col], env.rows.bottom.sites[wb.col + 1]};
    auto res = gate_update_als(work.at(wb.row, wb.col), work.at(wb.row, wb.col + 1), gate.matrix, pe, 2);
    work.at(wb.row, wb.col) = res.a;
    work.at(wb.row, wb.col + 1) = res.b;
    PepsState back = b.orientation == Orientation::kHorizontal ? work : transpose_lattice(work);
    const double dense = 1.0 - fidelity(peps_to_statevector(back), target);
    EXPECT_NEAR(res.cost, dense, 1e-7) << "set " << k;
    EXPECT_GT(res.cost, 1e-6);  // truncation is real here
    EXPECT_NEAR(res.bond_spectrum.front(), 1.0, 1e-14);
    EXPECT_LE(res.bond_spectrum.size(), 2u);
  }
}

TEST(Sweep, ParallelAndSequentialAgreeForExactEnvironments) {
  auto p = product_with_noise(4, 2, 2, neel_pattern(4), 50, 0.1);
  const auto sets = make_gates(HamiltonianSpec::heisenberg(4), 0.05);
  SweepContext seq;
  seq.spec = EnvironmentSpec::full(16);
  seq.max_bond = 2;
  SweepContext par = seq;
  par.mode = SweepMode::kParallel;
  par.spec = EnvironmentSpec::cluster(3, 16);
  par.workers = 2;
  // Horizontal gates touch disjoint rows in parallel mode, so with exact
  // environments both orders see the same state per row only for the first row.
  auto a = p, b = p;
  sweep(a, sets[0], 0, seq);
  sweep(b, sets[0], 0, par);
  const double ea = energy(a, HamiltonianSpec::heisenberg(4), EnvironmentSpec::full(16)).energy_per_site;
  const double eb = energy(b, HamiltonianSpec::heisenberg(4), EnvironmentSpec::full(16)).energy_per_site;
  EXPECT_NEAR(ea, eb, 1e-3);
  for (std::size_t c = 0; c < 4; ++c) {
    auto x = to_vec(a.at(0, c)), y = to_vec(b.at(0, c));
    ASSERT_EQ(x.size(), y.size());
    EXPECT_NEAR(fidelity(x, y), 1.0, 1e-6);
  }
}

TEST(Evolve, DeterministicTracesAndResume) {
  Schedule sched;
  sched.stages.push_back({4, 0.1, 2, std::nullopt, SweepMode::kSequential});
  sched.stages.push_back({2, 0.05, 2, EnvironmentSpec::cluster(1, 4), SweepMode::kSequential});
  EvolveOptions opt;
  opt.hamiltonian = HamiltonianSpec::heisenberg(3);
  opt.record_wall_time = false;
  opt.monitor_every = 2;
  EvolvingState init;
  init.plain = product_with_noise(3, 2, 1, neel_pattern(3), 3, 0.0);
  auto r1 = evolve(init, sched, opt);
  auto r2 = evolve(init, sched, opt);
  ASSERT_EQ(r1.trace.size(), 3u);
  EXPECT_EQ(r1.steps_done, 6u);
  for (std::size_t i = 0; i < r1.trace.size(); ++i) {
    EXPECT_EQ(r1.trace[i].energy_per_site, r2.trace[i].energy_per_site);
    EXPECT_EQ(r1.trace[i].wall_ms, 0.0);
  }
  EXPECT_EQ(r1.trace[0].step, 2u);
  EXPECT_EQ(r1.trace.back().step, 6u);
  EXPECT_LT(r1.trace.back().energy_per_site, -0.3);
  // Resume the simple-update part from a step-2 checkpoint.
  std::optional<GammaLambdaState> at2;
  EvolveOptions grab = opt;
  grab.on_step = [&](std::size_t step, const GammaLambdaState* gl, const PepsState*) {
    if (step == 2 && gl) at2 = *gl;
  };
  Schedule su_only;
  su_only.stages.push_back(sched.stages[0]);
  auto full = evolve(init, su_only, grab);
  ASSERT_TRUE(at2);
  EvolvingState mid;
  mid.gamma_lambda = *at2;
  auto resumed = evolve(mid, su_only, opt, 2);
  EXPECT_EQ(resumed.steps_done, 4u);
  ASSERT_FALSE(resumed.trace.empty());
  EXPECT_EQ(resumed.trace.back().energy_per_site, full.trace.back().energy_per_site);
}

TEST(Evolve, ReachesPlaquetteGroundState) {
  // Open 2x2 Heisenberg is a four-site ring: E0 / 4 = -0.5. D = 2 stalls
  // near -0.46; D = 3 holds the resonating singlet pair.
  Schedule sched;
  sched.stages.push_back({60, 0.1, 3, std::nullopt, SweepMode::kSequential});
  sched.stages.push_back({60, 0.05, 3, EnvironmentSpec::full(9), SweepMode::kSequential});
  EvolveOptions opt;
  opt.hamiltonian = HamiltonianSpec::heisenberg(2);
  opt.monitor = EnvironmentSpec::full(9);
  EvolvingState init;
  init.plain = product_with_noise(2, 2, 1, neel_pattern(2), 4, 0.0);
  auto r = evolve(init, sched, opt);
  ASSERT_EQ(r.trace.size(), 2u);
  EXPECT_LT(r.trace[1].energy_per_site, r.trace[0].energy_per_site);
  EXPECT_NEAR(r.trace.back().energy_per_site, -0.5, 2e-3);
  EXPECT_NEAR(statevector_energy(r.state.as_plain(), opt.hamiltonian), r.trace.back().energy_per_site, 1e-9);
}

TEST(Schedule, JsonRoundTripAndValidation) {
  auto j = nlohmann::json::parse(
      R"({"stages":[{"steps":1000,"tau":0.01,"D":2,"env":{"cluster":{"delta":1,"dprime":4}},"mode":"sequential"},
                    {"steps":10,"tau":0.001,"D":3,"env":"simple"},
                    {"steps":5,"tau":0.001,"D":3,"env":{"full":{"dprime":9}},"mode":"parallel"}]})");
  auto s = schedule_from_json(j);
  ASSERT_EQ(s.stages.size(), 3u);
  EXPECT_EQ(s.stages[0].steps, 1000u);
  EXPECT_EQ(s.stages[0].env->kind, EnvironmentSpec::Kind::kCluster);
  EXPECT_EQ(s.stages[0].env->delta, 1u);
  EXPECT_EQ(s.stages[0].env->d_prime, 4u);
  EXPECT_FALSE(s.stages[1].env);
  EXPECT_EQ(s.stages[2].mode, SweepMode::kParallel);
  auto again = schedule_from_json(to_json(s));
  EXPECT_EQ(to_json(again), to_json(s));

  auto bad = [](const char* text) { return nlohmann::json::parse(text); };
  EXPECT_THROW(schedule_from_json(bad(R"({"stages":[{"steps":1,"tau":0.1,"D":2,"oops":1}]})")),
               std::invalid_argument);
  EXPECT_THROW(schedule_from_json(bad(R"({"stages":[{"steps":1,"tau":0.1,"D":3},{"steps":1,"tau":0.1,"D":2}]})")),
               std::invalid_argument);
  EXPECT_THROW(schedule_from_json(bad(R"({"stages":[{"steps":1,"tau":0.1,"D":2,"mode":"parallel"}]})")),
               std::invalid_argument);
  EXPECT_THROW(schedule_from_json(bad(R"({"stages":[{"steps":1,"tau":0.1,"D":2,"env":{"cluster":{"delta":1}}}]})")),
               std::invalid_argument);
}

TEST(CostModel, Formula) {
  auto c = cost_model(10, 1, 2.0, 5.0);
  EXPECT_DOUBLE_EQ(c.sequential, 2 * 8 * 2.0 + 10 * 5.0);
  EXPECT_DOUBLE_EQ(c.parallel_row, 5.0);
  EXPECT_DOUBLE_EQ(c.speedup, 82.0 / 5.0);
  auto d = cost_model(10, 3, 2.0, 5.0);
  EXPECT_DOUBLE_EQ(d.parallel_row, 2 * 2 * 2.0 + 5.0);
  EXPECT_THROW(cost_model(1, 1, 1, 1), std::invalid_argument);
}
