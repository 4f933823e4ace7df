#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "../support/oracles.hpp"
#include "peps/observables.hpp"

using namespace peps;

namespace {

double dense_ground_energy(std::size_t L, bool heisenberg, double field) {
  const std::size_t dim = std::size_t{1} << (L * L);
  auto h = oracle::dense_hamiltonian(L, heisenberg, field);
  Eigen::Map<Eigen::MatrixXd> m(h.data(), dim, dim);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0) / static_cast<double>(L * L);
}

}  // namespace

TEST(Energy, NeelAndFerromagnet) {
  const auto h = HamiltonianSpec::heisenberg(4);
  auto neel = product_with_noise(4, 2, 1, neel_pattern(4), 1, 0.0);
  auto ferro = product_with_noise(4, 2, 1, uniform_pattern(4, {1.0, 0.0}), 1, 0.0);
  for (const auto& s : {EnvironmentSpec::full(1), EnvironmentSpec::cluster(1, 1), EnvironmentSpec::separable(),
                        EnvironmentSpec::single_layer(1, 1)}) {
    auto e = energy(neel, h, s);
    EXPECT_NEAR(e.energy_per_site, -0.375, 1e-14) << s.label();
    EXPECT_EQ(e.terms.size(), 24u);
    for (const auto& t : e.terms) EXPECT_NEAR(t.value, -0.25, 1e-14);
    EXPECT_NEAR(energy(ferro, h, s).energy_per_site, 0.375, 1e-14);
  }
  // Ising: all up pays -1 per bond, |+> pays -B per site.
  const double r = std::sqrt(0.5);
  auto plus = product_with_noise(4, 2, 1, uniform_pattern(4, {r, r}), 1, 0.0);
  EXPECT_NEAR(energy(ferro, HamiltonianSpec::ising(2.0, 4), EnvironmentSpec::full(1)).energy_per_site, -1.5, 1e-14);
  EXPECT_NEAR(energy(plus, HamiltonianSpec::ising(2.0, 4), EnvironmentSpec::full(1)).energy_per_site, -2.0, 1e-14);
}

TEST(Energy, FullEnvironmentMatchesStatevector) {
  for (auto h : {HamiltonianSpec::heisenberg(4), HamiltonianSpec::ising(1.5, 4)}) {
    auto p = oracle::random_peps(4, 2, 3);
    auto e = energy(p, h, EnvironmentSpec::full(16));
    EXPECT_NEAR(e.energy_per_site, statevector_energy(p, h), 1e-9) << h.label();
    double sum = 0.0;
    for (const auto& t : e.terms) sum += t.value;
    EXPECT_NEAR(sum / 16.0, e.energy_per_site, 1e-14);
  }
}

TEST(Energy, WorkersAndTransposeDoNotMatter) {
  auto p = oracle::random_peps(4, 2, 4);
  const auto h = HamiltonianSpec::heisenberg(4);
  for (const auto& s : {EnvironmentSpec::full(4), EnvironmentSpec::cluster(1, 4), EnvironmentSpec::separable()}) {
    EXPECT_EQ(energy(p, h, s, 1).energy_per_site, energy(p, h, s, 3).energy_per_site) << s.label();
  }
  EXPECT_NEAR(energy(p, h, EnvironmentSpec::full(16)).energy_per_site,
              energy(transpose_lattice(p), h, EnvironmentSpec::full(16)).energy_per_site, 1e-9);
}

TEST(Energy, StatevectorEnergyOracle) {
  auto p = oracle::random_peps(3, 2, 5);
  const auto h = HamiltonianSpec::ising(0.8, 3);
  auto psi = peps_to_statevector(p);
  auto dense = oracle::dense_hamiltonian(3, false, 0.8);
  double num = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i)
    for (std::size_t j = 0; j < psi.size(); ++j) num += psi[i] * dense[i * psi.size() + j] * psi[j];
  EXPECT_NEAR(statevector_energy(p, h), num / oracle::norm2(psi) / 9.0, 1e-12);
  auto hv = apply_hamiltonian(h, psi);
  for (std::size_t i = 0; i < psi.size(); ++i) {
    double ref = 0.0;
    for (std::size_t j = 0; j < psi.size(); ++j) ref += dense[i * psi.size() + j] * psi[j];
    ASSERT_NEAR(hv[i], ref, 1e-12);
  }
}

TEST(Lanczos, MatchesDenseDiagonalization) {
  EXPECT_NEAR(exact_ground_state(HamiltonianSpec::heisenberg(2)).energy_per_site, -0.5, 1e-10);
  EXPECT_NEAR(exact_ground_state(HamiltonianSpec::heisenberg(3)).energy_per_site, dense_ground_energy(3, true, 0),
              1e-10);
  EXPECT_NEAR(exact_ground_state(HamiltonianSpec::ising(3.0, 3)).energy_per_site,
              dense_ground_energy(3, false, 3.0), 1e-10);
  auto gs = exact_ground_state(HamiltonianSpec::ising(1.0, 3), true);
  ASSERT_EQ(gs.vector.size(), 512u);
  auto hv = apply_hamiltonian(HamiltonianSpec::ising(1.0, 3), gs.vector);
  double res = 0.0;
  for (std::size_t i = 0; i < hv.size(); ++i) res += std::pow(hv[i] - 9.0 * gs.energy_per_site * gs.vector[i], 2);
  EXPECT_LE(std::sqrt(res / oracle::norm2(gs.vector)), 1e-6);
}

TEST(Lanczos, FourByFourHeisenberg) {
  EXPECT_NEAR(exact_ground_state(HamiltonianSpec::heisenberg(4)).energy_per_site, -0.57432544, 5e-9);
}

TEST(Reference, Lookup) {
  EXPECT_EQ(reference_energy(HamiltonianSpec::heisenberg(10)), -0.628655);
  EXPECT_NEAR(reference_energy(HamiltonianSpec::heisenberg(2)), -0.5, 1e-10);
  EXPECT_THROW(reference_energy(HamiltonianSpec::heisenberg(6)), std::invalid_argument);
}

TEST(Report, JsonAndCsv) {
  auto p = product_with_noise(2, 2, 1, neel_pattern(2), 1, 0.0);
  auto e = energy(p, HamiltonianSpec::heisenberg(2), EnvironmentSpec::full(4));
  set_reference(e, -0.5);
  EXPECT_NEAR(e.energy_per_site, -0.25, 1e-14);  // four bonds at -1/4
  EXPECT_NEAR(*e.relative_error, 0.5, 1e-14);
  auto j = nlohmann::json::parse(to_json(e));
  EXPECT_EQ(j.at("schema"), "peps-energy-report/1");
  EXPECT_EQ(j.at("terms").size(), 4u);
  EXPECT_DOUBLE_EQ(j.at("energy_per_site").get<double>(), e.energy_per_site);
  std::istringstream csv(to_csv(e));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("# schema: peps-energy-terms/1", 0), 0u);
  std::getline(csv, line);
  EXPECT_EQ(line, "row,col,orientation,value");
  std::getline(csv, line);
  EXPECT_EQ(line, "0,0,h,-0.25");
  // Values round-trip through the text form.
  auto q = oracle::random_peps(3, 2, 8);
  auto f = energy(q, HamiltonianSpec::heisenberg(3), EnvironmentSpec::full(4));
  std::istringstream c2(to_csv(f));
  std::getline(c2, line);
  std::getline(c2, line);
  for (const auto& t : f.terms) {
    std::getline(c2, line);
    EXPECT_EQ(std::stod(line.substr(line.rfind(',') + 1)), t.value);
  }
}
