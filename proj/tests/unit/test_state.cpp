#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "../support/oracles.hpp"
#include "peps/state.hpp"

using namespace peps;

namespace {

double overlap(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i];
  return std::abs(ab) / std::sqrt(oracle::norm2(a) * oracle::norm2(b));
}

GammaLambdaState random_gamma_lambda(std::size_t side, std::size_t bond, std::uint64_t seed) {
  auto s = to_gamma_lambda(oracle::random_peps(side, bond, seed));
  Rng rng(seed + 99);
  auto fill = [&](std::vector<double>& l) {
    for (auto& x : l) x = rng.uniform(0.1, 1.0);
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

TEST(ProductWithNoise, ExactProductWithoutNoise) {
  std::vector<double> local{0.6, 0.8};
  auto p = product_with_noise(3, 2, 1, uniform_pattern(3, local), 1, 0.0);
  validate(p);
  auto psi = peps_to_statevector(p);
  std::vector<double> ref(1, 1.0);
  for (int k = 0; k < 9; ++k) {
    std::vector<double> next;
    for (double x : ref)
      for (double y : local) next.push_back(x * y);
    ref = next;
  }
  EXPECT_NEAR(overlap(psi, ref), 1.0, 1e-14);
}

TEST(ProductWithNoise, DeterministicAndClose) {
  auto a = product_with_noise(4, 2, 2, neel_pattern(4), 42, 0.01);
  auto b = product_with_noise(4, 2, 2, neel_pattern(4), 42, 0.01);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i], b.tensors[i]);
  auto clean = product_with_noise(4, 2, 1, neel_pattern(4), 42, 0.0);
  EXPECT_GE(overlap(peps_to_statevector(a), peps_to_statevector(clean)), 0.99);
  for (const auto& t : a.tensors)
    for (double v : t.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Statevector, MatchesBruteForce) {
  for (std::size_t side : {2u, 3u}) {
    auto p = oracle::random_peps(side, 2, 20 + side);
    auto psi = peps_to_statevector(p);
    auto ref = oracle::brute_force_statevector(p);
    ASSERT_EQ(psi.size(), ref.size());
    for (std::size_t i = 0; i < psi.size(); ++i) EXPECT_NEAR(psi[i], ref[i], 1e-12 * (1 + std::abs(ref[i])));
  }
}

TEST(Statevector, SizeGuard) {
  auto p = oracle::random_peps(5, 1, 1);
  EXPECT_THROW(peps_to_statevector(p), std::length_error);
}

TEST(AbsorbLambdas, UnitLambdasLeaveTensors) {
  auto p = oracle::random_peps(3, 2, 30);
  auto q = absorb_lambdas(to_gamma_lambda(p));
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(p.tensors[i], q.tensors[i]);
}

TEST(AbsorbLambdas, SameStateAsExplicitLambdaNetwork) {
  auto s = random_gamma_lambda(2, 2, 31);
  // Oracle: put each full lambda on the left/upper tensor only.
  PepsState lopsided{s.side, s.phys_dim, s.gammas};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      Tensor& t = lopsided.at(r, c);
      for (std::size_t i = 0; i < t.size(); ++i) {
        std::vector<std::size_t> idx(5);
        std::size_t x = i;
        for (std::size_t k = 5; k-- > 0;) {
          idx[k] = x % t.extent(k);
          x /= t.extent(k);
        }
        if (c + 1 < 2) t[i] *= s.horizontal[r][c][idx[kRight]];
        if (r + 1 < 2) t[i] *= s.vertical[r][c][idx[kDown]];
      }
    }
  auto a = peps_to_statevector(absorb_lambdas(s));
  auto b = oracle::brute_force_statevector(lopsided);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(TransposeLattice, InvolutionAndRelabeling) {
  auto p = oracle::random_peps(3, 2, 40);
  auto t = transpose_lattice(p);
  validate(t);
  auto tt = transpose_lattice(t);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(tt.tensors[i], p.tensors[i]);
  auto a = peps_to_statevector(p);
  auto b = peps_to_statevector(t);
  // Digit (r*3+c) of a is digit (c*3+r) of b.
  for (std::size_t x = 0; x < a.size(); ++x) {
    std::size_t y = 0;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t bit = (x >> (8 - (r * 3 + c))) & 1;
        y |= bit << (8 - (c * 3 + r));
      }
    EXPECT_NEAR(a[x], b[y], 1e-14);
  }
  auto s = random_gamma_lambda(3, 2, 41);
  auto st = transpose_lattice(transpose_lattice(s));
  EXPECT_EQ(st.horizontal, s.horizontal);
  EXPECT_EQ(st.vertical, s.vertical);
}

TEST(FlipVertical, Relabeling) {
  auto p = oracle::random_peps(3, 2, 45);
  auto f = flip_vertical(p);
  validate(f);
  auto a = peps_to_statevector(p);
  auto b = peps_to_statevector(f);
  for (std::size_t x = 0; x < a.size(); ++x) {
    std::size_t y = 0;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t bit = (x >> (8 - (r * 3 + c))) & 1;
        y |= bit << (8 - ((2 - r) * 3 + c));
      }
    EXPECT_NEAR(a[x], b[y], 1e-14);
  }
}

TEST(GrowBond, KeepsStateUpToNoise) {
  auto p = oracle::random_peps(3, 2, 50);
  auto g = grow_bond(p, 3, 7, 0.0);
  validate(g);
  EXPECT_EQ(g.bond_dim(), 3u);
  auto a = peps_to_statevector(p), b = peps_to_statevector(g);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
  auto s = grow_bond(random_gamma_lambda(3, 2, 51), 3, 7, 1e-8);
  validate(s);
  EXPECT_EQ(s.horizontal[0][0].back(), 0.0);
}

TEST(Validate, CatchesBrokenGrids) {
  auto p = oracle::random_peps(3, 2, 60);
  p.at(0, 0) = Tensor({2, 2, 1, 2, 2});
  EXPECT_THROW(validate(p), ShapeError);
  auto q = oracle::random_peps(3, 2, 61);
  q.at(1, 1) = Tensor({2, 2, 2, 2, 3});
  EXPECT_THROW(validate(q), ShapeError);
}

TEST(StateFiles, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "peps_state_roundtrip";
  std::filesystem::remove_all(dir);
  auto p = oracle::random_peps(3, 2, 70);
  save_state(dir / "plain", p, {70, "test"});
  auto l = load_state(dir / "plain");
  EXPECT_EQ(l.form, "plain");
  EXPECT_EQ(l.provenance.seed, 70u);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(l.plain.tensors[i], p.tensors[i]);
  auto s = random_gamma_lambda(3, 2, 71);
  save_state(dir / "gl", s);
  auto m = load_state(dir / "gl");
  EXPECT_EQ(m.form, "gamma-lambda");
  EXPECT_EQ(m.gamma_lambda.horizontal, s.horizontal);
  EXPECT_EQ(m.gamma_lambda.vertical, s.vertical);
  std::filesystem::remove_all(dir);
}
