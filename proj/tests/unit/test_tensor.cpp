#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "../support/oracles.hpp"
#include "peps/io.hpp"
#include "peps/linalg.hpp"
#include "peps/tensor.hpp"

using namespace peps;

TEST(Contract, OnesMatrixTimesOnesVector) {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({3}, std::vector<double>(3, 1.0));
  Tensor c = contract(a, b, {{1, 0}});
  ASSERT_EQ(c.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(c[0], 3.0);
  EXPECT_DOUBLE_EQ(c[1], 3.0);
}

TEST(Contract, IdentityComposition) {
  EXPECT_EQ(contract(Tensor::identity(4), Tensor::identity(4), {{1, 0}}), Tensor::identity(4));
}

TEST(Contract, MatchesTripleLoop) {
  Tensor a = oracle::random_tensor({2, 3, 4}, 11);
  Tensor b = oracle::random_tensor({4, 3}, 12);
  Tensor c = contract(a, b, {{2, 0}, {1, 1}});
  ASSERT_EQ(c.shape(), (Shape{2}));
  for (std::size_t i = 0; i < 2; ++i) {
    double ref = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) ref += a.at({i, j, k}) * b.at({k, j});
    EXPECT_NEAR(c[i], ref, 1e-13);
  }
}

TEST(Contract, FreeAxisOrder) {
  Tensor a = oracle::random_tensor({2, 5, 3}, 1);
  Tensor b = oracle::random_tensor({4, 5, 6}, 2);
  Tensor c = contract(a, b, {{1, 1}});
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4, 6}));
  double ref = 0.0;
  for (std::size_t k = 0; k < 5; ++k) ref += a.at({1, k, 2}) * b.at({3, k, 5});
  EXPECT_NEAR(c.at({1, 2, 3, 5}), ref, 1e-13);
}

TEST(Contract, MismatchNamesAxisPair) {
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    contract(a, b, {{1, 0}});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(1,0)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(contract(a, Tensor({3, 3}), {{1, 0}, {1, 1}}), ShapeError);
}

TEST(Contract, Bilinear) {
  Tensor a1 = oracle::random_tensor({3, 4, 5}, 3), a2 = oracle::random_tensor({3, 4, 5}, 4);
  Tensor b = oracle::random_tensor({5, 4, 2}, 5);
  const double al = 0.7, be = -1.3;
  Tensor lhs = contract(al * a1 + be * a2, b, {{2, 0}, {1, 1}});
  Tensor rhs = al * contract(a1, b, {{2, 0}, {1, 1}}) + be * contract(a2, b, {{2, 0}, {1, 1}});
  EXPECT_LE(frobenius_norm(lhs - rhs), 1e-12);
  Tensor b2 = oracle::random_tensor({5, 4, 2}, 6);
  Tensor l2 = contract(a1, al * b + be * b2, {{2, 0}, {1, 1}});
  Tensor r2 = al * contract(a1, b, {{2, 0}, {1, 1}}) + be * contract(a1, b2, {{2, 0}, {1, 1}});
  EXPECT_LE(frobenius_norm(l2 - r2), 1e-12);
}

TEST(PermuteReshape, TransposeAndFlatten) {
  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::size_t perm[] = {1, 0};
  const std::size_t groups[] = {1, 1};
  Tensor t = permute_reshape(m, perm, groups);
  EXPECT_EQ(t, Tensor({3, 2}, {1, 4, 2, 5, 3, 6}));
  Tensor c = oracle::random_tensor({2, 2, 2}, 9);
  const std::size_t id[] = {0, 1, 2};
  const std::size_t g2[] = {2, 1};
  Tensor f = permute_reshape(c, id, g2);
  EXPECT_EQ(f.shape(), (Shape{4, 2}));
  EXPECT_TRUE(std::equal(f.values().begin(), f.values().end(), c.values().begin()));
}

TEST(PermuteReshape, IndexArithmeticOracle) {
  Tensor a = oracle::random_tensor({3, 4, 5}, 21);
  const std::size_t perm[] = {2, 0, 1};
  const std::size_t groups[] = {2, 1};
  Tensor t = permute_reshape(a, perm, groups);
  ASSERT_EQ(t.shape(), (Shape{15, 4}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(t[(k * 3 + i) * 4 + j], a.at({i, j, k}));
}

TEST(PermuteReshape, Errors) {
  Tensor a({2, 3});
  const std::size_t bad[] = {0, 0};
  const std::size_t groups[] = {1, 1};
  EXPECT_THROW(permute_reshape(a, bad, groups), ShapeError);
  const std::size_t ok[] = {1, 0};
  const std::size_t bad_groups[] = {1, 2};
  EXPECT_THROW(permute_reshape(a, ok, bad_groups), ShapeError);
}

TEST(Svd, DiagonalTruncation) {
  const double d[] = {3, 2, 1};
  auto r = svd_truncate(Tensor::diagonal(d), 2);
  ASSERT_EQ(r.s.size(), 2u);
  EXPECT_NEAR(r.s[0], 3, 1e-14);
  EXPECT_NEAR(r.s[1], 2, 1e-14);
  EXPECT_NEAR(r.discarded_weight, 1.0 / 14.0, 1e-14);
}

TEST(Svd, IsometryKeepsEverything) {
  auto q = qr(oracle::random_tensor({6, 4}, 8)).q;
  auto r = svd_truncate(q, 10);
  EXPECT_NEAR(r.discarded_weight, 0.0, 1e-14);
}

TEST(Svd, OptimalErrorAgainstFullDecomposition) {
  Tensor m = oracle::random_tensor({8, 6}, 31);
  Eigen::MatrixXd e(8, 6);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 6; ++j) e(i, j) = m[i * 6 + j];
  Eigen::JacobiSVD<Eigen::MatrixXd> full(e);
  const auto sv = full.singularValues();
  const double expected = std::sqrt(sv(3) * sv(3) + sv(4) * sv(4) + sv(5) * sv(5));
  auto r = svd_truncate(m, 3);
  Tensor us = r.u;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t k = 0; k < 3; ++k) us[i * 3 + k] *= r.s[k];
  EXPECT_NEAR(frobenius_norm(m - matmul(us, r.vt)), expected, 1e-12);
  // Isometries.
  EXPECT_LE(frobenius_norm(matmul(transpose(r.u), r.u) - Tensor::identity(3)), 1e-12);
  EXPECT_LE(frobenius_norm(matmul(r.vt, transpose(r.vt)) - Tensor::identity(3)), 1e-12);
}

TEST(Svd, FullRankReconstructsAndErrorMonotone) {
  Tensor m = oracle::random_tensor({7, 5}, 41);
  double prev = 1e300;
  for (std::size_t k = 1; k <= 5; ++k) {
    auto r = svd_truncate(m, k);
    Tensor us = r.u;
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < r.s.size(); ++j) us[i * r.s.size() + j] *= r.s[j];
    const double err = frobenius_norm(m - matmul(us, r.vt));
    EXPECT_LE(err, prev + 1e-14);
    prev = err;
    for (std::size_t j = 1; j < r.s.size(); ++j) EXPECT_GE(r.s[j - 1], r.s[j]);
  }
  EXPECT_LE(prev, 1e-12);
}

TEST(Svd, NonFiniteInputThrows) {
  Tensor m({2, 2}, {1, std::nan(""), 0, 1});
  EXPECT_THROW(svd_truncate(m, 2), NumericalError);
}

TEST(Solve, IdentityAndCutoff) {
  std::vector<double> b{0.3, -2.0, 5.0};
  auto x = solve_hermitian_psd(Tensor::identity(3), b);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x[i], b[i], 1e-15);
  const double d[] = {1.0, 1e-16};
  std::vector<double> ones{1.0, 1.0};
  auto y = solve_hermitian_psd(Tensor::diagonal(d), ones, 1e-12);
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Solve, MatchesDenseSolver) {
  Tensor a = oracle::random_tensor({6, 6}, 51);
  Tensor n = matmul(transpose(a), a);
  n += 0.1 * Tensor::identity(6);
  Tensor bt = oracle::random_tensor({6}, 52);
  std::vector<double> b(bt.values().begin(), bt.values().end());
  auto x = solve_hermitian_psd(n, b);
  Eigen::MatrixXd e(6, 6);
  Eigen::VectorXd eb(6);
  for (int i = 0; i < 6; ++i) {
    eb(i) = b[i];
    for (int j = 0; j < 6; ++j) e(i, j) = n[i * 6 + j];
  }
  Eigen::VectorXd ref = e.partialPivLu().solve(eb);
  double res = 0.0, bn = 0.0;
  for (int i = 0; i < 6; ++i) {
    double r = -b[i];
    for (int j = 0; j < 6; ++j) r += n[i * 6 + j] * x[j];
    res += r * r;
    bn += b[i] * b[i];
    EXPECT_NEAR(x[i], ref(i), 1e-9);
  }
  EXPECT_LE(std::sqrt(res), 1e-10 * std::sqrt(bn));
}

TEST(Solve, PermutationInvariant) {
  Tensor a = oracle::random_tensor({5, 5}, 61);
  Tensor n = matmul(transpose(a), a);
  std::vector<double> b{1, 2, 3, 4, 5};
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Tensor np({5, 5});
  std::vector<double> bp(5);
  for (std::size_t i = 0; i < 5; ++i) {
    bp[i] = b[perm[i]];
    for (std::size_t j = 0; j < 5; ++j) np[i * 5 + j] = n[perm[i] * 5 + perm[j]];
  }
  auto x = solve_hermitian_psd(n, b);
  auto xp = solve_hermitian_psd(np, bp);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(xp[i], x[perm[i]], 1e-9 * (1 + std::abs(x[perm[i]])));
}

TEST(Solve, NotPositiveCarriesSpectrum) {
  Tensor n = -1.0 * Tensor::identity(2);
  std::vector<double> b{1, 1};
  try {
    solve_hermitian_psd(n, b);
    FAIL();
  } catch (const NotPositiveError& e) {
    EXPECT_EQ(e.spectrum().size(), 2u);
  }
}

TEST(Qr, Reconstructs) {
  Tensor m = oracle::random_tensor({5, 3}, 71);
  auto [q, r] = qr(m);
  EXPECT_LE(frobenius_norm(matmul(q, r) - m), 1e-13);
  auto [l, q2] = lq(transpose(m));
  EXPECT_LE(frobenius_norm(matmul(l, q2) - transpose(m)), 1e-13);
  EXPECT_LE(frobenius_norm(matmul(q2, transpose(q2)) - Tensor::identity(3)), 1e-13);
}

TEST(Snapshot, RoundTripAndLayout) {
  Tensor t = oracle::random_tensor({2, 3, 1}, 81);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 8 + 8 + 3 * 8 + 6 * 8u);
  EXPECT_EQ(bytes.substr(0, 8), "PEPSTNS1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);  // rank, little-endian
  EXPECT_EQ(read_tensor(ss), t);
  std::stringstream bad("PEPSXXXX");
  EXPECT_THROW(read_tensor(bad), FormatError);
}
