#include "peps/environment.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "peps/parallel.hpp"

namespace peps {

EnvironmentSpec EnvironmentSpec::full(std::size_t d_prime) {
  EnvironmentSpec s;
  s.kind = Kind::kFull;
  s.d_prime = d_prime;
  return s;
}

EnvironmentSpec EnvironmentSpec::cluster(std::size_t delta, std::size_t d_prime) {
  EnvironmentSpec s;
  s.kind = Kind::kCluster;
  s.delta = delta;
  s.d_prime = d_prime;
  return s;
}

EnvironmentSpec EnvironmentSpec::separable() {
  EnvironmentSpec s;
  s.kind = Kind::kSeparable;
  s.d_prime = 1;
  return s;
}

EnvironmentSpec EnvironmentSpec::single_layer(std::size_t d_doubleprime, std::size_t d_prime_pur) {
  EnvironmentSpec s;
  s.kind = Kind::kSingleLayer;
  s.d_doubleprime = d_doubleprime;
  s.d_prime_pur = d_prime_pur;
  return s;
}

std::size_t EnvironmentSpec::general_rows(std::size_t side) const {
  switch (kind) {
    case Kind::kFull:
      return side;
    case Kind::kCluster:
      return delta;
    default:
      return 0;
  }
}

std::string EnvironmentSpec::label() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kFull:
      os << "full(D'=" << d_prime << ")";
      break;
    case Kind::kCluster:
      os << "cluster(delta=" << delta << ",D'=" << d_prime << ")";
      break;
    case Kind::kSeparable:
      os << "separable";
      break;
    case Kind::kSingleLayer:
      os << "single-layer(D''=" << d_doubleprime << ",d'=" << d_prime_pur << ")";
      break;
  }
  return os.str();
}

// ---- boundaries --------------------------------------------------------------------------

std::vector<BoundaryMpo> separable_prefixes(const PepsState& p, const AlsOptions& als) {
  std::vector<BoundaryMpo> sep;
  sep.reserve(p.side + 1);
  sep.push_back(BoundaryMpo::trivial(p.side));
  for (std::size_t k = 0; k < p.side; ++k) {
    sep.push_back(compress_separable(sep.back(), p.row(k), als.tol, als.max_sweeps));
  }
  return sep;
}

BoundaryMpo cluster_boundary(const PepsState& p, std::size_t row, std::size_t general,
                             std::size_t d_prime, const std::vector<BoundaryMpo>& sep,
                             const AlsOptions& als, const std::vector<BoundaryMpo>* warm,
                             std::vector<BoundaryMpo>* trail) {
  const std::size_t g = std::min(general, row);
  const std::size_t start = row - g;
  if (sep.size() <= start) throw std::out_of_range("cluster_boundary: separable prefix missing");
  BoundaryMpo b = sep[start];
  if (trail != nullptr) trail->clear();
  for (std::size_t i = 0; i < g; ++i) {
    const BoundaryMpo* init = (warm != nullptr && i < warm->size()) ? &(*warm)[i] : nullptr;
    b = apply_row_compress(b, p.row(start + i), d_prime, als, init).boundary;
    if (trail != nullptr) trail->push_back(b);
  }
  return b;
}

namespace {

BoundaryMpo single_layer_above(const PepsState& p, std::size_t row, const EnvironmentSpec& spec) {
  const std::size_t bond = p.bond_dim();
  const std::size_t dpp = spec.d_doubleprime ? spec.d_doubleprime : bond;
  const std::size_t dp = spec.d_prime_pur ? spec.d_prime_pur : bond;
  PurificationMps pur = PurificationMps::trivial(p.side);
  for (std::size_t k = 0; k < row; ++k) {
    pur = sl_apply_ket_row(pur, p.row(k), dpp, spec.als);
    pur = sl_reduce_purification(pur, dp);
  }
  return purification_to_boundary(pur);
}

BoundaryMpo boundary_above(const PepsState& p, std::size_t row, const EnvironmentSpec& spec) {
  if (spec.kind == EnvironmentSpec::Kind::kSingleLayer) return single_layer_above(p, row, spec);
  const std::size_t g = std::min(spec.general_rows(p.side), row);
  const std::size_t start = row - g;
  std::vector<BoundaryMpo> sep;
  sep.push_back(BoundaryMpo::trivial(p.side));
  for (std::size_t k = 0; k < start; ++k) {
    sep.push_back(compress_separable(sep.back(), p.row(k), spec.als.tol, spec.als.max_sweeps));
  }
  return cluster_boundary(p, row, g, spec.d_prime, sep, spec.als);
}

}  // namespace

BoundaryMpo boundary_for_row(const PepsState& p, std::size_t row, Side side,
                             const EnvironmentSpec& spec) {
  if (row >= p.side) throw std::out_of_range("boundary_for_row: row out of range");
  if (side == Side::kAbove) return boundary_above(p, row, spec);
  return boundary_above(flip_vertical(p), p.side - 1 - row, spec);
}

RowEnvironment row_environment(const PepsState& p, std::size_t row, const EnvironmentSpec& spec) {
  return {boundary_for_row(p, row, Side::kAbove, spec), boundary_for_row(p, row, Side::kBelow, spec)};
}

// ---- in-row transfers -----------------------------------------------------------------------

namespace {
double rescale(Tensor& t, double* log_scale) {
  const double n = frobenius_norm(t);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("transfer tensor vanished or overflowed");
  t *= 1.0 / n;
  if (log_scale != nullptr) *log_scale += std::log(n);
  return n;
}
}  // namespace

Tensor transfer_edge() { return Tensor({1, 1, 1, 1}, {1.0}); }

Tensor transfer_left(const Tensor& e, const Tensor& top, const Tensor& ket, const Tensor& bottom,
                     double* log_scale) {
  Tensor e1 = contract(e, top, {{0, 0}});                     // k b bt ku bu t'
  Tensor e2 = contract(e1, ket, {{0, 2}, {3, 1}});            // b bt bu t' s d r
  Tensor e3 = contract(e2, ket, {{0, 2}, {2, 1}, {4, 0}});    // bt t' d r d' r'
  Tensor out = contract(e3, bottom, {{0, 0}, {2, 1}, {4, 2}});  // t' r r' bt'
  rescale(out, log_scale);
  return out;
}

Tensor transfer_right(const Tensor& e, const Tensor& top, const Tensor& ket, const Tensor& bottom,
                      double* log_scale) {
  Tensor e1 = contract(e, top, {{0, 3}});                     // k b bt t0 ku bu
  Tensor e2 = contract(e1, ket, {{0, 4}, {4, 1}});            // b bt t0 bu s l d
  Tensor e3 = contract(e2, ket, {{0, 4}, {3, 1}, {4, 0}});    // bt t0 l d l' d'
  Tensor out = contract(e3, bottom, {{0, 3}, {3, 1}, {5, 2}});  // t0 l l' bt0
  rescale(out, log_scale);
  return out;
}

NormResult close_row(const RowEnvironment& env, const SandwichRow& row) {
  double log_scale = env.top.log_scale + env.bottom.log_scale;
  Tensor e = transfer_edge();
  for (std::size_t j = 0; j < row.length(); ++j) {
    e = transfer_left(e, env.top.sites[j], row.ket_sites[j], env.bottom.sites[j], &log_scale);
  }
  // After rescaling e is +-1.
  const double v = e[0];
  return {log_scale + std::log(std::abs(v)), v < 0.0 ? -1 : 1};
}

NormResult norm(const PepsState& p, const EnvironmentSpec& spec) {
  const std::size_t mid = p.side / 2;
  return close_row(row_environment(p, mid, spec), p.row(mid));
}

BondEnvironment bond_environment(const PepsState& p, const Bond& bond, const EnvironmentSpec& spec) {
  if (bond.orientation != Orientation::kHorizontal) {
    throw std::invalid_argument("bond_environment: horizontal bonds only; transpose the lattice");
  }
  if (bond.row >= p.side || bond.col + 1 >= p.side) throw std::out_of_range("bond_environment: bond");
  BondEnvironment env;
  env.rows = row_environment(p, bond.row, spec);
  const auto row = p.row(bond.row);
  env.left = transfer_edge();
  for (std::size_t j = 0; j < bond.col; ++j) {
    env.left = transfer_left(env.left, env.rows.top.sites[j], row.ket_sites[j], env.rows.bottom.sites[j],
                             &env.log_left);
  }
  env.right = transfer_edge();
  for (std::size_t j = p.side; j-- > bond.col + 2;) {
    env.right = transfer_right(env.right, env.rows.top.sites[j], row.ket_sites[j],
                               env.rows.bottom.sites[j], &env.log_right);
  }
  return env;
}

Tensor pair_density(const BondEnvironment& env, const Tensor& a, const Tensor& b, std::size_t col) {
  const auto& t0 = env.rows.top.sites[col];
  const auto& t1 = env.rows.top.sites[col + 1];
  const auto& b0 = env.rows.bottom.sites[col];
  const auto& b1 = env.rows.bottom.sites[col + 1];
  Tensor f = contract(env.left, t0, {{0, 0}});               // k b bt ku bu t'
  f = contract(f, a, {{0, 2}, {3, 1}});                       // b bt bu t' s d r
  f = contract(f, a, {{0, 2}, {2, 1}});                       // bt t' s d r s' d' r'
  f = contract(f, b0, {{0, 0}, {3, 1}, {6, 2}});              // t' s r s' r' bt'
  Tensor g = contract(f, t1, {{0, 0}});                       // s r s' r' bt' ku bu t''
  g = contract(g, b, {{1, 2}, {5, 1}});                       // s s' r' bt' bu t'' S d R
  g = contract(g, b, {{2, 2}, {4, 1}});                       // s s' bt' t'' S d R S' d' R'
  g = contract(g, b1, {{2, 0}, {5, 1}, {8, 2}});              // s s' t'' S R S' R' bt''
  return contract(g, env.right, {{2, 0}, {4, 1}, {6, 2}, {7, 3}});  // s s' S S'
}

std::vector<NormStudyRow> norm_error_study(const PepsState& p, const std::vector<EnvironmentSpec>& specs,
                                           const EnvironmentSpec& reference) {
  const NormResult ref = norm(p, reference);
  std::vector<NormStudyRow> out;
  for (const auto& s : specs) {
    const auto t0 = std::chrono::steady_clock::now();
    const NormResult r = norm(p, s);
    const auto t1 = std::chrono::steady_clock::now();
    NormStudyRow row;
    row.spec = s;
    row.log_norm = r.log_norm;
    const double ratio = std::exp(r.log_norm - ref.log_norm) * (r.sign * ref.sign);
    row.relative_error = std::abs(ratio - 1.0);
    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    out.push_back(row);
  }
  return out;
}

namespace {

// tops[r] for r = 0..L-1: boundary above row r.
std::vector<BoundaryMpo> tops_for(const PepsState& p, const EnvironmentSpec& spec, std::size_t workers) {
  const auto L = p.side;
  std::vector<BoundaryMpo> tops(L);
  switch (spec.kind) {
    case EnvironmentSpec::Kind::kFull: {
      tops[0] = BoundaryMpo::trivial(L);
      for (std::size_t r = 1; r < L; ++r) {
        tops[r] = apply_row_compress(tops[r - 1], p.row(r - 1), spec.d_prime, spec.als).boundary;
      }
      break;
    }
    case EnvironmentSpec::Kind::kSeparable: {
      auto sep = separable_prefixes(p, spec.als);
      for (std::size_t r = 0; r < L; ++r) tops[r] = std::move(sep[r]);
      break;
    }
    case EnvironmentSpec::Kind::kCluster: {
      const auto sep = separable_prefixes(p, spec.als);
      parallel_for(L, workers, [&](std::size_t r) {
        tops[r] = cluster_boundary(p, r, spec.delta, spec.d_prime, sep, spec.als);
      });
      break;
    }
    case EnvironmentSpec::Kind::kSingleLayer: {
      const std::size_t bond = p.bond_dim();
      const std::size_t dpp = spec.d_doubleprime ? spec.d_doubleprime : bond;
      const std::size_t dp = spec.d_prime_pur ? spec.d_prime_pur : bond;
      PurificationMps pur = PurificationMps::trivial(L);
      for (std::size_t r = 0; r < L; ++r) {
        tops[r] = purification_to_boundary(pur);
        if (r + 1 < L) pur = sl_reduce_purification(sl_apply_ket_row(pur, p.row(r), dpp, spec.als), dp);
      }
      break;
    }
  }
  return tops;
}

}  // namespace

std::vector<RowEnvironment> all_row_environments(const PepsState& p, const EnvironmentSpec& spec,
                                                 std::size_t workers) {
  auto tops = tops_for(p, spec, workers);
  auto flipped = tops_for(flip_vertical(p), spec, workers);
  std::vector<RowEnvironment> out(p.side);
  for (std::size_t r = 0; r < p.side; ++r) {
    out[r].top = std::move(tops[r]);
    out[r].bottom = std::move(flipped[p.side - 1 - r]);
  }
  return out;
}

}  // namespace peps
