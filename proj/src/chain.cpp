#include "peps/chain.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "peps/io.hpp"
#include "peps/linalg.hpp"
#include "peps/random.hpp"

namespace peps {

namespace {

constexpr std::uint64_t kTagBoundary = 1;      // (left, ket, bra, right)
constexpr std::uint64_t kTagPurification = 2;  // (left, system, purification, right)

// Above this many entries the dense distance check is skipped.
constexpr std::size_t kDenseErrorLimit = std::size_t{1} << 16;

Tensor ones4() { return Tensor({1, 1, 1, 1}, {1.0}); }

void check_row(const BoundaryMpo& b, const SandwichRow& row) {
  if (b.length() != row.length()) throw ShapeError("boundary and row lengths differ");
  for (std::size_t j = 0; j < row.length(); ++j) {
    const auto& a = row.ket_sites[j];
    if (a.rank() != 5) throw ShapeError("row site must be rank 5");
    if (b.sites[j].extent(1) != a.extent(1) || b.sites[j].extent(2) != a.extent(1)) {
      throw ShapeError("boundary legs at site " + std::to_string(j) + " do not match row up-leg " +
                       std::to_string(a.extent(1)));
    }
  }
}

// ---- general boundary x row ALS pieces --------------------------------------------
// B: [a, k, b, a'], A: [s, u, l, d, r], X: [x, d, d', x']
// LE: [x, a, l, l'], RE: [x', a', r, r']

// LE . B . A . A -> [x, a', d, r, d', r']
Tensor open_left(const Tensor& le, const Tensor& b, const Tensor& a) {
  Tensor t1 = contract(le, b, {{1, 0}});                    // x l l' k b a'
  Tensor t2 = contract(t1, a, {{1, 2}, {3, 1}});            // x l' b a' s d r
  return contract(t2, a, {{1, 2}, {2, 1}, {4, 0}});         // x a' d r d' r'
}

// RE . B . A . A -> [x', a, l, d, l', d']
Tensor open_right(const Tensor& re, const Tensor& b, const Tensor& a) {
  Tensor t1 = contract(re, b, {{1, 3}});                    // x' r r' a k b
  Tensor t2 = contract(t1, a, {{1, 4}, {4, 1}});            // x' r' a b s l d
  return contract(t2, a, {{1, 4}, {3, 1}, {4, 0}});         // x' a l d l' d'
}

Tensor close_left(const Tensor& open, const Tensor& x) {
  return permute(contract(open, x, {{0, 0}, {2, 1}, {4, 2}}), {3, 0, 1, 2});
}

Tensor close_right(const Tensor& open, const Tensor& x) {
  return permute(contract(open, x, {{0, 3}, {3, 1}, {5, 2}}), {3, 0, 1, 2});
}

// Local optimum from an open-left tensor and the right environment.
Tensor local_from_left(const Tensor& open, const Tensor& re) {
  return contract(open, re, {{1, 1}, {3, 2}, {5, 3}});      // x d d' x'
}

// Local optimum from an open-right tensor and the left environment.
Tensor local_from_right(const Tensor& open, const Tensor& le) {
  Tensor t = contract(open, le, {{1, 1}, {2, 2}, {4, 3}});  // x' d d' x
  return permute(t, {3, 1, 2, 0});
}

// Dense vector of the exact product, legs ordered (d0, d0', d1, d1', ...).
Tensor dense_product(const BoundaryMpo& b, const SandwichRow& row) {
  Tensor state = Tensor({1, 1, 1, 1}, {1.0});  // [phys, a, r, r']
  for (std::size_t j = 0; j < row.length(); ++j) {
    Tensor open = open_left(state, b.sites[j], row.ket_sites[j]);  // phys a' d r d' r'
    open = permute(open, {0, 2, 4, 1, 3, 5});                       // phys d d' a' r r'
    const auto& s = open.shape();
    state = std::move(open).reshaped({s[0] * s[1] * s[2], s[3], s[4], s[5]});
  }
  return std::move(state).reshaped({state.size()});
}

Tensor dense_chain(const BoundaryMpo& x) {
  Tensor state({1, 1}, {1.0});  // [phys, bond]
  for (const auto& s : x.sites) {
    Tensor t = contract(state, s, {{1, 0}});  // phys k b x'
    const auto& sh = t.shape();
    state = std::move(t).reshaped({sh[0] * sh[1] * sh[2], sh[3]});
  }
  return std::move(state).reshaped({state.size()});
}

// ---- separable pieces (all bonds of extent 1) ------------------------------------
// LE, RE, M, X are D x D matrices.

Tensor sep_left(const Tensor& le, const Tensor& m, const Tensor& a, const Tensor& x) {
  Tensor t1 = contract(a, le, {{2, 0}});                     // s u d r l'
  Tensor t2 = contract(t1, m, {{1, 0}});                     // s d r l' b
  Tensor t3 = contract(t2, x, {{1, 0}});                     // s r l' b d'
  return contract(t3, a, {{0, 0}, {2, 2}, {3, 1}, {4, 3}});  // r r'
}

Tensor sep_right(const Tensor& re, const Tensor& m, const Tensor& a, const Tensor& x) {
  Tensor t1 = contract(a, re, {{4, 0}});                     // s u l d r'
  Tensor t2 = contract(t1, m, {{1, 0}});                     // s l d r' b
  Tensor t3 = contract(t2, x, {{2, 0}});                     // s l r' b d'
  return contract(t3, a, {{0, 0}, {2, 4}, {3, 1}, {4, 3}});  // l l'
}

Tensor sep_local(const Tensor& le, const Tensor& re, const Tensor& m, const Tensor& a) {
  Tensor t1 = contract(a, le, {{2, 0}});                     // s u d r l'
  Tensor t2 = contract(t1, m, {{1, 0}});                     // s d r l' b
  Tensor t3 = contract(t2, re, {{2, 0}});                    // s d l' b r'
  return contract(t3, a, {{0, 0}, {2, 2}, {3, 1}, {4, 4}});  // d d'
}

Tensor symmetrize(const Tensor& m) {
  Tensor t = transpose(m);
  t += m;
  t *= 0.5;
  return t;
}

double normalize_in_place(Tensor& t) {
  const double n = frobenius_norm(t);
  if (n > 0.0) t *= 1.0 / n;
  return n;
}

void check_site_psd(const Tensor& m, std::size_t site) {
  const auto ev = eigh(m).values;
  const double lmax = ev.front();
  if (ev.back() < -1e-12 * std::abs(lmax)) {
    std::ostringstream os;
    os << "separable boundary site " << site << " is not positive semidefinite: min eigenvalue "
       << ev.back() << ", max " << lmax;
    throw NumericalError(os.str());
  }
}

// ---- generic MPS compression with an explicit target --------------------------------
// Sites are rank 3: [left, phys, right].

struct MpsFit {
  std::vector<Tensor> sites;  // left-canonical, last site normalized
  double log_norm = 0.0;
};

MpsFit compress_mps(std::vector<Tensor> target, std::size_t max_bond, const AlsOptions& options) {
  const auto n = target.size();
  // Right-canonicalize the target exactly.
  double log_target = 0.0;
  for (std::size_t j = n; j-- > 1;) {
    const auto& s = target[j].shape();
    auto [l, q] = lq(target[j].reshaped({s[0], s[1] * s[2]}));
    target[j] = std::move(q).reshaped({l.extent(1), s[1], s[2]});
    target[j - 1] = contract(target[j - 1], l, {{2, 0}});
  }
  log_target += std::log(normalize_in_place(target[0]));

  // Left-to-right SVD truncation.
  std::vector<Tensor> x(n);
  Tensor carry = Tensor({1, 1}, {1.0});
  for (std::size_t j = 0; j < n; ++j) {
    Tensor t = contract(carry, target[j], {{1, 0}});  // x p r
    const auto s = t.shape();
    if (j + 1 == n) {
      x[j] = std::move(t);
      break;
    }
    auto svd = svd_truncate(t.reshaped({s[0] * s[1], s[2]}), max_bond);
    const auto k = svd.s.size();
    x[j] = std::move(svd.u).reshaped({s[0], s[1], k});
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t c = 0; c < s[2]; ++c) svd.vt[i * s[2] + c] *= svd.s[i];
    }
    carry = std::move(svd.vt);
  }

  // Single-site ALS refinement. LE[j]: [x, t] for bonds left of site j.
  std::vector<Tensor> le(n + 1), re(n + 1);
  le[0] = Tensor({1, 1}, {1.0});
  re[n] = Tensor({1, 1}, {1.0});
  for (std::size_t j = 0; j + 1 < n; ++j) {
    Tensor t = contract(le[j], target[j], {{1, 0}});   // x p r
    le[j + 1] = contract(x[j], t, {{0, 0}, {1, 1}});    // x' r
  }
  double f_prev = -1.0;
  double f = 0.0;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    for (std::size_t j = n; j-- > 1;) {
      Tensor loc = contract(contract(le[j], target[j], {{1, 0}}), re[j + 1], {{2, 1}});  // x p x'
      const auto s = loc.shape();
      auto [l, q] = lq(std::move(loc).reshaped({s[0], s[1] * s[2]}));
      x[j] = std::move(q).reshaped({l.extent(1), s[1], s[2]});
      Tensor t = contract(target[j], re[j + 1], {{2, 1}});  // t p x'
      re[j] = contract(x[j], t, {{1, 1}, {2, 2}});          // x t
    }
    for (std::size_t j = 0; j < n; ++j) {
      Tensor loc = contract(contract(le[j], target[j], {{1, 0}}), re[j + 1], {{2, 1}});
      if (j + 1 == n) {
        f = dot(loc, loc);
        x[j] = std::move(loc);
        break;
      }
      const auto s = loc.shape();
      auto [q, r] = qr(std::move(loc).reshaped({s[0] * s[1], s[2]}));
      x[j] = std::move(q).reshaped({s[0], s[1], r.extent(0)});
      Tensor t = contract(le[j], target[j], {{1, 0}});
      le[j + 1] = contract(x[j], t, {{0, 0}, {1, 1}});
    }
    if (f_prev >= 0.0 && std::abs(f - f_prev) <= options.tol * f) break;
    f_prev = f;
  }
  if (n == 1) f = dot(x[0], x[0]);
  if (!(f > 0.0)) throw NumericalError("compress_mps: zero-norm result");
  x[n - 1] *= 1.0 / std::sqrt(f);
  return {std::move(x), log_target + 0.5 * std::log(f)};
}

}  // namespace

// ---- BoundaryMpo / PurificationMps basics ------------------------------------------

std::size_t BoundaryMpo::max_bond() const {
  std::size_t m = 1;
  for (const auto& s : sites) m = std::max({m, s.extent(0), s.extent(3)});
  return m;
}

bool BoundaryMpo::separable() const {
  return std::all_of(sites.begin(), sites.end(),
                     [](const Tensor& s) { return s.extent(0) == 1 && s.extent(3) == 1; });
}

BoundaryMpo BoundaryMpo::trivial(std::size_t length) {
  BoundaryMpo b;
  b.sites.assign(length, ones4());
  return b;
}

std::size_t PurificationMps::max_bond() const {
  std::size_t m = 1;
  for (const auto& s : sites) m = std::max({m, s.extent(0), s.extent(3)});
  return m;
}

std::size_t PurificationMps::max_purification() const {
  std::size_t m = 1;
  for (const auto& s : sites) m = std::max(m, s.extent(2));
  return m;
}

PurificationMps PurificationMps::trivial(std::size_t length) {
  PurificationMps p;
  p.sites.assign(length, ones4());
  return p;
}

namespace {
template <class Chain>
void validate_chain(const Chain& c, const char* what) {
  if (c.sites.empty()) throw ShapeError(std::string(what) + ": empty chain");
  for (std::size_t j = 0; j < c.sites.size(); ++j) {
    if (c.sites[j].rank() != 4) throw ShapeError(std::string(what) + ": site not rank 4");
    if (j + 1 < c.sites.size() && c.sites[j].extent(3) != c.sites[j + 1].extent(0)) {
      throw ShapeError(std::string(what) + ": bond mismatch after site " + std::to_string(j));
    }
  }
  if (c.sites.front().extent(0) != 1 || c.sites.back().extent(3) != 1) {
    throw ShapeError(std::string(what) + ": outer bonds must have extent 1");
  }
}
}  // namespace

void validate(const BoundaryMpo& mpo) { validate_chain(mpo, "BoundaryMpo"); }
void validate(const PurificationMps& pur) { validate_chain(pur, "PurificationMps"); }

BoundaryMpo canonicalize(const BoundaryMpo& mpo, std::size_t center) {
  validate(mpo);
  if (center >= mpo.length()) throw ShapeError("canonicalize: center out of range");
  BoundaryMpo out = mpo;
  auto& s = out.sites;
  for (std::size_t j = 0; j < center; ++j) {
    const auto sh = s[j].shape();
    auto [q, r] = qr(s[j].reshaped({sh[0] * sh[1] * sh[2], sh[3]}));
    s[j] = std::move(q).reshaped({sh[0], sh[1], sh[2], r.extent(0)});
    s[j + 1] = contract(r, s[j + 1], {{1, 0}});
  }
  for (std::size_t j = s.size() - 1; j > center; --j) {
    const auto sh = s[j].shape();
    auto [l, q] = lq(s[j].reshaped({sh[0], sh[1] * sh[2] * sh[3]}));
    s[j] = std::move(q).reshaped({l.extent(1), sh[1], sh[2], sh[3]});
    s[j - 1] = contract(s[j - 1], l, {{3, 0}});
  }
  const double n = normalize_in_place(s[center]);
  if (!(n > 0.0)) throw NumericalError("canonicalize: zero-norm chain");
  out.log_scale += std::log(n);
  return out;
}

// ---- apply_row_compress ---------------------------------------------------------------

double product_norm_squared(const BoundaryMpo& boundary, const SandwichRow& row) {
  check_row(boundary, row);
  // E: [a, l, l', A, L, L'] with capitals for the second copy.
  Tensor e({1, 1, 1, 1, 1, 1}, {1.0});
  for (std::size_t j = 0; j < row.length(); ++j) {
    const auto& b = boundary.sites[j];
    const auto& a = row.ket_sites[j];
    Tensor t1 = contract(e, b, {{0, 0}});                               // l l' A L L' k b a'
    Tensor t2 = contract(t1, a, {{0, 2}, {5, 1}});                      // l' A L L' b a' s d r
    Tensor t3 = contract(t2, a, {{0, 2}, {4, 1}, {6, 0}});              // A L L' a' d r d' r'
    Tensor t4 = contract(t3, b, {{0, 0}});                              // L L' a' d r d' r' K B A'
    Tensor t5 = contract(t4, a, {{0, 2}, {7, 1}, {3, 3}});              // L' a' r d' r' B A' S R
    e = contract(t5, a, {{0, 2}, {5, 1}, {3, 3}, {7, 0}});              // a' r r' A' R R'
  }
  return e[0];
}

CompressResult apply_row_compress(const BoundaryMpo& boundary, const SandwichRow& row,
                                  std::size_t d_prime, const AlsOptions& options,
                                  const BoundaryMpo* initial) {
  validate(boundary);
  check_row(boundary, row);
  if (d_prime == 0) throw ShapeError("apply_row_compress: d_prime must be positive");
  const auto n = row.length();
  const auto& bs = boundary.sites;
  const auto& as = row.ket_sites;

  std::vector<Tensor> x(n);
  bool warm = false;
  // Below D' = D^2 the fit has competing optima and a warm start can track a stale one.
  std::size_t row_bond = 1;
  for (const auto& a : as) row_bond = std::max(row_bond, a.extent(4));
  if (initial != nullptr && initial->length() == n && d_prime >= row_bond * row_bond) {
    warm = true;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = initial->sites[j];
      const auto& a = as[j];
      if (s.extent(1) != a.extent(3) || s.extent(2) != a.extent(3) || s.extent(0) > d_prime ||
          s.extent(3) > d_prime) {
        warm = false;
        break;
      }
    }
  }

  if (warm) {
    BoundaryMpo c = canonicalize(*initial, n - 1);
    x = std::move(c.sites);
  } else {
    // Sequential SVD truncation while zipping the row into the boundary.
    Tensor carry = ones4();  // [x, a, l, l']
    for (std::size_t j = 0; j < n; ++j) {
      Tensor open = permute(open_left(carry, bs[j], as[j]), {0, 2, 4, 1, 3, 5});  // x d d' a' r r'
      const auto s = open.shape();
      if (j + 1 == n) {
        x[j] = std::move(open).reshaped({s[0], s[1], s[2], s[3] * s[4] * s[5]});
        break;
      }
      auto svd = svd_truncate(open.reshaped({s[0] * s[1] * s[2], s[3] * s[4] * s[5]}), d_prime);
      const auto k = svd.s.size();
      x[j] = std::move(svd.u).reshaped({s[0], s[1], s[2], k});
      const auto cols = s[3] * s[4] * s[5];
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t c = 0; c < cols; ++c) svd.vt[i * cols + c] *= svd.s[i];
      }
      carry = std::move(svd.vt).reshaped({k, s[3], s[4], s[5]});
    }
  }

  // Left environments for the left-canonical chain (center at n - 1).
  std::vector<Tensor> le(n + 1), re(n + 1);
  le[0] = ones4();
  re[n] = ones4();
  for (std::size_t j = 0; j + 1 < n; ++j) le[j + 1] = close_left(open_left(le[j], bs[j], as[j]), x[j]);

  std::vector<double> trace;
  double f = 0.0;
  int decreases = 0;
  int sweeps = 0;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    ++sweeps;
    for (std::size_t j = n; j-- > 1;) {
      Tensor open = open_right(re[j + 1], bs[j], as[j]);
      Tensor loc = local_from_right(open, le[j]);  // x d d' x'
      const auto s = loc.shape();
      auto [l, q] = lq(std::move(loc).reshaped({s[0], s[1] * s[2] * s[3]}));
      x[j] = std::move(q).reshaped({l.extent(1), s[1], s[2], s[3]});
      re[j] = close_right(open, x[j]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      Tensor open = open_left(le[j], bs[j], as[j]);
      Tensor loc = local_from_left(open, re[j + 1]);
      if (j + 1 == n) {
        f = dot(loc, loc);
        x[j] = std::move(loc);
        break;
      }
      const auto s = loc.shape();
      auto [q, r] = qr(std::move(loc).reshaped({s[0] * s[1] * s[2], s[3]}));
      x[j] = std::move(q).reshaped({s[0], s[1], s[2], r.extent(0)});
      le[j + 1] = close_left(open, x[j]);
    }
    if (!std::isfinite(f)) throw NumericalError("apply_row_compress: non-finite overlap");
    if (!trace.empty()) {
      const double prev = trace.back();
      if (f < prev * (1.0 - 1e-12)) {
        if (++decreases >= 2) {
          trace.push_back(f);
          throw AlsDivergence("apply_row_compress: ALS fit worsened on two consecutive sweeps",
                              trace);
        }
      } else {
        decreases = 0;
      }
      trace.push_back(f);
      if (std::abs(f - prev) <= options.tol * f) break;
    } else {
      trace.push_back(f);
    }
  }
  if (!(f > 0.0)) throw NumericalError("apply_row_compress: zero-norm boundary");

  CompressResult result;
  const double norm = std::sqrt(f);
  x[n - 1] *= 1.0 / norm;
  result.boundary.sites = std::move(x);
  result.boundary.log_scale = boundary.log_scale + std::log(norm);
  result.sweeps = sweeps;
  result.truncation_error = std::numeric_limits<double>::quiet_NaN();
  if (options.compute_error) {
    std::size_t dense = 1;
    for (const auto& a : as) dense *= a.extent(3) * a.extent(3);
    if (dense <= kDenseErrorLimit) {
      Tensor exact = dense_product(boundary, row);
      Tensor fit = dense_chain(result.boundary);
      fit *= norm;
      const double ref = frobenius_norm(exact);
      result.truncation_error = frobenius_norm(exact - fit) / ref;
    } else {
      const double p2 = product_norm_squared(boundary, row);
      result.truncation_error = std::sqrt(std::max(0.0, 1.0 - f / p2));
    }
  }
  return result;
}

// ---- compress_separable -----------------------------------------------------------------

BoundaryMpo compress_separable(const BoundaryMpo& boundary, const SandwichRow& row, double tol,
                               int max_sweeps, std::uint64_t seed) {
  validate(boundary);
  check_row(boundary, row);
  if (!boundary.separable()) throw ShapeError("compress_separable: input boundary is not separable");
  const auto n = row.length();
  const auto& as = row.ket_sites;

  std::vector<Tensor> m(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto k = boundary.sites[j].extent(1);
    m[j] = boundary.sites[j].reshaped({k, k});
    check_site_psd(m[j], j);
  }

  // Positive random start X^T X.
  Rng rng(seed);
  std::vector<Tensor> x(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto dd = as[j].extent(3);
    Tensor y({dd, dd});
    for (auto& v : y.values()) v = rng.uniform(-1.0, 1.0);
    x[j] = matmul(transpose(y), y);
    normalize_in_place(x[j]);
  }

  // Environments are rescaled to unit norm; their logs are tracked.
  std::vector<Tensor> le(n + 1), re(n + 1);
  std::vector<double> le_log(n + 1, 0.0), re_log(n + 1, 0.0);
  le[0] = Tensor({1, 1}, {1.0});
  re[n] = Tensor({1, 1}, {1.0});
  for (std::size_t j = n; j-- > 1;) {
    re[j] = symmetrize(sep_right(re[j + 1], m[j], as[j], x[j]));
    re_log[j] = re_log[j + 1] + std::log(normalize_in_place(re[j]));
  }

  double log_overlap = 0.0, prev = std::numeric_limits<double>::quiet_NaN();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (std::size_t j = 0; j < n; ++j) {
      Tensor b = symmetrize(sep_local(le[j], re[j + 1], m[j], as[j]));
      const double nb = normalize_in_place(b);
      if (!(nb > 0.0)) throw NumericalError("compress_separable: vanishing local tensor");
      x[j] = std::move(b);
      log_overlap = std::log(nb) + le_log[j] + re_log[j + 1];
      if (j + 1 < n) {
        le[j + 1] = symmetrize(sep_left(le[j], m[j], as[j], x[j]));
        le_log[j + 1] = le_log[j] + std::log(normalize_in_place(le[j + 1]));
      }
    }
    for (std::size_t j = n; j-- > 0;) {
      Tensor b = symmetrize(sep_local(le[j], re[j + 1], m[j], as[j]));
      const double nb = normalize_in_place(b);
      if (!(nb > 0.0)) throw NumericalError("compress_separable: vanishing local tensor");
      x[j] = std::move(b);
      log_overlap = std::log(nb) + le_log[j] + re_log[j + 1];
      if (j > 0) {
        re[j] = symmetrize(sep_right(re[j + 1], m[j], as[j], x[j]));
        re_log[j] = re_log[j + 1] + std::log(normalize_in_place(re[j]));
      }
    }
    if (!std::isfinite(log_overlap)) throw NumericalError("compress_separable: non-finite overlap");
    if (std::isfinite(prev) && std::abs(log_overlap - prev) <= tol) break;
    prev = log_overlap;
  }

  BoundaryMpo out;
  out.sites.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto dd = x[j].extent(0);
    out.sites[j] = std::move(x[j]).reshaped({1, dd, dd, 1});
  }
  out.log_scale = boundary.log_scale + log_overlap;
  return out;
}

// ---- overlaps -------------------------------------------------------------------------

double chain_overlap(const BoundaryMpo& a, const BoundaryMpo& b) {
  if (a.length() != b.length()) throw ShapeError("chain_overlap: length mismatch");
  Tensor e({1, 1}, {1.0});
  for (std::size_t j = 0; j < a.length(); ++j) {
    if (a.sites[j].extent(1) != b.sites[j].extent(1) || a.sites[j].extent(2) != b.sites[j].extent(2)) {
      throw ShapeError("chain_overlap: leg mismatch at site " + std::to_string(j));
    }
    Tensor t = contract(e, a.sites[j], {{0, 0}});                 // xb k b xa'
    e = contract(t, b.sites[j], {{0, 0}, {1, 1}, {2, 2}});        // xa' xb'
  }
  return e[0];
}

double fidelity_distance(const BoundaryMpo& a, const BoundaryMpo& b) {
  const double ab = chain_overlap(a, b);
  const double ba = chain_overlap(b, a);
  const double na = std::sqrt(chain_overlap(a, a));
  const double nb = std::sqrt(chain_overlap(b, b));
  return 1.0 - std::abs(0.5 * (ab + ba)) / (na * nb);
}

// ---- single-layer purification ----------------------------------------------------------

PurificationMps sl_apply_ket_row(const PurificationMps& pur, const SandwichRow& row,
                                 std::size_t d_doubleprime, const AlsOptions& options) {
  validate(pur);
  if (pur.length() != row.length()) throw ShapeError("sl_apply_ket_row: length mismatch");
  const auto n = row.length();
  std::vector<Tensor> target(n);
  std::vector<std::array<std::size_t, 2>> legs(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p = pur.sites[j];
    const auto& a = row.ket_sites[j];
    if (p.extent(1) != a.extent(1)) {
      throw ShapeError("sl_apply_ket_row: system leg mismatch at site " + std::to_string(j));
    }
    Tensor t = contract(p, a, {{1, 1}});                  // a p a' s l d r
    t = permute(t, {0, 4, 5, 1, 3, 2, 6});                // a l d p s a' r
    const auto& s = t.shape();
    legs[j] = {s[2], s[3] * s[4]};
    target[j] = std::move(t).reshaped({s[0] * s[1], s[2] * s[3] * s[4], s[5] * s[6]});
  }
  auto fit = compress_mps(std::move(target), d_doubleprime, options);
  PurificationMps out;
  out.sites.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& s = fit.sites[j].shape();
    out.sites[j] = std::move(fit.sites[j]).reshaped({s[0], legs[j][0], legs[j][1], s[2]});
  }
  out.log_scale = pur.log_scale + fit.log_norm;
  return out;
}

PurificationMps sl_reduce_purification(const PurificationMps& pur, std::size_t d_prime_target) {
  validate(pur);
  if (d_prime_target == 0) throw ShapeError("sl_reduce_purification: target must be positive");
  PurificationMps out = pur;
  auto& s = out.sites;
  const auto n = s.size();
  for (std::size_t j = n - 1; j > 0; --j) {
    const auto sh = s[j].shape();
    auto [l, q] = lq(s[j].reshaped({sh[0], sh[1] * sh[2] * sh[3]}));
    s[j] = std::move(q).reshaped({l.extent(1), sh[1], sh[2], sh[3]});
    s[j - 1] = contract(s[j - 1], l, {{3, 0}});
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (s[j].extent(2) > d_prime_target) {
      Tensor rho = contract(s[j], s[j], {{0, 0}, {1, 1}, {3, 3}});  // p p'
      auto dec = eigh(rho);
      const auto p = s[j].extent(2);
      Tensor u({p, d_prime_target});
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < d_prime_target; ++c) u[r * d_prime_target + c] = dec.vectors[r * p + c];
      }
      s[j] = permute(contract(s[j], u, {{2, 0}}), {0, 1, 3, 2});
    }
    if (j + 1 < n) {
      const auto sh = s[j].shape();
      auto [q, r] = qr(s[j].reshaped({sh[0] * sh[1] * sh[2], sh[3]}));
      s[j] = std::move(q).reshaped({sh[0], sh[1], sh[2], r.extent(0)});
      s[j + 1] = contract(r, s[j + 1], {{1, 0}});
    }
  }
  const double nrm = normalize_in_place(s[n - 1]);
  if (!(nrm > 0.0)) throw NumericalError("sl_reduce_purification: zero-norm purification");
  out.log_scale += std::log(nrm);
  return out;
}

BoundaryMpo purification_to_boundary(const PurificationMps& pur) {
  validate(pur);
  BoundaryMpo out;
  for (const auto& p : pur.sites) {
    Tensor t = contract(p, p, {{2, 2}});          // a k a' A b A'
    t = permute(t, {0, 3, 1, 4, 2, 5});           // a A k b a' A'
    const auto& s = t.shape();
    out.sites.push_back(std::move(t).reshaped({s[0] * s[1], s[2], s[3], s[4] * s[5]}));
  }
  out.log_scale = 2.0 * pur.log_scale;
  return out;
}

std::vector<double> local_spectrum(const BoundaryMpo& mpo, std::size_t site) {
  const auto& s = mpo.sites.at(site);
  if (s.extent(0) != 1 || s.extent(3) != 1) {
    throw ShapeError("local_spectrum: site " + std::to_string(site) + " is not separable");
  }
  auto ev = eigh(s.reshaped({s.extent(1), s.extent(2)})).values;
  const double first = ev.front();
  if (first == 0.0) throw NumericalError("local_spectrum: zero site matrix");
  for (auto& v : ev) v /= first;
  return ev;
}

Tensor boundary_to_dense(const BoundaryMpo& mpo) {
  validate(mpo);
  const auto n = mpo.length();
  Tensor state({1, 1}, {1.0});  // [(k0 b0 k1 b1 ...), bond]
  std::size_t dim = 1;
  for (const auto& s : mpo.sites) {
    Tensor t = contract(state, s, {{1, 0}});
    const auto& sh = t.shape();
    state = std::move(t).reshaped({sh[0] * sh[1] * sh[2], sh[3]});
    dim *= s.extent(1);
  }
  // Reorder interleaved (k, b) pairs into (k..., b...).
  Shape shape;
  for (const auto& s : mpo.sites) {
    shape.push_back(s.extent(1));
    shape.push_back(s.extent(2));
  }
  Tensor t = std::move(state).reshaped(shape);
  std::vector<std::size_t> perm;
  for (std::size_t j = 0; j < n; ++j) perm.push_back(2 * j);
  for (std::size_t j = 0; j < n; ++j) perm.push_back(2 * j + 1);
  Tensor out = permute(t, perm);
  out *= std::exp(mpo.log_scale);
  return std::move(out).reshaped({dim, out.size() / dim});
}

// ---- serialization -----------------------------------------------------------------------

namespace {
template <class Chain>
void write_any(std::ostream& os, const Chain& c, std::uint64_t tag) {
  write_u64(os, c.sites.size());
  write_f64(os, c.log_scale);
  for (const auto& s : c.sites) {
    write_u64(os, tag);
    write_tensor(os, s);
  }
}

template <class Chain>
Chain read_any(std::istream& is, std::uint64_t tag) {
  Chain c;
  const auto n = read_u64(is);
  if (n == 0 || n > (1u << 20)) throw FormatError("implausible chain length");
  c.log_scale = read_f64(is);
  for (std::uint64_t j = 0; j < n; ++j) {
    if (read_u64(is) != tag) throw FormatError("unexpected site index-order tag");
    c.sites.push_back(read_tensor(is));
  }
  validate(c);
  return c;
}
}  // namespace

void write_chain(std::ostream& os, const BoundaryMpo& mpo) { write_any(os, mpo, kTagBoundary); }
BoundaryMpo read_boundary(std::istream& is) { return read_any<BoundaryMpo>(is, kTagBoundary); }
void write_chain(std::ostream& os, const PurificationMps& pur) { write_any(os, pur, kTagPurification); }
PurificationMps read_purification(std::istream& is) {
  return read_any<PurificationMps>(is, kTagPurification);
}

}  // namespace peps
