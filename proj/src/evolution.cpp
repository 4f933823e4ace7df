#include "peps/evolution.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peps/linalg.hpp"
#include "peps/observables.hpp"
#include "peps/parallel.hpp"

namespace peps {

namespace {

constexpr double kLambdaCutoff = 1e-12;

void scale_axis(Tensor& t, std::size_t axis, const std::vector<double>& f, bool inverse) {
  if (f.size() != t.extent(axis)) throw ShapeError("lambda length does not match bond extent");
  std::vector<double> g(f);
  if (inverse) {
    for (auto& x : g) x = x > kLambdaCutoff ? 1.0 / x : 0.0;
  }
  std::size_t inner = 1;
  for (std::size_t k = axis + 1; k < t.rank(); ++k) inner *= t.extent(k);
  const auto ext = t.extent(axis);
  const auto outer = t.size() / (inner * ext);
  double* p = t.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < ext; ++i)
      for (std::size_t k = 0; k < inner; ++k) *p++ *= g[i];
}

double normalize(Tensor& t) {
  const double n = frobenius_norm(t);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("tensor vanished or became non-finite");
  t *= 1.0 / n;
  return n;
}

// a (s,u,l,d,r) -> q [u,l,d,qa], r [qa,s,r]
std::pair<Tensor, Tensor> reduce_left(const Tensor& a) {
  const auto& sh = a.shape();
  Tensor m = permute(a, {1, 2, 3, 0, 4});
  auto [q, r] = qr(std::move(m).reshaped({sh[1] * sh[2] * sh[3], sh[0] * sh[4]}));
  const auto k = r.extent(0);
  return {std::move(q).reshaped({sh[1], sh[2], sh[3], k}), std::move(r).reshaped({k, sh[0], sh[4]})};
}

// b (s,u,l,d,r) -> q [u,d,r,qb], r [qb,s,l]
std::pair<Tensor, Tensor> reduce_right(const Tensor& b) {
  const auto& sh = b.shape();
  Tensor m = permute(b, {1, 3, 4, 0, 2});
  auto [q, r] = qr(std::move(m).reshaped({sh[1] * sh[3] * sh[4], sh[0] * sh[2]}));
  const auto k = r.extent(0);
  return {std::move(q).reshaped({sh[1], sh[3], sh[4], k}), std::move(r).reshaped({k, sh[0], sh[2]})};
}

// q [u,l,d,qa] and ra [qa,s,k] -> (s,u,l,d,k)
Tensor expand_left(const Tensor& q, const Tensor& ra) {
  return permute(contract(q, ra, {{3, 0}}), {3, 0, 1, 2, 4});
}

// q [u,d,r,qb] and rb [qb,t,k] -> (t,u,k,d,r)
Tensor expand_right(const Tensor& q, const Tensor& rb) {
  return permute(contract(q, rb, {{3, 0}}), {3, 0, 4, 1, 2});
}

// phi[qa,s,qb,t] = sum G[(s t),(s' t')] ra[qa,s',k] rb[qb,t',k]
Tensor apply_gate(const Tensor& ra, const Tensor& rb, const Tensor& gate) {
  const auto d = ra.extent(1);
  Tensor theta = contract(ra, rb, {{2, 2}});               // qa s qb t
  Tensor g = gate.reshaped({d, d, d, d});                  // s t s' t'
  Tensor phi = contract(theta, g, {{1, 2}, {3, 3}});        // qa qb s t
  return permute(phi, {0, 2, 1, 3});
}

// Truncated split of m[(qa s),(qb t)]: ra = U sqrt(S), rb = sqrt(S) V, or (U, V) when balanced is false.
struct Split {
  Tensor ra;  // [qa,s,k]
  Tensor rb;  // [qb,t,k]
  std::vector<double> s;
};

Split split_pair(const Tensor& phi, std::size_t max_bond, bool balanced) {
  const auto& sh = phi.shape();  // qa s qb t
  auto svd = svd_truncate(phi.reshaped({sh[0] * sh[1], sh[2] * sh[3]}), max_bond);
  const auto k = svd.s.size();
  const auto rows = sh[0] * sh[1], cols = sh[2] * sh[3];
  if (balanced) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < k; ++j) svd.u[i * k + j] *= std::sqrt(svd.s[j]);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < cols; ++c) svd.vt[j * cols + c] *= std::sqrt(svd.s[j]);
  }
  Split out;
  out.ra = std::move(svd.u).reshaped({sh[0], sh[1], k});
  out.rb = permute(std::move(svd.vt).reshaped({k, sh[2], sh[3]}), {1, 2, 0});
  out.s = std::move(svd.s);
  return out;
}

// Keeps the positive part of a symmetric matrix.
Tensor positive_part(const Tensor& m) {
  const auto dec = eigh(m);
  const auto n = m.extent(0);
  Tensor out({n, n});
  for (std::size_t k = 0; k < n; ++k) {
    const double l = dec.values[k];
    if (l <= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = dec.vectors[i * n + k] * l;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vi * dec.vectors[j * n + k];
    }
  }
  return out;
}

// Solves nt[(x k),(x' k')] r[x', s, k'] = rhs[x, s, k] for each s.
Tensor solve_reduced(const Tensor& nt, const Tensor& rhs, double cutoff) {
  const auto x = rhs.extent(0), d = rhs.extent(1), k = rhs.extent(2);
  Tensor mat = permute(nt, {0, 2, 1, 3}).reshaped({x * k, x * k});
  Tensor out({x, d, k});
  std::vector<double> b(x * k);
  for (std::size_t s = 0; s < d; ++s) {
    for (std::size_t i = 0; i < x; ++i)
      for (std::size_t j = 0; j < k; ++j) b[i * k + j] = rhs[(i * d + s) * k + j];
    const auto sol = solve_hermitian_psd(mat, b, cutoff);
    for (std::size_t i = 0; i < x; ++i)
      for (std::size_t j = 0; j < k; ++j) out[(i * d + s) * k + j] = sol[i * k + j];
  }
  return out;
}

}  // namespace

// ---- simple update ------------------------------------------------------------------------------

namespace {

void su_horizontal(GammaLambdaState& st, const TrotterGate& gate, std::size_t max_bond) {
  const auto L = st.side;
  const auto r = gate.bond.row, c = gate.bond.col;
  if (gate.bond.orientation != Orientation::kHorizontal || r >= L || c + 1 >= L) {
    throw std::invalid_argument("su_horizontal: bad bond");
  }
  const std::vector<double>* a_up = r > 0 ? &st.vertical[r - 1][c] : nullptr;
  const std::vector<double>* a_left = c > 0 ? &st.horizontal[r][c - 1] : nullptr;
  const std::vector<double>* a_down = r + 1 < L ? &st.vertical[r][c] : nullptr;
  const std::vector<double>* b_up = r > 0 ? &st.vertical[r - 1][c + 1] : nullptr;
  const std::vector<double>* b_down = r + 1 < L ? &st.vertical[r][c + 1] : nullptr;
  const std::vector<double>* b_right = c + 2 < L ? &st.horizontal[r][c + 1] : nullptr;
  auto& lam = st.horizontal[r][c];

  Tensor a = st.at(r, c);
  Tensor b = st.at(r, c + 1);
  if (a_up) scale_axis(a, kUp, *a_up, false);
  if (a_left) scale_axis(a, kLeft, *a_left, false);
  if (a_down) scale_axis(a, kDown, *a_down, false);
  scale_axis(a, kRight, lam, false);
  if (b_up) scale_axis(b, kUp, *b_up, false);
  if (b_down) scale_axis(b, kDown, *b_down, false);
  if (b_right) scale_axis(b, kRight, *b_right, false);

  auto [qa, ra] = reduce_left(a);
  auto [qb, rb] = reduce_right(b);
  Tensor phi = apply_gate(ra, rb, gate.matrix);
  Split sp = split_pair(phi, max_bond, false);
  const double s1 = sp.s.front();
  if (!(s1 > 0.0) || !std::isfinite(s1)) throw NumericalError("su_gate_update: degenerate pair");
  lam.resize(sp.s.size());
  for (std::size_t i = 0; i < sp.s.size(); ++i) lam[i] = sp.s[i] / s1;

  Tensor na = expand_left(qa, sp.ra);
  Tensor nb = expand_right(qb, sp.rb);
  if (a_up) scale_axis(na, kUp, *a_up, true);
  if (a_left) scale_axis(na, kLeft, *a_left, true);
  if (a_down) scale_axis(na, kDown, *a_down, true);
  if (b_up) scale_axis(nb, kUp, *b_up, true);
  if (b_down) scale_axis(nb, kDown, *b_down, true);
  if (b_right) scale_axis(nb, kRight, *b_right, true);
  normalize(na);
  normalize(nb);
  st.at(r, c) = std::move(na);
  st.at(r, c + 1) = std::move(nb);
}

}  // namespace

void su_gate_update(GammaLambdaState& s, const TrotterGate& gate, std::size_t max_bond) {
  if (gate.bond.orientation == Orientation::kHorizontal) {
    su_horizontal(s, gate, max_bond);
    return;
  }
  GammaLambdaState t = transpose_lattice(s);
  TrotterGate g = gate;
  g.bond = transposed_bond(gate.bond);
  su_horizontal(t, g, max_bond);
  s = transpose_lattice(t);
}

void su_step(GammaLambdaState& s, const std::array<GateSet, 4>& sets, std::size_t max_bond) {
  for (const auto& set : sets) {
    if (set.orientation == Orientation::kHorizontal) {
      for (const auto& g : set.gates) su_horizontal(s, g, max_bond);
    } else {
      GammaLambdaState t = transpose_lattice(s);
      for (const auto& g : set.gates) {
        TrotterGate tg = g;
        tg.bond = transposed_bond(g.bond);
        su_horizontal(t, tg, max_bond);
      }
      s = transpose_lattice(t);
    }
  }
}

// ---- ALS gate update ------------------------------------------------------------------------------

GateUpdateResult gate_update_als(const Tensor& a, const Tensor& b, const Tensor& gate,
                                 const PairEnvironment& env, std::size_t max_bond,
                                 const GateUpdateOptions& options) {
  auto [qa, ra] = reduce_left(a);
  auto [qb, rb] = reduce_right(b);
  const auto nqa = qa.extent(3), nqb = qb.extent(3);

  // Reduced metric N[qa, qb, qa', qb'].
  const auto& qs = qa.shape();
  const auto& ps = qb.shape();
  Tensor qa5 = qa.reshaped({1, qs[0], qs[1], qs[2], qs[3]});                         // 1 u l d qa
  Tensor qb5 = permute(qb, {0, 3, 1, 2}).reshaped({1, ps[0], ps[3], ps[1], ps[2]});  // 1 u qb d r
  Tensor lh = transfer_left(env.left, env.top0, qa5, env.bottom0);     // t qa qa' bt
  Tensor rh = transfer_right(env.right, env.top1, qb5, env.bottom1);   // t qb qb' bt
  Tensor n4 = contract(lh, rh, {{0, 0}, {3, 3}});                      // qa qa' qb qb'
  n4 = permute(n4, {0, 2, 1, 3});                                      // qa qb qa' qb'
  {
    const auto dim = nqa * nqb;
    Tensor m = std::move(n4).reshaped({dim, dim});
    Tensor sym = transpose(m);
    sym += m;
    sym *= 0.5;
    const double scale = max_abs(sym);
    if (!(scale > 0.0)) throw NotPositiveError("gate_update_als: vanishing environment", {});
    // A compressed boundary may come back with its overall sign flipped. The current pair has
    // positive norm, which fixes the sign.
    const auto d2 = ra.extent(1) * rb.extent(1);
    Tensor th = permute(contract(ra, rb, {{2, 2}}), {0, 2, 1, 3}).reshaped({dim, d2});
    const double sgn = dot(matmul(sym, th), th);
    sym *= (sgn < 0.0 ? -1.0 : 1.0) / scale;
    n4 = positive_part(sym).reshaped({nqa, nqb, nqa, nqb});
    if (!(max_abs(n4) > 0.0)) {
      throw NotPositiveError("gate_update_als: environment has no positive part", eigh(sym).values);
    }
  }

  Tensor phi = apply_gate(ra, rb, gate);                     // qa s qb t
  Tensor x = contract(n4, phi, {{0, 0}, {1, 2}});            // qa' qb' s t
  const double c0 = dot(x, permute(phi, {0, 2, 1, 3}));
  if (!(c0 > 0.0)) throw NotPositiveError("gate_update_als: target has zero norm in the metric", {});

  Split init = split_pair(phi, max_bond, true);
  Tensor ua = std::move(init.ra);
  Tensor ub = std::move(init.rb);

  GateUpdateResult res;
  double prev = std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    res.sweeps = sweep + 1;
    {
      Tensor w = contract(ub, ub, {{1, 1}});                   // qb k qb' k'
      Tensor nt = contract(n4, w, {{1, 0}, {3, 2}});           // qa qa' k k'
      Tensor rhs = contract(x, ub, {{1, 0}, {3, 1}});          // qa' s k'
      ua = solve_reduced(nt, rhs, options.solve_cutoff);
    }
    double cost = 0.0;
    {
      Tensor w = contract(ua, ua, {{1, 1}});                   // qa k qa' k'
      Tensor nt = contract(n4, w, {{0, 0}, {2, 2}});           // qb qb' k k'
      Tensor rhs = contract(x, ua, {{0, 0}, {2, 1}});          // qb' t k'
      ub = solve_reduced(nt, rhs, options.solve_cutoff);
      // cost = <psi|N|psi> - 2 <psi|N|phi> + <phi|N|phi>
      Tensor nu = contract(nt, ub, {{1, 0}, {3, 2}});          // qb k qb'... (qb k t)
      const double quad = dot(permute(nu, {0, 2, 1}), ub);
      cost = (quad - 2.0 * dot(rhs, ub) + c0) / c0;
    }
    if (!std::isfinite(cost)) throw NumericalError("gate_update_als: non-finite cost");
    if (cost > prev + 1e-8) {
      std::ostringstream os;
      os << "gate_update_als: cost increased from " << prev << " to " << cost << " at sweep " << sweep;
      throw NumericalError(os.str());
    }
    res.cost = cost;
    if (std::abs(prev - cost) < options.tol) break;
    prev = cost;
  }

  // Balanced split of the fitted pair.
  Tensor psi = contract(ua, ub, {{2, 2}});  // qa s qb t
  Split fin = split_pair(psi, max_bond, true);

  // Weighted spectrum across the bond.
  {
    Tensor na({nqa, nqa}), nb({nqb, nqb});
    for (std::size_t i = 0; i < nqa; ++i)
      for (std::size_t j = 0; j < nqa; ++j)
        for (std::size_t k = 0; k < nqb; ++k) na[i * nqa + j] += n4[((i * nqb + k) * nqa + j) * nqb + k];
    for (std::size_t i = 0; i < nqb; ++i)
      for (std::size_t j = 0; j < nqb; ++j)
        for (std::size_t k = 0; k < nqa; ++k) nb[i * nqb + j] += n4[((k * nqb + i) * nqa + k) * nqb + j];
    Tensor sa = sqrt_psd(na), sb = sqrt_psd(nb);
    Tensor wa = contract(sa, fin.ra, {{1, 0}});  // qa s k
    Tensor wb = contract(sb, fin.rb, {{1, 0}});  // qb t k
    Tensor w = contract(wa, wb, {{2, 2}});       // qa s qb t
    const auto& sh = w.shape();
    auto sv = svd_truncate(w.reshaped({sh[0] * sh[1], sh[2] * sh[3]}), max_bond, 0.0).s;
    for (auto& v : sv) v /= sv.front();
    res.bond_spectrum = std::move(sv);
  }

  res.a = expand_left(qa, fin.ra);
  res.b = expand_right(qb, fin.rb);
  normalize(res.a);
  normalize(res.b);
  return res;
}

// ---- row updates and sweeps ---------------------------------------------------------------------

namespace {

// Applies the gates of one row (horizontal, sorted by column) against fixed
// top and bottom boundaries.
void update_row(std::vector<Tensor>& row, const RowEnvironment& env,
                const std::vector<const TrotterGate*>& gates, std::size_t max_bond,
                const GateUpdateOptions& opts, const GateObserver& observer, bool transposed) {
  const auto L = row.size();
  std::vector<Tensor> right(L + 1);
  right[L] = transfer_edge();
  for (std::size_t j = L; j-- > 0;) {
    right[j] = transfer_right(right[j + 1], env.top.sites[j], row[j], env.bottom.sites[j]);
  }
  Tensor left = transfer_edge();
  std::size_t done = 0;  // columns absorbed into `left`
  for (const TrotterGate* g : gates) {
    const auto c = g->bond.col;
    while (done < c) {
      left = transfer_left(left, env.top.sites[done], row[done], env.bottom.sites[done]);
      ++done;
    }
    PairEnvironment pe{left, right[c + 2], env.top.sites[c], env.top.sites[c + 1], env.bottom.sites[c],
                       env.bottom.sites[c + 1]};
    auto res = gate_update_als(row[c], row[c + 1], g->matrix, pe, max_bond, opts);
    row[c] = std::move(res.a);
    row[c + 1] = std::move(res.b);
    if (observer) {
      const Bond b = transposed ? transposed_bond(g->bond) : g->bond;
      observer(b, res.bond_spectrum, env, c);
    }
  }
}

std::vector<std::vector<const TrotterGate*>> gates_by_row(const std::vector<TrotterGate>& gates,
                                                          std::size_t L) {
  std::vector<std::vector<const TrotterGate*>> out(L);
  for (const auto& g : gates) out[g.bond.row].push_back(&g);
  for (auto& v : out) {
    std::sort(v.begin(), v.end(), [](const TrotterGate* x, const TrotterGate* y) { return x->bond.col < y->bond.col; });
  }
  return out;
}

void horizontal_sweep(PepsState& p, const std::vector<TrotterGate>& gates, std::size_t set_index,
                      const SweepContext& ctx, bool transposed) {
  const auto L = p.side;
  const auto& spec = ctx.spec;
  if (spec.kind == EnvironmentSpec::Kind::kSingleLayer) {
    throw std::invalid_argument("sweep: single-layer environments are not supported for updates");
  }
  const std::size_t general = spec.general_rows(L);
  const auto rows = gates_by_row(gates, L);

  std::vector<std::array<std::vector<BoundaryMpo>, 2>>* trails = nullptr;
  if (ctx.cache != nullptr) {
    auto& t = ctx.cache->trails[set_index];
    if (t.size() != L) t.assign(L, {});
    trails = &t;
  }

  auto bottom_for = [&](const PepsState& flipped, const std::vector<BoundaryMpo>& sep_bot, std::size_t r) {
    const std::size_t fr = L - 1 - r;
    std::vector<BoundaryMpo> trail;
    const std::vector<BoundaryMpo>* warm = trails ? &(*trails)[r][1] : nullptr;
    BoundaryMpo b = cluster_boundary(flipped, fr, general, spec.d_prime, sep_bot, spec.als, warm,
                                     trails ? &trail : nullptr);
    if (trails) (*trails)[r][1] = std::move(trail);
    return b;
  };

  if (ctx.mode == SweepMode::kParallel) {
    const PepsState snap = p;
    const PepsState flipped = flip_vertical(snap);
    const bool need_sep = general < L;
    std::vector<BoundaryMpo> sep_top, sep_bot;
    if (need_sep) {
      sep_top = separable_prefixes(snap, spec.als);
      sep_bot = separable_prefixes(flipped, spec.als);
    } else {
      sep_top = sep_bot = {BoundaryMpo::trivial(L)};
    }
    std::vector<std::vector<Tensor>> new_rows(L);
    parallel_for(L, ctx.workers, [&](std::size_t r) {
      RowEnvironment env;
      std::vector<BoundaryMpo> trail;
      const std::vector<BoundaryMpo>* warm = trails ? &(*trails)[r][0] : nullptr;
      env.top = cluster_boundary(snap, r, general, spec.d_prime, sep_top, spec.als, warm,
                                 trails ? &trail : nullptr);
      if (trails) (*trails)[r][0] = std::move(trail);
      env.bottom = bottom_for(flipped, sep_bot, r);
      new_rows[r] = snap.row(r).ket_sites;
      update_row(new_rows[r], env, rows[r], ctx.max_bond, ctx.update, ctx.observer, transposed);
    });
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t c = 0; c < L; ++c) p.at(r, c) = std::move(new_rows[r][c]);
    return;
  }

  // Sequential: bottoms from the unchanged rows below, tops from updated rows above.
  const PepsState flipped = flip_vertical(p);
  std::vector<BoundaryMpo> sep_bot;
  if (general < L) {
    sep_bot = separable_prefixes(flipped, spec.als);
  } else {
    sep_bot = {BoundaryMpo::trivial(L)};
  }
  std::vector<BoundaryMpo> bottoms(L);
  if (general >= L) {
    // Full: incremental from the bottom edge.
    bottoms[L - 1] = BoundaryMpo::trivial(L);
    for (std::size_t r = L - 1; r-- > 0;) {
      const BoundaryMpo* warm = nullptr;
      if (trails && !(*trails)[r][1].empty()) warm = &(*trails)[r][1].front();
      bottoms[r] = apply_row_compress(bottoms[r + 1], flipped.row(L - 2 - r), spec.d_prime, spec.als, warm)
                       .boundary;
      if (trails) (*trails)[r][1] = {bottoms[r]};
    }
  } else {
    for (std::size_t r = 0; r < L; ++r) bottoms[r] = bottom_for(flipped, sep_bot, r);
  }

  std::vector<BoundaryMpo> sep_top{BoundaryMpo::trivial(L)};
  BoundaryMpo full_top = BoundaryMpo::trivial(L);
  for (std::size_t r = 0; r < L; ++r) {
    RowEnvironment env;
    if (general >= L) {
      env.top = full_top;
    } else {
      std::vector<BoundaryMpo> trail;
      const std::vector<BoundaryMpo>* warm = trails ? &(*trails)[r][0] : nullptr;
      env.top = cluster_boundary(p, r, general, spec.d_prime, sep_top, spec.als, warm,
                                 trails ? &trail : nullptr);
      if (trails) (*trails)[r][0] = std::move(trail);
    }
    env.bottom = std::move(bottoms[r]);
    std::vector<Tensor> row = p.row(r).ket_sites;
    update_row(row, env, rows[r], ctx.max_bond, ctx.update, ctx.observer, transposed);
    for (std::size_t c = 0; c < L; ++c) p.at(r, c) = std::move(row[c]);
    if (r + 1 < L) {
      if (general >= L) {
        const BoundaryMpo* warm = nullptr;
        if (trails && !(*trails)[r][0].empty()) warm = &(*trails)[r][0].front();
        full_top = apply_row_compress(full_top, p.row(r), spec.d_prime, spec.als, warm).boundary;
        if (trails) (*trails)[r][0] = {full_top};
      } else {
        sep_top.push_back(compress_separable(sep_top.back(), p.row(r), spec.als.tol, spec.als.max_sweeps));
      }
    }
  }
}

}  // namespace

void row_update(PepsState& p, std::size_t row, const GateSet& set, const RowEnvironment& env,
                std::size_t max_bond, const GateUpdateOptions& options) {
  if (set.orientation != Orientation::kHorizontal) throw std::invalid_argument("row_update: horizontal sets only");
  if (row >= p.side) throw std::out_of_range("row_update: row");
  const auto rows = gates_by_row(set.gates, p.side);
  std::vector<Tensor> sites = p.row(row).ket_sites;
  update_row(sites, env, rows[row], max_bond, options, GateObserver{}, false);
  for (std::size_t c = 0; c < p.side; ++c) p.at(row, c) = std::move(sites[c]);
}

void sweep(PepsState& p, const GateSet& set, std::size_t set_index, const SweepContext& ctx) {
  if (set.orientation == Orientation::kHorizontal) {
    horizontal_sweep(p, set.gates, set_index, ctx, false);
    return;
  }
  std::vector<TrotterGate> tg = set.gates;
  for (auto& g : tg) g.bond = transposed_bond(g.bond);
  PepsState t = transpose_lattice(p);
  horizontal_sweep(t, tg, set_index, ctx, true);
  p = transpose_lattice(t);
}

PepsState gate_update_als(const PepsState& p, const TrotterGate& gate, const EnvironmentSpec& spec,
                          std::size_t max_bond, const GateUpdateOptions& options) {
  const bool vertical = gate.bond.orientation == Orientation::kVertical;
  PepsState q = vertical ? transpose_lattice(p) : p;
  const Bond b = vertical ? transposed_bond(gate.bond) : gate.bond;
  const BondEnvironment env = bond_environment(q, b, spec);
  PairEnvironment pe{env.left,
                     env.right,
                     env.rows.top.sites[b.col],
                     env.rows.top.sites[b.col + 1],
                     env.rows.bottom.sites[b.col],
                     env.rows.bottom.sites[b.col + 1]};
  auto res = gate_update_als(q.at(b.row, b.col), q.at(b.row, b.col + 1), gate.matrix, pe, max_bond, options);
  q.at(b.row, b.col) = std::move(res.a);
  q.at(b.row, b.col + 1) = std::move(res.b);
  return vertical ? transpose_lattice(q) : q;
}

// ---- schedules ------------------------------------------------------------------------------------

nlohmann::json spec_to_json(const EnvironmentSpec& s) {
  switch (s.kind) {
    case EnvironmentSpec::Kind::kFull:
      return {{"full", {{"dprime", s.d_prime}}}};
    case EnvironmentSpec::Kind::kCluster:
      return {{"cluster", {{"delta", s.delta}, {"dprime", s.d_prime}}}};
    case EnvironmentSpec::Kind::kSeparable:
      return "separable";
    case EnvironmentSpec::Kind::kSingleLayer:
      return {{"single_layer", {{"ddoubleprime", s.d_doubleprime}, {"dprime", s.d_prime_pur}}}};
  }
  return nullptr;
}

namespace {

std::size_t positive_size(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw std::invalid_argument(where + ": missing key '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw std::invalid_argument(where + ": '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok = ok || it.key() == k;
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

EnvironmentSpec spec_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "separable") return EnvironmentSpec::separable();
    throw std::invalid_argument("env: unknown strategy '" + s + "'");
  }
  if (!j.is_object() || j.size() != 1) throw std::invalid_argument("env: expected a single-key object");
  const auto& [key, body] = *j.items().begin();
  if (key == "full") {
    only_keys(body, {"dprime"}, "env.full");
    return EnvironmentSpec::full(positive_size(body, "dprime", "env.full"));
  }
  if (key == "cluster") {
    only_keys(body, {"delta", "dprime"}, "env.cluster");
    return EnvironmentSpec::cluster(positive_size(body, "delta", "env.cluster"),
                                    positive_size(body, "dprime", "env.cluster"));
  }
  if (key == "separable") return EnvironmentSpec::separable();
  if (key == "single_layer") {
    only_keys(body, {"ddoubleprime", "dprime"}, "env.single_layer");
    return EnvironmentSpec::single_layer(positive_size(body, "ddoubleprime", "env.single_layer"),
                                         positive_size(body, "dprime", "env.single_layer"));
  }
  throw std::invalid_argument("env: unknown strategy '" + key + "'");
}

Schedule schedule_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("schedule: expected an object");
  only_keys(j, {"stages"}, "schedule");
  Schedule s;
  if (!j.contains("stages")) return s;
  if (!j.at("stages").is_array()) throw std::invalid_argument("schedule: 'stages' must be an array");
  std::size_t last_bond = 0;
  for (const auto& st : j.at("stages")) {
    const std::string where = "schedule.stages[" + std::to_string(s.stages.size()) + "]";
    only_keys(st, {"steps", "tau", "D", "env", "mode"}, where);
    Stage stage;
    stage.steps = positive_size(st, "steps", where);
    if (stage.steps < 1) throw std::invalid_argument(where + ": steps must be >= 1");
    if (!st.contains("tau") || !st.at("tau").is_number() || !(st.at("tau").get<double>() > 0.0)) {
      throw std::invalid_argument(where + ": tau must be a positive number");
    }
    stage.tau = st.at("tau").get<double>();
    stage.bond = positive_size(st, "D", where);
    if (stage.bond < 1) throw std::invalid_argument(where + ": D must be >= 1");
    if (stage.bond < last_bond) throw std::invalid_argument(where + ": D must be nondecreasing");
    last_bond = stage.bond;
    if (st.contains("env")) {
      const auto& e = st.at("env");
      if (e.is_string() && e.get<std::string>() == "simple") {
        stage.env.reset();
      } else {
        stage.env = spec_from_json(e);
      }
    }
    if (st.contains("mode")) {
      const auto m = st.at("mode").get<std::string>();
      if (m == "sequential") {
        stage.mode = SweepMode::kSequential;
      } else if (m == "parallel") {
        stage.mode = SweepMode::kParallel;
      } else {
        throw std::invalid_argument(where + ": mode must be sequential or parallel");
      }
    }
    if (stage.mode == SweepMode::kParallel && !stage.env) {
      throw std::invalid_argument(where + ": parallel mode needs a cluster environment");
    }
    s.stages.push_back(stage);
  }
  return s;
}

nlohmann::json to_json(const Schedule& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : s.stages) {
    nlohmann::json o;
    o["steps"] = st.steps;
    o["tau"] = st.tau;
    o["D"] = st.bond;
    o["env"] = st.env ? spec_to_json(*st.env) : nlohmann::json("simple");
    o["mode"] = st.mode == SweepMode::kParallel ? "parallel" : "sequential";
    stages.push_back(o);
  }
  return {{"stages", stages}};
}

// ---- evolve ---------------------------------------------------------------------------------------

PepsState EvolvingState::as_plain() const {
  if (plain) return *plain;
  if (gamma_lambda) return absorb_lambdas(*gamma_lambda);
  throw std::logic_error("EvolvingState: empty");
}

std::size_t EvolvingState::bond_dim() const {
  if (plain) return plain->bond_dim();
  if (gamma_lambda) return gamma_lambda->bond_dim();
  return 0;
}

namespace {

bool finite_state(const EvolvingState& s) {
  if (s.plain) {
    for (const auto& t : s.plain->tensors)
      if (!all_finite(t)) return false;
  }
  if (s.gamma_lambda) {
    for (const auto& t : s.gamma_lambda->gammas)
      if (!all_finite(t)) return false;
  }
  return true;
}

}  // namespace

EvolveResult evolve(EvolvingState initial, const Schedule& schedule, const EvolveOptions& options,
                    std::size_t start_step) {
  EvolveResult out;
  out.state = std::move(initial);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t global = 0;
  SweepCache cache;
  const HamiltonianSpec& h = options.hamiltonian;

  auto record = [&](std::size_t step, const Stage& st) {
    const std::size_t bond = out.state.bond_dim();
    const EnvironmentSpec mon = options.monitor ? *options.monitor : EnvironmentSpec::cluster(1, bond * bond);
    TraceRow row;
    row.step = step;
    row.tau = st.tau;
    row.bond = bond;
    row.energy_per_site = energy(out.state.as_plain(), h, mon, options.workers).energy_per_site;
    row.wall_ms = options.record_wall_time
                      ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()
                      : 0.0;
    out.trace.push_back(row);
    if (options.on_record) options.on_record(row);
  };

  for (std::size_t si = 0; si < schedule.stages.size(); ++si) {
    const Stage& st = schedule.stages[si];
    if (global + st.steps <= start_step) {
      global += st.steps;
      continue;
    }
    // Bond growth and representation switch.
    if (st.env) {
      if (!out.state.plain) {
        out.state.plain = out.state.as_plain();
        out.state.gamma_lambda.reset();
      }
      if (out.state.plain->bond_dim() < st.bond) {
        out.state.plain = grow_bond(*out.state.plain, st.bond, options.growth_seed + si, options.growth_noise);
      }
    } else {
      if (!out.state.gamma_lambda) {
        out.state.gamma_lambda = to_gamma_lambda(*out.state.plain);
        out.state.plain.reset();
      }
      if (out.state.gamma_lambda->bond_dim() < st.bond) {
        out.state.gamma_lambda =
            grow_bond(*out.state.gamma_lambda, st.bond, options.growth_seed + si, options.growth_noise);
      }
    }
    const auto sets = make_gates(h, st.tau);
    SweepContext ctx;
    if (st.env) {
      ctx.spec = *st.env;
      ctx.max_bond = st.bond;
      ctx.mode = st.mode;
      ctx.workers = options.workers;
      ctx.cache = &cache;
      ctx.observer = options.observer;
    }
    for (std::size_t k = 0; k < st.steps; ++k, ++global) {
      if (global < start_step) continue;
      if (st.env) {
        for (std::size_t i = 0; i < 4; ++i) sweep(*out.state.plain, sets[i], i, ctx);
        *out.state.plain = normalize_sites(std::move(*out.state.plain));
      } else {
        su_step(*out.state.gamma_lambda, sets, st.bond);
      }
      if (!finite_state(out.state)) {
        throw NumericalError("evolve: non-finite tensor entries after step " + std::to_string(global + 1) +
                             " (stage " + std::to_string(si) + ", tau " + std::to_string(st.tau) + ")");
      }
      out.steps_done = global + 1;
      const bool last = k + 1 == st.steps;
      if (last || (options.monitor_every > 0 && (global + 1) % options.monitor_every == 0)) {
        record(global + 1, st);
      }
      if (options.on_step) {
        options.on_step(global + 1, out.state.gamma_lambda ? &*out.state.gamma_lambda : nullptr,
                        out.state.plain ? &*out.state.plain : nullptr);
      }
    }
  }
  out.steps_done = std::max(out.steps_done, start_step);
  return out;
}

CostPrediction cost_model(std::size_t side, std::size_t delta, double t_boundary, double t_update) {
  if (side < 2 || !(t_boundary > 0.0) || !(t_update > 0.0)) {
    throw std::invalid_argument("cost_model: need L >= 2 and positive times");
  }
  CostPrediction c;
  const double L = static_cast<double>(side);
  c.sequential = 2.0 * (L - 2.0) * t_boundary + L * t_update;
  const double general = delta >= 1 ? static_cast<double>(delta - 1) : 0.0;
  c.parallel_row = 2.0 * general * t_boundary + t_update;
  c.speedup = c.sequential / c.parallel_row;
  return c;
}

}  // namespace peps
