#include "peps/observables.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "peps/io.hpp"
#include "peps/linalg.hpp"
#include "peps/parallel.hpp"
#include "peps/random.hpp"

namespace peps {

namespace {

// Horizontal bond expectation values of every row, on a state and its own environments.
std::vector<std::vector<double>> horizontal_terms(const PepsState& p, const HamiltonianSpec& h,
                                                  const EnvironmentSpec& spec, bool transposed,
                                                  std::size_t workers) {
  const auto L = p.side;
  const auto envs = all_row_environments(p, spec, workers);
  std::vector<std::vector<double>> out(L, std::vector<double>(L - 1, 0.0));
  parallel_for(L, workers, [&](std::size_t r) {
    const auto row = p.row(r);
    const auto& env = envs[r];
    std::vector<Tensor> left(L + 1), right(L + 1);
    left[0] = transfer_edge();
    for (std::size_t j = 0; j < L; ++j) {
      left[j + 1] = transfer_left(left[j], env.top.sites[j], row.ket_sites[j], env.bottom.sites[j]);
    }
    right[L] = transfer_edge();
    for (std::size_t j = L; j-- > 0;) {
      right[j] = transfer_right(right[j + 1], env.top.sites[j], row.ket_sites[j], env.bottom.sites[j]);
    }
    for (std::size_t c = 0; c + 1 < L; ++c) {
      BondEnvironment be{env, left[c], right[c + 2], 0.0, 0.0};
      Tensor rho = pair_density(be, row.ket_sites[c], row.ket_sites[c + 1], c);  // s s' t t'
      const std::size_t d = p.phys_dim;
      Bond bond{r, c, Orientation::kHorizontal};
      if (transposed) bond = transposed_bond(bond);
      const Tensor hb = bond_hamiltonian(h, bond);
      double num = 0.0, den = 0.0;
      for (std::size_t s = 0; s < d; ++s)
        for (std::size_t sp = 0; sp < d; ++sp)
          for (std::size_t t = 0; t < d; ++t)
            for (std::size_t tp = 0; tp < d; ++tp) {
              const double v = rho[((s * d + sp) * d + t) * d + tp];
              num += hb[(s * d + t) * d * d + sp * d + tp] * v;
              if (s == sp && t == tp) den += v;
            }
      if (den == 0.0) throw NumericalError("energy: zero norm for bond term");
      out[r][c] = num / den;
    }
  });
  return out;
}

}  // namespace

EnergyReport energy(const PepsState& p, const HamiltonianSpec& h, const EnvironmentSpec& spec,
                    std::size_t workers) {
  if (p.side != h.side) throw std::invalid_argument("energy: lattice side mismatch");
  EnergyReport rep;
  rep.spec = spec.label();
  const auto L = p.side;
  const auto hor = horizontal_terms(p, h, spec, false, workers);
  const auto ver = horizontal_terms(transpose_lattice(p), h, spec, true, workers);
  double total = 0.0;
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t c = 0; c + 1 < L; ++c) {
      rep.terms.push_back({{r, c, Orientation::kHorizontal}, hor[r][c]});
      total += hor[r][c];
    }
  // ver[c][r] is the vertical bond (r, c)-(r+1, c).
  for (std::size_t r = 0; r + 1 < L; ++r)
    for (std::size_t c = 0; c < L; ++c) {
      rep.terms.push_back({{r, c, Orientation::kVertical}, ver[c][r]});
      total += ver[c][r];
    }
  rep.energy_per_site = total / static_cast<double>(L * L);
  return rep;
}

void set_reference(EnergyReport& report, double reference) {
  report.reference = reference;
  report.relative_error = std::abs(report.energy_per_site - reference) / std::abs(reference);
}

std::string to_json(const EnergyReport& report) {
  nlohmann::json j;
  j["schema"] = "peps-energy-report/1";
  j["energy_per_site"] = report.energy_per_site;
  j["spec"] = report.spec;
  if (report.reference) j["reference"] = *report.reference;
  if (report.relative_error) j["relative_error"] = *report.relative_error;
  auto& terms = j["terms"];
  terms = nlohmann::json::array();
  for (const auto& t : report.terms) {
    terms.push_back({{"row", t.bond.row},
                     {"col", t.bond.col},
                     {"orientation", t.bond.orientation == Orientation::kHorizontal ? "h" : "v"},
                     {"value", t.value}});
  }
  return j.dump(2);
}

std::string to_csv(const EnergyReport& report) {
  std::ostringstream os;
  os << "# schema: peps-energy-terms/1; spec=" << report.spec
     << "; energy_per_site=" << format_real(report.energy_per_site) << "\n";
  os << "row,col,orientation,value\n";
  for (const auto& t : report.terms) {
    os << t.bond.row << ',' << t.bond.col << ','
       << (t.bond.orientation == Orientation::kHorizontal ? 'h' : 'v') << ',' << format_real(t.value) << '\n';
  }
  return os.str();
}

// ---- dense oracles -------------------------------------------------------------------------

std::vector<double> apply_hamiltonian(const HamiltonianSpec& h, const std::vector<double>& v) {
  const std::size_t n = h.side * h.side;
  if (n >= 63 || v.size() != (std::size_t{1} << n)) {
    throw std::invalid_argument("apply_hamiltonian: vector size must be 2^(L^2)");
  }
  std::vector<double> out(v.size(), 0.0);
  for (const auto& b : all_bonds(h.side)) {
    const std::size_t i = b.row * h.side + b.col;
    const std::size_t j = b.orientation == Orientation::kHorizontal ? i + 1 : i + h.side;
    const std::size_t bi = n - 1 - i, bj = n - 1 - j;
    const Tensor m = bond_hamiltonian(h, b);
    const std::size_t mask = (std::size_t{1} << bi) | (std::size_t{1} << bj);
    for (std::size_t x = 0; x < v.size(); ++x) {
      if (x & mask) continue;
      std::size_t idx[4];
      double in[4];
      for (std::size_t k = 0; k < 4; ++k) {
        idx[k] = x | ((k >> 1) << bi) | ((k & 1) << bj);
        in[k] = v[idx[k]];
      }
      for (std::size_t r = 0; r < 4; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 4; ++c) acc += m[r * 4 + c] * in[c];
        out[idx[r]] += acc;
      }
    }
  }
  return out;
}

double statevector_energy(const PepsState& p, const HamiltonianSpec& h) {
  if (p.phys_dim != 2) throw std::invalid_argument("statevector_energy: spin-1/2 only");
  const auto psi = peps_to_statevector(p);
  const auto hpsi = apply_hamiltonian(h, psi);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    num += psi[i] * hpsi[i];
    den += psi[i] * psi[i];
  }
  if (den == 0.0) throw NumericalError("statevector_energy: zero vector");
  return num / den / static_cast<double>(p.side * p.side);
}

GroundState exact_ground_state(const HamiltonianSpec& h, bool keep_vector, std::uint64_t seed) {
  const std::size_t n = h.side * h.side;
  if (n == 0 || n > 16) throw std::invalid_argument("exact_ground_state: requires 2^(L^2) <= 2^16");
  const std::size_t dim = std::size_t{1} << n;
  const int krylov = static_cast<int>(std::min<std::size_t>(dim, 60));
  const int max_restarts = 100;

  Rng rng(seed);
  std::vector<double> start(dim);
  for (auto& x : start) x = rng.uniform(-1.0, 1.0);

  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (double& x : v) x /= s;
    return s;
  };
  normalize(start);

  double prev = std::numeric_limits<double>::infinity();
  double residual = 0.0;
  GroundState gs;
  for (int restart = 0; restart < max_restarts; ++restart) {
    std::vector<std::vector<double>> basis{start};
    std::vector<double> alpha, beta;
    for (int k = 0; k < krylov; ++k) {
      auto w = apply_hamiltonian(h, basis[k]);
      double a = 0.0;
      for (std::size_t i = 0; i < dim; ++i) a += w[i] * basis[k][i];
      alpha.push_back(a);
      // Full reorthogonalization, applied twice.
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& q : basis) {
          double c = 0.0;
          for (std::size_t i = 0; i < dim; ++i) c += w[i] * q[i];
          for (std::size_t i = 0; i < dim; ++i) w[i] -= c * q[i];
        }
      }
      if (k + 1 == krylov) break;
      const double b = normalize(w);
      if (b < 1e-12) break;
      beta.push_back(b);
      basis.push_back(std::move(w));
    }
    const std::size_t m = alpha.size();
    Tensor t({m, m});
    for (std::size_t i = 0; i < m; ++i) {
      t[i * m + i] = alpha[i];
      if (i + 1 < m) t[i * m + i + 1] = t[(i + 1) * m + i] = beta[i];
    }
    const auto dec = eigh(t);
    const double e = dec.values.back();
    std::vector<double> ritz(dim, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const double c = dec.vectors[k * m + (m - 1)];
      for (std::size_t i = 0; i < dim; ++i) ritz[i] += c * basis[k][i];
    }
    normalize(ritz);
    auto hr = apply_hamiltonian(h, ritz);
    residual = 0.0;
    for (std::size_t i = 0; i < dim; ++i) residual += (hr[i] - e * ritz[i]) * (hr[i] - e * ritz[i]);
    residual = std::sqrt(residual);
    gs.restarts = restart + 1;
    gs.energy_per_site = e / static_cast<double>(n);
    start = std::move(ritz);
    if (std::abs(e - prev) < 1e-10 && residual < 1e-6) {
      if (keep_vector) gs.vector = std::move(start);
      return gs;
    }
    if (m < static_cast<std::size_t>(krylov) && residual < 1e-8) {
      if (keep_vector) gs.vector = std::move(start);
      return gs;
    }
    prev = e;
  }
  throw NumericalError("exact_ground_state: no convergence, residual " + std::to_string(residual));
}

double reference_energy(const HamiltonianSpec& h) {
  if (h.side >= 1 && h.side <= 4) return exact_ground_state(h).energy_per_site;
  if (h.model == HamiltonianSpec::Model::kHeisenberg && h.side == 10) return kHeisenberg10x10Reference;
  throw std::invalid_argument("reference_energy: no reference for " + h.label());
}

}  // namespace peps
