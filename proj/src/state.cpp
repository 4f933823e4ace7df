#include "peps/state.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "peps/io.hpp"
#include "peps/random.hpp"

namespace peps {

namespace {

constexpr std::size_t kStatevectorLimit = std::size_t{1} << 20;

std::size_t max_virtual(const std::vector<Tensor>& ts) {
  std::size_t m = 1;
  for (const auto& t : ts) {
    for (std::size_t k = 1; k < 5; ++k) m = std::max(m, t.extent(k));
  }
  return m;
}

void check_grid(std::size_t side, std::size_t d, const std::vector<Tensor>& ts, const char* what) {
  if (side == 0) throw ShapeError(std::string(what) + ": empty lattice");
  if (ts.size() != side * side) throw ShapeError(std::string(what) + ": wrong number of tensors");
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const auto& t = ts[r * side + c];
      const std::string where = std::string(what) + " site (" + std::to_string(r) + "," +
                                std::to_string(c) + ")";
      if (t.rank() != 5) throw ShapeError(where + ": tensor must be rank 5");
      if (t.extent(kPhys) != d) throw ShapeError(where + ": physical extent mismatch");
      if (r == 0 && t.extent(kUp) != 1) throw ShapeError(where + ": top edge leg must be 1");
      if (r + 1 == side && t.extent(kDown) != 1) throw ShapeError(where + ": bottom edge leg must be 1");
      if (c == 0 && t.extent(kLeft) != 1) throw ShapeError(where + ": left edge leg must be 1");
      if (c + 1 == side && t.extent(kRight) != 1) throw ShapeError(where + ": right edge leg must be 1");
      if (c + 1 < side && t.extent(kRight) != ts[r * side + c + 1].extent(kLeft)) {
        throw ShapeError(where + ": horizontal bond mismatch");
      }
      if (r + 1 < side && t.extent(kDown) != ts[(r + 1) * side + c].extent(kUp)) {
        throw ShapeError(where + ": vertical bond mismatch");
      }
    }
  }
}

// Scales `axis` of t by the given per-index factors.
void scale_axis(Tensor& t, std::size_t axis, const std::vector<double>& f) {
  if (f.size() != t.extent(axis)) throw ShapeError("lambda length does not match bond extent");
  std::size_t inner = 1;
  for (std::size_t k = axis + 1; k < t.rank(); ++k) inner *= t.extent(k);
  const auto ext = t.extent(axis);
  const auto outer = t.size() / (inner * ext);
  double* p = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < ext; ++i) {
      for (std::size_t k = 0; k < inner; ++k) *p++ *= f[i];
    }
  }
}

std::vector<double> sqrt_of(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::sqrt(std::max(0.0, v[i]));
  return out;
}

Tensor noisy_pad(const Tensor& a, const Shape& shape, Rng& rng, double amplitude) {
  Tensor out = pad_to(a, shape);
  if (amplitude <= 0.0) return out;
  // Entries outside the original block get noise, drawn in row-major order.
  const auto rank = shape.size();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    bool inside = true;
    for (std::size_t k = 0; k < rank; ++k) inside = inside && idx[k] < a.extent(k);
    if (!inside) out[flat] = rng.uniform(-amplitude, amplitude);
    for (std::size_t k = rank; k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

Shape site_shape(std::size_t side, std::size_t d, std::size_t bond, std::size_t r, std::size_t c) {
  return {d, r == 0 ? 1 : bond, c == 0 ? 1 : bond, r + 1 == side ? 1 : bond,
          c + 1 == side ? 1 : bond};
}

}  // namespace

std::size_t PepsState::bond_dim() const { return max_virtual(tensors); }
std::size_t GammaLambdaState::bond_dim() const { return max_virtual(gammas); }

SandwichRow PepsState::row(std::size_t r) const {
  SandwichRow out;
  out.ket_sites.assign(tensors.begin() + static_cast<std::ptrdiff_t>(r * side),
                       tensors.begin() + static_cast<std::ptrdiff_t>((r + 1) * side));
  return out;
}

void validate(const PepsState& p) { check_grid(p.side, p.phys_dim, p.tensors, "PepsState"); }

void validate(const GammaLambdaState& s) {
  check_grid(s.side, s.phys_dim, s.gammas, "GammaLambdaState");
  if (s.horizontal.size() != s.side || s.vertical.size() + 1 != s.side) {
    throw ShapeError("GammaLambdaState: wrong lambda grid");
  }
  auto check = [](const std::vector<double>& l, std::size_t extent) {
    if (l.size() != extent) throw ShapeError("GammaLambdaState: lambda length mismatch");
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (!(l[i] >= 0.0) || !std::isfinite(l[i])) throw ShapeError("GammaLambdaState: negative lambda");
      if (i > 0 && l[i] > l[i - 1] * (1.0 + 1e-12)) throw ShapeError("GammaLambdaState: lambda not sorted");
    }
  };
  for (std::size_t r = 0; r < s.side; ++r) {
    if (s.horizontal[r].size() + 1 != s.side) throw ShapeError("GammaLambdaState: wrong lambda grid");
    for (std::size_t c = 0; c + 1 < s.side; ++c) check(s.horizontal[r][c], s.at(r, c).extent(kRight));
  }
  for (std::size_t r = 0; r + 1 < s.side; ++r) {
    if (s.vertical[r].size() != s.side) throw ShapeError("GammaLambdaState: wrong lambda grid");
    for (std::size_t c = 0; c < s.side; ++c) check(s.vertical[r][c], s.at(r, c).extent(kDown));
  }
}

PepsState product_with_noise(std::size_t side, std::size_t d, std::size_t bond,
                             const std::vector<std::vector<double>>& pattern, std::uint64_t seed,
                             double amplitude) {
  if (amplitude < 0.0) throw std::invalid_argument("product_with_noise: negative amplitude");
  if (pattern.size() != side * side) throw ShapeError("product_with_noise: pattern size mismatch");
  Rng rng(seed);
  PepsState p{side, d, {}};
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const auto& local = pattern[r * side + c];
      if (local.size() != d) throw ShapeError("product_with_noise: local state has wrong length");
      Tensor seedt({d, 1, 1, 1, 1});
      for (std::size_t s = 0; s < d; ++s) seedt[s] = local[s];
      Tensor t = pad_to(seedt, site_shape(side, d, bond, r, c));
      if (amplitude > 0.0) {
        for (auto& v : t.values()) {
          if (v == 0.0) v = rng.uniform(-amplitude, amplitude);
        }
      }
      p.tensors.push_back(std::move(t));
    }
  }
  return p;
}

std::vector<std::vector<double>> neel_pattern(std::size_t side) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      out.push_back((r + c) % 2 == 0 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0});
    }
  }
  return out;
}

std::vector<std::vector<double>> uniform_pattern(std::size_t side, std::vector<double> local) {
  return std::vector<std::vector<double>>(side * side, std::move(local));
}

GammaLambdaState to_gamma_lambda(const PepsState& p) {
  validate(p);
  GammaLambdaState s;
  s.side = p.side;
  s.phys_dim = p.phys_dim;
  s.gammas = p.tensors;
  s.horizontal.assign(p.side, std::vector<std::vector<double>>(p.side - 1));
  s.vertical.assign(p.side - 1, std::vector<std::vector<double>>(p.side));
  for (std::size_t r = 0; r < p.side; ++r) {
    for (std::size_t c = 0; c + 1 < p.side; ++c) s.horizontal[r][c].assign(p.at(r, c).extent(kRight), 1.0);
  }
  for (std::size_t r = 0; r + 1 < p.side; ++r) {
    for (std::size_t c = 0; c < p.side; ++c) s.vertical[r][c].assign(p.at(r, c).extent(kDown), 1.0);
  }
  return s;
}

PepsState absorb_lambdas(const GammaLambdaState& s) {
  validate(s);
  PepsState p{s.side, s.phys_dim, s.gammas};
  const auto n = s.side;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      Tensor& t = p.at(r, c);
      if (r > 0) scale_axis(t, kUp, sqrt_of(s.vertical[r - 1][c]));
      if (r + 1 < n) scale_axis(t, kDown, sqrt_of(s.vertical[r][c]));
      if (c > 0) scale_axis(t, kLeft, sqrt_of(s.horizontal[r][c - 1]));
      if (c + 1 < n) scale_axis(t, kRight, sqrt_of(s.horizontal[r][c]));
    }
  }
  return p;
}

std::vector<double> peps_to_statevector(const PepsState& p) {
  validate(p);
  const auto n = p.side;
  double dim = std::pow(static_cast<double>(p.phys_dim), static_cast<double>(n * n));
  if (dim > static_cast<double>(kStatevectorLimit)) {
    throw std::length_error("peps_to_statevector: d^(L^2) exceeds 2^20");
  }
  // psi: [P, f_0 .. f_{L-1}, h]
  Shape shape(n + 2, 1);
  Tensor psi(shape, std::vector<double>(1, 1.0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const Tensor& a = p.at(r, c);
      Tensor t = contract(psi, a, {{1 + c, kUp}, {n + 1, kLeft}});
      // t: [P, f (L-1 of them, f_c removed), s, d, r]
      std::vector<std::size_t> perm{0, n};
      for (std::size_t k = 0; k < c; ++k) perm.push_back(1 + k);
      perm.push_back(n + 1);
      for (std::size_t k = c + 1; k < n; ++k) perm.push_back(k);
      perm.push_back(n + 2);
      std::vector<std::size_t> groups(n + 2, 1);
      groups[0] = 2;
      psi = permute_reshape(t, perm, groups);
    }
  }
  return {psi.values().begin(), psi.values().end()};
}

PepsState transpose_lattice(const PepsState& p) {
  PepsState out{p.side, p.phys_dim, std::vector<Tensor>(p.tensors.size())};
  for (std::size_t r = 0; r < p.side; ++r) {
    for (std::size_t c = 0; c < p.side; ++c) out.at(c, r) = permute(p.at(r, c), {0, 2, 1, 4, 3});
  }
  return out;
}

GammaLambdaState transpose_lattice(const GammaLambdaState& s) {
  GammaLambdaState out;
  out.side = s.side;
  out.phys_dim = s.phys_dim;
  out.gammas.resize(s.gammas.size());
  for (std::size_t r = 0; r < s.side; ++r) {
    for (std::size_t c = 0; c < s.side; ++c) out.at(c, r) = permute(s.at(r, c), {0, 2, 1, 4, 3});
  }
  // horizontal[r][c] on (r,c)-(r,c+1) becomes vertical[c][r] on (c,r)-(c+1,r).
  out.vertical.assign(s.side - 1, std::vector<std::vector<double>>(s.side));
  out.horizontal.assign(s.side, std::vector<std::vector<double>>(s.side - 1));
  for (std::size_t r = 0; r < s.side; ++r) {
    for (std::size_t c = 0; c + 1 < s.side; ++c) out.vertical[c][r] = s.horizontal[r][c];
  }
  for (std::size_t r = 0; r + 1 < s.side; ++r) {
    for (std::size_t c = 0; c < s.side; ++c) out.horizontal[c][r] = s.vertical[r][c];
  }
  return out;
}

PepsState flip_vertical(const PepsState& p) {
  PepsState out{p.side, p.phys_dim, std::vector<Tensor>(p.tensors.size())};
  for (std::size_t r = 0; r < p.side; ++r) {
    for (std::size_t c = 0; c < p.side; ++c) {
      out.at(p.side - 1 - r, c) = permute(p.at(r, c), {0, 3, 2, 1, 4});
    }
  }
  return out;
}

PepsState grow_bond(const PepsState& p, std::size_t bond, std::uint64_t seed, double amplitude) {
  Rng rng(seed);
  PepsState out{p.side, p.phys_dim, {}};
  for (std::size_t r = 0; r < p.side; ++r) {
    for (std::size_t c = 0; c < p.side; ++c) {
      out.tensors.push_back(noisy_pad(p.at(r, c), site_shape(p.side, p.phys_dim, bond, r, c), rng, amplitude));
    }
  }
  return out;
}

GammaLambdaState grow_bond(const GammaLambdaState& s, std::size_t bond, std::uint64_t seed,
                           double amplitude) {
  Rng rng(seed);
  GammaLambdaState out = s;
  for (std::size_t r = 0; r < s.side; ++r) {
    for (std::size_t c = 0; c < s.side; ++c) {
      out.at(r, c) = noisy_pad(s.at(r, c), site_shape(s.side, s.phys_dim, bond, r, c), rng, amplitude);
    }
  }
  for (auto& row : out.horizontal) {
    for (auto& l : row) l.resize(bond, 0.0);
  }
  for (auto& row : out.vertical) {
    for (auto& l : row) l.resize(bond, 0.0);
  }
  return out;
}

PepsState normalize_sites(PepsState p) {
  for (auto& t : p.tensors) {
    const double n = frobenius_norm(t);
    if (n > 0.0) t *= 1.0 / n;
  }
  return p;
}

// ---- persistence -------------------------------------------------------------------

namespace {

nlohmann::json bond_manifest(std::size_t side, const std::vector<Tensor>& ts) {
  nlohmann::json h = nlohmann::json::array(), v = nlohmann::json::array();
  for (std::size_t r = 0; r < side; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c + 1 < side; ++c) row.push_back(ts[r * side + c].extent(kRight));
    h.push_back(row);
  }
  for (std::size_t r = 0; r + 1 < side; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < side; ++c) row.push_back(ts[r * side + c].extent(kDown));
    v.push_back(row);
  }
  return {{"horizontal", h}, {"vertical", v}};
}

void write_manifest(const std::filesystem::path& dir, std::size_t side, std::size_t d,
                    const std::vector<Tensor>& ts, const char* form, const StateProvenance& prov) {
  std::filesystem::create_directories(dir);
  nlohmann::json m = {{"L", side},
                      {"d", d},
                      {"form", form},
                      {"bonds", bond_manifest(side, ts)},
                      {"provenance", {{"seed", prov.seed}, {"note", prov.note}}},
                      {"blob", "tensors.bin"}};
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed to write state manifest in " + dir.string());
}

}  // namespace

void save_state(const std::filesystem::path& dir, const PepsState& p, const StateProvenance& prov) {
  validate(p);
  write_manifest(dir, p.side, p.phys_dim, p.tensors, "plain", prov);
  std::ofstream os(dir / "tensors.bin", std::ios::binary);
  for (const auto& t : p.tensors) write_tensor(os, t);
}

void save_state(const std::filesystem::path& dir, const GammaLambdaState& s,
                const StateProvenance& prov) {
  validate(s);
  write_manifest(dir, s.side, s.phys_dim, s.gammas, "gamma-lambda", prov);
  std::ofstream os(dir / "tensors.bin", std::ios::binary);
  for (const auto& t : s.gammas) write_tensor(os, t);
  auto put = [&](const std::vector<double>& l) { write_tensor(os, Tensor({l.size()}, l)); };
  for (const auto& row : s.horizontal) {
    for (const auto& l : row) put(l);
  }
  for (const auto& row : s.vertical) {
    for (const auto& l : row) put(l);
  }
}

LoadedState load_state(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw FormatError("missing state manifest in " + dir.string());
  const auto m = nlohmann::json::parse(ms);
  LoadedState out;
  out.form = m.at("form").get<std::string>();
  const auto side = m.at("L").get<std::size_t>();
  const auto d = m.at("d").get<std::size_t>();
  out.provenance.seed = m.at("provenance").at("seed").get<std::uint64_t>();
  out.provenance.note = m.at("provenance").at("note").get<std::string>();
  std::ifstream is(dir / "tensors.bin", std::ios::binary);
  if (!is) throw FormatError("missing tensor blob in " + dir.string());
  std::vector<Tensor> ts;
  for (std::size_t k = 0; k < side * side; ++k) ts.push_back(read_tensor(is));
  if (out.form == "plain") {
    out.plain = PepsState{side, d, std::move(ts)};
    validate(out.plain);
  } else if (out.form == "gamma-lambda") {
    auto& s = out.gamma_lambda;
    s.side = side;
    s.phys_dim = d;
    s.gammas = std::move(ts);
    auto get = [&]() {
      Tensor t = read_tensor(is);
      return std::vector<double>(t.values().begin(), t.values().end());
    };
    s.horizontal.assign(side, std::vector<std::vector<double>>(side - 1));
    s.vertical.assign(side - 1, std::vector<std::vector<double>>(side));
    for (auto& row : s.horizontal) {
      for (auto& l : row) l = get();
    }
    for (auto& row : s.vertical) {
      for (auto& l : row) l = get();
    }
    validate(s);
  } else {
    throw FormatError("unknown state form '" + out.form + "'");
  }
  return out;
}

}  // namespace peps
