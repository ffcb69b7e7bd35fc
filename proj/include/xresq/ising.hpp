#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xresq/constellation.hpp"
#include "xresq/instance.hpp"
#include "xresq/types.hpp"

namespace xresq {

using Spin = std::int8_t;

/// A +-1 spin configuration.
class SpinState {
 public:
  SpinState() = default;
  explicit SpinState(std::size_t n, Spin fill = 1) : spins_(n, fill) { check_value(fill); }
  explicit SpinState(std::vector<Spin> spins) : spins_(std::move(spins)) {
    for (Spin s : spins_) check_value(s);
  }
  SpinState(std::initializer_list<int> spins) {
    spins_.reserve(spins.size());
    for (int s : spins) {
      check_value(static_cast<Spin>(s));
      spins_.push_back(static_cast<Spin>(s));
    }
  }

  std::size_t size() const noexcept { return spins_.size(); }
  Spin operator[](std::size_t i) const noexcept { return spins_[i]; }
  std::span<const Spin> view() const noexcept { return spins_; }
  const std::vector<Spin>& values() const noexcept { return spins_; }

  void flip(std::size_t i) {
    if (i >= spins_.size()) throw DimensionError("flip index out of range");
    spins_[i] = static_cast<Spin>(-spins_[i]);
  }
  void set(std::size_t i, Spin v) {
    check_value(v);
    spins_.at(i) = v;
  }

  Bits bits() const {
    Bits b(spins_.size());
    for (std::size_t i = 0; i < spins_.size(); ++i) b[i] = spin_to_bit(spins_[i]);
    return b;
  }

  friend bool operator==(const SpinState&, const SpinState&) = default;

 private:
  static void check_value(Spin s) {
    if (s != 1 && s != -1) throw Error("spin values must be +1 or -1");
  }
  std::vector<Spin> spins_;
};

inline SpinState concat(const SpinState& a, const SpinState& b) {
  std::vector<Spin> v(a.values());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return SpinState(std::move(v));
}

/// Linear spin-to-symbol map for n_t users: user u owns spins [M u, M (u+1)).
struct SpinMapping {
  std::size_t n_t = 0;
  Constellation constellation{Modulation::QPSK};

  std::size_t n_v() const { return n_t * static_cast<std::size_t>(constellation.bits_per_symbol()); }

  /// Complex n_t x N_V matrix A with v(s) = A s.
  CMatrix matrix() const {
    const auto m = static_cast<Eigen::Index>(constellation.bits_per_symbol());
    const int nq = constellation.qpsk_layers();
    CMatrix A = CMatrix::Zero(static_cast<Eigen::Index>(n_t), static_cast<Eigen::Index>(n_v()));
    for (Eigen::Index u = 0; u < static_cast<Eigen::Index>(n_t); ++u) {
      const Eigen::Index base = m * u;
      if (nq == 0) {
        A(u, base) = 1.0;
        continue;
      }
      for (int i = 1; i <= nq; ++i) {
        const double w = constellation.layer_weight(i);
        A(u, base + i - 1) = cplx(w, 0);
        A(u, base + nq + i - 1) = cplx(0, w);
      }
    }
    return A;
  }
};

/// v = A s for the given mapping.
inline CVector map_spins_to_symbols(std::span<const Spin> s, const SpinMapping& m) {
  if (s.size() != m.n_v()) throw DimensionError("spin state length does not match mapping");
  const auto bps = static_cast<std::size_t>(m.constellation.bits_per_symbol());
  CVector v(static_cast<Eigen::Index>(m.n_t));
  for (std::size_t u = 0; u < m.n_t; ++u) v[static_cast<Eigen::Index>(u)] = m.constellation.symbol_from_spins(s.subspan(u * bps, bps));
  return v;
}

inline CVector map_spins_to_symbols(const SpinState& s, const SpinMapping& m) { return map_spins_to_symbols(s.view(), m); }

/// Inverse map; v must hold exact lattice points.
inline SpinState symbols_to_spins(const CVector& v, const SpinMapping& m) {
  if (static_cast<std::size_t>(v.size()) != m.n_t) throw DimensionError("symbol vector length does not match mapping");
  const auto bps = static_cast<std::size_t>(m.constellation.bits_per_symbol());
  std::vector<Spin> s(m.n_v());
  for (std::size_t u = 0; u < m.n_t; ++u)
    m.constellation.spins_from_symbol(v[static_cast<Eigen::Index>(u)], std::span<Spin>(s).subspan(u * bps, bps));
  return SpinState(std::move(s));
}

/// Segment of a (possibly combined) model with its own symbol mapping.
/// layer == 0: block decides full symbols; layer i >= 1: block decides QPSK layer i
/// of a split form (its mapping is then QPSK over the same users).
struct ModelBlock {
  std::size_t start = 0;
  std::size_t size = 0;
  SpinMapping mapping;
  int layer = 0;
};

struct Coupling {
  std::size_t i;
  std::size_t j;
  double value;
};

/// E(s) = sum_i f_i s_i + sum_{i<j} g_ij s_i s_j, plus a stored constant offset.
/// Immutable once built.
class IsingModel {
 public:
  IsingModel() = default;

  IsingModel(std::vector<double> f, std::vector<Coupling> g, double offset, std::vector<ModelBlock> blocks = {})
      : f_(std::move(f)), g_(std::move(g)), offset_(offset), blocks_(std::move(blocks)) {
    const std::size_t n = f_.size();
    for (auto& c : g_) {
      if (c.i == c.j) throw Error("self-coupling at spin " + std::to_string(c.i));
      if (c.i >= n || c.j >= n) throw DimensionError("coupling index out of range");
      if (c.i > c.j) std::swap(c.i, c.j);
    }
    std::sort(g_.begin(), g_.end(), [](const Coupling& a, const Coupling& b) {
      return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    // merge duplicate pairs
    std::vector<Coupling> merged;
    merged.reserve(g_.size());
    for (const auto& c : g_) {
      if (!merged.empty() && merged.back().i == c.i && merged.back().j == c.j)
        merged.back().value += c.value;
      else
        merged.push_back(c);
    }
    g_ = std::move(merged);
    build_adjacency();
  }

  std::size_t n_v() const noexcept { return f_.size(); }
  const std::vector<double>& f() const noexcept { return f_; }
  const std::vector<Coupling>& g() const noexcept { return g_; }
  double offset() const noexcept { return offset_; }
  const std::vector<ModelBlock>& blocks() const noexcept { return blocks_; }

  /// Neighbours of spin i as (index, coupling) ranges.
  std::span<const std::uint32_t> neighbours(std::size_t i) const noexcept {
    return {adj_index_.data() + row_start_[i], row_start_[i + 1] - row_start_[i]};
  }
  std::span<const double> neighbour_weights(std::size_t i) const noexcept {
    return {adj_value_.data() + row_start_[i], row_start_[i + 1] - row_start_[i]};
  }

  double coupling(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    auto it = std::lower_bound(g_.begin(), g_.end(), std::pair{i, j}, [](const Coupling& c, const auto& key) {
      return c.i != key.first ? c.i < key.first : c.j < key.second;
    });
    return (it != g_.end() && it->i == i && it->j == j) ? it->value : 0.0;
  }

  double mean_abs_coupling() const noexcept {
    if (g_.empty()) return 0.0;
    double s = 0;
    for (const auto& c : g_) s += std::abs(c.value);
    return s / static_cast<double>(g_.size());
  }

 private:
  void build_adjacency() {
    const std::size_t n = f_.size();
    row_start_.assign(n + 1, 0);
    for (const auto& c : g_) {
      ++row_start_[c.i + 1];
      ++row_start_[c.j + 1];
    }
    for (std::size_t i = 0; i < n; ++i) row_start_[i + 1] += row_start_[i];
    adj_index_.resize(row_start_[n]);
    adj_value_.resize(row_start_[n]);
    std::vector<std::size_t> fill(row_start_.begin(), row_start_.end() - 1);
    for (const auto& c : g_) {
      adj_index_[fill[c.i]] = static_cast<std::uint32_t>(c.j);
      adj_value_[fill[c.i]++] = c.value;
      adj_index_[fill[c.j]] = static_cast<std::uint32_t>(c.i);
      adj_value_[fill[c.j]++] = c.value;
    }
  }

  std::vector<double> f_;
  std::vector<Coupling> g_;
  double offset_ = 0;
  std::vector<ModelBlock> blocks_;
  std::vector<std::size_t> row_start_{0};
  std::vector<std::uint32_t> adj_index_;
  std::vector<double> adj_value_;
};

/// Ising energy without the offset.
inline double energy(const IsingModel& m, std::span<const Spin> s) {
  if (s.size() != m.n_v()) throw DimensionError("spin state length does not match model");
  double e = 0;
  for (std::size_t i = 0; i < s.size(); ++i) e += m.f()[i] * s[i];
  for (const auto& c : m.g()) e += c.value * s[c.i] * s[c.j];
  return e;
}

inline double energy(const IsingModel& m, const SpinState& s) { return energy(m, s.view()); }

/// Offset-inclusive energy; equals the Euclidean residual for ML models.
inline double total_energy(const IsingModel& m, const SpinState& s) { return energy(m, s) + m.offset(); }

/// Local field h_i = f_i + sum_j g_ij s_j.
inline double local_field(const IsingModel& m, std::span<const Spin> s, std::size_t i) {
  double h = m.f()[i];
  const auto nb = m.neighbours(i);
  const auto w = m.neighbour_weights(i);
  for (std::size_t k = 0; k < nb.size(); ++k) h += w[k] * s[nb[k]];
  return h;
}

/// energy(flip_i(s)) - energy(s), in O(degree).
inline double delta_energy(const IsingModel& m, std::span<const Spin> s, std::size_t i) {
  if (s.size() != m.n_v()) throw DimensionError("spin state length does not match model");
  if (i >= m.n_v()) throw DimensionError("flip index out of range");
  return -2.0 * s[i] * local_field(m, s, i);
}

inline double delta_energy(const IsingModel& m, const SpinState& s, std::size_t i) { return delta_energy(m, s.view(), i); }

/// ML Ising model for ||y - H v(s)||^2 with v(s) = A s:
///   f = -2 Re(y^H H A), g_ij = 2 Re(A^H H^H H A)_ij (i<j),
///   offset = ||y||^2 + sum_i Re(A^H H^H H A)_ii.
inline IsingModel build_ml_ising(const CMatrix& H, const CVector& y, const SpinMapping& mapping, int layer = 0) {
  if (static_cast<std::size_t>(H.cols()) != mapping.n_t || H.rows() != y.size())
    throw DimensionError("channel/received vector do not match mapping");
  const CMatrix A = mapping.matrix();
  const CMatrix HA = H * A;
  const RMatrix Q = (HA.adjoint() * HA).real();
  const RVector lin = (y.adjoint() * HA).real().transpose();
  const std::size_t n = mapping.n_v();

  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = -2.0 * lin[static_cast<Eigen::Index>(i)];
  std::vector<Coupling> g;
  g.reserve(n * (n - 1) / 2);
  double offset = y.squaredNorm();
  for (std::size_t i = 0; i < n; ++i) {
    offset += Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    for (std::size_t j = i + 1; j < n; ++j) {
      const double q = Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (q != 0.0) g.push_back({i, j, 2.0 * q});
    }
  }
  return IsingModel(std::move(f), std::move(g), offset, {ModelBlock{0, n, mapping, layer}});
}

inline IsingModel build_ml_ising(const DetectionInstance& inst) {
  return build_ml_ising(inst.H, inst.y, SpinMapping{inst.n_t, inst.constellation});
}

/// Block-diagonal concatenation; energies and offsets add.
inline IsingModel combine_models(const std::vector<IsingModel>& models) {
  if (models.empty()) throw Error("combine_models needs at least one model");
  if (models.size() == 1) return models.front();
  std::vector<double> f;
  std::vector<Coupling> g;
  std::vector<ModelBlock> blocks;
  double offset = 0;
  std::size_t base = 0;
  for (const auto& m : models) {
    f.insert(f.end(), m.f().begin(), m.f().end());
    for (const auto& c : m.g()) g.push_back({c.i + base, c.j + base, c.value});
    if (m.blocks().empty()) {
      blocks.push_back(ModelBlock{base, m.n_v(), SpinMapping{}, -1});
    } else {
      for (auto b : m.blocks()) {
        b.start += base;
        blocks.push_back(b);
      }
    }
    offset += m.offset();
    base += m.n_v();
  }
  return IsingModel(std::move(f), std::move(g), offset, std::move(blocks));
}

/// Model over the free spins after fixing some; offsets absorb fixed terms so that
/// E_red(s_free) + offset_red = E_full(merge) + offset_full.
struct ReducedModel {
  IsingModel model;
  /// Full-model index of each reduced spin, ascending.
  std::vector<std::size_t> free_indices;
  /// Full-length state carrying the fixed values (free entries are placeholders).
  std::vector<Spin> fixed_template;

  SpinState expand(std::span<const Spin> free_spins) const {
    if (free_spins.size() != free_indices.size()) throw DimensionError("free state length mismatch");
    std::vector<Spin> full(fixed_template);
    for (std::size_t k = 0; k < free_indices.size(); ++k) full[free_indices[k]] = free_spins[k];
    return SpinState(std::move(full));
  }
  SpinState restrict(const SpinState& full) const {
    std::vector<Spin> s(free_indices.size());
    for (std::size_t k = 0; k < free_indices.size(); ++k) s[k] = full[free_indices[k]];
    return SpinState(std::move(s));
  }
};

inline ReducedModel reduce_ising(const IsingModel& model, const std::map<std::size_t, Spin>& fixed) {
  const std::size_t n = model.n_v();
  std::vector<int> slot(n, -1);  // reduced index, or -1 when fixed
  std::vector<Spin> tmpl(n, 1);
  for (const auto& [i, v] : fixed) {
    if (i >= n) throw DimensionError("fixed spin index " + std::to_string(i) + " out of range");
    if (v != 1 && v != -1) throw Error("fixed spin values must be +1 or -1");
    tmpl[i] = v;
  }
  ReducedModel out;
  for (std::size_t i = 0; i < n; ++i)
    if (!fixed.contains(i)) {
      slot[i] = static_cast<int>(out.free_indices.size());
      out.free_indices.push_back(i);
    }

  std::vector<double> f(out.free_indices.size());
  double offset = model.offset();
  for (std::size_t i = 0; i < n; ++i) {
    if (slot[i] >= 0)
      f[static_cast<std::size_t>(slot[i])] += model.f()[i];
    else
      offset += model.f()[i] * tmpl[i];
  }
  std::vector<Coupling> g;
  for (const auto& c : model.g()) {
    const int a = slot[c.i], b = slot[c.j];
    if (a >= 0 && b >= 0)
      g.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), c.value});
    else if (a >= 0)
      f[static_cast<std::size_t>(a)] += c.value * tmpl[c.j];
    else if (b >= 0)
      f[static_cast<std::size_t>(b)] += c.value * tmpl[c.i];
    else
      offset += c.value * tmpl[c.i] * tmpl[c.j];
  }
  out.model = IsingModel(std::move(f), std::move(g), offset);
  out.fixed_template = std::move(tmpl);
  return out;
}

// ---------------------------------------------------------------------------
// Split detection: one QPSK ML problem per constellation layer, with all other
// layers pinned to a reference (MMSE) solution.

/// Per-user QPSK layers q_i (1-based) of a lattice symbol vector.
inline CVector layer_vector(const CVector& v, const Constellation& c, int layer) {
  CVector q(v.size());
  for (Eigen::Index u = 0; u < v.size(); ++u) q[u] = c.layer_of(v[u], layer);
  return q;
}

/// Received vector seen by layer i once the other layers are cancelled:
///   y_i = (y - H sum_{k != i} w_k q_ref,k) / w_i.
inline CVector split_residual(const DetectionInstance& inst, const CVector& v_ref, int layer) {
  const auto& c = inst.constellation;
  const double w = c.layer_weight(layer);
  const CVector own = w * layer_vector(v_ref, c, layer);
  return (inst.y - inst.H * (v_ref - own)) / w;
}

/// Combined split form: block i (spins [2 n_t (i-1), 2 n_t i)) is the QPSK ML model
/// deciding layer i. Same spin count as the original ML form.
inline IsingModel build_split_forms(const DetectionInstance& inst, const CVector& v_ref) {
  const auto& c = inst.constellation;
  const int nq = c.qpsk_layers();
  if (nq < 2) throw Error("split detection requires a constellation with at least two QPSK layers");
  if (static_cast<std::size_t>(v_ref.size()) != inst.n_t) throw DimensionError("reference vector length");
  const SpinMapping qpsk{inst.n_t, Constellation(Modulation::QPSK)};
  std::vector<IsingModel> parts;
  parts.reserve(static_cast<std::size_t>(nq));
  for (int i = 1; i <= nq; ++i) parts.push_back(build_ml_ising(inst.H, split_residual(inst, v_ref, i), qpsk, i));
  return combine_models(parts);
}

/// Spin state of the split form that reproduces v_ref in every block.
inline SpinState split_state_from_symbols(const IsingModel& split, const CVector& v_ref, const Constellation& c) {
  std::vector<Spin> s(split.n_v());
  for (const auto& b : split.blocks()) {
    const SpinState sub = symbols_to_spins(layer_vector(v_ref, c, b.layer), b.mapping);
    std::copy(sub.values().begin(), sub.values().end(), s.begin() + static_cast<std::ptrdiff_t>(b.start));
  }
  return SpinState(std::move(s));
}

/// Candidate symbol vectors decoded from a split-form state: one per layer block
/// (that layer replaced, others from v_ref) and one taking every layer from its block.
inline std::vector<CVector> reassemble_split(const IsingModel& split, const SpinState& s, const CVector& v_ref,
                                             const Constellation& c) {
  if (s.size() != split.n_v()) throw DimensionError("split state length mismatch");
  std::vector<CVector> out;
  CVector all_layers = CVector::Zero(v_ref.size());
  for (const auto& b : split.blocks()) {
    const CVector q = map_spins_to_symbols(s.view().subspan(b.start, b.size), b.mapping);
    const double w = c.layer_weight(b.layer);
    out.push_back(v_ref - w * layer_vector(v_ref, c, b.layer) + w * q);
    all_layers += w * q;
  }
  out.push_back(all_layers);
  return out;
}

// ---------------------------------------------------------------------------
// JSON interchange: {n_v, f:[...], g:[[i,j,val],...], offset}

inline nlohmann::json to_json(const IsingModel& m) {
  nlohmann::json g = nlohmann::json::array();
  for (const auto& c : m.g()) g.push_back({c.i, c.j, c.value});
  return {{"n_v", m.n_v()}, {"f", m.f()}, {"g", std::move(g)}, {"offset", m.offset()}};
}

inline IsingModel ising_from_json(const nlohmann::json& j) {
  const auto n = j.at("n_v").get<std::size_t>();
  auto f = j.at("f").get<std::vector<double>>();
  if (f.size() != n) throw DimensionError("f length does not match n_v");
  std::vector<Coupling> g;
  for (const auto& e : j.at("g")) g.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
  return IsingModel(std::move(f), std::move(g), j.at("offset").get<double>());
}

}  // namespace xresq
