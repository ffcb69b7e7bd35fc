#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xresq/instance.hpp"
#include "xresq/ising.hpp"
#include "xresq/linear.hpp"
#include "xresq/oracle.hpp"
#include "xresq/pt.hpp"
#include "xresq/types.hpp"

namespace xresq {

struct BerCount {
  std::uint64_t errors = 0;
  std::uint64_t total = 0;

  double rate() const { return total ? static_cast<double>(errors) / static_cast<double>(total) : 0.0; }
  BerCount& operator+=(const BerCount& o) {
    errors += o.errors;
    total += o.total;
    return *this;
  }
};

inline BerCount ber(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> detected) {
  if (truth.size() != detected.size()) throw DimensionError("bit vectors differ in length");
  BerCount c;
  c.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) c.errors += (truth[i] != detected[i]);
  return c;
}

/// Time to reach the optimum with the given confidence:
/// T_a * log(1 - confidence) / log(1 - p_g), with the run count clamped to >= 1.
inline double tts(double p_g, double t_a_us, double confidence = 0.99) {
  if (!(p_g >= 0 && p_g <= 1)) throw Error("p_g must lie in [0, 1]");
  if (!(t_a_us > 0)) throw Error("anneal time must be positive");
  if (p_g == 0) return std::numeric_limits<double>::infinity();
  if (p_g == 1) return t_a_us;
  const double runs = std::log(1 - confidence) / std::log(1 - p_g);
  return t_a_us * std::max(1.0, runs);
}

/// Probability that at least one of `count` independent samples hits the optimum.
inline double optimum_probability(double p_g, std::uint64_t count) {
  if (!(p_g >= 0 && p_g <= 1)) throw Error("p_g must lie in [0, 1]");
  return 1.0 - std::pow(1.0 - p_g, static_cast<double>(count));
}

struct HitCount {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;
};

inline constexpr double kMlEnergyTolerance = 1e-6;

inline HitCount ml_occurrence(std::span<const double> energies, double ml_energy, double tol = kMlEnergyTolerance) {
  HitCount h;
  h.total = energies.size();
  for (double e : energies) h.hits += std::abs(e - ml_energy) <= tol;
  return h;
}

inline HitCount ml_occurrence(const std::vector<SampleSet>& pool, double ml_energy, double tol = kMlEnergyTolerance) {
  std::vector<double> e;
  for (const auto& set : pool)
    for (const auto& s : set.samples) e.push_back(s.energy);
  return ml_occurrence(e, ml_energy, tol);
}

struct PacketCount {
  std::uint64_t ok = 0;
  std::uint64_t total = 0;
  double rate() const { return total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0; }
};

/// Non-overlapping packet windows per user stream (trailing partial windows dropped).
inline PacketCount count_packets(const std::vector<std::vector<std::uint8_t>>& per_user_errors, std::size_t packet_bits) {
  if (packet_bits == 0) throw Error("packet_bits must be positive");
  PacketCount c;
  for (const auto& stream : per_user_errors) {
    for (std::size_t start = 0; start + packet_bits <= stream.size(); start += packet_bits) {
      bool clean = true;
      for (std::size_t k = start; k < start + packet_bits && clean; ++k) clean = stream[k] == 0;
      c.ok += clean;
      ++c.total;
    }
  }
  return c;
}

/// Fraction of packet_bits windows (per user) without a bit error.
inline double packet_success_rate(const std::vector<std::vector<std::uint8_t>>& per_user_errors,
                                  std::size_t packet_bits = 12000) {
  const PacketCount c = count_packets(per_user_errors, packet_bits);
  if (c.total == 0) throw Error("error stream is shorter than one packet");
  return c.rate();
}

inline double packet_success_rate(const std::vector<std::uint8_t>& errors, std::size_t packet_bits = 12000) {
  return packet_success_rate(std::vector<std::vector<std::uint8_t>>{errors}, packet_bits);
}

/// Anneal schedule as (time us, tau) points; total anneal time is the last time.
struct AnnealSchedule {
  struct Point {
    double time_us;
    double tau;
  };
  std::string name;
  std::vector<Point> points;

  void validate() const {
    if (points.empty() || points.front().time_us != 0) throw Error("schedule must start at time 0");
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (points[k].tau < 0 || points[k].tau > 1) throw Error("schedule tau outside [0, 1]");
      if (k > 0 && !(points[k].time_us > points[k - 1].time_us)) throw Error("schedule times must increase");
    }
  }
  double anneal_time_us() const { return points.back().time_us; }
  /// tau held during the first pause (flat segment), if any.
  std::optional<double> switching_point() const {
    for (std::size_t k = 1; k < points.size(); ++k)
      if (points[k].tau == points[k - 1].tau) return points[k].tau;
    return std::nullopt;
  }
  std::optional<double> pause_us() const {
    for (std::size_t k = 1; k < points.size(); ++k)
      if (points[k].tau == points[k - 1].tau) return points[k].time_us - points[k - 1].time_us;
    return std::nullopt;
  }
};

/// Forward anneal with a 1 us pause at tau = 0.3.
inline AnnealSchedule quamax_schedule() { return {"QuAMax", {{0.0, 0.0}, {0.3, 0.3}, {1.3, 0.3}, {2.0, 1.0}}}; }

/// Reverse anneal to tau = 0.4 with a 1 us pause.
inline AnnealSchedule xresq_schedule() { return {"X-ResQ", {{0.0, 1.0}, {0.6, 0.4}, {1.6, 0.4}, {2.2, 1.0}}}; }

inline double compute_budget(const AnnealSchedule& schedule, std::uint64_t n_a) {
  schedule.validate();
  if (n_a < 1) throw Error("anneal count must be at least 1");
  // schedules are defined on a nanosecond grid; snap the product back onto it
  return std::round(static_cast<double>(n_a) * schedule.anneal_time_us() * 1e3) / 1e3;
}

// ---------------------------------------------------------------------------
// Split-detection diagnostics for square QAM (layer 1 = quadrant, lower layers = position).

struct SplitDeltaStats {
  std::uint64_t symbols = 0;
  std::uint64_t quadrant_wrong = 0;
  std::uint64_t position_wrong = 0;
  std::uint64_t both_wrong = 0;

  double p_quadrant() const { return symbols ? static_cast<double>(quadrant_wrong) / static_cast<double>(symbols) : 0.0; }
  double p_position() const { return symbols ? static_cast<double>(position_wrong) / static_cast<double>(symbols) : 0.0; }
  double p_both() const { return symbols ? static_cast<double>(both_wrong) / static_cast<double>(symbols) : 0.0; }
};

struct SplitDeltaSample {
  const DetectionInstance* inst = nullptr;
  CVector v_mmse;
  CVector v_ml;
};

namespace detail {
inline void require_split_capable(const Constellation& c) {
  if (c.qpsk_layers() < 2) throw Error("split diagnostics need a square QAM with at least two layers");
}
}  // namespace detail

/// Per-SNR probability that the MMSE symbol's quadrant and/or position differs from the ML symbol's.
inline std::map<double, SplitDeltaStats> split_delta_stats(const std::vector<SplitDeltaSample>& samples) {
  std::map<double, SplitDeltaStats> out;
  for (const auto& s : samples) {
    const auto& c = s.inst->constellation;
    detail::require_split_capable(c);
    auto& st = out[s.inst->snr_db];
    for (Eigen::Index u = 0; u < s.v_ml.size(); ++u) {
      const bool quad = c.layer_of(s.v_mmse[u], 1) != c.layer_of(s.v_ml[u], 1);
      bool pos = false;
      for (int i = 2; i <= c.qpsk_layers(); ++i) pos = pos || c.layer_of(s.v_mmse[u], i) != c.layer_of(s.v_ml[u], i);
      ++st.symbols;
      st.quadrant_wrong += quad;
      st.position_wrong += pos;
      st.both_wrong += quad && pos;
    }
  }
  return out;
}

/// Convenience form computing MMSE and brute-force ML per instance.
inline std::map<double, SplitDeltaStats> split_delta_stats(const std::vector<DetectionInstance>& instances,
                                                           double budget = kDefaultEnumerationBudget) {
  std::vector<SplitDeltaSample> samples;
  samples.reserve(instances.size());
  for (const auto& inst : instances) {
    detail::require_split_capable(inst.constellation);
    samples.push_back({&inst, detect_mmse(inst).v_hard, brute_force_ml(inst, budget).v_ml});
  }
  return split_delta_stats(samples);
}

/// Effective noise when the quadrant is decoded with the position cancelled at its true
/// value: q_1 / 2-scaled system  y/2 = H q_1 + 0.5 (n + H delta), delta = q_2 - q_mmse,2.
inline double quadrant_effective_noise(const DetectionInstance& inst, const CVector& v_mmse) {
  const auto& c = inst.constellation;
  CVector delta(v_mmse.size());
  for (Eigen::Index u = 0; u < v_mmse.size(); ++u) {
    cplx d = 0;
    for (int i = 2; i <= c.qpsk_layers(); ++i)
      d += c.layer_weight(i) * (c.layer_of(inst.v_true[u], i) - c.layer_of(v_mmse[u], i));
    delta[u] = d;
  }
  return 0.25 * (inst.noise + inst.H * delta).squaredNorm();
}

/// Noise when the position layer is treated as noise while decoding the quadrant: 0.25 (sigma^2 + 2 N^2).
inline double naive_quadrant_first_noise(double sigma2_total, double n) { return 0.25 * (sigma2_total + 2.0 * n * n); }

/// Noise when the quadrant layer is treated as noise while decoding the position: sigma^2 + 8 N^2.
inline double naive_position_first_noise(double sigma2_total, double n) { return sigma2_total + 8.0 * n * n; }

/// Cauchy-Schwarz bound 0.25 (sigma^2 + E||H delta||^2 + 2 sigma sqrt(E||H delta||^2)).
inline double effective_noise_bound(double sigma2_total, double hdelta_power) {
  return 0.25 * (sigma2_total + hdelta_power + 2.0 * std::sqrt(sigma2_total * hdelta_power));
}

struct EffectiveNoiseReport {
  std::size_t instances = 0;
  std::size_t n = 0;
  /// E||n||^2 = n_r * sigma2 (total over antennas).
  double sigma2_total = 0;
  double effective_mean = 0;
  double effective_stderr = 0;
  double hdelta_mean = 0;
  double bound = 0;
  double naive_quadrant = 0;
  double naive_position = 0;

  bool bound_holds() const { return effective_mean <= bound + 3.0 * effective_stderr; }
  bool naive_dominates(double factor = 10.0) const { return naive_quadrant >= factor * effective_mean; }
};

/// Monte Carlo check of the split-detection noise analysis on N x N instances of one SNR.
inline EffectiveNoiseReport effective_noise_check(const std::vector<DetectionInstance>& instances,
                                                  const std::vector<CVector>& v_mmse) {
  if (instances.empty()) throw Error("effective_noise_check needs instances");
  if (instances.size() != v_mmse.size()) throw DimensionError("one MMSE solution per instance");
  EffectiveNoiseReport rep;
  rep.instances = instances.size();
  rep.n = instances.front().n_t;
  double sum = 0, sum_sq = 0, hd = 0, s2 = 0;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const auto& inst = instances[k];
    detail::require_split_capable(inst.constellation);
    if (inst.n_t != inst.n_r || inst.n_t != rep.n) throw DimensionError("effective_noise_check needs N x N instances");
    const double x = quadrant_effective_noise(inst, v_mmse[k]);
    sum += x;
    sum_sq += x * x;
    const auto& c = inst.constellation;
    CVector delta(inst.v_true.size());
    for (Eigen::Index u = 0; u < delta.size(); ++u) {
      cplx d = 0;
      for (int i = 2; i <= c.qpsk_layers(); ++i)
        d += c.layer_weight(i) * (c.layer_of(inst.v_true[u], i) - c.layer_of(v_mmse[k][u], i));
      delta[u] = d;
    }
    hd += (inst.H * delta).squaredNorm();
    s2 += static_cast<double>(inst.n_r) * inst.sigma2;
  }
  const double m = static_cast<double>(instances.size());
  rep.effective_mean = sum / m;
  const double var = m > 1 ? std::max(0.0, (sum_sq - m * rep.effective_mean * rep.effective_mean) / (m - 1)) : 0.0;
  rep.effective_stderr = std::sqrt(var / m);
  rep.hdelta_mean = hd / m;
  rep.sigma2_total = s2 / m;
  rep.bound = effective_noise_bound(rep.sigma2_total, rep.hdelta_mean);
  const auto n = static_cast<double>(rep.n);
  rep.naive_quadrant = naive_quadrant_first_noise(rep.sigma2_total, n);
  rep.naive_position = naive_position_first_noise(rep.sigma2_total, n);
  return rep;
}

}  // namespace xresq
