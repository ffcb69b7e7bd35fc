#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "xresq/ising.hpp"
#include "xresq/rng.hpp"
#include "xresq/types.hpp"

namespace xresq {

/// Geometric inverse-temperature ladder from 0.1/<|g|> to 10/<|g|>.
/// Falls back to mean |f| (then 1) as the scale for coupling-free models; a
/// single replica runs at the cold end.
inline std::vector<double> default_beta_ladder(const IsingModel& model, std::size_t n_replicas) {
  if (n_replicas == 0) throw ConfigError("need at least one replica");
  double scale = model.mean_abs_coupling();
  if (!(scale > 0)) {
    double s = 0;
    for (double f : model.f()) s += std::abs(f);
    scale = model.n_v() ? s / static_cast<double>(model.n_v()) : 0.0;
  }
  if (!(scale > 0)) scale = 1.0;
  const double lo = 0.1 / scale, hi = 10.0 / scale;
  if (n_replicas == 1) return {hi};
  std::vector<double> betas(n_replicas);
  for (std::size_t r = 0; r < n_replicas; ++r)
    betas[r] = lo * std::pow(hi / lo, static_cast<double>(r) / static_cast<double>(n_replicas - 1));
  return betas;
}

struct PtConfig {
  /// Ascending, strictly positive; one replica per entry.
  std::vector<double> betas;
  std::size_t n_sweeps = 50;
  std::uint64_t rng_seed = 0;
  /// Start every replica here; uniform random starts when empty.
  std::optional<SpinState> seed;
  bool record_sweep_bests = false;

  std::size_t n_replicas() const noexcept { return betas.size(); }

  void validate(std::size_t n_v) const {
    if (betas.empty()) throw ConfigError("PT needs at least one replica");
    for (std::size_t r = 0; r < betas.size(); ++r) {
      if (!(betas[r] > 0) || !std::isfinite(betas[r])) throw ConfigError("betas must be positive and finite");
      if (r > 0 && !(betas[r] > betas[r - 1])) throw ConfigError("betas must be strictly increasing");
    }
    if (n_sweeps < 1) throw ConfigError("PT needs at least one sweep");
    if (seed && seed->size() != n_v) throw DimensionError("seed state length does not match model");
  }
};

/// Replica count and sweep budget; the ladder is derived per model unless given.
struct PtSettings {
  std::size_t n_replicas = 8;
  std::size_t n_sweeps = 50;
  std::vector<double> betas;

  PtConfig make(const IsingModel& model, std::uint64_t rng_seed, std::optional<SpinState> seed = std::nullopt) const {
    PtConfig cfg;
    cfg.betas = betas.empty() ? default_beta_ladder(model, n_replicas) : betas;
    cfg.n_sweeps = n_sweeps;
    cfg.rng_seed = rng_seed;
    cfg.seed = std::move(seed);
    return cfg;
  }
};

struct Sample {
  SpinState state;
  /// Offset-inclusive energy.
  double energy = 0;
};

struct SampleSet {
  std::vector<Sample> samples;
  std::size_t best = 0;
  /// Best offset-inclusive energy after each sweep (when requested).
  std::vector<double> sweep_bests;
  /// Largest |incremental - recomputed| energy seen at a drift check.
  double max_drift = 0;

  const Sample& best_sample() const { return samples.at(best); }
};

/// Replica-exchange Metropolis over an Ising model.
///
/// Each sweep runs one sequential single-spin Metropolis pass per replica, then
/// proposes swaps between every adjacent pair of temperatures. Random numbers
/// come from counter streams keyed by (seed, replica, sweep), so a run is fully
/// determined by its config.
class ParallelTempering {
 public:
  static constexpr std::size_t kDriftCheckInterval = 64;
  static constexpr double kDriftTolerance = 1e-6;

  ParallelTempering(const IsingModel& model, PtConfig cfg) : model_(model), cfg_(std::move(cfg)) {
    cfg_.validate(model_.n_v());
    const std::size_t n = model_.n_v();
    replicas_.resize(cfg_.n_replicas());
    for (std::size_t r = 0; r < replicas_.size(); ++r) {
      auto& rep = replicas_[r];
      if (cfg_.seed) {
        rep.spins = cfg_.seed->values();
      } else {
        CounterRng rng{cfg_.rng_seed, kInitStream, r};
        rep.spins.resize(n);
        for (auto& s : rep.spins) s = (rng() >> 63) ? 1 : -1;
      }
      resync(rep);
    }
    best_state_ = replicas_.front().spins;
    best_energy_ = replicas_.front().energy;
    for (const auto& rep : replicas_) consider_best(rep);
    if (cfg_.seed) {
      // the seed is the reference point for the never-worse guarantee
      best_state_ = cfg_.seed->values();
      best_energy_ = energy(model_, std::span<const Spin>(best_state_));
    }
  }

  void sweep() {
    for (std::size_t r = 0; r < replicas_.size(); ++r) metropolis_pass(replicas_[r], cfg_.betas[r], r);
    exchange();
    ++sweeps_done_;
    if (sweeps_done_ % kDriftCheckInterval == 0) check_drift();
  }

  void run() {
    for (std::size_t t = 0; t < cfg_.n_sweeps; ++t) {
      sweep();
      if (cfg_.record_sweep_bests) sweep_bests_.push_back(best_energy_ + model_.offset());
    }
  }

  std::size_t replica_count() const noexcept { return replicas_.size(); }
  std::span<const Spin> replica_state(std::size_t temp_slot) const { return replicas_.at(temp_slot).spins; }
  double replica_energy(std::size_t temp_slot) const { return replicas_.at(temp_slot).energy; }
  std::size_t sweeps_done() const noexcept { return sweeps_done_; }
  double max_drift() const noexcept { return max_drift_; }

  /// Best state ever visited, with its exactly recomputed offset-inclusive energy.
  Sample best() const {
    SpinState s(best_state_);
    double e = energy(model_, s);
    if (cfg_.seed) {
      const double e_seed = energy(model_, *cfg_.seed);
      if (e_seed <= e) return {*cfg_.seed, e_seed + model_.offset()};
    }
    return {std::move(s), e + model_.offset()};
  }

  SampleSet result() const {
    SampleSet out;
    out.samples.push_back(best());
    out.sweep_bests = sweep_bests_;
    out.max_drift = max_drift_;
    return out;
  }

 private:
  static constexpr std::uint64_t kInitStream = 0x1417;
  static constexpr std::uint64_t kExchangeStream = 0xe8c4;

  struct Replica {
    std::vector<Spin> spins;
    std::vector<double> field;
    double energy = 0;
  };

  void resync(Replica& rep) const {
    const std::size_t n = model_.n_v();
    rep.field.resize(n);
    for (std::size_t i = 0; i < n; ++i) rep.field[i] = local_field(model_, rep.spins, i);
    rep.energy = energy(model_, std::span<const Spin>(rep.spins));
  }

  void consider_best(const Replica& rep) {
    if (rep.energy < best_energy_ - 1e-12 * (1.0 + std::abs(best_energy_))) {
      best_energy_ = rep.energy;
      best_state_ = rep.spins;
    }
  }

  void metropolis_pass(Replica& rep, double beta, std::size_t slot) {
    CounterRng rng{cfg_.rng_seed, static_cast<std::uint64_t>(slot), static_cast<std::uint64_t>(sweeps_done_)};
    const std::size_t n = rep.spins.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = -2.0 * rep.spins[i] * rep.field[i];
      if (delta > 0 && rng.uniform() >= std::exp(-beta * delta)) continue;
      rep.spins[i] = static_cast<Spin>(-rep.spins[i]);
      const double twice_s = 2.0 * rep.spins[i];
      const auto nb = model_.neighbours(i);
      const auto w = model_.neighbour_weights(i);
      for (std::size_t k = 0; k < nb.size(); ++k) rep.field[nb[k]] += twice_s * w[k];
      rep.energy += delta;
      if (delta < 0) consider_best(rep);
    }
  }

  void exchange() {
    if (replicas_.size() < 2) return;
    CounterRng rng{cfg_.rng_seed, kExchangeStream, static_cast<std::uint64_t>(sweeps_done_)};
    for (std::size_t k = 0; k + 1 < replicas_.size(); ++k) {
      const double x = (cfg_.betas[k] - cfg_.betas[k + 1]) * (replicas_[k].energy - replicas_[k + 1].energy);
      if (x >= 0 || rng.uniform() < std::exp(x)) std::swap(replicas_[k], replicas_[k + 1]);
    }
  }

  void check_drift() {
    for (auto& rep : replicas_) {
      const double incremental = rep.energy;
      resync(rep);
      const double drift = std::abs(incremental - rep.energy);
      max_drift_ = std::max(max_drift_, drift);
    }
  }

  const IsingModel& model_;
  PtConfig cfg_;
  std::vector<Replica> replicas_;
  std::vector<Spin> best_state_;
  double best_energy_ = std::numeric_limits<double>::infinity();
  std::vector<double> sweep_bests_;
  std::size_t sweeps_done_ = 0;
  double max_drift_ = 0;
};

/// Seeded or random-start Parallel Tempering; returns one sample, the best state
/// visited by any replica.
inline SampleSet pt_solve(const IsingModel& model, const PtConfig& cfg) {
  ParallelTempering pt(model, cfg);
  pt.run();
  return pt.result();
}

}  // namespace xresq
