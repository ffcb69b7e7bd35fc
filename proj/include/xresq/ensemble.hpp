#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xresq/ising.hpp"
#include "xresq/linear.hpp"
#include "xresq/oracle.hpp"
#include "xresq/pt.hpp"

namespace xresq {

enum class Strategy { XResQ, XResQSplit, IoTResQ, ParaMax, MmseOnly, ZfOnly, BruteForce };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::XResQ: return "XResQ";
    case Strategy::XResQSplit: return "XResQSplit";
    case Strategy::IoTResQ: return "IoTResQ";
    case Strategy::ParaMax: return "ParaMax";
    case Strategy::MmseOnly: return "MmseOnly";
    case Strategy::ZfOnly: return "ZfOnly";
    case Strategy::BruteForce: return "BruteForce";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy k : {Strategy::XResQ, Strategy::XResQSplit, Strategy::IoTResQ, Strategy::ParaMax, Strategy::MmseOnly,
                     Strategy::ZfOnly, Strategy::BruteForce})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown detector '" + std::string(s) + "'");
}

/// Whether the strategy runs parallel solver tasks (and so depends on l_p).
inline bool uses_parallelism(Strategy s) {
  return s == Strategy::XResQ || s == Strategy::XResQSplit || s == Strategy::IoTResQ || s == Strategy::ParaMax;
}

inline std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  while (exp--) r *= base;
  return r;
}

class DetectorConfig {
 public:
  Strategy strategy = Strategy::MmseOnly;
  std::size_t l_p = 1;
  /// Full-expansion levels (IoTResQ only).
  std::size_t n_fs = 0;
  PtSettings pt;
  std::uint64_t rng_seed = 0;
  double ml_budget = kDefaultEnumerationBudget;
  /// Execution order of solver tasks (empty: natural). Pooling is by task index.
  std::vector<std::size_t> task_order;

  static DetectorConfig make(Strategy s, std::size_t l_p, PtSettings pt = {}, std::uint64_t seed = 0) {
    if (s == Strategy::IoTResQ) throw ConfigError("use DetectorConfig::iotresq for IoTResQ");
    if (l_p < 1) throw ConfigError("l_p must be at least 1");
    DetectorConfig c;
    c.strategy = s;
    c.l_p = l_p;
    c.pt = std::move(pt);
    c.rng_seed = seed;
    return c;
  }

  /// IoT-ResQ parallelism is fixed by the full expansion: l_p must equal |O|^n_fs.
  static DetectorConfig iotresq(std::size_t n_fs, std::size_t l_p, const Constellation& c, PtSettings pt = {},
                                std::uint64_t seed = 0) {
    if (l_p != ipow(c.size(), n_fs))
      throw ConfigError("IoTResQ requires l_p = |O|^n_fs = " + std::to_string(ipow(c.size(), n_fs)) + ", got " +
                        std::to_string(l_p));
    DetectorConfig d;
    d.strategy = Strategy::IoTResQ;
    d.l_p = l_p;
    d.n_fs = n_fs;
    d.pt = std::move(pt);
    d.rng_seed = seed;
    return d;
  }

  void validate_for(const Constellation& c) const {
    if (l_p < 1) throw ConfigError("l_p must be at least 1");
    if (strategy == Strategy::IoTResQ && l_p != ipow(c.size(), n_fs))
      throw ConfigError("IoTResQ requires l_p = |O|^n_fs");
    if (!task_order.empty()) {
      std::vector<bool> seen(l_p, false);
      if (task_order.size() != l_p) throw ConfigError("task_order must list every task");
      for (auto t : task_order) {
        if (t >= l_p || seen[t]) throw ConfigError("task_order is not a permutation");
        seen[t] = true;
      }
    }
  }
};

struct TaskSummary {
  std::uint64_t seed = 0;
  /// Residual ||y - H v||^2 of the task's candidate.
  double best_energy = 0;
  /// Best solver state in the task's own model (ML, split, or reduced form).
  SpinState sample;
  CVector v;
  std::string form;
};

struct Timing {
  double preprocess_us = 0;
  double solve_us = 0;
};

struct DetectionResult {
  Bits bits;
  CVector v_hat;
  /// Offset-inclusive energy, i.e. the residual ||y - H v_hat||^2.
  double energy = 0;
  /// Residual of the classical starting point (MMSE for X-ResQ, FSD best for IoT-ResQ).
  std::optional<double> initial_energy;
  std::vector<TaskSummary> per_task;
  Timing timing;
  bool fsd_fallback = false;
};

/// Seed states for parallel tasks: the unmodified state first, then single-spin
/// flips at distinct uniformly chosen indices.
inline std::vector<SpinState> bmg_generate(const SpinState& seed_state, std::size_t l_p, std::uint64_t rng_seed) {
  const std::size_t n = seed_state.size();
  if (l_p > n + 1)
    throw ConfigError("cannot generate " + std::to_string(l_p) + " distinct single-flip seeds from " +
                      std::to_string(n) + " spins");
  std::vector<SpinState> out;
  out.reserve(l_p);
  if (l_p == 0) return out;
  out.push_back(seed_state);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(rng_seed);
  for (std::size_t k = 0; k + 1 < l_p; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(rng.below(n - k));
    std::swap(idx[k], idx[pick]);
    SpinState s = seed_state;
    s.flip(idx[k]);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::uint64_t task_seed(std::uint64_t cfg_seed, std::uint64_t instance_id, std::uint64_t task) {
  return hash_key({cfg_seed, instance_id, task});
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double micros_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
}

/// One solver task: a model, a start (or random), and a decoder from the best state
/// back to candidate symbol vectors.
struct TaskSpec {
  const IsingModel* model = nullptr;
  std::optional<SpinState> start;
  std::string form;
  /// Maps a model state to candidate symbol vectors (the task keeps the best).
  std::function<std::vector<CVector>(const SpinState&)> decode;
};

inline std::vector<std::size_t> execution_order(const DetectorConfig& cfg, std::size_t n) {
  if (!cfg.task_order.empty()) return cfg.task_order;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

/// Runs every task, then filters the minimum-residual candidate (lowest task index on ties).
inline void run_and_pool(const DetectionInstance& inst, const DetectorConfig& cfg, const std::vector<TaskSpec>& tasks,
                         DetectionResult& out) {
  out.per_task.assign(tasks.size(), TaskSummary{});
  const auto t0 = Clock::now();
  for (std::size_t t : execution_order(cfg, tasks.size())) {
    const TaskSpec& spec = tasks[t];
    const std::uint64_t seed = task_seed(cfg.rng_seed, inst.id, t);
    const SampleSet set = pt_solve(*spec.model, cfg.pt.make(*spec.model, seed, spec.start));
    TaskSummary sum;
    sum.seed = seed;
    sum.form = spec.form;
    sum.best_energy = std::numeric_limits<double>::infinity();
    auto consider = [&](const SpinState& s) {
      for (CVector& v : spec.decode(s)) {
        const double r = inst.residual(v);
        if (r < sum.best_energy) {
          sum.best_energy = r;
          sum.v = std::move(v);
          sum.sample = s;
        }
      }
    };
    consider(set.best_sample().state);
    // the start state was visited too
    if (spec.start) consider(*spec.start);
    out.per_task[t] = std::move(sum);
  }
  out.timing.solve_us = micros_since(t0);

  std::size_t best = 0;
  for (std::size_t t = 1; t < out.per_task.size(); ++t)
    if (out.per_task[t].best_energy < out.per_task[best].best_energy) best = t;
  out.v_hat = out.per_task[best].v;
  out.energy = out.per_task[best].best_energy;
  out.bits = bits_from_symbols(out.v_hat, inst.constellation);
}

}  // namespace detail

/// Multi-seed ensemble: MMSE start, BMG seeds, l_p seeded PT tasks, minimum-residual filter.
/// XResQSplit reserves ceil(l_p/2) tasks for the split form, spread evenly over its
/// layer blocks; the rest solve the original form.
inline DetectionResult detect_xresq(const DetectionInstance& inst, const DetectorConfig& cfg) {
  if (cfg.strategy != Strategy::XResQ && cfg.strategy != Strategy::XResQSplit)
    throw ConfigError("detect_xresq needs strategy XResQ or XResQSplit");
  cfg.validate_for(inst.constellation);
  const auto t0 = detail::Clock::now();
  DetectionResult out;

  const LinearSolution mmse = detect_mmse(inst);
  out.initial_energy = inst.residual(mmse.v_hard);
  const SpinMapping mapping{inst.n_t, inst.constellation};
  const IsingModel model = build_ml_ising(inst);
  const SpinState mmse_state = symbols_to_spins(mmse.v_hard, mapping);

  const bool split = cfg.strategy == Strategy::XResQSplit;
  const std::size_t n_split = split ? (cfg.l_p + 1) / 2 : 0;
  const std::size_t n_base = cfg.l_p - n_split;

  std::vector<detail::TaskSpec> tasks;
  tasks.reserve(cfg.l_p);
  auto decode_ml = [&mapping](const SpinState& s) { return std::vector<CVector>{map_spins_to_symbols(s, mapping)}; };
  for (auto& s : bmg_generate(mmse_state, n_base, hash_key({cfg.rng_seed, inst.id, 0xb36ULL})))
    tasks.push_back({&model, std::move(s), "ml", decode_ml});

  IsingModel split_model;
  if (split) {
    split_model = build_split_forms(inst, mmse.v_hard);
    const SpinState split_state = split_state_from_symbols(split_model, mmse.v_hard, inst.constellation);
    const auto& blocks = split_model.blocks();
    const std::size_t nb = blocks.size();
    // task k goes to block k mod nb; every task but the first carries one flip in its block
    std::vector<std::size_t> flips(nb, 0);
    for (std::size_t k = 1; k < n_split; ++k) ++flips[k % nb];
    std::vector<std::vector<SpinState>> per_block(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      std::vector<Spin> sub(split_state.values().begin() + static_cast<std::ptrdiff_t>(blocks[b].start),
                            split_state.values().begin() + static_cast<std::ptrdiff_t>(blocks[b].start + blocks[b].size));
      per_block[b] = bmg_generate(SpinState(std::move(sub)), flips[b] + 1, hash_key({cfg.rng_seed, inst.id, 0x5b1ULL, b}));
    }
    std::vector<std::size_t> used(nb, 1);
    auto decode_split = [&split_model, &mmse, &inst](const SpinState& s) {
      return reassemble_split(split_model, s, mmse.v_hard, inst.constellation);
    };
    for (std::size_t k = 0; k < n_split; ++k) {
      SpinState seed = split_state;
      if (k > 0) {
        const std::size_t b = k % nb;
        const SpinState& sub = per_block[b][used[b]++];
        for (std::size_t i = 0; i < sub.size(); ++i) seed.set(blocks[b].start + i, sub[i]);
      }
      tasks.push_back({&split_model, std::move(seed), "split", decode_split});
    }
  }
  out.timing.preprocess_us = detail::micros_since(t0);
  detail::run_and_pool(inst, cfg, tasks, out);
  return out;
}

/// Decomposition ensemble: FSD full expansion, one reduced model per branch, each
/// solved by PT seeded with the branch's greedy completion.
inline DetectionResult detect_iotresq(const DetectionInstance& inst, const DetectorConfig& cfg) {
  if (cfg.strategy != Strategy::IoTResQ) throw ConfigError("detect_iotresq needs strategy IoTResQ");
  cfg.validate_for(inst.constellation);
  const auto t0 = detail::Clock::now();
  DetectionResult out;

  const FsdPlan plan = make_fsd_plan(inst, cfg.n_fs);
  const FsdResult fsd = fsd_detect(inst, plan);
  out.fsd_fallback = fsd.mmse_fallback;
  out.initial_energy = fsd.best_candidate().obj;
  const SpinMapping mapping{inst.n_t, inst.constellation};
  const IsingModel model = build_ml_ising(inst);
  const auto bps = static_cast<std::size_t>(inst.constellation.bits_per_symbol());

  std::vector<ReducedModel> reduced;
  reduced.reserve(fsd.candidates.size());
  std::vector<detail::TaskSpec> tasks;
  tasks.reserve(fsd.candidates.size());
  for (const auto& cand : fsd.candidates) {
    const SpinState full = symbols_to_spins(cand.v, mapping);
    std::map<std::size_t, Spin> fixed;
    for (std::size_t k = 0; k < plan.n_fs; ++k)
      for (std::size_t b = 0; b < bps; ++b) {
        const std::size_t i = plan.order[k] * bps + b;
        fixed.emplace(i, full[i]);
      }
    reduced.push_back(reduce_ising(model, fixed));
  }
  for (std::size_t b = 0; b < fsd.candidates.size(); ++b) {
    const ReducedModel& red = reduced[b];
    SpinState start = red.restrict(symbols_to_spins(fsd.candidates[b].v, mapping));
    tasks.push_back({&red.model, std::move(start), "reduced", [&red, &mapping](const SpinState& s) {
                       return std::vector<CVector>{map_spins_to_symbols(red.expand(s.view()), mapping)};
                     }});
  }
  out.timing.preprocess_us = detail::micros_since(t0);
  detail::run_and_pool(inst, cfg, tasks, out);
  return out;
}

/// Sample parallelism: l_p independent random-start PT tasks on the original model.
inline DetectionResult detect_paramax(const DetectionInstance& inst, const DetectorConfig& cfg) {
  if (cfg.strategy != Strategy::ParaMax) throw ConfigError("detect_paramax needs strategy ParaMax");
  cfg.validate_for(inst.constellation);
  const auto t0 = detail::Clock::now();
  DetectionResult out;
  const SpinMapping mapping{inst.n_t, inst.constellation};
  const IsingModel model = build_ml_ising(inst);
  std::vector<detail::TaskSpec> tasks(cfg.l_p);
  for (auto& t : tasks) {
    t.model = &model;
    t.form = "ml";
    t.decode = [&mapping](const SpinState& s) { return std::vector<CVector>{map_spins_to_symbols(s, mapping)}; };
  }
  out.timing.preprocess_us = detail::micros_since(t0);
  detail::run_and_pool(inst, cfg, tasks, out);
  return out;
}

namespace detail {
inline DetectionResult single_candidate(const DetectionInstance& inst, CVector v, std::string form, double elapsed_us) {
  DetectionResult out;
  out.energy = inst.residual(v);
  out.bits = bits_from_symbols(v, inst.constellation);
  TaskSummary t;
  t.best_energy = out.energy;
  t.sample = symbols_to_spins(v, SpinMapping{inst.n_t, inst.constellation});
  t.v = v;
  t.form = std::move(form);
  out.per_task.push_back(std::move(t));
  out.v_hat = std::move(v);
  out.timing.solve_us = elapsed_us;
  return out;
}
}  // namespace detail

inline DetectionResult detect(const DetectionInstance& inst, const DetectorConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::XResQ:
    case Strategy::XResQSplit: return detect_xresq(inst, cfg);
    case Strategy::IoTResQ: return detect_iotresq(inst, cfg);
    case Strategy::ParaMax: return detect_paramax(inst, cfg);
    case Strategy::MmseOnly: {
      const auto t0 = detail::Clock::now();
      auto sol = detect_mmse(inst);
      return detail::single_candidate(inst, std::move(sol.v_hard), "mmse", detail::micros_since(t0));
    }
    case Strategy::ZfOnly: {
      const auto t0 = detail::Clock::now();
      auto sol = detect_zf(inst);
      return detail::single_candidate(inst, std::move(sol.v_hard), "zf", detail::micros_since(t0));
    }
    case Strategy::BruteForce: {
      const auto t0 = detail::Clock::now();
      auto ml = brute_force_ml(inst, cfg.ml_budget);
      return detail::single_candidate(inst, std::move(ml.v_ml), "ml-exhaustive", detail::micros_since(t0));
    }
  }
  throw ConfigError("unknown strategy");
}

}  // namespace xresq
