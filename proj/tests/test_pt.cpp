#include <gtest/gtest.h>

#include <array>
#include <random>
#include <thread>

#include "xresq/oracle.hpp"
#include "xresq/pt.hpp"

using namespace xresq;

namespace {

IsingModel random_model(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> f(n);
  for (auto& x : f) x = nd(gen);
  std::vector<Coupling> g;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g.push_back({i, j, nd(gen)});
  return IsingModel(std::move(f), std::move(g), 0.0);
}

SpinState ground_state(const IsingModel& m) {
  double best = std::numeric_limits<double>::infinity();
  SpinState arg;
  for (std::uint64_t k = 0; k < (std::uint64_t{1} << m.n_v()); ++k) {
    std::vector<Spin> s(m.n_v());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = ((k >> i) & 1) ? 1 : -1;
    SpinState st(std::move(s));
    if (energy(m, st) < best) best = energy(m, st), arg = st;
  }
  return arg;
}

PtConfig config_for(const IsingModel& m, std::uint64_t seed, std::optional<SpinState> start = std::nullopt) {
  return PtSettings{}.make(m, seed, std::move(start));
}

}  // namespace

TEST(Ladder, GeometricFromMeanCoupling) {
  const IsingModel m({0.0, 0.0, 0.0}, {{0, 1, 2.0}, {1, 2, -2.0}}, 0);
  const auto b = default_beta_ladder(m, 8);
  ASSERT_EQ(b.size(), 8u);
  EXPECT_DOUBLE_EQ(b.front(), 0.05);
  EXPECT_NEAR(b.back(), 5.0, 1e-12);
  for (std::size_t k = 1; k < b.size(); ++k) EXPECT_NEAR(b[k] / b[k - 1], std::pow(100.0, 1.0 / 7.0), 1e-12);
  EXPECT_EQ(default_beta_ladder(m, 1), std::vector<double>{5.0});
  // no couplings: scale from the linear terms
  EXPECT_DOUBLE_EQ(default_beta_ladder(IsingModel({-6.0}, {}, 0), 2).back(), 10.0 / 6.0);
  EXPECT_THROW(default_beta_ladder(m, 0), ConfigError);
}

TEST(Config, Validation) {
  const IsingModel m({1.0, 1.0}, {}, 0);
  PtConfig c;
  EXPECT_THROW(c.validate(2), ConfigError);
  c.betas = {1.0, 1.0};
  EXPECT_THROW(c.validate(2), ConfigError);
  c.betas = {1.0, 0.5};
  EXPECT_THROW(c.validate(2), ConfigError);
  c.betas = {-1.0};
  EXPECT_THROW(c.validate(2), ConfigError);
  c.betas = {1.0};
  c.n_sweeps = 0;
  EXPECT_THROW(c.validate(2), ConfigError);
  c.n_sweeps = 1;
  c.seed = SpinState{1};
  EXPECT_THROW(c.validate(2), DimensionError);
}

TEST(PtSolve, OneSpinFindsOptimum) {
  const IsingModel m({-6.0}, {}, 10.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = pt_solve(m, config_for(m, seed));
    EXPECT_EQ(r.best_sample().state, SpinState{1});
    EXPECT_EQ(r.best_sample().energy, 4.0);
    const auto seeded = pt_solve(m, config_for(m, seed, SpinState{-1}));
    EXPECT_EQ(seeded.best_sample().state, SpinState{1});
  }
}

TEST(PtSolve, SeededAtOptimumNeverWorsens) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const IsingModel m = random_model(10, seed);
    const SpinState g = ground_state(m);
    const auto r = pt_solve(m, config_for(m, seed, g));
    EXPECT_EQ(r.best_sample().energy, energy(m, g) + m.offset());
  }
}

TEST(PtSolve, BestNeverAboveSeed) {
  std::mt19937_64 gen(3);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const IsingModel m = random_model(12, 100 + seed);
    std::vector<Spin> s(12);
    for (auto& x : s) x = (gen() & 1) ? 1 : -1;
    const SpinState start(s);
    auto cfg = config_for(m, seed, start);
    cfg.n_sweeps = 2;
    const auto r = pt_solve(m, cfg);
    EXPECT_LE(r.best_sample().energy, energy(m, start) + m.offset());
  }
}

TEST(PtSolve, RecordedEnergyIsExact) {
  const IsingModel m = random_model(14, 5);
  const auto r = pt_solve(m, config_for(m, 9));
  const auto& b = r.best_sample();
  EXPECT_EQ(b.energy, energy(m, b.state) + m.offset());
  EXPECT_EQ(r.samples.size(), 1u);
  EXPECT_EQ(r.best, 0u);
}

TEST(PtSolve, DeterministicForFixedSeed) {
  const IsingModel m = random_model(16, 6);
  const auto a = pt_solve(m, config_for(m, 42));
  const auto b = pt_solve(m, config_for(m, 42));
  EXPECT_EQ(a.best_sample().state, b.best_sample().state);
  EXPECT_EQ(a.best_sample().energy, b.best_sample().energy);
  ParallelTempering p(m, config_for(m, 42)), q(m, config_for(m, 42));
  for (int t = 0; t < 30; ++t) {
    p.sweep();
    q.sweep();
  }
  for (std::size_t r = 0; r < p.replica_count(); ++r) {
    EXPECT_TRUE(std::equal(p.replica_state(r).begin(), p.replica_state(r).end(), q.replica_state(r).begin()));
    EXPECT_EQ(p.replica_energy(r), q.replica_energy(r));
  }
}

TEST(PtSolve, ThreadCountDoesNotMatter) {
  const IsingModel m = random_model(16, 7);
  const auto ref = pt_solve(m, config_for(m, 3));
  std::vector<Sample> out(8);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < out.size(); ++t)
    pool.emplace_back([&, t] { out[t] = pt_solve(m, config_for(m, 3)).best_sample(); });
  for (auto& th : pool) th.join();
  for (const auto& s : out) EXPECT_EQ(s.state, ref.best_sample().state);
}

TEST(PtSolve, IncrementalEnergyTracksRecomputation) {
  const IsingModel m = random_model(20, 8);
  auto cfg = config_for(m, 1);
  cfg.n_sweeps = 256;
  ParallelTempering p(m, cfg);
  p.run();
  EXPECT_EQ(p.sweeps_done(), 256u);
  EXPECT_LE(p.max_drift(), ParallelTempering::kDriftTolerance);
  for (std::size_t r = 0; r < p.replica_count(); ++r) {
    const double e = energy(m, p.replica_state(r));
    EXPECT_NEAR(p.replica_energy(r), e, 1e-9);
  }
}

TEST(PtSolve, SweepBestsAreMonotone) {
  const IsingModel m = random_model(12, 9);
  auto cfg = config_for(m, 2);
  cfg.record_sweep_bests = true;
  const auto r = pt_solve(m, cfg);
  ASSERT_EQ(r.sweep_bests.size(), cfg.n_sweeps);
  for (std::size_t k = 1; k < r.sweep_bests.size(); ++k) EXPECT_LE(r.sweep_bests[k], r.sweep_bests[k - 1]);
  EXPECT_GE(r.sweep_bests.back(), r.best_sample().energy - 1e-9);
}

TEST(PtSolve, DetailedBalanceTwoSpins) {
  // E = 0.3 s0 - 0.2 s1 + 0.5 s0 s1, single replica at beta = 1
  const IsingModel m({0.3, -0.2}, {{0, 1, 0.5}}, 0);
  PtConfig cfg;
  cfg.betas = {1.0};
  cfg.n_sweeps = 1;
  cfg.rng_seed = 2024;
  ParallelTempering p(m, cfg);
  std::array<double, 4> counts{};
  const std::size_t sweeps = 1000000;
  for (std::size_t t = 0; t < sweeps; ++t) {
    p.sweep();
    const auto s = p.replica_state(0);
    counts[(s[0] > 0 ? 1 : 0) + (s[1] > 0 ? 2 : 0)] += 1;
  }
  std::array<double, 4> w{};
  double z = 0;
  for (int k = 0; k < 4; ++k) {
    const SpinState s{(k & 1) ? 1 : -1, (k & 2) ? 1 : -1};
    w[k] = std::exp(-energy(m, s));
    z += w[k];
  }
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(counts[k] / static_cast<double>(sweeps), w[k] / z, 0.01 * w[k] / z) << k;
}

TEST(PtSolve, ExchangeAcceptanceRule) {
  // a swap that hands the lower energy to the colder replica is always accepted
  const IsingModel m({-1.0}, {}, 0);
  PtConfig cfg;
  cfg.betas = {0.001, 50.0};
  cfg.rng_seed = 1;
  cfg.n_sweeps = 200;
  ParallelTempering p(m, cfg);
  p.run();
  // the cold replica ends at the ground state
  EXPECT_EQ(p.replica_state(1)[0], 1);
}

TEST(PtSolve, RandomInitHitsMlOnSmallQpsk) {
  int hits = 0;
  const int runs = 200;
  for (int k = 0; k < runs; ++k) {
    auto inst = generate_instance(ChannelSpec::iid(12), 4, 4, Constellation(Modulation::QPSK), 20.0,
                                  static_cast<std::uint64_t>(k));
    const IsingModel m = build_ml_ising(inst);
    const auto r = pt_solve(m, config_for(m, static_cast<std::uint64_t>(k)));
    const double ml = brute_force_ml(inst).obj;
    hits += std::abs(r.best_sample().energy - ml) <= 1e-6 * std::max(1.0, ml);
  }
  EXPECT_GE(hits, 190) << hits << " of " << runs;
}
