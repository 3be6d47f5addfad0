#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tandemscale/offline.hpp"
#include "tandemscale/policies.hpp"

using namespace tandemscale;

namespace {
const PowerFunction kSquare(1.0, 2.0);
}

TEST(ClosedFormLb, Examples) {
  EXPECT_DOUBLE_EQ(closed_form_lb(1, 2, kSquare), 4.0);
  EXPECT_DOUBLE_EQ(closed_form_lb(0, 5, kSquare), 0.0);
  EXPECT_NEAR(closed_form_lb(10, 3, PowerFunction(1.0, 3.0)), 30.0 * 3.0 * std::pow(0.5, 2.0 / 3.0), 1e-9);
}

TEST(CompetitiveBound, SquareIsEighteen) {
  EXPECT_DOUBLE_EQ(competitive_bound(kSquare), 18.0);
}

TEST(EnhancedOpt, SingleJob) {
  EXPECT_NEAR(enhanced_opt(gen_batch(1, 0.0, 1), kSquare).cost, 2.0, 1e-9);
  auto two = enhanced_opt(gen_batch(1, 0.0, 2), kSquare);
  EXPECT_NEAR(two.cost, 2.0 * std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(two.finish[0], std::sqrt(2.0), 1e-6);
}

TEST(EnhancedOpt, Empty) {
  auto s = enhanced_opt(Trace{{}, 4}, kSquare);
  EXPECT_EQ(s.size(), 0u);
  EXPECT_EQ(s.cost, 0.0);
}

TEST(EnhancedOpt, MatchesGridSearch) {
  struct Fixture {
    std::vector<double> a;
    int K;
  };
  const std::vector<Fixture> fixtures = {
      {{0.0}, 1},           {{0.0}, 2},           {{0.7}, 3},
      {{0.0, 0.0}, 1},      {{0.0, 0.5}, 2},      {{0.0, 2.5}, 1},
      {{0.0, 0.0, 0.0}, 1}, {{0.0, 0.3, 0.9}, 2}, {{0.0, 0.0, 1.0}, 3},
  };
  for (const auto& fx : fixtures) {
    const double top = fx.a.back() + 4.0;
    const double grid = oracle::grid_opt_refined(fx.a, 1.0, 2.0, fx.K, top);
    const double cd = enhanced_opt(Trace{fx.a, fx.K}, kSquare).cost;
    EXPECT_NEAR(cd, grid, 1e-2) << "n=" << fx.a.size() << " K=" << fx.K;
    EXPECT_LE(cd, grid + 1e-9);
  }
}

TEST(EnhancedOpt, MatchesSeparableBatchOptimum) {
  for (double alpha : {1.5, 2.0, 3.0}) {
    PowerFunction pf(1.0, alpha);
    for (std::size_t n : {1u, 5u, 20u, 50u}) {
      for (int K : {1, 2, 8}) {
        const double expect = oracle::batch_opt_e(n, 1.0, alpha, K);
        EXPECT_NEAR(enhanced_opt(gen_batch(n, 0.0, K), pf).cost, expect, 1e-6 * expect)
            << "alpha " << alpha << " n " << n << " K " << K;
      }
    }
  }
}

TEST(EnhancedOpt, ScheduleIsConsistent) {
  const Trace trace = gen_poisson_count(2.0, 30, 4, 3);
  const auto s = enhanced_opt(trace, kSquare);
  for (std::size_t j = 0; j < s.size(); ++j) {
    EXPECT_GE(s.start[j], s.arrivals[j]);
    if (j > 0) EXPECT_GE(s.start[j], s.finish[j - 1]);
    EXPECT_GT(s.finish[j], s.start[j]);
  }
  EXPECT_NEAR(s.cost, oracle::opt_e_cost(trace.arrivals, s.finish, 1.0, 2.0, 3), 1e-9 * s.cost);
}

TEST(EnhancedOpt, BeatsHandSchedules) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> speed(0.3, 3.0);
  for (int rep = 0; rep < 40; ++rep) {
    const Trace trace = oracle::random_trace(rng, 12);
    const double best = enhanced_opt(trace, kSquare).cost;
    // FIFO at a random constant speed per job.
    std::vector<double> f(trace.size());
    double prev = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
      prev = std::max(prev, trace.arrivals[j]) + 1.0 / speed(rng);
      f[j] = prev;
    }
    EXPECT_LE(best, oracle::opt_e_cost(trace.arrivals, f, 1.0, 2.0, trace.servers) + 1e-9);
  }
}

TEST(EnhancedOpt, BothBoundsBelowProposedRun) {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 40; ++rep) {
    const Trace trace = oracle::random_trace(rng, 25);
    const double alg = cost(simulate(trace, ProposedPolicy(kSquare))).total;
    EXPECT_LE(enhanced_opt(trace, kSquare).cost, alg);
    EXPECT_LE(closed_form_lb(trace.size(), trace.servers, kSquare), alg);
  }
}

TEST(EnhancedOpt, DoublingServersCostsMore) {
  for (std::size_t n : {1u, 4u, 15u}) {
    for (int K : {1, 2, 4}) {
      const Trace a = gen_poisson_count(1.0, n, 3, K);
      Trace b = a;
      b.servers = 2 * K;
      EXPECT_GT(enhanced_opt(b, kSquare).cost, enhanced_opt(a, kSquare).cost);
    }
  }
}

TEST(EnhancedOpt, RespectsCap) {
  // Uncapped, the first of 20 batch jobs would run near sqrt(20).
  PowerFunction tight(1.0, 2.0, 1.05);
  const auto batch = enhanced_opt(gen_batch(20, 0.0, 1), tight);
  for (std::size_t j = 0; j < batch.size(); ++j) EXPECT_LE(batch.speed(j), 1.05 * (1.0 + 1e-9));
  EXPECT_GT(batch.cost, enhanced_opt(gen_batch(20, 0.0, 1), kSquare).cost);
}

TEST(EnhancedOpt, SnapshotFollowsSchedule) {
  const auto s = enhanced_opt(gen_batch(2, 0.0, 1), kSquare);
  auto start = s.at(0.0);
  EXPECT_EQ(start.count, 2);
  EXPECT_NEAR(start.head_remaining, 1.0, 1e-12);
  auto mid = s.at(0.5 * s.finish[0]);
  EXPECT_NEAR(mid.head_remaining, 0.5, 1e-9);
  EXPECT_EQ(s.at(s.finish[0], Side::Before).count, 2);
  EXPECT_EQ(s.at(s.finish[0], Side::After).count, 1);
  EXPECT_EQ(s.at(s.finish[1] + 1.0).count, 0);
}

TEST(Ratios, Examples) {
  const Trace one2 = gen_batch(1, 0.0, 2);
  auto r = empirical_ratios(one2, kSquare, 3.0 * std::sqrt(2.0));
  EXPECT_NEAR(*r.vs_opt_e, 1.5, 1e-8);
  EXPECT_NEAR(*r.vs_closed_form, 3.0 * std::sqrt(2.0) / 4.0, 1e-12);
  const Trace one1 = gen_batch(1, 0.0, 1);
  r = empirical_ratios(one1, kSquare, 3.0 / std::sqrt(2.0));
  EXPECT_NEAR(*r.vs_opt_e, 3.0 / std::sqrt(2.0) / 2.0, 1e-8);
  r = empirical_ratios(Trace{{}, 2}, kSquare, 0.0);
  EXPECT_FALSE(r.vs_opt_e.has_value());
  EXPECT_FALSE(r.vs_closed_form.has_value());
  nlohmann::json j = r;
  EXPECT_TRUE(j.at("vs_opt_e").is_null());
}

TEST(Ratios, MismatchedScheduleRejected) {
  const auto s = enhanced_opt(gen_batch(2, 0.0, 1), kSquare);
  EXPECT_THROW(empirical_ratios(gen_batch(3, 0.0, 1), kSquare, 1.0, s), std::invalid_argument);
}

TEST(OptJson, Export) {
  auto j = schedule_to_json(enhanced_opt(gen_batch(2, 0.0, 2), kSquare));
  EXPECT_EQ(j.at("jobs").size(), 2u);
  EXPECT_GT(j.at("cost").get<double>(), 0.0);
}
