#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include <brsim/annealing.hpp>

using namespace brsim;

namespace {

// Rate depends only on the category: B1 best, B5 second.
SceneEvaluator category_evaluator() {
  return [](const RationalityVector& lam, std::size_t, std::uint64_t) {
    switch (behavior_category_of(lam)) {
      case BehaviorCategory::B1: return 0.3 + 0.001 * std::abs(lam.gap()) / kLambdaMax;
      case BehaviorCategory::B5: return 0.1;
      default: return 0.0;
    }
  };
}

}  // namespace

TEST(InitLambda, OnePerCategory) {
  const auto init = init_lambda(17);
  std::set<BehaviorCategory> seen;
  for (std::size_t b = 0; b < kNumCategories; ++b) {
    EXPECT_EQ(behavior_category_of(init[b]), kAllCategories[b]);
    seen.insert(behavior_category_of(init[b]));
  }
  EXPECT_EQ(seen.size(), 8u);
  const auto& b3 = init[index_of(BehaviorCategory::B3)];
  EXPECT_GT(b3.gap(), 0.0);
  EXPECT_GT(b3.ttc(), 0.0);
  EXPECT_LT(b3.progress(), 0.0);
  EXPECT_EQ(init, init_lambda(17));
}

TEST(WeightedBid, Uniform) {
  for (const double r : {0.0, 0.4}) {
    std::array<double, kNumCategories> rates{};
    rates.fill(r);
    std::array<int, kNumCategories> counts{};
    Stream rng(1, "test", static_cast<std::uint64_t>(r * 10));
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[index_of(weighted_sample_bid(rates, rng))];
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - n / 8.0) * (c - n / 8.0) / (n / 8.0);
    EXPECT_LT(chi2, 24.32);  // 0.999 quantile, 7 degrees of freedom
  }
}

TEST(WeightedBid, Dominant) {
  std::array<double, kNumCategories> rates{};
  rates[3] = 1.0;
  Stream rng(2, "test");
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) hits += weighted_sample_bid(rates, rng) == BehaviorCategory::B4;
  const double p = 1.001 / 1.008;
  EXPECT_NEAR(p, 0.9930556, 1e-7);
  EXPECT_NEAR(static_cast<double>(hits) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
  rates[0] = -0.1;
  EXPECT_THROW(weighted_sample_bid(rates, rng), DomainError);
}

TEST(Accept, Metropolis) {
  Stream rng(3, "test");
  EXPECT_TRUE(sa_accept(0.5, 0.4, 1e-9, rng));
  int accepted = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) accepted += sa_accept(0.3, 0.4, 0.1, rng);
  EXPECT_NEAR(static_cast<double>(accepted) / n, std::exp(-1.0), 0.02);
  int cold = 0;
  for (int i = 0; i < n; ++i) cold += sa_accept(0.3, 0.4, 1e-4, rng);
  EXPECT_EQ(cold, 0);
  EXPECT_THROW(sa_accept(0.3, 0.4, 0.0, rng), DomainError);
}

TEST(Optimize, FindsBestCategory) {
  SAConfig cfg;
  cfg.outer_iters = 20;
  cfg.inner_iters = 5;
  cfg.seed = 11;
  const SAState st = optimize(cfg, category_evaluator());
  EXPECT_EQ(st.best_bid, BehaviorCategory::B1);
  for (std::size_t b = 0; b < kNumCategories; ++b) {
    EXPECT_EQ(behavior_category_of(st.lambda_max_per_bid[b]), kAllCategories[b]);
  }
  const SAState again = optimize(cfg, category_evaluator());
  ASSERT_EQ(st.trace.size(), again.trace.size());
  for (std::size_t i = 0; i < st.trace.size(); ++i) {
    EXPECT_EQ(st.trace[i].lambda, again.trace[i].lambda);
    EXPECT_EQ(st.trace[i].rate, again.trace[i].rate);
    EXPECT_EQ(st.trace[i].accepted, again.trace[i].accepted);
  }
}

TEST(Optimize, RecordNeverDecreases) {
  SAConfig cfg;
  cfg.outer_iters = 15;
  cfg.inner_iters = 4;
  cfg.seed = 5;
  const SAState st = optimize(cfg, category_evaluator());
  std::array<double, kNumCategories> running{};
  running.fill(-1.0);
  for (const SATraceRow& row : st.trace) {
    const auto b = index_of(row.bid);
    running[b] = std::max(running[b], row.rate);
  }
  for (std::size_t b = 0; b < kNumCategories; ++b) EXPECT_EQ(st.p_max_per_bid[b], running[b]);
  double best_init = 0.0;
  for (std::size_t i = 0; i < kNumCategories; ++i) best_init = std::max(best_init, st.trace[i].rate);
  EXPECT_GE(st.best_rate(), best_init);
}

TEST(Optimize, NoInnerIterationsReturnsBestInitial) {
  SAConfig cfg;
  cfg.inner_iters = 0;
  cfg.seed = 8;
  const SAState st = optimize(cfg, category_evaluator());
  ASSERT_EQ(st.trace.size(), kNumCategories);
  EXPECT_EQ(st.best_bid, BehaviorCategory::B1);
  EXPECT_EQ(st.best_lambda(), init_lambda(8)[0]);
}

TEST(Optimize, TargetStopsEarly) {
  SAConfig cfg;
  cfg.seed = 2;
  const SAState st = optimize(cfg, category_evaluator(), 0.25);
  EXPECT_FALSE(st.budget_exhausted);
  EXPECT_EQ(st.trace.size(), kNumCategories);
}

TEST(Optimize, LiteralAcceptanceRuns) {
  SAConfig cfg;
  cfg.literal_acceptance = true;
  cfg.outer_iters = 10;
  cfg.seed = 4;
  const SAState st = optimize(cfg, category_evaluator());
  EXPECT_EQ(st.best_bid, BehaviorCategory::B1);
}

TEST(Optimize, BeatsRandomSearchOnScene) {
  Scene scene;
  scene.sim.follower.sigma_imperfection = 0.0;
  scene.sim.subject_speeds = SpeedDistribution({10.0, 20.0, 30.0}, {1.0, 1.0, 1.0});
  scene.utility = UtilitySpec{1.0, 0.5, 50.0};
  scene.grid = GridSpec::for_speed_limit(30.0, 32);
  SAConfig cfg;
  cfg.outer_iters = 8;
  cfg.inner_iters = 4;
  cfg.n_rollouts = 200;
  cfg.seed = 3;
  const SAState st = optimize(cfg, scene_evaluator(scene));

  std::vector<double> random_rates;
  for (std::uint64_t k = 0; k < 50; ++k) {
    Stream rng(k, "random-search");
    const RationalityVector lam{rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100)};
    random_rates.push_back(simulate_scene(lam, 1000, scene, 77));
  }
  std::nth_element(random_rates.begin(), random_rates.begin() + 25, random_rates.end());
  EXPECT_GE(simulate_scene(st.best_lambda(), 1000, scene, 77), random_rates[25]);
}
