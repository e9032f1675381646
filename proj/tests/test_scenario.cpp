#include <cmath>

#include <gtest/gtest.h>

#include <brsim/scenario.hpp>

using namespace brsim;

namespace {

ScenarioConfig deterministic() {
  ScenarioConfig cfg;
  cfg.follower.sigma_imperfection = 0.0;
  return cfg;
}

}  // namespace

TEST(Krauss, SafeSpeed) {
  const KraussParams p{2.0, 2.0, 1.0, 0.0};
  EXPECT_DOUBLE_EQ(krauss_safe_speed({0.0, 12.0}, {0.0, 15.0}, 12.0 * 1.0, p), 12.0);
  EXPECT_DOUBLE_EQ(krauss_safe_speed({0.0, 0.0}, {0.0, 0.0}, 10.0, p), 10.0);
  EXPECT_DOUBLE_EQ(krauss_safe_speed({0.0, 0.0}, {0.0, 8.0}, 0.0, p), 0.0);
}

TEST(Krauss, StepFollower) {
  const ScenarioConfig cfg = deterministic();
  const VehicleState free = step_follower({0.0, 30.0}, {1000.0, 30.0}, cfg, 0.5);
  EXPECT_DOUBLE_EQ(free.vel, 30.0);
  EXPECT_DOUBLE_EQ(free.pos, 3.0);

  // Leader at 10 m/s, 5 m ahead of a 20 m/s follower: v_safe = 10 + (5 - 10) / (7.5 + 1).
  const VehicleState braking = step_follower({0.0, 20.0}, {9.5, 10.0}, cfg, 0.5);
  EXPECT_NEAR(braking.vel, 10.0 - 5.0 / 8.5, 1e-12);
  EXPECT_LT(braking.vel, 20.0);

  ScenarioConfig noisy = cfg;
  noisy.follower.sigma_imperfection = 0.5;
  EXPECT_NEAR(step_follower({0.0, 30.0}, {1000.0, 30.0}, noisy, 1.0).vel, 30.0 - 0.5 * 2.0 * 0.1, 1e-12);
}

TEST(Rollout, PhaseOneRealizesAction) {
  const ScenarioConfig cfg = deterministic();
  const Trajectory t = rollout({20.0}, {14.0, 7.0}, cfg, 0);
  ASSERT_EQ(t.size(), cfg.steps() + 1);
  const std::size_t k = t.crossing_index;
  EXPECT_EQ(k, 20u);
  EXPECT_NEAR(t.gap_series[k], 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(t.target[k].vel, 14.0);
  EXPECT_DOUBLE_EQ(t.target[0].vel, 20.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(t.gap_series[i], t.target[i].pos - t.subject[i].pos - cfg.vehicle_length, 1e-12);
    if (i > 0) {
      EXPECT_GE(t.subject[i].pos, t.subject[i - 1].pos);
      EXPECT_GE(t.target[i].pos, t.target[i - 1].pos);
    }
    EXPECT_GE(t.subject[i].vel, 0.0);
    EXPECT_LE(t.subject[i].vel, 1.5 * cfg.v_limit);
  }
  EXPECT_LT(t.min_gap(), 7.0);
}

TEST(Rollout, MatchedSpeedsHoldGap) {
  // At the speed limit the follower has no reason to accelerate.
  const Trajectory t = rollout({30.0}, {30.0, 40.0}, deterministic(), 0);
  for (std::size_t i = t.crossing_index; i < t.size(); ++i) EXPECT_NEAR(t.gap_series[i], 40.0, 1e-9);
}

TEST(Rollout, InfeasibleAndDeterministic) {
  EXPECT_THROW(rollout({5.0}, {30.0, 1.0}, deterministic(), 0), InfeasibleScenarioError);
  EXPECT_THROW(rollout({5.0}, {-1.0, 1.0}, deterministic(), 0), DomainError);
  const ScenarioConfig noisy;
  EXPECT_EQ(rollout({25.0}, {12.0, 6.0}, noisy, 99), rollout({25.0}, {12.0, 6.0}, noisy, 99));
  EXPECT_NE(rollout({25.0}, {12.0, 6.0}, noisy, 99), rollout({25.0}, {12.0, 6.0}, noisy, 98));
}

TEST(Rollout, StepSizeConvergence) {
  ScenarioConfig coarse = deterministic();
  ScenarioConfig fine = coarse;
  fine.dt = 0.05;
  const Trajectory a = rollout({25.0}, {20.0, 15.0}, coarse, 0);
  const Trajectory b = rollout({25.0}, {20.0, 15.0}, fine, 0);
  EXPECT_LT(std::abs(a.gap_series.back() - b.gap_series.back()) / b.gap_series.back(), 0.01);
}

TEST(Rollout, SmallerGapNeverIncreasesMinimum) {
  const ScenarioConfig cfg = deterministic();
  double prev = -kInfinity;
  for (double g = 0.0; g <= 30.0; g += 0.5) {
    const double m = rollout({25.0}, {15.0, g}, cfg, 0).min_gap();
    EXPECT_GE(m, prev - 1e-12);
    prev = m;
  }
}

TEST(RareEvent, Predicate) {
  Trajectory t;
  t.times = {0.0, 0.1, 0.2};
  t.subject = {{0.0, 10.0}, {1.0, 10.0}, {2.0, 10.0}};
  t.target = t.subject;
  t.gap_series = {3.0, 2.0, 1.5};
  const RareEventSpec spec{};
  EXPECT_FALSE(is_rare_event(t, spec));
  t.gap_series[1] = 0.005;
  EXPECT_TRUE(is_rare_event(t, spec));
  EXPECT_DOUBLE_EQ(severity(t, spec), -0.005);
  EXPECT_GE(severity(t, spec), -spec.gap_threshold);
  t.subject[1].vel = 0.0;
  EXPECT_FALSE(is_rare_event(t, spec));
  EXPECT_LT(severity(t, spec), -spec.gap_threshold);
}

TEST(RareEvent, BeforeCrossingIgnored) {
  Trajectory t;
  t.times = {0.0, 0.1};
  t.subject = {{0.0, 10.0}, {1.0, 10.0}};
  t.target = t.subject;
  t.gap_series = {0.0, 5.0};
  t.crossing_index = 1;
  EXPECT_FALSE(is_rare_event(t, {}));
}

TEST(Scene, SimulateScene) {
  Scene scene;
  scene.sim = deterministic();
  scene.sim.subject_speeds = SpeedDistribution({20.0}, {1.0});
  scene.utility = UtilitySpec{1.0, 0.5, 50.0};
  // Forced far gap at matched speed.
  const ResponseFn response = default_response(scene);
  const PolicyGrids far = PolicyGrids::build(
      scene.sim.subject_speeds,
      [](const SubjectState&, const CutInAction& a) {
        return std::abs(a.gap - 50.0) < 0.3 && std::abs(a.v_lc - 20.0) < 0.2 ? 1.0 : 0.0;
      },
      scene.grid);
  EXPECT_EQ(simulate_scene(far, 500, scene, 1, response).rate(), 0.0);

  const RationalityVector b1{-50.0, -50.0, 50.0};
  const RationalityVector b7{50.0, 50.0, 50.0};
  const double r1 = simulate_scene(b1, 10000, scene, 4);
  const double r7 = simulate_scene(b7, 10000, scene, 4);
  EXPECT_GT(r1, r7);
  EXPECT_EQ(r1, simulate_scene(b1, 10000, scene, 4));
  EXPECT_THROW(simulate_scene(b1, 0, scene, 4), DomainError);
}

TEST(SpeedDistribution, EmpiricalLevels) {
  const auto d = SpeedDistribution::empirical({10.0, 12.0, 10.0, 14.0}, 8);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_DOUBLE_EQ(d.prob(0), 0.5);
  std::vector<double> many;
  for (int i = 0; i < 100; ++i) many.push_back(10.0 + 0.05 * i);
  EXPECT_LE(SpeedDistribution::empirical(many, 8).size(), 8u);
  EXPECT_THROW(SpeedDistribution({1.0}, {1.0, 2.0}), ConfigError);
}
