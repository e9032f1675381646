#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

#include "action_grid.hpp"
#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "utility.hpp"

namespace brsim {

struct KraussParams {
  double a_max = 2.0;               // m/s^2
  double b_max = 2.0;               // m/s^2, comfortable deceleration
  double tau_react = 1.0;           // s
  double sigma_imperfection = 0.2;  // in [0, 1]

  void validate() const {
    if (!(a_max > 0.0) || !(b_max > 0.0) || !(tau_react >= 0.0) ||
        !(sigma_imperfection >= 0.0 && sigma_imperfection <= 1.0)) {
      throw ConfigError("KraussParams: need a_max, b_max > 0, tau_react >= 0, sigma in [0, 1]");
    }
  }
};

/// Discrete distribution of the subject speed at maneuver start.
class SpeedDistribution {
 public:
  SpeedDistribution() : SpeedDistribution({20.0}, {1.0}) {}
  SpeedDistribution(std::vector<double> speeds, std::vector<double> weights)
      : speeds_(std::move(speeds)), probs_(std::move(weights)) {
    if (speeds_.empty() || speeds_.size() != probs_.size()) {
      throw ConfigError("SpeedDistribution: need matching, non-empty speed and weight lists");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < speeds_.size(); ++i) {
      if (!(speeds_[i] >= 0.0) || !std::isfinite(speeds_[i]) || !(probs_[i] >= 0.0) || !std::isfinite(probs_[i])) {
        throw ConfigError("SpeedDistribution: speeds and weights must be finite and >= 0");
      }
      total += probs_[i];
    }
    if (!(total > 0.0)) throw ConfigError("SpeedDistribution: weights sum to zero");
    for (double& p : probs_) p /= total;
    cumulative_.resize(probs_.size());
    std::partial_sum(probs_.begin(), probs_.end(), cumulative_.begin());
  }

  /// Histogram of observed speeds with equal-width bins; bin centers become the support.
  static SpeedDistribution histogram(const std::vector<double>& observed, std::size_t bins) {
    if (observed.empty() || bins == 0) throw DataError("SpeedDistribution: empty speed sample");
    const auto [lo_it, hi_it] = std::minmax_element(observed.begin(), observed.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi - lo <= 0.0) return SpeedDistribution({lo}, {1.0});
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    for (double v : observed) {
      auto b = static_cast<std::size_t>((v - lo) / width);
      counts[std::min(b, bins - 1)] += 1.0;
    }
    std::vector<double> centers;
    std::vector<double> weights;
    for (std::size_t b = 0; b < bins; ++b) {
      if (counts[b] == 0.0) continue;
      centers.push_back(lo + (static_cast<double>(b) + 0.5) * width);
      weights.push_back(counts[b]);
    }
    return SpeedDistribution(std::move(centers), std::move(weights));
  }

  /// Exact distinct values when there are at most max_levels of them, else a histogram.
  static SpeedDistribution empirical(std::vector<double> observed, std::size_t max_levels) {
    if (observed.empty() || max_levels == 0) throw DataError("SpeedDistribution: empty speed sample");
    std::sort(observed.begin(), observed.end());
    std::vector<double> levels;
    std::vector<double> counts;
    for (double v : observed) {
      if (levels.empty() || v != levels.back()) {
        if (levels.size() == max_levels) return histogram(observed, max_levels);
        levels.push_back(v);
        counts.push_back(0.0);
      }
      counts.back() += 1.0;
    }
    return SpeedDistribution(std::move(levels), std::move(counts));
  }

  std::size_t size() const { return speeds_.size(); }
  double speed(std::size_t i) const { return speeds_[i]; }
  double prob(std::size_t i) const { return probs_[i]; }
  const std::vector<double>& speeds() const { return speeds_; }
  const std::vector<double>& probs() const { return probs_; }

  std::size_t sample_index(Stream& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min(static_cast<std::size_t>(it - cumulative_.begin()), speeds_.size() - 1);
  }

 private:
  std::vector<double> speeds_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

struct ScenarioConfig {
  double dt = 0.1;                    // s
  double horizon = 5.0;               // s, from maneuver start
  double lane_change_duration = 2.0;  // s, maneuver start to lane-boundary crossing
  double v_limit = 30.0;              // m/s
  double vehicle_length = 4.5;        // m
  KraussParams follower{};
  SpeedDistribution subject_speeds{};

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }
  std::size_t crossing_step() const { return static_cast<std::size_t>(std::llround(lane_change_duration / dt)); }

  void validate() const {
    if (!(dt > 0.0) || !(lane_change_duration > 0.0) || !(horizon >= lane_change_duration) || !(v_limit > 0.0) ||
        !(vehicle_length >= 0.0)) {
      throw ConfigError("ScenarioConfig: need dt > 0 and horizon >= lane_change_duration > 0");
    }
    const double k = lane_change_duration / dt;
    if (std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, k)) {
      throw ConfigError("ScenarioConfig: lane_change_duration must be a multiple of dt");
    }
    follower.validate();
  }
};

struct VehicleState {
  double pos = 0.0;  // m, front bumper
  double vel = 0.0;  // m/s

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<VehicleState> subject;
  std::vector<VehicleState> target;
  std::vector<double> gap_series;
  // First sample with the target in the subject's lane; earlier gaps are lateral-lane offsets.
  std::size_t crossing_index = 0;

  std::size_t size() const { return times.size(); }
  double min_gap() const {
    return *std::min_element(gap_series.begin() + static_cast<std::ptrdiff_t>(crossing_index), gap_series.end());
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct RareEventSpec {
  double gap_threshold = 0.01;  // m
  double stopped_speed = 0.1;   // m/s

  void validate() const {
    if (!(gap_threshold >= 0.0) || !(stopped_speed >= 0.0)) throw ConfigError("RareEventSpec: thresholds must be >= 0");
  }
};

/// Collision-free speed bound of the Krauss car-following model, floored at zero.
inline double krauss_safe_speed(const VehicleState& leader, const VehicleState& follower, double gap,
                                const KraussParams& params) {
  const double denom = (leader.vel + follower.vel) / (2.0 * params.b_max) + params.tau_react;
  if (!(denom > 0.0)) return gap > 0.0 ? kInfinity : std::max(0.0, leader.vel);
  return std::max(0.0, leader.vel + (gap - leader.vel * params.tau_react) / denom);
}

/// One follower update. `xi` in [0, 1) drives the stochastic slowdown.
inline VehicleState step_follower(const VehicleState& subject, const VehicleState& target,
                                  const ScenarioConfig& cfg, double xi) {
  const KraussParams& p = cfg.follower;
  const double gap = target.pos - subject.pos - cfg.vehicle_length;
  const double v_safe = krauss_safe_speed(target, subject, gap, p);
  const double v_des = std::min({cfg.v_limit, subject.vel + p.a_max * cfg.dt, v_safe});
  const double v_next = std::max(0.0, v_des - p.sigma_imperfection * p.a_max * cfg.dt * xi);
  return {subject.pos + 0.5 * cfg.dt * (subject.vel + v_next), v_next};
}

/// Cut-in rollout. Before the crossing the subject holds v_s while the target ramps
/// linearly from v_s to v_lc, placed so that the gap equals action.gap exactly at the
/// crossing. Afterwards the target holds v_lc and the subject runs the Krauss follower.
inline Trajectory rollout(const SubjectState& state, const CutInAction& action, const ScenarioConfig& cfg,
                          std::uint64_t seed) {
  if (!(state.v_s >= 0.0) || !std::isfinite(state.v_s) || !(action.v_lc >= 0.0) || !std::isfinite(action.v_lc) ||
      !(action.gap >= 0.0) || !std::isfinite(action.gap)) {
    throw DomainError("rollout: speeds and gap must be finite and >= 0");
  }
  const double t_cross = cfg.lane_change_duration;
  const double v0 = state.v_s;
  const double initial_gap = action.gap + 0.5 * t_cross * (v0 - action.v_lc);
  if (initial_gap < 0.0) throw InfeasibleScenarioError("rollout: cut-in requires a negative initial gap");

  const std::size_t n = cfg.steps();
  const std::size_t k_cross = cfg.crossing_step();
  Trajectory traj;
  traj.crossing_index = k_cross;
  traj.times.reserve(n + 1);
  traj.subject.reserve(n + 1);
  traj.target.reserve(n + 1);
  traj.gap_series.reserve(n + 1);

  const double L = cfg.vehicle_length;
  const double accel = (action.v_lc - v0) / t_cross;
  Stream rng(seed, "follower");
  VehicleState subject{0.0, v0};
  VehicleState target{initial_gap + L, v0};
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    if (k < k_cross) {
      subject = {v0 * t, v0};
      target = {initial_gap + L + v0 * t + 0.5 * accel * t * t, v0 + accel * t};
    } else if (k == k_cross) {
      subject = {v0 * t_cross, v0};
      target = {subject.pos + L + action.gap, action.v_lc};
    } else {
      subject = step_follower(subject, target, cfg, rng.uniform());
      target = {target.pos + action.v_lc * cfg.dt, action.v_lc};
    }
    traj.times.push_back(t);
    traj.subject.push_back(subject);
    traj.target.push_back(target);
    traj.gap_series.push_back(target.pos - subject.pos - L);
  }
  return traj;
}

/// Largest value of the masked performance function over the in-lane part of the
/// trajectory: -gap while the subject moves, -inf while it is stopped. The rare event
/// is severity >= -gap_threshold.
inline double severity(const Trajectory& traj, const RareEventSpec& spec) {
  double worst = -kInfinity;
  for (std::size_t k = traj.crossing_index; k < traj.size(); ++k) {
    if (traj.subject[k].vel > spec.stopped_speed) worst = std::max(worst, -traj.gap_series[k]);
  }
  return worst;
}

inline bool is_rare_event(const Trajectory& traj, const RareEventSpec& spec) {
  for (std::size_t k = traj.crossing_index; k < traj.size(); ++k) {
    if (traj.gap_series[k] <= spec.gap_threshold && traj.subject[k].vel > spec.stopped_speed) return true;
  }
  return false;
}

/// Everything needed to evaluate a driving policy on the cut-in scenario.
struct Scene {
  ScenarioConfig sim{};
  RareEventSpec event{};
  UtilitySpec utility{};
  GridSpec grid = GridSpec::for_speed_limit(30.0);

  void validate() const {
    sim.validate();
    event.validate();
    utility.validate();
    grid.validate(kMinGridResolution);
  }
};

/// Outcome of one simulated input: the event indicator and the continuous severity.
struct Outcome {
  bool event = false;
  double severity = -kInfinity;
  bool infeasible = false;
};

/// Default system response: rollout plus rare-event check. Infeasible geometries are non-events.
inline Outcome evaluate_input(const SubjectState& state, const CutInAction& action, const Scene& scene,
                              std::uint64_t seed) {
  try {
    const Trajectory traj = rollout(state, action, scene.sim, seed);
    return {is_rare_event(traj, scene.event), severity(traj, scene.event), false};
  } catch (const InfeasibleScenarioError&) {
    return {false, -kInfinity, true};
  }
}

/// System response used by estimators and optimizers: (state, action, seed) -> Outcome.
using ResponseFn = std::function<Outcome(const SubjectState&, const CutInAction&, std::uint64_t)>;

inline ResponseFn default_response(const Scene& scene) {
  return [scene](const SubjectState& s, const CutInAction& a, std::uint64_t seed) {
    return evaluate_input(s, a, scene, seed);
  };
}

/// One action grid per subject-speed level.
class PolicyGrids {
 public:
  PolicyGrids() = default;
  explicit PolicyGrids(std::vector<ActionGrid> grids) : grids_(std::move(grids)) {}

  template <typename DensityFn>
  static PolicyGrids build(const SpeedDistribution& speeds, DensityFn&& density_fn, const GridSpec& spec) {
    std::vector<ActionGrid> grids;
    grids.reserve(speeds.size());
    for (std::size_t i = 0; i < speeds.size(); ++i) {
      grids.push_back(build_action_grid(SubjectState{speeds.speed(i)}, density_fn, spec));
    }
    return PolicyGrids(std::move(grids));
  }

  const ActionGrid& operator[](std::size_t speed_index) const { return grids_[speed_index]; }
  std::size_t size() const { return grids_.size(); }

 private:
  std::vector<ActionGrid> grids_;
};

inline PolicyGrids br_policy_grids(const RationalityVector& lam, const Scene& scene) {
  return PolicyGrids::build(
      scene.sim.subject_speeds,
      [&](const SubjectState& s, const CutInAction& a) { return mixture_density(s, a, lam, scene.utility); },
      scene.grid);
}

inline PolicyGrids mixed_policy_grids(const MixedPolicyParams& params, const Scene& scene) {
  return PolicyGrids::build(
      scene.sim.subject_speeds,
      [&](const SubjectState& s, const CutInAction& a) { return mixed_density(s, a, params, scene.utility); },
      scene.grid);
}

struct SceneStats {
  std::size_t n = 0;
  std::size_t events = 0;
  std::size_t infeasible = 0;

  double rate() const { return n == 0 ? 0.0 : static_cast<double>(events) / static_cast<double>(n); }
};

/// Simulates n cut-ins with the target driven by `grids`. Each rollout i draws from its
/// own stream derived from (seed, i), so the count is independent of evaluation order.
inline SceneStats simulate_scene(const PolicyGrids& grids, std::size_t n, const Scene& scene, std::uint64_t seed,
                                 const ResponseFn& response) {
  if (n == 0) throw DomainError("simulate_scene: n must be >= 1");
  SceneStats stats;
  stats.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    Stream rng(seed, "scene", i);
    const std::size_t s = scene.sim.subject_speeds.sample_index(rng);
    const CutInAction action = grids[s].center(grids[s].sample_cell(rng));
    const Outcome out = response(SubjectState{scene.sim.subject_speeds.speed(s)}, action, rng.bits());
    stats.events += out.event ? 1 : 0;
    stats.infeasible += out.infeasible ? 1 : 0;
  }
  return stats;
}

inline SceneStats simulate_scene(const RationalityVector& lam, std::size_t n, const Scene& scene, std::uint64_t seed,
                                 const ResponseFn& response) {
  return simulate_scene(br_policy_grids(lam, scene), n, scene, seed, response);
}

/// Rare-event rate of the policy lam over n rollouts.
inline double simulate_scene(const RationalityVector& lam, std::size_t n, const Scene& scene, std::uint64_t seed) {
  return simulate_scene(lam, n, scene, seed, default_response(scene)).rate();
}

}  // namespace brsim
