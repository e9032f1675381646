#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "action_grid.hpp"
#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "scenario.hpp"

namespace brsim {

enum class EstimateMethod { Cmc, IsCe, IsBr, Is };

inline std::string to_string(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::Cmc: return "CMC";
    case EstimateMethod::IsCe: return "IS_CE";
    case EstimateMethod::IsBr: return "IS_BR";
    case EstimateMethod::Is: return "IS";
  }
  return "?";
}

struct EstimateResult {
  double p_hat = 0.0;
  std::size_t n = 0;
  double weight_variance = 0.0;  // sample variance of I * w, zeros included
  double ci95 = 0.0;             // half-width
  std::uint64_t seed = 0;
  EstimateMethod method = EstimateMethod::Cmc;
  std::size_t events = 0;
  std::size_t infeasible = 0;
};

/// Samples needed for a relative margin of error `rel_err` at 95% confidence:
/// ceil(1.96 / (rel_err^2 * p)).
inline std::uint64_t required_sample_size(double rel_err, double p) {
  if (!(rel_err > 0.0 && rel_err < 1.0) && rel_err != 1.0) {
    throw DomainError("required_sample_size: rel_err must lie in (0, 1]");
  }
  if (!(p > 0.0 && p < 1.0)) throw DomainError("required_sample_size: p must lie in (0, 1)");
  const double x = 1.96 / (rel_err * rel_err * p);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * x) return static_cast<std::uint64_t>(nearest);
  return static_cast<std::uint64_t>(std::ceil(x));
}

/// One point of the discrete input space: a subject-speed level and an action cell.
struct Draw {
  std::size_t speed_index = 0;
  std::size_t cell = 0;
  SubjectState state{};
  CutInAction action{};
};

/// Nominal input distribution p(g): the scene's subject-speed levels times a
/// per-speed action grid of the nominal driving policy.
class NominalModel {
 public:
  NominalModel(Scene scene, PolicyGrids grids) : scene_(std::move(scene)), grids_(std::move(grids)) {
    if (grids_.size() != scene_.sim.subject_speeds.size()) {
      throw ConfigError("NominalModel: one action grid per subject-speed level required");
    }
  }

  static NominalModel from_mixed(const Scene& scene, const MixedPolicyParams& params) {
    params.validate();
    return {scene, mixed_policy_grids(params, scene)};
  }

  const Scene& scene() const { return scene_; }
  const SpeedDistribution& speeds() const { return scene_.sim.subject_speeds; }
  const PolicyGrids& grids() const { return grids_; }

  Draw make_draw(std::size_t speed_index, std::size_t cell) const {
    return {speed_index, cell, SubjectState{speeds().speed(speed_index)}, grids_[speed_index].center(cell)};
  }

  Draw sample(Stream& rng) const {
    const std::size_t s = speeds().sample_index(rng);
    return make_draw(s, grids_[s].sample_cell(rng));
  }

  double conditional_mass(const Draw& d) const { return grids_[d.speed_index].mass(d.cell); }
  double mass(const Draw& d) const { return speeds().prob(d.speed_index) * conditional_mass(d); }

 private:
  Scene scene_;
  PolicyGrids grids_;
};

/// A proposal draws inputs and reports the likelihood ratio p(g) / q(g) of its draws.
template <typename Q>
concept Proposal = requires(const Q& q, const NominalModel& p, Stream& rng, const Draw& d) {
  { q.sample(p, rng) } -> std::same_as<Draw>;
  { q.likelihood_ratio(p, d) } -> std::convertible_to<double>;
};

/// Proposal over actions only: the subject speed keeps its nominal law and the action
/// comes from a per-speed grid on the same cells as the nominal, so weights are mass ratios.
class GridProposal {
 public:
  GridProposal() = default;
  GridProposal(PolicyGrids grids, std::string name) : grids_(std::move(grids)), name_(std::move(name)) {}

  Draw sample(const NominalModel& p, Stream& rng) const {
    const std::size_t s = p.speeds().sample_index(rng);
    const std::size_t cell = grids_[s].sample_cell(rng);
    return p.make_draw(s, cell);
  }

  double density(const Draw& d) const { return grids_[d.speed_index].mass(d.cell); }

  double likelihood_ratio(const NominalModel& p, const Draw& d) const {
    const double q = density(d);
    if (!(q > 0.0)) throw AbsoluteContinuityError("proposal mass is zero at a sampled event point");
    return p.conditional_mass(d) / q;
  }

  const PolicyGrids& grids() const { return grids_; }
  const std::string& name() const { return name_; }

 private:
  PolicyGrids grids_;
  std::string name_;
};

static_assert(Proposal<GridProposal>);

inline GridProposal nominal_as_proposal(const NominalModel& p) { return {p.grids(), "nominal"}; }

inline GridProposal br_proposal(const RationalityVector& lam, const Scene& scene) {
  return {br_policy_grids(lam, scene), "bounded-rationality"};
}

/// Running mean and variance (Welford). Identical inputs give exactly that mean and zero variance.
class MomentAccumulator {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double sample_variance() const { return n_ < 2 ? 0.0 : m2_ / static_cast<double>(n_ - 1); }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Per-sample audit record.
struct SampleRecord {
  std::size_t index = 0;
  Draw draw{};
  bool event = false;
  double weight = 0.0;  // likelihood ratio, 0 for non-events
};

using SampleSink = std::function<void(const SampleRecord&)>;

namespace detail {

template <typename SampleFn, typename WeightFn>
EstimateResult run_estimator(SampleFn&& sample, WeightFn&& weight, std::size_t n, const ResponseFn& response,
                             std::uint64_t seed, EstimateMethod method, const SampleSink& sink) {
  if (n == 0) throw DomainError("estimator: n must be >= 1");
  MomentAccumulator acc;
  EstimateResult r;
  r.n = n;
  r.seed = seed;
  r.method = method;
  for (std::size_t i = 0; i < n; ++i) {
    Stream rng(seed, "sample", i);
    const Draw d = sample(rng);
    const Outcome out = response(d.state, d.action, rng.bits());
    double w = 0.0;
    if (out.event) {
      w = weight(d);
      ++r.events;
    }
    r.infeasible += out.infeasible ? 1 : 0;
    acc.add(out.event ? w : 0.0);
    if (sink) sink({i, d, out.event, w});
  }
  r.p_hat = acc.mean();
  r.weight_variance = acc.sample_variance();
  return r;
}

}  // namespace detail

/// Crude Monte Carlo: fraction of nominal draws that end in the rare event.
inline EstimateResult cmc_estimate(const NominalModel& nominal, std::size_t n, const ResponseFn& response,
                                   std::uint64_t seed, const SampleSink& sink = {}) {
  EstimateResult r = detail::run_estimator([&](Stream& rng) { return nominal.sample(rng); },
                                           [](const Draw&) { return 1.0; }, n, response, seed,
                                           EstimateMethod::Cmc, sink);
  r.ci95 = 1.96 * std::sqrt(r.p_hat * (1.0 - r.p_hat) / static_cast<double>(n));
  return r;
}

/// Importance sampling: mean of I(G) * p(G) / q(G) over draws G from the proposal.
/// Draw i uses the same stream as CMC draw i, so q = p reproduces CMC exactly.
template <Proposal Q>
EstimateResult is_estimate(const NominalModel& nominal, const Q& proposal, std::size_t n,
                           const ResponseFn& response, std::uint64_t seed,
                           EstimateMethod method = EstimateMethod::Is, const SampleSink& sink = {}) {
  EstimateResult r = detail::run_estimator([&](Stream& rng) { return proposal.sample(nominal, rng); },
                                           [&](const Draw& d) { return proposal.likelihood_ratio(nominal, d); }, n,
                                           response, seed, method, sink);
  r.ci95 = 1.96 * std::sqrt(r.weight_variance / static_cast<double>(n));
  return r;
}

/// Exhaustive evaluation of every (speed level, cell) of the nominal input space.
struct GridOracle {
  double p_epsilon = 0.0;
  std::vector<std::vector<std::uint8_t>> events;  // [speed][cell]
  std::size_t infeasible = 0;
};

/// Exact p_epsilon over the discrete nominal measure. With a deterministic follower the
/// response does not depend on the seed, so this is the value CMC and IS converge to.
inline GridOracle grid_oracle(const NominalModel& nominal, const ResponseFn& response, std::uint64_t seed = 0) {
  GridOracle o;
  o.events.resize(nominal.speeds().size());
  for (std::size_t s = 0; s < nominal.speeds().size(); ++s) {
    const ActionGrid& grid = nominal.grids()[s];
    o.events[s].assign(grid.size(), 0);
    double cond = 0.0;
    for (std::size_t c = 0; c < grid.size(); ++c) {
      const Draw d = nominal.make_draw(s, c);
      const Outcome out = response(d.state, d.action, derive_seed(seed, "oracle", s * grid.size() + c));
      o.infeasible += out.infeasible ? 1 : 0;
      if (!out.event) continue;
      o.events[s][c] = 1;
      cond += grid.mass(c);
    }
    o.p_epsilon += nominal.speeds().prob(s) * cond;
  }
  return o;
}

/// The zero-variance proposal q* = I * p / p_epsilon over the joint (speed, cell) space.
/// On its support the likelihood ratio is exactly p_epsilon.
class OptimalProposal {
 public:
  OptimalProposal(const NominalModel& nominal, const GridOracle& oracle) : p_epsilon_(oracle.p_epsilon) {
    if (!(p_epsilon_ > 0.0)) throw DegenerateGridError("OptimalProposal: event region has zero nominal mass");
    double total = 0.0;
    for (std::size_t s = 0; s < oracle.events.size(); ++s) {
      for (std::size_t c = 0; c < oracle.events[s].size(); ++c) {
        if (!oracle.events[s][c]) continue;
        const double m = nominal.mass(nominal.make_draw(s, c));
        if (!(m > 0.0)) continue;
        total += m;
        support_.push_back({s, c});
        cumulative_.push_back(total);
      }
    }
  }

  Draw sample(const NominalModel& p, Stream& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) -
                                      cumulative_.begin());
    k = std::min(k, support_.size() - 1);
    return p.make_draw(support_[k].first, support_[k].second);
  }

  double likelihood_ratio(const NominalModel&, const Draw&) const { return p_epsilon_; }
  double p_epsilon() const { return p_epsilon_; }

 private:
  double p_epsilon_;
  std::vector<std::pair<std::size_t, std::size_t>> support_;
  std::vector<double> cumulative_;
};

static_assert(Proposal<OptimalProposal>);

// ---------------------------------------------------------------------------
// Cross-entropy baseline: product of normals over (v_lc, gap), truncated to the
// nonnegative action grid, fitted by multilevel likelihood-ratio-weighted moments.

struct CETheta {
  double v_mean = 20.0;
  double v_std = 10.0;
  double gap_mean = 20.0;
  double gap_std = 10.0;

  friend bool operator==(const CETheta&, const CETheta&) = default;
};

struct CEParams {
  CETheta initial{};
  double elite_fraction = 0.1;  // rho in (0, 0.5]
  std::size_t max_iters = 30;
  double smoothing = 0.7;       // beta in (0, 1]
  std::size_t samples_per_iter = 1000;
  std::size_t stall_limit = 3;
  double min_std_cells = 0.5;  // stddev floor, in grid cell widths

  void validate() const {
    if (!(initial.v_std > 0.0) || !(initial.gap_std > 0.0)) throw ConfigError("CEParams: stddev must be > 0");
    if (!(elite_fraction > 0.0 && elite_fraction <= 0.5)) throw ConfigError("CEParams: elite_fraction in (0, 0.5]");
    if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("CEParams: smoothing in (0, 1]");
    if (samples_per_iter < 2) throw ConfigError("CEParams: samples_per_iter must be >= 2");
    if (stall_limit < 1) throw ConfigError("CEParams: stall_limit must be >= 1");
    if (!(min_std_cells > 0.0)) throw ConfigError("CEParams: min_std_cells must be > 0");
  }
};

inline double truncated_normal_product(const CETheta& t, const CutInAction& a) {
  const double zv = (a.v_lc - t.v_mean) / t.v_std;
  const double zg = (a.gap - t.gap_mean) / t.gap_std;
  return std::exp(-0.5 * (zv * zv + zg * zg)) / (t.v_std * t.gap_std);
}

inline GridProposal ce_proposal(const CETheta& theta, const Scene& scene) {
  return {PolicyGrids::build(
              scene.sim.subject_speeds,
              [&](const SubjectState&, const CutInAction& a) { return truncated_normal_product(theta, a); },
              scene.grid),
          "cross-entropy"};
}

/// Moments of the nominal action marginals, a natural starting point for CE.
inline CETheta nominal_moments(const NominalModel& nominal) {
  double mv = 0.0, mg = 0.0, vv = 0.0, vg = 0.0;
  for (std::size_t s = 0; s < nominal.speeds().size(); ++s) {
    const double ps = nominal.speeds().prob(s);
    const ActionGrid& g = nominal.grids()[s];
    mv += ps * g.expectation([](const CutInAction& a) { return a.v_lc; });
    mg += ps * g.expectation([](const CutInAction& a) { return a.gap; });
    vv += ps * g.expectation([](const CutInAction& a) { return a.v_lc * a.v_lc; });
    vg += ps * g.expectation([](const CutInAction& a) { return a.gap * a.gap; });
  }
  return {mv, std::sqrt(std::max(vv - mv * mv, 1e-12)), mg, std::sqrt(std::max(vg - mg * mg, 1e-12))};
}

struct CEIteration {
  std::size_t iteration = 0;
  double level = 0.0;  // elite severity threshold
  std::size_t elites = 0;
  std::size_t events = 0;
  CETheta theta{};     // after the update
};

struct CEResult {
  CETheta theta{};
  std::vector<CEIteration> trace;
  bool reached_rare_level = false;
};

/// Multilevel cross-entropy. Severity is the masked -min gap of each rollout; each
/// iteration raises the elite level to the (1 - rho) sample quantile (never lowering
/// it, capped at the rare-event level) and refits the normals to the likelihood-ratio
/// weighted elites, smoothed by beta.
inline CEResult ce_optimize(const NominalModel& nominal, const ResponseFn& response, const CEParams& ce,
                            std::uint64_t seed) {
  ce.validate();
  const Scene& scene = nominal.scene();
  const double rare_level = -scene.event.gap_threshold;
  const double min_v_std = ce.min_std_cells * scene.grid.v_step();
  const double min_gap_std = ce.min_std_cells * scene.grid.gap_step();
  const std::size_t n = ce.samples_per_iter;

  CEResult result;
  result.theta = ce.initial;
  double level = -kInfinity;
  std::size_t stalled = 0;
  std::vector<Draw> draws(n);
  std::vector<double> sev(n);
  std::vector<double> sorted(n);

  for (std::size_t it = 0; it < ce.max_iters; ++it) {
    const GridProposal q = ce_proposal(result.theta, scene);
    std::size_t events = 0;
    for (std::size_t i = 0; i < n; ++i) {
      Stream rng(seed, "ce-sample", (static_cast<std::uint64_t>(it) << 32) | i);
      draws[i] = q.sample(nominal, rng);
      const Outcome out = response(draws[i].state, draws[i].action, rng.bits());
      sev[i] = out.severity;
      events += out.event ? 1 : 0;
    }
    sorted = sev;
    const auto k = static_cast<std::size_t>(std::ceil((1.0 - ce.elite_fraction) * static_cast<double>(n))) - 1;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double quantile = std::min(sorted[k], rare_level);
    const bool progressed = quantile > level;
    level = std::max(level, quantile);

    double wsum = 0.0, v1 = 0.0, g1 = 0.0;
    std::size_t elites = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(sev[i] >= level)) continue;
      const double w = nominal.conditional_mass(draws[i]) / q.density(draws[i]);
      wsum += w;
      v1 += w * draws[i].action.v_lc;
      g1 += w * draws[i].action.gap;
      ++elites;
    }
    if (elites > 0 && wsum > 0.0) {
      const double mv = v1 / wsum;
      const double mg = g1 / wsum;
      double v2 = 0.0, g2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(sev[i] >= level)) continue;
        const double w = nominal.conditional_mass(draws[i]) / q.density(draws[i]);
        v2 += w * (draws[i].action.v_lc - mv) * (draws[i].action.v_lc - mv);
        g2 += w * (draws[i].action.gap - mg) * (draws[i].action.gap - mg);
      }
      const double sv = std::max(std::sqrt(v2 / wsum), min_v_std);
      const double sg = std::max(std::sqrt(g2 / wsum), min_gap_std);
      const double b = ce.smoothing;
      CETheta& t = result.theta;
      t = {b * mv + (1.0 - b) * t.v_mean, b * sv + (1.0 - b) * t.v_std, b * mg + (1.0 - b) * t.gap_mean,
           b * sg + (1.0 - b) * t.gap_std};
    }
    result.trace.push_back({it, level, elites, events, result.theta});

    if (level >= rare_level) {
      result.reached_rare_level = true;
      break;
    }
    stalled = progressed ? 0 : stalled + 1;
    if (stalled >= ce.stall_limit) {
      throw CEStallError("ce_optimize: elite level stuck at " + std::to_string(level) + " for " +
                         std::to_string(stalled) + " iterations (iteration " + std::to_string(it) +
                         ", theta v=" + std::to_string(result.theta.v_mean) + "+-" +
                         std::to_string(result.theta.v_std) + " gap=" + std::to_string(result.theta.gap_mean) +
                         "+-" + std::to_string(result.theta.gap_std) + ")");
    }
  }
  return result;
}

}  // namespace brsim
