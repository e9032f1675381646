#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <ceres/ceres.h>

#include "action_grid.hpp"
#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "scenario.hpp"
#include "utility.hpp"

namespace brsim {

enum class Metric : std::uint8_t { Ttc = 0, Gap = 1 };
inline constexpr std::array<Metric, 2> kFitMetrics{Metric::Ttc, Metric::Gap};

inline std::string to_string(Metric m) { return m == Metric::Ttc ? "ttc" : "gap"; }

inline std::optional<Metric> parse_metric(std::string_view s) {
  if (s == "ttc") return Metric::Ttc;
  if (s == "gap") return Metric::Gap;
  return std::nullopt;
}

enum class SpeedBand : std::uint8_t { Low = 0, Med = 1, High = 2 };
inline constexpr std::array<SpeedBand, 3> kAllBands{SpeedBand::Low, SpeedBand::Med, SpeedBand::High};

inline std::string to_string(SpeedBand b) {
  switch (b) {
    case SpeedBand::Low: return "LOW";
    case SpeedBand::Med: return "MED";
    case SpeedBand::High: return "HIGH";
  }
  return "?";
}

inline std::optional<SpeedBand> parse_band(std::string_view s) {
  for (SpeedBand b : kAllBands) {
    if (s == to_string(b)) return b;
  }
  return std::nullopt;
}

/// LOW: v_s <= 15, MED: 15 < v_s <= 25, HIGH: v_s > 25 (m/s).
inline SpeedBand band_of(double v_s) {
  if (v_s <= 15.0) return SpeedBand::Low;
  if (v_s <= 25.0) return SpeedBand::Med;
  return SpeedBand::High;
}

struct Observation {
  double v_s = 0.0;   // m/s
  double v_lc = 0.0;  // m/s
  double gap = 0.0;   // m
  double ttc = 0.0;   // s, +inf when not closing

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Returns a description of the first violated invariant, if any. With sensor_ttc the
/// ttc column is taken as measured and only checked for sign.
inline std::optional<std::string> observation_error(const Observation& o, bool sensor_ttc = false) {
  if (!std::isfinite(o.v_s) || o.v_s < 0.0) return "v_s must be finite and >= 0";
  if (!std::isfinite(o.v_lc) || o.v_lc < 0.0) return "v_lc must be finite and >= 0";
  if (!std::isfinite(o.gap) || o.gap < 0.0) return "gap must be finite and >= 0";
  if (std::isnan(o.ttc) || o.ttc < 0.0) return "ttc must be >= 0 or inf";
  if (sensor_ttc) return std::nullopt;
  const double expected = ttc_of(SubjectState{o.v_s}, CutInAction{o.v_lc, o.gap});
  if (std::isinf(expected) || std::isinf(o.ttc)) {
    if (std::isinf(expected) != std::isinf(o.ttc)) return "ttc inconsistent with gap / (v_s - v_lc)";
  } else if (std::abs(o.ttc - expected) > 1e-6 * std::max(1.0, expected)) {
    return "ttc inconsistent with gap / (v_s - v_lc)";
  }
  return std::nullopt;
}

struct ObservationSet {
  std::vector<Observation> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  ObservationSet in_band(SpeedBand band) const {
    ObservationSet out;
    for (const Observation& o : records) {
      if (band_of(o.v_s) == band) out.records.push_back(o);
    }
    return out;
  }

  std::vector<double> subject_speeds() const {
    std::vector<double> v;
    v.reserve(records.size());
    for (const Observation& o : records) v.push_back(o.v_s);
    return v;
  }

  /// Metric column; ttc is capped so that non-closing cut-ins stay finite.
  std::vector<double> values(Metric m, double ttc_cap) const {
    std::vector<double> v;
    v.reserve(records.size());
    for (const Observation& o : records) v.push_back(m == Metric::Gap ? o.gap : std::min(o.ttc, ttc_cap));
    return v;
  }
};

/// Empirical distribution with midpoint plotting positions (i - 0.5) / n.
class EmpiricalCdf {
 public:
  explicit EmpiricalCdf(std::vector<double> values) : sorted_(std::move(values)) {
    if (sorted_.size() < 2) throw DataError("EmpiricalCdf: need at least 2 values");
    for (double v : sorted_) {
      if (!std::isfinite(v)) throw DataError("EmpiricalCdf: values must be finite");
    }
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::size_t size() const { return sorted_.size(); }
  const std::vector<double>& sorted() const { return sorted_; }

  /// Right-continuous: fraction of values <= x.
  double operator()(double x) const {
    const auto k = std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin();
    return static_cast<double>(k) / static_cast<double>(sorted_.size());
  }

  double plotting_position(std::size_t i) const {
    return (static_cast<double>(i) + 0.5) / static_cast<double>(sorted_.size());
  }

  /// Linear interpolation between order statistics placed at their plotting positions.
  double quantile(double q) const {
    const double n = static_cast<double>(sorted_.size());
    const double h = q * n - 0.5;
    if (h <= 0.0) return sorted_.front();
    if (h >= n - 1.0) return sorted_.back();
    const auto i = static_cast<std::size_t>(h);
    const double t = h - static_cast<double>(i);
    return sorted_[i] + t * (sorted_[i + 1] - sorted_[i]);
  }

 private:
  std::vector<double> sorted_;
};

/// Continuous, piecewise-linear CDF through (x, F) knots; repeated x encode atoms.
class PiecewiseCdf {
 public:
  PiecewiseCdf() = default;
  PiecewiseCdf(std::vector<double> xs, std::vector<double> fs) : xs_(std::move(xs)), fs_(std::move(fs)) {
    if (xs_.empty() || xs_.size() != fs_.size()) throw DomainError("PiecewiseCdf: need matching non-empty knots");
  }

  const std::vector<double>& xs() const { return xs_; }
  const std::vector<double>& fs() const { return fs_; }

  double operator()(double x) const {
    if (x < xs_.front()) return 0.0;
    if (x >= xs_.back()) return 1.0;
    const auto hi = static_cast<std::size_t>(std::upper_bound(xs_.begin(), xs_.end(), x) - xs_.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - xs_[lo]) / (xs_[hi] - xs_[lo]);
    return fs_[lo] + t * (fs_[hi] - fs_[lo]);
  }

  double quantile(double q) const {
    if (q <= fs_.front()) return xs_.front();
    const auto j = static_cast<std::size_t>(std::lower_bound(fs_.begin(), fs_.end(), q) - fs_.begin());
    if (j >= fs_.size()) return xs_.back();
    const double df = fs_[j] - fs_[j - 1];
    if (!(df > 0.0)) return xs_[j];
    return xs_[j - 1] + (q - fs_[j - 1]) / df * (xs_[j] - xs_[j - 1]);
  }

 private:
  std::vector<double> xs_;
  std::vector<double> fs_;
};

/// Where marginals are computed: utility references, action grid and the ttc cap.
struct MarginalSpec {
  UtilitySpec utility{};
  GridSpec grid = GridSpec::for_speed_limit(30.0, 64);
  double ttc_cap = 30.0;      // s
  std::size_t ttc_slices = 4;  // v-slices per cell for the ttc marginal

  void validate() const {
    utility.validate();
    grid.validate(kMinGridResolution);
    if (!(ttc_cap > 0.0) || !std::isfinite(ttc_cap)) throw ConfigError("MarginalSpec: ttc_cap must be finite and > 0");
    if (ttc_slices < 1) throw ConfigError("MarginalSpec: ttc_slices must be >= 1");
  }
};

/// TTC and GAP marginals of the mixed policy over a subject-speed distribution.
/// Each cell's mass is spread uniformly over the metric range the cell covers, which
/// is the distribution of actions drawn uniformly within their cell.
class MarginalModel {
 public:
  MarginalModel(SpeedDistribution speeds, MarginalSpec spec) : speeds_(std::move(speeds)), spec_(std::move(spec)) {
    spec_.validate();
    const GridSpec& g = spec_.grid;
    for (std::size_t iv = 0; iv < g.nv; ++iv) v_centers_.push_back(g.v_min + (static_cast<double>(iv) + 0.5) * g.v_step());
    for (std::size_t ig = 0; ig < g.ngap; ++ig) {
      gap_centers_.push_back(g.gap_min + (static_cast<double>(ig) + 0.5) * g.gap_step());
    }
    for (double gc : gap_centers_) u_gap_.push_back(utility_gap(gc, spec_.utility));
    for (double vc : v_centers_) u_prog_.push_back(utility_progress(vc, spec_.utility));
    u_ttc_.resize(speeds_.size());
    for (std::size_t s = 0; s < speeds_.size(); ++s) {
      u_ttc_[s].reserve(g.cells());
      for (double vc : v_centers_) {
        for (double gc : gap_centers_) {
          u_ttc_[s].push_back(utility_ttc(ttc_of(SubjectState{speeds_.speed(s)}, CutInAction{vc, gc}), spec_.utility));
        }
      }
    }
    build_ttc_pieces();
  }

  const SpeedDistribution& speeds() const { return speeds_; }
  const MarginalSpec& spec() const { return spec_; }

  /// Normalized cell masses per speed level; identical to mixed_policy_grids on the same grid.
  std::vector<std::vector<double>> cell_masses(const MixedPolicyParams& params) const {
    const GridSpec& g = spec_.grid;
    const double area = g.v_step() * g.gap_step();
    std::vector<double> tg(g.ngap);
    std::vector<double> tp(g.nv);
    for (std::size_t ig = 0; ig < g.ngap; ++ig) tg[ig] = branch_term(u_gap_[ig], params, 0);
    for (std::size_t iv = 0; iv < g.nv; ++iv) tp[iv] = branch_term(u_prog_[iv], params, 2);
    std::vector<std::vector<double>> out(speeds_.size(), std::vector<double>(g.cells()));
    for (std::size_t s = 0; s < speeds_.size(); ++s) {
      double total = 0.0;
      for (std::size_t iv = 0; iv < g.nv; ++iv) {
        for (std::size_t ig = 0; ig < g.ngap; ++ig) {
          const std::size_t c = iv * g.ngap + ig;
          double sum = 0.0;
          sum += tg[ig];
          sum += branch_term(u_ttc_[s][c], params, 1);
          sum += tp[iv];
          out[s][c] = sum / 3.0 * area;
          total += out[s][c];
        }
      }
      if (!(total > 0.0) || !std::isfinite(total)) throw DegenerateGridError("MarginalModel: total mass is zero");
      for (double& m : out[s]) m /= total;
    }
    return out;
  }

  PiecewiseCdf marginal(Metric metric, const MixedPolicyParams& params) const {
    const auto masses = cell_masses(params);
    return metric == Metric::Gap ? gap_cdf(masses) : ttc_cdf(masses);
  }

  std::array<PiecewiseCdf, 2> marginals(const MixedPolicyParams& params) const {
    const auto masses = cell_masses(params);
    return {ttc_cdf(masses), gap_cdf(masses)};
  }

 private:
  // The piece of ttc mass that cell `cell` at speed `speed` puts on [lo, hi].
  struct Piece {
    double lo;
    double hi;
    std::size_t speed;
    std::size_t cell;
    double fraction;
  };
  struct Event {
    double x;
    std::size_t piece;
    int kind;  // 0 atom, 1 start, 2 end
  };

  static double branch_term(double u, const MixedPolicyParams& p, std::size_t i) {
    const double a = p.alpha[i];
    return a * component_density(u, p.lambda_plus[i]) + (1.0 - a) * component_density(u, p.lambda_minus[i]);
  }

  // ttc is linear in gap but convex in v_lc, so every cell is cut into v-slices, each
  // spread uniformly over its own ttc range.
  void build_ttc_pieces() {
    const GridSpec& g = spec_.grid;
    const double cap = spec_.ttc_cap;
    const std::size_t slices = spec_.ttc_slices;
    const double share = 1.0 / static_cast<double>(slices);
    const auto capped = [cap](double gap, double closing) {
      return closing > 0.0 ? std::min(cap, gap / closing) : cap;
    };
    for (std::size_t s = 0; s < speeds_.size(); ++s) {
      const double vs = speeds_.speed(s);
      for (std::size_t iv = 0; iv < g.nv; ++iv) {
        for (std::size_t k = 0; k < slices; ++k) {
          const double v0 = g.v_min + (static_cast<double>(iv) + static_cast<double>(k) * share) * g.v_step();
          const double v1 = v0 + share * g.v_step();
          for (std::size_t ig = 0; ig < g.ngap; ++ig) {
            const double g0 = g.gap_min + static_cast<double>(ig) * g.gap_step();
            const double g1 = g0 + g.gap_step();
            const std::size_t c = iv * g.ngap + ig;
            if (v0 >= vs) {
              pieces_.push_back({cap, cap, s, c, share});
            } else if (v1 > vs) {
              const double open = (v1 - vs) / (v1 - v0);
              pieces_.push_back({cap, cap, s, c, share * open});
              pieces_.push_back({capped(g0, vs - v0), cap, s, c, share * (1.0 - open)});
            } else {
              pieces_.push_back({capped(g0, vs - v0), capped(g1, vs - v1), s, c, share});
            }
          }
        }
      }
    }
    for (std::size_t k = 0; k < pieces_.size(); ++k) {
      const Piece& p = pieces_[k];
      if (p.hi - p.lo <= 1e-12 * std::max(1.0, p.hi)) {
        events_.push_back({p.lo, k, 0});
      } else {
        events_.push_back({p.lo, k, 1});
        events_.push_back({p.hi, k, 2});
      }
    }
    std::stable_sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.x < b.x; });
  }

  PiecewiseCdf gap_cdf(const std::vector<std::vector<double>>& masses) const {
    const GridSpec& g = spec_.grid;
    std::vector<double> per_gap(g.ngap, 0.0);
    for (std::size_t s = 0; s < speeds_.size(); ++s) {
      for (std::size_t c = 0; c < g.cells(); ++c) per_gap[c % g.ngap] += speeds_.prob(s) * masses[s][c];
    }
    std::vector<double> xs{g.gap_min};
    std::vector<double> fs{0.0};
    double f = 0.0;
    for (std::size_t ig = 0; ig < g.ngap; ++ig) {
      f += per_gap[ig];
      xs.push_back(g.gap_min + static_cast<double>(ig + 1) * g.gap_step());
      fs.push_back(f);
    }
    return finish(std::move(xs), std::move(fs));
  }

  PiecewiseCdf ttc_cdf(const std::vector<std::vector<double>>& masses) const {
    std::vector<double> xs;
    std::vector<double> fs;
    xs.reserve(events_.size() + 2);
    fs.reserve(events_.size() + 2);
    double f = 0.0;
    double slope = 0.0;
    double x_prev = events_.front().x;
    std::size_t k = 0;
    while (k < events_.size()) {
      const double x = events_[k].x;
      f += slope * (x - x_prev);
      xs.push_back(x);
      fs.push_back(f);
      double jump = 0.0;
      for (; k < events_.size() && events_[k].x == x; ++k) {
        const Piece& p = pieces_[events_[k].piece];
        const double m = speeds_.prob(p.speed) * masses[p.speed][p.cell] * p.fraction;
        if (events_[k].kind == 0) {
          jump += m;
        } else {
          slope += (events_[k].kind == 1 ? m : -m) / (p.hi - p.lo);
        }
      }
      if (jump > 0.0) {
        f += jump;
        xs.push_back(x);
        fs.push_back(f);
      }
      x_prev = x;
    }
    return finish(std::move(xs), std::move(fs));
  }

  static PiecewiseCdf finish(std::vector<double> xs, std::vector<double> fs) {
    const double total = fs.back();
    if (!(total > 0.0)) throw DegenerateGridError("MarginalModel: marginal has no mass");
    double running = 0.0;
    for (double& f : fs) {
      running = std::max(running, std::min(1.0, f / total));
      f = running;
    }
    fs.back() = 1.0;
    return {std::move(xs), std::move(fs)};
  }

  SpeedDistribution speeds_;
  MarginalSpec spec_;
  std::vector<double> v_centers_;
  std::vector<double> gap_centers_;
  std::vector<double> u_gap_;
  std::vector<double> u_prog_;
  std::vector<std::vector<double>> u_ttc_;
  std::vector<Piece> pieces_;
  std::vector<Event> events_;
};

inline double model_cdf(Metric metric, double x, const MixedPolicyParams& params, const SpeedDistribution& speeds,
                        const MarginalSpec& spec = {}) {
  return MarginalModel(speeds, spec).marginal(metric, params)(x);
}

struct FitBounds {
  double lambda_min = 0.01;  // smallest |lambda| of either branch
  double lambda_max = kLambdaMax;

  void validate() const {
    if (!(lambda_min > 0.0 && lambda_max > lambda_min && lambda_max <= kLambdaMax)) {
      throw ConfigError("FitBounds: need 0 < lambda_min < lambda_max <= LAMBDA_MAX");
    }
  }
  std::array<double, 9> lower() const {
    return {lambda_min, lambda_min, lambda_min, -lambda_max, -lambda_max, -lambda_max, 0.0, 0.0, 0.0};
  }
  std::array<double, 9> upper() const {
    return {lambda_max, lambda_max, lambda_max, -lambda_min, -lambda_min, -lambda_min, 1.0, 1.0, 1.0};
  }
};

inline std::vector<double> default_knots() {
  std::vector<double> k;
  for (int i = 1; i <= 19; ++i) k.push_back(0.05 * i);
  return k;
}

struct FitOptions {
  MarginalSpec space{};
  FitBounds bounds{};
  std::vector<double> knots = default_knots();
  int max_iterations = 100;
  std::size_t speed_levels = 8;
  std::size_t extra_starts = 0;  // random starts on top of the 8 category corners
  std::size_t min_observations = 200;

  void validate() const {
    space.validate();
    bounds.validate();
    if (knots.empty() || max_iterations < 1 || speed_levels < 1) throw ConfigError("FitOptions: empty knots or budget");
    for (double q : knots) {
      if (!(q > 0.0 && q < 1.0)) throw ConfigError("FitOptions: knots must lie in (0, 1)");
    }
  }
};

struct FitResult {
  MixedPolicyParams params{};
  SpeedDistribution speeds{};
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t start_index = 0;
  std::size_t n_obs = 0;
  std::vector<double> cost_trace;  // objective after every accepted step of the winning start
};

namespace detail {

struct QuantileTargets {
  std::array<std::vector<double>, 2> empirical;
  std::array<double, 2> scale{1.0, 1.0};
};

inline QuantileTargets quantile_targets(const ObservationSet& obs, const std::vector<double>& knots, double ttc_cap) {
  QuantileTargets t;
  for (std::size_t m = 0; m < 2; ++m) {
    const EmpiricalCdf ecdf(obs.values(kFitMetrics[m], ttc_cap));
    for (double q : knots) t.empirical[m].push_back(ecdf.quantile(q));
    t.scale[m] = std::max(ecdf.quantile(0.95) - ecdf.quantile(0.05), 1e-6);
  }
  return t;
}

class QuantileResidual {
 public:
  QuantileResidual(const MarginalModel& model, const QuantileTargets& targets, const std::vector<double>& knots,
                   const FitBounds& bounds)
      : model_(model), targets_(targets), knots_(knots), lower_(bounds.lower()), upper_(bounds.upper()) {}

  std::size_t size() const { return 2 * knots_.size(); }

  // Finite-difference probes may step past a bound; evaluation clamps back inside.
  bool operator()(double const* const* parameters, double* residuals) const {
    std::array<double, 9> x{};
    for (std::size_t i = 0; i < 9; ++i) x[i] = std::clamp(parameters[0][i], lower_[i], upper_[i]);
    const auto cdfs = model_.marginals(MixedPolicyParams::from_array(x));
    for (std::size_t m = 0; m < 2; ++m) {
      for (std::size_t k = 0; k < knots_.size(); ++k) {
        residuals[m * knots_.size() + k] = (cdfs[m].quantile(knots_[k]) - targets_.empirical[m][k]) / targets_.scale[m];
      }
    }
    return true;
  }

 private:
  const MarginalModel& model_;
  const QuantileTargets& targets_;
  const std::vector<double>& knots_;
  std::array<double, 9> lower_;
  std::array<double, 9> upper_;
};

inline std::vector<std::array<double, 9>> fit_starts(const FitOptions& opt, std::uint64_t seed) {
  const auto lo = opt.bounds.lower();
  const auto hi = opt.bounds.upper();
  std::vector<std::array<double, 9>> starts;
  for (BehaviorCategory c : kAllCategories) {
    std::array<double, 9> x{5.0, 5.0, 5.0, -5.0, -5.0, -5.0, 0.5, 0.5, 0.5};
    for (std::size_t i = 0; i < 3; ++i) x[6 + i] = signs_of(c)[i] > 0 ? 0.9 : 0.1;
    starts.push_back(x);
  }
  for (std::size_t k = 0; k < opt.extra_starts; ++k) {
    Stream rng(seed, "fit-start", k);
    std::array<double, 9> x{};
    for (std::size_t i = 0; i < 3; ++i) x[i] = rng.uniform(opt.bounds.lambda_min, 20.0);
    for (std::size_t i = 3; i < 6; ++i) x[i] = -rng.uniform(opt.bounds.lambda_min, 20.0);
    for (std::size_t i = 6; i < 9; ++i) x[i] = rng.uniform();
    starts.push_back(x);
  }
  for (auto& x : starts) {
    for (std::size_t i = 0; i < 9; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  }
  return starts;
}

}  // namespace detail

/// Bounded quantile-matching least squares on the TTC and GAP marginals of one speed
/// band, multi-started from the 8 category corners; the lowest final cost wins.
inline FitResult fit_params(const ObservationSet& obs, const FitOptions& opt, std::uint64_t seed) {
  opt.validate();
  if (obs.size() < opt.min_observations) {
    throw DataError("fit_params: need at least " + std::to_string(opt.min_observations) + " observations, got " +
                    std::to_string(obs.size()));
  }
  const SpeedDistribution speeds = SpeedDistribution::empirical(obs.subject_speeds(), opt.speed_levels);
  const MarginalModel model(speeds, opt.space);
  const detail::QuantileTargets targets = detail::quantile_targets(obs, opt.knots, opt.space.ttc_cap);
  const auto lo = opt.bounds.lower();
  const auto hi = opt.bounds.upper();

  FitResult best;
  best.speeds = speeds;
  best.n_obs = obs.size();
  double best_cost = std::numeric_limits<double>::infinity();
  const auto starts = detail::fit_starts(opt, seed);
  for (std::size_t s = 0; s < starts.size(); ++s) {
    std::array<double, 9> x = starts[s];
    auto* residual = new detail::QuantileResidual(model, targets, opt.knots, opt.bounds);
    auto* cost = new ceres::DynamicNumericDiffCostFunction<detail::QuantileResidual, ceres::CENTRAL>(residual);
    cost->AddParameterBlock(9);
    cost->SetNumResiduals(static_cast<int>(residual->size()));

    ceres::Problem problem;
    problem.AddResidualBlock(cost, nullptr, x.data());
    for (int i = 0; i < 9; ++i) {
      problem.SetParameterLowerBound(x.data(), i, lo[static_cast<std::size_t>(i)]);
      problem.SetParameterUpperBound(x.data(), i, hi[static_cast<std::size_t>(i)]);
    }
    ceres::Solver::Options options;
    options.trust_region_strategy_type = ceres::LEVENBERG_MARQUARDT;
    options.linear_solver_type = ceres::DENSE_QR;
    options.max_num_iterations = opt.max_iterations;
    options.num_threads = 1;
    options.logging_type = ceres::SILENT;
    options.minimizer_progress_to_stdout = false;
    ceres::Solver::Summary summary;
    ceres::Solve(options, &problem, &summary);

    if (summary.final_cost < best_cost) {
      best_cost = summary.final_cost;
      best.params = MixedPolicyParams::from_array(x);
      best.residual_norm = std::sqrt(2.0 * summary.final_cost);
      best.iterations = summary.num_successful_steps + summary.num_unsuccessful_steps;
      best.converged = summary.termination_type == ceres::CONVERGENCE;
      best.start_index = s;
      best.cost_trace.clear();
      for (const ceres::IterationSummary& it : summary.iterations) {
        if (it.iteration == 0 || it.step_is_successful) best.cost_trace.push_back(it.cost);
      }
    }
  }
  return best;
}

struct QQResult {
  Metric metric = Metric::Gap;
  std::vector<double> prob_levels;
  std::vector<double> theoretical;
  std::vector<double> empirical;
  double pearson_r = 0.0;
};

inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("pearson_r: need two equal-length samples of size >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Empirical vs model quantiles at levels (i - 0.5) / n_points.
inline QQResult qq_points(const ObservationSet& obs, const MarginalModel& model, const MixedPolicyParams& params,
                          Metric metric, std::size_t n_points) {
  if (n_points < 2 || obs.size() < n_points) throw DataError("qq_points: need 2 <= n_points <= observations");
  const EmpiricalCdf ecdf(obs.values(metric, model.spec().ttc_cap));
  const PiecewiseCdf cdf = model.marginal(metric, params);
  QQResult r;
  r.metric = metric;
  for (std::size_t i = 0; i < n_points; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n_points);
    r.prob_levels.push_back(q);
    r.theoretical.push_back(cdf.quantile(q));
    r.empirical.push_back(ecdf.quantile(q));
  }
  r.pearson_r = pearson_r(r.theoretical, r.empirical);
  return r;
}

inline QQResult qq_points(const ObservationSet& obs, const MixedPolicyParams& params, Metric metric,
                          std::size_t n_points, const MarginalSpec& spec = {}, std::size_t speed_levels = 8) {
  const MarginalModel model(SpeedDistribution::empirical(obs.subject_speeds(), speed_levels), spec);
  return qq_points(obs, model, params, metric, n_points);
}

/// Draws n cut-ins: v_s from `speeds`, the action uniformly within a cell of the mixed
/// policy grid. A category filter keeps only the branches those categories use.
inline ObservationSet generate_situations(const MixedPolicyParams& params, std::size_t n,
                                          const SpeedDistribution& speeds, std::uint64_t seed,
                                          const MarginalSpec& spec = {},
                                          std::optional<std::vector<BehaviorCategory>> filter = std::nullopt) {
  MixedPolicyParams p = params;
  if (filter) p = restrict_to_categories(p, *filter);
  p.validate();
  ObservationSet out;
  if (n == 0) return out;
  const MarginalModel model(speeds, spec);
  const auto masses = model.cell_masses(p);
  std::vector<ActionGrid> grids;
  for (const auto& m : masses) grids.emplace_back(spec.grid, m);
  out.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Stream rng(seed, "situation", i);
    const std::size_t s = speeds.sample_index(rng);
    const CutInAction a = grids[s].jitter(grids[s].sample_cell(rng), rng);
    const SubjectState st{speeds.speed(s)};
    out.records.push_back({st.v_s, a.v_lc, a.gap, ttc_of(st, a)});
  }
  return out;
}

inline ObservationSet generate_situations(const MixedPolicyParams& params, std::size_t n, SpeedBand band,
                                          const SpeedDistribution& band_speeds, std::uint64_t seed,
                                          const MarginalSpec& spec = {},
                                          std::optional<std::vector<BehaviorCategory>> filter = std::nullopt) {
  for (double v : band_speeds.speeds()) {
    if (band_of(v) != band) throw ConfigError("generate_situations: speed level outside band " + to_string(band));
  }
  return generate_situations(params, n, band_speeds, seed, spec, std::move(filter));
}

}  // namespace brsim
