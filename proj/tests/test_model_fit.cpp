#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include <brsim/model_fit.hpp>

using namespace brsim;

namespace {

MarginalSpec coarse_space() {
  MarginalSpec s;
  s.grid = GridSpec::for_speed_limit(30.0, 32);
  return s;
}

const MixedPolicyParams kTruth{{6.0, 4.0, 3.0}, {-2.0, -3.0, -3.0}, {0.8, 0.7, 0.6}};
const SpeedDistribution kMed({16.0, 20.0, 24.0}, {1.0, 2.0, 1.0});

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

struct FitFixture {
  ObservationSet obs = generate_situations(kTruth, 3000, SpeedBand::Med, kMed, 21, coarse_space());
  FitOptions opt = [] {
    FitOptions o;
    o.space = coarse_space();
    o.max_iterations = 40;
    return o;
  }();
  FitResult result = fit_params(obs, opt, 1);
};

const FitFixture& fitted() {
  static const FitFixture f;
  return f;
}

}  // namespace

TEST(EmpiricalCdf, Basics) {
  const EmpiricalCdf e({3.0, 1.0, 2.0});
  EXPECT_DOUBLE_EQ(e(2.0), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(e(0.5), 0.0);
  EXPECT_DOUBLE_EQ(e(3.0), 1.0);
  EXPECT_DOUBLE_EQ(e.plotting_position(0), 0.5 / 3.0);
  EXPECT_DOUBLE_EQ(e.quantile(0.5), 2.0);
  EXPECT_DOUBLE_EQ(e.quantile(0.01), 1.0);
  const EmpiricalCdf d({1.0, 2.0, 2.0, 2.0});
  EXPECT_DOUBLE_EQ(d(2.0), 1.0);
  EXPECT_DOUBLE_EQ(d(1.5), 0.25);
  EXPECT_THROW(EmpiricalCdf({1.0}), DataError);
  EXPECT_THROW(EmpiricalCdf({1.0, std::nan("")}), DataError);
}

TEST(PiecewiseCdf, AtomsAndInterpolation) {
  const PiecewiseCdf c({0.0, 1.0, 1.0, 2.0}, {0.0, 0.4, 0.8, 1.0});
  EXPECT_DOUBLE_EQ(c(0.5), 0.2);
  EXPECT_DOUBLE_EQ(c(1.0), 0.8);
  EXPECT_DOUBLE_EQ(c(-1.0), 0.0);
  EXPECT_DOUBLE_EQ(c(5.0), 1.0);
  EXPECT_DOUBLE_EQ(c.quantile(0.2), 0.5);
  EXPECT_DOUBLE_EQ(c.quantile(0.6), 1.0);
  EXPECT_DOUBLE_EQ(c.quantile(0.9), 1.5);
}

TEST(Observation, Invariants) {
  EXPECT_FALSE(observation_error({20.0, 15.0, 10.0, 2.0}).has_value());
  EXPECT_FALSE(observation_error({15.0, 20.0, 10.0, kInfinity}).has_value());
  EXPECT_TRUE(observation_error({20.0, 15.0, 10.0, 3.0}).has_value());
  EXPECT_TRUE(observation_error({20.0, 15.0, 10.0, kInfinity}).has_value());
  EXPECT_FALSE(observation_error({20.0, 15.0, 10.0, 3.0}, true).has_value());
  EXPECT_TRUE(observation_error({20.0, 15.0, -1.0, 3.0}, true).has_value());
  EXPECT_EQ(band_of(15.0), SpeedBand::Low);
  EXPECT_EQ(band_of(15.5), SpeedBand::Med);
  EXPECT_EQ(band_of(25.5), SpeedBand::High);
}

TEST(Marginal, CellMassesMatchPolicyGrid) {
  Scene scene;
  scene.sim.subject_speeds = kMed;
  scene.grid = coarse_space().grid;
  scene.utility = coarse_space().utility;
  const PolicyGrids grids = mixed_policy_grids(kTruth, scene);
  const auto masses = MarginalModel(kMed, coarse_space()).cell_masses(kTruth);
  for (std::size_t s = 0; s < kMed.size(); ++s) {
    for (std::size_t c = 0; c < grids[s].size(); ++c) ASSERT_EQ(masses[s][c], grids[s].mass(c));
  }
}

TEST(Marginal, MonotoneWithLimits) {
  const MarginalModel model(kMed, coarse_space());
  for (Metric m : kFitMetrics) {
    const PiecewiseCdf cdf = model.marginal(m, kTruth);
    EXPECT_EQ(cdf(-1.0), 0.0);
    EXPECT_EQ(cdf(1e9), 1.0);
    double prev = 0.0;
    for (double x = 0.0; x <= 61.0; x += 0.05) {
      const double f = cdf(x);
      EXPECT_GE(f, prev);
      prev = f;
    }
    EXPECT_EQ(model_cdf(m, 1e9, kTruth, kMed, coarse_space()), 1.0);
  }
}

TEST(Marginal, RationalGapPushesMedianUp) {
  const MixedPolicyParams p{{50.0, 1.0, 1.0}, {-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}};
  const PiecewiseCdf gap = MarginalModel(kMed, coarse_space()).marginal(Metric::Gap, p);
  EXPECT_GT(gap.quantile(0.5), coarse_space().utility.gap_star);
}

TEST(Marginal, AgreesWithSampling) {
  const MarginalModel model(kMed, coarse_space());
  const ObservationSet obs = generate_situations(kTruth, 20000, kMed, 4, coarse_space());
  for (Metric m : kFitMetrics) {
    const PiecewiseCdf cdf = model.marginal(m, kTruth);
    const EmpiricalCdf e(obs.values(m, coarse_space().ttc_cap));
    double ks = 0.0;
    for (double x : e.sorted()) ks = std::max(ks, std::abs(e(x) - cdf(x)));
    EXPECT_LT(ks, 0.02) << to_string(m);
  }
}

TEST(Generate, EmptyFilterAndDeterminism) {
  EXPECT_TRUE(generate_situations(kTruth, 0, kMed, 1, coarse_space()).empty());
  const ObservationSet a = generate_situations(kTruth, 500, kMed, 9, coarse_space());
  EXPECT_EQ(a.records, generate_situations(kTruth, 500, kMed, 9, coarse_space()).records);
  for (const Observation& o : a.records) EXPECT_FALSE(observation_error(o).has_value());
  EXPECT_THROW(generate_situations(kTruth, 10, kMed, 1, coarse_space(), std::vector<BehaviorCategory>{}),
               DomainError);
  EXPECT_THROW(generate_situations(kTruth, 10, SpeedBand::Low, kMed, 1, coarse_space()), ConfigError);
}

TEST(Generate, CategoryFilterShiftsDistribution) {
  const ObservationSet all = generate_situations(kTruth, 10000, kMed, 3, coarse_space());
  const ObservationSet b12 = generate_situations(kTruth, 10000, kMed, 3, coarse_space(),
                                                 std::vector{BehaviorCategory::B1, BehaviorCategory::B2});
  std::vector<double> gap_all, gap_f, v_all, v_f;
  for (const Observation& o : all.records) {
    gap_all.push_back(o.gap);
    v_all.push_back(o.v_lc);
  }
  for (const Observation& o : b12.records) {
    gap_f.push_back(o.gap);
    v_f.push_back(o.v_lc);
  }
  EXPECT_LT(median(gap_f), median(gap_all));
  EXPECT_GT(median(v_f), median(v_all));
}

TEST(Fit, RespectsBoundsAndTraceDecreases) {
  const FitResult& r = fitted().result;
  const auto x = r.params.to_array();
  const auto lo = fitted().opt.bounds.lower();
  const auto hi = fitted().opt.bounds.upper();
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_GE(x[i], lo[i]);
    EXPECT_LE(x[i], hi[i]);
  }
  ASSERT_FALSE(r.cost_trace.empty());
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) EXPECT_LE(r.cost_trace[i], r.cost_trace[i - 1]);
  EXPECT_NEAR(r.residual_norm, std::sqrt(2.0 * r.cost_trace.back()), 1e-9);
  EXPECT_EQ(r.n_obs, 3000u);
}

TEST(Fit, RecoversDistribution) {
  const FitFixture& f = fitted();
  const MarginalModel model(kMed, coarse_space());
  for (Metric m : kFitMetrics) {
    const PiecewiseCdf truth = model.marginal(m, kTruth);
    const PiecewiseCdf fit = model.marginal(m, f.result.params);
    std::vector<double> a, b;
    for (double q = 0.01; q < 1.0; q += 0.01) {
      a.push_back(truth.quantile(q));
      b.push_back(fit.quantile(q));
    }
    EXPECT_GE(pearson_r(a, b), 0.99) << to_string(m);
  }
}

TEST(Fit, Deterministic) {
  const FitFixture& f = fitted();
  const FitResult again = fit_params(f.obs, f.opt, 1);
  EXPECT_EQ(again.params, f.result.params);
  EXPECT_EQ(again.cost_trace, f.result.cost_trace);
}

TEST(Fit, TooFewObservations) {
  ObservationSet small = fitted().obs;
  small.records.resize(50);
  EXPECT_THROW(fit_params(small, fitted().opt, 1), DataError);
}

TEST(QQ, SelfSampleBeatsFlippedModel) {
  const ObservationSet obs = generate_situations(kTruth, 10000, kMed, 8, coarse_space());
  const MarginalModel model(kMed, coarse_space());
  MixedPolicyParams flipped = kTruth;
  for (double& a : flipped.alpha) a = 1.0 - a;
  for (Metric m : kFitMetrics) {
    const QQResult self = qq_points(obs, model, kTruth, m, 100);
    const QQResult other = qq_points(obs, model, flipped, m, 100);
    EXPECT_GE(self.pearson_r, 0.99) << to_string(m);
    EXPECT_LT(other.pearson_r, self.pearson_r) << to_string(m);
    EXPECT_TRUE(std::is_sorted(self.theoretical.begin(), self.theoretical.end()));
    EXPECT_TRUE(std::is_sorted(self.empirical.begin(), self.empirical.end()));
    EXPECT_DOUBLE_EQ(self.prob_levels.front(), 0.005);
  }
  EXPECT_THROW(qq_points(obs, model, kTruth, Metric::Gap, 1), DataError);
}

TEST(QQ, PearsonR) {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{2, 4, 6, 8};
  const std::vector<double> z{8, 6, 4, 2};
  EXPECT_DOUBLE_EQ(pearson_r(x, y), 1.0);
  EXPECT_DOUBLE_EQ(pearson_r(x, z), -1.0);
}
