#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "annealing.hpp"
#include "errors.hpp"
#include "estimators.hpp"
#include "io.hpp"
#include "model_fit.hpp"
#include "policy.hpp"
#include "scenario.hpp"

// Run configuration. The defaults are the desk-scale toy cut-in scenario: a
// deterministic follower, three subject-speed levels, and utility references
// scaled to the sub-meter conflict the rare event describes.

namespace brsim {

using json = nlohmann::json;

struct EstimateSettings {
  std::size_t n = 100000;
  bool per_sample_csv = false;
  bool oracle = false;                        // also report the exhaustive grid value
  std::optional<RationalityVector> lambda;    // BR proposal
  std::optional<CETheta> theta;               // CE proposal
};

struct FitSettings {
  MarginalSpec space{};
  FitBounds bounds{};
  int max_iterations = 100;
  std::size_t speed_levels = 8;
  std::size_t extra_starts = 0;
  std::size_t min_observations = 200;
  std::size_t qq_points = 100;
  bool sensor_ttc = false;

  FitOptions options() const {
    FitOptions o;
    o.space = space;
    o.bounds = bounds;
    o.max_iterations = max_iterations;
    o.speed_levels = speed_levels;
    o.extra_starts = extra_starts;
    o.min_observations = min_observations;
    return o;
  }
};

struct SynthBand {
  MixedPolicyParams params{};
  std::size_t n = 10000;
  SpeedDistribution speeds{};
};

struct GenerateSettings {
  std::size_t n = 1000;
  SpeedBand band = SpeedBand::Med;
  std::vector<BehaviorCategory> categories;  // empty: no filter
};

struct TrajectorySettings {
  double v_s = 20.0;
  double v_lc = 15.0;
  double gap = 5.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Scene scene{};
  MixedPolicyParams nominal{};
  EstimateSettings estimate{};
  SAConfig sa{};
  CEParams ce{};
  bool ce_init_from_nominal = true;
  FitSettings fit{};
  std::array<SynthBand, 3> synth{};
  GenerateSettings generate{};
  TrajectorySettings trajectory{};
  std::string output_dir = "out";
};

inline Scene toy_scene() {
  Scene s;
  s.sim.follower.sigma_imperfection = 0.0;
  s.sim.subject_speeds = SpeedDistribution({10.0, 20.0, 30.0}, {1.0, 1.0, 1.0});
  s.event = RareEventSpec{0.01, 0.1};
  s.utility = UtilitySpec{1.0, 0.5, 50.0};
  s.grid = GridSpec::for_speed_limit(s.sim.v_limit, 128);
  return s;
}

inline MixedPolicyParams toy_nominal() { return {{5.0, 5.0, 3.0}, {-5.0, -5.0, -3.0}, {0.8, 0.8, 0.5}}; }

inline std::array<SynthBand, 3> default_synth_bands() {
  return {{
      {{{4.0, 3.0, 2.0}, {-3.0, -4.0, -2.0}, {0.7, 0.6, 0.5}}, 10000,
       SpeedDistribution({6.0, 8.0, 10.0, 12.0, 14.0}, {1.0, 1.0, 1.0, 1.0, 1.0})},
      {{{6.0, 4.0, 3.0}, {-2.0, -3.0, -3.0}, {0.8, 0.7, 0.6}}, 10000,
       SpeedDistribution({16.0, 18.0, 20.0, 22.0, 24.0}, {1.0, 1.0, 1.0, 1.0, 1.0})},
      {{{8.0, 5.0, 4.0}, {-2.0, -2.0, -4.0}, {0.85, 0.75, 0.7}}, 10000,
       SpeedDistribution({26.0, 28.0, 30.0, 32.0, 34.0}, {1.0, 1.0, 1.0, 1.0, 1.0})},
  }};
}

inline RunConfig default_run_config() {
  RunConfig c;
  c.scene = toy_scene();
  c.nominal = toy_nominal();
  c.synth = default_synth_bands();
  return c;
}

// ---------------------------------------------------------------------------
// JSON encoding

namespace config_detail {

using io::json_double;
using io::json_number;

inline json arr3(const std::array<double, 3>& a) { return json::array({a[0], a[1], a[2]}); }

inline std::array<double, 3> get_arr3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected an array of 3 numbers, got " + j.dump());
  return {json_number(j[0]), json_number(j[1]), json_number(j[2])};
}

inline json doubles(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(json_double(x));
  return a;
}

inline std::vector<double> get_doubles(const json& j) {
  if (!j.is_array()) throw ConfigError("expected an array of numbers, got " + j.dump());
  std::vector<double> v;
  for (const json& x : j) v.push_back(json_number(x));
  return v;
}

template <typename T>
T get_uint(const json& j) {
  const bool ok = j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
  if (!ok) throw ConfigError("expected a nonnegative integer, got " + j.dump());
  return static_cast<T>(j.get<std::uint64_t>());
}

inline bool get_bool(const json& j) {
  if (!j.is_boolean()) throw ConfigError("expected true or false, got " + j.dump());
  return j.get<bool>();
}

inline std::string get_string(const json& j) {
  if (!j.is_string()) throw ConfigError("expected a string, got " + j.dump());
  return j.get<std::string>();
}

}  // namespace config_detail

inline json to_json_value(const MixedPolicyParams& p) {
  using namespace config_detail;
  return {{"lambda_plus", arr3(p.lambda_plus)}, {"lambda_minus", arr3(p.lambda_minus)}, {"alpha", arr3(p.alpha)}};
}

inline MixedPolicyParams mixed_params_from_json(const json& j) {
  using namespace config_detail;
  MixedPolicyParams p{get_arr3(j.at("lambda_plus")), get_arr3(j.at("lambda_minus")), get_arr3(j.at("alpha"))};
  try {
    p.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return p;
}

inline json to_json_value(const RationalityVector& lam) { return config_detail::arr3(lam.lambdas()); }

inline RationalityVector lambda_from_json(const json& j) {
  const auto a = config_detail::get_arr3(j);
  try {
    return {a[0], a[1], a[2]};
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

inline json to_json_value(const CETheta& t) {
  return {{"v_mean", t.v_mean}, {"v_std", t.v_std}, {"gap_mean", t.gap_mean}, {"gap_std", t.gap_std}};
}

inline CETheta theta_from_json(const json& j) {
  using config_detail::json_number;
  const CETheta t{json_number(j.at("v_mean")), json_number(j.at("v_std")), json_number(j.at("gap_mean")),
                  json_number(j.at("gap_std"))};
  if (!std::isfinite(t.v_mean) || !std::isfinite(t.gap_mean) || !(t.v_std > 0.0) || !(t.gap_std > 0.0) ||
      !std::isfinite(t.v_std) || !std::isfinite(t.gap_std)) {
    throw ConfigError("CE theta needs finite means and finite positive stddevs");
  }
  return t;
}

inline json to_json_value(const SpeedDistribution& d) {
  return {{"speeds", config_detail::doubles(d.speeds())}, {"weights", config_detail::doubles(d.probs())}};
}

inline SpeedDistribution speeds_from_json(const json& j) {
  return {config_detail::get_doubles(j.at("speeds")), config_detail::get_doubles(j.at("weights"))};
}

inline json to_json_value(const GridSpec& g) {
  return {{"v_min", g.v_min}, {"v_max", g.v_max}, {"gap_min", g.gap_min},
          {"gap_max", g.gap_max}, {"nv", g.nv},     {"ngap", g.ngap}};
}

inline GridSpec grid_from_json(const json& j) {
  using namespace config_detail;
  return {json_number(j.at("v_min")), json_number(j.at("v_max")), json_number(j.at("gap_min")),
          json_number(j.at("gap_max")), get_uint<std::size_t>(j.at("nv")), get_uint<std::size_t>(j.at("ngap"))};
}

inline json to_json_value(const UtilitySpec& u) {
  return {{"gap_star", u.gap_star}, {"ttc_star", u.ttc_star}, {"v_star", u.v_star}};
}

inline UtilitySpec utility_from_json(const json& j) {
  using config_detail::json_number;
  return {json_number(j.at("gap_star")), json_number(j.at("ttc_star")), json_number(j.at("v_star"))};
}

inline json to_json_value(const RunConfig& c) {
  using namespace config_detail;
  const ScenarioConfig& sim = c.scene.sim;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["scenario"] = {{"dt", sim.dt},
                   {"horizon", sim.horizon},
                   {"lane_change_duration", sim.lane_change_duration},
                   {"v_limit", sim.v_limit},
                   {"vehicle_length", sim.vehicle_length},
                   {"follower",
                    {{"a_max", sim.follower.a_max},
                     {"b_max", sim.follower.b_max},
                     {"tau_react", sim.follower.tau_react},
                     {"sigma", sim.follower.sigma_imperfection}}},
                   {"subject_speeds", to_json_value(sim.subject_speeds)}};
  j["event"] = {{"gap_threshold", c.scene.event.gap_threshold}, {"stopped_speed", c.scene.event.stopped_speed}};
  j["utility"] = to_json_value(c.scene.utility);
  j["grid"] = to_json_value(c.scene.grid);
  j["nominal"] = to_json_value(c.nominal);
  j["estimate"] = {{"n", c.estimate.n},
                   {"per_sample_csv", c.estimate.per_sample_csv},
                   {"oracle", c.estimate.oracle},
                   {"lambda", c.estimate.lambda ? to_json_value(*c.estimate.lambda) : json(nullptr)},
                   {"theta", c.estimate.theta ? to_json_value(*c.estimate.theta) : json(nullptr)}};
  j["sa"] = {{"outer_iters", c.sa.outer_iters},
             {"inner_iters", c.sa.inner_iters},
             {"n_rollouts", c.sa.n_rollouts},
             {"t_out_init", c.sa.t_out_init},
             {"t_inn_init", c.sa.t_inn_init},
             {"cooling_factor", c.sa.cooling_factor},
             {"lambda_max", c.sa.lambda_max},
             {"exploration_floor", c.sa.exploration_floor},
             {"literal_acceptance", c.sa.literal_acceptance}};
  j["ce"] = {{"initial", to_json_value(c.ce.initial)},
             {"init_from_nominal", c.ce_init_from_nominal},
             {"elite_fraction", c.ce.elite_fraction},
             {"max_iters", c.ce.max_iters},
             {"smoothing", c.ce.smoothing},
             {"samples_per_iter", c.ce.samples_per_iter},
             {"stall_limit", c.ce.stall_limit},
             {"min_std_cells", c.ce.min_std_cells}};
  j["fit"] = {{"utility", to_json_value(c.fit.space.utility)},
              {"grid", to_json_value(c.fit.space.grid)},
              {"ttc_cap", c.fit.space.ttc_cap},
              {"ttc_slices", c.fit.space.ttc_slices},
              {"lambda_min", c.fit.bounds.lambda_min},
              {"lambda_max", c.fit.bounds.lambda_max},
              {"max_iterations", c.fit.max_iterations},
              {"speed_levels", c.fit.speed_levels},
              {"extra_starts", c.fit.extra_starts},
              {"min_observations", c.fit.min_observations},
              {"qq_points", c.fit.qq_points},
              {"sensor_ttc", c.fit.sensor_ttc}};
  json bands;
  for (SpeedBand b : kAllBands) {
    const SynthBand& sb = c.synth[static_cast<std::size_t>(b)];
    bands[to_string(b)] = {{"params", to_json_value(sb.params)}, {"n", sb.n}, {"speeds", to_json_value(sb.speeds)}};
  }
  j["synth"] = bands;
  json cats = json::array();
  for (BehaviorCategory cat : c.generate.categories) cats.push_back(to_string(cat));
  j["generate"] = {{"n", c.generate.n}, {"band", to_string(c.generate.band)}, {"categories", cats}};
  j["trajectory"] = {{"v_s", c.trajectory.v_s}, {"v_lc", c.trajectory.v_lc}, {"gap", c.trajectory.gap}};
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  using namespace config_detail;
  RunConfig c;
  try {
    c.seed = get_uint<std::uint64_t>(j.at("seed"));
    c.output_dir = get_string(j.at("output_dir"));
    const json& s = j.at("scenario");
    ScenarioConfig& sim = c.scene.sim;
    sim.dt = json_number(s.at("dt"));
    sim.horizon = json_number(s.at("horizon"));
    sim.lane_change_duration = json_number(s.at("lane_change_duration"));
    sim.v_limit = json_number(s.at("v_limit"));
    sim.vehicle_length = json_number(s.at("vehicle_length"));
    const json& f = s.at("follower");
    sim.follower = {json_number(f.at("a_max")), json_number(f.at("b_max")), json_number(f.at("tau_react")),
                    json_number(f.at("sigma"))};
    sim.subject_speeds = speeds_from_json(s.at("subject_speeds"));
    c.scene.event = {json_number(j.at("event").at("gap_threshold")), json_number(j.at("event").at("stopped_speed"))};
    c.scene.utility = utility_from_json(j.at("utility"));
    c.scene.grid = grid_from_json(j.at("grid"));
    c.nominal = mixed_params_from_json(j.at("nominal"));

    const json& e = j.at("estimate");
    c.estimate.n = get_uint<std::size_t>(e.at("n"));
    c.estimate.per_sample_csv = get_bool(e.at("per_sample_csv"));
    c.estimate.oracle = get_bool(e.at("oracle"));
    if (!e.at("lambda").is_null()) c.estimate.lambda = lambda_from_json(e.at("lambda"));
    if (!e.at("theta").is_null()) c.estimate.theta = theta_from_json(e.at("theta"));

    const json& sa = j.at("sa");
    c.sa.outer_iters = get_uint<std::size_t>(sa.at("outer_iters"));
    c.sa.inner_iters = get_uint<std::size_t>(sa.at("inner_iters"));
    c.sa.n_rollouts = get_uint<std::size_t>(sa.at("n_rollouts"));
    c.sa.t_out_init = json_number(sa.at("t_out_init"));
    c.sa.t_inn_init = json_number(sa.at("t_inn_init"));
    c.sa.cooling_factor = json_number(sa.at("cooling_factor"));
    c.sa.lambda_max = json_number(sa.at("lambda_max"));
    c.sa.exploration_floor = json_number(sa.at("exploration_floor"));
    c.sa.literal_acceptance = get_bool(sa.at("literal_acceptance"));
    c.sa.seed = c.seed;

    const json& ce = j.at("ce");
    c.ce.initial = theta_from_json(ce.at("initial"));
    c.ce_init_from_nominal = get_bool(ce.at("init_from_nominal"));
    c.ce.elite_fraction = json_number(ce.at("elite_fraction"));
    c.ce.max_iters = get_uint<std::size_t>(ce.at("max_iters"));
    c.ce.smoothing = json_number(ce.at("smoothing"));
    c.ce.samples_per_iter = get_uint<std::size_t>(ce.at("samples_per_iter"));
    c.ce.stall_limit = get_uint<std::size_t>(ce.at("stall_limit"));
    c.ce.min_std_cells = json_number(ce.at("min_std_cells"));

    const json& fit = j.at("fit");
    c.fit.space.utility = utility_from_json(fit.at("utility"));
    c.fit.space.grid = grid_from_json(fit.at("grid"));
    c.fit.space.ttc_cap = json_number(fit.at("ttc_cap"));
    c.fit.space.ttc_slices = get_uint<std::size_t>(fit.at("ttc_slices"));
    c.fit.bounds = {json_number(fit.at("lambda_min")), json_number(fit.at("lambda_max"))};
    c.fit.max_iterations = static_cast<int>(get_uint<std::uint32_t>(fit.at("max_iterations")));
    c.fit.speed_levels = get_uint<std::size_t>(fit.at("speed_levels"));
    c.fit.extra_starts = get_uint<std::size_t>(fit.at("extra_starts"));
    c.fit.min_observations = get_uint<std::size_t>(fit.at("min_observations"));
    c.fit.qq_points = get_uint<std::size_t>(fit.at("qq_points"));
    c.fit.sensor_ttc = get_bool(fit.at("sensor_ttc"));

    for (SpeedBand b : kAllBands) {
      const json& sb = j.at("synth").at(to_string(b));
      c.synth[static_cast<std::size_t>(b)] = {mixed_params_from_json(sb.at("params")), get_uint<std::size_t>(sb.at("n")),
                                              speeds_from_json(sb.at("speeds"))};
    }

    const json& g = j.at("generate");
    c.generate.n = get_uint<std::size_t>(g.at("n"));
    const auto band = parse_band(get_string(g.at("band")));
    if (!band) throw ConfigError("generate.band must be LOW, MED or HIGH");
    c.generate.band = *band;
    if (!g.at("categories").is_array()) throw ConfigError("generate.categories must be an array");
    for (const json& cat : g.at("categories")) {
      const auto parsed = parse_category(get_string(cat));
      if (!parsed) throw ConfigError("unknown behavior category " + cat.dump());
      c.generate.categories.push_back(*parsed);
    }

    const json& t = j.at("trajectory");
    c.trajectory = {json_number(t.at("v_s")), json_number(t.at("v_lc")), json_number(t.at("gap"))};
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  } catch (const DomainError& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }

  try {
    c.scene.validate();
    c.sa.validate();
    c.ce.validate();
    c.fit.options().validate();
  } catch (const DomainError& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  if (c.estimate.n == 0) throw ConfigError("config: estimate.n must be >= 1");
  return c;
}

/// Recursively overlays `patch` onto `base`. Keys absent from the base are rejected so
/// that typos cannot pass silently; null-valued slots accept any value.
inline void merge_config(json& base, const json& patch, const std::string& path = "") {
  if (!patch.is_object()) throw ConfigError("config" + (path.empty() ? "" : " at " + path) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key);
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_config(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

/// Applies "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& base, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &base;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key: " + path);
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

/// Defaults, then the config file (if any), then dotted overrides, decoded and validated.
/// Returns the typed config and its fully resolved JSON form.
inline std::pair<RunConfig, json> resolve_config(const std::optional<json>& file,
                                                 const std::vector<std::string>& overrides) {
  json j = to_json_value(default_run_config());
  if (file) merge_config(j, *file);
  for (const std::string& o : overrides) apply_override(j, o);
  RunConfig c = run_config_from_json(j);
  return {c, to_json_value(c)};
}

}  // namespace brsim
