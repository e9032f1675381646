#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "annealing.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "estimators.hpp"
#include "io.hpp"
#include "model_fit.hpp"
#include "rng.hpp"
#include "scenario.hpp"

// Command bodies behind the command-line tool. Each is a pure function of the
// resolved config and its input files and returns the files to write, in order.

namespace brsim::cmd {

using json = nlohmann::json;
using Outputs = std::vector<std::pair<std::string, std::string>>;

struct Inputs {
  std::optional<std::string> data;      // observations CSV
  std::optional<std::string> params;    // fit or synth JSON with per-band params
  std::optional<std::string> proposal;  // optimize artifact
};

namespace detail {

inline json envelope(const std::string& command, const RunConfig& cfg, const json& echo) {
  return {{"command", command}, {"seed", cfg.seed}, {"config", echo}};
}

inline json input_record(const std::string& path, const std::string& content) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(brsim::detail::fnv1a(content)));
  return {{"path", path}, {"fnv1a", hex}};
}

inline json read_json_file(const std::string& path, json& inputs, const std::string& role) {
  const std::string text = io::read_file(path);
  inputs[role] = input_record(path, text);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError(path + ": not valid JSON");
  return j;
}

inline ObservationSet read_data(const Inputs& in, const RunConfig& cfg, json& inputs) {
  if (!in.data) throw ConfigError("this command needs --data PATH (observations CSV)");
  const std::string text = io::read_file(*in.data);
  inputs["data"] = input_record(*in.data, text);
  try {
    return io::parse_observations(text, cfg.fit.sensor_ttc);
  } catch (const DataError& e) {
    throw DataError(*in.data + ": " + e.what());
  }
}

struct BandModel {
  MixedPolicyParams params;
  SpeedDistribution speeds;
};

inline std::optional<BandModel> band_model(const json& artifact, SpeedBand band, const std::string& path) {
  try {
    const json& bands = artifact.at("bands");
    if (!bands.contains(to_string(band))) return std::nullopt;
    const json& b = bands.at(to_string(band));
    if (!b.contains("params")) return std::nullopt;
    return BandModel{mixed_params_from_json(b.at("params")), speeds_from_json(b.at("speeds"))};
  } catch (const json::exception& e) {
    throw DataError(path + ": missing per-band params (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline json fit_json(const FitResult& r) {
  json trace = json::array();
  for (double c : r.cost_trace) trace.push_back(c);
  return {{"params", to_json_value(r.params)}, {"speeds", to_json_value(r.speeds)},
          {"residual_norm", r.residual_norm}, {"iterations", r.iterations},
          {"converged", r.converged},        {"start_index", r.start_index},
          {"n_obs", r.n_obs},                {"cost_trace", trace}};
}

inline json estimate_json(const EstimateResult& r) {
  return {{"p_hat", r.p_hat},
          {"n", r.n},
          {"weight_variance", r.weight_variance},
          {"ci95", r.ci95},
          {"seed", r.seed},
          {"method", to_string(r.method)},
          {"events", r.events},
          {"infeasible", r.infeasible},
          {"event_rate", static_cast<double>(r.events) / static_cast<double>(r.n)}};
}

}  // namespace detail

inline Outputs synth(const RunConfig& cfg, const json& echo) {
  json out = detail::envelope("synth", cfg, echo);
  ObservationSet all;
  json bands;
  for (SpeedBand b : kAllBands) {
    const SynthBand& sb = cfg.synth[static_cast<std::size_t>(b)];
    const ObservationSet obs =
        generate_situations(sb.params, sb.n, b, sb.speeds, derive_seed(cfg.seed, "synth", static_cast<std::size_t>(b)),
                            cfg.fit.space);
    all.records.insert(all.records.end(), obs.records.begin(), obs.records.end());
    bands[to_string(b)] = {{"params", to_json_value(sb.params)}, {"speeds", to_json_value(sb.speeds)}, {"n", sb.n}};
  }
  out["bands"] = bands;
  out["rows"] = all.size();
  return {{"observations.csv", io::observations_csv(all)}, {"synth.json", io::canonical_dump(out)}};
}

inline Outputs estimate(const RunConfig& cfg, const json& echo, const std::string& method, const Inputs& in) {
  json out = detail::envelope("estimate", cfg, echo);
  json inputs = json::object();
  const NominalModel nominal = NominalModel::from_mixed(cfg.scene, cfg.nominal);
  const ResponseFn response = default_response(cfg.scene);

  std::optional<json> artifact;
  if (in.proposal) artifact = detail::read_json_file(*in.proposal, inputs, "proposal");
  const auto artifact_kind = [&]() -> std::string {
    if (!artifact || !artifact->contains("kind") || !(*artifact)["kind"].is_string()) return "";
    return (*artifact)["kind"].get<std::string>();
  };

  io::CsvWriter samples({"index", "speed_index", "cell", "v_s", "v_lc", "gap", "event", "weight"});
  SampleSink sink;
  if (cfg.estimate.per_sample_csv) {
    sink = [&samples](const SampleRecord& r) {
      samples.row(r.index, r.draw.speed_index, r.draw.cell, r.draw.state.v_s, r.draw.action.v_lc, r.draw.action.gap,
                  r.event, r.weight);
    };
  }

  EstimateResult result;
  if (method == "cmc") {
    result = cmc_estimate(nominal, cfg.estimate.n, response, cfg.seed, sink);
    out["proposal"] = {{"name", "nominal"}};
  } else if (method == "is-br") {
    RationalityVector lam;
    if (artifact) {
      if (artifact_kind() != "sa") throw ConfigError(*in.proposal + ": is-br needs an 'optimize --kind sa' artifact");
      lam = lambda_from_json(artifact->at("lambda"));
    } else if (cfg.estimate.lambda) {
      lam = *cfg.estimate.lambda;
    } else {
      throw ConfigError("is-br needs a proposal: pass --proposal optimize_sa.json or set estimate.lambda");
    }
    result = is_estimate(nominal, br_proposal(lam, cfg.scene), cfg.estimate.n, response, cfg.seed,
                         EstimateMethod::IsBr, sink);
    out["proposal"] = {{"name", "bounded-rationality"}, {"lambda", to_json_value(lam)},
                       {"category", to_string(behavior_category_of(lam))}};
  } else if (method == "is-ce") {
    CETheta theta;
    if (artifact) {
      if (artifact_kind() != "ce") throw ConfigError(*in.proposal + ": is-ce needs an 'optimize --kind ce' artifact");
      theta = theta_from_json(artifact->at("theta"));
    } else if (cfg.estimate.theta) {
      theta = *cfg.estimate.theta;
    } else {
      throw ConfigError("is-ce needs a proposal: pass --proposal optimize_ce.json or set estimate.theta");
    }
    result = is_estimate(nominal, ce_proposal(theta, cfg.scene), cfg.estimate.n, response, cfg.seed,
                         EstimateMethod::IsCe, sink);
    out["proposal"] = {{"name", "cross-entropy"}, {"theta", to_json_value(theta)}};
  } else {
    throw ConfigError("unknown estimate method '" + method + "' (cmc, is-ce, is-br)");
  }

  out["result"] = detail::estimate_json(result);
  if (cfg.estimate.oracle) out["oracle_p_epsilon"] = grid_oracle(nominal, response, cfg.seed).p_epsilon;
  out["inputs"] = inputs;
  Outputs files{{"estimate_" + method + ".json", io::canonical_dump(out)}};
  if (cfg.estimate.per_sample_csv) files.emplace_back("samples_" + method + ".csv", samples.str());
  return files;
}

inline Outputs optimize(const RunConfig& cfg, const json& echo, const std::string& kind) {
  json out = detail::envelope("optimize", cfg, echo);
  out["kind"] = kind;
  if (kind == "sa") {
    const SAState st = brsim::optimize(cfg.sa, scene_evaluator(cfg.scene));
    json rates;
    json lambdas;
    for (BehaviorCategory c : kAllCategories) {
      rates[to_string(c)] = st.p_max_per_bid[index_of(c)];
      lambdas[to_string(c)] = to_json_value(st.lambda_max_per_bid[index_of(c)]);
    }
    out["best_bid"] = to_string(st.best_bid);
    out["lambda"] = to_json_value(st.best_lambda());
    out["best_rate"] = st.best_rate();
    out["p_max_per_bid"] = rates;
    out["lambda_max_per_bid"] = lambdas;
    out["budget_exhausted"] = st.budget_exhausted;
    out["evaluations"] = st.trace.size();
    io::CsvWriter trace(
        {"iteration", "phase", "bid", "lambda_gap", "lambda_ttc", "lambda_progress", "rate", "accepted", "temperature"});
    for (const SATraceRow& r : st.trace) {
      trace.row(r.iteration, r.phase, to_string(r.bid), r.lambda.gap(), r.lambda.ttc(), r.lambda.progress(), r.rate,
                r.accepted, r.temperature);
    }
    return {{"optimize_sa.json", io::canonical_dump(out)}, {"sa_trace.csv", trace.str()}};
  }
  if (kind == "ce") {
    const NominalModel nominal = NominalModel::from_mixed(cfg.scene, cfg.nominal);
    CEParams ce = cfg.ce;
    if (cfg.ce_init_from_nominal) ce.initial = nominal_moments(nominal);
    const CEResult r = ce_optimize(nominal, default_response(cfg.scene), ce, cfg.seed);
    out["initial"] = to_json_value(ce.initial);
    out["theta"] = to_json_value(r.theta);
    out["reached_rare_level"] = r.reached_rare_level;
    out["iterations"] = r.trace.size();
    io::CsvWriter trace({"iteration", "level", "elites", "events", "v_mean", "v_std", "gap_mean", "gap_std"});
    for (const CEIteration& it : r.trace) {
      trace.row(it.iteration, it.level, it.elites, it.events, it.theta.v_mean, it.theta.v_std, it.theta.gap_mean,
                it.theta.gap_std);
    }
    return {{"optimize_ce.json", io::canonical_dump(out)}, {"ce_trace.csv", trace.str()}};
  }
  throw ConfigError("unknown optimize kind '" + kind + "' (sa, ce)");
}

inline Outputs fit(const RunConfig& cfg, const json& echo, const Inputs& in) {
  json out = detail::envelope("fit", cfg, echo);
  json inputs = json::object();
  const ObservationSet obs = detail::read_data(in, cfg, inputs);
  const FitOptions opt = cfg.fit.options();
  json bands = json::object();
  for (SpeedBand b : kAllBands) {
    const ObservationSet sub = obs.in_band(b);
    if (sub.size() < opt.min_observations) {
      bands[to_string(b)] = {{"n_obs", sub.size()}, {"skipped", "fewer than min_observations rows"}};
      continue;
    }
    const FitResult r = fit_params(sub, opt, derive_seed(cfg.seed, "fit", static_cast<std::size_t>(b)));
    json entry = detail::fit_json(r);
    const MarginalModel model(r.speeds, opt.space);
    for (Metric m : kFitMetrics) {
      entry["qq_pearson_r"][to_string(m)] = qq_points(sub, model, r.params, m, cfg.fit.qq_points).pearson_r;
    }
    bands[to_string(b)] = entry;
  }
  out["bands"] = bands;
  out["inputs"] = inputs;
  return {{"fit.json", io::canonical_dump(out)}};
}

inline Outputs qq(const RunConfig& cfg, const json& echo, const Inputs& in) {
  json out = detail::envelope("qq", cfg, echo);
  json inputs = json::object();
  const ObservationSet obs = detail::read_data(in, cfg, inputs);
  if (!in.params) throw ConfigError("qq needs --params PATH (fit or synth JSON)");
  const json artifact = detail::read_json_file(*in.params, inputs, "params");
  Outputs files;
  json bands = json::object();
  for (SpeedBand b : kAllBands) {
    const auto bm = detail::band_model(artifact, b, *in.params);
    const ObservationSet sub = obs.in_band(b);
    if (!bm || sub.size() < cfg.fit.qq_points) continue;
    const MarginalModel model(bm->speeds, cfg.fit.space);
    for (Metric m : kFitMetrics) {
      const QQResult r = qq_points(sub, model, bm->params, m, cfg.fit.qq_points);
      const std::string name = "qq_" + to_string(b) + "_" + to_string(m) + ".csv";
      bands[to_string(b)][to_string(m)] = {{"pearson_r", r.pearson_r}, {"csv", name}, {"n_obs", sub.size()}};
      files.emplace_back(name, io::qq_csv(r));
    }
  }
  out["bands"] = bands;
  out["inputs"] = inputs;
  files.insert(files.begin(), {"qq.json", io::canonical_dump(out)});
  return files;
}

inline Outputs generate(const RunConfig& cfg, const json& echo, const Inputs& in) {
  json out = detail::envelope("generate", cfg, echo);
  json inputs = json::object();
  if (!in.params) throw ConfigError("generate needs --params PATH (fit or synth JSON)");
  const json artifact = detail::read_json_file(*in.params, inputs, "params");
  const auto bm = detail::band_model(artifact, cfg.generate.band, *in.params);
  if (!bm) throw DataError(*in.params + ": no params for band " + to_string(cfg.generate.band));
  std::optional<std::vector<BehaviorCategory>> filter;
  if (!cfg.generate.categories.empty()) filter = cfg.generate.categories;
  const ObservationSet obs = generate_situations(bm->params, cfg.generate.n, cfg.generate.band, bm->speeds,
                                                 derive_seed(cfg.seed, "generate"), cfg.fit.space, filter);
  out["rows"] = obs.size();
  out["inputs"] = inputs;
  return {{"situations.csv", io::observations_csv(obs)}, {"generate.json", io::canonical_dump(out)}};
}

inline Outputs trajectory_dump(const RunConfig& cfg, const json& echo) {
  json out = detail::envelope("trajectory-dump", cfg, echo);
  const SubjectState state{cfg.trajectory.v_s};
  const CutInAction action{cfg.trajectory.v_lc, cfg.trajectory.gap};
  const Trajectory t = rollout(state, action, cfg.scene.sim, cfg.seed);
  out["min_gap"] = t.min_gap();
  out["rare_event"] = is_rare_event(t, cfg.scene.event);
  out["severity"] = io::json_double(severity(t, cfg.scene.event));
  out["crossing_index"] = t.crossing_index;
  out["samples"] = t.size();
  return {{"trajectory.csv", io::trajectory_csv(t)}, {"trajectory.json", io::canonical_dump(out)}};
}

}  // namespace brsim::cmd
