#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include <brsim/commands.hpp>
#include <brsim/config.hpp>
#include <brsim/io.hpp>

using namespace brsim;

TEST(Format, SeventeenDigits) {
  EXPECT_EQ(io::format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(io::format_double(2.0), "2");
  EXPECT_EQ(io::format_double(1e-20), "9.9999999999999995e-21");
  EXPECT_EQ(io::format_double(kInfinity), "inf");
  EXPECT_EQ(io::format_double(-kInfinity), "-inf");
  EXPECT_EQ(io::format_double(std::nan("")), "nan");
  for (double v : {0.1, 1.0 / 3.0, 123456.789, 6.02e23, -2.5e-300}) {
    EXPECT_EQ(std::stod(io::format_double(v)), v);
  }
}

TEST(Canonical, SortedAndStable) {
  json j;
  j["zeta"] = 1;
  j["alpha"] = {{"b", 0.5}, {"a", json::array({1, 2})}};
  j["inf"] = kInfinity;
  j["empty"] = json::object();
  const std::string s = io::canonical_dump(j);
  EXPECT_EQ(s,
            "{\n"
            "  \"alpha\": {\n"
            "    \"a\": [\n"
            "      1,\n"
            "      2\n"
            "    ],\n"
            "    \"b\": 0.5\n"
            "  },\n"
            "  \"empty\": {},\n"
            "  \"inf\": \"inf\",\n"
            "  \"zeta\": 1\n"
            "}\n");
  EXPECT_EQ(io::json_number(json::parse(s)["inf"]), kInfinity);
  EXPECT_THROW(io::json_number(json("x")), ConfigError);
}

TEST(Csv, ObservationsRoundTrip) {
  ObservationSet obs;
  obs.records = {{20.0, 15.0, 10.0, 2.0}, {15.0, 20.0, 0.1, kInfinity}, {1.0 / 3.0, 0.0, 7.0, 21.0}};
  const std::string text = io::observations_csv(obs);
  EXPECT_EQ(text.substr(0, 17), "v_s,v_lc,gap,ttc\n");
  EXPECT_EQ(io::parse_observations(text).records, obs.records);
  std::string crlf;
  for (char c : text) {
    if (c == '\n') crlf += '\r';
    crlf += c;
  }
  EXPECT_EQ(io::parse_observations(crlf).records, obs.records);
}

TEST(Csv, RejectsBadRowsWithLineNumbers) {
  const std::string text =
      "v_s,v_lc,gap,ttc\n"
      "20,15,10,2\n"
      "20,15,10\n"
      "20,15,-1,2\n"
      "20,15,10,9\n"
      "a,b,c,d\n"
      "20,15,10,2,7\n";
  try {
    io::parse_observations(text);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("5 malformed"), std::string::npos) << msg;
    for (const char* line : {"line 3", "line 4", "line 5", "line 6", "line 7"}) {
      EXPECT_NE(msg.find(line), std::string::npos) << line;
    }
    EXPECT_EQ(msg.find("line 2:"), std::string::npos);
  }
  EXPECT_THROW(io::parse_observations("v_s,gap,v_lc,ttc\n1,2,3,4\n"), DataError);
  EXPECT_THROW(io::parse_observations(""), DataError);
  EXPECT_NO_THROW(io::parse_observations("v_s,v_lc,gap,ttc\n20,15,10,9\n", true));
}

TEST(Config, DefaultsRoundTrip) {
  const auto [cfg, echo] = resolve_config(std::nullopt, {});
  EXPECT_EQ(cfg.seed, 0u);
  EXPECT_EQ(cfg.scene.sim.follower.sigma_imperfection, 0.0);
  EXPECT_EQ(cfg.nominal, toy_nominal());
  const RunConfig again = run_config_from_json(json::parse(io::canonical_dump(echo)));
  EXPECT_EQ(io::canonical_dump(to_json_value(again)), io::canonical_dump(echo));
}

TEST(Config, FileAndOverrides) {
  const json file = {{"seed", 7}, {"sa", {{"outer_iters", 3}}}, {"utility", {{"v_star", 40.0}}}};
  const auto [cfg, echo] =
      resolve_config(file, {"sa.inner_iters=2", "generate.categories=[\"B1\",\"B2\"]", "output_dir=run1",
                            "estimate.lambda=[-3, -4, 5]"});
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.sa.seed, 7u);
  EXPECT_EQ(cfg.sa.outer_iters, 3u);
  EXPECT_EQ(cfg.sa.inner_iters, 2u);
  EXPECT_EQ(cfg.scene.utility.v_star, 40.0);
  EXPECT_EQ(cfg.scene.utility.gap_star, 1.0);
  EXPECT_EQ(cfg.output_dir, "run1");
  ASSERT_EQ(cfg.generate.categories.size(), 2u);
  ASSERT_TRUE(cfg.estimate.lambda.has_value());
  EXPECT_EQ(behavior_category_of(*cfg.estimate.lambda), BehaviorCategory::B1);
  EXPECT_EQ(echo["sa"]["inner_iters"], 2);
}

TEST(Config, Errors) {
  EXPECT_THROW(resolve_config(json{{"nope", 1}}, {}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"sa.nope=1"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"missing_equals"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"sa.outer_iters=-1"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"scenario.dt=0"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"generate.band=FAST"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"nominal.alpha=[2,0,0]"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"ce.elite_fraction=0.9"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"estimate.lambda=[1,1]"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"estimate.theta={\"v_mean\":1,\"v_std\":0,\"gap_mean\":1,\"gap_std\":1}"}),
               ConfigError);
}

namespace {

RunConfig quick(const std::vector<std::string>& extra = {}) {
  std::vector<std::string> o{"grid.nv=24", "grid.ngap=24", "estimate.n=300", "sa.outer_iters=2",
                             "sa.inner_iters=2", "sa.n_rollouts=50", "ce.samples_per_iter=200"};
  o.insert(o.end(), extra.begin(), extra.end());
  return resolve_config(std::nullopt, o).first;
}

}  // namespace

TEST(Commands, EstimateNeedsProposal) {
  const RunConfig cfg = quick();
  const json echo = to_json_value(cfg);
  EXPECT_THROW(cmd::estimate(cfg, echo, "is-br", {}), ConfigError);
  EXPECT_THROW(cmd::estimate(cfg, echo, "is-ce", {}), ConfigError);
  EXPECT_THROW(cmd::estimate(cfg, echo, "mc", {}), ConfigError);
  const auto files = cmd::estimate(cfg, echo, "cmc", {});
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].first, "estimate_cmc.json");
  const json out = json::parse(files[0].second);
  EXPECT_EQ(out["config"], json::parse(io::canonical_dump(echo)));
  EXPECT_EQ(out["seed"], 0);
}

TEST(Commands, NeverEventGivesZero) {
  const RunConfig cfg = quick({"event.gap_threshold=0", "event.stopped_speed=1000"});
  const json out = json::parse(cmd::estimate(cfg, to_json_value(cfg), "cmc", {})[0].second);
  EXPECT_EQ(out["result"]["p_hat"], 0.0);
}

TEST(Commands, DeterministicBytes) {
  const RunConfig cfg = quick({"estimate.per_sample_csv=true", "estimate.lambda=[-50,-50,50]",
                               "estimate.theta={\"v_mean\":10,\"v_std\":5,\"gap_mean\":2,\"gap_std\":2}"});
  const json echo = to_json_value(cfg);
  for (const char* m : {"cmc", "is-br", "is-ce"}) EXPECT_EQ(cmd::estimate(cfg, echo, m, {}), cmd::estimate(cfg, echo, m, {}));
  EXPECT_EQ(cmd::optimize(cfg, echo, "sa"), cmd::optimize(cfg, echo, "sa"));
  EXPECT_EQ(cmd::optimize(cfg, echo, "ce"), cmd::optimize(cfg, echo, "ce"));
  EXPECT_EQ(cmd::trajectory_dump(cfg, echo), cmd::trajectory_dump(cfg, echo));
  EXPECT_EQ(cmd::synth(cfg, echo), cmd::synth(cfg, echo));
}

TEST(Commands, SaTraceRowsMatchEvaluations) {
  const RunConfig cfg = quick();
  const auto files = cmd::optimize(cfg, to_json_value(cfg), "sa");
  const json out = json::parse(files[0].second);
  const std::string& csv = files[1].second;
  const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
  EXPECT_EQ(out["evaluations"].get<std::size_t>(), rows);
}

TEST(Commands, SynthRowsSatisfyInvariants) {
  const RunConfig cfg = quick({"synth.LOW.n=400", "synth.MED.n=300", "synth.HIGH.n=300"});
  const auto files = cmd::synth(cfg, to_json_value(cfg));
  const ObservationSet obs = io::parse_observations(files[0].second);
  EXPECT_EQ(obs.size(), 1000u);
  EXPECT_EQ(obs.in_band(SpeedBand::Low).size(), 400u);
}
