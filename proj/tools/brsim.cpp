#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <brsim/commands.hpp>

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

struct Args {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> n;
  std::vector<std::string> overrides;
  std::string method;
  std::string kind;
  brsim::cmd::Inputs inputs;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("--config", a.config, "JSON config file");
  sub->add_option("--seed", a.seed, "64-bit seed");
  sub->add_option("--out", a.out, "output directory");
  sub->add_option("--set", a.overrides, "override a config key, e.g. --set sa.outer_iters=5")->take_all();
}

std::vector<std::string> n_overrides(const std::string& command, const Args& a) {
  if (!a.n) return {};
  const std::string n = std::to_string(*a.n);
  if (command == "estimate") return {"estimate.n=" + n};
  if (command == "generate") return {"generate.n=" + n};
  if (command == "synth") return {"synth.LOW.n=" + n, "synth.MED.n=" + n, "synth.HIGH.n=" + n};
  if (command == "optimize") return {a.kind == "ce" ? "ce.samples_per_iter=" + n : "sa.n_rollouts=" + n};
  throw brsim::ConfigError("--n is not used by " + command);
}

int run(const std::string& command, const Args& a) {
  using namespace brsim;
  std::optional<nlohmann::json> file;
  if (a.config) {
    const std::string text = io::read_file(*a.config);
    file = nlohmann::json::parse(text, nullptr, false);
    if (file->is_discarded()) throw ConfigError(*a.config + ": not valid JSON");
  }
  std::vector<std::string> overrides = a.overrides;
  if (a.seed) overrides.push_back("seed=" + std::to_string(*a.seed));
  if (a.out) overrides.push_back("output_dir=" + nlohmann::json(*a.out).dump());
  for (auto& o : n_overrides(command, a)) overrides.push_back(o);
  const auto [cfg, echo] = resolve_config(file, overrides);

  cmd::Outputs files;
  if (command == "synth") files = cmd::synth(cfg, echo);
  else if (command == "estimate") files = cmd::estimate(cfg, echo, a.method, a.inputs);
  else if (command == "optimize") files = cmd::optimize(cfg, echo, a.kind);
  else if (command == "fit") files = cmd::fit(cfg, echo, a.inputs);
  else if (command == "qq") files = cmd::qq(cfg, echo, a.inputs);
  else if (command == "generate") files = cmd::generate(cfg, echo, a.inputs);
  else if (command == "trajectory-dump") files = cmd::trajectory_dump(cfg, echo);

  const std::filesystem::path dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  for (const auto& [name, content] : files) {
    io::write_file((dir / name).string(), content);
    std::cout << (dir / name).string() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Behavior-aware rare-event simulation for cut-in scenarios"};
  app.require_subcommand(1, 1);
  Args a;

  auto* synth = app.add_subcommand("synth", "write a synthetic observations CSV with known ground truth");
  add_common(synth, a);
  synth->add_option("--n", a.n, "rows per speed band");

  auto* estimate = app.add_subcommand("estimate", "estimate the rare-event probability");
  add_common(estimate, a);
  estimate->add_option("--method", a.method, "cmc, is-ce or is-br")
      ->required()
      ->check(CLI::IsMember({"cmc", "is-ce", "is-br"}));
  estimate->add_option("--proposal", a.inputs.proposal, "artifact from optimize");
  estimate->add_option("--n", a.n, "sample count");

  auto* optimize = app.add_subcommand("optimize", "fit an importance-sampling proposal");
  add_common(optimize, a);
  optimize->add_option("--kind", a.kind, "sa or ce")->required()->check(CLI::IsMember({"sa", "ce"}));
  optimize->add_option("--n", a.n, "rollouts per evaluation (sa) or samples per iteration (ce)");

  auto* fit = app.add_subcommand("fit", "fit the mixed-behavior model per speed band");
  add_common(fit, a);
  fit->add_option("--data", a.inputs.data, "observations CSV")->required();

  auto* qq = app.add_subcommand("qq", "QQ points of observations against fitted params");
  add_common(qq, a);
  qq->add_option("--data", a.inputs.data, "observations CSV")->required();
  qq->add_option("--params", a.inputs.params, "fit.json or synth.json")->required();

  auto* generate = app.add_subcommand("generate", "sample new cut-in situations from fitted params");
  add_common(generate, a);
  generate->add_option("--params", a.inputs.params, "fit.json or synth.json")->required();
  generate->add_option("--n", a.n, "rows");

  auto* traj = app.add_subcommand("trajectory-dump", "write one rollout as CSV");
  add_common(traj, a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, a);
  } catch (const brsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const brsim::InfeasibleScenarioError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const brsim::AmbiguousCategoryError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const brsim::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumeric;
  }
}
