// nspmoe: train, evaluate and compare resource-allocation strategies.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nspmoe/baselines.hpp"
#include "nspmoe/config_io.hpp"
#include "nspmoe/errors.hpp"
#include "nspmoe/experiment.hpp"
#include "nspmoe/ppo.hpp"
#include "nspmoe/report.hpp"

namespace fs = std::filesystem;
using namespace nspmoe;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> episodes;
};

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Closest known long flag of the invoked subcommand (and the main app).
std::string suggest(const CLI::App& app, const std::string& unknown) {
  std::string name = unknown.substr(0, unknown.find('='));
  std::string best;
  std::size_t best_d = 4;
  auto scan = [&](const CLI::App* a) {
    for (const auto* opt : a->get_options()) {
      for (const auto& l : opt->get_lnames()) {
        const auto d = edit_distance(name, "--" + l);
        if (d < best_d) {
          best_d = d;
          best = "--" + l;
        }
      }
    }
  };
  scan(&app);
  for (const auto* sub : app.get_subcommands()) scan(sub);
  return best;
}

// The config file is either a full manifest or a bare scenario object.
experiment::ExperimentManifest read_config(const Globals& g, const char* command) {
  if (g.config.empty()) throw UsageError(std::string(command) + " requires --config PATH");
  std::ifstream f(g.config);
  if (!f) throw UsageError("--config: cannot open " + g.config);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return experiment::parse_manifest(text, g.config);  // rethrows with line and column
  }
  const bool is_manifest = j.is_object() && (j.contains("scenario") || j.contains("strategies") ||
                                              j.contains("train") || j.contains("seeds"));
  if (is_manifest) {
    // Manifests used for single runs may omit strategies and seeds.
    if (!j.contains("strategies")) j["strategies"] = {"moe_ppo"};
    if (!j.contains("seeds")) j["seeds"] = {1};
    return experiment::manifest_from_json(j);
  }
  experiment::ExperimentManifest m;
  m.scenario = scenario_from_json(j, "scenario");
  m.strategies = {"moe_ppo"};
  m.seeds = {1};
  return m;
}

std::uint64_t run_seed(const Globals& g, const experiment::ExperimentManifest& m) {
  return g.seed ? *g.seed : m.seeds.front();
}

void print_summary(const experiment::RunSummary& r) {
  std::cout << experiment::kSummaryCsvHeader << '\n' << experiment::summary_csv_row(r) << '\n';
}

void print_eval(const ppo::EvalSummary& s) {
  std::cout << "episodes " << s.episodes << "\n"
            << "mean_reward " << format_double(s.mean_reward) << " +- " << format_double(s.std_reward) << "\n"
            << "mean_cost " << format_double(s.mean_cost) << " +- " << format_double(s.std_cost) << "\n"
            << "violation_rate " << format_double(s.violation_rate) << " (power "
            << format_double(s.violation_rates[0]) << ", count " << format_double(s.violation_rates[1])
            << ", quality " << format_double(s.violation_rates[2]) << ", qos "
            << format_double(s.violation_rates[3]) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-NSP image selection and power allocation: MoE-PPO training, baselines and experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Globals g;
  // Accepted both before and after the subcommand name.
  auto add_globals = [&g](CLI::App* a) {
    a->add_option("--config", g.config, "Scenario or experiment manifest (JSON)");
    a->add_option("--seed", g.seed, "Run seed (scenario sampling and training)");
    a->add_option("--out", g.out, "Output directory");
    a->add_option("--episodes", g.episodes, "Override the episode budget")->check(CLI::PositiveNumber);
  };
  add_globals(&app);

  std::string strategy = "moe_ppo";
  std::string checkpoint;
  bool deterministic = false;
  int levels = experiment::kDefaultOraclePowerLevels;
  int workers = 1;

  auto* train = app.add_subcommand("train", "Train MoE-PPO (or plain MA-PPO) and write metrics and checkpoints");
  train->add_option("--strategy", strategy, "moe_ppo or ma_ppo")->check(CLI::IsMember({"moe_ppo", "ma_ppo"}));
  train->add_option("--workers", workers, "Rollout threads")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Evaluate a saved policy bundle");
  eval->add_option("--checkpoint", checkpoint, "Policy bundle written by train")->required();
  eval->add_flag("--deterministic", deterministic, "Threshold logits and use the mean power");

  auto* base = app.add_subcommand("baseline", "Run the greedy or random strategy");
  std::string baseline = "greedy";
  base->add_option("--strategy", baseline, "greedy or random")->check(CLI::IsMember({"greedy", "random"}));

  auto* oracle = app.add_subcommand("oracle", "Exhaustive optimum on a tiny instance (N<=3, M<=5, T=1)");
  oracle->add_option("--levels", levels, "Power grid levels (<= 8)")->check(CLI::Range(1, 8));

  app.add_subcommand("sweep", "Run every strategy, seed and agent count in a manifest");
  app.add_subcommand("report", "Summarize a sweep directory (--out) and check the result criteria");

  for (auto* sub : app.get_subcommands({})) add_globals(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ExtrasError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::string extra = e.what();
    if (auto p = extra.find("--"); p != std::string::npos) {
      auto token = extra.substr(p);
      token = token.substr(0, token.find_first_of(" ]\n"));
      const auto hint = suggest(app, token);
      if (!hint.empty()) std::cerr << "did you mean " << hint << "?\n";
    }
    std::cerr << "run with --help for usage\n";
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      auto m = read_config(g, "train");
      const auto seed = run_seed(g, m);
      const auto scenario = experiment::scenario_for(m.scenario, m.scenario.num_agents, seed);
      auto cfg = m.train;
      if (g.episodes) cfg.total_episodes = *g.episodes;
      cfg.workers = workers;
      const fs::path out = g.out.empty() ? fs::path("runs") / strategy / ("seed" + std::to_string(seed)) : fs::path(g.out);
      const auto r = experiment::run_strategy(strategy, scenario, cfg, m.eval_episodes, m.oracle_power_levels, out);
      print_summary(r);
      std::cout << "wrote " << (out / "final.ckpt").string() << "\n";
    } else if (eval->parsed()) {
      auto m = read_config(g, "evaluate");
      const auto seed = run_seed(g, m);
      const auto scenario = experiment::scenario_for(m.scenario, m.scenario.num_agents, seed);
      const int episodes = g.episodes ? *g.episodes : m.eval_episodes;
      print_eval(ppo::evaluate_checkpoint(checkpoint, scenario, episodes, deterministic, seed));
    } else if (base->parsed()) {
      auto m = read_config(g, "baseline");
      const auto seed = run_seed(g, m);
      const auto scenario = experiment::scenario_for(m.scenario, m.scenario.num_agents, seed);
      const int episodes = g.episodes ? *g.episodes : m.eval_episodes;
      print_summary(experiment::run_strategy(baseline, scenario, m.train, episodes, m.oracle_power_levels, g.out));
    } else if (oracle->parsed()) {
      auto m = read_config(g, "oracle");
      const auto seed = run_seed(g, m);
      const auto scenario = experiment::scenario_for(m.scenario, m.scenario.num_agents, seed);
      baselines::check_oracle_guard(scenario, levels);
      const auto instance = init_scenario(scenario);
      const auto r = baselines::exhaustive_oracle(instance, instance.path_loss, levels);
      std::cout << "evaluated " << r.evaluated << "\nfeasible " << (r.feasible ? "true" : "false") << "\n";
      if (r.feasible) {
        std::cout << "best_cost " << format_double(r.best_cost) << "\n";
        for (int n = 0; n < scenario.num_agents; ++n) {
          std::cout << "agent " << n << " mask 0x" << std::hex << r.best_action.selection[n] << std::dec
                    << " power_level " << r.power_index[n] << "/" << levels << " ("
                    << format_double(r.best_action.power_w[n]) << " W)\n";
        }
      }
    } else if (app.got_subcommand("sweep")) {
      auto m = read_config(g, "sweep");
      if (!g.out.empty()) m.output_dir = g.out;
      if (g.episodes) m.train.total_episodes = *g.episodes;
      if (g.seed) m.seeds = {*g.seed};
      std::cout << experiment::kSummaryCsvHeader << '\n';
      experiment::run_manifest(m, [](const experiment::RunSummary& r) {
        std::cout << experiment::summary_csv_row(r) << std::endl;
      });
    } else if (app.got_subcommand("report")) {
      if (g.out.empty()) throw UsageError("report requires --out DIR (the sweep output directory)");
      if (!fs::is_directory(g.out)) throw std::runtime_error("no such directory: " + g.out);
      std::cout << report::build_report(g.out);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
