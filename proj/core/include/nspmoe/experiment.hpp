#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nspmoe/env.hpp"
#include "nspmoe/ppo.hpp"

namespace nspmoe::experiment {

inline constexpr const char* kStrategies[] = {"moe_ppo", "ma_ppo", "greedy", "random", "oracle"};
inline constexpr int kDefaultEpisodes = 4000;
inline constexpr int kDefaultEvalEpisodes = 100;
inline constexpr int kDefaultOraclePowerLevels = 8;
inline constexpr const char* kResolvedManifestFile = "resolved_manifest.json";
inline constexpr const char* kSummaryCsvFile = "summary.csv";
inline constexpr const char* kSummaryCsvHeader =
    "strategy,num_agents,seed,episodes,mean_cost,std_cost,mean_reward,std_reward,violation_rate";

bool is_strategy(std::string_view name);
bool is_learner(std::string_view name);

nlohmann::json to_json(const ppo::TrainConfig& config);
ppo::TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

// Applies the strategy's gate and advantage modes to `base`.
ppo::TrainConfig train_config_for(const std::string& strategy, ppo::TrainConfig base);

struct ExperimentManifest {
  ScenarioConfig scenario;
  ppo::TrainConfig train = default_train();
  std::vector<std::string> strategies;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "runs";
  std::vector<int> sweep_num_agents;  // empty: only scenario.num_agents
  int eval_episodes = kDefaultEvalEpisodes;
  int oracle_power_levels = kDefaultOraclePowerLevels;

  static ppo::TrainConfig default_train() {
    ppo::TrainConfig t;
    t.total_episodes = kDefaultEpisodes;
    return t;
  }
  // Agent counts the manifest runs at.
  std::vector<int> agent_counts() const;
  // Throws ConfigError naming the field.
  void validate() const;
  bool operator==(const ExperimentManifest& o) const;
};

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
// Syntax errors are reported as ConfigError("<source>", "parse error at line L, column C: ...").
ExperimentManifest parse_manifest(std::string_view text, const std::string& source = "manifest");
ExperimentManifest load_manifest(const std::filesystem::path& path);
// Writes resolved_manifest.json (every default made explicit) into `dir`.
void write_resolved(const ExperimentManifest& m, const std::filesystem::path& dir);

// The scenario and trainer a single (N, seed) run uses: both seeds are set
// to the run seed.
ScenarioConfig scenario_for(const ScenarioConfig& base, int num_agents, std::uint64_t seed);

struct RunSummary {
  std::string strategy;
  int num_agents = 0;
  std::uint64_t seed = 0;
  int episodes = 0;
  double mean_cost = 0.0;
  double std_cost = 0.0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double violation_rate = 0.0;
};

std::string summary_csv_row(const RunSummary& r);

// <root>/<strategy>/N<n>/seed<s>
std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& strategy, int num_agents,
                              std::uint64_t seed);

// Runs one strategy on one scenario. Learners train for train.total_episodes
// and report the final kFinalWindowEpisodes training episodes; random and
// greedy run `eval_episodes` episodes; the oracle solves the instance (it
// requires the enumeration guard to hold). Writes metrics.jsonl, curves.csv
// and summary.json into `out_dir` when it is non-empty.
RunSummary run_strategy(const std::string& strategy, const ScenarioConfig& scenario,
                        const ppo::TrainConfig& train, int eval_episodes, int oracle_power_levels,
                        const std::filesystem::path& out_dir);

using Progress = std::function<void(const RunSummary&)>;

// Every (N, strategy, seed) combination; writes the resolved manifest and
// summary.csv (one row per run) under output_dir.
std::vector<RunSummary> run_manifest(const ExperimentManifest& m, const Progress& progress = {});

}  // namespace nspmoe::experiment
