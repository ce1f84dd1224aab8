#include "nspmoe/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "nspmoe/baselines.hpp"
#include "nspmoe/config_io.hpp"
#include "nspmoe/errors.hpp"
#include "nspmoe/json_fields.hpp"
#include "nspmoe/metrics.hpp"

namespace nspmoe::experiment {

bool is_strategy(std::string_view name) {
  return std::find(std::begin(kStrategies), std::end(kStrategies), name) != std::end(kStrategies);
}

bool is_learner(std::string_view name) { return name == "moe_ppo" || name == "ma_ppo"; }

nlohmann::json to_json(const ppo::TrainConfig& c) {
  nlohmann::json j;
  j["learning_rate"] = c.learning_rate;
  j["clip_epsilon"] = c.clip_epsilon;
  j["update_epochs"] = c.update_epochs;
  j["total_episodes"] = c.total_episodes;
  j["episodes_per_iteration"] = c.episodes_per_iteration;
  j["minibatch_size"] = c.minibatch_size;
  j["gamma"] = c.gamma;
  j["gae_lambda"] = c.gae_lambda;
  j["entropy_coef"] = c.entropy_coef;
  j["value_coef"] = c.value_coef;
  j["max_grad_norm"] = c.max_grad_norm;
  j["seed"] = c.seed;
  j["advantage_mode"] = ppo::to_string(c.advantage_mode);
  j["gate_mode"] = ppo::to_string(c.gate_mode);
  j["gate_weighted_entropy"] = c.gate_weighted_entropy;
  j["renormalize_propagated"] = c.renormalize_propagated;
  j["checkpoint_every"] = c.checkpoint_every;
  j["workers"] = c.workers;
  j["arch"] = {{"expert_hidden", c.arch.expert_hidden},
               {"gate_hidden", c.arch.gate_hidden},
               {"critic_hidden", c.arch.critic_hidden}};
  return j;
}

ppo::TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
  ppo::TrainConfig c;
  c.total_episodes = kDefaultEpisodes;
  json_fields::Reader r(j, path);
  r.read("learning_rate", c.learning_rate);
  r.read("clip_epsilon", c.clip_epsilon);
  r.read("update_epochs", c.update_epochs);
  r.read("total_episodes", c.total_episodes);
  r.read("episodes_per_iteration", c.episodes_per_iteration);
  r.read("minibatch_size", c.minibatch_size);
  r.read("gamma", c.gamma);
  r.read("gae_lambda", c.gae_lambda);
  r.read("entropy_coef", c.entropy_coef);
  r.read("value_coef", c.value_coef);
  r.read("max_grad_norm", c.max_grad_norm);
  r.read("seed", c.seed);
  r.read("checkpoint_every", c.checkpoint_every);
  r.read("workers", c.workers);
  std::string mode;
  try {
    if (r.read("advantage_mode", mode)) c.advantage_mode = ppo::parse_advantage_mode(mode);
    if (r.read("gate_mode", mode)) c.gate_mode = ppo::parse_gate_mode(mode);
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.field(), e.what());
  }
  r.read("gate_weighted_entropy", c.gate_weighted_entropy);
  r.read("renormalize_propagated", c.renormalize_propagated);
  nlohmann::json arch;
  if (r.read("arch", arch)) {
    json_fields::Reader a(arch, path + ".arch");
    a.read("expert_hidden", c.arch.expert_hidden);
    a.read("gate_hidden", c.arch.gate_hidden);
    a.read("critic_hidden", c.arch.critic_hidden);
    a.finish();
  }
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.field(), e.what());
  }
  return c;
}

ppo::TrainConfig train_config_for(const std::string& strategy, ppo::TrainConfig base) {
  if (strategy == "moe_ppo") {
    base.advantage_mode = ppo::AdvantageMode::kMaxProp;
    base.gate_mode = ppo::GateMode::kLearned;
  } else if (strategy == "ma_ppo") {
    base.advantage_mode = ppo::AdvantageMode::kOwn;
    base.gate_mode = ppo::GateMode::kFrozen;
  } else {
    throw ConfigError("strategy", "\"" + strategy + "\" is not a learning strategy");
  }
  return base;
}

std::vector<int> ExperimentManifest::agent_counts() const {
  return sweep_num_agents.empty() ? std::vector<int>{scenario.num_agents} : sweep_num_agents;
}

void ExperimentManifest::validate() const {
  scenario.validate();
  train.validate();
  if (strategies.empty()) throw ConfigError("strategies", "at least one strategy is required");
  std::set<std::string> seen;
  for (const auto& s : strategies) {
    if (!is_strategy(s)) {
      throw ConfigError("strategies", "unknown strategy \"" + s +
                                          "\" (expected moe_ppo, ma_ppo, greedy, random or oracle)");
    }
    if (!seen.insert(s).second) throw ConfigError("strategies", "duplicate strategy \"" + s + "\"");
  }
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  for (int n : sweep_num_agents) {
    if (n < 1) throw ConfigError("sweep.num_agents", "agent counts must be >= 1");
  }
  if (eval_episodes < 1) throw ConfigError("eval_episodes", "must be >= 1");
  if (oracle_power_levels < 1) throw ConfigError("oracle_power_levels", "must be >= 1");
  for (int n : agent_counts()) {
    ScenarioConfig s = scenario;
    s.num_agents = n;
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("sweep.num_agents", e.what());
    }
    if (seen.count("oracle")) {
      try {
        baselines::check_oracle_guard(s, oracle_power_levels);
      } catch (const CapacityError& e) {
        throw ConfigError("strategies", std::string("oracle not allowed: ") + e.what());
      }
    }
  }
}

bool ExperimentManifest::operator==(const ExperimentManifest& o) const {
  return scenario == o.scenario && train == o.train && strategies == o.strategies && seeds == o.seeds &&
         output_dir == o.output_dir && sweep_num_agents == o.sweep_num_agents &&
         eval_episodes == o.eval_episodes && oracle_power_levels == o.oracle_power_levels;
}

nlohmann::json to_json(const ExperimentManifest& m) {
  nlohmann::json j;
  j["scenario"] = nspmoe::to_json(m.scenario);
  j["train"] = to_json(m.train);
  j["strategies"] = m.strategies;
  j["seeds"] = m.seeds;
  j["output_dir"] = m.output_dir;
  j["sweep"] = {{"num_agents", m.sweep_num_agents}};
  j["eval_episodes"] = m.eval_episodes;
  j["oracle_power_levels"] = m.oracle_power_levels;
  return j;
}

ExperimentManifest manifest_from_json(const nlohmann::json& j) {
  ExperimentManifest m;
  json_fields::Reader r(j, "manifest");
  nlohmann::json sub;
  if (r.read("scenario", sub)) m.scenario = scenario_from_json(sub, "scenario");
  if (r.read("train", sub)) m.train = train_config_from_json(sub, "train");
  r.read("strategies", m.strategies);
  r.read("seeds", m.seeds);
  r.read("output_dir", m.output_dir);
  if (r.read("sweep", sub)) {
    json_fields::Reader s(sub, "sweep");
    s.read("num_agents", m.sweep_num_agents);
    s.finish();
  }
  r.read("eval_episodes", m.eval_episodes);
  r.read("oracle_power_levels", m.oracle_power_levels);
  r.finish();
  m.validate();
  return m;
}

ExperimentManifest parse_manifest(std::string_view text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    // Byte offsets are 1-based and point just past the offending character.
    const std::size_t at = e.byte > 0 ? std::min<std::size_t>(e.byte - 1, text.size()) : 0;
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < at; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(source, "parse error at line " + std::to_string(line) + ", column " +
                                  std::to_string(col) + ": " + msg);
  }
  return manifest_from_json(j);
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path.string(), "cannot open manifest");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str(), path.string());
}

void write_resolved(const ExperimentManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / kResolvedManifestFile, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (dir / kResolvedManifestFile).string());
  f << to_json(m).dump(2) << '\n';
}

ScenarioConfig scenario_for(const ScenarioConfig& base, int num_agents, std::uint64_t seed) {
  ScenarioConfig s = base;
  s.num_agents = num_agents;
  s.seed = seed;
  return s;
}

std::string summary_csv_row(const RunSummary& r) {
  std::ostringstream os;
  os << r.strategy << ',' << r.num_agents << ',' << r.seed << ',' << r.episodes << ','
     << format_double(r.mean_cost) << ',' << format_double(r.std_cost) << ',' << format_double(r.mean_reward)
     << ',' << format_double(r.std_reward) << ',' << format_double(r.violation_rate);
  return os.str();
}

std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& strategy, int num_agents,
                              std::uint64_t seed) {
  return root / strategy / ("N" + std::to_string(num_agents)) / ("seed" + std::to_string(seed));
}

namespace {

RunSummary from_eval(const std::string& strategy, const ScenarioConfig& s, std::uint64_t seed,
                     const ppo::EvalSummary& e) {
  return {strategy, s.num_agents, seed, e.episodes, e.mean_cost, e.std_cost, e.mean_reward, e.std_reward,
          e.violation_rate};
}

void write_summary_json(const std::filesystem::path& dir, const std::string& strategy, const ScenarioConfig& s,
                        std::uint64_t seed, int episodes, double c_ref, const ppo::EvalSummary& e) {
  nlohmann::ordered_json j;
  j["strategy"] = strategy;
  j["seed"] = seed;
  j["num_agents"] = s.num_agents;
  j["episodes"] = episodes;
  j["c_ref"] = c_ref;
  j["final_window"] = {{"episodes", e.episodes},       {"mean_reward", e.mean_reward},
                       {"std_reward", e.std_reward},   {"mean_cost", e.mean_cost},
                       {"std_cost", e.std_cost},       {"violation_rate", e.violation_rate},
                       {"violation_rates", e.violation_rates}};
  std::ofstream f(dir / "summary.json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
  f << j.dump(2) << '\n';
}

// Baselines and the oracle: episodes in blocks of episodes_per_iteration,
// logged through the same metrics stream as the learners.
RunSummary run_fixed_policy(const std::string& strategy, const ScenarioConfig& scenario,
                            const ppo::TrainConfig& train, int episodes, const baselines::JointPolicyFn& policy,
                            const std::filesystem::path& out_dir) {
  const auto instance = std::make_shared<const ScenarioInstance>(init_scenario(scenario));
  const double c_ref = baselines::reference_cost(*instance);
  std::optional<metrics::MetricsWriter> writer;
  if (!out_dir.empty()) writer.emplace(out_dir, strategy, scenario.seed);
  std::vector<EpisodeStats> all;
  int iteration = 0;
  while (static_cast<int>(all.size()) < episodes) {
    const int count = std::min(train.episodes_per_iteration, episodes - static_cast<int>(all.size()));
    std::vector<EpisodeStats> block;
    for (int k = 0; k < count; ++k) {
      const auto ep = static_cast<std::uint64_t>(all.size() + block.size());
      Rng rng(derive_seed(scenario.seed, stream::kBaseline, ep));
      block.push_back(baselines::run_episode(instance, c_ref, ep, policy, rng));
    }
    all.insert(all.end(), block.begin(), block.end());
    ++iteration;
    if (writer) {
      const auto s = ppo::summarize(block);
      ppo::IterationMetrics m;
      m.iteration = iteration;
      m.episodes = static_cast<int>(all.size());
      m.mean_reward = s.mean_reward;
      m.mean_cost = s.mean_cost;
      m.violation_rate = s.violation_rate;
      m.violation_rates = s.violation_rates;
      writer->write(m);
    }
  }
  const auto window = std::min<std::size_t>(ppo::kFinalWindowEpisodes, all.size());
  const auto e = ppo::summarize(std::span<const EpisodeStats>(all).subspan(all.size() - window));
  if (!out_dir.empty()) write_summary_json(out_dir, strategy, scenario, scenario.seed, episodes, c_ref, e);
  return from_eval(strategy, scenario, scenario.seed, e);
}

baselines::JointPolicyFn oracle_strategy(int power_levels) {
  // Without fading every step sees the same channel, so one solve is reused.
  auto last = std::make_shared<std::pair<ChannelState, JointAction>>();
  return [power_levels, last](const NetEnv& env, Rng&) {
    if (last->first.num_agents == 0 || !(last->first == env.channel())) {
      const auto r = baselines::exhaustive_oracle(env.instance(), env.channel(), power_levels);
      last->first = env.channel();
      // An infeasible instance has no optimum; fall back to p_max and all images.
      if (r.feasible) {
        last->second = r.best_action;
      } else {
        const auto& cfg = env.config();
        last->second.selection.assign(cfg.num_agents, full_mask(cfg.images_per_agent));
        last->second.power_w.assign(cfg.num_agents, cfg.p_max_w);
      }
    }
    return last->second;
  };
}

}  // namespace

RunSummary run_strategy(const std::string& strategy, const ScenarioConfig& scenario, const ppo::TrainConfig& train,
                        int eval_episodes, int oracle_power_levels, const std::filesystem::path& out_dir) {
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  if (is_learner(strategy)) {
    auto cfg = train_config_for(strategy, train);
    cfg.seed = scenario.seed;
    const auto result = ppo::train(scenario, cfg, out_dir);
    const auto window = std::min<std::size_t>(ppo::kFinalWindowEpisodes, result.episodes.size());
    const auto e =
        ppo::summarize(std::span<const EpisodeStats>(result.episodes).subspan(result.episodes.size() - window));
    return from_eval(strategy, scenario, scenario.seed, e);
  }
  if (strategy == "random") {
    return run_fixed_policy(strategy, scenario, train, eval_episodes, baselines::random_strategy(true), out_dir);
  }
  if (strategy == "greedy") {
    return run_fixed_policy(strategy, scenario, train, eval_episodes, baselines::greedy_strategy(), out_dir);
  }
  if (strategy == "oracle") {
    baselines::check_oracle_guard(scenario, oracle_power_levels);
    return run_fixed_policy(strategy, scenario, train, eval_episodes, oracle_strategy(oracle_power_levels),
                            out_dir);
  }
  throw ConfigError("strategy", "unknown strategy \"" + strategy + "\"");
}

std::vector<RunSummary> run_manifest(const ExperimentManifest& m, const Progress& progress) {
  m.validate();
  const std::filesystem::path root = m.output_dir;
  write_resolved(m, root);
  std::ofstream csv(root / kSummaryCsvFile, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + (root / kSummaryCsvFile).string());
  csv << kSummaryCsvHeader << '\n' << std::flush;
  std::vector<RunSummary> rows;
  for (int n : m.agent_counts()) {
    for (const auto& strategy : m.strategies) {
      for (auto seed : m.seeds) {
        const auto scenario = scenario_for(m.scenario, n, seed);
        auto r = run_strategy(strategy, scenario, m.train, m.eval_episodes, m.oracle_power_levels,
                              run_dir(root, strategy, n, seed));
        csv << summary_csv_row(r) << '\n' << std::flush;
        if (progress) progress(r);
        rows.push_back(std::move(r));
      }
    }
  }
  return rows;
}

}  // namespace nspmoe::experiment
