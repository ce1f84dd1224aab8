#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nspmoe/baselines.hpp"
#include "nspmoe/env.hpp"
#include "nspmoe/nn.hpp"
#include "nspmoe/policy.hpp"

namespace nspmoe::ppo {

// max_prop: every agent is updated with the per-timestep maximum of the
// (normalized) per-agent advantages. own: each agent uses its own.
enum class AdvantageMode { kMaxProp, kOwn };
// learned: gate weights come from the gate network and it is trained through
// the weighted surrogate. frozen: both weights fixed at 0.5.
enum class GateMode { kLearned, kFrozen };

struct TrainConfig {
  double learning_rate = 3e-4;
  double clip_epsilon = 0.2;
  int update_epochs = 8;
  int total_episodes = 4000;
  int episodes_per_iteration = 16;
  int minibatch_size = 256;  // agent-transitions
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  std::uint64_t seed = 1;
  AdvantageMode advantage_mode = AdvantageMode::kMaxProp;
  GateMode gate_mode = GateMode::kLearned;
  // Scale each expert's entropy bonus by its gate weight, like its surrogate.
  // Off: the bonus is c * (H_sel + H_pow) whatever the gate says.
  bool gate_weighted_entropy = true;
  // Re-standardize each agent's advantages after max-propagation (the max
  // of several z-scores is biased upward).
  bool renormalize_propagated = true;
  int checkpoint_every = 50;  // iterations
  int workers = 1;            // rollout threads
  policy::PolicyArch arch;

  void validate() const;  // throws ConfigError
  // "moe_ppo", "ma_ppo", or "custom".
  std::string strategy() const;
  bool operator==(const TrainConfig&) const;

  static TrainConfig moe_ppo();
  static TrainConfig ma_ppo();
};

std::string to_string(AdvantageMode m);
std::string to_string(GateMode m);
AdvantageMode parse_advantage_mode(const std::string& s);
GateMode parse_gate_mode(const std::string& s);

struct AgentStep {
  AgentObservation obs;
  policy::ActionRecord action;
  double reward = 0.0;
  double value = 0.0;  // critic estimate under the behaviour policy
};

struct JointTransition {
  std::vector<double> global_state;
  std::vector<AgentStep> agents;
  bool done = false;
};

// Episode-major: transitions[e * horizon + t].
struct RolloutBatch {
  int num_agents = 0;
  int horizon = 0;
  std::vector<JointTransition> transitions;
  std::vector<std::uint64_t> episode_indices;
  std::vector<EpisodeStats> episode_stats;

  int num_episodes() const { return static_cast<int>(episode_indices.size()); }
};

using EnvFactory = std::function<NetEnv(std::uint64_t episode_index)>;

// Simulates `count` episodes with indices first_episode.. using per-episode
// action-sampling streams derived from policy_seed. Agents act on their local
// observation only; the global state and critic values are recorded for
// training. The result does not depend on `workers`.
RolloutBatch collect_rollout(const EnvFactory& env_factory, const policy::MoePolicy& policy,
                             std::uint64_t first_episode, int count, std::uint64_t policy_seed,
                             int workers = 1);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t
// A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
// values has T + 1 entries (bootstrap last, 0 at terminal).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double gamma, double lambda);

// Rows are agents, columns timesteps. Every row of the result is the
// column-wise maximum.
std::vector<std::vector<double>> max_propagate(const std::vector<std::vector<double>>& advantages);

// In-place z-score; a constant vector becomes all zeros.
void normalize(std::vector<double>& values);

// One agent-transition prepared for the update.
struct Sample {
  const JointTransition* transition = nullptr;
  int agent = 0;
  double advantage = 0.0;  // after normalization and propagation
  double ret = 0.0;        // GAE return target for the critic
};

// GAE per (episode, agent), per-agent z-score, then max-propagation over
// agents at each (episode, t) when advantage_mode is max_prop, followed by a
// second per-agent z-score when renormalize_propagated is set.
std::vector<Sample> prepare_samples(const RolloutBatch& batch, const TrainConfig& config);

struct LossParts {
  double total = 0.0;
  double policy = 0.0;  // -sum_e w_e L_e, averaged
  double value = 0.0;   // value_coef * mean squared error
  double entropy = 0.0; // mean (H_sel + H_pow)
  double entropy_bonus = 0.0;  // mean entropy term the loss rewards
  double gate_selection = 0.0;  // mean gate weight on the selection expert
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double surrogate = 0.0;  // mean sum_e w_e L_e
};

// Mean loss over `samples`; when `grad` is non-empty the gradient w.r.t. all
// policy parameters is added into it.
LossParts ppo_loss(const policy::MoePolicy& policy, std::span<const Sample> samples,
                   const TrainConfig& config, std::span<double> grad = {});

struct UpdateStats {
  LossParts mean;  // averaged over minibatches
  int minibatches = 0;
  double grad_norm = 0.0;  // mean pre-clip global norm
};

// update_epochs passes over shuffled minibatches of the batch. On a
// non-finite loss the offending minibatch is written to `diagnostics_path`
// (when set) and NumericError is thrown.
UpdateStats ppo_update(const RolloutBatch& batch, policy::MoePolicy& policy, nn::AdamState& adam,
                       const TrainConfig& config, Rng& shuffle_rng,
                       const std::filesystem::path& diagnostics_path = {});

struct IterationMetrics {
  int iteration = 0;
  int episodes = 0;  // cumulative
  double mean_reward = 0.0;
  double mean_cost = 0.0;
  double violation_rate = 0.0;  // fraction of agent-steps with any violation
  std::array<double, 4> violation_rates{};  // power, count, quality, qos
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double gate_selection = 0.0;
  double gate_power = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double wall_clock_s = 0.0;
};

struct TrainResult {
  std::vector<IterationMetrics> iterations;
  std::vector<EpisodeStats> episodes;
  policy::MoePolicy policy;
  double c_ref = 0.0;
};

// Sink invoked after every iteration (used by the metrics writer).
using IterationSink = std::function<void(const IterationMetrics&)>;

// collect -> GAE -> propagate -> update until total_episodes are consumed.
// With a non-empty out_dir: metrics.jsonl, curves.csv, timing.jsonl,
// checkpoints/iter_NNNNNN.ckpt every checkpoint_every iterations,
// final.ckpt and summary.json.
TrainResult train(const ScenarioConfig& scenario, const TrainConfig& config,
                  const std::filesystem::path& out_dir = {});

// Final-window aggregate used for cost/reward comparisons.
inline constexpr int kFinalWindowEpisodes = 100;

struct EvalSummary {
  int episodes = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_cost = 0.0;
  double std_cost = 0.0;
  double violation_rate = 0.0;
  std::array<double, 4> violation_rates{};
};

EvalSummary summarize(std::span<const EpisodeStats> episodes);

// Runs `episodes` evaluation episodes (indices start at `first_episode`).
EvalSummary evaluate(const policy::MoePolicy& policy, const ScenarioConfig& scenario, int episodes,
                     bool deterministic, std::uint64_t seed = 0, std::uint64_t first_episode = 0);

// Loads a policy bundle; throws FormatError when it was written for another
// scenario.
EvalSummary evaluate_checkpoint(const std::filesystem::path& checkpoint, const ScenarioConfig& scenario,
                                int episodes, bool deterministic, std::uint64_t seed = 0);

}  // namespace nspmoe::ppo
