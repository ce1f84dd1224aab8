#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "nspmoe/env.hpp"
#include "nspmoe/rng.hpp"

namespace nspmoe {

// Per-episode aggregates shared by every strategy.
struct EpisodeStats {
  double cumulative_reward = 0.0;  // summed over agents and steps
  double total_cost = 0.0;         // summed over agents and steps
  // Agent-steps violating power, count, quality, QoS respectively.
  std::array<int, 4> violations{};
  int any_violation = 0;
  int agent_steps = 0;

  void add(const StepOutcome& out);
};

}  // namespace nspmoe

namespace nspmoe::baselines {

// Each bit ~ Bernoulli(0.5); with `repair`, uniformly chosen unselected images
// are added until min_images is met. Power ~ Uniform(0, p_max].
JointAction random_policy(const ScenarioInstance& instance, Rng& rng, bool repair = true);

struct GreedySelection {
  Mask mask = 0;
  bool feasible = false;  // false: no subset meets q_min, all images returned
};

// Images in descending quality / proc_cost order until both the count and the
// quality constraints hold.
GreedySelection greedy_selection(std::span<const ImageMeta> row, const ScenarioConfig& config);

inline constexpr int kGreedyMaxSweeps = 100;
inline constexpr double kGreedyTolW = 1e-6;
// Relative SINR margin above the QoS target so rounding never lands on the
// infeasible side of the boundary.
inline constexpr double kGreedyQosMargin = 1e-6;

// Fixed-point minimum-power iteration from p_max/2: each sweep sets every
// p_n to the smallest power meeting r_min against the others' current powers,
// capped at p_max.
std::vector<double> greedy_power(const ChannelState& channel, const ScenarioConfig& config,
                                 int* sweeps_used = nullptr);

struct GreedyResult {
  JointAction action;
  std::vector<bool> selection_feasible;
};

GreedyResult greedy_policy(const Catalog& catalog, const ChannelState& channel,
                           const ScenarioConfig& config);

inline constexpr int kOracleMaxAgents = 3;
inline constexpr int kOracleMaxImages = 5;
inline constexpr int kOracleMaxPowerLevels = 8;

struct OracleResult {
  JointAction best_action;
  std::vector<int> power_index;  // k in 1..L, power = p_max * k / L
  double best_cost = 0.0;
  bool feasible = false;
  std::uint64_t evaluated = 0;
};

// Throws CapacityError unless N <= 3, M <= 5, L <= 8 and T == 1.
void check_oracle_guard(const ScenarioConfig& config, int power_levels);

// Enumerates every (mask, power level) per agent, evaluates each joint
// action through evaluate_joint_action and keeps the cheapest feasible one.
// The outermost agent's option range is split into `partitions` contiguous
// chunks; the result does not depend on the split.
OracleResult exhaustive_oracle(const ScenarioInstance& instance, const ChannelState& channel,
                               int power_levels, int partitions = 1);

using JointPolicyFn = std::function<JointAction(const NetEnv&, Rng&)>;

EpisodeStats run_episode(std::shared_ptr<const ScenarioInstance> instance, double c_ref,
                         std::uint64_t episode_index, const JointPolicyFn& policy, Rng& rng);

JointPolicyFn random_strategy(bool repair = true);
JointPolicyFn greedy_strategy();

inline constexpr int kCalibrationEpisodes = 100;

// Reward scale c_ref: mean per-agent, per-step total cost of the repaired
// random policy over its feasible agent-steps in kCalibrationEpisodes
// episodes (all agent-steps if none is feasible). Cached per scenario.
double reference_cost(const ScenarioInstance& instance);

}  // namespace nspmoe::baselines
