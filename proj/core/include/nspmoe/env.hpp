#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "nspmoe/cost.hpp"
#include "nspmoe/rng.hpp"
#include "nspmoe/types.hpp"

namespace nspmoe {

// Full parameterization of one multi-NSP scenario. Every field has a default;
// the canonical scenario is the default-constructed value.
struct ScenarioConfig {
  int num_agents = 3;
  int images_per_agent = 8;
  int horizon = 8;

  double bandwidth_hz = 1e6;
  double noise_power_w = 1e-9;
  double p_max_w = 20.0;
  int min_images = 3;
  double q_min = 3.0;
  double r_min_bps = 1e6;
  std::uint64_t payload_bytes = 7'000'000;
  std::array<std::uint64_t, 2> image_bytes_range{3'000'000, 7'000'000};

  // Channel: g = reference_gain * d^-pathloss_exponent, transmitters uniform
  // in the annulus [min_distance_m, cell_radius_m] around the receiver site.
  double pathloss_exponent = 3.0;
  double reference_gain = 1e-3;
  double cell_radius_m = 150.0;
  double min_distance_m = 80.0;
  // Fraction of another NSP's received power that leaks into a link.
  double interference_coupling = 0.03;
  bool fading = false;

  // Costs.
  double alpha = 1.0;
  double beta = 1.0;
  double proc_cost_per_mb = 10.0;
  // Static power drawn by the transmit chain while a payload is on air.
  double circuit_power_w = 5.0;

  bool soft_penalty = false;
  std::uint64_t seed = 1;

  // Throws ConfigError naming the first offending field.
  void validate() const;
  int obs_dim() const { return images_per_agent + 5; }
  int global_dim() const { return num_agents * obs_dim(); }
  // SINR needed to reach r_min_bps.
  double sinr_target() const;

  bool operator==(const ScenarioConfig&) const = default;
};

// Direct and cross gains for one step. cross(m, n) is the gain from
// transmitter m at receiver n; cross(n, n) == direct_gain[n].
struct ChannelState {
  int num_agents = 0;
  std::vector<double> direct_gain;
  std::vector<double> cross_gain;  // row-major N x N

  double cross(int from, int at) const {
    return cross_gain[static_cast<std::size_t>(from) * num_agents + at];
  }
  double& cross(int from, int at) {
    return cross_gain[static_cast<std::size_t>(from) * num_agents + at];
  }
  bool operator==(const ChannelState&) const = default;
};

using Catalog = std::vector<std::vector<ImageMeta>>;  // [agent][image]

// Immutable sampled instance: catalog plus path-loss geometry. Fading (when
// enabled) is layered on top per episode/step by NetEnv.
struct ScenarioInstance {
  ScenarioConfig config;
  Catalog catalog;
  std::vector<double> distance_m;
  ChannelState path_loss;
};

struct StepOutcome {
  std::vector<double> sinr;
  std::vector<double> rate_bps;
  std::vector<double> tx_time_s;
  std::vector<double> interference_w;
  std::vector<CostBreakdown> cost;
  std::vector<Feasibility> feasible;
  std::vector<double> reward;
  std::vector<AgentObservation> next_obs;
  bool done = false;

  double total_cost() const;
  double total_reward() const;
};

// Fixed normalization constants for the log-scaled observation features.
// feature = (log10(x + 1e-12) - lo) / (hi - lo)
namespace obs_scale {
inline constexpr double kFloor = 1e-12;
inline constexpr double kSinrLo = -3.0, kSinrHi = 5.0;
inline constexpr double kGainLo = -12.0, kGainHi = -6.0;
inline constexpr double kInterfLo = -12.0, kInterfHi = -4.0;
double log_feature(double x, double lo, double hi);
}  // namespace obs_scale

// Samples catalog and geometry from (config, config.seed). Agents use
// independent streams so an N-agent instance extends the (N-1)-agent one.
ScenarioInstance init_scenario(const ScenarioConfig& config);

// Observations at step 0: zero previous action, floored SINR/interference.
std::vector<AgentObservation> initial_observations(const ScenarioInstance& instance,
                                                   const ChannelState& channel);

// gamma_n = p_n g_nn / (noise + sum_{m != n} p_m g_mn)
std::vector<double> compute_sinr(const ChannelState& channel, std::span<const double> power_w,
                                 double noise_power_w);
// R = B log2(1 + gamma)
std::vector<double> compute_rate(std::span<const double> sinr, double bandwidth_hz);

std::vector<Feasibility> check_feasibility(const JointAction& action, const Catalog& catalog,
                                           std::span<const double> rate_bps,
                                           const ScenarioConfig& config);

// SINR -> rate -> cost -> feasibility -> reward for one joint action on one
// channel realization. Every strategy (trainer, baselines, oracle) evaluates
// actions through this function. next_obs/done are left empty.
StepOutcome evaluate_joint_action(const ScenarioInstance& instance, const ChannelState& channel,
                                  const JointAction& action, double c_ref);

// One episode of the multi-NSP environment. Owns all mutable state.
class NetEnv {
 public:
  NetEnv(std::shared_ptr<const ScenarioInstance> instance, double c_ref,
         std::uint64_t episode_index);

  const ScenarioInstance& instance() const { return *instance_; }
  const ScenarioConfig& config() const { return instance_->config; }
  const ChannelState& channel() const { return channel_; }
  const std::vector<AgentObservation>& observations() const { return obs_; }
  // Concatenation of every agent's observation (centralized critic/gate input).
  std::vector<double> global_state() const;
  int step_index() const { return step_; }
  bool done() const { return step_ >= config().horizon; }
  double c_ref() const { return c_ref_; }

  // Throws StateError after the horizon is reached.
  StepOutcome step(const JointAction& action);

 private:
  void sample_channel();

  std::shared_ptr<const ScenarioInstance> instance_;
  double c_ref_;
  Rng fading_rng_;
  ChannelState channel_;
  std::vector<AgentObservation> obs_;
  int step_ = 0;
};

}  // namespace nspmoe
