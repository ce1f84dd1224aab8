#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nspmoe/env.hpp"
#include "nspmoe/nn.hpp"
#include "nspmoe/rng.hpp"

namespace nspmoe::policy {

// Pre-squash power variable is clamped to [-kUClamp, kUClamp] so the realized
// power keeps a relative distance of at least 1e-12 from both 0 and p_max.
inline constexpr double kUClamp = 27.0;
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kPowerFloorRel = 1e-12;
// Output-layer weights of the experts and the gate are scaled by this factor
// after Glorot initialization.
inline constexpr double kHeadInitScale = 0.01;

// Expert slots inside a gate row.
inline constexpr int kSelectionExpert = 0;
inline constexpr int kPowerExpert = 1;

double sigmoid(double x);
double log_sigmoid(double x);  // log(sigmoid(x)), stable for large |x|

// sum_i [x_i log s(l_i) + (1 - x_i) log(1 - s(l_i))]
double selection_log_prob(std::span<const double> logits, Mask mask);
// sum of Bernoulli entropies
double selection_entropy(std::span<const double> logits);

double clamp_log_std(double raw);
double clamp_u(double u);
// p_max * sigmoid(u)
double squash_power(double u, double p_max);
// log |dp/du| = log p_max + log s(u) + log(1 - s(u))
double squash_log_jacobian(double u, double p_max);
double gaussian_log_prob(double u, double mean, double log_std);
double gaussian_entropy(double log_std);
// Density of p = p_max * sigmoid(u), u ~ N(mean, exp(log_std)), at p in (0, p_max).
double squashed_power_density(double p, double mean, double log_std, double p_max);

struct ActionRecord {
  Mask mask = 0;
  double u = 0.0;        // pre-squash power variable
  double power_w = 0.0;  // p_max * sigmoid(u)
  double log_prob_sel = 0.0;
  double log_prob_pow = 0.0;  // includes the squash Jacobian correction
  double entropy_sel = 0.0;
  double entropy_pow = 0.0;   // Gaussian entropy of u
};

struct ExpertEval {
  double log_prob_sel = 0.0;
  double log_prob_pow = 0.0;
  double entropy_sel = 0.0;
  double entropy_pow = 0.0;
};

// Hidden-layer widths of each sub-network.
struct PolicyArch {
  std::vector<int> expert_hidden{64, 64};
  std::vector<int> gate_hidden{32};
  std::vector<int> critic_hidden{64, 64};
};

// Gate output: one (selection, power) simplex row per agent.
using GateRow = std::array<double, 2>;

// MoE actor-critic. Per-agent selection and power experts act on local
// observations; the central gate and critic read the global state. All
// sub-network weights live in one flat vector so a single optimizer state
// covers the whole policy.
class MoePolicy {
 public:
  MoePolicy(const ScenarioConfig& config, PolicyArch arch, std::uint64_t seed);

  int num_agents() const { return num_agents_; }
  int num_images() const { return num_images_; }
  double p_max() const { return p_max_; }
  std::uint64_t scenario_hash() const { return scenario_hash_; }
  const PolicyArch& arch() const { return arch_; }

  const nn::MlpSpec& selection_spec() const { return sel_spec_; }
  const nn::MlpSpec& power_spec() const { return pow_spec_; }
  const nn::MlpSpec& gate_spec() const { return gate_spec_; }
  const nn::MlpSpec& critic_spec() const { return critic_spec_; }

  std::size_t selection_offset(int agent) const;
  std::size_t power_offset(int agent) const;
  std::size_t gate_offset() const { return gate_offset_; }
  std::size_t critic_offset() const { return critic_offset_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<const double> selection_params(int agent) const;
  std::span<const double> power_params(int agent) const;
  std::span<const double> gate_params() const;
  std::span<const double> critic_params() const;
  const std::vector<nn::NamedSlice>& slices() const { return slices_; }

  // Expert heads: M selection logits; (mean, clamped log_std) of u.
  std::vector<double> selection_logits(int agent, const AgentObservation& obs) const;
  std::array<double, 2> power_head(int agent, const AgentObservation& obs) const;

  ActionRecord act(int agent, const AgentObservation& obs, Rng& rng, bool deterministic) const;
  // Throws DomainError if the action's power lies outside (0, p_max).
  ExpertEval log_prob_and_entropy(int agent, const AgentObservation& obs,
                                  const ActionRecord& action) const;
  std::vector<GateRow> gate_weights(std::span<const double> global_state) const;
  std::vector<double> value(std::span<const double> global_state) const;

  // Bundle document:
  //   "MOEP" | u32 version | u64 scenario_hash | u32 network_count |
  //   { u64 byte_length | NNPV document } * network_count
  // Network order: sel_0, pow_0, ..., sel_{N-1}, pow_{N-1}, gate, critic.
  std::string serialize() const;
  // Throws FormatError if the bundle is malformed or was written for a
  // different scenario.
  static MoePolicy deserialize(std::string_view bytes, const ScenarioConfig& expected);

 private:
  void check_agent(int agent) const;
  void check_finite(std::span<const double> v, const char* what) const;

  int num_agents_ = 0;
  int num_images_ = 0;
  double p_max_ = 0.0;
  std::uint64_t scenario_hash_ = 0;
  PolicyArch arch_;
  nn::MlpSpec sel_spec_, pow_spec_, gate_spec_, critic_spec_;
  std::size_t gate_offset_ = 0;
  std::size_t critic_offset_ = 0;
  std::vector<double> params_;
  std::vector<nn::NamedSlice> slices_;
};

// Pairs of logits for each agent -> per-agent 2-way softmax.
std::vector<GateRow> gate_softmax(std::span<const double> logits);

}  // namespace nspmoe::policy
