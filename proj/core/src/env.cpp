#include "nspmoe/env.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "nspmoe/errors.hpp"

namespace nspmoe {

namespace {

void require(bool ok, const char* field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace

void ScenarioConfig::validate() const {
  require(num_agents >= 1, "num_agents", "must be >= 1");
  require(images_per_agent >= 1, "images_per_agent", "must be >= 1");
  require(images_per_agent <= kMaxImagesPerAgent, "images_per_agent",
          "must be <= " + std::to_string(kMaxImagesPerAgent));
  require(horizon >= 1, "horizon", "must be >= 1");
  require(bandwidth_hz > 0.0, "bandwidth_hz", "must be > 0");
  require(noise_power_w > 0.0, "noise_power_w", "must be > 0");
  require(p_max_w > 0.0, "p_max_w", "must be > 0");
  require(min_images >= 0, "min_images", "must be >= 0");
  require(min_images <= images_per_agent, "min_images", "must not exceed images_per_agent");
  require(q_min >= 0.0 && std::isfinite(q_min), "q_min", "must be finite and >= 0");
  require(r_min_bps > 0.0, "r_min_bps", "must be > 0");
  require(payload_bytes > 0, "payload_bytes", "must be > 0");
  require(image_bytes_range[0] > 0, "image_bytes_range", "lower bound must be > 0");
  require(image_bytes_range[0] <= image_bytes_range[1], "image_bytes_range", "lo must be <= hi");
  require(pathloss_exponent > 0.0, "pathloss_exponent", "must be > 0");
  require(reference_gain > 0.0, "reference_gain", "must be > 0");
  require(cell_radius_m > 0.0, "cell_radius_m", "must be > 0");
  require(min_distance_m > 0.0, "min_distance_m", "must be > 0");
  require(min_distance_m <= cell_radius_m, "min_distance_m", "must not exceed cell_radius_m");
  require(interference_coupling > 0.0 && interference_coupling <= 1.0, "interference_coupling",
          "must be in (0, 1]");
  require(alpha > 0.0, "alpha", "must be > 0");
  require(beta >= 0.0, "beta", "must be >= 0");
  require(proc_cost_per_mb > 0.0, "proc_cost_per_mb", "must be > 0");
  require(circuit_power_w >= 0.0 && std::isfinite(circuit_power_w), "circuit_power_w",
          "must be finite and >= 0");
}

double ScenarioConfig::sinr_target() const { return std::exp2(r_min_bps / bandwidth_hz) - 1.0; }

double StepOutcome::total_cost() const {
  double s = 0.0;
  for (const auto& c : cost) s += c.total;
  return s;
}

double StepOutcome::total_reward() const { return std::accumulate(reward.begin(), reward.end(), 0.0); }

double obs_scale::log_feature(double x, double lo, double hi) {
  return (std::log10(x + kFloor) - lo) / (hi - lo);
}

ScenarioInstance init_scenario(const ScenarioConfig& config) {
  config.validate();
  const int n_agents = config.num_agents;
  const int n_images = config.images_per_agent;

  ScenarioInstance inst;
  inst.config = config;
  inst.catalog.resize(n_agents);
  inst.distance_m.resize(n_agents);
  inst.path_loss.num_agents = n_agents;
  inst.path_loss.direct_gain.resize(n_agents);
  inst.path_loss.cross_gain.assign(static_cast<std::size_t>(n_agents) * n_agents, 0.0);

  const double r0 = config.min_distance_m;
  const double r1 = config.cell_radius_m;
  for (int n = 0; n < n_agents; ++n) {
    Rng pos_rng(derive_seed(config.seed, stream::kPosition, static_cast<std::uint64_t>(n)));
    // Uniform over the annulus area.
    const double u = uniform01(pos_rng);
    const double d = std::sqrt(r0 * r0 + u * (r1 * r1 - r0 * r0));
    inst.distance_m[n] = d;
    inst.path_loss.direct_gain[n] = config.reference_gain * std::pow(d, -config.pathloss_exponent);

    Rng cat_rng(derive_seed(config.seed, stream::kCatalog, static_cast<std::uint64_t>(n)));
    auto& row = inst.catalog[n];
    row.resize(n_images);
    for (auto& img : row) {
      img.size_bytes = uniform_int(cat_rng, config.image_bytes_range[0], config.image_bytes_range[1]);
      img.quality = uniform(cat_rng, 0.5, 1.5);
      img.proc_cost = config.proc_cost_per_mb * static_cast<double>(img.size_bytes) / 1e6;
    }
  }
  for (int m = 0; m < n_agents; ++m) {
    for (int n = 0; n < n_agents; ++n) {
      inst.path_loss.cross(m, n) = (m == n)
                                       ? inst.path_loss.direct_gain[m]
                                       : config.interference_coupling * inst.path_loss.direct_gain[m];
    }
  }
  return inst;
}

std::vector<AgentObservation> initial_observations(const ScenarioInstance& instance,
                                                   const ChannelState& channel) {
  const auto& cfg = instance.config;
  std::vector<AgentObservation> obs(cfg.num_agents);
  for (int n = 0; n < cfg.num_agents; ++n) {
    auto& f = obs[n].features;
    f.assign(cfg.obs_dim(), 0.0);
    const int m = cfg.images_per_agent;
    f[m + 0] = 0.0;
    f[m + 1] = obs_scale::log_feature(0.0, obs_scale::kSinrLo, obs_scale::kSinrHi);
    f[m + 2] = obs_scale::log_feature(channel.direct_gain[n], obs_scale::kGainLo, obs_scale::kGainHi);
    f[m + 3] = obs_scale::log_feature(0.0, obs_scale::kInterfLo, obs_scale::kInterfHi);
  }
  return obs;
}

std::vector<double> compute_sinr(const ChannelState& channel, std::span<const double> power_w,
                                 double noise_power_w) {
  const int n_agents = channel.num_agents;
  if (static_cast<int>(power_w.size()) != n_agents) {
    throw ShapeError("compute_sinr: power vector length does not match agent count");
  }
  for (double p : power_w) {
    if (!(p > 0.0) || !std::isfinite(p)) throw DomainError("compute_sinr: power must be positive and finite");
  }
  std::vector<double> sinr(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    double interference = 0.0;
    for (int m = 0; m < n_agents; ++m) {
      if (m != n) interference += power_w[m] * channel.cross(m, n);
    }
    sinr[n] = power_w[n] * channel.direct_gain[n] / (noise_power_w + interference);
  }
  return sinr;
}

std::vector<double> compute_rate(std::span<const double> sinr, double bandwidth_hz) {
  std::vector<double> rate(sinr.size());
  for (std::size_t i = 0; i < sinr.size(); ++i) {
    if (!(sinr[i] >= 0.0)) throw DomainError("compute_rate: SINR must be >= 0");
    rate[i] = bandwidth_hz * std::log2(1.0 + sinr[i]);
  }
  return rate;
}

std::vector<Feasibility> check_feasibility(const JointAction& action, const Catalog& catalog,
                                           std::span<const double> rate_bps,
                                           const ScenarioConfig& config) {
  const int n_agents = config.num_agents;
  std::vector<Feasibility> flags(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    const Mask mask = action.selection[n];
    const double p = action.power_w[n];
    double quality = 0.0;
    for (int i = 0; i < config.images_per_agent; ++i) {
      if (mask_bit(mask, i)) quality += catalog[n][i].quality;
    }
    auto& f = flags[n];
    f.power_ok = p > 0.0 && p <= config.p_max_w;
    f.count_ok = mask_count(mask) >= config.min_images;
    f.quality_ok = quality >= config.q_min;
    f.qos_ok = rate_bps[n] >= config.r_min_bps;
  }
  return flags;
}

StepOutcome evaluate_joint_action(const ScenarioInstance& instance, const ChannelState& channel,
                                  const JointAction& action, double c_ref) {
  const auto& cfg = instance.config;
  const int n_agents = cfg.num_agents;
  if (static_cast<int>(action.selection.size()) != n_agents ||
      static_cast<int>(action.power_w.size()) != n_agents) {
    throw ShapeError("joint action does not match agent count");
  }
  const Mask valid = full_mask(cfg.images_per_agent);
  for (Mask m : action.selection) {
    if ((m & ~valid) != 0) throw ShapeError("selection mask has bits beyond images_per_agent");
  }

  StepOutcome out;
  out.sinr = compute_sinr(channel, action.power_w, cfg.noise_power_w);
  out.rate_bps = compute_rate(out.sinr, cfg.bandwidth_hz);
  out.tx_time_s.resize(n_agents);
  out.interference_w.resize(n_agents);
  out.cost.resize(n_agents);
  out.reward.resize(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    double interference = 0.0;
    for (int m = 0; m < n_agents; ++m) {
      if (m != n) interference += action.power_w[m] * channel.cross(m, n);
    }
    out.interference_w[n] = interference;
    out.tx_time_s[n] = 8.0 * static_cast<double>(cfg.payload_bytes) / out.rate_bps[n];
    const double proc = cost::selection_cost(instance.catalog[n], action.selection[n], cfg.alpha);
    const double tx = cost::transmission_cost(action.power_w[n] + cfg.circuit_power_w, out.rate_bps[n],
                                              static_cast<double>(cfg.payload_bytes), cfg.beta);
    out.cost[n] = cost::breakdown(proc, tx);
  }
  out.feasible = check_feasibility(action, instance.catalog, out.rate_bps, cfg);
  for (int n = 0; n < n_agents; ++n) {
    const auto& f = out.feasible[n];
    out.reward[n] = cfg.soft_penalty ? cost::soft_reward(out.cost[n].total, f.violations(), c_ref)
                                     : cost::reward(out.cost[n].total, f.all(), c_ref);
  }
  return out;
}

NetEnv::NetEnv(std::shared_ptr<const ScenarioInstance> instance, double c_ref,
               std::uint64_t episode_index)
    : instance_(std::move(instance)),
      c_ref_(c_ref),
      fading_rng_(derive_seed(instance_->config.seed, stream::kFading, episode_index)) {
  if (!(c_ref_ > 0.0)) throw DomainError("NetEnv: reference cost must be positive");
  sample_channel();
  obs_ = initial_observations(*instance_, channel_);
}

void NetEnv::sample_channel() {
  channel_ = instance_->path_loss;
  if (!config().fading) return;
  const int n_agents = channel_.num_agents;
  for (int m = 0; m < n_agents; ++m) {
    for (int n = 0; n < n_agents; ++n) {
      channel_.cross(m, n) *= unit_exponential(fading_rng_);
    }
  }
  for (int n = 0; n < n_agents; ++n) channel_.direct_gain[n] = channel_.cross(n, n);
}

std::vector<double> NetEnv::global_state() const {
  std::vector<double> g;
  g.reserve(static_cast<std::size_t>(config().global_dim()));
  for (const auto& o : obs_) g.insert(g.end(), o.features.begin(), o.features.end());
  return g;
}

StepOutcome NetEnv::step(const JointAction& action) {
  if (done()) throw StateError("NetEnv::step called after the episode finished");
  const auto& cfg = config();
  StepOutcome out = evaluate_joint_action(*instance_, channel_, action, c_ref_);
  ++step_;
  out.done = done();
  if (cfg.fading) sample_channel();

  const int m_images = cfg.images_per_agent;
  out.next_obs.resize(cfg.num_agents);
  for (int n = 0; n < cfg.num_agents; ++n) {
    auto& f = out.next_obs[n].features;
    f.assign(cfg.obs_dim(), 0.0);
    for (int i = 0; i < m_images; ++i) f[i] = mask_bit(action.selection[n], i) ? 1.0 : 0.0;
    f[m_images + 0] = action.power_w[n] / cfg.p_max_w;
    f[m_images + 1] = obs_scale::log_feature(out.sinr[n], obs_scale::kSinrLo, obs_scale::kSinrHi);
    f[m_images + 2] = obs_scale::log_feature(channel_.direct_gain[n], obs_scale::kGainLo, obs_scale::kGainHi);
    f[m_images + 3] = obs_scale::log_feature(out.interference_w[n], obs_scale::kInterfLo, obs_scale::kInterfHi);
    f[m_images + 4] = static_cast<double>(step_) / cfg.horizon;
  }
  obs_ = out.next_obs;
  return out;
}

}  // namespace nspmoe
