#include "nspmoe/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>

#include "nspmoe/config_io.hpp"
#include "nspmoe/errors.hpp"

namespace nspmoe {

void EpisodeStats::add(const StepOutcome& out) {
  for (std::size_t n = 0; n < out.cost.size(); ++n) {
    cumulative_reward += out.reward[n];
    total_cost += out.cost[n].total;
    const auto& f = out.feasible[n];
    violations[0] += !f.power_ok;
    violations[1] += !f.count_ok;
    violations[2] += !f.quality_ok;
    violations[3] += !f.qos_ok;
    any_violation += !f.all();
    ++agent_steps;
  }
}

}  // namespace nspmoe

namespace nspmoe::baselines {

JointAction random_policy(const ScenarioInstance& instance, Rng& rng, bool repair) {
  const auto& cfg = instance.config;
  JointAction a;
  a.selection.resize(cfg.num_agents);
  a.power_w.resize(cfg.num_agents);
  for (int n = 0; n < cfg.num_agents; ++n) {
    Mask mask = 0;
    for (int i = 0; i < cfg.images_per_agent; ++i) {
      if (uniform01(rng) < 0.5) mask |= Mask{1} << i;
    }
    while (repair && mask_count(mask) < cfg.min_images) {
      std::vector<int> free;
      for (int i = 0; i < cfg.images_per_agent; ++i) {
        if (!mask_bit(mask, i)) free.push_back(i);
      }
      const auto pick = uniform_int(rng, 0, free.size() - 1);
      mask |= Mask{1} << free[pick];
    }
    a.selection[n] = mask;
    a.power_w[n] = cfg.p_max_w * uniform01_open_low(rng);
  }
  return a;
}

GreedySelection greedy_selection(std::span<const ImageMeta> row, const ScenarioConfig& config) {
  std::vector<int> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return row[a].quality / row[a].proc_cost > row[b].quality / row[b].proc_cost;
  });
  GreedySelection out;
  double quality = 0.0;
  for (int i : order) {
    if (mask_count(out.mask) >= config.min_images && quality >= config.q_min) break;
    out.mask |= Mask{1} << i;
    quality += row[i].quality;
  }
  out.feasible = mask_count(out.mask) >= config.min_images && quality >= config.q_min;
  if (!out.feasible) out.mask = full_mask(static_cast<int>(row.size()));
  return out;
}

std::vector<double> greedy_power(const ChannelState& channel, const ScenarioConfig& config,
                                 int* sweeps_used) {
  const int n_agents = channel.num_agents;
  const double target = config.sinr_target() * (1.0 + kGreedyQosMargin);
  std::vector<double> p(n_agents, config.p_max_w / 2.0);
  std::vector<double> next(n_agents);
  int sweep = 0;
  while (sweep < kGreedyMaxSweeps) {
    ++sweep;
    double max_change = 0.0;
    for (int n = 0; n < n_agents; ++n) {
      double interference = config.noise_power_w;
      for (int m = 0; m < n_agents; ++m) {
        if (m != n) interference += p[m] * channel.cross(m, n);
      }
      next[n] = std::min(config.p_max_w, target * interference / channel.direct_gain[n]);
      max_change = std::max(max_change, std::abs(next[n] - p[n]));
    }
    p.swap(next);
    if (max_change < kGreedyTolW) break;
  }
  if (sweeps_used) *sweeps_used = sweep;
  return p;
}

GreedyResult greedy_policy(const Catalog& catalog, const ChannelState& channel,
                           const ScenarioConfig& config) {
  GreedyResult r;
  r.action.selection.resize(config.num_agents);
  r.selection_feasible.resize(config.num_agents);
  for (int n = 0; n < config.num_agents; ++n) {
    const auto sel = greedy_selection(catalog[n], config);
    r.action.selection[n] = sel.mask;
    r.selection_feasible[n] = sel.feasible;
  }
  r.action.power_w = greedy_power(channel, config);
  return r;
}

void check_oracle_guard(const ScenarioConfig& config, int power_levels) {
  if (config.num_agents > kOracleMaxAgents || config.images_per_agent > kOracleMaxImages ||
      power_levels < 1 || power_levels > kOracleMaxPowerLevels || config.horizon != 1) {
    throw CapacityError("exhaustive oracle limited to N <= " + std::to_string(kOracleMaxAgents) +
                        ", M <= " + std::to_string(kOracleMaxImages) + ", 1 <= power_levels <= " +
                        std::to_string(kOracleMaxPowerLevels) + ", horizon == 1 (got N=" +
                        std::to_string(config.num_agents) + ", M=" + std::to_string(config.images_per_agent) +
                        ", L=" + std::to_string(power_levels) + ", T=" + std::to_string(config.horizon) + ")");
  }
}

namespace {

struct Candidate {
  double cost = std::numeric_limits<double>::infinity();
  std::uint64_t index = std::numeric_limits<std::uint64_t>::max();
  bool feasible = false;
};

// Enumerates joint actions whose outermost option lies in [first_begin, first_end).
Candidate enumerate_range(const ScenarioInstance& instance, const ChannelState& channel, int levels,
                          std::uint64_t first_begin, std::uint64_t first_end, std::uint64_t& evaluated) {
  const auto& cfg = instance.config;
  const int n_agents = cfg.num_agents;
  const std::uint64_t options = (std::uint64_t{1} << cfg.images_per_agent) * levels;
  std::vector<std::uint64_t> digit(n_agents, 0);
  digit[0] = first_begin;
  JointAction a;
  a.selection.resize(n_agents);
  a.power_w.resize(n_agents);
  Candidate best;
  if (first_begin >= first_end) return best;
  while (true) {
    std::uint64_t index = 0;
    for (int n = 0; n < n_agents; ++n) {
      a.selection[n] = digit[n] / levels;
      a.power_w[n] = cfg.p_max_w * static_cast<double>(digit[n] % levels + 1) / levels;
      index = index * options + digit[n];
    }
    const auto out = evaluate_joint_action(instance, channel, a, 1.0);
    ++evaluated;
    const bool feasible = std::all_of(out.feasible.begin(), out.feasible.end(),
                                      [](const Feasibility& f) { return f.all(); });
    if (feasible) {
      const double c = out.total_cost();
      if (c < best.cost || (c == best.cost && index < best.index)) best = {c, index, true};
    }
    // Odometer, innermost agent last.
    int k = n_agents - 1;
    while (k > 0) {
      if (++digit[k] < options) break;
      digit[k] = 0;
      --k;
    }
    if (k == 0 && ++digit[0] >= first_end) break;
  }
  return best;
}

}  // namespace

OracleResult exhaustive_oracle(const ScenarioInstance& instance, const ChannelState& channel,
                               int power_levels, int partitions) {
  const auto& cfg = instance.config;
  check_oracle_guard(cfg, power_levels);
  const std::uint64_t options = (std::uint64_t{1} << cfg.images_per_agent) * power_levels;
  partitions = std::max(1, partitions);

  OracleResult res;
  Candidate best;
  for (int part = 0; part < partitions; ++part) {
    const std::uint64_t b = options * part / partitions;
    const std::uint64_t e = options * (part + 1) / partitions;
    const auto c = enumerate_range(instance, channel, power_levels, b, e, res.evaluated);
    if (c.feasible && (c.cost < best.cost || (c.cost == best.cost && c.index < best.index))) best = c;
  }
  res.feasible = best.feasible;
  res.best_action.selection.assign(cfg.num_agents, 0);
  res.best_action.power_w.assign(cfg.num_agents, 0.0);
  res.power_index.assign(cfg.num_agents, 0);
  if (!best.feasible) return res;
  res.best_cost = best.cost;
  std::uint64_t idx = best.index;
  for (int n = cfg.num_agents - 1; n >= 0; --n) {
    const std::uint64_t d = idx % options;
    idx /= options;
    res.best_action.selection[n] = d / power_levels;
    res.power_index[n] = static_cast<int>(d % power_levels) + 1;
    res.best_action.power_w[n] = cfg.p_max_w * static_cast<double>(res.power_index[n]) / power_levels;
  }
  return res;
}

EpisodeStats run_episode(std::shared_ptr<const ScenarioInstance> instance, double c_ref,
                         std::uint64_t episode_index, const JointPolicyFn& policy, Rng& rng) {
  NetEnv env(std::move(instance), c_ref, episode_index);
  EpisodeStats stats;
  while (!env.done()) stats.add(env.step(policy(env, rng)));
  return stats;
}

JointPolicyFn random_strategy(bool repair) {
  return [repair](const NetEnv& env, Rng& rng) { return random_policy(env.instance(), rng, repair); };
}

JointPolicyFn greedy_strategy() {
  return [](const NetEnv& env, Rng&) {
    return greedy_policy(env.instance().catalog, env.channel(), env.config()).action;
  };
}

double reference_cost(const ScenarioInstance& instance) {
  static std::mutex mu;
  static std::map<std::uint64_t, double> cache;
  const auto key = scenario_hash(instance.config);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto shared = std::make_shared<const ScenarioInstance>(instance);
  const auto policy = random_strategy(true);
  double feasible_cost = 0.0, all_cost = 0.0;
  long feasible_steps = 0, all_steps = 0;
  for (int e = 0; e < kCalibrationEpisodes; ++e) {
    Rng rng(derive_seed(instance.config.seed, stream::kCalibrate, static_cast<std::uint64_t>(e)));
    // Episode indices are offset so calibration never shares fading draws
    // with training episodes.
    NetEnv env(shared, 1.0, (std::uint64_t{1} << 40) + static_cast<std::uint64_t>(e));
    while (!env.done()) {
      const auto out = env.step(policy(env, rng));
      for (std::size_t n = 0; n < out.cost.size(); ++n) {
        all_cost += out.cost[n].total;
        ++all_steps;
        if (out.feasible[n].all()) {
          feasible_cost += out.cost[n].total;
          ++feasible_steps;
        }
      }
    }
  }
  const double c_ref = feasible_steps > 0 ? feasible_cost / static_cast<double>(feasible_steps)
                                          : all_cost / static_cast<double>(all_steps);
  std::lock_guard lock(mu);
  cache.emplace(key, c_ref);
  return c_ref;
}

}  // namespace nspmoe::baselines
