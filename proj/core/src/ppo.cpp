#include "nspmoe/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "nspmoe/config_io.hpp"
#include "nspmoe/errors.hpp"
#include "nspmoe/metrics.hpp"

namespace nspmoe::ppo {

void TrainConfig::validate() const {
  auto fail = [](const char* field, const std::string& what) { throw ConfigError(field, what); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be > 0");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon", "must lie in (0, 1)");
  if (update_epochs < 1) fail("update_epochs", "must be >= 1");
  if (total_episodes < 1) fail("total_episodes", "must be >= 1");
  if (episodes_per_iteration < 1) fail("episodes_per_iteration", "must be >= 1");
  if (minibatch_size < 1) fail("minibatch_size", "must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma", "must lie in [0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda", "must lie in [0, 1]");
  if (!(entropy_coef >= 0.0) || !std::isfinite(entropy_coef)) fail("entropy_coef", "must be >= 0");
  if (!(value_coef >= 0.0) || !std::isfinite(value_coef)) fail("value_coef", "must be >= 0");
  if (!(max_grad_norm > 0.0)) fail("max_grad_norm", "must be > 0");
  if (checkpoint_every < 1) fail("checkpoint_every", "must be >= 1");
  if (workers < 1) fail("workers", "must be >= 1");
  auto check_hidden = [&](const char* field, const std::vector<int>& h) {
    if (h.empty()) fail(field, "needs at least one hidden layer");
    for (int w : h) {
      if (w < 1) fail(field, "hidden widths must be >= 1");
    }
  };
  check_hidden("arch.expert_hidden", arch.expert_hidden);
  check_hidden("arch.gate_hidden", arch.gate_hidden);
  check_hidden("arch.critic_hidden", arch.critic_hidden);
}

std::string TrainConfig::strategy() const {
  if (advantage_mode == AdvantageMode::kMaxProp && gate_mode == GateMode::kLearned) return "moe_ppo";
  if (advantage_mode == AdvantageMode::kOwn && gate_mode == GateMode::kFrozen) return "ma_ppo";
  return "custom";
}

bool TrainConfig::operator==(const TrainConfig& o) const {
  return learning_rate == o.learning_rate && clip_epsilon == o.clip_epsilon &&
         update_epochs == o.update_epochs && total_episodes == o.total_episodes &&
         episodes_per_iteration == o.episodes_per_iteration && minibatch_size == o.minibatch_size &&
         gamma == o.gamma && gae_lambda == o.gae_lambda && entropy_coef == o.entropy_coef &&
         value_coef == o.value_coef && max_grad_norm == o.max_grad_norm && seed == o.seed &&
         advantage_mode == o.advantage_mode && gate_mode == o.gate_mode &&
         gate_weighted_entropy == o.gate_weighted_entropy &&
         renormalize_propagated == o.renormalize_propagated &&
         checkpoint_every == o.checkpoint_every && workers == o.workers &&
         arch.expert_hidden == o.arch.expert_hidden && arch.gate_hidden == o.arch.gate_hidden &&
         arch.critic_hidden == o.arch.critic_hidden;
}

TrainConfig TrainConfig::moe_ppo() { return TrainConfig{}; }

TrainConfig TrainConfig::ma_ppo() {
  TrainConfig c;
  c.advantage_mode = AdvantageMode::kOwn;
  c.gate_mode = GateMode::kFrozen;
  return c;
}

std::string to_string(AdvantageMode m) { return m == AdvantageMode::kMaxProp ? "max_prop" : "own"; }
std::string to_string(GateMode m) { return m == GateMode::kLearned ? "learned" : "frozen"; }

AdvantageMode parse_advantage_mode(const std::string& s) {
  if (s == "max_prop") return AdvantageMode::kMaxProp;
  if (s == "own") return AdvantageMode::kOwn;
  throw ConfigError("advantage_mode", "expected \"max_prop\" or \"own\", got \"" + s + "\"");
}

GateMode parse_gate_mode(const std::string& s) {
  if (s == "learned") return GateMode::kLearned;
  if (s == "frozen") return GateMode::kFrozen;
  throw ConfigError("gate_mode", "expected \"learned\" or \"frozen\", got \"" + s + "\"");
}

namespace {

void simulate_episode(const EnvFactory& env_factory, const policy::MoePolicy& policy,
                      std::uint64_t episode, std::uint64_t policy_seed, JointTransition* out,
                      EpisodeStats& stats) {
  NetEnv env = env_factory(episode);
  Rng rng(derive_seed(policy_seed, stream::kPolicy, episode));
  const int n_agents = env.config().num_agents;
  int t = 0;
  while (!env.done()) {
    JointTransition& tr = out[t];
    tr.global_state = env.global_state();
    const auto values = policy.value(tr.global_state);
    const auto& obs = env.observations();
    JointAction action;
    action.selection.resize(n_agents);
    action.power_w.resize(n_agents);
    tr.agents.resize(n_agents);
    for (int n = 0; n < n_agents; ++n) {
      auto& a = tr.agents[n];
      a.obs = obs[n];
      a.action = policy.act(n, obs[n], rng, false);
      a.value = values[n];
      action.selection[n] = a.action.mask;
      action.power_w[n] = a.action.power_w;
    }
    const auto outcome = env.step(action);
    for (int n = 0; n < n_agents; ++n) tr.agents[n].reward = outcome.reward[n];
    tr.done = outcome.done;
    stats.add(outcome);
    ++t;
  }
}

}  // namespace

RolloutBatch collect_rollout(const EnvFactory& env_factory, const policy::MoePolicy& policy,
                             std::uint64_t first_episode, int count, std::uint64_t policy_seed,
                             int workers) {
  if (count < 1) throw DomainError("collect_rollout: count must be >= 1");
  // The first environment fixes the shapes.
  const auto probe = env_factory(first_episode);
  RolloutBatch batch;
  batch.num_agents = probe.config().num_agents;
  batch.horizon = probe.config().horizon;
  batch.transitions.resize(static_cast<std::size_t>(count) * batch.horizon);
  batch.episode_stats.resize(count);
  for (int e = 0; e < count; ++e) batch.episode_indices.push_back(first_episode + e);

  auto run = [&](int e) {
    simulate_episode(env_factory, policy, first_episode + e, policy_seed,
                     batch.transitions.data() + static_cast<std::size_t>(e) * batch.horizon,
                     batch.episode_stats[e]);
  };
  workers = std::clamp(workers, 1, count);
  if (workers == 1) {
    for (int e = 0; e < count; ++e) run(e);
    return batch;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int e = w; e < count; e += workers) run(e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return batch;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T) {
    throw ShapeError("compute_gae: expected values of length T+1 and dones of length T");
  }
  GaeResult r;
  r.advantages.assign(T, 0.0);
  r.returns.assign(T, 0.0);
  double next = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * live * values[k + 1] - values[k];
    next = delta + gamma * lambda * live * next;
    r.advantages[k] = next;
    r.returns[k] = next + values[k];
  }
  return r;
}

std::vector<std::vector<double>> max_propagate(const std::vector<std::vector<double>>& advantages) {
  if (advantages.empty()) return {};
  const std::size_t T = advantages.front().size();
  std::vector<double> best(advantages.front());
  for (const auto& row : advantages) {
    if (row.size() != T) throw ShapeError("max_propagate: ragged advantage rows");
    for (std::size_t t = 0; t < T; ++t) best[t] = std::max(best[t], row[t]);
  }
  return std::vector<std::vector<double>>(advantages.size(), best);
}

void normalize(std::vector<double>& values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : values) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
}

std::vector<Sample> prepare_samples(const RolloutBatch& batch, const TrainConfig& config) {
  const int N = batch.num_agents;
  const int T = batch.horizon;
  const int E = batch.num_episodes();
  // adv[n] holds agent n's advantages for every (episode, t), episode-major.
  std::vector<std::vector<double>> adv(N), ret(N);
  std::vector<double> rewards(T), values(T + 1);
  std::vector<std::uint8_t> dones(T);
  for (int n = 0; n < N; ++n) {
    adv[n].reserve(static_cast<std::size_t>(E) * T);
    ret[n].reserve(static_cast<std::size_t>(E) * T);
    for (int e = 0; e < E; ++e) {
      for (int t = 0; t < T; ++t) {
        const auto& tr = batch.transitions[static_cast<std::size_t>(e) * T + t];
        rewards[t] = tr.agents[n].reward;
        values[t] = tr.agents[n].value;
        dones[t] = tr.done ? 1 : 0;
      }
      values[T] = 0.0;  // episodes always end at the horizon
      const auto g = compute_gae(rewards, values, dones, config.gamma, config.gae_lambda);
      adv[n].insert(adv[n].end(), g.advantages.begin(), g.advantages.end());
      ret[n].insert(ret[n].end(), g.returns.begin(), g.returns.end());
    }
    normalize(adv[n]);
  }
  if (config.advantage_mode == AdvantageMode::kMaxProp) {
    adv = max_propagate(adv);
    if (config.renormalize_propagated) {
      for (auto& a : adv) normalize(a);
    }
  }

  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(E) * T * N);
  for (std::size_t i = 0; i < batch.transitions.size(); ++i) {
    for (int n = 0; n < N; ++n) samples.push_back({&batch.transitions[i], n, adv[n][i], ret[n][i]});
  }
  return samples;
}

LossParts ppo_loss(const policy::MoePolicy& policy, std::span<const Sample> samples,
                   const TrainConfig& config, std::span<double> grad) {
  using policy::sigmoid;
  LossParts lp;
  if (samples.empty()) return lp;
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != policy.params().size()) throw ShapeError("ppo_loss: gradient size mismatch");
  const bool learned_gate = config.gate_mode == GateMode::kLearned;
  const double inv_b = 1.0 / static_cast<double>(samples.size());
  const double eps = config.clip_epsilon;
  const double c_ent = config.entropy_coef;
  const double c_v = config.value_coef;
  const int M = policy.num_images();
  const int N = policy.num_agents();

  nn::ForwardCache sel_cache, pow_cache, gate_cache, critic_cache;
  std::vector<double> d_sel(M), d_pow(2), d_gate(2 * N), d_critic(N);
  auto sub = [&](std::size_t off, std::size_t len) { return grad.subspan(off, len); };
  int clipped = 0;

  for (const auto& s : samples) {
    const int n = s.agent;
    const auto& step = s.transition->agents[n];
    const auto& rec = step.action;
    const double A = s.advantage;

    const auto logits = nn::forward(policy.selection_spec(), policy.selection_params(n), step.obs.features,
                                    want_grad ? &sel_cache : nullptr);
    const auto head = nn::forward(policy.power_spec(), policy.power_params(n), step.obs.features,
                                  want_grad ? &pow_cache : nullptr);
    const double mean = head[0];
    const double raw_log_std = head[1];
    const double log_std = policy::clamp_log_std(raw_log_std);
    const double sd = std::exp(log_std);

    const double lp_sel = policy::selection_log_prob(logits, rec.mask);
    const double lp_pow = policy::gaussian_log_prob(rec.u, mean, log_std) -
                          policy::squash_log_jacobian(rec.u, policy.p_max());
    const double h_sel = policy::selection_entropy(logits);
    const double h_pow = policy::gaussian_entropy(log_std);

    // Clipped surrogate per expert; g is dL/dlogp (zero when the clipped
    // branch is the active minimum).
    auto surrogate = [&](double new_lp, double old_lp, double& g) {
      const double r = std::exp(new_lp - old_lp);
      const double unclipped = r * A;
      const double clipped_term = std::clamp(r, 1.0 - eps, 1.0 + eps) * A;
      if (std::abs(r - 1.0) > eps) ++clipped;
      if (unclipped <= clipped_term) {
        g = unclipped;
        return unclipped;
      }
      g = 0.0;
      return clipped_term;
    };
    double g_sel = 0.0, g_pow = 0.0;
    const double L_sel = surrogate(lp_sel, rec.log_prob_sel, g_sel);
    const double L_pow = surrogate(lp_pow, rec.log_prob_pow, g_pow);

    double w0 = 0.5, w1 = 0.5;
    std::vector<double> gate_logits;
    if (learned_gate) {
      gate_logits = nn::forward(policy.gate_spec(), policy.gate_params(), s.transition->global_state,
                                want_grad ? &gate_cache : nullptr);
      const auto rows = policy::gate_softmax(gate_logits);
      w0 = rows[n][policy::kSelectionExpert];
      w1 = rows[n][policy::kPowerExpert];
    }
    const auto values = nn::forward(policy.critic_spec(), policy.critic_params(), s.transition->global_state,
                                    want_grad ? &critic_cache : nullptr);
    const double v_err = values[n] - s.ret;

    const double surr = w0 * L_sel + w1 * L_pow;
    const double e_sel = config.gate_weighted_entropy ? w0 : 1.0;
    const double e_pow = config.gate_weighted_entropy ? w1 : 1.0;
    lp.surrogate += surr;
    lp.policy -= surr;
    lp.entropy += h_sel + h_pow;
    lp.entropy_bonus += e_sel * h_sel + e_pow * h_pow;
    lp.value += c_v * v_err * v_err;
    lp.gate_selection += w0;
    lp.approx_kl += (rec.log_prob_sel - lp_sel) + (rec.log_prob_pow - lp_pow);

    if (!want_grad) continue;

    for (int i = 0; i < M; ++i) {
      const double sg = sigmoid(logits[i]);
      const double x = mask_bit(rec.mask, i) ? 1.0 : 0.0;
      d_sel[i] = inv_b * (-w0 * g_sel * (x - sg) + c_ent * e_sel * logits[i] * sg * (1.0 - sg));
    }
    nn::backward_accumulate(policy.selection_spec(), policy.selection_params(n), sel_cache, d_sel,
                            sub(policy.selection_offset(n), policy.selection_spec().param_count()));

    const double z = (rec.u - mean) / sd;
    const bool inside = raw_log_std > policy::kLogStdMin && raw_log_std < policy::kLogStdMax;
    d_pow[0] = inv_b * (-w1 * g_pow * z / sd);
    d_pow[1] = inside ? inv_b * (-w1 * g_pow * (z * z - 1.0) - c_ent * e_pow) : 0.0;
    nn::backward_accumulate(policy.power_spec(), policy.power_params(n), pow_cache, d_pow,
                            sub(policy.power_offset(n), policy.power_spec().param_count()));

    if (learned_gate) {
      std::fill(d_gate.begin(), d_gate.end(), 0.0);
      double dz0 = inv_b * w0 * w1 * (L_pow - L_sel);
      if (config.gate_weighted_entropy) dz0 += inv_b * c_ent * w0 * w1 * (h_pow - h_sel);
      d_gate[2 * n] = dz0;
      d_gate[2 * n + 1] = -dz0;
      nn::backward_accumulate(policy.gate_spec(), policy.gate_params(), gate_cache, d_gate,
                              sub(policy.gate_offset(), policy.gate_spec().param_count()));
    }

    std::fill(d_critic.begin(), d_critic.end(), 0.0);
    d_critic[n] = inv_b * 2.0 * c_v * v_err;
    nn::backward_accumulate(policy.critic_spec(), policy.critic_params(), critic_cache, d_critic,
                            sub(policy.critic_offset(), policy.critic_spec().param_count()));
  }

  lp.surrogate *= inv_b;
  lp.policy *= inv_b;
  lp.entropy *= inv_b;
  lp.entropy_bonus *= inv_b;
  lp.value *= inv_b;
  lp.gate_selection *= inv_b;
  lp.approx_kl *= inv_b;
  lp.clip_fraction = static_cast<double>(clipped) * inv_b / 2.0;
  lp.total = lp.policy - c_ent * lp.entropy_bonus + lp.value;
  return lp;
}

namespace {

void dump_minibatch(const std::filesystem::path& path, std::span<const Sample> samples, const LossParts& loss) {
  nlohmann::json j;
  j["loss"] = {{"total", std::isfinite(loss.total) ? nlohmann::json(loss.total) : nlohmann::json("non-finite")}};
  auto& rows = j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    const auto& a = s.transition->agents[s.agent];
    rows.push_back({{"agent", s.agent},
                    {"advantage", s.advantage},
                    {"return", s.ret},
                    {"obs", a.obs.features},
                    {"mask", a.action.mask},
                    {"u", a.action.u},
                    {"log_prob_sel", a.action.log_prob_sel},
                    {"log_prob_pow", a.action.log_prob_pow},
                    {"global_state", s.transition->global_state}});
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  f << j.dump(1) << '\n';
}

bool finite_parts(const LossParts& l) {
  return std::isfinite(l.total) && std::isfinite(l.policy) && std::isfinite(l.value) && std::isfinite(l.entropy);
}

}  // namespace

UpdateStats ppo_update(const RolloutBatch& batch, policy::MoePolicy& policy, nn::AdamState& adam,
                       const TrainConfig& config, Rng& shuffle_rng, const std::filesystem::path& diagnostics_path) {
  auto samples = prepare_samples(batch, config);
  UpdateStats stats;
  std::vector<double> grad(policy.params().size());
  const std::size_t mb = static_cast<std::size_t>(config.minibatch_size);
  double norm_sum = 0.0;
  for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
    // Fisher-Yates with the project's own integer sampler so the order does
    // not depend on the standard library implementation.
    for (std::size_t i = samples.size(); i > 1; --i) {
      const auto j = uniform_int(shuffle_rng, 0, i - 1);
      std::swap(samples[i - 1], samples[j]);
    }
    for (std::size_t begin = 0; begin < samples.size(); begin += mb) {
      const auto chunk = std::span<const Sample>(samples).subspan(begin, std::min(mb, samples.size() - begin));
      std::fill(grad.begin(), grad.end(), 0.0);
      const auto loss = ppo_loss(policy, chunk, config, grad);
      if (!finite_parts(loss)) {
        if (!diagnostics_path.empty()) dump_minibatch(diagnostics_path, chunk, loss);
        throw NumericError("non-finite PPO loss in epoch " + std::to_string(epoch) +
                           (diagnostics_path.empty() ? std::string()
                                                     : "; minibatch written to " + diagnostics_path.string()));
      }
      norm_sum += nn::clip_global_norm(grad, config.max_grad_norm);
      nn::adam_step(policy.params(), grad, adam, policy.slices());
      auto& m = stats.mean;
      m.total += loss.total;
      m.policy += loss.policy;
      m.value += loss.value;
      m.entropy += loss.entropy;
      m.gate_selection += loss.gate_selection;
      m.clip_fraction += loss.clip_fraction;
      m.approx_kl += loss.approx_kl;
      m.surrogate += loss.surrogate;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double k = 1.0 / stats.minibatches;
    auto& m = stats.mean;
    m.total *= k;
    m.policy *= k;
    m.value *= k;
    m.entropy *= k;
    m.gate_selection *= k;
    m.clip_fraction *= k;
    m.approx_kl *= k;
    m.surrogate *= k;
    stats.grad_norm = norm_sum * k;
  }
  return stats;
}

EvalSummary summarize(std::span<const EpisodeStats> episodes) {
  EvalSummary s;
  s.episodes = static_cast<int>(episodes.size());
  if (episodes.empty()) return s;
  const double n = static_cast<double>(episodes.size());
  long steps = 0, any = 0;
  std::array<long, 4> flags{};
  for (const auto& e : episodes) {
    s.mean_reward += e.cumulative_reward;
    s.mean_cost += e.total_cost;
    steps += e.agent_steps;
    any += e.any_violation;
    for (int k = 0; k < 4; ++k) flags[k] += e.violations[k];
  }
  s.mean_reward /= n;
  s.mean_cost /= n;
  if (episodes.size() > 1) {
    double vr = 0.0, vc = 0.0;
    for (const auto& e : episodes) {
      vr += (e.cumulative_reward - s.mean_reward) * (e.cumulative_reward - s.mean_reward);
      vc += (e.total_cost - s.mean_cost) * (e.total_cost - s.mean_cost);
    }
    s.std_reward = std::sqrt(vr / (n - 1.0));
    s.std_cost = std::sqrt(vc / (n - 1.0));
  }
  if (steps > 0) {
    s.violation_rate = static_cast<double>(any) / static_cast<double>(steps);
    for (int k = 0; k < 4; ++k) s.violation_rates[k] = static_cast<double>(flags[k]) / static_cast<double>(steps);
  }
  return s;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::ordered_json summary_json(const EvalSummary& s) {
  nlohmann::ordered_json j;
  j["episodes"] = s.episodes;
  j["mean_reward"] = s.mean_reward;
  j["std_reward"] = s.std_reward;
  j["mean_cost"] = s.mean_cost;
  j["std_cost"] = s.std_cost;
  j["violation_rate"] = s.violation_rate;
  j["violation_rates"] = s.violation_rates;
  return j;
}

}  // namespace

TrainResult train(const ScenarioConfig& scenario, const TrainConfig& config, const std::filesystem::path& out_dir) {
  scenario.validate();
  config.validate();
  const auto instance = std::make_shared<const ScenarioInstance>(init_scenario(scenario));
  const double c_ref = baselines::reference_cost(*instance);
  TrainResult result{{}, {}, policy::MoePolicy(scenario, config.arch, derive_seed(config.seed, stream::kInit, 0)),
                     c_ref};
  auto& pol = result.policy;
  auto adam = nn::AdamState::zeros(pol.params().size(), config.learning_rate);
  Rng shuffle_rng(derive_seed(config.seed, stream::kShuffle, 0));
  const std::uint64_t policy_seed = derive_seed(config.seed, stream::kPolicy, 0);
  const EnvFactory factory = [&](std::uint64_t ep) { return NetEnv(instance, c_ref, ep); };

  std::optional<metrics::MetricsWriter> writer;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir / "checkpoints");
    writer.emplace(out_dir, config.strategy(), config.seed);
  }

  const auto start = std::chrono::steady_clock::now();
  int done_episodes = 0;
  int iteration = 0;
  while (done_episodes < config.total_episodes) {
    const int count = std::min(config.episodes_per_iteration, config.total_episodes - done_episodes);
    const auto batch = collect_rollout(factory, pol, static_cast<std::uint64_t>(done_episodes), count,
                                       policy_seed, config.workers);
    const auto diag = out_dir.empty() ? std::filesystem::path{}
                                      : out_dir / ("diagnostics_iter_" + std::to_string(iteration + 1) + ".json");
    const auto upd = ppo_update(batch, pol, adam, config, shuffle_rng, diag);
    done_episodes += count;
    ++iteration;
    result.episodes.insert(result.episodes.end(), batch.episode_stats.begin(), batch.episode_stats.end());

    const auto s = summarize(batch.episode_stats);
    IterationMetrics m;
    m.iteration = iteration;
    m.episodes = done_episodes;
    m.mean_reward = s.mean_reward;
    m.mean_cost = s.mean_cost;
    m.violation_rate = s.violation_rate;
    m.violation_rates = s.violation_rates;
    m.policy_loss = upd.mean.policy;
    m.value_loss = upd.mean.value;
    m.entropy = upd.mean.entropy;
    m.gate_selection = upd.mean.gate_selection;
    m.gate_power = 1.0 - upd.mean.gate_selection;
    m.clip_fraction = upd.mean.clip_fraction;
    m.approx_kl = upd.mean.approx_kl;
    m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.iterations.push_back(m);
    if (writer) {
      writer->write(m);
      if (iteration % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "iter_%06d.ckpt", iteration);
        write_file(out_dir / "checkpoints" / name, pol.serialize());
      }
    }
  }

  if (!out_dir.empty()) {
    write_file(out_dir / "final.ckpt", pol.serialize());
    const std::size_t window = std::min<std::size_t>(kFinalWindowEpisodes, result.episodes.size());
    const auto final_window =
        summarize(std::span<const EpisodeStats>(result.episodes).subspan(result.episodes.size() - window));
    nlohmann::ordered_json j;
    j["strategy"] = config.strategy();
    j["seed"] = config.seed;
    j["num_agents"] = scenario.num_agents;
    j["episodes"] = done_episodes;
    j["iterations"] = iteration;
    j["c_ref"] = c_ref;
    j["final_window"] = summary_json(final_window);
    write_file(out_dir / "summary.json", j.dump(2) + "\n");
  }
  return result;
}

EvalSummary evaluate(const policy::MoePolicy& policy, const ScenarioConfig& scenario, int episodes,
                     bool deterministic, std::uint64_t seed, std::uint64_t first_episode) {
  if (episodes < 1) throw DomainError("evaluate: episodes must be >= 1");
  if (policy.scenario_hash() != scenario_hash(scenario)) {
    throw FormatError("evaluate: policy was built for a different scenario");
  }
  const auto instance = std::make_shared<const ScenarioInstance>(init_scenario(scenario));
  const double c_ref = baselines::reference_cost(*instance);
  std::vector<EpisodeStats> stats(episodes);
  const int n_agents = scenario.num_agents;
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t ep = first_episode + static_cast<std::uint64_t>(e);
    Rng rng(derive_seed(seed, stream::kPolicy, ep));
    NetEnv env(instance, c_ref, ep);
    while (!env.done()) {
      JointAction a;
      a.selection.resize(n_agents);
      a.power_w.resize(n_agents);
      for (int n = 0; n < n_agents; ++n) {
        const auto rec = policy.act(n, env.observations()[n], rng, deterministic);
        a.selection[n] = rec.mask;
        a.power_w[n] = rec.power_w;
      }
      stats[e].add(env.step(a));
    }
  }
  return summarize(stats);
}

EvalSummary evaluate_checkpoint(const std::filesystem::path& checkpoint, const ScenarioConfig& scenario,
                                int episodes, bool deterministic, std::uint64_t seed) {
  std::ifstream f(checkpoint, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + checkpoint.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto pol = policy::MoePolicy::deserialize(bytes, scenario);
  return evaluate(pol, scenario, episodes, deterministic, seed);
}

}  // namespace nspmoe::ppo
