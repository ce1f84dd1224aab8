#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "nspmoe/baselines.hpp"
#include "nspmoe/errors.hpp"
#include "nspmoe/ppo.hpp"

using namespace nspmoe;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nspmoe_test_ppo_" + name);
  fs::remove_all(p);
  return p;
}

ScenarioConfig mini_scenario() {
  ScenarioConfig c;
  c.num_agents = 2;
  c.images_per_agent = 4;
  c.horizon = 3;
  return c;
}

ppo::EnvFactory factory_for(const ScenarioConfig& c, double c_ref = 100.0) {
  auto inst = std::make_shared<const ScenarioInstance>(init_scenario(c));
  return [inst, c_ref](std::uint64_t ep) { return NetEnv(inst, c_ref, ep); };
}

ppo::TrainConfig mini_train() {
  ppo::TrainConfig t;
  t.arch = {{4, 4}, {4}, {4, 4}};
  return t;
}

// Nudges every parameter so ratios differ from one.
void perturb(policy::MoePolicy& pol, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& x : pol.params()) x += uniform(rng, -scale, scale);
}

double brute_force_advantage(const std::vector<double>& r, const std::vector<double>& v,
                             const std::vector<std::uint8_t>& d, double g, double l, std::size_t t) {
  double a = 0.0, w = 1.0;
  for (std::size_t k = t; k < r.size(); ++k) {
    const double live = d[k] ? 0.0 : 1.0;
    a += w * (r[k] + g * live * v[k + 1] - v[k]);
    if (d[k]) break;
    w *= g * l;
  }
  return a;
}

}  // namespace

TEST(Gae, LambdaZeroIsTdError) {
  const std::vector<double> r{1, 2, 3}, v{0.5, 0.2, -0.1, 0.7};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const auto g = ppo::compute_gae(r, v, d, 0.9, 0.0);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(g.advantages[t], r[t] + 0.9 * v[t + 1] - v[t]);
}

TEST(Gae, GammaZeroIsRewardMinusValue) {
  const std::vector<double> r{1, 2, 3}, v{0.5, 0.2, -0.1, 0.7};
  const std::vector<std::uint8_t> d{0, 0, 1};
  const auto g = ppo::compute_gae(r, v, d, 0.0, 0.95);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(g.advantages[t], r[t] - v[t]);
    EXPECT_EQ(g.returns[t], g.advantages[t] + v[t]);
  }
}

TEST(Gae, MatchesDoubleLoopOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 1 + uniform_int(rng, 0, 14);
    std::vector<double> r(T), v(T + 1);
    std::vector<std::uint8_t> d(T, 0);
    for (auto& x : r) x = uniform(rng, -1, 10);
    for (auto& x : v) x = uniform(rng, -5, 5);
    for (auto& x : d) x = uniform01(rng) < 0.1;
    d.back() = trial % 2;
    const double g = uniform01(rng), l = uniform01(rng);
    const auto got = ppo::compute_gae(r, v, d, g, l);
    for (std::size_t t = 0; t < T; ++t) {
      ASSERT_NEAR(got.advantages[t], brute_force_advantage(r, v, d, g, l, t), 1e-10);
    }
  }
}

TEST(Gae, LengthMismatchIsShapeError) {
  const std::vector<double> r{1, 2}, v{0, 0};
  const std::vector<std::uint8_t> d{0, 1};
  EXPECT_THROW(ppo::compute_gae(r, v, d, 0.9, 0.9), ShapeError);
}

TEST(MaxProp, Examples) {
  const auto out = ppo::max_propagate({{1, -2, 3}, {0, 5, -1}});
  for (const auto& row : out) EXPECT_EQ(row, (std::vector<double>{1, 5, 3}));
  const std::vector<std::vector<double>> one{{0.3, -7.0, 2.0}};
  EXPECT_EQ(ppo::max_propagate(one), one);
}

TEST(MaxProp, DominatesAndIsPermutationInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(uniform_int(rng, 0, 5));
    std::vector<std::vector<double>> a(n, std::vector<double>(8));
    for (auto& row : a) {
      for (auto& x : row) x = uniform(rng, -3, 3);
    }
    const auto out = ppo::max_propagate(a);
    for (int i = 0; i < n; ++i) {
      for (int t = 0; t < 8; ++t) ASSERT_GE(out[i][t], a[i][t]);
    }
    auto b = a;
    std::reverse(b.begin(), b.end());
    std::rotate(b.begin(), b.begin() + n / 2, b.end());
    ASSERT_EQ(ppo::max_propagate(b), out);
  }
}

TEST(Normalize, ZScoreAndConstant) {
  std::vector<double> v{1, 2, 3, 4, 10};
  ppo::normalize(v);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 5;
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var / 5, 1.0, 1e-12);
  std::vector<double> c(4, 2.5);
  ppo::normalize(c);
  for (double x : c) EXPECT_EQ(x, 0.0);
}

TEST(Rollout, ShapeRangeAndDeterminism) {
  const auto c = mini_scenario();
  const auto f = factory_for(c);
  policy::MoePolicy pol(c, mini_train().arch, 3);
  const auto a = ppo::collect_rollout(f, pol, 10, 5, 77, 1);
  ASSERT_EQ(a.transitions.size(), 5u * c.horizon);
  EXPECT_EQ(a.num_episodes(), 5);
  EXPECT_EQ(a.episode_indices.front(), 10u);
  for (const auto& tr : a.transitions) {
    ASSERT_EQ(tr.agents.size(), 2u);
    const auto values = pol.value(tr.global_state);
    for (int n = 0; n < 2; ++n) {
      EXPECT_GE(tr.agents[n].reward, 0.0);
      EXPECT_LE(tr.agents[n].reward, 10.0);
      EXPECT_EQ(tr.agents[n].value, values[n]);
    }
  }
  for (int e = 0; e < 5; ++e) {
    for (int t = 0; t < c.horizon; ++t) EXPECT_EQ(a.transitions[e * c.horizon + t].done, t == c.horizon - 1);
  }
  const auto b = ppo::collect_rollout(f, pol, 10, 5, 77, 1);
  const auto w = ppo::collect_rollout(f, pol, 10, 5, 77, 3);
  for (std::size_t i = 0; i < a.transitions.size(); ++i) {
    for (int n = 0; n < 2; ++n) {
      EXPECT_EQ(a.transitions[i].agents[n].action.u, b.transitions[i].agents[n].action.u);
      EXPECT_EQ(a.transitions[i].agents[n].action.u, w.transitions[i].agents[n].action.u);
      EXPECT_EQ(a.transitions[i].agents[n].action.mask, w.transitions[i].agents[n].action.mask);
      EXPECT_EQ(a.transitions[i].agents[n].reward, w.transitions[i].agents[n].reward);
    }
  }
}

TEST(Samples, OwnModeIsPerAgentStandardized) {
  const auto c = mini_scenario();
  policy::MoePolicy pol(c, mini_train().arch, 3);
  const auto batch = ppo::collect_rollout(factory_for(c), pol, 0, 6, 1);
  auto cfg = mini_train();
  cfg.advantage_mode = ppo::AdvantageMode::kOwn;
  const auto s = ppo::prepare_samples(batch, cfg);
  ASSERT_EQ(s.size(), 6u * c.horizon * 2);
  for (int n = 0; n < 2; ++n) {
    double sum = 0, sq = 0;
    int k = 0;
    for (const auto& x : s) {
      if (x.agent != n) continue;
      sum += x.advantage;
      sq += x.advantage * x.advantage;
      ++k;
    }
    EXPECT_NEAR(sum / k, 0.0, 1e-12);
    EXPECT_NEAR(sq / k, 1.0, 1e-9);
  }
  cfg.advantage_mode = ppo::AdvantageMode::kMaxProp;
  cfg.renormalize_propagated = false;
  const auto m = ppo::prepare_samples(batch, cfg);
  for (std::size_t i = 0; i < m.size(); i += 2) {
    EXPECT_EQ(m[i].advantage, m[i + 1].advantage);
    EXPECT_GE(m[i].advantage, std::min(s[i].advantage, s[i + 1].advantage));
    EXPECT_EQ(m[i].advantage, std::max(s[i].advantage, s[i + 1].advantage));
  }
}

class LossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    batch = ppo::collect_rollout(factory_for(cfg_s), pol, 0, 4, 9);
    samples = ppo::prepare_samples(batch, cfg_t);
  }
  ScenarioConfig cfg_s = mini_scenario();
  ppo::TrainConfig cfg_t = mini_train();
  policy::MoePolicy pol{cfg_s, cfg_t.arch, 21};
  ppo::RolloutBatch batch;
  std::vector<ppo::Sample> samples;
};

TEST_F(LossTest, FreshBatchSurrogateIsMeanAdvantage) {
  const auto lp = ppo::ppo_loss(pol, samples, cfg_t);
  double mean_a = 0;
  for (const auto& s : samples) mean_a += s.advantage;
  mean_a /= static_cast<double>(samples.size());
  EXPECT_NEAR(lp.surrogate, mean_a, 1e-12);
  EXPECT_NEAR(lp.approx_kl, 0.0, 1e-12);
  EXPECT_EQ(lp.clip_fraction, 0.0);
  EXPECT_TRUE(std::isfinite(lp.total));
}

TEST_F(LossTest, ZeroAdvantagesLeaveOnlyEntropyOnExperts) {
  perturb(pol, 0.05, 1);
  for (auto& s : samples) s.advantage = 0.0;
  auto no_ent = cfg_t;
  no_ent.entropy_coef = 0.0;
  std::vector<double> g(pol.params().size(), 0.0), g0(pol.params().size(), 0.0);
  ppo::ppo_loss(pol, samples, cfg_t, g);
  ppo::ppo_loss(pol, samples, no_ent, g0);
  const std::size_t experts_end = pol.gate_offset();
  double with_ent = 0;
  for (std::size_t i = 0; i < experts_end; ++i) {
    EXPECT_EQ(g0[i], 0.0);
    with_ent += std::abs(g[i]);
  }
  EXPECT_GT(with_ent, 0.0);
}

TEST_F(LossTest, MatchesFiniteDifferences) {
  for (int draw = 0; draw < 10; ++draw) {
    policy::MoePolicy p = pol;
    perturb(p, 0.05, 100 + draw);
    for (auto gate : {ppo::GateMode::kLearned, ppo::GateMode::kFrozen}) {
      auto c = cfg_t;
      c.gate_mode = gate;
      c.gate_weighted_entropy = draw % 2 == 0;
      std::span<const ppo::Sample> one(samples.data() + draw, 1);
      for (auto batch_view : {one, std::span<const ppo::Sample>(samples)}) {
        std::vector<double> g(p.params().size(), 0.0);
        ppo::ppo_loss(p, batch_view, c, g);
        auto f = [&](std::span<const double> x) {
          policy::MoePolicy q = p;
          std::copy(x.begin(), x.end(), q.params().begin());
          return ppo::ppo_loss(q, batch_view, c).total;
        };
        const std::vector<double> x0(p.params().begin(), p.params().end());
        const auto num = nspmoe::testing::numeric_gradient(f, x0);
        EXPECT_LE(nspmoe::testing::relative_error(g, num), 1e-4) << "draw " << draw;
      }
    }
  }
}

TEST_F(LossTest, UnboundedClipGivesVanillaPolicyGradient) {
  auto c = cfg_t;
  c.clip_epsilon = 1e12;
  c.entropy_coef = 0.0;
  c.value_coef = 0.0;
  std::vector<double> g(pol.params().size(), 0.0);
  ppo::ppo_loss(pol, samples, c, g);
  // Vanilla policy gradient of -mean(sum_e w_e A log pi_e), computed through
  // the policy's own log-prob path and central differences.
  auto pg = [&](std::span<const double> x) {
    policy::MoePolicy q = pol;
    std::copy(x.begin(), x.end(), q.params().begin());
    double s = 0;
    for (const auto& smp : samples) {
      const auto& st = smp.transition->agents[smp.agent];
      const auto e = q.log_prob_and_entropy(smp.agent, st.obs, st.action);
      const auto w = pol.gate_weights(smp.transition->global_state)[smp.agent];
      s += w[0] * smp.advantage * e.log_prob_sel + w[1] * smp.advantage * e.log_prob_pow;
    }
    return -s / static_cast<double>(samples.size());
  };
  const std::vector<double> x0(pol.params().begin(), pol.params().end());
  const auto num = nspmoe::testing::numeric_gradient(pg, x0);
  const std::size_t n = pol.gate_offset();  // expert parameters
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += g[i] * num[i];
    na += g[i] * g[i];
    nb += num[i] * num[i];
  }
  EXPECT_GT(dot / std::sqrt(na * nb), 0.999);
}

TEST_F(LossTest, ClippedBranchHasNoGradient) {
  auto c = cfg_t;
  c.entropy_coef = 0.0;
  c.value_coef = 0.0;
  c.gate_mode = ppo::GateMode::kFrozen;
  // Make the stored behaviour log-probs one nat lower: ratio = e > 1 + eps.
  auto tr = *samples[0].transition;
  for (auto& a : tr.agents) {
    a.action.log_prob_sel -= 1.0;
    a.action.log_prob_pow -= 1.0;
  }
  ppo::Sample s = samples[0];
  s.transition = &tr;
  s.advantage = 1.5;
  std::vector<double> g(pol.params().size(), 0.0);
  const auto lp = ppo::ppo_loss(pol, std::span<const ppo::Sample>(&s, 1), c, g);
  EXPECT_NEAR(lp.surrogate, (1.0 + c.clip_epsilon) * 1.5, 1e-12);
  EXPECT_LT(lp.surrogate, std::exp(1.0) * 1.5);
  EXPECT_EQ(lp.clip_fraction, 1.0);
  for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST_F(LossTest, NonFiniteLossDumpsMinibatch) {
  const auto dir = scratch("diag");
  auto p = pol;
  p.params()[p.critic_offset()] = std::nan("");
  auto adam = nn::AdamState::zeros(p.params().size(), 3e-4);
  Rng rng(1);
  EXPECT_THROW(ppo::ppo_update(batch, p, adam, cfg_t, rng, dir / "diag.json"), NumericError);
  EXPECT_TRUE(fs::exists(dir / "diag.json"));
  fs::remove_all(dir);
}

TEST(TrainConfig, ValidationAndPresets) {
  EXPECT_NO_THROW(ppo::TrainConfig{}.validate());
  EXPECT_EQ(ppo::TrainConfig::moe_ppo().strategy(), "moe_ppo");
  EXPECT_EQ(ppo::TrainConfig::ma_ppo().strategy(), "ma_ppo");
  for (double eps : {0.0, 1.0, -0.1}) {
    ppo::TrainConfig t;
    t.clip_epsilon = eps;
    try {
      t.validate();
      ADD_FAILURE();
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), "clip_epsilon");
    }
  }
  ppo::TrainConfig t;
  t.gamma = 1.5;
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_EQ(ppo::parse_advantage_mode("own"), ppo::AdvantageMode::kOwn);
  EXPECT_THROW(ppo::parse_gate_mode("fixed"), ConfigError);
}

TEST(Train, SmokeRunWritesFilesAndIsFast) {
  ScenarioConfig c;
  c.num_agents = 2;
  c.images_per_agent = 4;
  auto t = ppo::TrainConfig::moe_ppo();
  t.total_episodes = 200;
  t.checkpoint_every = 5;
  const auto dir = scratch("smoke");
  const auto start = std::chrono::steady_clock::now();
  const auto r = ppo::train(c, t, dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 60.0);
  // 12 full iterations of 16 episodes and a final one of 8.
  const int iterations = (200 + t.episodes_per_iteration - 1) / t.episodes_per_iteration;
  EXPECT_EQ(static_cast<int>(r.iterations.size()), iterations);
  EXPECT_EQ(static_cast<int>(r.episodes.size()), 200);
  EXPECT_EQ(r.iterations.back().episodes, 200);
  const auto metrics = slurp(dir / "metrics.jsonl");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), iterations);
  const auto curves = slurp(dir / "curves.csv");
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), iterations + 1);
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "iter_000005.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "iter_000010.ckpt"));
  for (const auto& m : r.iterations) {
    EXPECT_GE(m.violation_rate, 0.0);
    EXPECT_LE(m.violation_rate, 1.0);
    for (double v : m.violation_rates) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }

  const auto eval1 = ppo::evaluate_checkpoint(dir / "final.ckpt", c, 10, true, 3);
  const auto eval2 = ppo::evaluate_checkpoint(dir / "final.ckpt", c, 10, true, 3);
  EXPECT_EQ(eval1.mean_cost, eval2.mean_cost);
  EXPECT_EQ(eval1.mean_reward, eval2.mean_reward);
  EXPECT_GE(eval1.violation_rate, 0.0);
  EXPECT_LE(eval1.violation_rate, 1.0);
  auto other = c;
  other.seed = c.seed + 1;
  EXPECT_THROW(ppo::evaluate_checkpoint(dir / "final.ckpt", other, 10, true), FormatError);
  fs::remove_all(dir);
}

TEST(Train, SameSeedsGiveIdenticalMetricsForAnyWorkerCount) {
  ScenarioConfig c;
  c.num_agents = 2;
  c.images_per_agent = 4;
  c.horizon = 4;
  auto t = ppo::TrainConfig::moe_ppo();
  t.total_episodes = 64;
  t.arch = {{8}, {8}, {8}};
  const auto a = scratch("det_a"), b = scratch("det_b"), w = scratch("det_w");
  ppo::train(c, t, a);
  ppo::train(c, t, b);
  t.workers = 3;
  ppo::train(c, t, w);
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(w / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "curves.csv"), slurp(b / "curves.csv"));
  EXPECT_EQ(slurp(a / "final.ckpt"), slurp(w / "final.ckpt"));
  for (const auto& d : {a, b, w}) fs::remove_all(d);
}
