#include <memory>

#include <benchmark/benchmark.h>

#include "nspmoe/baselines.hpp"
#include "nspmoe/policy.hpp"
#include "nspmoe/ppo.hpp"

using namespace nspmoe;

namespace {

ScenarioConfig with_agents(int n) {
  ScenarioConfig c;
  c.num_agents = n;
  return c;
}

}  // namespace

static void BM_EvaluateJointAction(benchmark::State& state) {
  const auto c = with_agents(static_cast<int>(state.range(0)));
  const auto inst = init_scenario(c);
  Rng rng(1);
  JointAction a;
  for (int n = 0; n < c.num_agents; ++n) {
    a.selection.push_back(full_mask(c.images_per_agent));
    a.power_w.push_back(uniform(rng, 1.0, c.p_max_w));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_joint_action(inst, inst.path_loss, a, 500.0));
}
BENCHMARK(BM_EvaluateJointAction)->Arg(2)->Arg(3)->Arg(5);

static void BM_MlpForwardBackward(benchmark::State& state) {
  const nn::MlpSpec spec{{40, 64, 64, 8}};
  const auto p = nn::init_params(spec, 1);
  std::vector<double> x(40, 0.1), og(8, 1.0);
  for (auto _ : state) {
    nn::ForwardCache cache;
    nn::forward(spec, p, x, &cache);
    benchmark::DoNotOptimize(nn::backward(spec, p, cache, og));
  }
}
BENCHMARK(BM_MlpForwardBackward);

static void BM_CollectRollout(benchmark::State& state) {
  const auto c = with_agents(3);
  auto inst = std::make_shared<const ScenarioInstance>(init_scenario(c));
  const ppo::EnvFactory factory = [inst](std::uint64_t ep) { return NetEnv(inst, 500.0, ep); };
  const policy::MoePolicy pol(c, policy::PolicyArch{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ppo::collect_rollout(factory, pol, 0, 16, 1));
}
BENCHMARK(BM_CollectRollout)->Unit(benchmark::kMillisecond);

static void BM_PpoLoss(benchmark::State& state) {
  const auto c = with_agents(3);
  auto inst = std::make_shared<const ScenarioInstance>(init_scenario(c));
  const ppo::EnvFactory factory = [inst](std::uint64_t ep) { return NetEnv(inst, 500.0, ep); };
  const ppo::TrainConfig cfg;
  const policy::MoePolicy pol(c, cfg.arch, 1);
  const auto batch = ppo::collect_rollout(factory, pol, 0, 16, 1);
  const auto samples = ppo::prepare_samples(batch, cfg);
  std::vector<double> grad(pol.params().size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(ppo::ppo_loss(pol, samples, cfg, grad));
  }
}
BENCHMARK(BM_PpoLoss)->Unit(benchmark::kMillisecond);

static void BM_Greedy(benchmark::State& state) {
  const auto c = with_agents(3);
  auto inst = std::make_shared<const ScenarioInstance>(init_scenario(c));
  const auto policy = baselines::greedy_strategy();
  std::uint64_t ep = 0;
  for (auto _ : state) {
    Rng rng(ep);
    benchmark::DoNotOptimize(baselines::run_episode(inst, 500.0, ep++, policy, rng));
  }
}
BENCHMARK(BM_Greedy);

static void BM_Oracle(benchmark::State& state) {
  ScenarioConfig c;
  c.num_agents = 2;
  c.images_per_agent = 4;
  c.horizon = 1;
  const auto inst = init_scenario(c);
  for (auto _ : state) benchmark::DoNotOptimize(baselines::exhaustive_oracle(inst, inst.path_loss, 8));
}
BENCHMARK(BM_Oracle)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
