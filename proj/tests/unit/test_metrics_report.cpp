#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "nspmoe/experiment.hpp"
#include "nspmoe/metrics.hpp"
#include "nspmoe/report.hpp"

using namespace nspmoe;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

ppo::IterationMetrics sample_metrics(int i) {
  ppo::IterationMetrics m;
  m.iteration = i;
  m.episodes = 16 * (i + 1);
  m.mean_reward = 0.1 * i + 1.0 / 3.0;
  m.mean_cost = 1000.0 - 7.25 * i;
  m.violation_rate = 0.01 * (i % 5);
  m.violation_rates = {0.0, 0.01, 0.02, 0.03};
  m.policy_loss = -0.5;
  m.value_loss = 2.0;
  m.entropy = 3.0;
  m.gate_selection = 0.4;
  m.gate_power = 0.6;
  m.clip_fraction = 0.1;
  m.approx_kl = 0.001;
  m.wall_clock_s = 1.23 * i;
  return m;
}

// Curve with `n` iterations of 16 episodes; reward ramps linearly to `top`
// by iteration `ramp` and stays there.
report::Curve ramp_curve(int n, int ramp, double top) {
  report::Curve c;
  for (int i = 0; i < n; ++i) c.push_back({16 * (i + 1), top * std::min(1.0, double(i) / ramp), 0.0});
  return c;
}

}  // namespace

TEST(Metrics, LineHasDocumentedFieldsAndNoWallClock) {
  const auto j = nlohmann::json::parse(metrics::metrics_line(sample_metrics(3), "moe_ppo", 2));
  for (const char* k : {"iteration", "episode", "strategy", "seed", "mean_reward", "mean_cost", "violation_rate",
                        "violation_rates", "policy_loss", "value_loss", "entropy", "gate_selection", "gate_power",
                        "clip_fraction", "approx_kl"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_FALSE(j.contains("wall_clock_s"));
  for (const char* k : {"power", "count", "quality", "qos"}) EXPECT_TRUE(j["violation_rates"].contains(k));
  EXPECT_EQ(j["episode"], 64);
  EXPECT_EQ(j["strategy"], "moe_ppo");
}

TEST(Metrics, WriterFilesAgreeAndCurvesRegenerate) {
  const auto dir = fs::temp_directory_path() / "nspmoe_test_writer";
  fs::remove_all(dir);
  {
    metrics::MetricsWriter w(dir, "ma_ppo", 9);
    for (int i = 0; i < 7; ++i) {
      w.write(sample_metrics(i));
      // Every prefix is parseable while the run is in progress.
      const auto partial = slurp(dir / metrics::kMetricsFile);
      std::istringstream in(partial);
      std::string line;
      int lines = 0;
      while (std::getline(in, line)) {
        EXPECT_TRUE(nlohmann::json::accept(line));
        ++lines;
      }
      EXPECT_EQ(lines, i + 1);
    }
  }
  const auto metrics_text = slurp(dir / metrics::kMetricsFile);
  const auto curves_text = slurp(dir / metrics::kCurvesFile);
  EXPECT_EQ(curves_text.substr(0, curves_text.find('\n')), metrics::kCurvesHeader);
  EXPECT_EQ(std::count(metrics_text.begin(), metrics_text.end(), '\n') + 1,
            std::count(curves_text.begin(), curves_text.end(), '\n'));
  EXPECT_EQ(metrics::curves_from_metrics(metrics_text), curves_text);
  const auto timing = slurp(dir / metrics::kTimingFile);
  EXPECT_EQ(std::count(timing.begin(), timing.end(), '\n'), 7);
  fs::remove_all(dir);
}

TEST(Metrics, HeaderIsDocumentedColumnList) {
  EXPECT_STREQ(metrics::kCurvesHeader, "episode,strategy,seed,mean_reward,mean_cost,violation_rate");
}

TEST(Report, CurveParsingAndSmoothing) {
  const auto c = report::parse_curve(
      "episode,strategy,seed,mean_reward,mean_cost,violation_rate\n"
      "50,moe_ppo,1,1,10,0\n100,moe_ppo,1,3,9,0\n150,moe_ppo,1,5,8,0\n");
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[2].episode, 150);
  const auto s = report::smoothed_reward(c, 100);
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 2.0);
  EXPECT_EQ(s[2], 4.0);
  EXPECT_EQ(report::episodes_to_threshold(c, 3.5, 100), 150);
  EXPECT_FALSE(report::episodes_to_threshold(c, 4.5, 100).has_value());
}

TEST(Report, FlatZeroCurveNotReached) {
  const auto flat = ramp_curve(20, 1, 0.0);
  EXPECT_FALSE(report::episodes_to_fraction_of_final(flat).has_value());
}

TEST(Report, OrderingCheck) {
  EXPECT_TRUE(report::check_ordering({5, 5}, {6, 6}, {10, 10}).pass);
  EXPECT_FALSE(report::check_ordering({5, 7}, {6, 6}, {10, 10}).pass);   // above greedy
  EXPECT_FALSE(report::check_ordering({5, 5}, {6, 6}, {10, 8}).pass);    // 5 >= 0.6 * 8
  EXPECT_FALSE(report::check_ordering({5}, {6, 6}, {10, 10}).pass);
}

TEST(Report, ConvergenceGapCheck) {
  const auto fast = ramp_curve(100, 20, 10.0);
  const auto slow = ramp_curve(100, 40, 10.0);
  const auto never = ramp_curve(100, 40, 5.0);
  EXPECT_TRUE(report::check_convergence_gap({fast, fast}, {slow, slow}).pass);
  EXPECT_FALSE(report::check_convergence_gap({fast, fast}, {fast, fast}).pass);
  EXPECT_FALSE(report::check_convergence_gap({slow}, {fast}).pass);
  EXPECT_TRUE(report::check_convergence_gap({fast, fast}, {never, never}).pass);
}

TEST(Report, CostTrendCheck) {
  report::CostTable ok{{"moe_ppo", {{2, 10}, {3, 20}, {4, 24}}}, {"greedy", {{2, 12}, {3, 25}, {4, 24.8}}}};
  EXPECT_TRUE(report::check_cost_trend(ok).pass);
  report::CostTable big_drop{{"moe_ppo", {{2, 10}, {3, 20}, {4, 30}}}, {"greedy", {{2, 12}, {3, 25}, {4, 20}}}};
  EXPECT_FALSE(report::check_cost_trend(big_drop).pass);
  report::CostTable two_drops{{"moe_ppo", {{2, 10}, {3, 9.9}, {4, 30}, {5, 29.9}}}};
  EXPECT_FALSE(report::check_cost_trend(two_drops).pass);
  report::CostTable not_lowest{{"moe_ppo", {{2, 10}, {3, 20}}}, {"greedy", {{2, 12}, {3, 19}}}};
  EXPECT_FALSE(report::check_cost_trend(not_lowest).pass);
}

TEST(Report, BuildsTablesListsMissingAndIsDeterministic) {
  const auto root = fs::temp_directory_path() / "nspmoe_test_report";
  fs::remove_all(root);
  auto m = experiment::parse_manifest(
      R"({"strategies": ["moe_ppo", "greedy", "random"], "seeds": [1, 2], "sweep": {"num_agents": [2, 3]}})");
  experiment::write_resolved(m, root);
  auto put = [&](const std::string& s, int n, int seed, double cost, double reward) {
    const auto dir = experiment::run_dir(root, s, n, seed);
    nlohmann::json j{{"strategy", s}, {"final_window", {{"mean_cost", cost}, {"mean_reward", reward}}}};
    spit(dir / "summary.json", j.dump());
    std::string csv = std::string(metrics::kCurvesHeader) + "\n";
    for (int i = 1; i <= 10; ++i) {
      csv += std::to_string(16 * i) + "," + s + "," + std::to_string(seed) + "," +
             std::to_string(reward * std::min(1.0, i / 5.0)) + "," + std::to_string(cost) + ",0\n";
    }
    spit(dir / "curves.csv", csv);
  };
  for (int seed : {1, 2}) {
    for (int n : {2, 3}) {
      put("moe_ppo", n, seed, 100.0 * n, 5.0);
      put("random", n, seed, 300.0 * n, 1.0);
    }
    put("greedy", 3, seed, 150.0 * 3, 2.0);
  }
  const auto text = report::build_report(root);
  EXPECT_EQ(text, report::build_report(root));
  EXPECT_NE(text.find("Cost versus number of agents"), std::string::npos);
  EXPECT_NE(text.find("moe_ppo:  N=2 200.0  N=3 300.0"), std::string::npos) << text;
  EXPECT_NE(text.find("[PASS] ordering (N=3)"), std::string::npos) << text;
  EXPECT_NE(text.find("[SKIP] convergence gap"), std::string::npos);
  EXPECT_NE(text.find("Missing runs"), std::string::npos);
  EXPECT_NE(text.find("greedy/N2/seed1"), std::string::npos);
  EXPECT_NE(text.find("greedy/N2/seed2"), std::string::npos);
  fs::remove_all(root);
}
