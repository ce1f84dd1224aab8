#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nspmoe::report {

// One (episode, mean_reward, mean_cost) point per logged iteration.
struct CurvePoint {
  int episode = 0;
  double mean_reward = 0.0;
  double mean_cost = 0.0;
};

using Curve = std::vector<CurvePoint>;

// Parses a curves.csv body (header required).
Curve parse_curve(const std::string& csv_text);
Curve load_curve(const std::filesystem::path& path);

inline constexpr int kSmoothingEpisodes = 100;

// Trailing mean of mean_reward over the iterations covering the last
// `window_episodes` episodes (at least one iteration).
std::vector<double> smoothed_reward(const Curve& curve, int window_episodes = kSmoothingEpisodes);

// First episode count at which the smoothed reward reaches `threshold`.
std::optional<int> episodes_to_threshold(const Curve& curve, double threshold,
                                         int window_episodes = kSmoothingEpisodes);

// Episodes to reach 95% of the curve's own final smoothed reward; empty when
// the final smoothed reward is not positive.
std::optional<int> episodes_to_fraction_of_final(const Curve& curve, double fraction = 0.95);

struct CheckResult {
  bool pass = false;
  std::string detail;
};

// Learner beats greedy and stays under `random_fraction` of random on every
// seed. Vectors are indexed by seed position.
CheckResult check_ordering(const std::vector<double>& learner_cost, const std::vector<double>& greedy_cost,
                           const std::vector<double>& random_cost, double random_fraction = 0.6);

// For every seed the threshold is 95% of the reference (MoE) curve's final
// smoothed reward; the comparison curve must need at least (1 + min_gap)
// times as many episodes on average. A comparison curve that never gets
// there on any seed passes; on a seed where it does not, its full budget
// counts.
CheckResult check_convergence_gap(const std::vector<Curve>& reference, const std::vector<Curve>& comparison,
                                  double min_gap = 0.2);

// cost[strategy][N] = mean total cost. Every strategy must be nondecreasing
// in N, allowing one inversion of at most `tolerance` of the larger value, and
// `best` must have the lowest cost at every N.
using CostTable = std::map<std::string, std::map<int, double>>;
CheckResult check_cost_trend(const CostTable& cost, const std::string& best = "moe_ppo",
                             double tolerance = 0.02);

// Aggregates run directories under `root` (laid out as
// <strategy>/N<n>/seed<s>/) into a text report: per (strategy, N) mean and
// stdev of final-window cost and reward across seeds, episodes to 95% of the
// final reward, and pass/fail lines for the ordering, convergence-gap and
// cost-trend checks. Runs requested by root/resolved_manifest.json but absent
// on disk are listed. Pure function of the files.
std::string build_report(const std::filesystem::path& root);

}  // namespace nspmoe::report
