#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "nspmoe/ppo.hpp"

namespace nspmoe::metrics {

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kCurvesFile = "curves.csv";
inline constexpr const char* kTimingFile = "timing.jsonl";
inline constexpr const char* kCurvesHeader = "episode,strategy,seed,mean_reward,mean_cost,violation_rate";

// One JSON object per iteration. Wall-clock time is kept out of this record
// (it goes to timing.jsonl) so identical runs give identical bytes.
std::string metrics_line(const ppo::IterationMetrics& m, const std::string& strategy, std::uint64_t seed);
std::string curves_row(const ppo::IterationMetrics& m, const std::string& strategy, std::uint64_t seed);

// Rebuilds curves.csv (header included) from the contents of metrics.jsonl.
std::string curves_from_metrics(const std::string& metrics_jsonl);

// Append-only writer; every record is flushed as soon as it is written so an
// interrupted run leaves parseable prefixes.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& dir, std::string strategy, std::uint64_t seed);
  void write(const ppo::IterationMetrics& m);

 private:
  std::string strategy_;
  std::uint64_t seed_;
  std::ofstream metrics_;
  std::ofstream curves_;
  std::ofstream timing_;
};

}  // namespace nspmoe::metrics
