#include "nspmoe/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nspmoe/config_io.hpp"
#include "nspmoe/errors.hpp"

namespace nspmoe::metrics {

namespace {

std::ofstream open_append(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::out | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return f;
}

std::string row(std::uint64_t episode, const std::string& strategy, std::uint64_t seed, double reward,
                double cost, double violation_rate) {
  std::ostringstream os;
  os << episode << ',' << strategy << ',' << seed << ',' << format_double(reward) << ','
     << format_double(cost) << ',' << format_double(violation_rate);
  return os.str();
}

}  // namespace

std::string metrics_line(const ppo::IterationMetrics& m, const std::string& strategy, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["iteration"] = m.iteration;
  j["episode"] = m.episodes;
  j["strategy"] = strategy;
  j["seed"] = seed;
  j["mean_reward"] = m.mean_reward;
  j["mean_cost"] = m.mean_cost;
  j["violation_rate"] = m.violation_rate;
  j["violation_rates"] = {{"power", m.violation_rates[0]},
                          {"count", m.violation_rates[1]},
                          {"quality", m.violation_rates[2]},
                          {"qos", m.violation_rates[3]}};
  j["policy_loss"] = m.policy_loss;
  j["value_loss"] = m.value_loss;
  j["entropy"] = m.entropy;
  j["gate_selection"] = m.gate_selection;
  j["gate_power"] = m.gate_power;
  j["clip_fraction"] = m.clip_fraction;
  j["approx_kl"] = m.approx_kl;
  return j.dump();
}

std::string curves_row(const ppo::IterationMetrics& m, const std::string& strategy, std::uint64_t seed) {
  return row(static_cast<std::uint64_t>(m.episodes), strategy, seed, m.mean_reward, m.mean_cost,
             m.violation_rate);
}

std::string curves_from_metrics(const std::string& metrics_jsonl) {
  std::istringstream in(metrics_jsonl);
  std::ostringstream out;
  out << kCurvesHeader << '\n';
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out << row(j.at("episode").get<std::uint64_t>(), j.at("strategy").get<std::string>(),
               j.at("seed").get<std::uint64_t>(), j.at("mean_reward").get<double>(),
               j.at("mean_cost").get<double>(), j.at("violation_rate").get<double>())
        << '\n';
  }
  return out.str();
}

MetricsWriter::MetricsWriter(const std::filesystem::path& dir, std::string strategy, std::uint64_t seed)
    : strategy_(std::move(strategy)), seed_(seed) {
  std::filesystem::create_directories(dir);
  metrics_ = open_append(dir / kMetricsFile);
  curves_ = open_append(dir / kCurvesFile);
  timing_ = open_append(dir / kTimingFile);
  curves_ << kCurvesHeader << '\n' << std::flush;
}

void MetricsWriter::write(const ppo::IterationMetrics& m) {
  metrics_ << metrics_line(m, strategy_, seed_) << '\n' << std::flush;
  curves_ << curves_row(m, strategy_, seed_) << '\n' << std::flush;
  timing_ << "{\"iteration\":" << m.iteration << ",\"wall_clock_s\":" << format_double(m.wall_clock_s)
          << "}\n"
          << std::flush;
  if (!metrics_ || !curves_ || !timing_) throw std::runtime_error("metrics write failed");
}

}  // namespace nspmoe::metrics
