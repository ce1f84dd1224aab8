#include "nspmoe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nspmoe/errors.hpp"
#include "nspmoe/experiment.hpp"

namespace nspmoe::report {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stdev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

Curve parse_curve(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("curves: empty file");
  // Columns: episode,strategy,seed,mean_reward,mean_cost,violation_rate
  Curve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (cols.size() != 6) throw FormatError("curves: expected 6 columns in \"" + line + "\"");
    curve.push_back({std::stoi(cols[0]), std::stod(cols[3]), std::stod(cols[4])});
  }
  return curve;
}

Curve load_curve(const std::filesystem::path& path) { return parse_curve(read_text(path)); }

std::vector<double> smoothed_reward(const Curve& curve, int window_episodes) {
  std::vector<double> out(curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t k = i + 1; k-- > 0;) {
      sum += curve[k].mean_reward;
      ++count;
      const int previous = k == 0 ? 0 : curve[k - 1].episode;
      if (curve[i].episode - previous >= window_episodes) break;
    }
    out[i] = sum / count;
  }
  return out;
}

std::optional<int> episodes_to_threshold(const Curve& curve, double threshold, int window_episodes) {
  const auto s = smoothed_reward(curve, window_episodes);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= threshold) return curve[i].episode;
  }
  return std::nullopt;
}

std::optional<int> episodes_to_fraction_of_final(const Curve& curve, double fraction) {
  if (curve.empty()) return std::nullopt;
  const double final_reward = smoothed_reward(curve).back();
  if (!(final_reward > 0.0)) return std::nullopt;
  return episodes_to_threshold(curve, fraction * final_reward);
}

CheckResult check_ordering(const std::vector<double>& learner_cost, const std::vector<double>& greedy_cost,
                           const std::vector<double>& random_cost, double random_fraction) {
  CheckResult r;
  if (learner_cost.empty() || learner_cost.size() != greedy_cost.size() ||
      learner_cost.size() != random_cost.size()) {
    r.detail = "seed lists do not line up";
    return r;
  }
  r.pass = true;
  std::ostringstream os;
  for (std::size_t i = 0; i < learner_cost.size(); ++i) {
    const bool ok = learner_cost[i] < greedy_cost[i] && learner_cost[i] < random_fraction * random_cost[i];
    r.pass = r.pass && ok;
    os << (i ? "; " : "") << "seed#" << i << " learner " << fmt("%.1f", learner_cost[i]) << " vs greedy "
       << fmt("%.1f", greedy_cost[i]) << ", " << fmt("%.2f", random_fraction) << "*random "
       << fmt("%.1f", random_fraction * random_cost[i]) << (ok ? " ok" : " FAIL");
  }
  r.detail = os.str();
  return r;
}

CheckResult check_convergence_gap(const std::vector<Curve>& reference, const std::vector<Curve>& comparison,
                                  double min_gap) {
  CheckResult r;
  if (reference.empty() || reference.size() != comparison.size()) {
    r.detail = "seed lists do not line up";
    return r;
  }
  std::vector<double> ref_eps, cmp_eps;
  int reached = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].empty() || comparison[i].empty()) {
      r.detail = "empty curve";
      return r;
    }
    const double threshold = 0.95 * smoothed_reward(reference[i]).back();
    const auto a = episodes_to_threshold(reference[i], threshold);
    const auto b = episodes_to_threshold(comparison[i], threshold);
    ref_eps.push_back(a ? *a : reference[i].back().episode);
    cmp_eps.push_back(b ? *b : comparison[i].back().episode);
    reached += b.has_value();
  }
  const double ref_mean = mean_of(ref_eps);
  const double cmp_mean = mean_of(cmp_eps);
  std::ostringstream os;
  if (reached == 0) {
    r.pass = true;
    os << "comparison never reaches 95% of the reference final reward (reference needs "
       << fmt("%.0f", ref_mean) << " episodes on average)";
  } else {
    r.pass = cmp_mean >= (1.0 + min_gap) * ref_mean;
    os << "episodes to threshold: reference " << fmt("%.0f", ref_mean) << ", comparison "
       << fmt("%.0f", cmp_mean) << " (gap " << fmt("%+.1f", 100.0 * (cmp_mean / ref_mean - 1.0))
       << "%, need >= " << fmt("%.0f", 100.0 * min_gap) << "%; comparison reached on " << reached << "/"
       << reference.size() << " seeds)";
  }
  r.detail = os.str();
  return r;
}

CheckResult check_cost_trend(const CostTable& cost, const std::string& best, double tolerance) {
  CheckResult r;
  r.pass = true;
  std::ostringstream os;
  for (const auto& [strategy, by_n] : cost) {
    int inversions = 0;
    bool ok = true;
    double prev = 0.0;
    bool first = true;
    for (const auto& [n, c] : by_n) {
      if (!first && c < prev) {
        ++inversions;
        if (prev - c > tolerance * prev || inversions > 1) ok = false;
      }
      prev = c;
      first = false;
    }
    if (!ok) {
      r.pass = false;
      os << strategy << " not nondecreasing in N; ";
    }
  }
  auto it = cost.find(best);
  if (it == cost.end()) {
    r.pass = false;
    os << best << " missing; ";
  } else {
    for (const auto& [n, c] : it->second) {
      for (const auto& [strategy, by_n] : cost) {
        if (strategy == best) continue;
        auto other = by_n.find(n);
        if (other != by_n.end() && !(c < other->second)) {
          r.pass = false;
          os << best << " not lowest at N=" << n << " (" << strategy << " " << fmt("%.1f", other->second)
             << " <= " << fmt("%.1f", c) << "); ";
        }
      }
    }
  }
  r.detail = os.str().empty() ? "all strategies nondecreasing; " + best + " lowest at every N" : os.str();
  return r;
}

namespace {

struct RunRecord {
  double cost = 0.0;
  double reward = 0.0;
  std::filesystem::path dir;
};

// runs[strategy][N][seed]
using RunTable = std::map<std::string, std::map<int, std::map<std::uint64_t, RunRecord>>>;

RunTable scan_runs(const std::filesystem::path& root) {
  RunTable runs;
  if (!std::filesystem::is_directory(root)) return runs;
  for (const auto& s : std::filesystem::directory_iterator(root)) {
    if (!s.is_directory()) continue;
    const std::string strategy = s.path().filename().string();
    for (const auto& n : std::filesystem::directory_iterator(s.path())) {
      const std::string nname = n.path().filename().string();
      if (!n.is_directory() || nname.size() < 2 || nname[0] != 'N') continue;
      const int num_agents = std::stoi(nname.substr(1));
      for (const auto& seed : std::filesystem::directory_iterator(n.path())) {
        const std::string sname = seed.path().filename().string();
        const auto summary = seed.path() / "summary.json";
        if (sname.rfind("seed", 0) != 0 || !std::filesystem::exists(summary)) continue;
        const auto j = nlohmann::json::parse(read_text(summary));
        const auto& w = j.at("final_window");
        runs[strategy][num_agents][std::stoull(sname.substr(4))] = {
            w.at("mean_cost").get<double>(), w.at("mean_reward").get<double>(), seed.path()};
      }
    }
  }
  return runs;
}

const char* status(const CheckResult& r) { return r.pass ? "PASS" : "FAIL"; }

}  // namespace

std::string build_report(const std::filesystem::path& root) {
  const auto runs = scan_runs(root);
  std::ostringstream os;
  os << "# Experiment report: " << root.filename().string() << "\n\n";

  std::vector<std::string> missing;
  const auto manifest_path = root / experiment::kResolvedManifestFile;
  if (std::filesystem::exists(manifest_path)) {
    const auto m = experiment::manifest_from_json(nlohmann::json::parse(read_text(manifest_path)));
    for (int n : m.agent_counts()) {
      for (const auto& s : m.strategies) {
        for (auto seed : m.seeds) {
          bool found = false;
          if (auto a = runs.find(s); a != runs.end()) {
            if (auto b = a->second.find(n); b != a->second.end()) found = b->second.count(seed) > 0;
          }
          if (!found) missing.push_back(experiment::run_dir("", s, n, seed).generic_string());
        }
      }
    }
  }

  os << "## Final-window cost and reward (mean +- stdev across seeds)\n\n";
  os << "strategy    N  seeds  cost                    reward\n";
  CostTable cost_table;
  for (const auto& [strategy, by_n] : runs) {
    for (const auto& [n, by_seed] : by_n) {
      std::vector<double> c, r;
      for (const auto& [seed, rec] : by_seed) {
        c.push_back(rec.cost);
        r.push_back(rec.reward);
      }
      char line[160];
      std::snprintf(line, sizeof line, "%-10s %2d  %5zu  %10.1f +- %-9.1f %8.3f +- %.3f\n", strategy.c_str(), n,
                    c.size(), mean_of(c), stdev_of(c), mean_of(r), stdev_of(r));
      os << line;
      if (strategy != "oracle") cost_table[strategy][n] = mean_of(c);
    }
  }

  os << "\n## Cost versus number of agents\n\n";
  for (const auto& [strategy, by_n] : cost_table) {
    os << strategy << ":";
    for (const auto& [n, c] : by_n) os << "  N=" << n << " " << fmt("%.1f", c);
    os << "\n";
  }

  os << "\n## Episodes to 95% of final smoothed reward\n\n";
  for (const auto& [strategy, by_n] : runs) {
    for (const auto& [n, by_seed] : by_n) {
      std::vector<double> eps;
      int total = 0;
      for (const auto& [seed, rec] : by_seed) {
        const auto curves = rec.dir / "curves.csv";
        if (!std::filesystem::exists(curves)) continue;
        ++total;
        if (auto e = episodes_to_fraction_of_final(load_curve(curves))) eps.push_back(*e);
      }
      os << strategy << " N=" << n << ": ";
      if (eps.empty()) {
        os << "not reached\n";
      } else {
        os << fmt("%.0f", mean_of(eps)) << " (" << eps.size() << "/" << total << " seeds reached)\n";
      }
    }
  }

  os << "\n## Checks\n\n";
  // Ordering at the canonical agent count (3 when present).
  auto seeds_of = [&](const std::string& s, int n) {
    std::set<std::uint64_t> out;
    if (auto a = runs.find(s); a != runs.end()) {
      if (auto b = a->second.find(n); b != a->second.end()) {
        for (const auto& [seed, rec] : b->second) out.insert(seed);
      }
    }
    return out;
  };
  auto common = [&](const std::vector<std::string>& ss, int n) {
    std::set<std::uint64_t> out = seeds_of(ss.front(), n);
    for (const auto& s : ss) {
      std::set<std::uint64_t> keep;
      const auto other = seeds_of(s, n);
      std::set_intersection(out.begin(), out.end(), other.begin(), other.end(), std::inserter(keep, keep.end()));
      out = keep;
    }
    return out;
  };
  std::set<int> ns;
  for (const auto& [s, by_n] : runs) {
    for (const auto& [n, x] : by_n) ns.insert(n);
  }
  const int canonical = ns.count(3) ? 3 : (ns.empty() ? 0 : *ns.begin());

  const auto ord_seeds = common({"moe_ppo", "greedy", "random"}, canonical);
  if (ord_seeds.empty()) {
    os << "[SKIP] ordering: needs moe_ppo, greedy and random runs at N=" << canonical << "\n";
  } else {
    std::vector<double> l, g, r;
    for (auto s : ord_seeds) {
      l.push_back(runs.at("moe_ppo").at(canonical).at(s).cost);
      g.push_back(runs.at("greedy").at(canonical).at(s).cost);
      r.push_back(runs.at("random").at(canonical).at(s).cost);
    }
    const auto res = check_ordering(l, g, r);
    os << "[" << status(res) << "] ordering (N=" << canonical << "): " << res.detail << "\n";
  }

  const auto gap_seeds = common({"moe_ppo", "ma_ppo"}, canonical);
  if (gap_seeds.empty()) {
    os << "[SKIP] convergence gap: needs moe_ppo and ma_ppo runs at N=" << canonical << "\n";
  } else {
    std::vector<Curve> a, b;
    for (auto s : gap_seeds) {
      a.push_back(load_curve(runs.at("moe_ppo").at(canonical).at(s).dir / "curves.csv"));
      b.push_back(load_curve(runs.at("ma_ppo").at(canonical).at(s).dir / "curves.csv"));
    }
    const auto res = check_convergence_gap(a, b);
    os << "[" << status(res) << "] convergence gap (N=" << canonical << "): " << res.detail << "\n";
  }

  CostTable trend;
  for (const char* s : {"moe_ppo", "ma_ppo", "greedy", "random"}) {
    if (auto it = cost_table.find(s); it != cost_table.end()) trend[s] = it->second;
  }
  if (ns.size() < 2 || !trend.count("moe_ppo")) {
    os << "[SKIP] cost trend: needs moe_ppo runs at two or more agent counts\n";
  } else {
    const auto res = check_cost_trend(trend);
    os << "[" << status(res) << "] cost trend: " << res.detail << "\n";
  }

  if (!missing.empty()) {
    os << "\n## Missing runs\n\n";
    for (const auto& m : missing) os << m << "\n";
  }
  return os.str();
}

}  // namespace nspmoe::report
