#include "nspmoe/config_io.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "nspmoe/errors.hpp"
#include "nspmoe/json_fields.hpp"
#include "nspmoe/rng.hpp"

namespace nspmoe {

nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["num_agents"] = c.num_agents;
  j["images_per_agent"] = c.images_per_agent;
  j["horizon"] = c.horizon;
  j["bandwidth_hz"] = c.bandwidth_hz;
  j["noise_power_w"] = c.noise_power_w;
  j["p_max_w"] = c.p_max_w;
  j["min_images"] = c.min_images;
  j["q_min"] = c.q_min;
  j["r_min_bps"] = c.r_min_bps;
  j["payload_bytes"] = c.payload_bytes;
  j["image_bytes_range"] = {c.image_bytes_range[0], c.image_bytes_range[1]};
  j["pathloss_exponent"] = c.pathloss_exponent;
  j["reference_gain"] = c.reference_gain;
  j["cell_radius_m"] = c.cell_radius_m;
  j["min_distance_m"] = c.min_distance_m;
  j["interference_coupling"] = c.interference_coupling;
  j["fading"] = c.fading;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["proc_cost_per_mb"] = c.proc_cost_per_mb;
  j["circuit_power_w"] = c.circuit_power_w;
  j["soft_penalty"] = c.soft_penalty;
  j["seed"] = c.seed;
  return j;
}

ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::string& path) {
  ScenarioConfig c;
  json_fields::Reader r(j, path);
  r.read("num_agents", c.num_agents);
  r.read("images_per_agent", c.images_per_agent);
  r.read("horizon", c.horizon);
  r.read("bandwidth_hz", c.bandwidth_hz);
  r.read("noise_power_w", c.noise_power_w);
  r.read("p_max_w", c.p_max_w);
  r.read("min_images", c.min_images);
  r.read("q_min", c.q_min);
  r.read("r_min_bps", c.r_min_bps);
  r.read("payload_bytes", c.payload_bytes);
  r.read("image_bytes_range", c.image_bytes_range);
  r.read("pathloss_exponent", c.pathloss_exponent);
  r.read("reference_gain", c.reference_gain);
  r.read("cell_radius_m", c.cell_radius_m);
  r.read("min_distance_m", c.min_distance_m);
  r.read("interference_coupling", c.interference_coupling);
  r.read("fading", c.fading);
  r.read("alpha", c.alpha);
  r.read("beta", c.beta);
  r.read("proc_cost_per_mb", c.proc_cost_per_mb);
  r.read("circuit_power_w", c.circuit_power_w);
  r.read("soft_penalty", c.soft_penalty);
  r.read("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.field(), e.what());
  }
  return c;
}

std::uint64_t scenario_hash(const ScenarioConfig& config) { return fnv1a64(to_json(config).dump()); }

std::string format_double(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace nspmoe
