#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "nspmoe/env.hpp"

namespace nspmoe {

// Canonical JSON encoding of a scenario. Every field is written; reading
// rejects unknown keys and fills absent keys from the defaults.
nlohmann::json to_json(const ScenarioConfig& config);
// Throws ConfigError naming the offending key (prefixed with `path`).
ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::string& path = "scenario");

// FNV-1a over the canonical JSON dump.
std::uint64_t scenario_hash(const ScenarioConfig& config);

// Shortest round-trip decimal form of a double ("%.17g" trimmed).
std::string format_double(double v);

}  // namespace nspmoe
