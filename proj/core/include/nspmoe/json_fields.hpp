#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "nspmoe/errors.hpp"

namespace nspmoe::json_fields {

// Strict object reader: absent keys keep the caller's default, wrong types
// and unknown keys raise ConfigError with the dotted key path.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <typename T>
  bool read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = convert<T>(*it);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key, "wrong type");
    }
    return true;
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key(), "unknown key");
    }
  }

 private:
  template <typename T>
  static T convert(const nlohmann::json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw nlohmann::json::type_error::create(302, "bool", nullptr);
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw nlohmann::json::type_error::create(302, "int", nullptr);
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
          throw nlohmann::json::type_error::create(302, "unsigned", nullptr);
        }
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw nlohmann::json::type_error::create(302, "number", nullptr);
      return v.get<T>();
    } else {
      return v.get<T>();
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace nspmoe::json_fields
