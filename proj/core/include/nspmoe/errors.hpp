#pragma once

#include <stdexcept>
#include <string>

namespace nspmoe {

// Invalid scenario/train/manifest configuration. `field()` names the
// offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operation called in the wrong lifecycle state (e.g. step after done).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, truncated or mismatched serialized document.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problem instance exceeds an enumeration guard.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

}  // namespace nspmoe
