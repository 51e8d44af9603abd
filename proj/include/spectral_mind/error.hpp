#pragma once

#include <stdexcept>
#include <string>

namespace smind {

// Invalid input data, file contents or configuration values. The CLI maps
// these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configuration value that violates its owning module's invariants.
class ConfigError : public DataError {
 public:
  ConfigError(std::string field, const std::string& what)
      : DataError("config field '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Bad arguments to a library call (precondition violations that are not data
// problems). The CLI maps these to exit code 1 only when they come from argv.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace smind
