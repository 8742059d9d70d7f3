#pragma once

#include <stdexcept>
#include <string>

namespace fsban {

// Invalid or inconsistent run configuration (bad key, bad value, bad combination).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or incompatible serialized artifact (universe, checkpoint, results).
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fsban
