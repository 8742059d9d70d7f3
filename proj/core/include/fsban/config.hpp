#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsban/training.hpp"
#include "fsban/universe.hpp"

namespace fsban {

// Whole-experiment configuration backed by a flat, human-readable
// `key = value` file. Every key has a default, unknown or duplicate keys are
// rejected, and the canonical serialization is byte-stable, so an artifact's
// embedded config reproduces the run exactly.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  UniverseConfig universe;
  TrainConfig train;
  int eval_tasks = 1000;
  Split eval_split = Split::Novel;
  int sep_tasks = 50;
  int lda_query_per_class = 200;
  std::vector<double> noise_stds = {0.0, 0.02, 0.05, 0.1, 0.2, 0.4};
  int noise_trials = 3;
  int noise_tasks = 100;

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig parse_file(const std::string& path);

  // Canonical serialization: fixed key order, canonical mode name, shortest
  // round-trip number formatting.
  std::string canonical() const;

  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

std::string format_double(double value);

}  // namespace fsban
