#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fsban/analysis.hpp"
#include "fsban/training.hpp"

namespace fsban {

// Fixed identifier embedded in artifacts; stable across re-runs of one build.
inline constexpr const char* kBuildId = "fsban-core 0.1.0";
inline constexpr int kResultsSchemaVersion = 1;

// Line-delimited structured results. One JSON object per line, written in a
// fixed order with stable number formatting, so identical runs produce
// byte-identical files.
class ResultsWriter {
 public:
  explicit ResultsWriter(const std::string& path);
  ~ResultsWriter();

  void header(const std::string& config_echo);
  void run_info(TrainMode canonical_mode, std::uint64_t seed, std::span<const int> seen,
                int unseen);
  void epoch(const EpochStat& stat, int epoch_in_generation);
  void tau_series(std::span<const double> values);
  void teacher(int domain, const std::string& file, const std::string& checksum);
  void checkpoint(const std::string& name, const std::string& file, const std::string& checksum);
  void generation_model(int generation, const std::string& file, const std::string& checksum);
  void eval(const std::string& name, int domain, Split split, const EvalReport& report);
  void separation(const SeparationReport& report);
  void noise_curve(const std::string& series, std::span<const NoisePoint> curve);
  void summary(int best_epoch, double best_valid_acc);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Extracts the embedded canonical config from a results file.
std::string read_config_echo(const std::string& results_path);

// Aligned human-readable run summary next to the structured records.
void write_summary_table(const std::string& path, const std::string& title,
                         const std::vector<std::pair<std::string, std::string>>& rows);

}  // namespace fsban
