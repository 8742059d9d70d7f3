#include "fsban/results.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "fsban/errors.hpp"

namespace fsban {

using nlohmann::json;

struct ResultsWriter::Impl {
  std::ofstream out;
  std::string path;

  void line(const json& record) {
    out << record.dump() << "\n";
    if (!out) throw SchemaError("results: write failed: " + path);
  }
};

ResultsWriter::ResultsWriter(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->out.open(path, std::ios::trunc);
  if (!impl_->out) throw SchemaError("results: cannot open " + path);
}

ResultsWriter::~ResultsWriter() = default;

void ResultsWriter::header(const std::string& config_echo) {
  impl_->line({{"record", "schema"}, {"version", kResultsSchemaVersion}});
  impl_->line({{"record", "build"}, {"id", kBuildId}});
  impl_->line({{"record", "config"}, {"text", config_echo}});
}

void ResultsWriter::run_info(TrainMode canonical_mode, std::uint64_t seed,
                             std::span<const int> seen, int unseen) {
  impl_->line({{"record", "run"},
               {"mode", to_string(canonical_mode)},
               {"seed", seed},
               {"seen", std::vector<int>(seen.begin(), seen.end())},
               {"unseen", unseen}});
}

void ResultsWriter::epoch(const EpochStat& stat, int epoch_in_generation) {
  json rec = {{"record", "epoch"},
              {"generation", stat.generation},
              {"epoch", epoch_in_generation},
              {"train_loss", stat.train_loss},
              {"valid_acc", stat.valid_acc}};
  if (stat.has_tsd) rec["teacher_tsd"] = stat.teacher_tsd;
  impl_->line(rec);
}

void ResultsWriter::tau_series(std::span<const double> values) {
  impl_->line({{"record", "tau_series"},
               {"values", std::vector<double>(values.begin(), values.end())}});
}

void ResultsWriter::teacher(int domain, const std::string& file, const std::string& checksum) {
  impl_->line({{"record", "teacher"}, {"domain", domain}, {"file", file}, {"checksum", checksum}});
}

void ResultsWriter::checkpoint(const std::string& name, const std::string& file,
                               const std::string& checksum) {
  impl_->line({{"record", "checkpoint"}, {"name", name}, {"file", file}, {"checksum", checksum}});
}

void ResultsWriter::generation_model(int generation, const std::string& file,
                                     const std::string& checksum) {
  impl_->line({{"record", "generation_model"},
               {"generation", generation},
               {"file", file},
               {"checksum", checksum}});
}

void ResultsWriter::eval(const std::string& name, int domain, Split split,
                         const EvalReport& report) {
  impl_->line({{"record", "eval"},
               {"name", name},
               {"domain", domain},
               {"split", to_string(split)},
               {"mean_acc", report.mean_acc},
               {"ci95", report.ci95},
               {"n_tasks", report.n_tasks},
               {"task_acc", report.task_acc}});
}

void ResultsWriter::separation(const SeparationReport& report) {
  impl_->line({{"record", "separation"},
               {"r_fc", report.r_fc},
               {"r_hv", report.r_hv},
               {"n_tasks", report.n_tasks}});
}

void ResultsWriter::noise_curve(const std::string& series, std::span<const NoisePoint> curve) {
  json points = json::array();
  for (const NoisePoint& p : curve) {
    points.push_back({{"std", p.noise_std}, {"acc", p.mean_acc}});
  }
  impl_->line({{"record", "noise_curve"}, {"series", series}, {"points", points}});
}

void ResultsWriter::summary(int best_epoch, double best_valid_acc) {
  impl_->line(
      {{"record", "summary"}, {"best_epoch", best_epoch}, {"best_valid_acc", best_valid_acc}});
}

void ResultsWriter::close() {
  impl_->out.close();
  if (!impl_->out) throw SchemaError("results: close failed: " + impl_->path);
}

std::string read_config_echo(const std::string& results_path) {
  std::ifstream in(results_path);
  if (!in) throw SchemaError("results: cannot open " + results_path);
  std::string line;
  while (std::getline(in, line)) {
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw SchemaError("results: malformed record in " + results_path);
    if (rec.value("record", "") == "config") {
      return rec.at("text").get<std::string>();
    }
  }
  throw SchemaError("results: no config record in " + results_path);
}

void write_summary_table(const std::string& path, const std::string& title,
                         const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw SchemaError("summary: cannot open " + path);
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  out << title << "\n";
  for (std::size_t i = 0; i < title.size(); ++i) out << '-';
  out << "\n";
  for (const auto& [k, v] : rows) {
    out << k;
    for (std::size_t i = k.size(); i < width + 2; ++i) out << ' ';
    out << v << "\n";
  }
  if (!out) throw SchemaError("summary: write failed: " + path);
}

}  // namespace fsban
