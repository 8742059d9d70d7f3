// Command-line front end: universe generation, training, evaluation,
// diagnostics, and the ablation grid, all driven by one flat config file.

#include <CLI11.hpp>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fsban/analysis.hpp"
#include "fsban/config.hpp"
#include "fsban/errors.hpp"
#include "fsban/model.hpp"
#include "fsban/results.hpp"
#include "fsban/training.hpp"
#include "fsban/universe.hpp"

namespace fs = std::filesystem;
using namespace fsban;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 64;
constexpr int kExitConfig = 65;
constexpr int kExitRuntime = 70;

std::string resolve_out(const std::string& out_flag, const std::string& default_leaf) {
  if (!out_flag.empty()) return out_flag;
  const char* root = std::getenv("FSBAN_OUT_ROOT");
  if (root == nullptr || *root == '\0') {
    throw ConfigError("--out not given and FSBAN_OUT_ROOT is not set");
  }
  return (fs::path(root) / default_leaf).string();
}

Universe load_universe_checked(const std::string& path, const ExperimentConfig& cfg) {
  Universe u = load_universe(path);
  if (!(u.config() == cfg.universe)) {
    throw ConfigError("universe file " + path + " does not match the config's universe section");
  }
  return u;
}

struct CommonFlags {
  std::string config_path;
  std::string universe_path;
  std::string out;
  std::string mode_override;
  std::int64_t seed_override = -1;
};

ExperimentConfig load_config(const CommonFlags& flags) {
  ExperimentConfig cfg = ExperimentConfig::parse_file(flags.config_path);
  if (!flags.mode_override.empty()) {
    cfg.train.mode = train_mode_from_string(flags.mode_override);
    cfg.train.apply_mode();
  }
  if (flags.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(flags.seed_override);
    cfg.train.seed = cfg.seed;
  }
  cfg.validate();
  return cfg;
}

// Deletes everything this run created if it throws midway.
class OutputTracker {
 public:
  void track(const fs::path& p) { created_.push_back(p); }
  void discard_all() {
    for (const fs::path& p : created_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  void commit() { created_.clear(); }

 private:
  std::vector<fs::path> created_;
};

EpisodeGeometry geometry_of(const ExperimentConfig& cfg) {
  return {cfg.train.n_way, cfg.train.n_shot, cfg.train.n_query};
}

void write_train_outputs(const ExperimentConfig& cfg, const Universe& universe,
                         const RunRecord& record, const fs::path& out_dir,
                         OutputTracker& tracker) {
  const std::string echo = cfg.canonical();
  const EpisodeGeometry geom = geometry_of(cfg);

  const fs::path results_path = out_dir / "results.jsonl";
  tracker.track(results_path);
  ResultsWriter results(results_path.string());
  results.header(echo);
  results.run_info(cfg.train.canonical_mode(), cfg.seed, record.seen_domains,
                   record.unseen_domain);

  std::vector<int> epoch_in_gen;
  {
    int current_gen = -1, counter = 0;
    for (const EpochStat& stat : record.epochs) {
      if (stat.generation != current_gen) {
        current_gen = stat.generation;
        counter = 0;
      }
      results.epoch(stat, counter++);
    }
  }
  if (cfg.train.has_teacher()) results.tau_series(record.tau_series);

  // Checkpoints, with checksums echoed into the results for provenance.
  auto save = [&](const std::string& name, const ModelParams& model) {
    const fs::path p = out_dir / name;
    tracker.track(p);
    save_checkpoint(p.string(), model, echo);
    return params_checksum(model);
  };
  results.checkpoint("student", "student.ckpt", save("student.ckpt", record.student));
  if (record.shared_teacher) {
    results.teacher(-1, "teacher.ckpt", save("teacher.ckpt", *record.shared_teacher));
  }
  if (record.bank) {
    for (const auto& [domain, params] : record.bank->by_domain) {
      const std::string name = "teacher_d" + std::to_string(domain) + ".ckpt";
      results.teacher(domain, name, save(name, params));
    }
  }
  for (std::size_t k = 0; k < record.ban_chain.size(); ++k) {
    const std::string name = "gen" + std::to_string(k) + ".ckpt";
    results.generation_model(static_cast<int>(k), name, save(name, record.ban_chain[k]));
  }

  // Final evaluations: held-out domain plus each seen domain, on the
  // configured evaluation split.
  RngStream eval_rng(cfg.seed, "eval");
  EvalReport unseen = evaluate(record.student, universe, record.unseen_domain, cfg.eval_split,
                               cfg.eval_tasks, geom,
                               eval_rng.split("domain", record.unseen_domain));
  results.eval("unseen", record.unseen_domain, cfg.eval_split, unseen);
  for (int domain : record.seen_domains) {
    EvalReport seen = evaluate(record.student, universe, domain, cfg.eval_split, cfg.eval_tasks,
                               geom, eval_rng.split("domain", domain));
    results.eval("seen", domain, cfg.eval_split, seen);
  }
  for (std::size_t k = 0; k < record.ban_chain.size(); ++k) {
    EvalReport gen = evaluate(record.ban_chain[k], universe, record.unseen_domain, cfg.eval_split,
                              cfg.eval_tasks, geom,
                              eval_rng.split("domain", record.unseen_domain));
    results.eval("gen" + std::to_string(k) + "-unseen", record.unseen_domain, cfg.eval_split, gen);
  }
  results.summary(record.best_epoch, record.best_valid_acc);
  results.close();

  char acc_buf[64];
  std::snprintf(acc_buf, sizeof acc_buf, "%.2f +/- %.2f", unseen.mean_acc, unseen.ci95);
  const fs::path summary_path = out_dir / "summary.txt";
  tracker.track(summary_path);
  write_summary_table(
      summary_path.string(), "run summary",
      {{"mode", to_string(cfg.train.canonical_mode())},
       {"seed", std::to_string(cfg.seed)},
       {"unseen domain", std::to_string(record.unseen_domain)},
       {"best epoch", std::to_string(record.best_epoch)},
       {"best valid acc", format_double(record.best_valid_acc)},
       {"unseen " + std::string(to_string(cfg.eval_split)) + " acc", acc_buf}});
}

int cmd_gen_universe(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  const std::string out = resolve_out(flags.out, "universe.bin");
  Universe u = generate_universe(cfg.universe);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_universe(u, out);
  std::cout << "wrote " << out << " (" << u.n_domains() << " domains, dim " << u.dim() << ")\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, bool dry_run, const std::string& teacher_override) {
  ExperimentConfig cfg = load_config(flags);
  if (!teacher_override.empty()) {
    cfg.train.teacher_checkpoint = teacher_override;
    cfg.validate();
  }
  Universe universe = load_universe_checked(flags.universe_path, cfg);
  if (dry_run) {
    std::cout << "config ok; universe ok (" << universe.n_domains() << " domains); dry run, "
              << "no training performed\n";
    return kExitOk;
  }
  const fs::path out_dir = resolve_out(flags.out, "run");
  fs::create_directories(out_dir);

  OutputTracker tracker;
  try {
    RunRecord record = run_experiment(cfg.train, universe);
    write_train_outputs(cfg, universe, record, out_dir, tracker);
    tracker.commit();
  } catch (...) {
    tracker.discard_all();
    throw;
  }
  std::cout << "wrote " << (out_dir / "results.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& checkpoint_path, int domain,
                 const std::string& split_name, int tasks) {
  ExperimentConfig cfg = load_config(flags);
  Universe universe = load_universe_checked(flags.universe_path, cfg);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Split split = split_name.empty() ? cfg.eval_split : split_from_string(split_name);
  const int n_tasks = tasks > 0 ? tasks : cfg.eval_tasks;
  const int dom = domain >= 0 ? domain : universe.domains().back().spec.domain_id;

  RngStream rng(cfg.seed, "eval");
  EvalReport report = evaluate(ckpt.model, universe, dom, split, n_tasks, geometry_of(cfg),
                               rng.split("domain", dom));

  const std::string out = resolve_out(flags.out, "eval.jsonl");
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  ResultsWriter results(out);
  results.header(cfg.canonical());
  results.eval("evaluate", dom, split, report);
  results.close();
  std::cout << "domain " << dom << " " << to_string(split) << ": " << report.mean_acc << " +/- "
            << report.ci95 << " (" << n_tasks << " tasks)\n";
  return kExitOk;
}

void write_tsv(const fs::path& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw SchemaError("cannot open " + path.string());
  out << header << "\n";
  for (const std::string& r : rows) out << r << "\n";
  if (!out) throw SchemaError("write failed: " + path.string());
}

int cmd_analyze(const CommonFlags& flags, const std::string& checkpoint_path,
                const std::string& results_path, int domain) {
  ExperimentConfig cfg = load_config(flags);
  Universe universe = load_universe_checked(flags.universe_path, cfg);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const int dom = domain >= 0 ? domain : universe.domains().back().spec.domain_id;
  const fs::path out_dir = resolve_out(flags.out, "analysis");
  fs::create_directories(out_dir);

  RngStream rng(cfg.seed, "analyze");

  // Class-separation metrics on the evaluation split.
  SeparationReport sep = separation_report(ckpt.model, universe, dom, cfg.eval_split,
                                           cfg.sep_tasks, cfg.train.n_way,
                                           cfg.lda_query_per_class, rng.split("separation"));

  // LDA scatter of one oversized task, plus the linear-probe accuracy.
  RngStream lda_rng = rng.split("lda");
  Episode big = sample_episode(universe, dom, cfg.eval_split, cfg.train.n_way, 1,
                               cfg.lda_query_per_class, lda_rng);
  Tensor features = encode(ckpt.model, big.query_x);
  LdaResult lda = lda_project(features, big.query_y, 2);
  const double probe_acc = lr_acc(lda.projected, big.query_y);
  {
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < lda.projected.rows(); ++i) {
      rows.push_back(format_double(lda.projected.at(i, 0)) + "\t" +
                     format_double(lda.projected.at(i, 1)) + "\t" +
                     std::to_string(big.query_y[i]));
    }
    write_tsv(out_dir / "lda_scatter.tsv", "x\ty\tseries", rows);
  }

  // Accuracy under parameter noise.
  std::vector<NoisePoint> curve =
      noise_robustness_sweep(ckpt.model, universe, dom, cfg.eval_split, cfg.noise_stds,
                             cfg.noise_trials, cfg.noise_tasks, geometry_of(cfg),
                             rng.split("robustness"));
  {
    std::vector<std::string> rows;
    for (const NoisePoint& p : curve) {
      rows.push_back(format_double(p.noise_std) + "\t" + format_double(p.mean_acc) + "\tnoise");
    }
    write_tsv(out_dir / "robustness.tsv", "x\ty\tseries", rows);
  }

  // Training-time series re-emitted as plot-ready tables when a results file
  // is provided.
  if (!results_path.empty()) {
    std::ifstream in(results_path);
    if (!in) throw SchemaError("cannot open " + results_path);
    std::vector<std::string> tau_rows, tsd_rows;
    std::string line;
    while (std::getline(in, line)) {
      auto rec = nlohmann::json::parse(line, nullptr, false);
      if (rec.is_discarded()) throw SchemaError("malformed record in " + results_path);
      const std::string kind = rec.value("record", "");
      if (kind == "tau_series") {
        const auto& values = rec.at("values");
        for (std::size_t i = 0; i < values.size(); ++i) {
          tau_rows.push_back(std::to_string(i) + "\t" +
                             format_double(values[i].get<double>()) + "\ttau");
        }
      } else if (kind == "epoch" && rec.contains("teacher_tsd")) {
        tsd_rows.push_back(rec.at("epoch").dump() + "\t" +
                           format_double(rec.at("teacher_tsd").get<double>()) + "\ttsd");
      }
    }
    write_tsv(out_dir / "tau.tsv", "x\ty\tseries", tau_rows);
    write_tsv(out_dir / "tsd.tsv", "x\ty\tseries", tsd_rows);
  }

  ResultsWriter results((out_dir / "separation.jsonl").string());
  results.header(cfg.canonical());
  results.separation(sep);
  results.close();

  write_summary_table((out_dir / "analysis.txt").string(), "analysis summary",
                      {{"domain", std::to_string(dom)},
                       {"split", to_string(cfg.eval_split)},
                       {"r_fc", format_double(sep.r_fc)},
                       {"r_hv", format_double(sep.r_hv)},
                       {"lr_acc", format_double(probe_acc)}});
  std::cout << "r_fc " << sep.r_fc << ", r_hv " << sep.r_hv << ", lr_acc " << probe_acc << "\n";
  return kExitOk;
}

int cmd_ablate(const CommonFlags& flags, int parallel) {
  ExperimentConfig base = load_config(flags);
  if (base.train.mode == TrainMode::Gen0) {
    throw ConfigError("ablate: base config must use a teacher mode");
  }
  Universe universe = load_universe_checked(flags.universe_path, base);
  const fs::path out_dir = resolve_out(flags.out, "ablation");
  fs::create_directories(out_dir);

  struct Cell {
    bool mr, mm, mct;
    std::string name;
    ExperimentConfig cfg;
    double unseen_acc = 0.0, unseen_ci = 0.0;
  };
  std::vector<Cell> cells;
  for (int mask = 0; mask < 8; ++mask) {
    Cell cell;
    cell.mr = mask & 1;
    cell.mm = mask & 2;
    cell.mct = mask & 4;
    cell.name = std::string("mr") + (cell.mr ? "1" : "0") + "_mm" + (cell.mm ? "1" : "0") +
                "_mct" + (cell.mct ? "1" : "0");
    cell.cfg = base;
    cell.cfg.train.mode = TrainMode::Custom;
    cell.cfg.train.use_mr = cell.mr;
    cell.cfg.train.use_mm = cell.mm;
    cell.cfg.train.use_mct = cell.mct;
    cell.cfg.train.mode = cell.cfg.train.canonical_mode();
    cells.push_back(std::move(cell));
  }

  std::mutex io_mutex;
  std::vector<std::thread> workers;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;

  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size() || failed.load()) return;
      Cell& cell = cells[i];
      try {
        const fs::path cell_dir = out_dir / ("cell_" + cell.name);
        fs::create_directories(cell_dir);
        RunRecord record = run_experiment(cell.cfg.train, universe);
        OutputTracker tracker;
        write_train_outputs(cell.cfg, universe, record, cell_dir, tracker);
        tracker.commit();
        RngStream eval_rng(cell.cfg.seed, "eval");
        EvalReport rep = evaluate(record.student, universe, record.unseen_domain,
                                  cell.cfg.eval_split, cell.cfg.eval_tasks, geometry_of(cell.cfg),
                                  eval_rng.split("domain", record.unseen_domain));
        cell.unseen_acc = rep.mean_acc;
        cell.unseen_ci = rep.ci95;
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "cell " << cell.name << ": " << rep.mean_acc << " +/- " << rep.ci95 << "\n";
      } catch (const std::exception& e) {
        failed.store(true);
        std::lock_guard<std::mutex> lock(io_mutex);
        failure = std::string("cell ") + cell.name + ": " + e.what();
        return;
      }
    }
  };

  const int n_workers = std::max(1, std::min(parallel, 8));
  for (int w = 0; w < n_workers; ++w) workers.emplace_back(work);
  for (std::thread& t : workers) t.join();
  if (failed.load()) throw std::runtime_error("ablate failed: " + failure);

  std::vector<std::string> rows;
  std::vector<std::pair<std::string, std::string>> table;
  for (const Cell& cell : cells) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f\t%.2f", cell.unseen_acc, cell.unseen_ci);
    rows.push_back(cell.name + "\t" + buf);
    std::snprintf(buf, sizeof buf, "%.2f +/- %.2f", cell.unseen_acc, cell.unseen_ci);
    table.emplace_back(cell.name, buf);
  }
  write_tsv(out_dir / "ablation_summary.tsv", "cell\tunseen_acc\tci95", rows);
  write_summary_table((out_dir / "ablation_summary.txt").string(), "ablation grid", table);
  std::cout << "wrote " << (out_dir / "ablation_summary.tsv").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Episodic few-shot distillation laboratory on procedural multi-domain data"};
  app.require_subcommand(1);

  CommonFlags flags;
  bool dry_run = false;
  std::string teacher_override, checkpoint_path, results_path, split_name;
  int domain = -1, tasks = 0, parallel = 1;

  auto add_common = [&](CLI::App* cmd, bool needs_universe) {
    cmd->add_option("--config", flags.config_path, "Experiment config file")->required();
    if (needs_universe) {
      cmd->add_option("--universe", flags.universe_path, "Universe file")->required();
    }
    cmd->add_option("--out", flags.out, "Output path (defaults under FSBAN_OUT_ROOT)");
    cmd->add_option("--seed", flags.seed_override, "Override the config seed");
  };

  CLI::App* gen = app.add_subcommand("gen-universe", "Generate and write a universe file");
  add_common(gen, false);

  CLI::App* train = app.add_subcommand("train", "Train per the config mode");
  add_common(train, true);
  train->add_option("--mode", flags.mode_override, "Override the config mode")
      ->check(CLI::IsMember({"gen0", "ban", "fsban", "fsban-lite"}));
  train->add_option("--teacher", teacher_override, "Teacher checkpoint for single-teacher modes");
  train->add_flag("--dry-run", dry_run, "Validate config and universe, then exit");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on sampled tasks");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  eval_cmd->add_option("--domain", domain, "Domain id (default: last domain)");
  eval_cmd->add_option("--split", split_name, "base/valid/novel (default: config eval_split)")
      ->check(CLI::IsMember({"base", "valid", "novel"}));
  eval_cmd->add_option("--tasks", tasks, "Number of tasks (default: config eval_tasks)");

  CLI::App* analyze = app.add_subcommand("analyze", "Feature diagnostics and plot-ready tables");
  add_common(analyze, true);
  analyze->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  analyze->add_option("--results", results_path, "Results file to re-emit series from");
  analyze->add_option("--domain", domain, "Domain id (default: last domain)");

  CLI::App* ablate = app.add_subcommand("ablate", "Run the 2^3 objective-toggle grid");
  add_common(ablate, true);
  ablate->add_option("--parallel", parallel, "Concurrent cells")->check(CLI::Range(1, 8));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_gen_universe(flags);
    if (app.got_subcommand(train)) return cmd_train(flags, dry_run, teacher_override);
    if (app.got_subcommand(eval_cmd)) {
      return cmd_evaluate(flags, checkpoint_path, domain, split_name, tasks);
    }
    if (app.got_subcommand(analyze)) return cmd_analyze(flags, checkpoint_path, results_path, domain);
    if (app.got_subcommand(ablate)) return cmd_ablate(flags, parallel);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
