#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fsban/losses.hpp"
#include "fsban/model.hpp"
#include "fsban/optim.hpp"
#include "fsban/rng.hpp"
#include "fsban/universe.hpp"

namespace fsban {

// Training regimes. ban/fsban/fsban-lite are named presets over the three
// objective toggles (mutual regularization, mismatched teacher, meta-control
// of the temperature); custom reads the toggles from the config directly.
enum class TrainMode { Gen0, Ban, FsBan, FsBanLite, Custom };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  int n_way = 5;
  int n_shot = 1;
  int n_query = 16;
  int epochs = 60;
  int tasks_per_epoch = 50;
  LossWeights weights;
  double student_lr = 1e-3;
  double teacher_lr_divisor = 5.0;
  int warmup_epochs = 5;
  double tau_init = 4.0;
  double tau_lr = 0.01;
  double fd_epsilon = 0.01;
  int generations = 1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::FsBan;
  bool use_mr = true;
  bool use_mm = true;
  bool use_mct = true;
  bool mr_matched_teacher = false;  // fine-tune the episode's own teacher instead of the used one
  int valid_tasks = 100;
  int teacher_epochs = -1;  // -1: same as epochs
  int pretrain_epochs = 0;
  int held_out_domain = -1;  // -1: last domain of the universe
  ModelConfig model;
  std::string teacher_checkpoint;  // optional pre-trained teacher for single-teacher modes

  bool has_teacher() const { return mode != TrainMode::Gen0; }
  // Applies a named preset to the toggles (no-op for Custom).
  void apply_mode();
  // Named mode equivalent to the current toggles; Custom only when no preset fits.
  TrainMode canonical_mode() const;
  int resolved_teacher_epochs() const { return teacher_epochs < 0 ? epochs : teacher_epochs; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochStat {
  int generation = 0;
  double train_loss = 0.0;
  double valid_acc = 0.0;   // percent
  double teacher_tsd = 0.0;
  bool has_tsd = false;
};

struct TeacherBank {
  std::map<int, ModelParams> by_domain;
};

struct RunRecord {
  std::vector<EpochStat> epochs;
  std::vector<double> tau_series;  // one entry per training step in teacher modes
  double wall_seconds = 0.0;       // informational only; never serialized
  int best_epoch = -1;
  double best_valid_acc = 0.0;
  ModelParams student;                        // best-validation checkpoint, final generation
  std::optional<ModelParams> shared_teacher;  // single-teacher modes, post-training state
  std::optional<TeacherBank> bank;            // mismatched-teacher modes, post-training state
  std::vector<ModelParams> ban_chain;         // ban mode: gen-0 teacher, then one model per generation
  std::vector<int> seen_domains;
  int unseen_domain = -1;
};

// Uniform pick among the bank's teachers excluding the episode's own domain.
std::pair<int, const ModelParams*> select_mismatched_teacher(const TeacherBank& bank,
                                                             int episode_domain, RngStream& rng);

// Central finite difference of f at x.
double central_fd(double x, double epsilon, const std::function<double(double)>& f);

struct StepStats {
  double loss = 0.0;
  double teacher_tsd = 0.0;
  bool has_tsd = false;
  double tau = 0.0;
};

// One student-training run over a fixed set of seen domains. Construct, attach
// teachers as the mode requires, then either drive whole epochs via
// train_generation (through run_experiment) or feed individual episodes via
// step_on for fine-grained testing.
class Trainer {
 public:
  Trainer(const Universe& universe, std::vector<int> seen_domains, TrainConfig config);

  void set_shared_teacher(ModelParams teacher);
  void set_teacher_bank(TeacherBank bank);

  // Fresh student (and optimizer state) for the given generation index.
  void init_student(int generation);

  // One training step on an explicit episode pair. episode2 is only consulted
  // by the temperature meta-update and may be absent when that is off.
  StepStats step_on(const Episode& episode1, const std::optional<Episode>& episode2, int epoch);

  // Full epoch of tasks_per_epoch steps, sampling episodes per the config.
  EpochStat run_epoch(int epoch, int generation);

  // Validation pass over valid-split tasks of the seen domains.
  double validate(int epoch) const;

  // Full training of one generation; appends per-epoch stats and the tau
  // series to `record` and returns the best-validation student.
  ModelParams train_generation(int generation, RunRecord& record);

  const ModelParams& student() const { return student_; }
  const MetaTemperature& temperature() const { return temp_; }
  const std::optional<ModelParams>& shared_teacher() const { return shared_teacher_; }
  const std::optional<TeacherBank>& teacher_bank() const { return bank_; }
  const std::vector<double>& tau_series() const { return tau_series_; }

 private:
  struct StudentSnapshot {
    ModelParams params;
    AdamState adam;
  };

  double student_update(ModelParams& student, AdamState& adam, const Episode& episode,
                        const Tensor& targets, const Tensor* teacher_logits, double tau) const;
  void pretrain(int generation);
  AdamState& teacher_adam(int key);

  const Universe& universe_;
  std::vector<int> seen_;
  TrainConfig cfg_;
  ModelParams student_;
  AdamState student_adam_;
  std::optional<ModelParams> shared_teacher_;
  std::optional<TeacherBank> bank_;
  std::map<int, AdamState> teacher_adams_;  // keyed by domain, -1 for the shared teacher
  MetaTemperature temp_;
  RngStream mm_rng_;
  std::vector<double> tau_series_;
};

// Episodic cross-entropy training on a single domain's base classes; the
// generation-0 teacher recipe.
ModelParams train_gen0_teacher(const Universe& universe, int domain_id, const TrainConfig& config);

// One distillation generation against a frozen teacher (all toggles off).
ModelParams train_ban_generation(const Universe& universe, const std::vector<int>& seen_domains,
                                 const ModelParams& teacher, const TrainConfig& config,
                                 int generation, RunRecord& record);

// Full experiment dispatch on mode: gen0 / ban chains / fsban family.
RunRecord run_experiment(const TrainConfig& config, const Universe& universe);

}  // namespace fsban
