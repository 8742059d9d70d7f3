#include "fsban/training.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "fsban/analysis.hpp"
#include "fsban/errors.hpp"

namespace fsban {
namespace {

constexpr int kSharedTeacherKey = -1;
constexpr int kPretrainBatchesPerEpoch = 10;

std::uint64_t derived_seed(std::uint64_t seed, const char* label, std::uint64_t index = 0) {
  RngStream s(seed, label);
  return s.split("seed", index).next_u64();
}

}  // namespace

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Gen0: return "gen0";
    case TrainMode::Ban: return "ban";
    case TrainMode::FsBan: return "fsban";
    case TrainMode::FsBanLite: return "fsban-lite";
    case TrainMode::Custom: return "custom";
  }
  throw std::invalid_argument("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "gen0") return TrainMode::Gen0;
  if (name == "ban") return TrainMode::Ban;
  if (name == "fsban") return TrainMode::FsBan;
  if (name == "fsban-lite") return TrainMode::FsBanLite;
  if (name == "custom") return TrainMode::Custom;
  throw ConfigError("unknown mode: " + name);
}

void TrainConfig::apply_mode() {
  switch (mode) {
    case TrainMode::Gen0:
    case TrainMode::Ban:
      use_mr = use_mm = use_mct = false;
      break;
    case TrainMode::FsBan:
      use_mr = use_mm = use_mct = true;
      break;
    case TrainMode::FsBanLite:
      use_mr = use_mm = true;
      use_mct = false;
      break;
    case TrainMode::Custom:
      break;
  }
}

TrainMode TrainConfig::canonical_mode() const {
  if (mode == TrainMode::Gen0) return TrainMode::Gen0;
  if (use_mr && use_mm && use_mct) return TrainMode::FsBan;
  if (use_mr && use_mm && !use_mct) return TrainMode::FsBanLite;
  if (!use_mr && !use_mm && !use_mct) return TrainMode::Ban;
  return TrainMode::Custom;
}

void TrainConfig::validate() const {
  weights.validate();
  if (n_way < 2) throw ConfigError("config: n_way must be >= 2");
  if (n_shot < 1 || n_query < 1) throw ConfigError("config: n_shot and n_query must be >= 1");
  if (epochs < 0 || tasks_per_epoch < 1) {
    throw ConfigError("config: epochs must be >= 0 and tasks_per_epoch >= 1");
  }
  if (!(student_lr > 0.0)) throw ConfigError("config: student_lr must be > 0");
  if (teacher_lr_divisor < 1.0) throw ConfigError("config: teacher_lr_divisor must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("config: warmup_epochs must be >= 0");
  if (!(tau_init > 0.0)) throw ConfigError("config: tau_init must be > 0");
  if (tau_lr < 0.0) throw ConfigError("config: tau_lr must be >= 0");
  if (!(fd_epsilon > 0.0)) throw ConfigError("config: fd_epsilon must be > 0");
  if (generations < 1) throw ConfigError("config: generations must be >= 1");
  if (generations > 1 && canonical_mode() != TrainMode::Ban) {
    throw ConfigError("config: generations > 1 is only supported in ban mode");
  }
  if (valid_tasks < 1) throw ConfigError("config: valid_tasks must be >= 1");
  if (pretrain_epochs < 0) throw ConfigError("config: pretrain_epochs must be >= 0");
  if (model.input_dim < 1 || model.hidden_width < 1 || model.hidden_layers < 0 ||
      model.feature_dim < 1 || model.relation_hidden < 1) {
    throw ConfigError("config: model dimensions must be positive");
  }
  if (!teacher_checkpoint.empty() && use_mm) {
    throw ConfigError("config: teacher_checkpoint applies to single-teacher modes only");
  }
}

std::pair<int, const ModelParams*> select_mismatched_teacher(const TeacherBank& bank,
                                                             int episode_domain, RngStream& rng) {
  if (bank.by_domain.size() < 2) {
    throw std::invalid_argument("select_mismatched_teacher: bank needs at least two domains");
  }
  std::vector<int> candidates;
  candidates.reserve(bank.by_domain.size());
  for (const auto& [domain, params] : bank.by_domain) {
    if (domain != episode_domain) candidates.push_back(domain);
  }
  const int pick = candidates[rng.next_below(candidates.size())];
  return {pick, &bank.by_domain.at(pick)};
}

double central_fd(double x, double epsilon, const std::function<double(double)>& f) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("central_fd: epsilon must be > 0");
  return (f(x + epsilon) - f(x - epsilon)) / (2.0 * epsilon);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const Universe& universe, std::vector<int> seen_domains, TrainConfig config)
    : universe_(universe),
      seen_(std::move(seen_domains)),
      cfg_(std::move(config)),
      student_adam_(AdamConfig{.lr = cfg_.student_lr}),
      temp_(MetaTemperature::from_tau(cfg_.tau_init)),
      mm_rng_(cfg_.seed, "mm") {
  if (seen_.empty()) throw ConfigError("trainer: at least one seen domain required");
  for (int d : seen_) universe_.domain(d);  // throws on unknown ids
  init_student(0);
}

void Trainer::set_shared_teacher(ModelParams teacher) {
  if (teacher.config != cfg_.model) {
    throw ConfigError("trainer: teacher/student model configuration mismatch");
  }
  shared_teacher_ = std::move(teacher);
}

void Trainer::set_teacher_bank(TeacherBank bank) {
  for (const auto& [domain, params] : bank.by_domain) {
    if (params.config != cfg_.model) {
      throw ConfigError("trainer: teacher/student model configuration mismatch");
    }
  }
  bank_ = std::move(bank);
}

void Trainer::init_student(int generation) {
  // Consecutive student generations draw fresh initializations; the first
  // student shares the plain-training init stream, which keeps zero-weight
  // distillation bit-identical to plain episodic training under one seed.
  const std::uint64_t init_index =
      generation > 0 ? static_cast<std::uint64_t>(generation - 1) : 0;
  RngStream init = RngStream(cfg_.seed, "init").split("generation", init_index);
  student_ = init_model(cfg_.model, init);
  student_adam_ = AdamState(AdamConfig{.lr = cfg_.student_lr});
  tau_series_.clear();
  temp_ = MetaTemperature::from_tau(cfg_.tau_init);
  if (cfg_.pretrain_epochs > 0) pretrain(0);
}

void Trainer::pretrain(int) {
  // Encoder warm start: fit the encoder plus a disposable linear classifier on
  // all base classes of one seen domain, then drop the classifier.
  const int domain = seen_.front();
  const Domain& dom = universe_.domain(domain);
  const std::vector<int>& classes = universe_.split_classes(domain, Split::Base);
  const std::size_t n_classes = classes.size();
  RngStream rng(cfg_.seed, "pretrain");

  const std::size_t feat = static_cast<std::size_t>(cfg_.model.feature_dim);
  const double a = std::sqrt(3.0 / static_cast<double>(feat));
  std::vector<double> wdata(feat * n_classes);
  for (double& v : wdata) v = a * (2.0 * rng.next_double() - 1.0);
  Tensor w = Tensor::matrix(feat, n_classes, std::move(wdata));
  Tensor b = Tensor::zeros({n_classes});

  AdamState opt(AdamConfig{.lr = cfg_.student_lr});
  std::vector<int> labels(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) labels[c] = static_cast<int>(c);
  Tensor targets = one_hot(labels, n_classes);

  for (int e = 0; e < cfg_.pretrain_epochs; ++e) {
    for (int batch = 0; batch < kPretrainBatchesPerEpoch; ++batch) {
      Tensor x = Tensor::zeros({n_classes, static_cast<std::size_t>(universe_.dim())});
      for (std::size_t c = 0; c < n_classes; ++c) {
        Tensor sample = universe_.render_class(classes[c], dom.spec, 1, rng);
        std::copy(sample.data().begin(), sample.data().end(),
                  x.data().begin() + c * static_cast<std::size_t>(universe_.dim()));
      }
      Tape tape;
      ModelParams traced = trace(student_, tape);
      Tensor tw = tape.watch(w);
      Tensor tb = tape.watch(b);
      Tensor features = encode(traced, x);
      Tensor logits = add_bias(matmul(features, tw), tb);
      Tensor loss = cross_entropy(softened_softmax(logits, 1.0), targets);
      Gradients grads = tape.backward(loss);

      std::vector<Tensor*> traced_params = traced.parameters();
      std::vector<Tensor> gs;
      gs.reserve(traced_params.size() + 2);
      for (Tensor* p : traced_params) gs.push_back(grads.wrt(*p));
      gs.push_back(grads.wrt(tw));
      gs.push_back(grads.wrt(tb));

      std::vector<Tensor*> real = student_.parameters();
      real.push_back(&w);
      real.push_back(&b);
      opt.step(real, gs);
    }
  }
}

AdamState& Trainer::teacher_adam(int key) {
  auto it = teacher_adams_.find(key);
  if (it == teacher_adams_.end()) {
    it = teacher_adams_
             .emplace(key, AdamState(AdamConfig{.lr = cfg_.student_lr / cfg_.teacher_lr_divisor}))
             .first;
  }
  return it->second;
}

double Trainer::student_update(ModelParams& student, AdamState& adam, const Episode& episode,
                               const Tensor& targets, const Tensor* teacher_logits,
                               double tau) const {
  Tape tape;
  ModelParams traced = trace(student, tape);
  Tensor logits = head_logits(traced, episode);
  Tensor probs = softened_softmax(logits, tau);
  Tensor loss;
  if (teacher_logits != nullptr) {
    Tensor teacher_probs = softened_softmax(*teacher_logits, tau);
    loss = cfg_.use_mm ? mm_loss(probs, teacher_probs, targets, cfg_.weights, tau)
                       : ban_loss(probs, teacher_probs, targets, cfg_.weights, tau);
  } else {
    loss = scale(cross_entropy(probs, targets), cfg_.weights.lambda1);
  }
  const double loss_value = loss.value();
  Gradients grads = tape.backward(loss);

  std::vector<Tensor*> traced_params = traced.parameters();
  std::vector<Tensor> gs;
  gs.reserve(traced_params.size());
  for (Tensor* p : traced_params) gs.push_back(grads.wrt(*p));
  adam.step(student.parameters(), gs);
  return loss_value;
}

StepStats Trainer::step_on(const Episode& episode1, const std::optional<Episode>& episode2,
                           int epoch) {
  StepStats stats;
  const double tau = temp_.tau();
  stats.tau = tau;
  Tensor targets = one_hot(episode1.query_y, static_cast<std::size_t>(episode1.n_way));

  const ModelParams* teacher = nullptr;
  int teacher_key = kSharedTeacherKey;
  if (cfg_.has_teacher()) {
    if (cfg_.use_mm) {
      if (!bank_) throw std::logic_error("trainer: mismatched-teacher mode without a bank");
      auto [domain, params] = select_mismatched_teacher(*bank_, episode1.domain_id, mm_rng_);
      if (domain == episode1.domain_id) {
        throw std::logic_error("trainer: mismatched selection returned the episode's own domain");
      }
      teacher = params;
      teacher_key = domain;
    } else {
      if (!shared_teacher_) throw std::logic_error("trainer: teacher mode without a teacher");
      teacher = &*shared_teacher_;
    }
  }

  Tensor teacher_logits;
  Tensor student_probs;  // this step's detached student prediction, for the feedback path
  if (teacher != nullptr) {
    teacher_logits = head_logits(*teacher, episode1);
    stats.teacher_tsd = tsd(softmax_rows(teacher_logits, 1.0), 3);
    stats.has_tsd = true;
  }

  const bool do_mct = cfg_.has_teacher() && cfg_.use_mct && cfg_.tau_lr != 0.0;
  std::optional<StudentSnapshot> snapshot;
  if (do_mct) {
    if (!episode2) {
      throw std::invalid_argument("trainer: temperature meta-update needs a second episode");
    }
    if (episode2->domain_id == episode1.domain_id) {
      throw std::invalid_argument(
          "trainer: the temperature episode must come from a different domain");
    }
    snapshot = StudentSnapshot{student_, student_adam_};
  }

  // Student step. The pre-update prediction doubles as the feedback signal for
  // the teacher below.
  {
    Tape tape;
    ModelParams traced = trace(student_, tape);
    Tensor logits = head_logits(traced, episode1);
    Tensor probs = softened_softmax(logits, tau);
    Tensor loss;
    if (teacher != nullptr) {
      Tensor teacher_probs = softened_softmax(teacher_logits, tau);
      loss = cfg_.use_mm ? mm_loss(probs, teacher_probs, targets, cfg_.weights, tau)
                         : ban_loss(probs, teacher_probs, targets, cfg_.weights, tau);
    } else {
      loss = scale(cross_entropy(probs, targets), cfg_.weights.lambda1);
    }
    stats.loss = loss.value();
    student_probs = probs.detached();
    Gradients grads = tape.backward(loss);
    std::vector<Tensor*> traced_params = traced.parameters();
    std::vector<Tensor> gs;
    gs.reserve(traced_params.size());
    for (Tensor* p : traced_params) gs.push_back(grads.wrt(*p));
    student_adam_.step(student_.parameters(), gs);
  }

  // Teacher fine-tuning toward the student's prediction, gated by warmup.
  if (teacher != nullptr && cfg_.use_mr && epoch >= cfg_.warmup_epochs) {
    ModelParams* target = nullptr;
    int target_key = teacher_key;
    if (cfg_.use_mm) {
      if (cfg_.mr_matched_teacher) target_key = episode1.domain_id;
      target = &bank_->by_domain.at(target_key);
    } else {
      target = &*shared_teacher_;
    }
    Tape tape;
    ModelParams traced = trace(*target, tape);
    Tensor t_logits = head_logits(traced, episode1);
    Tensor t_probs = softened_softmax(t_logits, tau);
    Tensor loss = mr_loss(student_probs, t_probs, cfg_.weights, tau);
    Gradients grads = tape.backward(loss);
    std::vector<Tensor*> traced_params = traced.parameters();
    std::vector<Tensor> gs;
    gs.reserve(traced_params.size());
    for (Tensor* p : traced_params) gs.push_back(grads.wrt(*p));
    teacher_adam(target_key).step(target->parameters(), gs);
  }

  // Temperature meta-update: central finite differences through a replay of
  // the student step from its pre-step state, scored at tau = 1 on the task
  // from the other domain.
  if (do_mct) {
    const Episode& ep2 = *episode2;
    auto outer_loss = [&](double rho) {
      ModelParams replay_student = snapshot->params;
      AdamState replay_adam = snapshot->adam;
      student_update(replay_student, replay_adam, episode1, targets,
                     teacher != nullptr ? &teacher_logits : nullptr, softplus(rho));
      return mct_meta_loss(replay_student, ep2);
    };
    const double grad = central_fd(temp_.rho, cfg_.fd_epsilon, outer_loss);
    temp_.rho -= cfg_.tau_lr * grad;
  }

  if (cfg_.has_teacher()) tau_series_.push_back(temp_.tau());
  return stats;
}

EpochStat Trainer::run_epoch(int epoch, int generation) {
  RngStream domain_rng = RngStream(cfg_.seed, "epoch-domain").split("epoch", epoch);
  const int domain = seen_[domain_rng.next_below(seen_.size())];
  const bool want_ep2 = cfg_.has_teacher() && cfg_.use_mct && cfg_.tau_lr != 0.0;

  double loss_sum = 0.0;
  double tsd_sum = 0.0;
  int tsd_count = 0;
  for (int task = 0; task < cfg_.tasks_per_epoch; ++task) {
    RngStream ep_rng =
        RngStream(cfg_.seed, "episodes").split("epoch", epoch).split("task", task);
    Episode ep1 = sample_episode(universe_, domain, Split::Base, cfg_.n_way, cfg_.n_shot,
                                 cfg_.n_query, ep_rng);
    validate_episode(universe_, ep1, Split::Base);

    std::optional<Episode> ep2;
    if (want_ep2) {
      RngStream mct_rng = RngStream(cfg_.seed, "mct").split("epoch", epoch).split("task", task);
      std::vector<int> others;
      others.reserve(seen_.size());
      for (int d : seen_) {
        if (d != domain) others.push_back(d);
      }
      if (others.empty()) {
        throw ConfigError("trainer: temperature meta-update needs at least two seen domains");
      }
      const int domain2 = others[mct_rng.next_below(others.size())];
      ep2 = sample_episode(universe_, domain2, Split::Base, cfg_.n_way, cfg_.n_shot, cfg_.n_query,
                           mct_rng);
      validate_episode(universe_, *ep2, Split::Base);
    }

    StepStats stats = step_on(ep1, ep2, epoch);
    loss_sum += stats.loss;
    if (stats.has_tsd) {
      tsd_sum += stats.teacher_tsd;
      ++tsd_count;
    }
  }

  EpochStat stat;
  stat.generation = generation;
  stat.train_loss = loss_sum / cfg_.tasks_per_epoch;
  stat.valid_acc = validate(epoch);
  stat.teacher_tsd = tsd_count > 0 ? tsd_sum / tsd_count : 0.0;
  stat.has_tsd = tsd_count > 0;
  return stat;
}

double Trainer::validate(int epoch) const {
  RngStream rng = RngStream(cfg_.seed, "valid").split("epoch", epoch);
  double acc = 0.0;
  for (int task = 0; task < cfg_.valid_tasks; ++task) {
    const int domain = seen_[rng.next_below(seen_.size())];
    Episode ep = sample_episode(universe_, domain, Split::Valid, cfg_.n_way, cfg_.n_shot,
                                cfg_.n_query, rng);
    acc += episode_accuracy(student_, ep);
  }
  return 100.0 * acc / cfg_.valid_tasks;
}

ModelParams Trainer::train_generation(int generation, RunRecord& record) {
  init_student(generation);
  ModelParams best = student_;
  double best_acc = -1.0;
  int best_epoch = -1;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    EpochStat stat = run_epoch(epoch, generation);
    record.epochs.push_back(stat);
    if (stat.valid_acc > best_acc) {
      best_acc = stat.valid_acc;
      best = student_;
      best_epoch = epoch;
    }
  }
  record.best_epoch = best_epoch;
  record.best_valid_acc = best_acc < 0.0 ? 0.0 : best_acc;
  record.tau_series.insert(record.tau_series.end(), tau_series_.begin(), tau_series_.end());
  return best;
}

// ---------------------------------------------------------------------------
// Regime drivers
// ---------------------------------------------------------------------------

ModelParams train_gen0_teacher(const Universe& universe, int domain_id, const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.mode = TrainMode::Gen0;
  cfg.apply_mode();
  cfg.generations = 1;
  const auto& base = universe.split_classes(domain_id, Split::Base);
  if (static_cast<int>(base.size()) < cfg.n_way) {
    throw ConfigError("train_gen0_teacher: domain has fewer base classes than n_way");
  }
  Trainer trainer(universe, {domain_id}, cfg);
  RunRecord scratch;
  return trainer.train_generation(0, scratch);
}

ModelParams train_ban_generation(const Universe& universe, const std::vector<int>& seen_domains,
                                 const ModelParams& teacher, const TrainConfig& config,
                                 int generation, RunRecord& record) {
  TrainConfig cfg = config;
  cfg.mode = TrainMode::Ban;
  cfg.apply_mode();
  Trainer trainer(universe, seen_domains, cfg);
  trainer.set_shared_teacher(teacher);
  ModelParams student = trainer.train_generation(generation, record);
  if (!params_equal(*trainer.shared_teacher(), teacher)) {
    throw std::logic_error("train_ban_generation: frozen teacher was modified");
  }
  return student;
}

namespace {

ModelParams make_shared_teacher(const TrainConfig& cfg, const Universe& universe,
                                const std::vector<int>& seen) {
  if (!cfg.teacher_checkpoint.empty()) {
    Checkpoint ckpt = load_checkpoint(cfg.teacher_checkpoint);
    if (ckpt.model.config != cfg.model) {
      throw ConfigError("teacher checkpoint does not match the student model configuration");
    }
    return std::move(ckpt.model);
  }
  // The internally trained teacher is an independent run: derived seed, so
  // its initialization and episode draws are uncorrelated with the student's.
  // Distillation then transfers a genuinely different solution.
  TrainConfig tcfg = cfg;
  tcfg.mode = TrainMode::Gen0;
  tcfg.apply_mode();
  tcfg.generations = 1;
  tcfg.epochs = cfg.resolved_teacher_epochs();
  tcfg.seed = derived_seed(cfg.seed, "teacher");
  Trainer trainer(universe, seen, tcfg);
  RunRecord scratch;
  return trainer.train_generation(0, scratch);
}

TeacherBank make_teacher_bank(const TrainConfig& cfg, const Universe& universe,
                              const std::vector<int>& seen) {
  TeacherBank bank;
  for (int domain : seen) {
    TrainConfig tcfg = cfg;
    tcfg.generations = 1;
    tcfg.epochs = cfg.resolved_teacher_epochs();
    tcfg.seed = derived_seed(cfg.seed, "teacher", static_cast<std::uint64_t>(domain));
    tcfg.teacher_checkpoint.clear();
    bank.by_domain.emplace(domain, train_gen0_teacher(universe, domain, tcfg));
  }
  return bank;
}

}  // namespace

RunRecord run_experiment(const TrainConfig& config, const Universe& universe) {
  TrainConfig cfg = config;
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const int held_out = cfg.held_out_domain < 0
                           ? universe.domains().back().spec.domain_id
                           : cfg.held_out_domain;
  auto [seen, unseen] = leave_one_out(universe, held_out);

  RunRecord record;
  record.seen_domains = seen;
  record.unseen_domain = unseen;

  const TrainMode canonical = cfg.canonical_mode();
  if (canonical == TrainMode::Gen0) {
    Trainer trainer(universe, seen, cfg);
    record.student = trainer.train_generation(0, record);
  } else if (canonical == TrainMode::Ban) {
    ModelParams teacher = make_shared_teacher(cfg, universe, seen);
    record.ban_chain.push_back(teacher);
    for (int k = 1; k <= cfg.generations; ++k) {
      ModelParams student =
          train_ban_generation(universe, seen, record.ban_chain.back(), cfg, k, record);
      record.ban_chain.push_back(std::move(student));
    }
    record.student = record.ban_chain.back();
    record.shared_teacher = record.ban_chain.front();
  } else {
    if ((cfg.use_mm || cfg.use_mct) && seen.size() < 2) {
      throw ConfigError("run_experiment: mismatched teachers and the temperature meta-update "
                        "need at least two seen domains");
    }
    Trainer trainer(universe, seen, cfg);
    if (cfg.use_mm) {
      trainer.set_teacher_bank(make_teacher_bank(cfg, universe, seen));
    } else {
      trainer.set_shared_teacher(make_shared_teacher(cfg, universe, seen));
    }
    record.student = trainer.train_generation(0, record);
    record.shared_teacher = trainer.shared_teacher();
    record.bank = trainer.teacher_bank();
  }

  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

}  // namespace fsban
