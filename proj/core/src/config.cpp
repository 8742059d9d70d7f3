#include "fsban/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "fsban/errors.hpp"

namespace fsban {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("config: bad number for key '" + key + "': " + value);
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("config: bad integer for key '" + key + "': " + value);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("config: bad unsigned integer for key '" + key + "': " + value);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("config: bad boolean for key '" + key + "' (use true/false): " + value);
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::string item;
  std::stringstream ss(value);
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_double(key, trim(item)));
  }
  if (out.empty()) throw ConfigError("config: empty list for key '" + key + "'");
  return out;
}

std::string format_int(long long v) { return std::to_string(v); }

std::string format_list(const std::vector<double>& vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ",";
    out += format_double(vs[i]);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},

      // universe
      {"universe_seed",
       [](ExperimentConfig& c, const std::string& v) { c.universe.seed = parse_u64("universe_seed", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.universe.seed); }},
      {"n_domains",
       [](ExperimentConfig& c, const std::string& v) { c.universe.n_domains = static_cast<int>(parse_int("n_domains", v)); },
       [](const ExperimentConfig& c) { return format_int(c.universe.n_domains); }},
      {"classes_per_domain",
       [](ExperimentConfig& c, const std::string& v) { c.universe.classes_per_domain = static_cast<int>(parse_int("classes_per_domain", v)); },
       [](const ExperimentConfig& c) { return format_int(c.universe.classes_per_domain); }},
      {"dim",
       [](ExperimentConfig& c, const std::string& v) { c.universe.dim = static_cast<int>(parse_int("dim", v)); },
       [](const ExperimentConfig& c) { return format_int(c.universe.dim); }},
      {"samples_per_class",
       [](ExperimentConfig& c, const std::string& v) { c.universe.samples_per_class = static_cast<int>(parse_int("samples_per_class", v)); },
       [](const ExperimentConfig& c) { return format_int(c.universe.samples_per_class); }},
      {"view_count",
       [](ExperimentConfig& c, const std::string& v) { c.universe.view_count = static_cast<int>(parse_int("view_count", v)); },
       [](const ExperimentConfig& c) { return format_int(c.universe.view_count); }},
      {"view_dropout",
       [](ExperimentConfig& c, const std::string& v) { c.universe.view_dropout = parse_double("view_dropout", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.view_dropout); }},
      {"view_blank_scale",
       [](ExperimentConfig& c, const std::string& v) { c.universe.view_blank_scale = parse_double("view_blank_scale", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.view_blank_scale); }},
      {"domain_blend",
       [](ExperimentConfig& c, const std::string& v) { c.universe.domain_blend = parse_double("domain_blend", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.domain_blend); }},
      {"split_base",
       [](ExperimentConfig& c, const std::string& v) { c.universe.split_base = parse_double("split_base", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.split_base); }},
      {"split_valid",
       [](ExperimentConfig& c, const std::string& v) { c.universe.split_valid = parse_double("split_valid", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.split_valid); }},
      {"split_novel",
       [](ExperimentConfig& c, const std::string& v) { c.universe.split_novel = parse_double("split_novel", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.split_novel); }},
      {"proto_scale",
       [](ExperimentConfig& c, const std::string& v) { c.universe.proto_scale = parse_double("proto_scale", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.proto_scale); }},
      {"warp_min",
       [](ExperimentConfig& c, const std::string& v) { c.universe.warp_min = parse_double("warp_min", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.warp_min); }},
      {"warp_max",
       [](ExperimentConfig& c, const std::string& v) { c.universe.warp_max = parse_double("warp_max", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.warp_max); }},
      {"noise_min",
       [](ExperimentConfig& c, const std::string& v) { c.universe.noise_min = parse_double("noise_min", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.noise_min); }},
      {"noise_max",
       [](ExperimentConfig& c, const std::string& v) { c.universe.noise_max = parse_double("noise_max", v); },
       [](const ExperimentConfig& c) { return format_double(c.universe.noise_max); }},

      // model
      {"head",
       [](ExperimentConfig& c, const std::string& v) { c.train.model.head = head_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.train.model.head); }},
      {"hidden_width",
       [](ExperimentConfig& c, const std::string& v) { c.train.model.hidden_width = static_cast<int>(parse_int("hidden_width", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.model.hidden_width); }},
      {"hidden_layers",
       [](ExperimentConfig& c, const std::string& v) { c.train.model.hidden_layers = static_cast<int>(parse_int("hidden_layers", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.model.hidden_layers); }},
      {"feature_dim",
       [](ExperimentConfig& c, const std::string& v) { c.train.model.feature_dim = static_cast<int>(parse_int("feature_dim", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.model.feature_dim); }},
      {"relation_hidden",
       [](ExperimentConfig& c, const std::string& v) { c.train.model.relation_hidden = static_cast<int>(parse_int("relation_hidden", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.model.relation_hidden); }},

      // training
      {"mode",
       [](ExperimentConfig& c, const std::string& v) { c.train.mode = train_mode_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.train.canonical_mode()); }},
      {"use_mr",
       [](ExperimentConfig& c, const std::string& v) { c.train.use_mr = parse_bool("use_mr", v); },
       [](const ExperimentConfig& c) { return c.train.use_mr ? "true" : "false"; }},
      {"use_mm",
       [](ExperimentConfig& c, const std::string& v) { c.train.use_mm = parse_bool("use_mm", v); },
       [](const ExperimentConfig& c) { return c.train.use_mm ? "true" : "false"; }},
      {"use_mct",
       [](ExperimentConfig& c, const std::string& v) { c.train.use_mct = parse_bool("use_mct", v); },
       [](const ExperimentConfig& c) { return c.train.use_mct ? "true" : "false"; }},
      {"mr_matched_teacher",
       [](ExperimentConfig& c, const std::string& v) { c.train.mr_matched_teacher = parse_bool("mr_matched_teacher", v); },
       [](const ExperimentConfig& c) { return c.train.mr_matched_teacher ? "true" : "false"; }},
      {"n_way",
       [](ExperimentConfig& c, const std::string& v) { c.train.n_way = static_cast<int>(parse_int("n_way", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.n_way); }},
      {"n_shot",
       [](ExperimentConfig& c, const std::string& v) { c.train.n_shot = static_cast<int>(parse_int("n_shot", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.n_shot); }},
      {"n_query",
       [](ExperimentConfig& c, const std::string& v) { c.train.n_query = static_cast<int>(parse_int("n_query", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.n_query); }},
      {"epochs",
       [](ExperimentConfig& c, const std::string& v) { c.train.epochs = static_cast<int>(parse_int("epochs", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.epochs); }},
      {"tasks_per_epoch",
       [](ExperimentConfig& c, const std::string& v) { c.train.tasks_per_epoch = static_cast<int>(parse_int("tasks_per_epoch", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.tasks_per_epoch); }},
      {"lambda1",
       [](ExperimentConfig& c, const std::string& v) { c.train.weights.lambda1 = parse_double("lambda1", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.weights.lambda1); }},
      {"lambda2",
       [](ExperimentConfig& c, const std::string& v) { c.train.weights.lambda2 = parse_double("lambda2", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.weights.lambda2); }},
      {"lambda3",
       [](ExperimentConfig& c, const std::string& v) { c.train.weights.lambda3 = parse_double("lambda3", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.weights.lambda3); }},
      {"student_lr",
       [](ExperimentConfig& c, const std::string& v) { c.train.student_lr = parse_double("student_lr", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.student_lr); }},
      {"teacher_lr_divisor",
       [](ExperimentConfig& c, const std::string& v) { c.train.teacher_lr_divisor = parse_double("teacher_lr_divisor", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.teacher_lr_divisor); }},
      {"warmup_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.train.warmup_epochs = static_cast<int>(parse_int("warmup_epochs", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.warmup_epochs); }},
      {"tau_init",
       [](ExperimentConfig& c, const std::string& v) { c.train.tau_init = parse_double("tau_init", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.tau_init); }},
      {"tau_lr",
       [](ExperimentConfig& c, const std::string& v) { c.train.tau_lr = parse_double("tau_lr", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.tau_lr); }},
      {"fd_epsilon",
       [](ExperimentConfig& c, const std::string& v) { c.train.fd_epsilon = parse_double("fd_epsilon", v); },
       [](const ExperimentConfig& c) { return format_double(c.train.fd_epsilon); }},
      {"generations",
       [](ExperimentConfig& c, const std::string& v) { c.train.generations = static_cast<int>(parse_int("generations", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.generations); }},
      {"valid_tasks",
       [](ExperimentConfig& c, const std::string& v) { c.train.valid_tasks = static_cast<int>(parse_int("valid_tasks", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.valid_tasks); }},
      {"teacher_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.train.teacher_epochs = static_cast<int>(parse_int("teacher_epochs", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.teacher_epochs); }},
      {"pretrain_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.train.pretrain_epochs = static_cast<int>(parse_int("pretrain_epochs", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.pretrain_epochs); }},
      {"held_out_domain",
       [](ExperimentConfig& c, const std::string& v) { c.train.held_out_domain = static_cast<int>(parse_int("held_out_domain", v)); },
       [](const ExperimentConfig& c) { return format_int(c.train.held_out_domain); }},
      {"teacher_checkpoint",
       [](ExperimentConfig& c, const std::string& v) { c.train.teacher_checkpoint = v; },
       [](const ExperimentConfig& c) { return c.train.teacher_checkpoint; }},

      // evaluation & analysis
      {"eval_tasks",
       [](ExperimentConfig& c, const std::string& v) { c.eval_tasks = static_cast<int>(parse_int("eval_tasks", v)); },
       [](const ExperimentConfig& c) { return format_int(c.eval_tasks); }},
      {"eval_split",
       [](ExperimentConfig& c, const std::string& v) { c.eval_split = split_from_string(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.eval_split)); }},
      {"sep_tasks",
       [](ExperimentConfig& c, const std::string& v) { c.sep_tasks = static_cast<int>(parse_int("sep_tasks", v)); },
       [](const ExperimentConfig& c) { return format_int(c.sep_tasks); }},
      {"lda_query_per_class",
       [](ExperimentConfig& c, const std::string& v) { c.lda_query_per_class = static_cast<int>(parse_int("lda_query_per_class", v)); },
       [](const ExperimentConfig& c) { return format_int(c.lda_query_per_class); }},
      {"noise_stds",
       [](ExperimentConfig& c, const std::string& v) { c.noise_stds = parse_double_list("noise_stds", v); },
       [](const ExperimentConfig& c) { return format_list(c.noise_stds); }},
      {"noise_trials",
       [](ExperimentConfig& c, const std::string& v) { c.noise_trials = static_cast<int>(parse_int("noise_trials", v)); },
       [](const ExperimentConfig& c) { return format_int(c.noise_trials); }},
      {"noise_tasks",
       [](ExperimentConfig& c, const std::string& v) { c.noise_tasks = static_cast<int>(parse_int("noise_tasks", v)); },
       [](const ExperimentConfig& c) { return format_int(c.noise_tasks); }},
  };
  return table;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw ConfigError("config: cannot format number");
  return std::string(buf, ptr);
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen_keys;
  bool mode_set = false;
  bool mr_set = false, mm_set = false, mct_set = false;

  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(line_no));
    if (!seen_keys.insert(key).second) {
      throw ConfigError("config: duplicate key '" + key + "'");
    }

    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (key == f.key) {
        field = &f;
        break;
      }
    }
    if (field == nullptr) throw ConfigError("config: unknown key '" + key + "'");
    field->set(cfg, value);
    if (key == "mode") mode_set = true;
    if (key == "use_mr") mr_set = true;
    if (key == "use_mm") mm_set = true;
    if (key == "use_mct") mct_set = true;
  }

  if (cfg.train.mode != TrainMode::Custom) {
    // Named presets own the toggles; explicitly set toggles must agree.
    TrainConfig preset = cfg.train;
    preset.apply_mode();
    if ((mr_set && preset.use_mr != cfg.train.use_mr) ||
        (mm_set && preset.use_mm != cfg.train.use_mm) ||
        (mct_set && preset.use_mct != cfg.train.use_mct)) {
      throw ConfigError("config: use_mr/use_mm/use_mct contradict mode '" +
                        std::string(to_string(cfg.train.mode)) + "'");
    }
    cfg.train = preset;
  } else if (mode_set && !(mr_set && mm_set && mct_set)) {
    throw ConfigError("config: mode custom requires explicit use_mr/use_mm/use_mct");
  }

  // Resolved couplings: the run seed feeds training, the universe dimension
  // fixes the encoder input width.
  cfg.train.seed = cfg.seed;
  cfg.train.model.input_dim = cfg.universe.dim;
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += "\n";
  }
  return out;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (eval_tasks < 1) throw ConfigError("config: eval_tasks must be >= 1");
  if (sep_tasks < 1) throw ConfigError("config: sep_tasks must be >= 1");
  if (lda_query_per_class < 4) throw ConfigError("config: lda_query_per_class must be >= 4");
  if (noise_trials < 1) throw ConfigError("config: noise_trials must be >= 1");
  if (noise_tasks < 1) throw ConfigError("config: noise_tasks must be >= 1");
  if (noise_stds.empty() || noise_stds.front() != 0.0) {
    throw ConfigError("config: noise_stds must start at 0");
  }
  for (std::size_t i = 1; i < noise_stds.size(); ++i) {
    if (noise_stds[i] < noise_stds[i - 1]) {
      throw ConfigError("config: noise_stds must be ascending");
    }
  }
  if (train.held_out_domain >= universe.n_domains) {
    throw ConfigError("config: held_out_domain out of range");
  }
  if (train.model.input_dim != universe.dim) {
    throw ConfigError("config: encoder input width must match the universe dimension");
  }
}

}  // namespace fsban
