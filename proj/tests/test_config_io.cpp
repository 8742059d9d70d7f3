#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fsban/config.hpp"
#include "fsban/errors.hpp"
#include "fsban/results.hpp"

using namespace fsban;

TEST_CASE("config defaults parse from an empty file") {
  ExperimentConfig cfg = ExperimentConfig::parse("");
  CHECK(cfg.seed == 1);
  CHECK(cfg.universe.n_domains == 4);
  CHECK(cfg.train.n_query == 16);
  CHECK(cfg.train.weights.lambda2 == 0.8);
  CHECK(cfg.train.mode == TrainMode::FsBan);
  CHECK(cfg.train.use_mr);
  CHECK(cfg.train.use_mm);
  CHECK(cfg.train.use_mct);
  CHECK(cfg.train.tau_init == 4.0);
  CHECK(cfg.train.teacher_lr_divisor == 5.0);
  CHECK(cfg.train.warmup_epochs == 5);
  CHECK(cfg.train.model.input_dim == cfg.universe.dim);
  CHECK(cfg.train.seed == cfg.seed);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config parses values, comments, and whitespace") {
  ExperimentConfig cfg = ExperimentConfig::parse(
      "# a comment\n"
      "seed = 9\n"
      "\n"
      "mode = ban   # trailing comment\n"
      "lambda2 = 0.25\n"
      "noise_stds = 0, 0.1 ,0.2\n"
      "head = matching\n");
  CHECK(cfg.seed == 9);
  CHECK(cfg.train.mode == TrainMode::Ban);
  CHECK_FALSE(cfg.train.use_mr);
  CHECK(cfg.train.weights.lambda2 == 0.25);
  CHECK(cfg.noise_stds == std::vector<double>{0.0, 0.1, 0.2});
  CHECK(cfg.train.model.head == HeadKind::Matching);
}

TEST_CASE("config rejects unknown, duplicate, and malformed keys") {
  CHECK_THROWS_AS(ExperimentConfig::parse("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("seed\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("epochs = ten\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("mode = nonsense\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("head = resnet\n"), ConfigError);
}

TEST_CASE("mode presets own the toggles") {
  CHECK_THROWS_AS(ExperimentConfig::parse("mode = ban\nuse_mr = true\n"), ConfigError);
  CHECK_NOTHROW(ExperimentConfig::parse("mode = ban\nuse_mr = false\n"));
  CHECK_THROWS_AS(ExperimentConfig::parse("mode = custom\n"), ConfigError);
  ExperimentConfig custom = ExperimentConfig::parse(
      "mode = custom\nuse_mr = false\nuse_mm = false\nuse_mct = true\n");
  CHECK(custom.train.canonical_mode() == TrainMode::Custom);
}

TEST_CASE("canonical serialization is stable and round-trips") {
  ExperimentConfig cfg = ExperimentConfig::parse("seed = 123\nmode = fsban-lite\nepochs = 7\n");
  const std::string text = cfg.canonical();
  ExperimentConfig back = ExperimentConfig::parse(text);
  CHECK(back == cfg);
  CHECK(back.canonical() == text);

  // toggles spelled out as custom canonicalize to the named preset
  ExperimentConfig spelled = ExperimentConfig::parse(
      "mode = custom\nuse_mr = true\nuse_mm = true\nuse_mct = false\n");
  ExperimentConfig named = ExperimentConfig::parse("mode = fsban-lite\n");
  CHECK(spelled.canonical() == named.canonical());

  // the all-off custom grid cell serializes exactly like a direct ban config
  ExperimentConfig all_off = ExperimentConfig::parse(
      "mode = custom\nuse_mr = false\nuse_mm = false\nuse_mct = false\n");
  ExperimentConfig ban = ExperimentConfig::parse("mode = ban\n");
  CHECK(all_off.canonical() == ban.canonical());
}

TEST_CASE("config validation catches cross-field issues") {
  ExperimentConfig cfg = ExperimentConfig::parse("held_out_domain = 4\n");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  ExperimentConfig cfg2 = ExperimentConfig::parse("noise_stds = 0.1,0.2\n");
  CHECK_THROWS_AS(cfg2.validate(), ConfigError);
  ExperimentConfig cfg3 = ExperimentConfig::parse("generations = 3\n");  // fsban default mode
  CHECK_THROWS_AS(cfg3.validate(), ConfigError);
}

TEST_CASE("results writer emits deterministic lines and an extractable echo") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fsban_results_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.jsonl").string();
  const std::string p2 = (dir / "b.jsonl").string();

  ExperimentConfig cfg = ExperimentConfig::parse("seed = 3\nmode = ban\n");
  auto write = [&](const std::string& path) {
    ResultsWriter w(path);
    w.header(cfg.canonical());
    std::vector<int> seen = {0, 1, 2};
    w.run_info(TrainMode::Ban, 3, seen, 3);
    EpochStat stat;
    stat.generation = 1;
    stat.train_loss = 1.25;
    stat.valid_acc = 55.5;
    stat.teacher_tsd = 0.5;
    stat.has_tsd = true;
    w.epoch(stat, 0);
    const std::vector<double> taus = {4.0, 4.0};
    w.tau_series(taus);
    w.checkpoint("student", "student.ckpt", "abc123");
    w.summary(0, 55.5);
    w.close();
  };
  write(p1);
  write(p2);

  std::ifstream f1(p1), f2(p2);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(read_config_echo(p1) == cfg.canonical());

  // echo -> parse -> canonical is a fixed point
  ExperimentConfig re = ExperimentConfig::parse(read_config_echo(p1));
  CHECK(re.canonical() == cfg.canonical());
  fs::remove_all(dir);
}

TEST_CASE("double formatting round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-12, 123456.789, 0.0, 2.5e17}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
}
