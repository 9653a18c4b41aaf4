#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vopd/config.hpp"
#include "vopd/io.hpp"

using namespace vopd;
namespace fs = std::filesystem;

namespace {

struct ScratchDir {
  fs::path path;
  ScratchDir() {
    path = fs::temp_directory_path() /
           ("vopd_io_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("defaults survive a render/parse round trip") {
  ExperimentConfig cfg;
  std::string text = render_config(cfg);
  ExperimentConfig back = parse_config_text(text, "render");
  CHECK(render_config(back) == text);
  CHECK(back.train.vocab_size == 64);
  CHECK(back.train.steps == 2000);
  CHECK(back.train.learning_rate == 128.0);
  CHECK(back.train.estimator.kind == EstimatorKind::opd);
  CHECK(back.sweep_k_values == std::vector<int32_t>{1, 5, 20, 50, 100});
  CHECK(back.bench_vocab_sizes == std::vector<int64_t>{1000, 10000, 100000});
}

TEST_CASE("parser accepts comments, blanks, and flexible spacing") {
  std::string text =
      "# experiment\n"
      "\n"
      "vocab_size=16   # inline comment\n"
      "  steps = 12\n"
      "estimator = vopd_top_k\n"
      "k = 4\n"
      "output_dir = runs/a\n"
      "emit_plots = false\n"
      "sweep_k_values = 1, 2 ,4\n";
  ExperimentConfig cfg = parse_config_text(text, "t");
  CHECK(cfg.train.vocab_size == 16);
  CHECK(cfg.train.steps == 12);
  CHECK(cfg.train.estimator.kind == EstimatorKind::vopd_top_k);
  CHECK(cfg.train.estimator.k == 4);
  CHECK(cfg.output_dir == "runs/a");
  CHECK(cfg.emit_plots == false);
  CHECK(cfg.sweep_k_values == std::vector<int32_t>{1, 2, 4});
}

TEST_CASE("a typo'd key is a hard error naming the key and line") {
  std::string text = "vocab_size = 16\nsteps = 5\nlearning_rote = 0.1\n";
  try {
    parse_config_text(text, "exp.cfg");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(e.line_number == 3);
    CHECK(std::string(e.what()) ==
          "exp.cfg:3: unknown config key 'learning_rote'");
  }
}

TEST_CASE("bad values report the key and expectation") {
  CHECK_THROWS_AS(parse_config_text("steps = soon\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("emit_plots = yes\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("optimizer = adam\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("estimator = topk\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("init_mode = warm\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("sweep_k_values = 1,,2\n", "t"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_text("vocab_size\n", "t"), ConfigError);
}

TEST_CASE("parse-time validation catches inconsistent configs") {
  // k outside the vocabulary for a top-k estimator.
  std::string text = "vocab_size = 8\nestimator = vopd_top_k\nk = 100\n";
  CHECK_THROWS_AS(parse_config_text(text, "t"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("steps = 0\n", "t"),
                  std::invalid_argument);
}

TEST_CASE("config files load from disk") {
  ScratchDir dir;
  std::string path = dir.file("exp.cfg");
  atomic_write(path, "vocab_size = 32\nsteps = 7\n");
  ExperimentConfig cfg = parse_config_file(path);
  CHECK(cfg.train.vocab_size == 32);
  CHECK(cfg.train.steps == 7);
  CHECK_THROWS_AS(parse_config_file(dir.file("missing.cfg")),
                  std::invalid_argument);
}

TEST_CASE("fmt_double round-trips doubles exactly") {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 6.62607015e-34, -0.0, 123456.789}) {
    CHECK(std::stod(fmt_double(x)) == x);
  }
}

TEST_CASE("atomic_write creates parents and leaves no temp files") {
  ScratchDir dir;
  std::string path = (dir.path / "deep" / "nested" / "file.txt").string();
  atomic_write(path, "payload");
  CHECK(slurp(path) == "payload");
  CHECK(!fs::exists(path + ".tmp"));
  atomic_write(path, "replaced");
  CHECK(slurp(path) == "replaced");
}

TEST_CASE("csv escaping quotes only what needs quoting") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("metrics round-trip the csv format bit-exactly") {
  ScratchDir dir;
  std::vector<MetricsRecord> metrics(3);
  metrics[0].step = 0;
  metrics[0].eval_reverse_kl = 2.7182818284590452;
  metrics[0].wall_clock_ms = 1.25;
  metrics[1].step = 1;
  metrics[1].grad_l2_norm = 0.1234567890123456789;
  metrics[1].mean_reward = -3.5;
  metrics[1].mean_advantage = 0.25;
  metrics[1].mean_full_kl = 3.75;
  metrics[1].eval_reverse_kl = 2.5;
  metrics[1].greedy_agreement = 0.5;
  metrics[1].empirical_grad_variance = 1e-7;
  metrics[1].wall_clock_ms = 2.5;
  metrics[2].step = 2;
  metrics[2].eval_reverse_kl = 2.25;
  metrics[2].wall_clock_ms = 2.0;

  std::string path = dir.file("metrics.csv");
  write_metrics_csv(path, metrics);

  std::string text = slurp(path);
  CHECK(text.rfind(kMetricsHeader, 0) == 0);

  std::vector<MetricsRecord> back = read_metrics_csv(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].step == metrics[i].step);
    CHECK(back[i].grad_l2_norm == metrics[i].grad_l2_norm);
    CHECK(back[i].mean_reward == metrics[i].mean_reward);
    CHECK(back[i].mean_advantage == metrics[i].mean_advantage);
    CHECK(back[i].mean_full_kl == metrics[i].mean_full_kl);
    CHECK(back[i].eval_reverse_kl == metrics[i].eval_reverse_kl);
    CHECK(back[i].greedy_agreement == metrics[i].greedy_agreement);
    CHECK(back[i].empirical_grad_variance ==
          metrics[i].empirical_grad_variance);
    CHECK(back[i].wall_clock_ms == metrics[i].wall_clock_ms);
  }

  // The probe column is simply empty on non-probe rows.
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);  // header
  std::getline(lines, line);
  CHECK(line.find(",,") != std::string::npos);
}

TEST_CASE("metrics reader rejects foreign files") {
  ScratchDir dir;
  std::string path = dir.file("bad.csv");
  atomic_write(path, "step,foo\n1,2\n");
  CHECK_THROWS_AS(read_metrics_csv(path), std::invalid_argument);
  atomic_write(path, std::string(kMetricsHeader) + "\n1,2,3\n");
  CHECK_THROWS_AS(read_metrics_csv(path), std::invalid_argument);
  CHECK_THROWS_AS(read_metrics_csv(dir.file("absent.csv")),
                  std::invalid_argument);
}

TEST_CASE("token records round-trip the jsonl format bit-exactly") {
  ScratchDir dir;
  std::vector<TokenRecord> records(2);
  records[0].step = 1;
  records[0].reward = -0.4054651081081644;
  records[0].baseline = -0.13081203594113697;
  records[0].advantage = -0.2746530721670274;
  records[0].full_kl = 0.13081203594113697;
  records[0].student_logprob = -0.2876820724517809;
  records[0].teacher_logprob = -0.6931471805599453;
  records[1].step = 2;
  records[1].reward = 1.0 / 3.0;

  std::string path = dir.file("records.jsonl");
  write_records_jsonl(path, records);
  std::vector<TokenRecord> back = read_records_jsonl(path);
  REQUIRE(back.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back[i].step == records[i].step);
    CHECK(back[i].reward == records[i].reward);
    CHECK(back[i].baseline == records[i].baseline);
    CHECK(back[i].advantage == records[i].advantage);
    CHECK(back[i].full_kl == records[i].full_kl);
    CHECK(back[i].student_logprob == records[i].student_logprob);
    CHECK(back[i].teacher_logprob == records[i].teacher_logprob);
  }
  // One object per line, fixed key order.
  std::string text = slurp(path);
  CHECK(text.rfind("{\"step\":1,\"reward\":", 0) == 0);
  CHECK_THROWS_AS(read_records_jsonl(dir.file("absent.jsonl")),
                  std::invalid_argument);
  atomic_write(dir.file("broken.jsonl"), "{not json}\n");
  CHECK_THROWS_AS(read_records_jsonl(dir.file("broken.jsonl")),
                  std::invalid_argument);
}

TEST_CASE("policy files round-trip through the io helpers") {
  ScratchDir dir;
  VocabSpec vocab{4, 1};
  PolicyTable table(vocab, 1.0, true, RowInitSpec{2, 2, 0.4});
  std::vector<TokenId> w{3};
  table.row(make_context(vocab, 0, w));
  std::string path = dir.file("x.policy");
  save_policy_file(path, table);
  PolicyTable back = load_policy_file(path, false, RowInitSpec{});
  CHECK(back.sorted_keys() == table.sorted_keys());
  Context ctx = make_context(vocab, 0, w);
  CHECK(back.next_dist(ctx) == table.next_dist(ctx));
}
