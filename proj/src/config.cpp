#include "vopd/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vopd/io.hpp"

namespace vopd {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& source, size_t line,
                       const std::string& msg) {
  throw ConfigError(source + ":" + std::to_string(line) + ": " + msg, line);
}

int64_t parse_int(const std::string& v, const std::string& source,
                  size_t line, const std::string& key) {
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    fail(source, line, "key '" + key + "' needs an integer, got '" + v + "'");
  return x;
}

uint64_t parse_uint(const std::string& v, const std::string& source,
                    size_t line, const std::string& key) {
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    fail(source, line,
         "key '" + key + "' needs a non-negative integer, got '" + v + "'");
  return x;
}

double parse_real(const std::string& v, const std::string& source, size_t line,
                  const std::string& key) {
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    fail(source, line, "key '" + key + "' needs a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& v, const std::string& source, size_t line,
                const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(source, line, "key '" + key + "' needs true or false, got '" + v + "'");
}

template <typename Int>
std::vector<Int> parse_int_list(const std::string& v, const std::string& source,
                                size_t line, const std::string& key) {
  std::vector<Int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      fail(source, line, "key '" + key + "' has an empty list element");
    out.push_back(static_cast<Int>(parse_int(item, source, line, key)));
  }
  if (out.empty())
    fail(source, line, "key '" + key + "' needs a non-empty list");
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (output_dir.empty())
    throw std::invalid_argument("output_dir must not be empty");
  for (int32_t k : sweep_k_values)
    if (k < 1)
      throw std::invalid_argument("sweep_k_values entries must be >= 1, got " +
                                  std::to_string(k));
  for (int64_t v : bench_vocab_sizes)
    if (v < 2)
      throw std::invalid_argument(
          "bench_vocab_sizes entries must be >= 2, got " + std::to_string(v));
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& source_name) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw;
  size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (size_t hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(source_name, line_no, "expected 'key = value', got '" + raw + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(source_name, line_no, "missing key before '='");

    TrainConfig& t = cfg.train;
    if (key == "vocab_size")
      t.vocab_size = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "context_order")
      t.context_order = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "prompt_count")
      t.prompt_count = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "max_len")
      t.max_len = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "batch_size")
      t.batch_size = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "steps")
      t.steps = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "learning_rate")
      t.learning_rate = parse_real(value, source_name, line_no, key);
    else if (key == "optimizer") {
      auto kind = optimizer_kind_from_string(value);
      if (!kind)
        fail(source_name, line_no,
             "unknown optimizer '" + value + "' (sgd, adaptive_moments)");
      t.optimizer = *kind;
    } else if (key == "estimator") {
      auto kind = estimator_kind_from_string(value);
      if (!kind)
        fail(source_name, line_no,
             "unknown estimator '" + value +
                 "' (opd, opd_full_v, opd_top_k, vopd_full_v, vopd_top_k)");
      t.estimator.kind = *kind;
    } else if (key == "k")
      t.estimator.k = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "rollout_temperature")
      t.rollout_temperature = parse_real(value, source_name, line_no, key);
    else if (key == "seed")
      t.seed = parse_uint(value, source_name, line_no, key);
    else if (key == "variance_probe_every")
      t.variance_probe_every = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "variance_probe_samples")
      t.variance_probe_samples = static_cast<int32_t>(parse_int(value, source_name, line_no, key));
    else if (key == "init_mode") {
      if (value == "mismatch") t.init_mode = InitMode::mismatch;
      else if (value == "identical") t.init_mode = InitMode::identical;
      else if (value == "custom_file") t.init_mode = InitMode::custom_file;
      else fail(source_name, line_no,
                "unknown init_mode '" + value +
                    "' (mismatch, identical, custom_file)");
    } else if (key == "teacher_file")
      t.teacher_file = value;
    else if (key == "student_file")
      t.student_file = value;
    else if (key == "output_dir")
      cfg.output_dir = value;
    else if (key == "emit_plots")
      cfg.emit_plots = parse_bool(value, source_name, line_no, key);
    else if (key == "sweep_k_values")
      cfg.sweep_k_values = parse_int_list<int32_t>(value, source_name, line_no, key);
    else if (key == "bench_vocab_sizes")
      cfg.bench_vocab_sizes = parse_int_list<int64_t>(value, source_name, line_no, key);
    else
      fail(source_name, line_no, "unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string render_config(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::ostringstream out;
  out << "vocab_size = " << t.vocab_size << '\n'
      << "context_order = " << t.context_order << '\n'
      << "prompt_count = " << t.prompt_count << '\n'
      << "max_len = " << t.max_len << '\n'
      << "batch_size = " << t.batch_size << '\n'
      << "steps = " << t.steps << '\n'
      << "learning_rate = " << fmt_double(t.learning_rate) << '\n'
      << "optimizer = " << to_string(t.optimizer) << '\n'
      << "estimator = " << to_string(t.estimator.kind) << '\n'
      << "k = " << t.estimator.k << '\n'
      << "rollout_temperature = " << fmt_double(t.rollout_temperature) << '\n'
      << "seed = " << t.seed << '\n'
      << "variance_probe_every = " << t.variance_probe_every << '\n'
      << "variance_probe_samples = " << t.variance_probe_samples << '\n';
  switch (t.init_mode) {
    case InitMode::mismatch: out << "init_mode = mismatch\n"; break;
    case InitMode::identical: out << "init_mode = identical\n"; break;
    case InitMode::custom_file:
      out << "init_mode = custom_file\n"
          << "teacher_file = " << t.teacher_file << '\n'
          << "student_file = " << t.student_file << '\n';
      break;
  }
  out << "output_dir = " << cfg.output_dir << '\n'
      << "emit_plots = " << (cfg.emit_plots ? "true" : "false") << '\n';
  out << "sweep_k_values = ";
  for (size_t i = 0; i < cfg.sweep_k_values.size(); ++i)
    out << (i ? "," : "") << cfg.sweep_k_values[i];
  out << '\n' << "bench_vocab_sizes = ";
  for (size_t i = 0; i < cfg.bench_vocab_sizes.size(); ++i)
    out << (i ? "," : "") << cfg.bench_vocab_sizes[i];
  out << '\n';
  return out.str();
}

}  // namespace vopd
