#pragma once

// Flat `key = value` experiment configuration.
//
// One assignment per line, `#` starts a comment, whitespace is free.  Every
// key must be one the lab knows; a typo'd key is a hard error that names the
// key and its line, because silently ignoring a misspelled `learning_rate`
// is how wrong experiments get published.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vopd/trainer.hpp"

namespace vopd {

struct ExperimentConfig {
  TrainConfig train;
  std::string output_dir = "out";
  bool emit_plots = true;
  std::vector<int32_t> sweep_k_values = {1, 5, 20, 50, 100};
  std::vector<int64_t> bench_vocab_sizes = {1000, 10000, 100000};

  void validate() const;
};

struct ConfigError : std::invalid_argument {
  ConfigError(const std::string& msg, size_t line)
      : std::invalid_argument(msg), line_number(line) {}
  size_t line_number = 0;
};

// `source_name` only flavors error messages.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& source_name);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical echo of a fully-resolved config; parses back to itself.
std::string render_config(const ExperimentConfig& cfg);

}  // namespace vopd
