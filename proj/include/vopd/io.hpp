#pragma once

// File formats: metrics CSV, per-token JSONL, policy tables.
//
// All writers go through an atomic temp-file-then-rename so a crash never
// leaves a half-written artifact, and all floating-point output uses 17
// significant digits so files round-trip to the exact same doubles.

#include <span>
#include <string>
#include <vector>

#include "vopd/estimators.hpp"
#include "vopd/policy.hpp"
#include "vopd/trainer.hpp"

namespace vopd {

// "%.17g" — enough digits to reconstruct the exact double.
std::string fmt_double(double x);

// Write `content` to `path` atomically (temp file + rename).
void atomic_write(const std::string& path, const std::string& content);

inline constexpr const char* kMetricsHeader =
    "step,grad_l2_norm,mean_reward,mean_advantage,mean_full_kl,"
    "eval_reverse_kl,greedy_agreement,empirical_grad_variance,wall_clock_ms";

void write_metrics_csv(const std::string& path,
                       std::span<const MetricsRecord> metrics);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

// One JSON object per line, fixed key order, 17-digit numbers.
void write_records_jsonl(const std::string& path,
                         std::span<const TokenRecord> records);
std::vector<TokenRecord> read_records_jsonl(const std::string& path);

void save_policy_file(const std::string& path, const PolicyTable& table);
PolicyTable load_policy_file(const std::string& path, bool trainable,
                             RowInitSpec init);

// Minimal RFC-4180 escaping: quote fields containing comma/quote/newline.
std::string csv_escape(const std::string& field);

}  // namespace vopd
