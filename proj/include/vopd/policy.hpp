#pragma once

// Tabular softmax policies over a synthetic token world.
//
// A context is (prompt id, window of the n most recent tokens); each context
// canonicalizes to a single integer key, and a PolicyTable maps keys to logit
// rows.  Rows materialize lazily, but a row's initial values are a pure
// function of (init seed, table tag, key), so the order in which contexts are
// first visited — including across parallel rollouts — never changes what a
// row starts as.

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vopd/rng.hpp"

namespace vopd {

using TokenId = int32_t;

struct VocabSpec {
  int32_t size = 2;           // V: tokens are 0..V-1
  int32_t context_order = 1;  // n: how many recent tokens condition the row

  void validate(int64_t prompt_count) const;  // overflow/positivity guards
};

// Canonical key for (prompt, window): fixed-width base-(V+1) encoding with
// digit token+1 and 0 marking an absent slot (window shorter than n), prompt
// block leading.  Distinct (prompt, window) pairs map to distinct keys.
uint64_t context_key(const VocabSpec& vocab, int32_t prompt_id,
                     std::span<const TokenId> window);

struct Context {
  int32_t prompt_id = 0;
  std::vector<TokenId> window;  // oldest first, size <= context_order
  uint64_t key = 0;
};

Context make_context(const VocabSpec& vocab, int32_t prompt_id,
                     std::span<const TokenId> window);

// How fresh rows come to exist: gaussian logits at a given scale, from the
// stream (seed, tag, key).  Tables meant to coincide share (seed, tag).
struct RowInitSpec {
  uint64_t seed = 0;
  uint64_t tag = 0;     // distinguishes teacher/student streams
  double scale = 1.0;   // stddev of initial logits
};

class PolicyTable {
 public:
  PolicyTable(VocabSpec vocab, double temperature, bool trainable,
              RowInitSpec init);

  // Tables are heavyweight unique state; moves only.
  PolicyTable(PolicyTable&&) noexcept;
  PolicyTable& operator=(PolicyTable&&) noexcept;
  PolicyTable(const PolicyTable&) = delete;
  PolicyTable& operator=(const PolicyTable&) = delete;

  const VocabSpec& vocab() const { return vocab_; }
  double temperature() const { return temperature_; }
  bool trainable() const { return trainable_; }

  // Bumped once per committed optimizer update; trajectories are stamped
  // with it so stale (off-policy) batches are rejected.
  uint64_t version() const { return version_; }

  // Logit row for a context, materializing it if needed.  The reference
  // stays valid for the table's lifetime (node-based map).  Thread-safe
  // against concurrent readers, including ones that also materialize.
  const std::vector<double>& row(const Context& ctx);

  // softmax(row / temperature).  Throws if the row is non-finite.
  std::vector<double> next_dist(const Context& ctx);

  // Same values as next_dist, served from a per-context cache so repeated
  // lookups cost one softmax total.  The reference stays valid until the
  // next commit_update, which is also when logit edits become visible here.
  const std::vector<double>& next_dist_ref(const Context& ctx);

  double log_prob(const Context& ctx, TokenId tok);

  // d log softmax(z/T)[tok] / dz = (onehot(tok) - p) / T.  Only meaningful
  // for trainable tables; asking a frozen table is a contract bug.
  std::vector<double> score_gradient(const Context& ctx, TokenId tok);

  // Inverse-CDF sample: one uniform draw, cumulative scan ascending by id.
  TokenId sample_token(const Context& ctx, RandomStream& rng);

  // Argmax token, ties toward the lower id.
  TokenId greedy_token(const Context& ctx);

  // --- update interface (single-writer phase) ---
  // Mutable access for the optimizer; requires trainable().
  std::vector<double>& logits_for_update(uint64_t key);
  // Clamp every entry of the given rows into [-60, 60] and bump the version.
  void commit_update(std::span<const uint64_t> touched_keys);

  size_t materialized_rows() const { return rows_.size(); }
  // Keys of materialized rows, ascending — the serialization order.
  std::vector<uint64_t> sorted_keys() const;

  // Text round-trip: header (magic, V, n, temperature), then one row per
  // line "key<TAB>logit ... logit", keys ascending, 17 significant digits.
  void save(std::ostream& out) const;
  static PolicyTable load(std::istream& in, bool trainable, RowInitSpec init);

 private:
  const std::vector<double>& row_for_key(uint64_t key);

  VocabSpec vocab_;
  double temperature_ = 1.0;
  bool trainable_ = false;
  RowInitSpec init_;
  uint64_t version_ = 0;
  std::unordered_map<uint64_t, std::vector<double>> rows_;
  std::unordered_map<uint64_t, std::vector<double>> dists_;  // softmax cache
  mutable std::shared_mutex rows_mutex_;
};

// One on-policy sampled continuation.
struct Trajectory {
  int32_t prompt_id = 0;
  std::vector<TokenId> tokens;
  std::vector<Context> contexts;          // context each token was drawn in
  std::vector<double> student_logprobs;   // log p(token | context) at draw time
  uint64_t policy_version = 0;            // student version when sampled
};

// Sample max_len tokens from the student starting at the prompt's empty
// window.  The caller owns the stream, so parallel rollouts just derive
// per-slot streams.
Trajectory rollout(PolicyTable& student, int32_t prompt_id, int32_t max_len,
                   RandomStream& rng);

// How the teacher/student pair starts out.
enum class InitMode {
  mismatch,    // teacher scale 3.0, student scale 0.3, different streams
  identical,   // student clones the teacher's stream: zero divergence
  custom_file, // both loaded from files
};

struct InitOptions {
  InitMode mode = InitMode::mismatch;
  std::string teacher_file;  // custom_file only
  std::string student_file;  // custom_file only
};

struct PolicyPair {
  PolicyTable teacher;
  PolicyTable student;
};

PolicyPair init_policies(const VocabSpec& vocab, uint64_t seed,
                         const InitOptions& opts, double temperature = 1.0);

}  // namespace vopd
