#include "vopd/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace vopd {

namespace {

constexpr double kLogitClamp = 60.0;
constexpr uint64_t kTeacherTag = 1;
constexpr uint64_t kStudentTag = 2;

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void VocabSpec::validate(int64_t prompt_count) const {
  if (size < 2)
    throw std::invalid_argument("vocab size must be at least 2, got " +
                                std::to_string(size));
  if (context_order < 0)
    throw std::invalid_argument("context order must be non-negative, got " +
                                std::to_string(context_order));
  if (prompt_count < 1)
    throw std::invalid_argument("prompt count must be positive, got " +
                                std::to_string(prompt_count));
  // The key space is prompt_count * (V+1)^n; it has to fit in a signed 64-bit
  // value with room to spare, or keys would collide silently.
  long double space = static_cast<long double>(prompt_count);
  for (int32_t i = 0; i < context_order; ++i)
    space *= static_cast<long double>(size) + 1.0L;
  if (space >= 9.2e18L)
    throw std::invalid_argument(
        "context key space overflows 63 bits: prompt_count=" +
        std::to_string(prompt_count) + " vocab=" + std::to_string(size) +
        " order=" + std::to_string(context_order));
}

uint64_t context_key(const VocabSpec& vocab, int32_t prompt_id,
                     std::span<const TokenId> window) {
  if (prompt_id < 0) throw std::invalid_argument("negative prompt id");
  if (window.size() > static_cast<size_t>(vocab.context_order))
    throw std::invalid_argument("window longer than context order");
  uint64_t base = static_cast<uint64_t>(vocab.size) + 1;
  uint64_t key = static_cast<uint64_t>(prompt_id);
  // Fixed width: left-pad absent slots with digit 0 so the newest token is
  // always the last digit regardless of how full the window is.
  size_t pad = static_cast<size_t>(vocab.context_order) - window.size();
  for (size_t i = 0; i < pad; ++i) key = key * base;
  for (TokenId t : window) {
    if (t < 0 || t >= vocab.size)
      throw std::invalid_argument("token id " + std::to_string(t) +
                                  " outside vocabulary");
    key = key * base + static_cast<uint64_t>(t) + 1;
  }
  return key;
}

Context make_context(const VocabSpec& vocab, int32_t prompt_id,
                     std::span<const TokenId> window) {
  size_t n = static_cast<size_t>(vocab.context_order);
  size_t start = window.size() > n ? window.size() - n : 0;
  Context ctx;
  ctx.prompt_id = prompt_id;
  ctx.window.assign(window.begin() + start, window.end());
  ctx.key = context_key(vocab, prompt_id, ctx.window);
  return ctx;
}

PolicyTable::PolicyTable(VocabSpec vocab, double temperature, bool trainable,
                         RowInitSpec init)
    : vocab_(vocab), temperature_(temperature), trainable_(trainable),
      init_(init) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("temperature must be positive");
}

PolicyTable::PolicyTable(PolicyTable&& other) noexcept
    : vocab_(other.vocab_), temperature_(other.temperature_),
      trainable_(other.trainable_), init_(other.init_),
      version_(other.version_), rows_(std::move(other.rows_)),
      dists_(std::move(other.dists_)) {}

PolicyTable& PolicyTable::operator=(PolicyTable&& other) noexcept {
  if (this != &other) {
    vocab_ = other.vocab_;
    temperature_ = other.temperature_;
    trainable_ = other.trainable_;
    init_ = other.init_;
    version_ = other.version_;
    rows_ = std::move(other.rows_);
    dists_ = std::move(other.dists_);
  }
  return *this;
}

const std::vector<double>& PolicyTable::row_for_key(uint64_t key) {
  {
    std::shared_lock lock(rows_mutex_);
    auto it = rows_.find(key);
    if (it != rows_.end()) return it->second;
  }
  std::unique_lock lock(rows_mutex_);
  auto it = rows_.find(key);
  if (it != rows_.end()) return it->second;
  // Fresh row: values depend only on (seed, tag, key), never on visit order.
  RandomStream rng = RandomStream::derive(init_.seed, init_.tag, key);
  std::vector<double> logits(vocab_.size);
  for (double& z : logits) z = init_.scale * rng.next_gaussian();
  return rows_.emplace(key, std::move(logits)).first->second;
}

const std::vector<double>& PolicyTable::row(const Context& ctx) {
  return row_for_key(ctx.key);
}

std::vector<double> PolicyTable::next_dist(const Context& ctx) {
  return next_dist_ref(ctx);
}

const std::vector<double>& PolicyTable::next_dist_ref(const Context& ctx) {
  {
    std::shared_lock lock(rows_mutex_);
    auto it = dists_.find(ctx.key);
    if (it != dists_.end()) return it->second;
  }
  const std::vector<double>& z = row(ctx);
  double m = -std::numeric_limits<double>::infinity();
  for (double x : z) m = std::max(m, x);
  if (!std::isfinite(m))
    throw std::runtime_error("non-finite logits at context key " +
                             std::to_string(ctx.key));
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (size_t v = 0; v < z.size(); ++v) {
    p[v] = std::exp((z[v] - m) / temperature_);
    sum += p[v];
  }
  if (!std::isfinite(sum) || !(sum > 0.0))
    throw std::runtime_error("non-finite softmax at context key " +
                             std::to_string(ctx.key));
  for (double& x : p) x /= sum;
  std::unique_lock lock(rows_mutex_);
  // A racing reader may have cached the identical vector already; keep it.
  return dists_.try_emplace(ctx.key, std::move(p)).first->second;
}

double PolicyTable::log_prob(const Context& ctx, TokenId tok) {
  const std::vector<double>& z = row(ctx);
  if (tok < 0 || static_cast<size_t>(tok) >= z.size())
    throw std::invalid_argument("token id " + std::to_string(tok) +
                                " outside vocabulary");
  double m = -std::numeric_limits<double>::infinity();
  for (double x : z) m = std::max(m, x);
  if (!std::isfinite(m))
    throw std::runtime_error("non-finite logits at context key " +
                             std::to_string(ctx.key));
  double sum = 0.0;
  for (double x : z) sum += std::exp((x - m) / temperature_);
  return (z[tok] - m) / temperature_ - std::log(sum);
}

std::vector<double> PolicyTable::score_gradient(const Context& ctx,
                                                TokenId tok) {
  if (!trainable_)
    throw std::logic_error("score gradient requested from a frozen table");
  std::vector<double> g = next_dist(ctx);
  double inv_t = 1.0 / temperature_;
  for (double& x : g) x = -x * inv_t;
  g[tok] += inv_t;
  return g;
}

TokenId PolicyTable::sample_token(const Context& ctx, RandomStream& rng) {
  std::vector<double> p = next_dist(ctx);
  double u = rng.next_double();
  double cum = 0.0;
  for (size_t v = 0; v < p.size(); ++v) {
    cum += p[v];
    if (u < cum) return static_cast<TokenId>(v);
  }
  return static_cast<TokenId>(p.size() - 1);  // float-sum slack lands here
}

TokenId PolicyTable::greedy_token(const Context& ctx) {
  const std::vector<double>& z = row(ctx);
  TokenId best = 0;
  for (size_t v = 1; v < z.size(); ++v)
    if (z[v] > z[best]) best = static_cast<TokenId>(v);
  return best;
}

std::vector<double>& PolicyTable::logits_for_update(uint64_t key) {
  if (!trainable_)
    throw std::logic_error("update requested on a frozen table");
  // Materialize-if-absent keeps the lazy contract; in practice the gradient
  // only names rows that rollouts already touched.
  return const_cast<std::vector<double>&>(row_for_key(key));
}

void PolicyTable::commit_update(std::span<const uint64_t> touched_keys) {
  if (!trainable_)
    throw std::logic_error("update committed on a frozen table");
  std::unique_lock lock(rows_mutex_);
  for (uint64_t key : touched_keys) {
    auto it = rows_.find(key);
    if (it == rows_.end()) continue;
    for (double& z : it->second)
      z = std::clamp(z, -kLogitClamp, kLogitClamp);
  }
  // Drop every cached distribution, not just the touched rows: callers may
  // have edited logits through logits_for_update without listing the key.
  dists_.clear();
  ++version_;
}

std::vector<uint64_t> PolicyTable::sorted_keys() const {
  std::shared_lock lock(rows_mutex_);
  std::vector<uint64_t> keys;
  keys.reserve(rows_.size());
  for (const auto& [k, _] : rows_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

void PolicyTable::save(std::ostream& out) const {
  out << "vopd-policy " << vocab_.size << ' ' << vocab_.context_order << ' '
      << fmt17(temperature_) << '\n';
  for (uint64_t key : sorted_keys()) {
    const std::vector<double>& z = rows_.at(key);
    out << key << '\t';
    for (size_t v = 0; v < z.size(); ++v) {
      if (v) out << ' ';
      out << fmt17(z[v]);
    }
    out << '\n';
  }
}

PolicyTable PolicyTable::load(std::istream& in, bool trainable,
                              RowInitSpec init) {
  std::string magic;
  VocabSpec vocab;
  double temperature = 1.0;
  if (!(in >> magic >> vocab.size >> vocab.context_order >> temperature) ||
      magic != "vopd-policy")
    throw std::invalid_argument("policy file: bad header");
  vocab.validate(1);
  if (!(temperature > 0.0))
    throw std::invalid_argument("policy file: non-positive temperature");
  PolicyTable table(vocab, temperature, trainable, init);
  uint64_t key = 0;
  size_t line = 1;
  while (in >> key) {
    ++line;
    std::vector<double> z(vocab.size);
    for (double& x : z) {
      if (!(in >> x))
        throw std::invalid_argument("policy file: short row at line " +
                                    std::to_string(line));
      if (!std::isfinite(x))
        throw std::invalid_argument("policy file: non-finite logit at line " +
                                    std::to_string(line));
    }
    table.rows_[key] = std::move(z);
  }
  return table;
}

Trajectory rollout(PolicyTable& student, int32_t prompt_id, int32_t max_len,
                   RandomStream& rng) {
  if (max_len < 1) throw std::invalid_argument("rollout length must be >= 1");
  const VocabSpec& vocab = student.vocab();
  Trajectory traj;
  traj.prompt_id = prompt_id;
  traj.policy_version = student.version();
  traj.tokens.reserve(max_len);
  traj.contexts.reserve(max_len);
  traj.student_logprobs.reserve(max_len);
  std::vector<TokenId> history;
  for (int32_t t = 0; t < max_len; ++t) {
    Context ctx = make_context(vocab, prompt_id, history);
    TokenId tok = student.sample_token(ctx, rng);
    traj.student_logprobs.push_back(student.log_prob(ctx, tok));
    traj.tokens.push_back(tok);
    traj.contexts.push_back(std::move(ctx));
    history.push_back(tok);
  }
  return traj;
}

PolicyPair init_policies(const VocabSpec& vocab, uint64_t seed,
                         const InitOptions& opts, double temperature) {
  switch (opts.mode) {
    case InitMode::mismatch: {
      PolicyTable teacher(vocab, temperature, false,
                          RowInitSpec{seed, kTeacherTag, 3.0});
      PolicyTable student(vocab, temperature, true,
                          RowInitSpec{seed, kStudentTag, 0.3});
      return PolicyPair{std::move(teacher), std::move(student)};
    }
    case InitMode::identical: {
      // Same stream tuple on both sides: every row materializes identically,
      // so the starting divergence is exactly zero.
      RowInitSpec shared{seed, kTeacherTag, 3.0};
      PolicyTable teacher(vocab, temperature, false, shared);
      PolicyTable student(vocab, temperature, true, shared);
      return PolicyPair{std::move(teacher), std::move(student)};
    }
    case InitMode::custom_file: {
      std::ifstream tf(opts.teacher_file);
      if (!tf)
        throw std::invalid_argument("cannot open teacher policy file: " +
                                    opts.teacher_file);
      std::ifstream sf(opts.student_file);
      if (!sf)
        throw std::invalid_argument("cannot open student policy file: " +
                                    opts.student_file);
      PolicyTable teacher =
          PolicyTable::load(tf, false, RowInitSpec{seed, kTeacherTag, 3.0});
      PolicyTable student =
          PolicyTable::load(sf, true, RowInitSpec{seed, kStudentTag, 0.3});
      for (const PolicyTable* t : {&teacher, &student}) {
        if (t->vocab().size != vocab.size ||
            t->vocab().context_order != vocab.context_order)
          throw std::invalid_argument(
              "policy file vocabulary does not match configuration");
      }
      return PolicyPair{std::move(teacher), std::move(student)};
    }
  }
  throw std::logic_error("unreachable init mode");
}

}  // namespace vopd
