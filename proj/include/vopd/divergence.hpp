#pragma once

// Divergence and reward primitives on dense probability vectors.
//
// All functions take probability vectors (not logits) so they can be used
// both by the live policies and by enumeration oracles that construct
// distributions directly.  Inputs are trusted to be normalized; zero entries
// are legal everywhere except where a log of the entry itself is required,
// and those cases are documented per function.

#include <cstdint>
#include <span>
#include <vector>

namespace vopd {

using TokenId = int32_t;

// Support set produced by truncation: token ids in ascending order.
struct TruncatedSupport {
  std::vector<TokenId> indices;
};

// How a value baseline summarizes the teacher/student divergence at a
// context: over the full vocabulary or over the student's top-k support.
struct BaselineMode {
  enum class Kind { full_vocab, top_k };
  Kind kind = Kind::full_vocab;
  int32_t k = 0;  // used only for top_k

  static BaselineMode full_vocab() { return {Kind::full_vocab, 0}; }
  static BaselineMode top_k(int32_t k) { return {Kind::top_k, k}; }
};

// log q[tok] - log p[tok]: the per-token reward seen by the student when it
// samples `tok` from p while the teacher assigns it q[tok].  Both entries
// must be strictly positive (softmax policies guarantee that).
double token_reward(std::span<const double> p, std::span<const double> q,
                    TokenId tok);

// KL(p || q) = sum_v p_v log(p_v / q_v).  Zero p-entries contribute zero;
// a zero q-entry under positive p-mass is an error (infinite divergence).
double reverse_kl(std::span<const double> p, std::span<const double> q);

// Indices of the k largest entries of p, ties broken toward the lower token
// id, returned ascending.  Requires 1 <= k <= p.size().
TruncatedSupport top_k_support(std::span<const double> p, int32_t k);

// Restrict p to the support and renormalize to sum 1 over it.  Returns a
// dense vector of length support.size() in support order.  The retained mass
// must be positive.
std::vector<double> renormalize(std::span<const double> p,
                                const TruncatedSupport& support);

// KL between the renormalized restrictions of p and q to the support.
double truncated_reverse_kl(std::span<const double> p,
                            std::span<const double> q,
                            const TruncatedSupport& support);

// Value baseline b(c) = -KL over the chosen support (full vocabulary or the
// student's top-k).  This is the control variate the variance-reduced
// estimators subtract; it is a pure function of (p, q) — no gradient flows
// through it.
double value_baseline(std::span<const double> p, std::span<const double> q,
                      const BaselineMode& mode);

}  // namespace vopd
