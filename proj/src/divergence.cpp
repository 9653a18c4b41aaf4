#include "vopd/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace vopd {

namespace {

void check_same_size(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::invalid_argument("distribution size mismatch: " +
                                std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
}

}  // namespace

double token_reward(std::span<const double> p, std::span<const double> q,
                    TokenId tok) {
  check_same_size(p, q);
  if (tok < 0 || static_cast<size_t>(tok) >= p.size())
    throw std::invalid_argument("token id " + std::to_string(tok) +
                                " outside vocabulary of size " +
                                std::to_string(p.size()));
  double pt = p[tok], qt = q[tok];
  if (!(pt > 0.0) || !(qt > 0.0))
    throw std::domain_error("token reward needs positive mass on the sampled "
                            "token; got p=" + std::to_string(pt) +
                            " q=" + std::to_string(qt));
  return std::log(qt) - std::log(pt);
}

double reverse_kl(std::span<const double> p, std::span<const double> q) {
  check_same_size(p, q);
  double kl = 0.0;
  for (size_t v = 0; v < p.size(); ++v) {
    double pv = p[v];
    if (pv == 0.0) continue;
    if (!(q[v] > 0.0))
      throw std::domain_error("divergence is infinite: p has mass where q "
                              "has none (index " + std::to_string(v) + ")");
    kl += pv * std::log(pv / q[v]);
  }
  return kl;
}

TruncatedSupport top_k_support(std::span<const double> p, int32_t k) {
  if (k < 1 || static_cast<size_t>(k) > p.size())
    throw std::invalid_argument("top-k size " + std::to_string(k) +
                                " outside [1, " + std::to_string(p.size()) +
                                "]");
  std::vector<TokenId> idx;
  if (static_cast<size_t>(k) == p.size()) {
    idx.resize(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    return TruncatedSupport{std::move(idx)};
  }
  // Larger mass first; equal mass keeps the lower id — a strict total order,
  // so the selected set is unique.  A k-bounded heap scans the vocabulary
  // once instead of shuffling a full index array; its front is the weakest
  // keeper under that order.
  auto before = [&p](TokenId a, TokenId b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  };
  idx.resize(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::make_heap(idx.begin(), idx.end(), before);
  for (size_t v = k; v < p.size(); ++v) {
    TokenId cand = static_cast<TokenId>(v);
    if (!before(cand, idx.front())) continue;
    std::pop_heap(idx.begin(), idx.end(), before);
    idx.back() = cand;
    std::push_heap(idx.begin(), idx.end(), before);
  }
  std::sort(idx.begin(), idx.end());
  return TruncatedSupport{std::move(idx)};
}

std::vector<double> renormalize(std::span<const double> p,
                                const TruncatedSupport& support) {
  std::vector<double> out(support.indices.size());
  double mass = 0.0;
  for (size_t j = 0; j < support.indices.size(); ++j) {
    TokenId v = support.indices[j];
    if (v < 0 || static_cast<size_t>(v) >= p.size())
      throw std::invalid_argument("support index " + std::to_string(v) +
                                  " outside vocabulary");
    out[j] = p[v];
    mass += p[v];
  }
  if (!(mass > 0.0))
    throw std::domain_error("cannot renormalize: zero mass on support");
  for (double& x : out) x /= mass;
  return out;
}

double truncated_reverse_kl(std::span<const double> p,
                            std::span<const double> q,
                            const TruncatedSupport& support) {
  check_same_size(p, q);
  std::vector<double> pbar = renormalize(p, support);
  std::vector<double> qbar = renormalize(q, support);
  return reverse_kl(pbar, qbar);
}

double value_baseline(std::span<const double> p, std::span<const double> q,
                      const BaselineMode& mode) {
  switch (mode.kind) {
    case BaselineMode::Kind::full_vocab:
      return -reverse_kl(p, q);
    case BaselineMode::Kind::top_k: {
      TruncatedSupport s = top_k_support(p, mode.k);
      return -truncated_reverse_kl(p, q, s);
    }
  }
  throw std::logic_error("unreachable baseline mode");
}

}  // namespace vopd
