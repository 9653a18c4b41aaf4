#include "vopd/estimators.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vopd/parallel.hpp"

namespace vopd {

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::opd: return "opd";
    case EstimatorKind::opd_full_v: return "opd_full_v";
    case EstimatorKind::opd_top_k: return "opd_top_k";
    case EstimatorKind::vopd_full_v: return "vopd_full_v";
    case EstimatorKind::vopd_top_k: return "vopd_top_k";
  }
  return "?";
}

std::optional<EstimatorKind> estimator_kind_from_string(std::string_view name) {
  if (name == "opd") return EstimatorKind::opd;
  if (name == "opd_full_v") return EstimatorKind::opd_full_v;
  if (name == "opd_top_k") return EstimatorKind::opd_top_k;
  if (name == "vopd_full_v") return EstimatorKind::vopd_full_v;
  if (name == "vopd_top_k") return EstimatorKind::vopd_top_k;
  return std::nullopt;
}

namespace {

// row = scale * (onehot(tok) - p) / T
std::vector<double> scaled_score(std::span<const double> p, TokenId tok,
                                 double scale, double inv_t) {
  std::vector<double> row(p.size());
  double s = scale * inv_t;
  for (size_t v = 0; v < p.size(); ++v) row[v] = -s * p[v];
  row[tok] += s;
  return row;
}

// Exact ascent row for the full objective: d/dz_j E_p[log q - log p]
//   = (p_j * r_j - (sum_v p_v r_v) * p_j) / T,   r_j = log(q_j / p_j).
// The weighted reward sum is also -KL(p||q), so the full KL falls out free.
std::vector<double> full_vocab_row(std::span<const double> p,
                                   std::span<const double> q, double inv_t,
                                   double* kl_out) {
  std::vector<double> row(p.size());
  double mean_r = 0.0;
  for (size_t v = 0; v < p.size(); ++v) {
    if (!(q[v] > 0.0))
      throw std::domain_error("teacher assigns zero mass at index " +
                              std::to_string(v));
    double rv = p[v] > 0.0 ? std::log(q[v]) - std::log(p[v]) : 0.0;
    row[v] = p[v] * rv;
    mean_r += row[v];
  }
  for (size_t v = 0; v < p.size(); ++v)
    row[v] = inv_t * (row[v] - mean_r * p[v]);
  if (kl_out) *kl_out = -mean_r;
  return row;
}

// Exact ascent row for the truncated objective -KL(pbar || qbar) where pbar,
// qbar renormalize p, q to the student's top-k support S.  Differentiating
// through the renormalization:
//   d/dz_j = (pbar_j / T) * (log(qbar_j / pbar_j) + KL(pbar || qbar)),  j in S
// and zero off-support.
std::vector<double> truncated_row(std::span<const double> p,
                                  std::span<const double> q,
                                  const TruncatedSupport& support,
                                  double inv_t, double* tkl_out) {
  std::vector<double> pbar = renormalize(p, support);
  std::vector<double> qbar = renormalize(q, support);
  size_t k = support.indices.size();
  std::vector<double> local(k);
  double tkl = 0.0;
  for (size_t j = 0; j < k; ++j) {
    local[j] = std::log(qbar[j] / pbar[j]);  // -log ratio of the KL integrand
    tkl -= pbar[j] * local[j];
  }
  std::vector<double> row(p.size(), 0.0);
  for (size_t j = 0; j < k; ++j)
    row[support.indices[j]] = inv_t * pbar[j] * (local[j] + tkl);
  if (tkl_out) *tkl_out = tkl;
  return row;
}

void axpy(std::vector<double>& y, double a, std::span<const double> x) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace

TokenContribution per_token_contribution(const EstimatorSpec& spec,
                                         std::span<const double> p,
                                         std::span<const double> q,
                                         TokenId sampled,
                                         const ContributionOptions& opts) {
  if (p.size() != q.size())
    throw std::invalid_argument("student/teacher distribution size mismatch");
  if (sampled < 0 || static_cast<size_t>(sampled) >= p.size())
    throw std::invalid_argument("sampled token outside vocabulary");
  if (!(opts.temperature > 0.0))
    throw std::invalid_argument("temperature must be positive");
  bool topk_kind = spec.kind == EstimatorKind::opd_top_k ||
                   spec.kind == EstimatorKind::vopd_top_k;
  if (topk_kind && (spec.k < 1 || static_cast<size_t>(spec.k) > p.size()))
    throw std::invalid_argument("top-k size " + std::to_string(spec.k) +
                                " outside [1, " + std::to_string(p.size()) +
                                "]");
  double inv_t = 1.0 / opts.temperature;

  TokenContribution out;
  TokenRecord& rec = out.record;
  rec.reward = token_reward(p, q, sampled);
  rec.student_logprob = std::log(p[sampled]);
  rec.teacher_logprob = std::log(q[sampled]);

  switch (spec.kind) {
    case EstimatorKind::opd: {
      out.row = scaled_score(p, sampled, rec.reward, inv_t);
      rec.advantage = rec.reward;
      if (opts.diagnostics) rec.full_kl = reverse_kl(p, q);
      break;
    }
    case EstimatorKind::opd_full_v: {
      double kl = 0.0;
      out.row = full_vocab_row(p, q, inv_t, &kl);
      rec.advantage = rec.reward;
      rec.full_kl = kl;  // byproduct, costs nothing extra
      break;
    }
    case EstimatorKind::opd_top_k: {
      TruncatedSupport support = top_k_support(p, spec.k);
      out.row = truncated_row(p, q, support, inv_t, nullptr);
      rec.advantage = rec.reward;
      if (opts.diagnostics) rec.full_kl = reverse_kl(p, q);
      break;
    }
    case EstimatorKind::vopd_full_v: {
      double kl = reverse_kl(p, q);
      rec.baseline = -kl;
      rec.advantage = rec.reward - rec.baseline;
      rec.full_kl = kl;
      out.row = scaled_score(p, sampled, rec.advantage, inv_t);
      if (opts.corrupt_baseline_detach) {
        // Re-attach the baseline's own gradient: the term a detached
        // estimator must NOT have.  d(baseline)/dz is exactly the
        // full-vocabulary ascent row, weighted by -log p(y).
        std::vector<double> db = full_vocab_row(p, q, inv_t, nullptr);
        axpy(out.row, -rec.student_logprob, db);
      }
      break;
    }
    case EstimatorKind::vopd_top_k: {
      TruncatedSupport support = top_k_support(p, spec.k);
      double tkl = truncated_reverse_kl(p, q, support);
      rec.baseline = -tkl;
      rec.advantage = rec.reward - rec.baseline;
      if (opts.diagnostics) rec.full_kl = reverse_kl(p, q);
      out.row = scaled_score(p, sampled, rec.advantage, inv_t);
      if (opts.corrupt_baseline_detach) {
        std::vector<double> db = truncated_row(p, q, support, inv_t, nullptr);
        axpy(out.row, -rec.student_logprob, db);
      }
      break;
    }
  }
  return out;
}

double GradientEstimate::recompute_l2() const {
  double sq = 0.0;
  for (const auto& [_, row] : rows)
    for (double x : row) sq += x * x;
  return std::sqrt(sq);
}

BatchResult batch_gradient(const EstimatorSpec& spec, PolicyTable& student,
                           PolicyTable& teacher,
                           std::span<const Trajectory> trajectories,
                           const BatchOptions& opts) {
  if (trajectories.empty())
    throw std::invalid_argument("batch_gradient needs at least one trajectory");
  int64_t total_tokens = 0;
  for (const Trajectory& traj : trajectories) {
    if (traj.policy_version != student.version())
      throw std::logic_error(
          "off-policy batch: trajectory sampled at policy version " +
          std::to_string(traj.policy_version) + " but student is at " +
          std::to_string(student.version()));
    if (traj.tokens.size() != traj.contexts.size())
      throw std::invalid_argument("malformed trajectory");
    total_tokens += static_cast<int64_t>(traj.tokens.size());
  }
  if (total_tokens == 0)
    throw std::invalid_argument("batch_gradient got zero tokens");

  ContributionOptions copts;
  copts.temperature = student.temperature();
  copts.diagnostics = opts.diagnostics;

  // Per-trajectory partials, computed in parallel slots, merged in trajectory
  // order below — the reduction order is fixed, so worker count can't change
  // a single bit of the result.
  struct Partial {
    std::map<uint64_t, std::vector<double>> rows;
    std::vector<TokenRecord> records;
  };
  std::vector<Partial> partials(trajectories.size());
  parallel_for(static_cast<int64_t>(trajectories.size()), [&](int64_t i) {
    const Trajectory& traj = trajectories[i];
    Partial& part = partials[i];
    if (opts.keep_records) part.records.reserve(traj.tokens.size());
    for (size_t t = 0; t < traj.tokens.size(); ++t) {
      const Context& ctx = traj.contexts[t];
      const std::vector<double>& p = student.next_dist_ref(ctx);
      const std::vector<double>& q = teacher.next_dist_ref(ctx);
      TokenContribution c =
          per_token_contribution(spec, p, q, traj.tokens[t], copts);
      c.record.step = opts.step;
      auto [it, fresh] = part.rows.try_emplace(ctx.key);
      if (fresh) it->second = std::move(c.row);
      else axpy(it->second, 1.0, c.row);
      if (opts.keep_records) part.records.push_back(c.record);
    }
  });

  BatchResult out;
  if (opts.keep_records) out.records.reserve(total_tokens);
  for (Partial& part : partials) {
    for (auto& [key, row] : part.rows) {
      auto [it, fresh] = out.grad.rows.try_emplace(key);
      if (fresh) it->second = std::move(row);
      else axpy(it->second, 1.0, row);
    }
    if (opts.keep_records)
      out.records.insert(out.records.end(), part.records.begin(),
                         part.records.end());
  }

  // Token-mean normalization keeps gradients comparable across batch shapes.
  double inv_n = 1.0 / static_cast<double>(total_tokens);
  double sq = 0.0;
  for (auto& [_, row] : out.grad.rows) {
    for (double& x : row) {
      x *= inv_n;
      sq += x * x;
    }
  }
  out.grad.token_count = total_tokens;
  out.grad.l2_norm = std::sqrt(sq);
  return out;
}

}  // namespace vopd
