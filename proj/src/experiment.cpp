#include "vopd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "vopd/divergence.hpp"
#include "vopd/io.hpp"
#include "vopd/oracle.hpp"
#include "vopd/svg.hpp"
#include "vopd/trainer.hpp"
#include "vopd/verify.hpp"

namespace vopd {

namespace {

namespace fs = std::filesystem;

const char* estimator_color(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::opd: return "#4878a8";
    case EstimatorKind::opd_full_v: return "#d1495b";
    case EstimatorKind::opd_top_k: return "#66a182";
    case EstimatorKind::vopd_full_v: return "#edae49";
    case EstimatorKind::vopd_top_k: return "#8d6a9f";
  }
  return "#444444";
}

constexpr size_t kScatterCap = 20000;  // points per rendered scatter series

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// --- plot builders (pure data -> svg text) ---------------------------------

std::string build_reward_advantage_hist(std::span<const TokenRecord> records) {
  if (records.empty())
    throw std::invalid_argument("no records to plot");
  svg::ValueSeries reward{"reward", "#4878a8", {}};
  svg::ValueSeries advantage{"advantage", "#d1495b", {}};
  reward.values.reserve(records.size());
  advantage.values.reserve(records.size());
  for (const TokenRecord& r : records) {
    reward.values.push_back(r.reward);
    advantage.values.push_back(r.advantage);
  }
  return svg::histogram("Sampled-token reward and advantage", "nats",
                        {reward, advantage});
}

std::string build_reward_advantage_scatter(
    std::span<const TokenRecord> records) {
  if (records.empty())
    throw std::invalid_argument("no records to plot");
  size_t stride = std::max<size_t>(1, records.size() / kScatterCap);
  svg::Series pts{"tokens (subsampled)", "#4878a8", {}};
  for (size_t i = 0; i < records.size(); i += stride)
    pts.points.emplace_back(records[i].reward, records[i].advantage);
  return svg::scatter("Advantage vs reward per sampled token",
                      "reward (nats)", "advantage (nats)", {pts}, true);
}

std::string build_logprob_scatter(std::span<const TokenRecord> records) {
  if (records.empty())
    throw std::invalid_argument("no records to plot");
  size_t stride = std::max<size_t>(1, records.size() / kScatterCap);
  svg::Series pts{"sampled tokens (subsampled)", "#66a182", {}};
  for (size_t i = 0; i < records.size(); i += stride)
    pts.points.emplace_back(records[i].student_logprob,
                            records[i].teacher_logprob);
  return svg::scatter("Teacher vs student log-probability",
                      "student log-prob (nats)", "teacher log-prob (nats)",
                      {pts}, true);
}

std::string build_grad_norm_curve(std::span<const MetricsRecord> metrics) {
  svg::Series line{"gradient l2 norm", "#4878a8", {}};
  for (const MetricsRecord& m : metrics)
    if (m.grad_l2_norm > 0.0)
      line.points.emplace_back(static_cast<double>(m.step),
                               std::log10(m.grad_l2_norm));
  if (line.points.empty())
    throw std::invalid_argument("no positive gradient norms to plot");
  return svg::line_chart("Gradient norm over training", "steps",
                         "log10(gradient l2 norm)", {line});
}

std::string build_mse_curve(
    const std::vector<std::pair<double, double>>& k_mse /* (k, mse) */) {
  if (k_mse.empty()) throw std::invalid_argument("no points to plot");
  svg::Series line{"baseline squared error", "#8d6a9f", {}};
  for (auto [k, mse] : k_mse)
    line.points.emplace_back(k, std::log10(std::max(mse, 1e-18)));
  return svg::line_chart("Truncated-baseline error vs support size",
                         "support size k (0 = no baseline)",
                         "log10(mean squared error, nats^2)", {line});
}

std::string build_time_bars(std::span<const BenchCell> cells) {
  if (cells.empty()) throw std::invalid_argument("no benchmark cells to plot");
  std::vector<svg::Bar> bars;
  for (const BenchCell& c : cells) {
    svg::Bar b;
    b.group = "V=" + std::to_string(c.vocab_size);
    b.label = to_string(c.kind);
    b.color = estimator_color(c.kind);
    b.value = std::log10(std::max(c.median_ms, 1e-6));
    double lo = std::max(c.median_ms - 0.5 * c.iqr_ms, c.median_ms * 1e-3);
    double hi = c.median_ms + 0.5 * c.iqr_ms;
    b.spread = c.iqr_ms > 0.0
                   ? 0.5 * (std::log10(std::max(hi, 1e-6)) -
                            std::log10(std::max(lo, 1e-9)))
                   : 0.0;
    bars.push_back(std::move(b));
  }
  return svg::bar_chart("Batch gradient step time", "log10(ms)", bars);
}

// --- sweep/bench CSV round-trip ---------------------------------------------

constexpr const char* kSweepHeader =
    "kind,k,baseline_mse,final_eval_reverse_kl,final_greedy_agreement";
constexpr const char* kBenchHeader =
    "vocab_size,estimator,k,median_ms,iqr_ms,reps";

struct SweepRow {
  std::string kind;
  std::optional<int32_t> k;
  double baseline_mse = 0.0;
  double final_eval_reverse_kl = 0.0;
  double final_greedy_agreement = 0.0;
};

std::string render_sweep_csv(std::span<const SweepRow> rows) {
  std::string out = kSweepHeader;
  out += '\n';
  for (const SweepRow& r : rows) {
    out += r.kind;
    out += ',';
    if (r.k) out += std::to_string(*r.k);
    out += ',';
    out += fmt_double(r.baseline_mse);
    out += ',';
    out += fmt_double(r.final_eval_reverse_kl);
    out += ',';
    out += fmt_double(r.final_greedy_agreement);
    out += '\n';
  }
  return out;
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open sweep file: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      (line != kSweepHeader && line != std::string(kSweepHeader) + "\r"))
    throw std::invalid_argument("unexpected sweep header in " + path);
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split_fields(line);
    if (f.size() != 5)
      throw std::invalid_argument("malformed sweep row in " + path);
    SweepRow r;
    r.kind = f[0];
    if (!f[1].empty()) r.k = static_cast<int32_t>(std::stol(f[1]));
    r.baseline_mse = std::stod(f[2]);
    r.final_eval_reverse_kl = std::stod(f[3]);
    r.final_greedy_agreement = std::stod(f[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_bench_csv(std::span<const BenchCell> cells) {
  std::string out = kBenchHeader;
  out += '\n';
  for (const BenchCell& c : cells) {
    bool topk = c.kind == EstimatorKind::opd_top_k ||
                c.kind == EstimatorKind::vopd_top_k;
    out += std::to_string(c.vocab_size);
    out += ',';
    out += to_string(c.kind);
    out += ',';
    if (topk) out += std::to_string(c.k);
    out += ',';
    out += fmt_double(c.median_ms);
    out += ',';
    out += fmt_double(c.iqr_ms);
    out += ',';
    out += std::to_string(c.reps);
    out += '\n';
  }
  return out;
}

std::vector<BenchCell> read_bench_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open bench file: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      (line != kBenchHeader && line != std::string(kBenchHeader) + "\r"))
    throw std::invalid_argument("unexpected bench header in " + path);
  std::vector<BenchCell> cells;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split_fields(line);
    if (f.size() != 6)
      throw std::invalid_argument("malformed bench row in " + path);
    BenchCell c;
    c.vocab_size = std::stoll(f[0]);
    auto kind = estimator_kind_from_string(f[1]);
    if (!kind)
      throw std::invalid_argument("unknown estimator in bench file: " + f[1]);
    c.kind = *kind;
    c.k = f[2].empty() ? 0 : static_cast<int32_t>(std::stol(f[2]));
    c.median_ms = std::stod(f[3]);
    c.iqr_ms = std::stod(f[4]);
    c.reps = static_cast<int32_t>(std::stol(f[5]));
    cells.push_back(c);
  }
  return cells;
}

std::vector<ContextSnapshot> run_reference(
    const TrainConfig& base, int64_t target_count,
    std::optional<TrainResult>& result_out) {
  TrainConfig cfg = base;
  cfg.estimator.kind = EstimatorKind::vopd_full_v;
  cfg.keep_records = false;
  int64_t total = static_cast<int64_t>(cfg.steps) * cfg.batch_size *
                  cfg.max_len;
  if (target_count < 1) target_count = 1;
  cfg.context_sink_stride = std::max<int64_t>(1, total / target_count);
  std::vector<ContextSnapshot> snapshots;
  snapshots.reserve(static_cast<size_t>(
      total / cfg.context_sink_stride + 1));
  cfg.context_sink = [&snapshots](std::span<const double> p,
                                  std::span<const double> q) {
    snapshots.push_back(ContextSnapshot{{p.begin(), p.end()},
                                        {q.begin(), q.end()}});
  };
  result_out.emplace(train(cfg));
  return snapshots;
}

}  // namespace

const char* to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::reward_advantage_hist: return "reward_advantage_hist";
    case PlotKind::reward_advantage_scatter: return "reward_advantage_scatter";
    case PlotKind::mse_vs_k: return "mse_vs_k";
    case PlotKind::grad_norm_curve: return "grad_norm_curve";
    case PlotKind::step_time_bars: return "step_time_bars";
    case PlotKind::logprob_scatter: return "logprob_scatter";
  }
  return "?";
}

std::optional<PlotKind> plot_kind_from_string(std::string_view name) {
  if (name == "reward_advantage_hist") return PlotKind::reward_advantage_hist;
  if (name == "reward_advantage_scatter")
    return PlotKind::reward_advantage_scatter;
  if (name == "mse_vs_k") return PlotKind::mse_vs_k;
  if (name == "grad_norm_curve") return PlotKind::grad_norm_curve;
  if (name == "step_time_bars") return PlotKind::step_time_bars;
  if (name == "logprob_scatter") return PlotKind::logprob_scatter;
  return std::nullopt;
}

std::vector<BenchCell> run_bench(std::span<const int64_t> vocab_sizes,
                                 uint64_t seed, int32_t tokens, int32_t reps,
                                 int32_t warmups) {
  if (tokens < 1 || reps < 3 || warmups < 0)
    throw std::invalid_argument("bench needs tokens >= 1 and reps >= 3");
  std::vector<BenchCell> cells;
  for (int64_t v : vocab_sizes) {
    if (v < 2 || v > (int64_t{1} << 31) - 2)
      throw std::invalid_argument("bench vocab size out of range: " +
                                  std::to_string(v));
    VocabSpec vocab{static_cast<int32_t>(v), 1};
    vocab.validate(1);
    InitOptions init;  // mismatch
    PolicyPair pair = init_policies(vocab, seed, init, 1.0);
    RandomStream rng = RandomStream::derive(seed, 0xbe, static_cast<uint64_t>(v));
    std::vector<Trajectory> batch;
    batch.push_back(rollout(pair.student, 0, tokens, rng));

    for (EstimatorKind kind :
         {EstimatorKind::opd, EstimatorKind::opd_full_v,
          EstimatorKind::opd_top_k, EstimatorKind::vopd_full_v,
          EstimatorKind::vopd_top_k}) {
      EstimatorSpec spec{kind, std::min<int32_t>(20, vocab.size)};
      BatchOptions opts;
      opts.diagnostics = false;  // time the intrinsic cost only
      opts.keep_records = false;
      for (int32_t w = 0; w < warmups; ++w)
        batch_gradient(spec, pair.student, pair.teacher, batch, opts);
      std::vector<double> times;
      times.reserve(reps);
      for (int32_t r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        batch_gradient(spec, pair.student, pair.teacher, batch, opts);
        times.push_back(std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count());
      }
      std::sort(times.begin(), times.end());
      BenchCell cell;
      cell.vocab_size = v;
      cell.kind = kind;
      cell.k = spec.k;
      cell.median_ms = times[times.size() / 2];
      cell.iqr_ms = times[(3 * times.size()) / 4] - times[times.size() / 4];
      cell.reps = reps;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<ContextSnapshot> collect_reference_snapshots(
    const TrainConfig& base, int64_t target_count) {
  std::optional<TrainResult> unused;
  return run_reference(base, target_count, unused);
}

double truncation_mse(std::span<const ContextSnapshot> snapshots, int32_t k) {
  if (snapshots.empty()) throw std::invalid_argument("no snapshots");
  double sum = 0.0;
  for (const ContextSnapshot& s : snapshots) {
    int32_t k_eff = std::min<int32_t>(k, static_cast<int32_t>(s.p.size()));
    double kl = reverse_kl(s.p, s.q);
    TruncatedSupport support = top_k_support(s.p, k_eff);
    double tkl = truncated_reverse_kl(s.p, s.q, support);
    double err = tkl - kl;
    sum += err * err;
  }
  return sum / static_cast<double>(snapshots.size());
}

double plain_mse(std::span<const ContextSnapshot> snapshots) {
  if (snapshots.empty()) throw std::invalid_argument("no snapshots");
  double sum = 0.0;
  for (const ContextSnapshot& s : snapshots) {
    double kl = reverse_kl(s.p, s.q);
    sum += kl * kl;
  }
  return sum / static_cast<double>(snapshots.size());
}

int cmd_train(const std::string& config_path, std::ostream& out) {
  ExperimentConfig cfg = parse_config_file(config_path);
  fs::create_directories(cfg.output_dir);
  TrainResult result = train(cfg.train);

  auto path = [&cfg](const char* name) {
    return (fs::path(cfg.output_dir) / name).string();
  };
  std::vector<std::string> written;
  atomic_write(path("config_resolved.cfg"), render_config(cfg));
  written.push_back(path("config_resolved.cfg"));
  write_metrics_csv(path("metrics.csv"), result.metrics);
  written.push_back(path("metrics.csv"));
  write_records_jsonl(path("records.jsonl"), result.records);
  written.push_back(path("records.jsonl"));
  save_policy_file(path("teacher.policy"), result.teacher);
  written.push_back(path("teacher.policy"));
  save_policy_file(path("student_final.policy"), result.student);
  written.push_back(path("student_final.policy"));
  if (cfg.emit_plots) {
    atomic_write(path("reward_advantage_hist.svg"),
                 build_reward_advantage_hist(result.records));
    written.push_back(path("reward_advantage_hist.svg"));
    atomic_write(path("reward_advantage_scatter.svg"),
                 build_reward_advantage_scatter(result.records));
    written.push_back(path("reward_advantage_scatter.svg"));
    atomic_write(path("grad_norm_curve.svg"),
                 build_grad_norm_curve(result.metrics));
    written.push_back(path("grad_norm_curve.svg"));
    atomic_write(path("logprob_scatter.svg"),
                 build_logprob_scatter(result.records));
    written.push_back(path("logprob_scatter.svg"));
  }

  const MetricsRecord& first = result.metrics.front();
  const MetricsRecord& last = result.metrics.back();
  double reduction =
      first.eval_reverse_kl > 0.0
          ? 100.0 * (1.0 - last.eval_reverse_kl / first.eval_reverse_kl)
          : 0.0;
  char buf[256];
  out << "train: estimator=" << to_string(cfg.train.estimator.kind)
      << " steps=" << cfg.train.steps << " vocab=" << cfg.train.vocab_size
      << " seed=" << cfg.train.seed << "\n";
  std::snprintf(buf, sizeof(buf),
                "  eval reverse KL: %.6g -> %.6g (%.1f%% reduction)\n",
                first.eval_reverse_kl, last.eval_reverse_kl, reduction);
  out << buf;
  std::snprintf(buf, sizeof(buf), "  greedy agreement: %.3f -> %.3f\n",
                first.greedy_agreement, last.greedy_agreement);
  out << buf;
  out << "  tokens logged: " << result.records.size() << "\n";
  for (const std::string& p : written) out << "  wrote " << p << "\n";
  return 0;
}

int cmd_verify(const VerifyArgs& args, std::ostream& out) {
  verify::Options opts;
  opts.seed = args.seed;
  opts.corrupt_detach = args.corrupt_detach;
  std::vector<verify::CheckResult> results = verify::run_identity_suite(opts);
  verify::print_table(out, results);
  if (!args.json_path.empty())
    atomic_write(args.json_path, verify::to_json(opts, results));
  return verify::all_passed(results) ? 0 : 1;
}

int cmd_sweep_k(const std::string& config_path, std::ostream& out) {
  ExperimentConfig cfg = parse_config_file(config_path);
  fs::create_directories(cfg.output_dir);

  // Reference run: the full-vocabulary baselined kind, doubling as that
  // cell of the sweep; snapshots feed the truncation-error analysis.
  std::optional<TrainResult> reference;
  std::vector<ContextSnapshot> snapshots =
      run_reference(cfg.train, 20000, reference);
  out << "sweep-k: " << snapshots.size()
      << " context snapshots from the reference run\n";

  // Deduplicated ascending support sizes, clamped to the vocabulary.
  std::vector<int32_t> ks;
  for (int32_t k : cfg.sweep_k_values)
    ks.push_back(std::min(k, cfg.train.vocab_size));
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::vector<SweepRow> rows;
  {
    SweepRow r;
    r.kind = to_string(EstimatorKind::opd);
    r.baseline_mse = plain_mse(snapshots);
    TrainConfig c = cfg.train;
    c.estimator.kind = EstimatorKind::opd;
    c.keep_records = false;
    TrainResult res = train(c);
    r.final_eval_reverse_kl = res.metrics.back().eval_reverse_kl;
    r.final_greedy_agreement = res.metrics.back().greedy_agreement;
    rows.push_back(std::move(r));
  }
  for (int32_t k : ks) {
    SweepRow r;
    r.kind = to_string(EstimatorKind::vopd_top_k);
    r.k = k;
    r.baseline_mse = truncation_mse(snapshots, k);
    TrainConfig c = cfg.train;
    c.estimator.kind = EstimatorKind::vopd_top_k;
    c.estimator.k = k;
    c.keep_records = false;
    TrainResult res = train(c);
    r.final_eval_reverse_kl = res.metrics.back().eval_reverse_kl;
    r.final_greedy_agreement = res.metrics.back().greedy_agreement;
    rows.push_back(std::move(r));
  }
  {
    SweepRow r;
    r.kind = to_string(EstimatorKind::vopd_full_v);
    r.baseline_mse = 0.0;  // its baseline IS the full divergence
    r.final_eval_reverse_kl = reference->metrics.back().eval_reverse_kl;
    r.final_greedy_agreement = reference->metrics.back().greedy_agreement;
    rows.push_back(std::move(r));
  }

  std::string csv_path = (fs::path(cfg.output_dir) / "sweep_k.csv").string();
  atomic_write(csv_path, render_sweep_csv(rows));
  out << "  wrote " << csv_path << "\n";
  if (cfg.emit_plots) {
    std::vector<std::pair<double, double>> pts;
    for (const SweepRow& r : rows) {
      if (r.kind == to_string(EstimatorKind::opd))
        pts.emplace_back(0.0, r.baseline_mse);
      else if (r.k)
        pts.emplace_back(static_cast<double>(*r.k), r.baseline_mse);
    }
    std::sort(pts.begin(), pts.end());
    std::string svg_path =
        (fs::path(cfg.output_dir) / "mse_vs_k.svg").string();
    atomic_write(svg_path, build_mse_curve(pts));
    out << "  wrote " << svg_path << "\n";
  }
  char buf[160];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "  %-12s k=%-4s mse=%-12.4g final_kl=%-10.4g agree=%.3f\n",
                  r.kind.c_str(), r.k ? std::to_string(*r.k).c_str() : "-",
                  r.baseline_mse, r.final_eval_reverse_kl,
                  r.final_greedy_agreement);
    out << buf;
  }
  return 0;
}

int cmd_bench(const std::string& config_path, std::ostream& out) {
  ExperimentConfig cfg = parse_config_file(config_path);
  fs::create_directories(cfg.output_dir);
  std::vector<BenchCell> cells =
      run_bench(cfg.bench_vocab_sizes, cfg.train.seed, 64, 21, 3);
  std::string csv_path = (fs::path(cfg.output_dir) / "bench.csv").string();
  atomic_write(csv_path, render_bench_csv(cells));
  out << "bench: wrote " << csv_path << "\n";
  if (cfg.emit_plots) {
    std::string svg_path =
        (fs::path(cfg.output_dir) / "step_time_bars.svg").string();
    atomic_write(svg_path, build_time_bars(cells));
    out << "  wrote " << svg_path << "\n";
  }
  char buf[160];
  for (const BenchCell& c : cells) {
    std::snprintf(buf, sizeof(buf),
                  "  V=%-8lld %-12s median=%-10.4g ms  iqr=%-10.4g ms\n",
                  static_cast<long long>(c.vocab_size), to_string(c.kind),
                  c.median_ms, c.iqr_ms);
    out << buf;
  }
  return 0;
}

int cmd_plot(const std::string& data_path, const std::string& kind_name,
             const std::string& out_path, std::ostream& out) {
  std::optional<PlotKind> kind = plot_kind_from_string(kind_name);
  if (!kind)
    throw std::invalid_argument(
        "unknown plot kind '" + kind_name +
        "' (reward_advantage_hist, reward_advantage_scatter, mse_vs_k, "
        "grad_norm_curve, step_time_bars, logprob_scatter)");
  std::string svg_text;
  switch (*kind) {
    case PlotKind::reward_advantage_hist:
      svg_text = build_reward_advantage_hist(read_records_jsonl(data_path));
      break;
    case PlotKind::reward_advantage_scatter:
      svg_text = build_reward_advantage_scatter(read_records_jsonl(data_path));
      break;
    case PlotKind::logprob_scatter:
      svg_text = build_logprob_scatter(read_records_jsonl(data_path));
      break;
    case PlotKind::grad_norm_curve:
      svg_text = build_grad_norm_curve(read_metrics_csv(data_path));
      break;
    case PlotKind::mse_vs_k: {
      std::vector<SweepRow> rows = read_sweep_csv(data_path);
      std::vector<std::pair<double, double>> pts;
      for (const SweepRow& r : rows) {
        if (r.kind == to_string(EstimatorKind::opd))
          pts.emplace_back(0.0, r.baseline_mse);
        else if (r.k)
          pts.emplace_back(static_cast<double>(*r.k), r.baseline_mse);
      }
      std::sort(pts.begin(), pts.end());
      svg_text = build_mse_curve(pts);
      break;
    }
    case PlotKind::step_time_bars:
      svg_text = build_time_bars(read_bench_csv(data_path));
      break;
  }
  atomic_write(out_path, svg_text);
  out << "plot: wrote " << out_path << "\n";
  return 0;
}

}  // namespace vopd
