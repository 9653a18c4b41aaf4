#include "vopd/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vopd {

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
  }
  fs::rename(tmp, target);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_metrics_csv(const std::string& path,
                       std::span<const MetricsRecord> metrics) {
  std::string out;
  out.reserve(metrics.size() * 160 + 128);
  out += kMetricsHeader;
  out += '\n';
  for (const MetricsRecord& m : metrics) {
    out += std::to_string(m.step);
    out += ',';
    out += fmt_double(m.grad_l2_norm);
    out += ',';
    out += fmt_double(m.mean_reward);
    out += ',';
    out += fmt_double(m.mean_advantage);
    out += ',';
    out += fmt_double(m.mean_full_kl);
    out += ',';
    out += fmt_double(m.eval_reverse_kl);
    out += ',';
    out += fmt_double(m.greedy_agreement);
    out += ',';
    if (m.empirical_grad_variance)
      out += fmt_double(*m.empirical_grad_variance);
    out += ',';
    out += fmt_double(m.wall_clock_ms);
    out += '\n';
  }
  atomic_write(path, out);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  // Fields here are numeric (never quoted); a plain comma split suffices.
  std::vector<std::string> fields;
  size_t start = 0;
  for (;;) {
    size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double_field(const std::string& s, const std::string& path,
                          size_t line_no) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                ": bad numeric field '" + s + "'");
  return v;
}

}  // namespace

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty metrics file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader)
    throw std::invalid_argument("unexpected metrics header in " + path);
  std::vector<MetricsRecord> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 9)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected 9 fields, got " +
                                  std::to_string(f.size()));
    MetricsRecord m;
    m.step = std::stoll(f[0]);
    m.grad_l2_norm = parse_double_field(f[1], path, line_no);
    m.mean_reward = parse_double_field(f[2], path, line_no);
    m.mean_advantage = parse_double_field(f[3], path, line_no);
    m.mean_full_kl = parse_double_field(f[4], path, line_no);
    m.eval_reverse_kl = parse_double_field(f[5], path, line_no);
    m.greedy_agreement = parse_double_field(f[6], path, line_no);
    if (!f[7].empty())
      m.empirical_grad_variance = parse_double_field(f[7], path, line_no);
    m.wall_clock_ms = parse_double_field(f[8], path, line_no);
    out.push_back(m);
  }
  return out;
}

void write_records_jsonl(const std::string& path,
                         std::span<const TokenRecord> records) {
  // Hand-formatted: this is the hot artifact (millions of lines), and the
  // layout is trivial.  Key order is fixed so output is byte-stable.
  std::string out;
  out.reserve(records.size() * 200);
  char buf[384];
  for (const TokenRecord& r : records) {
    int n = std::snprintf(
        buf, sizeof(buf),
        "{\"step\":%lld,\"reward\":%.17g,\"baseline\":%.17g,"
        "\"advantage\":%.17g,\"full_kl\":%.17g,\"student_logprob\":%.17g,"
        "\"teacher_logprob\":%.17g}\n",
        static_cast<long long>(r.step), r.reward, r.baseline, r.advantage,
        r.full_kl, r.student_logprob, r.teacher_logprob);
    out.append(buf, static_cast<size_t>(n));
  }
  atomic_write(path, out);
}

std::vector<TokenRecord> read_records_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open records file: " + path);
  std::vector<TokenRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": malformed record");
    TokenRecord r;
    r.step = j.value("step", int64_t{0});
    r.reward = j.value("reward", 0.0);
    r.baseline = j.value("baseline", 0.0);
    r.advantage = j.value("advantage", 0.0);
    r.full_kl = j.value("full_kl", 0.0);
    r.student_logprob = j.value("student_logprob", 0.0);
    r.teacher_logprob = j.value("teacher_logprob", 0.0);
    out.push_back(r);
  }
  return out;
}

void save_policy_file(const std::string& path, const PolicyTable& table) {
  std::ostringstream os;
  table.save(os);
  atomic_write(path, os.str());
}

PolicyTable load_policy_file(const std::string& path, bool trainable,
                             RowInitSpec init) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open policy file: " + path);
  return PolicyTable::load(in, trainable, init);
}

}  // namespace vopd
