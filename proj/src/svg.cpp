#include "vopd/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>

namespace vopd::svg {

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 20, kTop = 44, kBottom = 54;
constexpr double kPlotW = kWidth - kLeft - kRight;
constexpr double kPlotH = kHeight - kTop - kBottom;

std::string num(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;

  static Range of(double lo, double hi) {
    if (!(hi > lo)) {  // degenerate or reversed: open up a visible window
      double pad = std::max(1.0, std::abs(lo)) * 0.5;
      return {lo - pad, lo + pad};
    }
    double pad = (hi - lo) * 0.05;
    return {lo - pad, hi + pad};
  }

  double fx(double v) const { return kLeft + (v - lo) / (hi - lo) * kPlotW; }
  double fy(double v) const {
    return kTop + kPlotH - (v - lo) / (hi - lo) * kPlotH;
  }
};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header() {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" "
                "height=\"%g\" viewBox=\"0 0 %g %g\" "
                "font-family=\"sans-serif\">\n"
                "<rect width=\"%g\" height=\"%g\" fill=\"white\"/>\n",
                kWidth, kHeight, kWidth, kHeight, kWidth, kHeight);
  return buf;
}

std::string title_text(const std::string& title) {
  return "<text x=\"" + num(kWidth / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         escape(title) + "</text>\n";
}

std::string axis_labels(const std::string& x_label,
                        const std::string& y_label) {
  std::string out;
  out += "<text x=\"" + num(kLeft + kPlotW / 2) + "\" y=\"" +
         num(kHeight - 12) + "\" text-anchor=\"middle\" font-size=\"13\">" +
         escape(x_label) + "</text>\n";
  out += "<text x=\"18\" y=\"" + num(kTop + kPlotH / 2) +
         "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 "
         "18 " +
         num(kTop + kPlotH / 2) + ")\">" + escape(y_label) + "</text>\n";
  return out;
}

// Frame plus ~5 ticks per axis with numeric labels.
std::string frame_and_ticks(const Range& xr, const Range& yr) {
  std::string out;
  out += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" +
         num(kPlotW) + "\" height=\"" + num(kPlotH) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double t = i / 4.0;
    double xv = xr.lo + t * (xr.hi - xr.lo);
    double yv = yr.lo + t * (yr.hi - yr.lo);
    double X = xr.fx(xv), Y = yr.fy(yv);
    out += "<line x1=\"" + num(X) + "\" y1=\"" + num(kTop + kPlotH) +
           "\" x2=\"" + num(X) + "\" y2=\"" + num(kTop + kPlotH + 5) +
           "\" stroke=\"#333\"/>\n";
    out += "<text x=\"" + num(X) + "\" y=\"" + num(kTop + kPlotH + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + num(xv) +
           "</text>\n";
    out += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(Y) + "\" x2=\"" +
           num(kLeft) + "\" y2=\"" + num(Y) + "\" stroke=\"#333\"/>\n";
    out += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(Y + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + num(yv) +
           "</text>\n";
  }
  return out;
}

std::string legend(const std::vector<std::pair<std::string, std::string>>&
                       entries /* label, color */) {
  std::string out;
  double x = kLeft + 10, y = kTop + 14;
  for (const auto& [label, color] : entries) {
    out += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 9) +
           "\" width=\"12\" height=\"12\" fill=\"" + color +
           "\" fill-opacity=\"0.7\"/>\n";
    out += "<text x=\"" + num(x + 17) + "\" y=\"" + num(y + 2) +
           "\" font-size=\"12\">" + escape(label) + "</text>\n";
    y += 18;
  }
  return out;
}

}  // namespace

std::string histogram(const std::string& title, const std::string& x_label,
                      const std::vector<ValueSeries>& series, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs >= 1 bin");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  size_t total = 0;
  for (const ValueSeries& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    total += s.values.size();
  }
  if (total == 0) throw std::invalid_argument("histogram got no values");
  if (!(hi > lo)) hi = lo + 1.0;  // all-equal data still gets one bin
  Range xr = Range::of(lo, hi);
  double bin_w = (hi - lo) / bins;

  std::vector<std::vector<int64_t>> counts(series.size(),
                                           std::vector<int64_t>(bins, 0));
  int64_t peak = 1;
  for (size_t si = 0; si < series.size(); ++si) {
    for (double v : series[si].values) {
      int b = static_cast<int>((v - lo) / bin_w);
      b = std::clamp(b, 0, bins - 1);
      peak = std::max(peak, ++counts[si][b]);
    }
  }
  Range yr = Range::of(0.0, static_cast<double>(peak));
  yr.lo = 0.0;  // histograms sit on the floor

  std::string out = header() + title_text(title);
  out += frame_and_ticks(xr, yr);
  std::vector<std::pair<std::string, std::string>> leg;
  for (size_t si = 0; si < series.size(); ++si) {
    leg.emplace_back(series[si].label, series[si].color);
    for (int b = 0; b < bins; ++b) {
      if (counts[si][b] == 0) continue;
      double x0 = xr.fx(lo + b * bin_w);
      double x1 = xr.fx(lo + (b + 1) * bin_w);
      double y = yr.fy(static_cast<double>(counts[si][b]));
      out += "<rect x=\"" + num(x0) + "\" y=\"" + num(y) + "\" width=\"" +
             num(x1 - x0) + "\" height=\"" + num(kTop + kPlotH - y) +
             "\" fill=\"" + series[si].color + "\" fill-opacity=\"0.45\"/>\n";
    }
  }
  out += legend(leg);
  out += axis_labels(x_label, "count");
  out += "</svg>\n";
  return out;
}

std::string scatter(const std::string& title, const std::string& x_label,
                    const std::string& y_label,
                    const std::vector<Series>& series, bool identity_line) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  size_t total = 0;
  for (const Series& s : series) {
    for (auto [x, y] : s.points) {
      lo = std::min({lo, x, y});
      hi = std::max({hi, x, y});
    }
    total += s.points.size();
  }
  if (total == 0) throw std::invalid_argument("scatter got no points");
  Range xr = Range::of(lo, hi);
  Range yr = xr;  // shared square range so the identity line means something

  std::string out = header() + title_text(title);
  out += frame_and_ticks(xr, yr);
  if (identity_line) {
    out += "<line x1=\"" + num(xr.fx(xr.lo)) + "\" y1=\"" +
           num(yr.fy(xr.lo)) + "\" x2=\"" + num(xr.fx(xr.hi)) + "\" y2=\"" +
           num(yr.fy(xr.hi)) +
           "\" stroke=\"#888\" stroke-dasharray=\"6 4\"/>\n";
  }
  std::vector<std::pair<std::string, std::string>> leg;
  for (const Series& s : series) {
    leg.emplace_back(s.label, s.color);
    for (auto [x, y] : s.points)
      out += "<circle cx=\"" + num(xr.fx(x)) + "\" cy=\"" + num(yr.fy(y)) +
             "\" r=\"2\" fill=\"" + s.color + "\" fill-opacity=\"0.55\"/>\n";
  }
  if (identity_line) leg.emplace_back("y = x", "#888");
  out += legend(leg);
  out += axis_labels(x_label, y_label);
  out += "</svg>\n";
  return out;
}

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::vector<Series>& series) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  size_t total = 0;
  for (const Series& s : series) {
    for (auto [x, y] : s.points) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
    total += s.points.size();
  }
  if (total == 0) throw std::invalid_argument("line chart got no points");
  Range xr = Range::of(xlo, xhi);
  Range yr = Range::of(ylo, yhi);

  std::string out = header() + title_text(title);
  out += frame_and_ticks(xr, yr);
  std::vector<std::pair<std::string, std::string>> leg;
  for (const Series& s : series) {
    leg.emplace_back(s.label, s.color);
    std::string pts;
    for (auto [x, y] : s.points)
      pts += num(xr.fx(x)) + "," + num(yr.fy(y)) + " ";
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
           s.color + "\" stroke-width=\"1.5\"/>\n";
    if (s.points.size() <= 64)
      for (auto [x, y] : s.points)
        out += "<circle cx=\"" + num(xr.fx(x)) + "\" cy=\"" + num(yr.fy(y)) +
               "\" r=\"3\" fill=\"" + s.color + "\"/>\n";
  }
  out += legend(leg);
  out += axis_labels(x_label, y_label);
  out += "</svg>\n";
  return out;
}

std::string bar_chart(const std::string& title, const std::string& y_label,
                      const std::vector<Bar>& bars) {
  if (bars.empty()) throw std::invalid_argument("bar chart got no bars");
  // Cluster by group, preserving first-appearance order.
  std::vector<std::string> groups;
  for (const Bar& b : bars)
    if (std::find(groups.begin(), groups.end(), b.group) == groups.end())
      groups.push_back(b.group);
  size_t per_group = 0;
  for (const std::string& g : groups) {
    size_t n = 0;
    for (const Bar& b : bars)
      if (b.group == g) ++n;
    per_group = std::max(per_group, n);
  }
  double ylo = 0.0, yhi = -std::numeric_limits<double>::infinity();
  for (const Bar& b : bars) {
    ylo = std::min(ylo, b.value - b.spread);
    yhi = std::max(yhi, b.value + b.spread);
  }
  Range yr = Range::of(std::min(ylo, 0.0), yhi);

  double group_w = kPlotW / static_cast<double>(groups.size());
  double bar_w = group_w * 0.8 / static_cast<double>(per_group);

  std::string out = header() + title_text(title);
  out += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" +
         num(kPlotW) + "\" height=\"" + num(kPlotH) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double yv = yr.lo + i / 4.0 * (yr.hi - yr.lo);
    double Y = yr.fy(yv);
    out += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(Y) + "\" x2=\"" +
           num(kLeft) + "\" y2=\"" + num(Y) + "\" stroke=\"#333\"/>\n";
    out += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(Y + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + num(yv) + "</text>\n";
  }

  std::vector<std::pair<std::string, std::string>> leg;
  std::map<std::string, size_t> slot;  // bar label -> slot within its group
  for (const Bar& b : bars)
    if (!slot.count(b.label)) {
      slot[b.label] = leg.size();
      leg.emplace_back(b.label, b.color);
    }
  double base_y = yr.fy(std::max(yr.lo, 0.0));
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    double gx = kLeft + gi * group_w + group_w * 0.1;
    out += "<text x=\"" + num(kLeft + gi * group_w + group_w / 2) + "\" y=\"" +
           num(kTop + kPlotH + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + escape(groups[gi]) +
           "</text>\n";
    for (const Bar& b : bars) {
      if (b.group != groups[gi]) continue;
      double x = gx + slot[b.label] * bar_w;
      double y = yr.fy(b.value);
      double y0 = std::min(y, base_y), h = std::abs(base_y - y);
      out += "<rect x=\"" + num(x) + "\" y=\"" + num(y0) + "\" width=\"" +
             num(bar_w * 0.9) + "\" height=\"" + num(h) + "\" fill=\"" +
             b.color + "\"/>\n";
      if (b.spread > 0.0) {
        double cx = x + bar_w * 0.45;
        out += "<line x1=\"" + num(cx) + "\" y1=\"" +
               num(yr.fy(b.value - b.spread)) + "\" x2=\"" + num(cx) +
               "\" y2=\"" + num(yr.fy(b.value + b.spread)) +
               "\" stroke=\"#222\"/>\n";
      }
    }
  }
  out += legend(leg);
  out += axis_labels("", y_label);
  out += "</svg>\n";
  return out;
}

}  // namespace vopd::svg
