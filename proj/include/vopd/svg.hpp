#pragma once

// Deterministic SVG charts: same data in, same bytes out.
//
// Hand-rolled because the surface is tiny (histogram, scatter, line, bars)
// and the determinism requirement rules out anything that stamps timestamps
// or random ids into its output.

#include <string>
#include <utility>
#include <vector>

namespace vopd::svg {

struct Series {
  std::string label;
  std::string color;  // CSS color
  std::vector<std::pair<double, double>> points;
};

struct ValueSeries {
  std::string label;
  std::string color;
  std::vector<double> values;
};

struct Bar {
  std::string group;  // x-axis cluster (e.g. vocabulary size)
  std::string label;  // legend entry (e.g. estimator name)
  std::string color;
  double value = 0.0;
  double spread = 0.0;  // whisker half-height (e.g. IQR), 0 = none
};

// Overlaid 60-bin histograms over the series' combined range.
std::string histogram(const std::string& title, const std::string& x_label,
                      const std::vector<ValueSeries>& series, int bins = 60);

// Scatter plot; optionally draws the y = x reference line across the frame.
std::string scatter(const std::string& title, const std::string& x_label,
                    const std::string& y_label,
                    const std::vector<Series>& series, bool identity_line);

// Polyline chart (one line per series, drawn with point markers when a
// series is short enough for markers to be readable).
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::vector<Series>& series);

// Clustered bar chart with optional whiskers.
std::string bar_chart(const std::string& title, const std::string& y_label,
                      const std::vector<Bar>& bars);

}  // namespace vopd::svg
