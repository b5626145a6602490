#pragma once

// Minimal static chart rendering (PNG): loss curves, accuracy-vs-episode,
// and grouped ablation bars.

#include <string>
#include <vector>

namespace gcr {

// Line chart of y against x (same length).
void plot_line(const std::vector<double>& x, const std::vector<double>& y,
               const std::string& title, const std::string& y_label, const std::string& path);

// Grouped bars: values[series][group]; one colour per series.
void plot_grouped_bars(const std::vector<std::string>& group_labels,
                       const std::vector<std::string>& series_labels,
                       const std::vector<std::vector<double>>& values, const std::string& title,
                       const std::string& path);

}  // namespace gcr
