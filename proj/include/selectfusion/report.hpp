#pragma once

// Static report generation from run directories: SVG line and bar charts
// plus a cross-run summary table. Numbers are printed with fixed precision
// so the output is byte-stable for fixed inputs.

#include <filesystem>
#include <string>
#include <vector>

namespace selectfusion {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series, bool equal_aspect = false);

struct BarGroup {
  std::string name;            // legend entry
  std::vector<double> values;  // one per category
};

std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<std::string>& categories,
                          const std::vector<BarGroup>& groups);

struct ReportResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// Loss curve, trajectory overlays and selection-rate chart per run, plus
/// summary.csv over all runs. A single run writes straight into `out_dir`;
/// several runs get one subdirectory each. Throws MissingArtifacts when a
/// run lacks metrics.csv or masks.csv.
ReportResult generate_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out_dir);

}  // namespace selectfusion
