#include "selectfusion/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "selectfusion/csv.hpp"
#include "selectfusion/error.hpp"
#include "selectfusion/geometry.hpp"
#include "selectfusion/harness.hpp"

namespace selectfusion {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos) s = s.substr(s[0] == '-' ? 1 : 0);
  return s;
}

std::string tick_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    const double pad = std::max(1.0, std::abs(lo) * 0.1);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void open_svg(std::ostringstream& os, const std::string& title) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth, 0) << "\" height=\"" << num(kHeight, 0)
     << "\" viewBox=\"0 0 " << num(kWidth, 0) << ' ' << num(kHeight, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth, 0) << "\" height=\"" << num(kHeight, 0) << "\" fill=\"white\"/>\n"
     << "<text x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, const Range& xr, const Range& yr, const std::string& x_label, const std::string& y_label,
          bool x_ticks) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  os << "<g stroke=\"black\" stroke-width=\"1\">\n"
     << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y0) << "\"/>\n"
     << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(y1) << "\"/>\n"
     << "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double yv = yr.lo + f * (yr.hi - yr.lo);
    const double py = y0 - f * (y0 - y1);
    os << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py + 4) << "\" text-anchor=\"end\">" << tick_label(yv)
       << "</text>\n";
    if (x_ticks) {
      const double xv = xr.lo + f * (xr.hi - xr.lo);
      const double px = x0 + f * (x1 - x0);
      os << "<text x=\"" << num(px) << "\" y=\"" << num(y0 + 16) << "\" text-anchor=\"middle\">" << tick_label(xv)
         << "</text>\n";
    }
  }
  os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 10) << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num((y0 + y1) / 2) << ")\">" << escape(y_label) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<std::string>& names) {
  const double x = kWidth - kRight + 12;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 14.0 * static_cast<double>(i);
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[i % 7]
       << "\"/>\n"
       << "<text x=\"" << num(x + 14) << "\" y=\"" << num(y + 9) << "\">" << escape(names[i]) << "</text>\n";
  }
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series, bool equal_aspect) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  Range xr = padded(xmin, xmax);
  Range yr = padded(ymin, ymax);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  if (equal_aspect) {
    const double per_px = std::max((xr.hi - xr.lo) / pw, (yr.hi - yr.lo) / ph);
    const double cx = (xr.lo + xr.hi) / 2, cy = (yr.lo + yr.hi) / 2;
    xr = {cx - per_px * pw / 2, cx + per_px * pw / 2};
    yr = {cy - per_px * ph / 2, cy + per_px * ph / 2};
  }
  std::ostringstream os;
  open_svg(os, title);
  axes(os, xr, yr, x_label, y_label, true);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    os << "<polyline fill=\"none\" stroke=\"" << kPalette[k % 7] << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const double px = kLeft + (s.x[i] - xr.lo) / (xr.hi - xr.lo) * pw;
      const double py = kHeight - kBottom - (s.y[i] - yr.lo) / (yr.hi - yr.lo) * ph;
      os << (first ? "" : " ") << num(px) << ',' << num(py);
      first = false;
    }
    os << "\"/>\n";
  }
  legend(os, names);
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<std::string>& categories,
                          const std::vector<BarGroup>& groups) {
  double ymax = 0.0;
  for (const auto& g : groups) {
    for (double v : g.values) {
      if (std::isfinite(v)) ymax = std::max(ymax, v);
    }
  }
  const Range yr{0.0, ymax > 0.0 ? ymax * 1.05 : 1.0};
  std::ostringstream os;
  open_svg(os, title);
  axes(os, {0.0, 1.0}, yr, "", y_label, false);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const double slot = pw / static_cast<double>(std::max<std::size_t>(categories.size(), 1));
  const double bar = 0.8 * slot / static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  std::vector<std::string> names;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    names.push_back(groups[k].name);
    for (std::size_t c = 0; c < categories.size() && c < groups[k].values.size(); ++c) {
      const double v = std::isfinite(groups[k].values[c]) ? groups[k].values[c] : 0.0;
      const double h = v / yr.hi * ph;
      const double x = kLeft + slot * static_cast<double>(c) + 0.1 * slot + bar * static_cast<double>(k);
      os << "<rect x=\"" << num(x) << "\" y=\"" << num(kHeight - kBottom - h) << "\" width=\"" << num(bar)
         << "\" height=\"" << num(h) << "\" fill=\"" << kPalette[k % 7] << "\"/>\n";
    }
  }
  for (std::size_t c = 0; c < categories.size(); ++c) {
    os << "<text x=\"" << num(kLeft + slot * (static_cast<double>(c) + 0.5)) << "\" y=\"" << num(kHeight - kBottom + 16)
       << "\" text-anchor=\"middle\">" << escape(categories[c]) << "</text>\n";
  }
  legend(os, names);
  os << "</svg>\n";
  return os.str();
}

namespace {

std::string run_name(const std::filesystem::path& run) {
  auto p = run.lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  const std::string name = p.filename().string();
  return name.empty() || name == "." ? "run" : name;
}

std::string read_fusion(const std::filesystem::path& run) {
  const auto path = run / "config.ini";
  if (!std::filesystem::exists(path)) return "unknown";
  try {
    return to_string(load_experiment_config(path).fusion);
  } catch (const Error&) {
    return "unknown";
  }
}

void write_file(const std::filesystem::path& path, const std::string& text, ReportResult& result) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  result.written.push_back(path);
}

std::map<std::string, double> test_metrics(const CsvTable& metrics) {
  std::map<std::string, double> out;
  const std::size_t phase = metrics.column("phase");
  const std::size_t metric = metrics.column("metric");
  const std::size_t value = metrics.column("value");
  for (const auto& row : metrics.rows) {
    if (row.at(phase) == "test") out[row.at(metric)] = parse_double(row.at(value));
  }
  return out;
}

void report_run(const std::filesystem::path& run, const std::filesystem::path& dest, ReportResult& result) {
  const std::string name = run_name(run);
  const CsvTable metrics = read_csv(run / "metrics.csv");

  // Loss curve.
  {
    Series train{"train", {}, {}}, val{"validation", {}, {}};
    const std::size_t phase = metrics.column("phase"), epoch = metrics.column("epoch"), metric = metrics.column("metric"),
                      value = metrics.column("value");
    for (const auto& row : metrics.rows) {
      if (row.at(metric) != "loss" || row.at(epoch).empty()) continue;
      Series& s = row.at(phase) == "train" ? train : val;
      if (row.at(phase) != "train" && row.at(phase) != "val") continue;
      s.x.push_back(parse_double(row.at(epoch)));
      s.y.push_back(parse_double(row.at(value)));
    }
    std::vector<Series> series;
    if (!train.x.empty()) series.push_back(train);
    if (!val.x.empty()) series.push_back(val);
    if (series.empty()) {
      result.warnings.push_back(name + ": no training loss rows; loss curve omitted");
    } else {
      write_file(dest / "loss_curve.svg", line_plot_svg(name + " loss", "epoch", "loss", series), result);
    }
  }

  // Trajectory overlays, one per test episode.
  const auto traj_dir = run / "trajectories";
  std::vector<std::string> stems;
  if (std::filesystem::is_directory(traj_dir)) {
    const std::regex pattern("(episode_[0-9]+)_gt\\.csv");
    for (const auto& entry : std::filesystem::directory_iterator(traj_dir)) {
      std::smatch m;
      const std::string file = entry.path().filename().string();
      if (std::regex_match(file, m, pattern) && std::filesystem::exists(traj_dir / (m[1].str() + "_pred.csv"))) {
        stems.push_back(m[1].str());
      }
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) result.warnings.push_back(name + ": no trajectories found; overlays omitted");
  for (const auto& stem : stems) {
    const auto gt = read_global_trajectory(traj_dir / (stem + "_gt.csv"));
    const auto pred = read_global_trajectory(traj_dir / (stem + "_pred.csv"));
    Series sg{"ground truth", {}, {}}, sp{"estimate", {}, {}};
    for (const auto& p : gt) {
      sg.x.push_back(p.p.x());
      sg.y.push_back(p.p.y());
    }
    for (const auto& p : pred) {
      sp.x.push_back(p.p.x());
      sp.y.push_back(p.p.y());
    }
    write_file(dest / "trajectories" / (stem + ".svg"),
               line_plot_svg(name + " " + stem, "x [m]", "y [m]", {sg, sp}, true), result);
  }

  // Selection-rate bars.
  const auto masks = read_masks(run / "masks.csv");
  if (masks.empty()) {
    result.warnings.push_back(name + ": mask log is empty; selection chart omitted");
    return;
  }
  std::vector<std::string> categories;
  BarGroup ga{"modality a", {}}, gb{"modality b", {}};
  const auto rates_path = run / "selection_rates.csv";
  if (std::filesystem::exists(rates_path)) {
    const CsvTable rates = read_csv(rates_path);
    const std::size_t cg = rates.column("grouping"), cb = rates.column("bucket"), cm = rates.column("modality"),
                      cr = rates.column("rate");
    for (const auto& row : rates.rows) {
      if (row.at(cg) != "overall" && row.at(cg) != "degradation") continue;
      const std::string label = row.at(cg) == "overall" ? "all" : row.at(cb);
      if (row.at(cm) == "a") {
        categories.push_back(label);
        ga.values.push_back(parse_double(row.at(cr)));
      } else {
        gb.values.push_back(parse_double(row.at(cr)));
      }
    }
  }
  if (categories.empty()) {
    double a = 0.0, b = 0.0;
    for (const auto& m : masks) {
      a += m.rate_a;
      b += m.rate_b;
    }
    categories = {"all"};
    ga.values = {a / static_cast<double>(masks.size())};
    gb.values = {b / static_cast<double>(masks.size())};
  }
  write_file(dest / "selection_rates.svg",
             bar_chart_svg(name + " feature selection rate", "selection rate", categories, {ga, gb}), result);
}

}  // namespace

ReportResult generate_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) throw Error(ErrorCode::InvalidConfig, "no run directories given");
  std::vector<std::string> missing;
  for (const auto& run : runs) {
    for (const char* f : {"metrics.csv", "masks.csv"}) {
      if (!std::filesystem::exists(run / f)) missing.push_back((run / f).string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing run artifacts:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorCode::MissingArtifacts, msg);
  }

  ReportResult result;
  std::ostringstream summary;
  summary << "run,fusion,t_rmse,r_rmse,t_drift,r_drift\n";
  for (const auto& run : runs) {
    const std::string name = run_name(run);
    report_run(run, runs.size() == 1 ? out_dir : out_dir / name, result);
    const auto m = test_metrics(read_csv(run / "metrics.csv"));
    auto field = [&](const char* key) { return m.count(key) ? format_double(m.at(key)) : std::string(); };
    summary << name << ',' << read_fusion(run) << ',' << field("t_rmse") << ',' << field("r_rmse") << ','
            << field("t_drift") << ',' << field("r_drift") << '\n';
  }
  write_file(out_dir / "summary.csv", summary.str(), result);
  return result;
}

}  // namespace selectfusion
