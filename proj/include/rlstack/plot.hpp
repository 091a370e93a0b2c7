#pragma once

// Log reading, curve aggregation across seeds, SVG and summary export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlstack {

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw PlotError("missing column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw PlotError("cannot read " + p.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw PlotError(p.string() + ": empty file");
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != t.header.size()) throw PlotError(p.string() + ": row with " + std::to_string(f.size()) + " fields");
    t.rows.push_back(std::move(f));
  }
  return t;
}

enum class XAxis { steps, updates, time };

inline XAxis parse_x_axis(const std::string& s) {
  if (s == "steps") return XAxis::steps;
  if (s == "updates") return XAxis::updates;
  if (s == "time") return XAxis::time;
  throw PlotError("x axis must be steps, updates or time");
}

inline std::string x_column(XAxis x) {
  switch (x) {
    case XAxis::steps: return "cum_env_steps";
    case XAxis::updates: return "cum_updates";
    case XAxis::time: return "wall_time_s";
  }
  return "";
}

struct Series {
  std::string label;
  std::vector<double> x, y;
};

/// Rows whose metric cell is blank are skipped.
inline Series extract_series(const CsvTable& t, const std::string& metric, XAxis axis, std::string label = {}) {
  std::size_t xi = t.column(x_column(axis)), yi = t.column(metric);
  Series s;
  s.label = std::move(label);
  for (const auto& r : t.rows) {
    if (r[yi].empty() || r[xi].empty()) continue;
    s.x.push_back(std::stod(r[xi]));
    s.y.push_back(std::stod(r[yi]));
  }
  return s;
}

struct Band {
  std::vector<double> x, mean, lo, hi;
};

/// Pointwise mean and range over x values present in every series.
inline Band mean_band(const std::vector<Series>& runs) {
  Band b;
  if (runs.empty()) return b;
  std::map<double, std::vector<double>> at;
  for (const auto& s : runs)
    for (std::size_t i = 0; i < s.x.size(); ++i) at[s.x[i]].push_back(s.y[i]);
  for (const auto& [x, ys] : at) {
    if (ys.size() != runs.size()) continue;
    double sum = 0.0;
    for (double y : ys) sum += y;
    b.x.push_back(x);
    b.mean.push_back(sum / static_cast<double>(ys.size()));
    b.lo.push_back(*std::min_element(ys.begin(), ys.end()));
    b.hi.push_back(*std::max_element(ys.begin(), ys.end()));
  }
  return b;
}

struct PlotFrame {
  double width = 720, height = 440, margin = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin); }
};

inline PlotFrame fit_frame(const std::vector<Series>& runs, const Band* band) {
  PlotFrame f;
  bool any = false;
  auto take = [&](double x, double y) {
    if (!any) {
      f.x0 = f.x1 = x;
      f.y0 = f.y1 = y;
      any = true;
    }
    f.x0 = std::min(f.x0, x);
    f.x1 = std::max(f.x1, x);
    f.y0 = std::min(f.y0, y);
    f.y1 = std::max(f.y1, y);
  };
  for (const auto& s : runs)
    for (std::size_t i = 0; i < s.x.size(); ++i) take(s.x[i], s.y[i]);
  if (band)
    for (std::size_t i = 0; i < band->x.size(); ++i) {
      take(band->x[i], band->lo[i]);
      take(band->x[i], band->hi[i]);
    }
  if (f.x1 == f.x0) f.x1 = f.x0 + 1;
  if (f.y1 == f.y0) f.y1 = f.y0 + 1;
  return f;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Polyline vertices in SVG coordinates, for one series.
inline std::vector<std::pair<double, double>> polyline_points(const Series& s, const PlotFrame& f) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < s.x.size(); ++i) out.emplace_back(f.px(s.x[i]), f.py(s.y[i]));
  return out;
}

inline std::string render_svg(const std::vector<Series>& runs, const Band* band, const std::string& metric,
                              const std::string& x_label) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  PlotFrame f = fit_frame(runs, band);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << f.margin << "\" y1=\"" << f.height - f.margin << "\" x2=\"" << f.width - f.margin << "\" y2=\""
     << f.height - f.margin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f.margin << "\" y1=\"" << f.margin << "\" x2=\"" << f.margin << "\" y2=\"" << f.height - f.margin
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double x = f.x0 + (f.x1 - f.x0) * k / 4.0, y = f.y0 + (f.y1 - f.y0) * k / 4.0;
    os << "<text x=\"" << fmt(f.px(x)) << "\" y=\"" << f.height - f.margin + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
       << fmt(x) << "</text>\n";
    os << "<text x=\"" << f.margin - 6 << "\" y=\"" << fmt(f.py(y) + 4) << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(y)
       << "</text>\n";
  }
  os << "<text x=\"" << f.width / 2 << "\" y=\"" << f.height - 15 << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label
     << "</text>\n";
  os << "<text x=\"15\" y=\"" << f.height / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
     << f.height / 2 << ")\">" << metric << "</text>\n";
  if (band && !band->x.empty()) {
    os << "<polygon class=\"band\" fill=\"#888888\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < band->x.size(); ++i) os << fmt(f.px(band->x[i])) << ',' << fmt(f.py(band->hi[i])) << ' ';
    for (std::size_t i = band->x.size(); i-- > 0;) os << fmt(f.px(band->x[i])) << ',' << fmt(f.py(band->lo[i])) << ' ';
    os << "\"/>\n";
    Series m{"mean", band->x, band->mean};
    os << "<polyline class=\"mean\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"";
    for (auto [x, y] : polyline_points(m, f)) os << fmt(x) << ',' << fmt(y) << ' ';
    os << "\"/>\n";
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    os << "<polyline class=\"run\" data-label=\"" << runs[r].label << "\" fill=\"none\" stroke=\"" << colors[r % 8]
       << "\" stroke-width=\"1.2\" points=\"";
    for (auto [x, y] : polyline_points(runs[r], f)) os << fmt(x) << ',' << fmt(y) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << f.width - f.margin + 4 << "\" y=\"" << f.margin + 14 * static_cast<double>(r) << "\" font-size=\"10\" fill=\""
       << colors[r % 8] << "\">" << runs[r].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

struct RunSummary {
  std::string label;
  std::size_t points = 0;
  double final_x = 0, final_value = 0, best_value = 0, best_x = 0;
};

inline RunSummary summarize(const Series& s) {
  RunSummary r;
  r.label = s.label;
  r.points = s.x.size();
  if (s.x.empty()) return r;
  r.final_x = s.x.back();
  r.final_value = s.y.back();
  auto it = std::max_element(s.y.begin(), s.y.end());
  r.best_value = *it;
  r.best_x = s.x[static_cast<std::size_t>(it - s.y.begin())];
  return r;
}

inline std::string summary_csv(const std::vector<Series>& runs, const std::string& metric) {
  std::ostringstream os;
  os << "run,metric,points,final_x,final_value,best_x,best_value\n";
  for (const auto& s : runs) {
    auto r = summarize(s);
    os << r.label << ',' << metric << ',' << r.points << ',';
    if (r.points) os << fmt(r.final_x) << ',' << fmt(r.final_value) << ',' << fmt(r.best_x) << ',' << fmt(r.best_value);
    else os << ",,,";
    os << '\n';
  }
  return os.str();
}

}  // namespace rlstack
