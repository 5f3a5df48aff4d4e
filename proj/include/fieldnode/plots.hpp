#pragma once

// Learning-curve artifacts: across-seed statistics per episode, their CSV
// form (episode, mean, lo, hi), and a dependency-free SVG rendering with a
// min-max band per series.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fieldnode/errors.hpp"

namespace fieldnode {

struct CurvePoint {
  int episode = 0;
  double mean = 0, lo = 0, hi = 0;

  bool operator==(const CurvePoint&) const = default;
};

struct CurveSeries {
  std::string label;
  std::vector<CurvePoint> points;
};

// `curves[s][i]` is seed s's value at episode `episodes[i]`. Only the common
// prefix shared by every seed is summarized.
inline std::vector<CurvePoint> curve_statistics(const std::vector<int>& episodes,
                                                const std::vector<std::vector<double>>& curves) {
  std::vector<CurvePoint> out;
  if (curves.empty()) return out;
  std::size_t n = episodes.size();
  for (const auto& c : curves) n = std::min(n, c.size());
  for (std::size_t i = 0; i < n; ++i) {
    CurvePoint p;
    p.episode = episodes[i];
    p.lo = std::numeric_limits<double>::infinity();
    p.hi = -std::numeric_limits<double>::infinity();
    for (const auto& c : curves) {
      p.mean += c[i];
      p.lo = std::min(p.lo, c[i]);
      p.hi = std::max(p.hi, c[i]);
    }
    p.mean /= static_cast<double>(curves.size());
    out.push_back(p);
  }
  return out;
}

inline void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& pts) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot write " + path.string());
  os << "episode,mean,lo,hi\n" << std::setprecision(17);
  for (const auto& p : pts) os << p.episode << ',' << p.mean << ',' << p.lo << ',' << p.hi << '\n';
}

inline std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw StateError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "episode,mean,lo,hi") throw ConfigError(path.string() + " is not a curve CSV");
  std::vector<CurvePoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CurvePoint p;
    char c1 = 0, c2 = 0, c3 = 0;
    ls >> p.episode >> c1 >> p.mean >> c2 >> p.lo >> c3 >> p.hi;
    if (!ls || c1 != ',' || c2 != ',' || c3 != ',') throw ConfigError("malformed curve row: " + line);
    out.push_back(p);
  }
  return out;
}

inline void write_curve_svg(const std::filesystem::path& path, const std::string& title,
                            const std::vector<CurveSeries>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  constexpr double W = 640, H = 400, ml = 60, mr = 20, mt = 40, mb = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      x0 = std::min(x0, double(p.episode));
      x1 = std::max(x1, double(p.episode));
      y0 = std::min(y0, p.lo);
      y1 = std::max(y1, p.hi);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto X = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto Y = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

  std::ofstream os(path);
  if (!os) throw StateError("cannot write " + path.string());
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << title << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    os << "<text x=\"" << X(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << xv << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << yv << "</text>\n";
  }
  os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">episode</text>\n";
  os << "<text x=\"14\" y=\"" << (mt + H - mb) / 2 << "\" transform=\"rotate(-90 14 " << (mt + H - mb) / 2
     << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">return</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& pts = series[s].points;
    const char* color = kColors[s % std::size(kColors)];
    os << "<g class=\"series\" data-label=\"" << series[s].label << "\">\n";
    if (!pts.empty()) {
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& p : pts) os << X(p.episode) << ',' << Y(p.hi) << ' ';
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) os << X(it->episode) << ',' << Y(it->lo) << ' ';
      os << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& p : pts) os << X(p.episode) << ',' << Y(p.mean) << ' ';
      os << "\"/>\n";
    }
    const double ly = mt + 8 + 16.0 * static_cast<double>(s);
    os << "<rect x=\"" << W - mr - 130 << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"12\" fill=\"" << color
       << "\"/>\n<text x=\"" << W - mr - 113 << "\" y=\"" << ly + 1
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[s].label << "</text>\n</g>\n";
  }
  os << "</svg>\n";
}

// One curve file plus its CSV. Empty input is a warned no-op.
inline bool emit_curve(const std::filesystem::path& dir, const std::string& stem, const std::string& title,
                       const std::vector<CurvePoint>& pts) {
  if (pts.empty()) {
    std::clog << "warning: no records for " << stem << "; nothing plotted\n";
    return false;
  }
  std::filesystem::create_directories(dir);
  write_curve_csv(dir / (stem + ".csv"), pts);
  write_curve_svg(dir / (stem + ".svg"), title, {{"mean (min-max band)", pts}});
  return true;
}

inline bool emit_overlay(const std::filesystem::path& dir, const std::string& stem, const std::string& title,
                         const std::vector<CurveSeries>& series) {
  if (series.empty() || std::all_of(series.begin(), series.end(), [](const auto& s) { return s.points.empty(); })) {
    std::clog << "warning: no records for " << stem << "; nothing plotted\n";
    return false;
  }
  std::filesystem::create_directories(dir);
  for (const auto& s : series) write_curve_csv(dir / (stem + "_" + s.label + ".csv"), s.points);
  write_curve_svg(dir / (stem + ".svg"), title, series);
  return true;
}

}  // namespace fieldnode
