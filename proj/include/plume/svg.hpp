#pragma once

// Minimal SVG line/scatter plots with a grid of panels. Output bytes depend only on the
// inputs: fixed number formatting, no timestamps, no random ids.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace plume::svg {

struct Series {
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  double width = 1.5;
  double opacity = 1.0;
  std::string dash;       // stroke-dasharray, empty = solid
  std::string css_class;  // e.g. "fan"
  std::string label;      // legend entry, empty = none
  bool markers = false;   // points instead of a polyline
};

struct Band {
  std::vector<double> x, lo, hi;
  std::string color = "#1f77b4";
  double opacity = 0.25;
  std::string label;
};

struct Panel {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  std::vector<Band> bands;
  bool log_y = false;
  double xmin = std::numeric_limits<double>::quiet_NaN(), xmax = xmin, ymin = xmin, ymax = xmin;
};

struct Figure {
  std::string title;
  int rows = 1, cols = 1;
  double panel_width = 360, panel_height = 240;
  std::vector<Panel> panels;  // row-major
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  if (v != 0.0 && (std::abs(v) >= 1e4 || std::abs(v) < 1e-2)) {
    std::snprintf(buf, sizeof buf, "%.1e", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.3g", v);
  }
  return buf;
}

inline std::string escape(const std::string& s) {
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

/// Roughly five round ticks spanning [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  if (!(span > 0.0)) return {lo};
  const double raw = span / 5.0, mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double step = (f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0) * mag;
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
  return t;
}

namespace detail {

inline void extend(double& lo, double& hi, double v) {
  if (!std::isfinite(v)) return;
  lo = std::min(lo, v);
  hi = std::max(hi, v);
}

inline std::string render_panel(const Panel& p, std::size_t index, double ox, double oy, double w, double h) {
  const double ml = 62, mr = 12, mt = 24, mb = 40;
  const double px = ox + ml, py = oy + mt, pw = w - ml - mr, ph = h - mt - mb;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  const auto ty = [&](double v) { return p.log_y ? (v > 0 ? std::log10(v) : std::numeric_limits<double>::quiet_NaN()) : v; };
  for (const auto& s : p.series) {
    for (double v : s.x) extend(x0, x1, v);
    for (double v : s.y) extend(y0, y1, ty(v));
  }
  for (const auto& b : p.bands) {
    for (double v : b.x) extend(x0, x1, v);
    for (double v : b.lo) extend(y0, y1, ty(v));
    for (double v : b.hi) extend(y0, y1, ty(v));
  }
  if (std::isfinite(p.xmin)) x0 = p.xmin;
  if (std::isfinite(p.xmax)) x1 = p.xmax;
  if (std::isfinite(p.ymin)) y0 = ty(p.ymin);
  if (std::isfinite(p.ymax)) y1 = ty(p.ymax);
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) {
    const double pad = y0 == 0 ? 1 : 0.05 * std::abs(y0);
    y0 -= pad;
    y1 += pad;
  } else if (!std::isfinite(p.ymin) || !std::isfinite(p.ymax)) {
    const double pad = 0.05 * (y1 - y0);
    if (!std::isfinite(p.ymin)) y0 -= pad;
    if (!std::isfinite(p.ymax)) y1 += pad;
  }
  const auto sx = [&](double v) { return px + (v - x0) / (x1 - x0) * pw; };
  const auto sy = [&](double v) { return py + ph - (ty(v) - y0) / (y1 - y0) * ph; };
  const auto syr = [&](double t) { return py + ph - (t - y0) / (y1 - y0) * ph; };

  std::string o = "<g class=\"panel\">\n";
  o += "<rect x=\"" + num(px) + "\" y=\"" + num(py) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#333\" stroke-width=\"0.8\"/>\n";
  for (double t : nice_ticks(x0, x1)) {
    o += "<line x1=\"" + num(sx(t)) + "\" y1=\"" + num(py + ph) + "\" x2=\"" + num(sx(t)) + "\" y2=\"" + num(py + ph + 4) +
         "\" stroke=\"#333\"/>\n";
    o += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(py + ph + 15) + "\" font-size=\"9\" text-anchor=\"middle\">" + tick_label(t) +
         "</text>\n";
  }
  for (double t : nice_ticks(y0, y1)) {
    o += "<line x1=\"" + num(px - 4) + "\" y1=\"" + num(syr(t)) + "\" x2=\"" + num(px) + "\" y2=\"" + num(syr(t)) +
         "\" stroke=\"#333\"/>\n";
    o += "<text x=\"" + num(px - 6) + "\" y=\"" + num(syr(t) + 3) + "\" font-size=\"9\" text-anchor=\"end\">" +
         tick_label(p.log_y ? std::pow(10.0, t) : t) + "</text>\n";
  }
  o += "<text x=\"" + num(px + pw / 2) + "\" y=\"" + num(oy + 16) + "\" font-size=\"11\" text-anchor=\"middle\">" + escape(p.title) +
       "</text>\n";
  o += "<text x=\"" + num(px + pw / 2) + "\" y=\"" + num(py + ph + 32) + "\" font-size=\"10\" text-anchor=\"middle\">" +
       escape(p.xlabel) + "</text>\n";
  o += "<text x=\"" + num(ox + 12) + "\" y=\"" + num(py + ph / 2) + "\" font-size=\"10\" text-anchor=\"middle\" transform=\"rotate(-90 " +
       num(ox + 12) + " " + num(py + ph / 2) + ")\">" + escape(p.ylabel) + "</text>\n";
  const std::string clip_id = "clip" + std::to_string(index);
  o += "<clipPath id=\"" + clip_id + "\"><rect x=\"" + num(px) + "\" y=\"" + num(py) + "\" width=\"" + num(pw) + "\" height=\"" +
       num(ph) + "\"/></clipPath>\n";
  const std::string clip = "url(#" + clip_id + ")";
  for (const auto& b : p.bands) {
    std::string pts;
    for (std::size_t i = 0; i < b.x.size(); ++i) pts += num(sx(b.x[i])) + "," + num(sy(b.hi[i])) + " ";
    for (std::size_t i = b.x.size(); i-- > 0;) pts += num(sx(b.x[i])) + "," + num(sy(b.lo[i])) + " ";
    if (!pts.empty()) pts.pop_back();
    o += "<polygon class=\"band\" clip-path=\"" + clip + "\" points=\"" + pts + "\" fill=\"" + b.color + "\" fill-opacity=\"" +
         num(b.opacity) + "\" stroke=\"none\"/>\n";
  }
  for (const auto& s : p.series) {
    const std::string cls = s.css_class.empty() ? "" : " class=\"" + s.css_class + "\"";
    if (s.markers) {
      o += "<g" + cls + " fill=\"" + s.color + "\" fill-opacity=\"" + num(s.opacity) + "\">";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(sy(s.y[i]))) continue;
        o += "<circle cx=\"" + num(sx(s.x[i])) + "\" cy=\"" + num(sy(s.y[i])) + "\" r=\"" + num(s.width) + "\"/>";
      }
      o += "</g>\n";
      continue;
    }
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double yv = sy(s.y[i]);
      if (!std::isfinite(yv)) continue;
      pts += num(sx(s.x[i])) + "," + num(yv) + " ";
    }
    if (!pts.empty()) pts.pop_back();
    o += "<polyline" + cls + " clip-path=\"" + clip + "\" points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color +
         "\" stroke-width=\"" + num(s.width) + "\" stroke-opacity=\"" + num(s.opacity) + "\"" +
         (s.dash.empty() ? "" : " stroke-dasharray=\"" + s.dash + "\"") + "/>\n";
  }
  // Legend: one entry per distinct label.
  std::vector<std::pair<std::string, std::string>> legend;
  const auto add = [&](const std::string& label, const std::string& color) {
    if (label.empty()) return;
    for (const auto& e : legend) if (e.first == label) return;
    legend.emplace_back(label, color);
  };
  for (const auto& b : p.bands) add(b.label, b.color);
  for (const auto& s : p.series) add(s.label, s.color);
  for (std::size_t i = 0; i < legend.size(); ++i) {
    const double ly = py + 10 + 12 * static_cast<double>(i);
    o += "<rect x=\"" + num(px + pw - 110) + "\" y=\"" + num(ly - 6) + "\" width=\"10\" height=\"4\" fill=\"" + legend[i].second +
         "\"/>\n";
    o += "<text x=\"" + num(px + pw - 96) + "\" y=\"" + num(ly) + "\" font-size=\"9\">" + escape(legend[i].first) + "</text>\n";
  }
  o += "</g>\n";
  return o;
}

}  // namespace detail

inline std::string render(const Figure& f) {
  const double top = f.title.empty() ? 0 : 26;
  const double width = f.cols * f.panel_width, height = top + f.rows * f.panel_height;
  std::string o = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) + "\" viewBox=\"0 0 " +
       num(width) + " " + num(height) + "\" font-family=\"sans-serif\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!f.title.empty()) {
    o += "<text x=\"" + num(width / 2) + "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">" + escape(f.title) + "</text>\n";
  }
  for (std::size_t i = 0; i < f.panels.size(); ++i) {
    const int r = static_cast<int>(i) / f.cols, c = static_cast<int>(i) % f.cols;
    o += detail::render_panel(f.panels[i], i, c * f.panel_width, top + r * f.panel_height, f.panel_width, f.panel_height);
  }
  o += "</svg>\n";
  return o;
}

}  // namespace plume::svg
