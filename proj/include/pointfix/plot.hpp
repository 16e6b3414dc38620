// Minimal SVG line charts.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace pointfix {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "frame";
  std::string y_label = "D1-all (%)";
  int width = 720, height = 420;
};

/// Centered running median; the window shrinks at the ends.
inline std::vector<double> running_median(const std::vector<double>& v, std::size_t window) {
  if (window <= 1) return v;
  std::vector<double> out(v.size());
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0, hi = std::min(v.size(), i + half + 1);
    std::vector<double> w(v.begin() + std::ptrdiff_t(lo), v.begin() + std::ptrdiff_t(hi));
    std::nth_element(w.begin(), w.begin() + std::ptrdiff_t(w.size() / 2), w.end());
    double m = w[w.size() / 2];
    if (w.size() % 2 == 0) {
      const double lower = *std::max_element(w.begin(), w.begin() + std::ptrdiff_t(w.size() / 2));
      m = 0.5 * (m + lower);
    }
    out[i] = m;
  }
  return out;
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

inline double nice_step(double span) {
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1 : f < 3.5 ? 2 : f < 7.5 ? 5 : 10) * mag;
}

}  // namespace detail

inline std::string svg_line_plot(const std::vector<Series>& series, const PlotOptions& opt = {}) {
  if (series.empty()) throw std::invalid_argument("svg_line_plot: no series to plot");
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("svg_line_plot: x/y length mismatch in " + s.name);
    if (s.x.empty()) throw std::invalid_argument("svg_line_plot: empty series " + s.name);
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  y0 = std::min(y0, 0.0);
  const double ystep = detail::nice_step(y1 - y0);
  y1 = std::ceil(y1 / ystep) * ystep;

  const double L = 64, R = 170, T = 36, B = 48;
  const double pw = opt.width - L - R, ph = opt.height - T - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) +
                  "\" height=\"" + std::to_string(opt.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty())
    s += "<text x=\"" + detail::num(L + pw / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         detail::xml_escape(opt.title) + "</text>\n";
  for (double y = y0; y <= y1 + 1e-9; y += ystep) {
    s += "<line x1=\"" + detail::num(L) + "\" x2=\"" + detail::num(L + pw) + "\" y1=\"" + detail::num(py(y)) +
         "\" y2=\"" + detail::num(py(y)) + "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + detail::num(L - 6) + "\" y=\"" + detail::num(py(y) + 4) + "\" text-anchor=\"end\">" +
         detail::num(y) + "</text>\n";
  }
  const double xstep = detail::nice_step(x1 - x0);
  for (double x = std::ceil(x0 / xstep) * xstep; x <= x1 + 1e-9; x += xstep)
    s += "<text x=\"" + detail::num(px(x)) + "\" y=\"" + detail::num(T + ph + 16) + "\" text-anchor=\"middle\">" +
         detail::num(x) + "</text>\n";
  s += "<rect x=\"" + detail::num(L) + "\" y=\"" + detail::num(T) + "\" width=\"" + detail::num(pw) +
       "\" height=\"" + detail::num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + detail::num(L + pw / 2) + "\" y=\"" + detail::num(opt.height - 10.0) +
       "\" text-anchor=\"middle\">" + detail::xml_escape(opt.x_label) + "</text>\n";
  s += "<text transform=\"translate(16," + detail::num(T + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       detail::xml_escape(opt.y_label) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colors[i % 10];
    std::string pts;
    for (std::size_t k = 0; k < series[i].x.size(); ++k)
      pts += (k ? " " : "") + detail::num(px(series[i].x[k])) + "," + detail::num(py(series[i].y[k]));
    s += "<polyline class=\"series\" fill=\"none\" stroke=\"" + std::string(c) + "\" stroke-width=\"1.5\" points=\"" +
         pts + "\"/>\n";
    const double ly = T + 14 + 18.0 * double(i);
    s += "<line x1=\"" + detail::num(L + pw + 12) + "\" x2=\"" + detail::num(L + pw + 32) + "\" y1=\"" +
         detail::num(ly) + "\" y2=\"" + detail::num(ly) + "\" stroke=\"" + c + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + detail::num(L + pw + 36) + "\" y=\"" + detail::num(ly + 4) + "\">" +
         detail::xml_escape(series[i].name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace pointfix
