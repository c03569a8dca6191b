#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace ctf::svg {

namespace {

struct Frame {
  double left = 64, right = 16, top = 36, bottom = 44;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string line_chart(const std::vector<Series>& series, const ChartOptions& options) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;

  const Frame f;
  const double w = options.width, h = options.height;
  const double pw = w - f.left - f.right, ph = h - f.top - f.bottom;
  auto px = [&](double x) { return f.left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return f.top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\""
     << options.height << "\" viewBox=\"0 0 " << options.width << ' ' << options.height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(options.title) << "</text>\n";
  os << "<rect x=\"" << num(f.left) << "\" y=\"" << num(f.top) << "\" width=\"" << num(pw)
     << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    os << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(f.top + ph) << "\" x2=\""
       << num(px(xv)) << "\" y2=\"" << num(f.top + ph + 4) << "\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(f.top + ph + 16)
       << "\" text-anchor=\"middle\">" << tick_label(xv) << "</text>\n";
    os << "<line x1=\"" << num(f.left - 4) << "\" y1=\"" << num(py(yv)) << "\" x2=\""
       << num(f.left) << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << num(f.left - 6) << "\" y=\"" << num(py(yv) + 4)
       << "\" text-anchor=\"end\">" << tick_label(yv) << "</text>\n";
  }
  os << "<text x=\"" << num(f.left + pw / 2) << "\" y=\"" << num(h - 6)
     << "\" text-anchor=\"middle\">" << escape(options.x_label) << "</text>\n";
  os << "<text x=\"14\" y=\"" << num(f.top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << num(f.top + ph / 2) << ")\">" << escape(options.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!first) os << ' ';
      os << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = f.top + 12 + 14.0 * static_cast<double>(k);
    os << "<line x1=\"" << num(f.left + pw - 120) << "\" y1=\"" << num(ly) << "\" x2=\""
       << num(f.left + pw - 100) << "\" y2=\"" << num(ly) << "\" stroke=\"" << s.color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(f.left + pw - 96) << "\" y=\"" << num(ly + 4) << "\">"
       << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace ctf::svg
