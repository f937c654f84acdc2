#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace kantize {

/// One marker of a scatter plot. Marker size/color channels follow the sweep
/// encoding: color tracks the weight width, radius the activation width, and
/// ring color the basis-value width.
struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  int color_key = 0;
  int size_key = 0;
  int ring_key = 0;
};

namespace detail {

inline std::string color_for(int key) {
  static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                  "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
  return palette[std::abs(key) % 8];
}

}  // namespace detail

/// Writes a standalone SVG scatter plot with a log10 x axis.
inline void write_svg_scatter(const std::string& path, const std::vector<PlotPoint>& points,
                              const std::string& title, const std::string& x_label,
                              const std::string& y_label) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_svg_scatter: cannot open " + path);

  const int width = 640, height = 440;
  const int ml = 70, mr = 20, mt = 40, mb = 50;

  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const auto& p : points) {
    const double lx = std::log10(std::max(p.x, 1.0));
    x_lo = std::min(x_lo, lx);
    x_hi = std::max(x_hi, lx);
    y_lo = std::min(y_lo, p.y);
    y_hi = std::max(y_hi, p.y);
  }
  if (points.empty()) {
    x_lo = 0;
    x_hi = 1;
    y_lo = 0;
    y_hi = 1;
  }
  if (x_hi - x_lo < 1e-9) x_hi = x_lo + 1.0;
  if (y_hi - y_lo < 1e-9) y_hi = y_lo + 0.1;
  y_lo = std::max(0.0, y_lo - 0.02);
  y_hi = std::min(1.0, y_hi + 0.02);

  auto sx = [&](double x) {
    const double lx = std::log10(std::max(x, 1.0));
    return ml + (lx - x_lo) / (x_hi - x_lo) * (width - ml - mr);
  };
  auto sy = [&](double y) { return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n";

  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << " (log scale)</text>\n";
  out << "<text x=\"18\" y=\"" << (mt + height - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
      << (mt + height - mb) / 2 << ")\">" << y_label << "</text>\n";

  // decade ticks on x, fifths on y
  for (int d = static_cast<int>(std::ceil(x_lo)); d <= static_cast<int>(std::floor(x_hi));
       ++d) {
    const double px = ml + (d - x_lo) / (x_hi - x_lo) * (width - ml - mr);
    out << "<line x1=\"" << px << "\" y1=\"" << height - mb << "\" x2=\"" << px << "\" y2=\""
        << height - mb + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << px << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"10\">1e" << d << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double y = y_lo + (y_hi - y_lo) * i / 5.0;
    const double py = sy(y);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", y);
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py << "\" x2=\"" << ml << "\" y2=\"" << py
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << buf << "</text>\n";
  }

  for (const auto& p : points) {
    const double r = 2.0 + std::min(p.size_key, 10) * 0.6;
    out << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"" << r
        << "\" fill=\"" << detail::color_for(p.color_key) << "\" fill-opacity=\"0.75\""
        << " stroke=\"" << detail::color_for(p.ring_key + 3) << "\" stroke-width=\"1\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace kantize
