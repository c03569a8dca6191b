#pragma once

#include <string>
#include <vector>

namespace ctf::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 720;
  int height = 360;
};

// Minimal standalone line chart with axes, ticks and a legend.
std::string line_chart(const std::vector<Series>& series, const ChartOptions& options);

std::string escape(const std::string& text);

}  // namespace ctf::svg
