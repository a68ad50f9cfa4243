// Copyright 2026 The ReconGuard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "reconguard/plots.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "reconguard/errors.h"

namespace reconguard::plots {
namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  bool log_x, log_y;

  double sx(double v) const {
    const double a = log_x ? std::log10(v) : v;
    return kLeft + (a - x0) / (x1 - x0) * (kWidth - kLeft - kRight);
  }
  double sy(double v) const {
    const double a = log_y ? std::log10(v) : v;
    return kHeight - kBottom - (a - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

Frame make_frame(const Axes& axes, const std::vector<Series>& series) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const Series& s : series) {
    for (double v : s.x) {
      v = axes.log_x ? std::max(v, axes.x_floor) : v;
      xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      v = axes.log_y ? std::max(v, axes.y_floor) : v;
      ymin = std::min(ymin, v), ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(xmin) || !std::isfinite(ymin)) throw ArgumentError("plot has no data");
  auto axis = [](double lo, double hi, bool log) {
    if (log) lo = std::log10(lo), hi = std::log10(hi);
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    return std::pair{lo, hi};
  };
  const auto [x0, x1] = axis(xmin, xmax, axes.log_x);
  const auto [y0, y1] = axis(ymin, ymax, axes.log_y);
  return {x0, x1, y0, y1, axes.log_x, axes.log_y};
}

void open_svg(std::ostream& out, const Axes& axes, const Frame& f) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(axes.title) << "</text>\n";
  const double l = kLeft, r = kWidth - kRight, t = kTop, b = kHeight - kBottom;
  out << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << r - l << "\" height=\"" << b - t
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double ax = f.x0 + (f.x1 - f.x0) * i / 4, ay = f.y0 + (f.y1 - f.y0) * i / 4;
    const double px = l + (r - l) * i / 4, py = b - (b - t) * i / 4;
    out << "<text x=\"" << px << "\" y=\"" << b + 16 << "\" text-anchor=\"middle\">"
        << fmt(f.log_x ? std::pow(10.0, ax) : ax) << "</text>\n";
    out << "<text x=\"" << l - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
        << fmt(f.log_y ? std::pow(10.0, ay) : ay) << "</text>\n";
  }
  out << "<text x=\"" << (l + r) / 2 << "\" y=\"" << kHeight - 18 << "\" text-anchor=\"middle\">"
      << escape(axes.x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << (t + b) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (t + b) / 2 << ")\">" << escape(axes.y_label) << "</text>\n";
}

void legend(std::ostream& out, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 14 + 18 * static_cast<double>(i);
    out << "<rect x=\"" << kWidth - kRight + 10 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"4\" fill=\""
        << kPalette[i % 8] << "\"/>\n<text x=\"" << kWidth - kRight + 28 << "\" y=\"" << y << "\">"
        << escape(series[i].name) << "</text>\n";
  }
}

std::ofstream open_file(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

void line_svg(const std::string& path, const Axes& axes, const std::vector<Series>& series) {
  const Frame f = make_frame(axes, series);
  std::ofstream out = open_file(path);
  open_svg(out, axes, f);
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << "<polyline fill=\"none\" stroke=\"" << kPalette[i % 8] << "\" stroke-width=\"1.5\" points=\"";
    const Series& s = series[i];
    for (std::size_t p = 0; p < s.x.size(); ++p) {
      const double x = axes.log_x ? std::max(s.x[p], axes.x_floor) : s.x[p];
      const double y = axes.log_y ? std::max(s.y[p], axes.y_floor) : s.y[p];
      out << f.sx(x) << ',' << f.sy(y) << ' ';
    }
    out << "\"/>\n";
  }
  legend(out, series);
  out << "</svg>\n";
}

void scatter_svg(const std::string& path, const Axes& axes, const std::vector<Series>& series) {
  const Frame f = make_frame(axes, series);
  std::ofstream out = open_file(path);
  open_svg(out, axes, f);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    for (std::size_t p = 0; p < s.x.size(); ++p) {
      out << "<circle cx=\"" << f.sx(s.x[p]) << "\" cy=\"" << f.sy(s.y[p]) << "\" r=\"3.5\" fill=\""
          << kPalette[i % 8] << "\"/>\n";
    }
  }
  legend(out, series);
  out << "</svg>\n";
}

void histogram_svg(const std::string& path, const Axes& axes, const std::vector<Series>& samples,
                   int num_bins) {
  if (num_bins < 1) throw ArgumentError("histogram plot needs num_bins >= 1");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Series& s : samples) {
    for (double v : s.x) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) throw ArgumentError("histogram plot has no data");
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double w = (hi - lo) / num_bins;
  std::vector<Series> steps;
  for (const Series& s : samples) {
    std::vector<double> mass(static_cast<std::size_t>(num_bins), 0.0);
    for (double v : s.x) {
      const int b = std::clamp(static_cast<int>((v - lo) / w), 0, num_bins - 1);
      mass[static_cast<std::size_t>(b)] += 1.0 / static_cast<double>(s.x.size());
    }
    Series step{s.name, {}, {}};
    for (int b = 0; b < num_bins; ++b) {
      step.x.push_back(lo + b * w);
      step.y.push_back(mass[static_cast<std::size_t>(b)]);
      step.x.push_back(lo + (b + 1) * w);
      step.y.push_back(mass[static_cast<std::size_t>(b)]);
    }
    steps.push_back(std::move(step));
  }
  line_svg(path, axes, steps);
}

void heatmap_svg(const std::string& path, const std::string& title,
                 const std::vector<std::string>& row_labels,
                 const std::vector<std::string>& col_labels,
                 const std::vector<std::vector<double>>& values) {
  if (values.empty() || values.size() != row_labels.size()) throw ArgumentError("heatmap shape");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : values) {
    if (row.size() != col_labels.size()) throw ArgumentError("heatmap shape");
    for (double v : row) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  const double cell = 70, l = 90, t = 50;
  std::ofstream out = open_file(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << l + cell * col_labels.size() + 20
      << "\" height=\"" << t + cell * row_labels.size() + 40
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"10\" y=\"22\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (std::size_t r = 0; r < values.size(); ++r) {
    out << "<text x=\"" << l - 8 << "\" y=\"" << t + cell * (r + 0.5) << "\" text-anchor=\"end\">"
        << escape(row_labels[r]) << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double a = hi > lo ? (values[r][c] - lo) / (hi - lo) : 0.5;
      const int red = static_cast<int>(255 * a), blue = static_cast<int>(255 * (1 - a));
      out << "<rect x=\"" << l + cell * c << "\" y=\"" << t + cell * r << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << red << ",80," << blue << ")\"/>\n"
          << "<text x=\"" << l + cell * (c + 0.5) << "\" y=\"" << t + cell * (r + 0.5) + 4
          << "\" text-anchor=\"middle\" fill=\"white\">" << fmt(values[r][c]) << "</text>\n";
    }
  }
  for (std::size_t c = 0; c < col_labels.size(); ++c) {
    out << "<text x=\"" << l + cell * (c + 0.5) << "\" y=\"" << t + cell * row_labels.size() + 18
        << "\" text-anchor=\"middle\">" << escape(col_labels[c]) << "</text>\n";
  }
  out << "</svg>\n";
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out = open_file(path);
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ArgumentError("csv row width differs from header");
    line(r);
  }
}

}  // namespace reconguard::plots
