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

#ifndef RECONGUARD_PLOTS_H_
#define RECONGUARD_PLOTS_H_

#include <string>
#include <vector>

namespace reconguard::plots {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  // Lower bounds used on log axes; values below are drawn at the bound.
  double x_floor = 1e-4;
  double y_floor = 1e-4;
};

// Polylines, one per series.
void line_svg(const std::string& path, const Axes& axes, const std::vector<Series>& series);
// Unconnected points.
void scatter_svg(const std::string& path, const Axes& axes, const std::vector<Series>& series);
// Step outlines of normalised histograms over shared equal-width bins.
void histogram_svg(const std::string& path, const Axes& axes, const std::vector<Series>& samples,
                   int num_bins);
// values[r][c] drawn as a colour grid with the numbers printed in each cell.
void heatmap_svg(const std::string& path, const std::string& title,
                 const std::vector<std::string>& row_labels,
                 const std::vector<std::string>& col_labels,
                 const std::vector<std::vector<double>>& values);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string fmt(double v);

}  // namespace reconguard::plots

#endif  // RECONGUARD_PLOTS_H_
