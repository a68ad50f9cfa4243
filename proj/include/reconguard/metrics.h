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

#ifndef RECONGUARD_METRICS_H_
#define RECONGUARD_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace reconguard {

// Attack output: higher score means "more likely a member".
struct AttackScores {
  std::vector<std::size_t> sample_ids;
  std::vector<double> scores;
  std::vector<std::uint8_t> is_member;
  std::string attack_id;
  std::string target_id;

  std::size_t size() const { return scores.size(); }
  std::size_t n_members() const;
  std::size_t n_nonmembers() const { return size() - n_members(); }
  // Throws ArgumentError on length mismatch or non-finite scores.
  void validate() const;
  void push(std::size_t id, double score, bool member);
};

// Mann-Whitney statistic: P(random member outscores random non-member), ties
// counted as one half.
double roc_auc(const AttackScores& s);

struct RocPoint {
  double fpr;
  double tpr;
};
// One point per distinct threshold, from (0, 0) to (1, 1).
std::vector<RocPoint> roc_curve(const AttackScores& s);

// Best (TPR + TNR) / 2 over all thresholds.
double best_threshold_accuracy(const AttackScores& s);

struct LowRateValue {
  double value = 0;
  // Fewer samples on the constrained side than 1 / target.
  bool low_resolution = false;
};
// Largest TPR whose FPR does not exceed the target; no interpolation.
LowRateValue tpr_at_fpr(const AttackScores& s, double fpr_target = 0.001);
// Largest TNR whose FNR does not exceed the target.
LowRateValue tnr_at_fnr(const AttackScores& s, double fnr_target = 0.001);

struct Histogram {
  std::vector<double> bin_edges;  // B + 1, strictly increasing
  std::vector<double> mass;       // B, sums to 1
};

// Equal-width bins over `range` (or the observed min/max). Values outside the
// range land in the end bins. A zero-width range is widened by 0.5 each way.
Histogram histogram(std::span<const double> values, int num_bins,
                    std::optional<std::pair<double, double>> range = std::nullopt);

inline constexpr double kJsSmoothing = 1e-10;
inline constexpr int kJsBins = 30;

// Base-2 Jensen-Shannon divergence, in [0, 1]. Edges must match.
double js_divergence(const Histogram& p, const Histogram& q);

// JS between two samples on shared bins spanning their pooled min/max.
double js_between(std::span<const double> a, std::span<const double> b, int num_bins = kJsBins);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct MetricBundle {
  std::string attack_id;
  std::string target_id;
  double auc = 0;
  double attack_accuracy = 0;
  double tpr_at_fpr001 = 0;
  double tnr_at_fnr001 = 0;
  std::size_t n_members = 0;
  std::size_t n_nonmembers = 0;
  bool low_resolution = false;
};

MetricBundle compute_metrics(const AttackScores& s);

void to_json(nlohmann::json& j, const MetricBundle& b);
void from_json(const nlohmann::json& j, MetricBundle& b);

}  // namespace reconguard

#endif  // RECONGUARD_METRICS_H_
