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

#include "reconguard/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "reconguard/errors.h"

namespace reconguard {

std::size_t AttackScores::n_members() const {
  return static_cast<std::size_t>(std::count(is_member.begin(), is_member.end(), 1));
}

void AttackScores::validate() const {
  if (scores.size() != is_member.size() ||
      (!sample_ids.empty() && sample_ids.size() != scores.size())) {
    throw ArgumentError("attack scores, ids and membership bits differ in length");
  }
  for (double v : scores) {
    if (!std::isfinite(v)) throw ArgumentError("attack score is not finite");
  }
}

void AttackScores::push(std::size_t id, double score, bool member) {
  sample_ids.push_back(id);
  scores.push_back(score);
  is_member.push_back(member ? 1 : 0);
}

namespace {

void require_two_classes(const AttackScores& s) {
  s.validate();
  if (s.n_members() == 0 || s.n_nonmembers() == 0) {
    throw MetricError("metric needs both members and non-members (" + s.attack_id + ")");
  }
}

// Average 1-based ranks, ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) ranks[idx[q]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double roc_auc(const AttackScores& s) {
  require_two_classes(s);
  const std::vector<double> ranks = average_ranks(s.scores);
  double member_rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (s.is_member[i]) member_rank_sum += ranks[i];
  }
  const double nm = static_cast<double>(s.n_members());
  const double nn = static_cast<double>(s.n_nonmembers());
  return (member_rank_sum - nm * (nm + 1.0) / 2.0) / (nm * nn);
}

std::vector<RocPoint> roc_curve(const AttackScores& s) {
  require_two_classes(s);
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  const double nm = static_cast<double>(s.n_members());
  const double nn = static_cast<double>(s.n_nonmembers());
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double v = s.scores[idx[i]];
    for (; i < idx.size() && s.scores[idx[i]] == v; ++i) {
      if (s.is_member[idx[i]]) {
        ++tp;
      } else {
        ++fp;
      }
    }
    curve.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / nm});
  }
  return curve;
}

double best_threshold_accuracy(const AttackScores& s) {
  double best = 0.0;
  for (const RocPoint& p : roc_curve(s)) best = std::max(best, 0.5 * (p.tpr + 1.0 - p.fpr));
  return best;
}

namespace {

constexpr double kRateSlack = 1e-12;

bool low_resolution(std::size_t n, double target) {
  return static_cast<double>(n) * target < 1.0 - 1e-9;
}

}  // namespace

LowRateValue tpr_at_fpr(const AttackScores& s, double fpr_target) {
  if (!(fpr_target >= 0.0 && fpr_target <= 1.0)) throw ArgumentError("fpr target outside [0, 1]");
  LowRateValue out;
  for (const RocPoint& p : roc_curve(s)) {
    if (p.fpr <= fpr_target + kRateSlack) out.value = std::max(out.value, p.tpr);
  }
  out.low_resolution = low_resolution(s.n_nonmembers(), fpr_target);
  return out;
}

LowRateValue tnr_at_fnr(const AttackScores& s, double fnr_target) {
  if (!(fnr_target >= 0.0 && fnr_target <= 1.0)) throw ArgumentError("fnr target outside [0, 1]");
  LowRateValue out;
  for (const RocPoint& p : roc_curve(s)) {
    if (1.0 - p.tpr <= fnr_target + kRateSlack) out.value = std::max(out.value, 1.0 - p.fpr);
  }
  out.low_resolution = low_resolution(s.n_members(), fnr_target);
  return out;
}

Histogram histogram(std::span<const double> values, int num_bins,
                    std::optional<std::pair<double, double>> range) {
  if (values.empty()) throw ArgumentError("histogram of no values");
  if (num_bins < 1) throw ArgumentError("histogram needs num_bins >= 1");
  for (double v : values) {
    if (!std::isfinite(v)) throw ArgumentError("histogram value is not finite");
  }
  double lo, hi;
  if (range) {
    std::tie(lo, hi) = *range;
    if (!(lo <= hi)) throw ArgumentError("histogram range must satisfy lo <= hi");
  } else {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  const double width = (hi - lo) / num_bins;
  for (int b = 0; b <= num_bins; ++b) h.bin_edges.push_back(b == num_bins ? hi : lo + b * width);
  h.mass.assign(static_cast<std::size_t>(num_bins), 0.0);
  const double unit = 1.0 / static_cast<double>(values.size());
  for (double v : values) {
    const int b = std::clamp(static_cast<int>(std::floor((v - lo) / width)), 0, num_bins - 1);
    h.mass[static_cast<std::size_t>(b)] += unit;
  }
  return h;
}

double js_divergence(const Histogram& p, const Histogram& q) {
  if (p.bin_edges != q.bin_edges || p.mass.size() != q.mass.size()) {
    throw ArgumentError("js_divergence needs histograms on identical bins");
  }
  const std::size_t B = p.mass.size();
  auto smooth = [B](const std::vector<double>& m) {
    std::vector<double> out(m.size());
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) total += out[i] = m[i] + kJsSmoothing;
    for (double& v : out) v /= total;
    return out;
  };
  const std::vector<double> ps = smooth(p.mass), qs = smooth(q.mass);
  double js = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double m = 0.5 * (ps[i] + qs[i]);
    js += 0.5 * ps[i] * std::log2(ps[i] / m) + 0.5 * qs[i] * std::log2(qs[i] / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

double js_between(std::span<const double> a, std::span<const double> b, int num_bins) {
  if (a.empty() || b.empty()) throw ArgumentError("js_between needs two non-empty samples");
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const std::pair<double, double> range{std::min(*amin, *bmin), std::max(*amax, *bmax)};
  return js_divergence(histogram(a, num_bins, range), histogram(b, num_bins, range));
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("spearman needs two equal-length samples of size >= 2");
  }
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

MetricBundle compute_metrics(const AttackScores& s) {
  MetricBundle b;
  b.attack_id = s.attack_id;
  b.target_id = s.target_id;
  b.auc = roc_auc(s);
  b.attack_accuracy = best_threshold_accuracy(s);
  const LowRateValue tpr = tpr_at_fpr(s, 0.001);
  const LowRateValue tnr = tnr_at_fnr(s, 0.001);
  b.tpr_at_fpr001 = tpr.value;
  b.tnr_at_fnr001 = tnr.value;
  b.low_resolution = tpr.low_resolution || tnr.low_resolution;
  b.n_members = s.n_members();
  b.n_nonmembers = s.n_nonmembers();
  return b;
}

void to_json(nlohmann::json& j, const MetricBundle& b) {
  j = {{"attack_id", b.attack_id},
       {"target_id", b.target_id},
       {"auc", b.auc},
       {"attack_accuracy", b.attack_accuracy},
       {"tpr_at_fpr001", b.tpr_at_fpr001},
       {"tnr_at_fnr001", b.tnr_at_fnr001},
       {"n_members", b.n_members},
       {"n_nonmembers", b.n_nonmembers},
       {"low_resolution", b.low_resolution}};
}

void from_json(const nlohmann::json& j, MetricBundle& b) {
  j.at("attack_id").get_to(b.attack_id);
  j.at("target_id").get_to(b.target_id);
  j.at("auc").get_to(b.auc);
  j.at("attack_accuracy").get_to(b.attack_accuracy);
  j.at("tpr_at_fpr001").get_to(b.tpr_at_fpr001);
  j.at("tnr_at_fnr001").get_to(b.tnr_at_fnr001);
  j.at("n_members").get_to(b.n_members);
  j.at("n_nonmembers").get_to(b.n_nonmembers);
  b.low_resolution = j.value("low_resolution", false);
}

}  // namespace reconguard
