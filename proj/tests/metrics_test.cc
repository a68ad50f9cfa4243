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


#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "json.hpp"
#include "reconguard/errors.h"
#include "reconguard/metrics.h"

namespace reconguard {
namespace {

AttackScores make(const std::vector<double>& members, const std::vector<double>& nonmembers) {
  AttackScores s;
  std::size_t id = 0;
  for (double v : members) s.push(id++, v, true);
  for (double v : nonmembers) s.push(id++, v, false);
  return s;
}

AttackScores random_scores(std::uint64_t seed, int n, double shift, double round_to = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  AttackScores s;
  for (int i = 0; i < n; ++i) {
    const bool m = i % 2 == 0;
    double v = g(rng) + (m ? shift : 0.0);
    if (round_to > 0) v = std::round(v / round_to) * round_to;
    s.push(static_cast<std::size_t>(i), v, m);
  }
  return s;
}

double pairwise_auc(const AttackScores& s) {
  double w = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!s.is_member[i] || s.is_member[j]) continue;
      n += 1;
      w += s.scores[i] > s.scores[j] ? 1.0 : (s.scores[i] == s.scores[j] ? 0.5 : 0.0);
    }
  }
  return w / n;
}

double trapezoid_auc(const AttackScores& s) {
  const std::vector<RocPoint> roc = roc_curve(s);
  double a = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    a += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  }
  return a;
}

// Exhaustive sweep of every midpoint and both extremes.
double sweep_accuracy(const AttackScores& s) {
  std::vector<double> v = s.scores;
  std::sort(v.begin(), v.end());
  std::vector<double> th = {v.front() - 1, v.back() + 1};
  for (std::size_t i = 1; i < v.size(); ++i) th.push_back((v[i - 1] + v[i]) / 2);
  double best = 0;
  for (double t : th) {
    double tp = 0, tn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.is_member[i] && s.scores[i] > t) tp += 1;
      if (!s.is_member[i] && s.scores[i] <= t) tn += 1;
    }
    best = std::max(best, (tp / s.n_members() + tn / s.n_nonmembers()) / 2);
  }
  return best;
}

TEST(RocAuc, Extremes) {
  EXPECT_DOUBLE_EQ(roc_auc(make({2, 3, 4}, {0, 1})), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(make({0, 1}, {2, 3, 4})), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(make({1, 1, 1}, {1, 1})), 0.5);
}

TEST(RocAuc, OneClassIsAnError) {
  EXPECT_THROW(roc_auc(make({1, 2}, {})), MetricError);
  EXPECT_THROW(roc_auc(make({}, {1, 2})), MetricError);
  EXPECT_THROW(best_threshold_accuracy(make({1}, {})), MetricError);
  EXPECT_THROW(tpr_at_fpr(make({1}, {})), MetricError);
}

TEST(RocAuc, MatchesPairwiseAndTrapezoidOracles) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const AttackScores s = random_scores(seed, 200, 0.5, seed % 2 ? 0.25 : 0.0);
    const double a = roc_auc(s);
    EXPECT_NEAR(a, pairwise_auc(s), 1e-9);
    EXPECT_NEAR(a, trapezoid_auc(s), 1e-9);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransforms) {
  const AttackScores s = random_scores(3, 150, 0.7, 0.5);
  AttackScores e = s, f = s, neg = s;
  for (double& v : e.scores) v = std::exp(v);
  for (double& v : f.scores) v = 3 * v - 7;
  for (double& v : neg.scores) v = -v;
  EXPECT_NEAR(roc_auc(e), roc_auc(s), 1e-12);
  EXPECT_NEAR(roc_auc(f), roc_auc(s), 1e-12);
  EXPECT_NEAR(roc_auc(s) + roc_auc(neg), 1.0, 1e-12);
}

TEST(RocCurve, EndpointsAndMonotone) {
  const std::vector<RocPoint> r = roc_curve(random_scores(4, 50, 0.3, 0.5));
  EXPECT_EQ(r.front().fpr, 0.0);
  EXPECT_EQ(r.front().tpr, 0.0);
  EXPECT_EQ(r.back().fpr, 1.0);
  EXPECT_EQ(r.back().tpr, 1.0);
  for (std::size_t i = 1; i < r.size(); ++i) {
    EXPECT_GE(r[i].fpr, r[i - 1].fpr);
    EXPECT_GE(r[i].tpr, r[i - 1].tpr);
  }
}

TEST(BestThresholdAccuracy, Extremes) {
  EXPECT_DOUBLE_EQ(best_threshold_accuracy(make({5, 6}, {1, 2})), 1.0);
  EXPECT_DOUBLE_EQ(best_threshold_accuracy(make({1, 1}, {1, 1})), 0.5);
}

TEST(BestThresholdAccuracy, MatchesExhaustiveSweep) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const AttackScores s = random_scores(seed, 4 + static_cast<int>(seed % 17), 0.4, seed % 3 ? 0.5 : 0.0);
    if (s.n_members() == 0 || s.n_nonmembers() == 0) continue;
    EXPECT_DOUBLE_EQ(best_threshold_accuracy(s), sweep_accuracy(s));
  }
}

TEST(BestThresholdAccuracy, IndistinguishableNearHalf) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u;
  AttackScores s;
  for (int i = 0; i < 4000; ++i) s.push(static_cast<std::size_t>(i), u(rng), i % 2 == 0);
  EXPECT_LT(best_threshold_accuracy(s), 0.54);
}

TEST(LowRate, HandBuiltTenPoints) {
  const AttackScores s = make({10, 9, 8, 7, 6}, {9.5, 5, 4, 3, 2});
  EXPECT_DOUBLE_EQ(tpr_at_fpr(s, 0.0).value, 0.2);
  EXPECT_DOUBLE_EQ(tpr_at_fpr(s, 0.1).value, 0.2);
  EXPECT_DOUBLE_EQ(tpr_at_fpr(s, 0.2).value, 1.0);
  EXPECT_DOUBLE_EQ(tnr_at_fnr(s, 0.2).value, 0.8);
  EXPECT_DOUBLE_EQ(tnr_at_fnr(s, 0.0).value, 0.8);
  EXPECT_TRUE(tpr_at_fpr(s, 0.001).low_resolution);
}

TEST(LowRate, SeparatedAndRandom) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  AttackScores sep, rnd;
  for (int i = 0; i < 2000; ++i) {
    sep.push(static_cast<std::size_t>(i), i < 1000 ? 2 + u(rng) : u(rng), i < 1000);
    rnd.push(static_cast<std::size_t>(i), u(rng), i < 1000);
  }
  EXPECT_EQ(tpr_at_fpr(sep).value, 1.0);
  EXPECT_EQ(tnr_at_fnr(sep).value, 1.0);
  EXPECT_FALSE(tpr_at_fpr(sep).low_resolution);
  EXPECT_LE(tpr_at_fpr(rnd).value, 0.03);
}

TEST(LowRate, MonotoneInTarget) {
  const AttackScores s = random_scores(5, 400, 0.8);
  double prev = 0;
  for (double t : {0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 1.0}) {
    const double v = tpr_at_fpr(s, t).value;
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_EQ(prev, 1.0);
  EXPECT_THROW(tpr_at_fpr(s, 1.5), ArgumentError);
}

TEST(Histogram, Basics) {
  const std::vector<double> one = {3.0};
  const Histogram h1 = histogram(one, 1);
  ASSERT_EQ(h1.mass.size(), 1u);
  EXPECT_DOUBLE_EQ(h1.mass[0], 1.0);

  std::vector<double> grid;
  for (int i = 0; i < 1000; ++i) grid.push_back((i + 0.5) / 1000);
  const Histogram h = histogram(grid, 10);
  for (double m : h.mass) EXPECT_NEAR(m, 0.1, 1e-3);

  const std::vector<double> out = {-5, 0.5, 9};
  const Histogram c = histogram(out, 4, std::pair{0.0, 1.0});
  EXPECT_DOUBLE_EQ(c.mass.front(), 1.0 / 3);
  EXPECT_DOUBLE_EQ(c.mass.back(), 1.0 / 3);
  EXPECT_EQ(c.bin_edges.size(), 5u);

  EXPECT_THROW(histogram(std::vector<double>{}, 3), ArgumentError);
  EXPECT_THROW(histogram(one, 0), ArgumentError);
}

TEST(Histogram, MassSumsToOne) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> v(1 + rng() % 300);
    for (double& x : v) x = g(rng);
    const Histogram h = histogram(v, 1 + static_cast<int>(rng() % 40));
    double s = 0;
    for (double m : h.mass) s += m;
    EXPECT_NEAR(s, 1.0, 1e-9);
    for (std::size_t i = 1; i < h.bin_edges.size(); ++i) EXPECT_GT(h.bin_edges[i], h.bin_edges[i - 1]);
  }
}

TEST(JsDivergence, Properties) {
  const std::vector<double> a = {0.0, 0.1, 0.2}, b = {0.9, 1.0};
  const Histogram ha = histogram(a, 2, std::pair{0.0, 1.0}), hb = histogram(b, 2, std::pair{0.0, 1.0});
  EXPECT_NEAR(js_divergence(ha, ha), 0.0, 1e-12);
  EXPECT_NEAR(js_divergence(ha, hb), 1.0, 1e-8);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(50), y(60);
    for (double& v : x) v = u(rng);
    for (double& v : y) v = u(rng) * u(rng);
    const Histogram hx = histogram(x, 30, std::pair{0.0, 1.0}), hy = histogram(y, 30, std::pair{0.0, 1.0});
    const double js = js_divergence(hx, hy);
    EXPECT_NEAR(js, js_divergence(hy, hx), 1e-12);
    EXPECT_GE(js, 0.0);
    EXPECT_LE(js, 1.0);
  }
  EXPECT_THROW(js_divergence(ha, histogram(a, 3, std::pair{0.0, 1.0})), ArgumentError);
  EXPECT_THROW(js_divergence(ha, histogram(a, 2, std::pair{0.0, 2.0})), ArgumentError);
}

TEST(JsDivergence, MatchesDirectFormula) {
  const std::vector<double> x = {0.1, 0.15, 0.5, 0.55, 0.9}, y = {0.2, 0.6, 0.65, 0.7};
  const Histogram hx = histogram(x, 3, std::pair{0.0, 1.0}), hy = histogram(y, 3, std::pair{0.0, 1.0});
  // Masses: x = (2, 2, 1) / 5, y = (1, 2, 1) / 4.
  const double p[] = {0.4, 0.4, 0.2}, q[] = {0.25, 0.5, 0.25};
  double sp = 0, sq = 0, ps[3], qs[3];
  for (int i = 0; i < 3; ++i) sp += ps[i] = p[i] + 1e-10, sq += qs[i] = q[i] + 1e-10;
  double js = 0;
  for (int i = 0; i < 3; ++i) {
    const double a = ps[i] / sp, b = qs[i] / sq, m = (a + b) / 2;
    js += 0.5 * a * std::log2(a / m) + 0.5 * b * std::log2(b / m);
  }
  EXPECT_NEAR(js_divergence(hx, hy), js, 1e-12);
}

TEST(JsBetween, SharedPooledRange) {
  const std::vector<double> a = {0, 1, 2}, b = {10, 11};
  EXPECT_NEAR(js_between(a, b), 1.0, 1e-7);
  EXPECT_NEAR(js_between(a, a), 0.0, 1e-12);
}

TEST(Spearman, Values) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> up = {2, 4, 6, 8, 100}, down = {5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-12);
  // Ties take average ranks: y ranks (1.5, 1.5, 3, 4, 5).
  const std::vector<double> tied = {1, 1, 2, 3, 4};
  const double rx[] = {1, 2, 3, 4, 5}, ry[] = {1.5, 1.5, 3, 4, 5};
  double mx = 3, my = 3, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(spearman(x, tied), sxy / std::sqrt(sxx * syy), 1e-12);
}

TEST(MetricBundle, JsonSchema) {
  const MetricBundle b = compute_metrics([] {
    AttackScores s = make({3, 4, 5}, {1, 2, 3.5});
    s.attack_id = "loss";
    s.target_id = "defended";
    return s;
  }());
  const nlohmann::json j = b;
  for (const char* k : {"attack_id", "target_id", "auc", "attack_accuracy", "tpr_at_fpr001", "tnr_at_fnr001",
                        "n_members", "n_nonmembers"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["attack_id"], "loss");
  EXPECT_EQ(j["n_members"], 3);
  const MetricBundle back = j.get<MetricBundle>();
  EXPECT_EQ(back.auc, b.auc);
  EXPECT_EQ(back.target_id, "defended");
}

TEST(AttackScores, Validation) {
  AttackScores s = make({1}, {0});
  s.scores.push_back(1.0);
  EXPECT_THROW(s.validate(), ArgumentError);
  AttackScores t = make({std::nan("")}, {0});
  EXPECT_THROW(t.validate(), ArgumentError);
}

}  // namespace
}  // namespace reconguard
