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


// Acceptance run: trains the desk-scale pipeline for three seeds and checks
// each acceptance criterion. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Artifacts are cached under the run directory, so a
// second run only re-does the cheap parts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "reconguard/attacks.h"
#include "reconguard/defense.h"
#include "reconguard/diffusion.h"
#include "reconguard/harness.h"
#include "reconguard/metrics.h"
#include "reconguard/random.h"

#ifndef RECONGUARD_ACCEPTANCE_DIR
#define RECONGUARD_ACCEPTANCE_DIR "acceptance_run"
#endif

namespace rg = reconguard;

namespace {

// Tolerances and thresholds, pinned.
constexpr double kMinUndefendedAuc = 0.60;
constexpr double kMinGap = 0.15;
constexpr double kMinExcessReduction = 0.05;
constexpr double kMaxJsRatio = 0.50;
constexpr double kMinSpearman = 0.3;
constexpr int kMinScanIntervals = 8;
constexpr double kGapTarget = 0.609;
constexpr double kGapTol = 0.0005;
constexpr double kAucOracleTol = 1e-9;
constexpr double kMentropyTol = 1e-10;
constexpr double kGaussTol = 1e-10;
constexpr double kAlphaBarTol = 1e-12;
constexpr double kMcSigmas = 3.0;
constexpr int kMcTrials = 10000;
constexpr double kInversionTol = 0.005;
constexpr double kMaxLateHitShare = 0.20;
constexpr double kTrivialCoverage = 0.95;
constexpr double kMaxRandomTpr = 0.01;
constexpr double kMaxCpuSeconds = 3600.0;

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

rg::ExperimentConfig desk_config() {
  rg::ExperimentConfig c;
  c.dataset = "synthetic:10:300:16:1";
  c.splits = {.member = 1000, .defender = 200, .attacker = 200, .eval = 1000};
  c.classifier.epochs = 40;
  c.diffusion.base_channels = 16;
  c.diffusion.train_t_max = 100;
  c.diffusion.epochs = 30;
  c.defense.scenario = rg::Scenario::kFitted;
  c.defense.N = 50;
  c.defense.T = 40;
  c.defense.k = 10;
  c.attacks = {"correctness", "loss", "confidence", "entropy", "mentropy"};
  c.targets = {"undefended", "defended"};
  c.output_dir = RECONGUARD_ACCEPTANCE_DIR;
  c.repeat_seeds = {0, 1, 2};
  c.keep_generating_iters = 20;
  c.keep_generating_T = 60;
  c.sweep_N = {10, 50};
  c.sweep_T = {10, 40};
  c.scan_intervals = 10;
  return c;
}

double best_auc_of(const rg::SeedReport& s, const std::string& target) {
  double best = 0.0;
  for (const rg::MetricBundle& b : s.bundles) {
    if (b.target_id == target) best = std::max(best, b.auc);
  }
  return best;
}

// ---- independent oracles -------------------------------------------------

double pairwise_auc(const rg::AttackScores& s) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s.is_member[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s.is_member[j]) continue;
      pairs += 1.0;
      if (s.scores[i] > s.scores[j]) wins += 1.0;
      if (s.scores[i] == s.scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

double trapezoid_auc(const rg::AttackScores& s) {
  std::vector<double> th = s.scores;
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  const double P = static_cast<double>(s.n_members()), Nn = static_cast<double>(s.n_nonmembers());
  double area = 0.0, px = 0.0, py = 0.0;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.scores[i] >= t) (s.is_member[i] ? tp : fp) += 1.0;
    }
    const double x = fp / Nn, y = tp / P;
    area += (x - px) * (y + py) / 2.0;
    px = x;
    py = y;
  }
  return area + (1.0 - px) * (1.0 + py) / 2.0;
}

struct OraclePool {
  std::vector<double> cands;
  double original;
};

std::vector<double> oracle_hist(const std::vector<OraclePool>& pools, double lo, double hi, double e0,
                                double e1, int bins) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  auto put = [&](double v, double w) {
    const double width = (e1 - e0) / bins;
    int b = static_cast<int>(std::floor((v - e0) / width));
    b = std::max(0, std::min(bins - 1, b));
    h[static_cast<std::size_t>(b)] += w;
  };
  const double w = 1.0 / static_cast<double>(pools.size());
  for (const OraclePool& p : pools) {
    if (p.cands.empty()) {
      put(p.original, w);
      continue;
    }
    std::vector<double> in;
    for (double v : p.cands) {
      if (v >= lo && v <= hi) in.push_back(v);
    }
    if (!in.empty()) {
      for (double v : in) put(v, w / static_cast<double>(in.size()));
      continue;
    }
    double best = p.cands[0], bd = 1e300;
    for (double v : p.cands) {
      const double d = v < lo ? lo - v : (v > hi ? v - hi : 0.0);
      if (d < bd) {
        bd = d;
        best = v;
      }
    }
    put(best, w);
  }
  return h;
}

double oracle_js(std::vector<double> p, std::vector<double> q) {
  double sp = 0, sq = 0;
  for (auto& v : p) sp += (v += 1e-10);
  for (auto& v : q) sq += (v += 1e-10);
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / sp, b = q[i] / sq, m = (a + b) / 2.0;
    js += 0.5 * a * std::log(a / m) / std::log(2.0) + 0.5 * b * std::log(b / m) / std::log(2.0);
  }
  return js;
}

// ---- criteria --------------------------------------------------------------

void criterion1(const rg::ExperimentConfig& cfg) {
  rg::Experiment e(cfg, 0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto c0 = std::clock();
  std::size_t mismatches = 0, total = 0, path_diffs = 0;
  std::ostringstream detail;
  for (rg::Scenario sc : {rg::Scenario::kFitted, rg::Scenario::kMemberRange, rg::Scenario::kRandom}) {
    rg::DefenseConfig d = cfg.defense;
    d.scenario = sc;
    d.seed = e.defense_seed();
    const auto rec = e.fit_interval(d);
    const std::optional<rg::SelectionInterval> iv =
        rec ? std::optional(rec->interval) : std::nullopt;
    std::size_t mm = 0;
    for (rg::ListId list : {rg::ListId::kEvalMember, rg::ListId::kEvalNonmember}) {
      const std::vector<rg::PredictionVector>& orig = e.originals(list);
      std::vector<rg::Selection> sel;
      if (sc == rg::Scenario::kFitted) {
        // Full deployment path, reconstructing from scratch.
        const rg::Defender defender(e.classifier(), e.diffusion(), d, iv);
        const std::vector<rg::Image> images = e.dataset().images(e.ids(list));
        sel = defender.defend_detailed(images);
        const std::vector<rg::Selection> cached = e.defended(list, d, iv);
        for (std::size_t i = 0; i < sel.size(); ++i) {
          if (!(sel[i].prediction == cached[i].prediction)) ++path_diffs;
        }
      } else {
        sel = e.defended(list, d, iv);
      }
      for (std::size_t i = 0; i < sel.size(); ++i) {
        mm += sel[i].prediction.predicted_label != orig[i].predicted_label;
      }
      total += sel.size();
    }
    mismatches += mm;
    detail << "scenario " << static_cast<int>(sc) << " mismatches " << mm << "; ";
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
  detail << "eval samples " << total / 3 << ", deployment/cache disagreements " << path_diffs << ", cpu "
         << fmt(cpu, 1) << " s (wall " << fmt(wall, 1) << " s, limit " << kMaxCpuSeconds << " s)";
  report(1, mismatches == 0 && path_diffs == 0 && total / 3 == 1000 && cpu < kMaxCpuSeconds,
         "exact utility preservation, all scenarios", detail.str());
}

void criteria2and3(const rg::Report& r) {
  std::vector<double> und, def, gap, js_u, js_d;
  for (const rg::SeedReport& s : r.seeds) {
    und.push_back(best_auc_of(s, "undefended"));
    def.push_back(best_auc_of(s, "defended"));
    gap.push_back(s.train_accuracy - s.test_accuracy);
    js_u.push_back(s.eval_js.at("undefended"));
    js_d.push_back(s.eval_js.at("defended"));
  }
  const double U = mean(und), D = mean(def), G = mean(gap);
  const double reduction = (U - D) / (U - 0.5);
  std::ostringstream d2;
  d2 << "seeds " << r.seeds.size() << ", train-test gap " << fmt(G) << " (>= " << kMinGap
     << "), best AUC undefended " << fmt(U) << " (>= " << kMinUndefendedAuc << "), defended " << fmt(D)
     << ", excess reduction " << fmt(100 * reduction, 1) << "% (>= " << 100 * kMinExcessReduction << "%)";
  report(2, r.seeds.size() == 3 && G >= kMinGap && U >= kMinUndefendedAuc && D < U &&
                reduction >= kMinExcessReduction,
         "privacy improvement at desk scale", d2.str());

  const double JU = mean(js_u), JD = mean(js_d);
  std::ostringstream d3;
  d3 << "mean JS undefended " << fmt(JU) << ", defended " << fmt(JD) << ", ratio " << fmt(JD / JU)
     << " (<= " << kMaxJsRatio << ")";
  report(3, JD <= kMaxJsRatio * JU, "JS reduction on eval logits", d3.str());
}

void criterion4(const rg::ExperimentConfig& cfg) {
  rg::Experiment e(cfg, 0);
  const std::vector<rg::ScanRow> rows = rg::interval_js_scan(e, rg::scan_candidates(e, cfg.scan_intervals));
  std::vector<double> js, auc;
  for (const rg::ScanRow& r : rows) {
    js.push_back(r.js);
    auc.push_back(r.best.auc);
  }
  const double rho = rows.size() >= 2 ? rg::spearman(js, auc) : 0.0;
  std::ostringstream d;
  d << rows.size() << " intervals, JS " << fmt(*std::min_element(js.begin(), js.end())) << ".."
    << fmt(*std::max_element(js.begin(), js.end())) << ", best AUC "
    << fmt(*std::min_element(auc.begin(), auc.end())) << ".." << fmt(*std::max_element(auc.begin(), auc.end()))
    << ", spearman " << fmt(rho) << " (> " << kMinSpearman << ")";
  report(4, static_cast<int>(rows.size()) >= kMinScanIntervals && rho > kMinSpearman,
         "JS-attack correlation over scanned intervals", d.str());
}

void criterion5() {
  const double v = rg::gap_attack_accuracy(0.9998, 0.7819);
  report(5, std::abs(v - kGapTarget) <= kGapTol, "gap-attack arithmetic",
         "gap_attack_accuracy(0.9998, 0.7819) = " + fmt(v, 6));
}

void criterion6() {
  std::mt19937_64 rng(606);
  std::ostringstream d;
  bool ok = true;

  // (a) AUC against two oracles, with ties.
  double worst_a = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    rg::AttackScores s;
    std::normal_distribution<double> g(0.0, 1.0);
    const int n = 20 + static_cast<int>(rng() % 180);
    for (int i = 0; i < n; ++i) {
      const bool m = i % 2 == 0;
      s.push(static_cast<std::size_t>(i), std::round((g(rng) + (m ? 0.4 : 0.0)) * 8.0) / 8.0, m);
    }
    const double a = rg::roc_auc(s);
    worst_a = std::max({worst_a, std::abs(a - pairwise_auc(s)), std::abs(a - trapezoid_auc(s))});
  }
  ok &= worst_a <= kAucOracleTol;
  d << "(a) auc max diff " << worst_a;

  // (b) Scenario-1 fit against exhaustive enumeration on 5-endpoint grids.
  int agree = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::normal_distribution<double> g(0.0, 1.5);
    std::vector<rg::SamplePool> mem, non;
    std::vector<OraclePool> omem, onon;
    for (int side = 0; side < 2; ++side) {
      for (int i = 0; i < 15; ++i) {
        rg::SamplePool p;
        p.original_logit = g(rng) + (side == 0 ? 2.0 : 0.0);
        const int nc = static_cast<int>(rng() % 5);
        for (int c = 0; c < nc; ++c) p.candidate_logits.push_back(p.original_logit + 0.7 * g(rng));
        (side == 0 ? omem : onon).push_back({p.candidate_logits, p.original_logit});
        (side == 0 ? mem : non).push_back(std::move(p));
      }
    }
    const rg::FittedInterval fit = rg::fit_interval_scenario1(mem, non, {5, 30}, rg::Fallback::kClosest);
    double glo = 1e300, ghi = -1e300, e0 = 1e300, e1 = -1e300;
    for (const auto* side : {&omem, &onon}) {
      for (const OraclePool& p : *side) {
        e0 = std::min(e0, p.original);
        e1 = std::max(e1, p.original);
        for (double v : p.cands) {
          e0 = std::min(e0, v);
          e1 = std::max(e1, v);
          if (side == &omem) glo = std::min(glo, v);
          if (side == &onon) ghi = std::max(ghi, v);
        }
      }
    }
    std::vector<double> grid;
    for (int i = 0; i < 5; ++i) grid.push_back(i == 4 ? ghi : glo + (ghi - glo) * i / 4.0);
    double best_js = 1e300, blo = 0, bhi = 0;
    for (int i = 0; i < 5; ++i) {
      for (int j = i + 1; j < 5; ++j) {
        const double js = oracle_js(oracle_hist(omem, grid[i], grid[j], e0, e1, 30),
                                    oracle_hist(onon, grid[i], grid[j], e0, e1, 30));
        const bool tie = std::abs(js - best_js) <= 1e-12;
        const double w = grid[j] - grid[i], bw = bhi - blo;
        if ((!tie && js < best_js) || (tie && (w > bw || (w == bw && grid[i] < blo)))) {
          best_js = js;
          blo = grid[i];
          bhi = grid[j];
        }
      }
    }
    if (glo < ghi && std::abs(fit.interval.lo - blo) < 1e-12 && std::abs(fit.interval.hi - bhi) < 1e-12 &&
        std::abs(fit.js - best_js) < 1e-12) {
      ++agree;
    }
  }
  ok &= agree == 20;
  d << "; (b) fit/exhaustive agree " << agree << "/20";

  // (c) mentropy against the formula.
  double worst_c = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const int K = 2 + static_cast<int>(rng() % 9);
    std::vector<double> p(static_cast<std::size_t>(K));
    std::uniform_real_distribution<double> u(0.05, 1.0);
    double sum = 0.0;
    for (double& v : p) sum += v = u(rng);
    for (double& v : p) v /= sum;
    const int y = static_cast<int>(rng() % static_cast<unsigned>(K));
    double me = -(1.0 - p[y]) * std::log(p[y]);
    for (int i = 0; i < K; ++i) {
      if (i != y) me -= p[i] * std::log(1.0 - p[i]);
    }
    const double got = rg::metric_score(rg::PredictionVector::from_probs(p), y, rg::MetricKind::kModifiedEntropy);
    worst_c = std::max(worst_c, std::abs(got - (-me)));
  }
  ok &= worst_c <= kMentropyTol;
  d << "; (c) mentropy max diff " << worst_c;

  // (d) Gaussian fits against moments.
  double worst_d = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    std::normal_distribution<double> g(rng() % 7, 1.0 + rng() % 3);
    std::vector<double> v(3 + rng() % 20);
    for (double& x : v) x = g(rng);
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = std::max(std::sqrt(ss / static_cast<double>(v.size())), 1e-3);
    const rg::GaussianFit f = rg::fit_gaussian(v);
    worst_d = std::max({worst_d, std::abs(f.mean - m), std::abs(f.stddev - sd)});
  }
  ok &= worst_d <= kGaussTol;
  d << "; (d) gaussian max diff " << worst_d;

  // (e) alpha_bar against direct products.
  const rg::NoiseSchedule s = rg::build_schedule(1000, 1e-4, 0.02);
  double worst_e = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    double prod = 1.0;
    for (int i = 1; i <= t; ++i) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1) / 999.0);
    worst_e = std::max(worst_e, std::abs(prod - s.alpha_bar[static_cast<std::size_t>(t)]));
  }
  ok &= worst_e <= kAlphaBarTol;
  d << "; (e) alpha_bar max diff " << worst_e;
  report(6, ok, "oracle equivalences", d.str());
}

void criterion7() {
  const rg::NoiseSchedule s = rg::build_schedule(1000, 1e-4, 0.02);
  const std::vector<float> x0 = {-0.9f, -0.2f, 0.35f, 0.8f};
  std::mt19937_64 rng(7007);
  std::normal_distribution<float> g(0.0f, 1.0f);
  double worst = 0.0;
  std::ostringstream d;
  for (int t : {5, 40}) {
    std::vector<double> s1(4), q1(4), s2(4), q2(4);
    std::vector<float> eps(4);
    for (int trial = 0; trial < kMcTrials; ++trial) {
      std::vector<float> x = x0;
      for (int step = 1; step <= t; ++step) {
        for (float& e : eps) e = g(rng);
        x = rg::forward_step(x, step, eps, s);
      }
      for (float& e : eps) e = g(rng);
      const std::vector<float> y = rg::forward_noise(x0, t, eps, s);
      for (int p = 0; p < 4; ++p) {
        s1[p] += x[p];
        q1[p] += static_cast<double>(x[p]) * x[p];
        s2[p] += y[p];
        q2[p] += static_cast<double>(y[p]) * y[p];
      }
    }
    const double n = kMcTrials;
    for (int p = 0; p < 4; ++p) {
      const double m1 = s1[p] / n, m2 = s2[p] / n;
      const double v1 = (q1[p] - n * m1 * m1) / (n - 1), v2 = (q2[p] - n * m2 * m2) / (n - 1);
      const double se_mean = std::sqrt(v1 / n + v2 / n);
      const double se_var = std::sqrt(2.0 * v1 * v1 / (n - 1) + 2.0 * v2 * v2 / (n - 1));
      worst = std::max({worst, std::abs(m1 - m2) / se_mean, std::abs(v1 - v2) / se_var});
    }
  }
  d << kMcTrials << " trials at t in {5, 40}, 4 pixels; worst |diff| = " << fmt(worst, 2) << " SE (<= "
    << kMcSigmas << ")";
  report(7, worst <= kMcSigmas, "stepwise vs closed-form noising marginals", d.str());
}

void criterion8(const rg::ExperimentConfig& cfg) {
  // Cell means over the three seeds.
  std::map<std::pair<int, int>, std::vector<double>> cells;
  for (std::uint64_t seed : cfg.repeat_seeds) {
    rg::Experiment e(cfg, seed);
    for (const rg::SweepCell& c : rg::sweep_nt(e, cfg.sweep_N, cfg.sweep_T)) {
      cells[{c.N, c.T}].push_back(c.best.auc);
    }
  }
  int inversions = 0;
  double worst = 0.0;
  std::ostringstream d;
  for (int N : cfg.sweep_N) {
    d << "N=" << N << ":";
    for (std::size_t i = 0; i < cfg.sweep_T.size(); ++i) {
      d << " T" << cfg.sweep_T[i] << " " << fmt(mean(cells[{N, cfg.sweep_T[i]}]));
      if (i == 0) continue;
      const double rise = mean(cells[{N, cfg.sweep_T[i]}]) - mean(cells[{N, cfg.sweep_T[i - 1]}]);
      if (rise > 0) {
        ++inversions;
        worst = std::max(worst, rise);
      }
    }
    d << "; ";
  }
  d << "inversions " << inversions << " (max rise " << fmt(worst) << ", allowed one <= " << kInversionTol << ")";
  report(8, inversions == 0 || (inversions == 1 && worst <= kInversionTol),
         "best-attack AUC weakly decreasing in T", d.str());
}

void criterion9(const rg::ExperimentConfig& cfg) {
  rg::Experiment e(cfg, 0);
  const rg::KeepGeneratingSummary s = rg::keep_generating_ablation(e);
  const double share = s.initially_missing == 0
                           ? 0.0
                           : static_cast<double>(s.later_hit) / static_cast<double>(s.initially_missing);
  const bool trivial = s.candidate_coverage >= kTrivialCoverage;
  std::ostringstream d;
  d << "T=" << s.T << ", interval [" << fmt(s.interval.lo) << ", " << fmt(s.interval.hi) << "], coverage "
    << fmt(s.candidate_coverage) << ", " << s.samples << " samples, first-hit " << s.first_hit
    << ", initially missing " << s.initially_missing << ", later hit " << s.later_hit << " ("
    << fmt(100 * share, 1) << "% < " << 100 * kMaxLateHitShare << "%)";
  if (trivial) d << "; interval trivially wide, report-only";
  report(9, trivial || share < kMaxLateHitShare, "keep-generating rarely rescues missing samples", d.str());
}

void criterion10() {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  rg::AttackScores rnd, sep;
  for (int i = 0; i < 2000; ++i) {
    const bool m = i < 1000;
    rnd.push(static_cast<std::size_t>(i), u(rng), m);
    sep.push(static_cast<std::size_t>(i), m ? 1.0 + u(rng) : u(rng), m);
  }
  const double a = rg::tpr_at_fpr(rnd, 0.001).value, b = rg::tpr_at_fpr(sep, 0.001).value;
  report(10, a <= kMaxRandomTpr && b == 1.0, "TPR at 0.1% FPR sanity",
         "membership-independent " + fmt(a) + " (<= " + fmt(kMaxRandomTpr, 2) + "), separated " + fmt(b));
}

}  // namespace

int main() {
  const rg::ExperimentConfig cfg = desk_config();
  cfg.validate();
  std::printf("acceptance run directory: %s\n", cfg.output_dir.c_str());

  // Cheap, self-contained criteria first.
  criterion5();
  criterion6();
  criterion7();
  criterion10();

  const rg::Report r = rg::run_experiment(cfg);
  criterion1(cfg);
  criteria2and3(r);
  criterion4(cfg);
  criterion8(cfg);
  criterion9(cfg);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
