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


#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "json.hpp"
#include "reconguard/errors.h"
#include "reconguard/harness.h"
#include "reconguard/plots.h"

namespace reconguard {
namespace {

namespace fs = std::filesystem;

nlohmann::json tiny_json(const std::string& out) {
  return {{"dataset", "synthetic:4:40:8:3"},
          {"splits", {{"member", 60}, {"defender", 20}, {"attacker", 20}, {"eval", 40}}},
          {"classifier", {{"epochs", 3}, {"channels", {8, 8}}}},
          {"diffusion", {{"base_channels", 8}, {"train_t_max", 50}, {"epochs", 2}}},
          {"defense", {{"scenario", 1}, {"N", 6}, {"T", 20}, {"k", 10}}},
          {"attacks", {{"list", {"loss", "mentropy"}}}},
          {"targets", {"undefended", "defended"}},
          {"output_dir", out},
          {"repeat_seeds", {0, 1, 2}},
          {"sweep", {{"N", {4, 6}}, {"T", {10, 20}}}},
          {"scan", {{"intervals", 4}}},
          {"latency", {{"queries", 10}, {"N", {2, 6}}}},
          {"plots", false}};
}

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("reconguard_harness_" + name);
  fs::remove_all(p);
  return p.string();
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

TEST(Config, RejectsUnknownKeys) {
  nlohmann::json j = tiny_json("x");
  EXPECT_NO_THROW(ExperimentConfig::from_json(j).validate());
  j["defense"]["sigma"] = 1;
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = tiny_json("x");
  j["colour"] = "red";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
}

TEST(Config, RoundTrip) {
  const ExperimentConfig c = ExperimentConfig::from_json(tiny_json("rt"));
  const nlohmann::json j = c.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(j).to_json(), j);
  EXPECT_EQ(c.defense.N, 6);
  EXPECT_EQ(c.repeat_seeds.size(), 3u);
}

TEST(Config, Overrides) {
  nlohmann::json j = tiny_json("ov");
  apply_override(j, "defense.N=9");
  apply_override(j, "dataset=synthetic:2:10:8:1");
  apply_override(j, "sweep.T=[5,6]");
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  EXPECT_EQ(c.defense.N, 9);
  EXPECT_EQ(c.dataset, "synthetic:2:10:8:1");
  EXPECT_EQ(c.sweep_T, (std::vector<int>{5, 6}));
  EXPECT_THROW(apply_override(j, "defense.N"), ConfigError);
  EXPECT_THROW(apply_override(j, "dataset.x=1"), ConfigError);
}

TEST(Config, InvalidValues) {
  auto bad = [](const std::string& assignment) {
    nlohmann::json j = tiny_json("bad");
    apply_override(j, assignment);
    EXPECT_THROW(ExperimentConfig::from_json(j).validate(), ConfigError) << assignment;
  };
  bad("defense.k=30");
  bad("defense.scenario=4");
  bad("attacks.list=[\"loss\",\"margin\"]");
  bad("targets=[\"hardened\"]");
  bad("attacks.lira.shadows=3");
  bad("latency.queries=5");
  bad("defense.T=2000");
}

class HarnessRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new ExperimentConfig(ExperimentConfig::from_json(tiny_json(temp_dir("run"))));
    report_ = new Report(run_experiment(*config_));
  }
  static void TearDownTestSuite() {
    fs::remove_all(config_->output_dir);
    delete report_;
    delete config_;
  }
  static ExperimentConfig* config_;
  static Report* report_;
};

ExperimentConfig* HarnessRun::config_ = nullptr;
Report* HarnessRun::report_ = nullptr;

TEST_F(HarnessRun, OneBundlePerAttackAndTarget) {
  ASSERT_EQ(report_->seeds.size(), 3u);
  for (const SeedReport& s : report_->seeds) {
    std::set<std::pair<std::string, std::string>> keys;
    for (const MetricBundle& b : s.bundles) keys.insert({b.attack_id, b.target_id});
    EXPECT_EQ(s.bundles.size(), 4u);
    EXPECT_EQ(keys.size(), 4u);
    ASSERT_TRUE(s.interval.has_value());
    EXPECT_EQ(s.interval->scenario, Scenario::kFitted);
    EXPECT_LE(s.interval->interval.lo, s.interval->interval.hi);
    EXPECT_GE(s.interval->js_value, 0.0);
  }
  EXPECT_EQ(report_->summary.size(), 4u);
  for (const SummaryRow& r : report_->summary) EXPECT_EQ(r.runs, 3u);
}

TEST_F(HarnessRun, SummaryIsMeanOverSeeds) {
  for (const SummaryRow& r : report_->summary) {
    double sum = 0;
    for (const SeedReport& s : report_->seeds) {
      for (const MetricBundle& b : s.bundles) {
        if (b.attack_id == r.attack_id && b.target_id == r.target_id) sum += b.auc;
      }
    }
    EXPECT_NEAR(r.auc_mean, sum / 3, 1e-12);
  }
}

TEST_F(HarnessRun, DefenseKeepsLabels) {
  for (const SeedReport& s : report_->seeds) {
    for (const UtilityRow& u : s.utility) {
      EXPECT_EQ(u.label_mismatches, 0u) << u.target_id;
      EXPECT_DOUBLE_EQ(u.eval_accuracy, u.undefended_eval_accuracy);
    }
  }
}

TEST_F(HarnessRun, WritesArtifacts) {
  const fs::path out = config_->output_dir;
  for (const char* f : {"manifest.json", "tables/metrics.csv", "tables/summary.csv", "tables/utility.csv",
                        "tables/scores_seed0.csv", "metrics/seed0_loss_defended.json",
                        "metrics/seed2_mentropy_undefended.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const nlohmann::json m = read_json(out / "manifest.json");
  EXPECT_EQ(m["seeds"].size(), 3u);
  EXPECT_EQ(m["config"], config_->to_json());
  const std::vector<AttackScores> scores = read_scores_csv((out / "tables/scores_seed1.csv").string());
  EXPECT_EQ(scores.size(), 4u);
}

TEST_F(HarnessRun, ReproducibleFromScratch) {
  ExperimentConfig c = *config_;
  c.output_dir = temp_dir("rerun");
  c.repeat_seeds = {1};
  const Report again = run_experiment(c);
  const fs::path a = fs::path(config_->output_dir) / "metrics/seed1_loss_defended.json";
  const fs::path b = fs::path(c.output_dir) / "metrics/seed1_loss_defended.json";
  EXPECT_EQ(read_json(a), read_json(b));
  EXPECT_EQ(again.seeds[0].interval->interval, report_->seeds[1].interval->interval);
  fs::remove_all(c.output_dir);
}

TEST_F(HarnessRun, RandomScenarioHasNoInterval) {
  ExperimentConfig c = *config_;
  c.defense.scenario = Scenario::kRandom;
  Experiment e(c, 0);
  EXPECT_FALSE(e.fit_interval(c.defense).has_value());
  const TargetOutputs d = e.target_outputs(TargetKind::kDefended, c.defense, std::nullopt);
  const TargetOutputs u = e.target_outputs(TargetKind::kUndefended, c.defense, std::nullopt);
  for (std::size_t i = 0; i < u.data.eval.preds.size(); ++i) {
    EXPECT_EQ(d.data.eval.preds[i].predicted_label, u.data.eval.preds[i].predicted_label);
  }
}

TEST_F(HarnessRun, CachedDefenseMatchesLiveDefender) {
  Experiment e(*config_, 0);
  DefenseConfig d = config_->defense;
  d.seed = e.defense_seed();
  const IntervalRecord r = *e.fit_interval(d);
  const std::vector<Selection> cached = e.defended(ListId::kEvalMember, d, r.interval);
  const Defender live(e.classifier(), e.diffusion(), d, r.interval);
  const std::vector<Image> xs = e.dataset().images(e.ids(ListId::kEvalMember));
  const std::vector<Selection> fresh = live.defend_detailed(xs);
  ASSERT_EQ(cached.size(), fresh.size());
  for (std::size_t i = 0; i < cached.size(); ++i) {
    EXPECT_EQ(cached[i].prediction, fresh[i].prediction) << i;
    EXPECT_EQ(cached[i].index, fresh[i].index) << i;
  }
}

TEST_F(HarnessRun, SweepCells) {
  Experiment e(*config_, 0);
  const std::vector<SweepCell> cells = sweep_nt(e, {4, 6}, {10, 20});
  EXPECT_EQ(cells.size(), 4u);
  for (const SweepCell& c : cells) {
    EXPECT_GE(c.best.auc, 0.0);
    EXPECT_LE(c.best.auc, 1.0);
    EXPECT_LE(c.interval_lo, c.interval_hi);
  }
  EXPECT_THROW(sweep_nt(e, {4}, {2000}), ArgumentError);
}

TEST_F(HarnessRun, ScanOptimumHasMinimalJs) {
  Experiment e(*config_, 0);
  const std::vector<SelectionInterval> cands = scan_candidates(e, 4);
  ASSERT_GE(cands.size(), 1u);
  std::vector<SelectionInterval> with_dup = cands;
  with_dup.push_back(cands.front());
  const std::vector<ScanRow> rows = interval_js_scan(e, with_dup);
  ASSERT_EQ(rows.size(), with_dup.size());
  for (const ScanRow& r : rows) EXPECT_GE(r.js, rows.front().js - 1e-12);
  const ScanRow& a = rows.front();
  const ScanRow& b = rows.back();
  EXPECT_EQ(a.js, b.js);
  EXPECT_EQ(a.eval_js, b.eval_js);
  EXPECT_EQ(a.best.auc, b.best.auc);
  EXPECT_THROW(scan_candidates(e, 0), ArgumentError);
}

TEST_F(HarnessRun, KeepGeneratingCounts) {
  Experiment e(*config_, 0);
  const KeepGeneratingSummary k = keep_generating_ablation(e);
  EXPECT_EQ(k.first_hit + k.initially_missing, k.samples);
  EXPECT_LE(k.later_hit, k.initially_missing);
  ASSERT_EQ(k.cdf.size(), static_cast<std::size_t>(k.max_iters));
  for (std::size_t i = 1; i < k.cdf.size(); ++i) EXPECT_GE(k.cdf[i], k.cdf[i - 1]);
  EXPECT_NEAR(k.cdf.front(), static_cast<double>(k.first_hit) / k.samples, 1e-12);
  EXPECT_NEAR(k.cdf.back(), static_cast<double>(k.first_hit + k.later_hit) / k.samples, 1e-12);
}

TEST_F(HarnessRun, Latency) {
  Experiment e(*config_, 0);
  EXPECT_THROW(measure_latency(e, TargetKind::kDefended, 6, 9), ArgumentError);
  const LatencyStats u = measure_latency(e, TargetKind::kUndefended, 6, 10);
  const LatencyStats d = measure_latency(e, TargetKind::kDefended, 6, 10);
  EXPECT_EQ(u.queries, 10);
  EXPECT_LT(u.mean_ms, d.mean_ms);
  EXPECT_LE(d.mean_ms, d.p95_ms * 10);
}

TEST(Plots, WritesNonEmptyFiles) {
  const fs::path dir = temp_dir("plots");
  fs::create_directories(dir);
  const plots::Axes axes{"t", "x", "y"};
  const std::vector<plots::Series> s = {{"a", {0, 0.5, 1}, {0, 0.7, 1}}, {"b", {0, 1}, {0, 1}}};
  plots::line_svg((dir / "l.svg").string(), axes, s);
  plots::scatter_svg((dir / "s.svg").string(), axes, s);
  plots::histogram_svg((dir / "h.svg").string(), axes, s, 5);
  plots::heatmap_svg((dir / "m.svg").string(), "m", {"r0", "r1"}, {"c0"}, {{0.1}, {0.9}});
  plots::write_csv((dir / "t.csv").string(), {"a", "b"}, {{"1", "2"}});
  for (const char* f : {"l.svg", "s.svg", "h.svg", "m.svg", "t.csv"}) {
    ASSERT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_GT(fs::file_size(dir / f), 0u) << f;
  }
  std::ifstream in(dir / "l.svg");
  const std::string head((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(head.find("<svg"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Plots, EmptyDataIsAnError) {
  const std::string p = (fs::temp_directory_path() / "reconguard_empty.svg").string();
  const plots::Axes axes;
  EXPECT_THROW(plots::line_svg(p, axes, {}), ArgumentError);
  EXPECT_THROW(plots::line_svg(p, axes, {{"a", {}, {}}}), ArgumentError);
  EXPECT_THROW(plots::histogram_svg(p, axes, {{"a", {}, {}}}, 4), ArgumentError);
  EXPECT_THROW(plots::histogram_svg(p, axes, {{"a", {1.0}, {}}}, 0), ArgumentError);
  EXPECT_THROW(plots::heatmap_svg(p, "m", {"r"}, {"a", "b"}, {{1.0}}), ArgumentError);
  EXPECT_THROW(plots::write_csv(p, {"a"}, {{"1", "2"}}), ArgumentError);
}

}  // namespace
}  // namespace reconguard
