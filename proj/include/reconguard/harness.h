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

#ifndef RECONGUARD_HARNESS_H_
#define RECONGUARD_HARNESS_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reconguard/attacks.h"
#include "reconguard/classifier.h"
#include "reconguard/data.h"
#include "reconguard/defense.h"
#include "reconguard/diffusion.h"
#include "reconguard/metrics.h"

namespace reconguard {

struct ExperimentConfig {
  std::string dataset = "synthetic:10:300:16:1";
  SplitCounts splits{.member = 1000, .defender = 200, .attacker = 200, .eval = 1000};
  std::uint64_t split_seed = 0;
  ClassifierConfig classifier;
  double label_smoothing = 0;  // > 0 installs the label-smoothing training hook
  DiffusionConfig diffusion;
  DefenseConfig defense;
  std::vector<std::string> attacks = {"correctness", "loss", "confidence", "entropy", "mentropy"};
  bool per_class_thresholds = true;
  NnAttackConfig nn_attack;
  int lira_shadows = 16;
  int lira_epochs = 0;  // 0: same as the target classifier
  std::vector<std::string> targets = {"undefended", "defended"};
  int cascade_round_decimals = 2;
  std::string output_dir = "runs/default";
  std::vector<std::uint64_t> repeat_seeds = {0};
  int keep_generating_iters = 20;
  int keep_generating_T = 0;  // 0: the defense T
  std::vector<int> sweep_N = {10, 50};
  std::vector<int> sweep_T = {10, 40};
  int scan_intervals = 10;
  int latency_queries = 20;
  std::vector<int> latency_N = {10, 50};
  bool plots = true;

  // Throws ConfigError on unknown keys or invalid values.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

ExperimentConfig load_config(const std::string& path);
// Applies "a.b.c=value" overrides to a config document; value is parsed as
// JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

// The labelled id lists an experiment reconstructs.
enum class ListId {
  kDefenderMember,
  kDefenderNonmember,
  kKnownMember,
  kKnownNonmember,
  kEvalMember,
  kEvalNonmember,
};

// Outputs of one target on every list an attacker or defender uses.
struct TargetOutputs {
  std::string target_id;
  AttackData data;
  // Logit of the returned posterior on eval members / non-members.
  std::vector<double> eval_member_logits;
  std::vector<double> eval_nonmember_logits;
};

// One repeat of the pipeline. Stages run lazily and cache their artifacts
// under <output_dir>/checkpoints, keyed by content hashes of their inputs.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::uint64_t repeat_seed);
  ~Experiment();

  const ExperimentConfig& config() const { return config_; }
  std::uint64_t repeat_seed() const { return repeat_seed_; }
  // Seeds of this repeat.
  std::uint64_t split_seed() const;
  std::uint64_t defense_seed() const;

  const Dataset& dataset();
  const SplitSpec& split();
  const ClassifierModel& classifier();
  const DiffusionModel& diffusion();

  const IdList& ids(ListId list);
  const std::vector<PredictionVector>& originals(ListId list);
  // Reconstructions of a list, scored by the classifier; at least n variants.
  const std::vector<ReconstructionBatch>& scored(ListId list, int n, int T, int k);

  std::vector<SamplePool> pools(ListId list, int n, int T, int k);
  // Fits the interval that `defense` needs (none for scenario 3 or
  // aggregation).
  std::optional<IntervalRecord> fit_interval(const DefenseConfig& defense);

  // Defended outputs from the cached reconstructions. Identical to querying
  // Defender::defend_detailed on the same images.
  std::vector<Selection> defended(ListId list, const DefenseConfig& defense,
                                  const std::optional<SelectionInterval>& interval);

  TargetOutputs target_outputs(TargetKind kind, const DefenseConfig& defense,
                               const std::optional<SelectionInterval>& interval);

  // Runs one configured attack id against a target.
  AttackScores run_attack(const std::string& attack_id, TargetKind kind,
                          const TargetOutputs& outputs, const DefenseConfig& defense,
                          const std::optional<SelectionInterval>& interval);

  std::string checkpoint_dir() const;

 private:
  struct Cache;
  std::uint64_t stage_seed(std::uint64_t base, std::uint64_t tag) const;
  const ShadowEnsemble& shadows();

  ExperimentConfig config_;
  std::uint64_t repeat_seed_;
  std::unique_ptr<Cache> cache_;
};

// Top-1 accuracy of one target on the eval lists.
struct UtilityRow {
  std::string target_id;
  double member_accuracy = 0;
  double nonmember_accuracy = 0;
  double eval_accuracy = 0;
  double undefended_eval_accuracy = 0;
  std::size_t label_mismatches = 0;  // eval samples whose label differs from undefended
};

struct SeedReport {
  std::uint64_t repeat_seed = 0;
  std::optional<IntervalRecord> interval;
  std::vector<MetricBundle> bundles;
  std::map<std::string, double> calibrated_accuracy;  // "attack/target" -> value
  std::vector<UtilityRow> utility;
  std::map<std::string, double> eval_js;  // target -> JS of eval logits
  double train_accuracy = 0;  // undefended, all members
  double test_accuracy = 0;   // undefended, all non-members
  double gap_attack = 0;
  std::vector<std::string> plot_files;
  double seconds = 0;
};

struct SummaryRow {
  std::string attack_id;
  std::string target_id;
  double auc_mean = 0, auc_std = 0;
  double accuracy_mean = 0, accuracy_std = 0;
  std::size_t runs = 0;
};

struct Report {
  std::vector<SeedReport> seeds;
  std::vector<SummaryRow> summary;

  // Max over attacks of the mean AUC / accuracy against one target.
  double best_auc(const std::string& target_id) const;
  double best_accuracy(const std::string& target_id) const;
};

// Full pipeline for every repeat seed; writes manifest, metrics, tables and
// plots under the output directory.
Report run_experiment(const ExperimentConfig& config);
SeedReport run_seed(Experiment& experiment);

// Max AUC and max accuracy over `attacks` against the defended target.
struct BestAttack {
  double auc = 0;
  double accuracy = 0;
  std::string auc_attack;
};
BestAttack best_defended_attack(Experiment& experiment, const DefenseConfig& defense,
                                const std::optional<SelectionInterval>& interval,
                                const std::vector<std::string>& attacks);

struct SweepCell {
  int N = 0;
  int T = 0;
  double interval_lo = 0, interval_hi = 0;
  BestAttack best;
};

// Scenario-1 defended best-attack metrics for every (N, T) pair, each with its
// own fitted interval. Writes tables/sweep.csv and a heatmap.
std::vector<SweepCell> sweep_nt(Experiment& experiment, const std::vector<int>& N_values,
                                const std::vector<int>& T_values);

struct ScanRow {
  SelectionInterval interval;
  double js = 0;       // selection JS on the defender pools
  double eval_js = 0;  // JS of the defended eval logits
  BestAttack best;
};

// Deploys each interval and records its calibration JS and attack metrics.
std::vector<ScanRow> interval_js_scan(Experiment& experiment,
                                      const std::vector<SelectionInterval>& intervals);
// `count` intervals from the fitted grid, spread over its JS range, plus the
// fitted optimum.
std::vector<SelectionInterval> scan_candidates(Experiment& experiment, int count);

struct KeepGeneratingSummary {
  SelectionInterval interval;
  int T = 0;
  int max_iters = 0;
  std::size_t samples = 0;
  std::size_t first_hit = 0;
  std::size_t initially_missing = 0;
  std::size_t later_hit = 0;  // initially missing but hit by max_iters
  double candidate_coverage = 0;  // share of defender candidate logits inside the interval
  std::vector<double> cdf;        // cdf[i]: share of samples hit within i + 1 generations
};

KeepGeneratingSummary keep_generating_ablation(Experiment& experiment);

struct LatencyStats {
  std::string target_id;
  int N = 0;
  double mean_ms = 0;
  double p95_ms = 0;
  int queries = 0;
};

// Per-query wall clock over the first n_queries eval images.
LatencyStats measure_latency(Experiment& experiment, TargetKind kind, int N, int n_queries);

void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace reconguard

#endif  // RECONGUARD_HARNESS_H_
