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

#ifndef RECONGUARD_ATTACKS_H_
#define RECONGUARD_ATTACKS_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reconguard/classifier.h"
#include "reconguard/data.h"
#include "reconguard/defense.h"
#include "reconguard/metrics.h"

namespace reconguard {

// Accuracy of calling every correctly classified sample a member on a
// balanced evaluation set.
double gap_attack_accuracy(double train_acc, double test_acc);

enum class MetricKind { kCorrectness, kLoss, kConfidence, kEntropy, kModifiedEntropy };

std::string to_string(MetricKind k);
// "correctness", "loss", "confidence", "entropy", "mentropy".
MetricKind parse_metric(const std::string& s);
const std::vector<MetricKind>& all_metric_kinds();

// Member-direction score: larger means more member-like.
double metric_score(const PredictionVector& pred, int true_label, MetricKind kind);

// Decision rule "member iff score >= threshold".
struct ThresholdModel {
  double global = 0;
  std::vector<double> per_class;  // empty unless calibrated per class
  double balanced_accuracy = 0;   // on the calibration data

  double for_label(int label) const;
};

// Thresholds maximising balanced accuracy on known scores. Classes lacking
// either membership value fall back to the global threshold.
ThresholdModel calibrate_threshold(const AttackScores& known, bool per_class,
                                   std::span<const int> labels, int num_classes);

// Target outputs on one labelled id list.
struct LabeledOutputs {
  std::vector<std::size_t> ids;
  std::vector<PredictionVector> preds;
  std::vector<int> labels;
  std::vector<std::uint8_t> is_member;
};

// Everything a black-box attacker observes: outputs on its known members and
// non-members, and outputs on the evaluation samples.
struct AttackData {
  LabeledOutputs known;
  LabeledOutputs eval;
  int num_classes = 0;
};

AttackData query_target(const Classifier& target, const Dataset& dataset, const SplitSpec& split);

struct MetricAttackResult {
  AttackScores scores;  // eval scores, shifted by the class threshold if per class
  ThresholdModel thresholds;
  double calibrated_accuracy = 0;  // balanced accuracy of the calibrated rule on eval
};

MetricAttackResult metric_attack(MetricKind kind, const AttackData& data, bool per_class,
                                 const std::string& target_id);

// Descending-sorted posterior followed by the one-hot true label.
std::vector<float> nn_features(const PredictionVector& pred, int true_label);

struct NnAttackConfig {
  int hidden = 64;
  int epochs = 50;
  float lr = 1e-3f;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

// Trains a 2-hidden-layer discriminator on the known features and returns the
// member probability for each eval feature row.
std::vector<double> nn_attack(const std::vector<std::vector<float>>& features_known,
                              std::span<const std::uint8_t> membership_known,
                              const std::vector<std::vector<float>>& features_eval,
                              const NnAttackConfig& config);

AttackScores nn_attack_scores(const AttackData& data, const NnAttackConfig& config,
                              const std::string& target_id);

struct GaussianFit {
  double mean = 0;
  double stddev = 0;
};

inline constexpr double kLiraStdFloor = 1e-3;

// Mean and population standard deviation, the latter floored.
GaussianFit fit_gaussian(std::span<const double> values, double std_floor = kLiraStdFloor);

double gaussian_log_pdf(double x, const GaussianFit& g);

// ln(p_y / (1 - p_y)) of the clamped true-class probability.
double true_class_logit(const PredictionVector& pred, int true_label);

enum class LiraVariant { kOnline, kOffline };
std::string to_string(LiraVariant v);

// log N(x; in) - log N(x; out).
double lira_online_score(double target, const GaussianFit& in, const GaussianFit& out);
// How far above the OUT distribution the target sits, in OUT standard
// deviations.
double lira_offline_score(double target, const GaussianFit& out);

struct ShadowEnsemble {
  std::vector<ClassifierModel> models;
  IdList pool_ids;
  // in_mask[m][i]: pool_ids[i] was in model m's training set.
  std::vector<std::vector<std::uint8_t>> in_mask;
  std::uint64_t seed = 0;
};

// Each pool sample goes into a random half of the M models: for every sample
// the IN set is a uniformly random subset of size M / 2.
ShadowEnsemble train_shadows(const Dataset& dataset, const IdList& pool_ids, int num_models,
                             const ClassifierConfig& config, std::uint64_t seed);

// Per eval sample, shadow observations split by membership.
struct ShadowObservations {
  std::vector<std::vector<double>> in;
  std::vector<std::vector<double>> out;
};

// shadow_outputs[m][i] is shadow m's posterior on eval sample i.
ShadowObservations collect_observations(const ShadowEnsemble& ensemble,
                                        const LabeledOutputs& eval,
                                        const std::vector<std::vector<PredictionVector>>& shadow_outputs);

AttackScores lira_scores(const ShadowObservations& obs, const LabeledOutputs& eval,
                         LiraVariant variant, const std::string& target_id);

enum class TargetKind { kUndefended, kDefended, kCascaded };
std::string to_string(TargetKind t);
// "undefended", "defended", "cascaded"; anything else is a ConfigError.
TargetKind parse_target(const std::string& s);

// Everything needed to wrap any model (target or shadow) the way it is
// deployed.
struct Deployment {
  const Denoiser* dmodel = nullptr;
  DefenseConfig defense;
  std::optional<SelectionInterval> interval;
  std::vector<std::shared_ptr<const PostInferenceStage>> post_stages;
};

// Uniform query interface for a target descriptor. The returned object keeps
// a reference to `model`.
std::unique_ptr<Classifier> attack_target(TargetKind kind, const Classifier& model,
                                          const Deployment& deployment);

void write_scores_csv(const std::string& path, std::span<const AttackScores> all);
std::vector<AttackScores> read_scores_csv(const std::string& path);

}  // namespace reconguard

#endif  // RECONGUARD_ATTACKS_H_
