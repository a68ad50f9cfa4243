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

#ifndef RECONGUARD_DEFENSE_H_
#define RECONGUARD_DEFENSE_H_

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reconguard/classifier.h"
#include "reconguard/diffusion.h"
#include "reconguard/metrics.h"
#include "reconguard/random.h"

namespace reconguard {

// ln(p / (1 - p)) of the clamped maximum probability.
double logit_score(const PredictionVector& p);

struct SelectionInterval {
  double lo = 0;
  double hi = 0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  // Zero inside, else the gap to the nearer end.
  double distance(double v) const { return std::max({lo - v, v - hi, 0.0}); }
  bool operator==(const SelectionInterval&) const = default;
};

// How the returned prediction is picked among label-preserving variants.
enum class Scenario {
  kFitted = 1,       // interval fitted by JS search on both defender pools
  kMemberRange = 2,  // [min, mean] of defender member logits
  kRandom = 3,       // uniform over candidates, no interval
};

// Used when candidates exist but none lands in the interval. An empty
// candidate set always yields the original prediction.
enum class Fallback { kClosest, kOriginal };

struct GridConfig {
  int num_endpoints = 20;
  int num_bins = 30;
};

struct DefenseConfig {
  Scenario scenario = Scenario::kFitted;
  int N = 50;
  int T = 40;
  int k = 10;
  GridConfig grid;
  Fallback fallback = Fallback::kClosest;
  // Average all N posteriors instead of selecting one; may change labels.
  bool aggregation = false;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

std::string to_string(Scenario s);
std::string to_string(Fallback f);
Fallback parse_fallback(const std::string& s);

// Indices of variants whose predicted label equals the original's.
using CandidateSet = std::vector<int>;
CandidateSet candidate_set(const ReconstructionBatch& batch, const PredictionVector& original);

struct Selection {
  PredictionVector prediction;
  double logit = 0;
  int index = -1;  // -1: the original prediction was returned
  bool in_interval = false;
};

Selection select_prediction(const ReconstructionBatch& batch, const CandidateSet& cands,
                            const std::optional<SelectionInterval>& interval, Fallback fallback,
                            const PredictionVector& original, Rng& rng);

// Arithmetic mean of the N posteriors, renormalised.
PredictionVector aggregate_predict(const ReconstructionBatch& batch);

// What one defender sample can contribute to the selected-logit distribution.
struct SamplePool {
  std::vector<double> candidate_logits;
  double original_logit = 0;
};

SamplePool make_pool(const ReconstructionBatch& batch, const PredictionVector& original);

// Expected histogram of selected logits over `pools` for one interval: each
// sample spreads unit mass evenly over its in-interval candidates, else puts it
// on the fallback choice.
Histogram selection_histogram(std::span<const SamplePool> pools, const SelectionInterval& interval,
                              Fallback fallback, const std::vector<double>& bin_edges);

// Edges of `num_bins` equal bins over every logit the pools can produce.
std::vector<double> pool_bin_edges(std::span<const SamplePool> member,
                                   std::span<const SamplePool> nonmember, int num_bins);

double selection_js(std::span<const SamplePool> member, std::span<const SamplePool> nonmember,
                    const SelectionInterval& interval, Fallback fallback, int num_bins);

struct FittedInterval {
  SelectionInterval interval;
  double js = 0;
  bool degenerate = false;
  std::vector<double> grid;  // endpoint grid that was searched
};

// Grid search over lo < hi drawn from [min member logit, max non-member
// logit]; minimises selection_js. Ties go to the wider interval, then the
// lower lo.
FittedInterval fit_interval_scenario1(std::span<const SamplePool> member,
                                      std::span<const SamplePool> nonmember,
                                      const GridConfig& grid, Fallback fallback);

SelectionInterval fit_interval_scenario2(std::span<const double> member_logits);

// All candidate logits across pools, flattened.
std::vector<double> candidate_logits(std::span<const SamplePool> pools);

// Persisted form of a fitted interval.
struct IntervalRecord {
  Scenario scenario = Scenario::kFitted;
  SelectionInterval interval;
  int N = 0;
  int T = 0;
  int k = 0;
  GridConfig grid;
  double js_value = 0;
  std::uint64_t calibration_hash = 0;
};

void to_json(nlohmann::json& j, const IntervalRecord& r);
void from_json(const nlohmann::json& j, IntervalRecord& r);

// Reconstructs an input and populates predictions and logits. Images are
// dropped unless keep_images is set.
std::vector<ReconstructionBatch> score_reconstructions(const Classifier& model,
                                                       const Denoiser& dmodel,
                                                       std::span<const Image> images, int n,
                                                       int T, int k,
                                                       std::span<const std::uint64_t> seeds,
                                                       bool keep_images = false);

// Per-input seed for reconstruction noise and for selection draws.
std::uint64_t query_seed(std::uint64_t defense_seed, const Image& x);
std::uint64_t selection_seed(std::uint64_t defense_seed, const Image& x);

// The pre-inference defended pipeline. Queries are pure functions of the
// image: randomness is seeded from the defense seed and the image content.
class Defender : public Classifier {
 public:
  // interval is required for scenarios 1 and 2 in selection mode.
  Defender(const Classifier& model, const Denoiser& dmodel, DefenseConfig config,
           std::optional<SelectionInterval> interval);

  int num_classes() const override { return model_.num_classes(); }
  ImageShape input_shape() const override { return model_.input_shape(); }
  std::vector<PredictionVector> predict_batch(std::span<const Image> images) const override;

  PredictionVector defend(const Image& x) const;
  std::vector<Selection> defend_detailed(std::span<const Image> images) const;

  // Selection on an already scored batch (first N variants are used).
  Selection select(const ReconstructionBatch& batch, const PredictionVector& original,
                   std::uint64_t selection_seed) const;

  const DefenseConfig& config() const { return config_; }
  const std::optional<SelectionInterval>& interval() const { return interval_; }
  const Classifier& model() const { return model_; }

 private:
  const Classifier& model_;
  const Denoiser& dmodel_;
  DefenseConfig config_;
  std::optional<SelectionInterval> interval_;
};

// Result of regenerating single variants until one lands in the interval.
struct KeepGenerating {
  PredictionVector prediction;
  int n_generations = 0;
  bool hit = false;
};

KeepGenerating keep_generating_select(const Image& x, const Classifier& model,
                                      const Denoiser& dmodel, const SelectionInterval& interval,
                                      int max_iters, int T, int k, std::uint64_t seed);

// Batched form; generations for input i are seeded by seeds[i].
std::vector<KeepGenerating> keep_generating_many(std::span<const Image> xs,
                                                 const Classifier& model,
                                                 const Denoiser& dmodel,
                                                 const SelectionInterval& interval,
                                                 int max_iters, int T, int k,
                                                 std::span<const std::uint64_t> seeds);

// Maps one posterior to another after inference.
class PostInferenceStage {
 public:
  virtual ~PostInferenceStage() = default;
  virtual std::string name() const = 0;
  virtual PredictionVector apply(const PredictionVector& p) const = 0;
};

class IdentityStage : public PostInferenceStage {
 public:
  std::string name() const override { return "identity"; }
  PredictionVector apply(const PredictionVector& p) const override { return p; }
};

// Rounds each probability to `decimals` places, then renormalises.
class RoundingStage : public PostInferenceStage {
 public:
  explicit RoundingStage(int decimals);
  std::string name() const override;
  PredictionVector apply(const PredictionVector& p) const override;
  // Rounded values before renormalisation.
  std::vector<double> round(const std::vector<double>& probs) const;

 private:
  int decimals_;
};

struct CascadeStage {
  enum class Kind { kPreInference, kPostInference };
  Kind kind = Kind::kPostInference;
  std::shared_ptr<const Classifier> pre;  // set for kPreInference
  std::shared_ptr<const PostInferenceStage> post;  // set for kPostInference
};

// Optional pre-inference stage followed by post-inference stages in order.
class Cascade : public Classifier {
 public:
  // Throws ConfigError for a stage whose payload does not match its kind, a
  // second pre-inference stage, or a pre-inference stage after a post one.
  Cascade(const Classifier& base, std::vector<CascadeStage> stages);

  int num_classes() const override { return base_.num_classes(); }
  ImageShape input_shape() const override { return base_.input_shape(); }
  std::vector<PredictionVector> predict_batch(std::span<const Image> images) const override;

 private:
  const Classifier& base_;
  std::vector<CascadeStage> stages_;
};

}  // namespace reconguard

#endif  // RECONGUARD_DEFENSE_H_
