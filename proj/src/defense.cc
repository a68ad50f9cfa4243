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

#include "reconguard/defense.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "reconguard/errors.h"

namespace reconguard {

double logit_score(const PredictionVector& p) {
  if (p.probs.empty()) throw ArgumentError("logit_score of an empty posterior");
  const double q = clamp_prob(*std::max_element(p.probs.begin(), p.probs.end()));
  return std::log(q / (1.0 - q));
}

void DefenseConfig::validate() const {
  const int s = static_cast<int>(scenario);
  if (s < 1 || s > 3) throw ConfigError("scenario must be 1, 2 or 3");
  if (N < 1) throw ConfigError("defense N must be >= 1");
  if (T < 1) throw ConfigError("defense T must be >= 1");
  if (k < 1 || k > T) throw ConfigError("defense k must satisfy 1 <= k <= T");
  if (grid.num_endpoints < 2) throw ConfigError("grid needs at least two endpoints");
  if (grid.num_bins < 1) throw ConfigError("grid needs at least one bin");
}

std::string to_string(Scenario s) { return std::to_string(static_cast<int>(s)); }

std::string to_string(Fallback f) { return f == Fallback::kClosest ? "closest" : "original"; }

Fallback parse_fallback(const std::string& s) {
  if (s == "closest") return Fallback::kClosest;
  if (s == "original") return Fallback::kOriginal;
  throw ConfigError("fallback must be 'closest' or 'original', got '" + s + "'");
}

CandidateSet candidate_set(const ReconstructionBatch& batch, const PredictionVector& original) {
  CandidateSet out;
  for (std::size_t j = 0; j < batch.predictions.size(); ++j) {
    if (batch.predictions[j].predicted_label == original.predicted_label) {
      out.push_back(static_cast<int>(j));
    }
  }
  return out;
}

namespace {

const std::vector<double>& logits_of(const ReconstructionBatch& batch) {
  if (batch.logits.size() != batch.predictions.size()) {
    throw ArgumentError("reconstruction batch has unscored variants");
  }
  return batch.logits;
}

Selection pick(const ReconstructionBatch& batch, int j,
               const std::optional<SelectionInterval>& interval) {
  Selection s;
  s.prediction = batch.predictions[static_cast<std::size_t>(j)];
  s.logit = batch.logits[static_cast<std::size_t>(j)];
  s.index = j;
  s.in_interval = interval && interval->contains(s.logit);
  return s;
}

int uniform_index(std::size_t n, Rng& rng) {
  return static_cast<int>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
}

}  // namespace

Selection select_prediction(const ReconstructionBatch& batch, const CandidateSet& cands,
                            const std::optional<SelectionInterval>& interval, Fallback fallback,
                            const PredictionVector& original, Rng& rng) {
  const std::vector<double>& logits = logits_of(batch);
  auto keep_original = [&] {
    Selection s;
    s.prediction = original;
    s.logit = logit_score(original);
    s.in_interval = interval && interval->contains(s.logit);
    return s;
  };
  if (cands.empty()) return keep_original();
  if (!interval) return pick(batch, cands[static_cast<std::size_t>(uniform_index(cands.size(), rng))], interval);

  std::vector<int> inside;
  for (int j : cands) {
    if (interval->contains(logits[static_cast<std::size_t>(j)])) inside.push_back(j);
  }
  if (!inside.empty()) {
    return pick(batch, inside[static_cast<std::size_t>(uniform_index(inside.size(), rng))], interval);
  }
  if (fallback == Fallback::kOriginal) return keep_original();
  int best = cands.front();
  for (int j : cands) {
    if (interval->distance(logits[static_cast<std::size_t>(j)]) <
        interval->distance(logits[static_cast<std::size_t>(best)])) {
      best = j;
    }
  }
  return pick(batch, best, interval);
}

PredictionVector aggregate_predict(const ReconstructionBatch& batch) {
  if (batch.predictions.empty()) throw ArgumentError("aggregate_predict of an empty batch");
  std::vector<double> mean(batch.predictions.front().num_classes(), 0.0);
  for (const PredictionVector& p : batch.predictions) {
    if (p.num_classes() != mean.size()) throw ArgumentError("posteriors differ in length");
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p.probs[c];
  }
  double total = 0.0;
  for (double v : mean) total += v;
  for (double& v : mean) v /= total;
  return PredictionVector::from_probs(std::move(mean));
}

SamplePool make_pool(const ReconstructionBatch& batch, const PredictionVector& original) {
  const std::vector<double>& logits = logits_of(batch);
  SamplePool pool;
  pool.original_logit = logit_score(original);
  for (int j : candidate_set(batch, original)) {
    pool.candidate_logits.push_back(logits[static_cast<std::size_t>(j)]);
  }
  return pool;
}

namespace {

// The logits a pool can put forward: its candidates, or the original when
// nothing preserved the label.
std::span<const double> selectable(const SamplePool& p) {
  if (p.candidate_logits.empty()) return {&p.original_logit, 1};
  return p.candidate_logits;
}

int bin_of(double v, const std::vector<double>& edges) {
  const int B = static_cast<int>(edges.size()) - 1;
  const double width = (edges.back() - edges.front()) / B;
  return std::clamp(static_cast<int>(std::floor((v - edges.front()) / width)), 0, B - 1);
}

}  // namespace

std::vector<double> candidate_logits(std::span<const SamplePool> pools) {
  std::vector<double> out;
  for (const SamplePool& p : pools) {
    const auto s = selectable(p);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

Histogram selection_histogram(std::span<const SamplePool> pools, const SelectionInterval& interval,
                              Fallback fallback, const std::vector<double>& bin_edges) {
  if (pools.empty()) throw ArgumentError("selection_histogram of no pools");
  if (bin_edges.size() < 2) throw ArgumentError("selection_histogram needs bin edges");
  Histogram h;
  h.bin_edges = bin_edges;
  h.mass.assign(bin_edges.size() - 1, 0.0);
  const double unit = 1.0 / static_cast<double>(pools.size());
  for (const SamplePool& p : pools) {
    if (p.candidate_logits.empty()) {
      h.mass[static_cast<std::size_t>(bin_of(p.original_logit, bin_edges))] += unit;
      continue;
    }
    std::size_t inside = 0;
    for (double v : p.candidate_logits) inside += interval.contains(v) ? 1 : 0;
    if (inside > 0) {
      const double share = unit / static_cast<double>(inside);
      for (double v : p.candidate_logits) {
        if (interval.contains(v)) h.mass[static_cast<std::size_t>(bin_of(v, bin_edges))] += share;
      }
      continue;
    }
    double chosen = p.original_logit;
    if (fallback == Fallback::kClosest) {
      chosen = p.candidate_logits.front();
      for (double v : p.candidate_logits) {
        if (interval.distance(v) < interval.distance(chosen)) chosen = v;
      }
    }
    h.mass[static_cast<std::size_t>(bin_of(chosen, bin_edges))] += unit;
  }
  return h;
}

std::vector<double> pool_bin_edges(std::span<const SamplePool> member,
                                   std::span<const SamplePool> nonmember, int num_bins) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (auto pools : {member, nonmember}) {
    for (const SamplePool& p : pools) {
      lo = std::min(lo, p.original_logit);
      hi = std::max(hi, p.original_logit);
      for (double v : p.candidate_logits) lo = std::min(lo, v), hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) throw ArgumentError("pool_bin_edges of empty pools");
  const double ends[] = {lo, hi};
  return histogram(ends, num_bins).bin_edges;
}

double selection_js(std::span<const SamplePool> member, std::span<const SamplePool> nonmember,
                    const SelectionInterval& interval, Fallback fallback, int num_bins) {
  const std::vector<double> edges = pool_bin_edges(member, nonmember, num_bins);
  return js_divergence(selection_histogram(member, interval, fallback, edges),
                       selection_histogram(nonmember, interval, fallback, edges));
}

FittedInterval fit_interval_scenario1(std::span<const SamplePool> member,
                                      std::span<const SamplePool> nonmember,
                                      const GridConfig& grid, Fallback fallback) {
  if (member.empty() || nonmember.empty()) {
    throw ArgumentError("interval fitting needs non-empty member and non-member pools");
  }
  if (grid.num_endpoints < 2) throw ArgumentError("grid needs at least two endpoints");
  const std::vector<double> mem = candidate_logits(member);
  const std::vector<double> non = candidate_logits(nonmember);
  const double lo = *std::min_element(mem.begin(), mem.end());
  const double hi = *std::max_element(non.begin(), non.end());
  const std::vector<double> edges = pool_bin_edges(member, nonmember, grid.num_bins);
  auto js_of = [&](const SelectionInterval& iv) {
    return js_divergence(selection_histogram(member, iv, fallback, edges),
                         selection_histogram(nonmember, iv, fallback, edges));
  };

  FittedInterval out;
  if (lo >= hi) {
    const double mid = 0.5 * (lo + hi);
    std::cerr << "warning: member and non-member logits do not overlap (min member " << lo
              << " >= max non-member " << hi << "); using the point interval at " << mid << "\n";
    out.interval = {mid, mid};
    out.js = js_of(out.interval);
    out.degenerate = true;
    return out;
  }
  const int E = grid.num_endpoints;
  for (int i = 0; i < E; ++i) out.grid.push_back(i == E - 1 ? hi : lo + (hi - lo) * i / (E - 1));

  constexpr double kTie = 1e-12;
  bool have = false;
  for (int i = 0; i < E; ++i) {
    for (int j = i + 1; j < E; ++j) {
      const SelectionInterval iv{out.grid[i], out.grid[j]};
      const double js = js_of(iv);
      bool better = !have || js < out.js - kTie;
      if (have && std::abs(js - out.js) <= kTie) {
        const double w = iv.hi - iv.lo, bw = out.interval.hi - out.interval.lo;
        better = w > bw || (w == bw && iv.lo < out.interval.lo);
      }
      if (better) {
        out.interval = iv;
        out.js = js;
        have = true;
      }
    }
  }
  return out;
}

SelectionInterval fit_interval_scenario2(std::span<const double> member_logits) {
  if (member_logits.empty()) throw ArgumentError("scenario 2 needs a non-empty member pool");
  double sum = 0.0;
  for (double v : member_logits) sum += v;
  const double mean = sum / static_cast<double>(member_logits.size());
  const double mn = *std::min_element(member_logits.begin(), member_logits.end());
  // Rounding can push the mean of a constant pool a hair below its minimum.
  return {mn, std::max(mn, mean)};
}

void to_json(nlohmann::json& j, const IntervalRecord& r) {
  j = {{"scenario", static_cast<int>(r.scenario)},
       {"lo", r.interval.lo},
       {"hi", r.interval.hi},
       {"N", r.N},
       {"T", r.T},
       {"k", r.k},
       {"grid", {{"num_endpoints", r.grid.num_endpoints}, {"num_bins", r.grid.num_bins}}},
       {"js_value", r.js_value},
       {"calibration_hash", r.calibration_hash}};
}

void from_json(const nlohmann::json& j, IntervalRecord& r) {
  const int s = j.at("scenario");
  if (s < 1 || s > 3) throw FormatError("interval record has scenario " + std::to_string(s));
  r.scenario = static_cast<Scenario>(s);
  j.at("lo").get_to(r.interval.lo);
  j.at("hi").get_to(r.interval.hi);
  if (!(r.interval.lo <= r.interval.hi)) throw FormatError("interval record has lo > hi");
  j.at("N").get_to(r.N);
  j.at("T").get_to(r.T);
  j.at("k").get_to(r.k);
  j.at("grid").at("num_endpoints").get_to(r.grid.num_endpoints);
  j.at("grid").at("num_bins").get_to(r.grid.num_bins);
  j.at("js_value").get_to(r.js_value);
  j.at("calibration_hash").get_to(r.calibration_hash);
}

std::vector<ReconstructionBatch> score_reconstructions(const Classifier& model,
                                                       const Denoiser& dmodel,
                                                       std::span<const Image> images, int n,
                                                       int T, int k,
                                                       std::span<const std::uint64_t> seeds,
                                                       bool keep_images) {
  if (seeds.size() != images.size()) throw ArgumentError("one seed per image");
  // Bounds the number of variant images alive at once.
  const std::size_t chunk = std::max<std::size_t>(1, 2048 / static_cast<std::size_t>(n));
  std::vector<ReconstructionBatch> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t m = std::min(chunk, images.size() - start);
    std::vector<ReconstructionBatch> part =
        reconstruct_many(dmodel, images.subspan(start, m), T, k, n, seeds.subspan(start, m));
    for (ReconstructionBatch& b : part) {
      b.predictions = predict(model, b.variants);
      b.logits.clear();
      for (const PredictionVector& p : b.predictions) b.logits.push_back(logit_score(p));
      if (!keep_images) {
        b.variants.clear();
        b.variants.shrink_to_fit();
      }
      out.push_back(std::move(b));
    }
  }
  return out;
}

namespace {

std::uint64_t image_hash(const Image& x) {
  Fnv1a h;
  h.update_span(std::span<const float>(x));
  return h.digest();
}

// First n variants of a scored batch.
ReconstructionBatch prefix(const ReconstructionBatch& b, int n) {
  const auto m = static_cast<std::size_t>(n);
  if (b.predictions.size() < m) throw ArgumentError("scored batch has fewer than N variants");
  if (b.predictions.size() == m) return b;
  ReconstructionBatch out;
  out.seed = b.seed;
  out.predictions.assign(b.predictions.begin(), b.predictions.begin() + n);
  out.logits.assign(b.logits.begin(), b.logits.begin() + n);
  return out;
}

}  // namespace

std::uint64_t query_seed(std::uint64_t defense_seed, const Image& x) {
  return derive_seed(defense_seed, {image_hash(x), 0x52454355ULL});
}

std::uint64_t selection_seed(std::uint64_t defense_seed, const Image& x) {
  return derive_seed(defense_seed, {image_hash(x), 0x53454cULL});
}

Defender::Defender(const Classifier& model, const Denoiser& dmodel, DefenseConfig config,
                   std::optional<SelectionInterval> interval)
    : model_(model), dmodel_(dmodel), config_(config), interval_(interval) {
  config_.validate();
  if (config_.T > dmodel.schedule().T_max) {
    throw ConfigError("defense T exceeds the diffusion schedule length");
  }
  if (model.input_shape() != dmodel.input_shape()) {
    throw ConfigError("classifier and diffusion model disagree on the input shape");
  }
  if (!config_.aggregation && config_.scenario != Scenario::kRandom && !interval_) {
    throw ConfigError("scenarios 1 and 2 need a fitted interval");
  }
  if (config_.scenario == Scenario::kRandom) interval_.reset();
}

Selection Defender::select(const ReconstructionBatch& batch, const PredictionVector& original,
                           std::uint64_t sel_seed) const {
  const ReconstructionBatch b = prefix(batch, config_.N);
  if (config_.aggregation) {
    Selection s;
    s.prediction = aggregate_predict(b);
    s.logit = logit_score(s.prediction);
    return s;
  }
  Rng rng(sel_seed);
  return select_prediction(b, candidate_set(b, original), interval_, config_.fallback, original,
                           rng);
}

std::vector<Selection> Defender::defend_detailed(std::span<const Image> images) const {
  const std::vector<PredictionVector> originals = predict(model_, images);
  std::vector<std::uint64_t> seeds;
  for (const Image& x : images) seeds.push_back(query_seed(config_.seed, x));
  const std::vector<ReconstructionBatch> batches =
      score_reconstructions(model_, dmodel_, images, config_.N, config_.T, config_.k, seeds);
  std::vector<Selection> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(select(batches[i], originals[i], selection_seed(config_.seed, images[i])));
  }
  return out;
}

std::vector<PredictionVector> Defender::predict_batch(std::span<const Image> images) const {
  std::vector<PredictionVector> out;
  out.reserve(images.size());
  for (Selection& s : defend_detailed(images)) out.push_back(std::move(s.prediction));
  return out;
}

PredictionVector Defender::defend(const Image& x) const {
  return predict(*this, std::span<const Image>(&x, 1)).front();
}

std::vector<KeepGenerating> keep_generating_many(std::span<const Image> xs,
                                                 const Classifier& model,
                                                 const Denoiser& dmodel,
                                                 const SelectionInterval& interval,
                                                 int max_iters, int T, int k,
                                                 std::span<const std::uint64_t> seeds) {
  if (max_iters < 1) throw ArgumentError("keep-generating needs max_iters >= 1");
  const std::vector<PredictionVector> originals = predict(model, xs);
  // Variant j is seeded independently of max_iters, so generating them all
  // up front matches generating them one at a time.
  const std::vector<ReconstructionBatch> batches =
      score_reconstructions(model, dmodel, xs, max_iters, T, k, seeds);
  std::vector<KeepGenerating> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const ReconstructionBatch& b = batches[i];
    KeepGenerating r;
    r.prediction = originals[i];
    r.n_generations = max_iters;
    int closest = -1;
    for (int j = 0; j < max_iters; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (b.predictions[ju].predicted_label != originals[i].predicted_label) continue;
      if (interval.contains(b.logits[ju])) {
        r.prediction = b.predictions[ju];
        r.n_generations = j + 1;
        r.hit = true;
        break;
      }
      if (closest < 0 || interval.distance(b.logits[ju]) <
                             interval.distance(b.logits[static_cast<std::size_t>(closest)])) {
        closest = j;
      }
    }
    if (!r.hit && closest >= 0) r.prediction = b.predictions[static_cast<std::size_t>(closest)];
    out.push_back(std::move(r));
  }
  return out;
}

KeepGenerating keep_generating_select(const Image& x, const Classifier& model,
                                      const Denoiser& dmodel, const SelectionInterval& interval,
                                      int max_iters, int T, int k, std::uint64_t seed) {
  return keep_generating_many(std::span<const Image>(&x, 1), model, dmodel, interval, max_iters,
                              T, k, std::span<const std::uint64_t>(&seed, 1))
      .front();
}

RoundingStage::RoundingStage(int decimals) : decimals_(decimals) {
  if (decimals < 0 || decimals > 15) throw ArgumentError("rounding decimals must be in [0, 15]");
}

std::string RoundingStage::name() const { return "round" + std::to_string(decimals_); }

std::vector<double> RoundingStage::round(const std::vector<double>& probs) const {
  const double scale = std::pow(10.0, decimals_);
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = std::round(probs[i] * scale) / scale;
  return out;
}

PredictionVector RoundingStage::apply(const PredictionVector& p) const {
  std::vector<double> r = round(p.probs);
  double total = 0.0;
  for (double v : r) total += v;
  if (total <= 0.0) return p;
  for (double& v : r) v /= total;
  return PredictionVector::from_probs(std::move(r));
}

Cascade::Cascade(const Classifier& base, std::vector<CascadeStage> stages)
    : base_(base), stages_(std::move(stages)) {
  bool seen_pre = false, seen_post = false;
  for (const CascadeStage& s : stages_) {
    if (s.kind == CascadeStage::Kind::kPreInference) {
      if (!s.pre || s.post) throw ConfigError("pre-inference stage needs exactly a reconstruction");
      if (seen_pre) throw ConfigError("cascade allows at most one pre-inference stage");
      if (seen_post) throw ConfigError("pre-inference stage must precede post-inference stages");
      if (s.pre->num_classes() != base.num_classes()) {
        throw ConfigError("pre-inference stage disagrees with the base model on classes");
      }
      seen_pre = true;
    } else {
      if (!s.post || s.pre) throw ConfigError("post-inference stage needs exactly a transform");
      seen_post = true;
    }
  }
}

std::vector<PredictionVector> Cascade::predict_batch(std::span<const Image> images) const {
  const Classifier* front = &base_;
  if (!stages_.empty() && stages_.front().kind == CascadeStage::Kind::kPreInference) {
    front = stages_.front().pre.get();
  }
  std::vector<PredictionVector> out = predict(*front, images);
  for (const CascadeStage& s : stages_) {
    if (s.kind != CascadeStage::Kind::kPostInference) continue;
    for (PredictionVector& p : out) p = s.post->apply(p);
  }
  return out;
}

}  // namespace reconguard
