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

#include "reconguard/attacks.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "reconguard/errors.h"
#include "reconguard/nn/layers.h"
#include "reconguard/nn/ops.h"
#include "reconguard/random.h"

namespace reconguard {

double gap_attack_accuracy(double train_acc, double test_acc) {
  if (train_acc < 0.0 || train_acc > 1.0 || test_acc < 0.0 || test_acc > 1.0) {
    throw ArgumentError("accuracies must lie in [0, 1]");
  }
  return 0.5 + (train_acc - test_acc) / 2.0;
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::kCorrectness: return "correctness";
    case MetricKind::kLoss: return "loss";
    case MetricKind::kConfidence: return "confidence";
    case MetricKind::kEntropy: return "entropy";
    case MetricKind::kModifiedEntropy: return "mentropy";
  }
  return "?";
}

MetricKind parse_metric(const std::string& s) {
  for (MetricKind k : all_metric_kinds()) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown metric attack '" + s + "'");
}

const std::vector<MetricKind>& all_metric_kinds() {
  static const std::vector<MetricKind> kinds = {MetricKind::kCorrectness, MetricKind::kLoss,
                                                MetricKind::kConfidence, MetricKind::kEntropy,
                                                MetricKind::kModifiedEntropy};
  return kinds;
}

double metric_score(const PredictionVector& pred, int true_label, MetricKind kind) {
  if (true_label < 0 || static_cast<std::size_t>(true_label) >= pred.num_classes()) {
    throw ArgumentError("true label " + std::to_string(true_label) + " out of range");
  }
  const auto y = static_cast<std::size_t>(true_label);
  switch (kind) {
    case MetricKind::kCorrectness:
      return pred.predicted_label == true_label ? 1.0 : 0.0;
    case MetricKind::kLoss:
      return std::log(clamp_prob(pred.probs[y]));
    case MetricKind::kConfidence:
      return clamp_prob(*std::max_element(pred.probs.begin(), pred.probs.end()));
    case MetricKind::kEntropy: {
      double s = 0.0;
      for (double p : pred.probs) {
        const double q = clamp_prob(p);
        s += q * std::log(q);
      }
      return s;
    }
    case MetricKind::kModifiedEntropy: {
      const double py = clamp_prob(pred.probs[y]);
      double s = (1.0 - py) * std::log(py);
      for (std::size_t i = 0; i < pred.num_classes(); ++i) {
        if (i == y) continue;
        const double q = clamp_prob(pred.probs[i]);
        s += q * std::log(1.0 - q);
      }
      return s;
    }
  }
  throw ArgumentError("unknown metric kind");
}

double ThresholdModel::for_label(int label) const {
  if (per_class.empty()) return global;
  return per_class.at(static_cast<std::size_t>(label));
}

namespace {

struct ThresholdFit {
  double threshold;
  double balanced_accuracy;
};

// Sweeps thresholds below, between and above the distinct scores.
ThresholdFit best_threshold(std::span<const double> scores, std::span<const std::uint8_t> member) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const double nm = static_cast<double>(std::count(member.begin(), member.end(), 1));
  const double nn = static_cast<double>(scores.size()) - nm;
  // Threshold below every score: everything is called a member.
  ThresholdFit best{scores[idx.front()] - 1.0, 0.5};
  double members_below = 0.0, nonmembers_below = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    const double v = scores[idx[i]];
    for (; i < idx.size() && scores[idx[i]] == v; ++i) {
      if (member[idx[i]]) {
        members_below += 1.0;
      } else {
        nonmembers_below += 1.0;
      }
    }
    const double thr = i < idx.size() ? 0.5 * (v + scores[idx[i]]) : v + 1.0;
    const double acc = 0.5 * ((nm - members_below) / nm + nonmembers_below / nn);
    if (acc > best.balanced_accuracy) best = {thr, acc};
  }
  return best;
}

double balanced_accuracy(std::span<const std::uint8_t> member, std::span<const std::uint8_t> called) {
  double tp = 0, tn = 0, nm = 0, nn = 0;
  for (std::size_t i = 0; i < member.size(); ++i) {
    if (member[i]) {
      nm += 1;
      tp += called[i];
    } else {
      nn += 1;
      tn += 1 - called[i];
    }
  }
  return 0.5 * (tp / nm + tn / nn);
}

}  // namespace

ThresholdModel calibrate_threshold(const AttackScores& known, bool per_class,
                                   std::span<const int> labels, int num_classes) {
  known.validate();
  if (known.n_members() == 0 || known.n_nonmembers() == 0) {
    throw CalibrationError("threshold calibration needs both members and non-members");
  }
  ThresholdModel model;
  const ThresholdFit global = best_threshold(known.scores, known.is_member);
  model.global = global.threshold;
  if (per_class) {
    if (labels.size() != known.size()) throw ArgumentError("one label per calibration score");
    model.per_class.assign(static_cast<std::size_t>(num_classes), global.threshold);
    for (int c = 0; c < num_classes; ++c) {
      std::vector<double> s;
      std::vector<std::uint8_t> m;
      for (std::size_t i = 0; i < known.size(); ++i) {
        if (labels[i] != c) continue;
        s.push_back(known.scores[i]);
        m.push_back(known.is_member[i]);
      }
      const auto members = std::count(m.begin(), m.end(), 1);
      if (members == 0 || members == static_cast<long>(m.size())) continue;
      model.per_class[static_cast<std::size_t>(c)] = best_threshold(s, m).threshold;
    }
  }
  std::vector<std::uint8_t> called(known.size());
  for (std::size_t i = 0; i < known.size(); ++i) {
    const double thr = per_class ? model.for_label(labels[i]) : model.global;
    called[i] = known.scores[i] >= thr ? 1 : 0;
  }
  model.balanced_accuracy = balanced_accuracy(known.is_member, called);
  return model;
}

namespace {

LabeledOutputs query_list(const Classifier& target, const Dataset& dataset,
                          const IdList& members, const IdList& nonmembers) {
  LabeledOutputs out;
  for (const IdList* ids : {&members, &nonmembers}) {
    for (std::size_t id : *ids) {
      out.ids.push_back(id);
      out.labels.push_back(dataset.at(id).label);
      out.is_member.push_back(ids == &members ? 1 : 0);
    }
  }
  out.preds = predict(target, dataset.images(out.ids));
  return out;
}

}  // namespace

AttackData query_target(const Classifier& target, const Dataset& dataset, const SplitSpec& split) {
  AttackData d;
  d.num_classes = target.num_classes();
  d.known = query_list(target, dataset, split.attacker_known_member_ids,
                       split.attacker_known_nonmember_ids);
  d.eval = query_list(target, dataset, split.eval_member_ids, split.eval_nonmember_ids);
  return d;
}

MetricAttackResult metric_attack(MetricKind kind, const AttackData& data, bool per_class,
                                 const std::string& target_id) {
  auto scores_of = [&](const LabeledOutputs& o) {
    AttackScores s;
    s.attack_id = to_string(kind);
    s.target_id = target_id;
    for (std::size_t i = 0; i < o.ids.size(); ++i) {
      s.push(o.ids[i], metric_score(o.preds[i], o.labels[i], kind), o.is_member[i] != 0);
    }
    return s;
  };
  MetricAttackResult r;
  const AttackScores known = scores_of(data.known);
  // Correctness is binary; a per-class cut on it only adds noise.
  const bool use_classes = per_class && kind != MetricKind::kCorrectness;
  r.thresholds = calibrate_threshold(known, use_classes, data.known.labels, data.num_classes);
  r.scores = scores_of(data.eval);
  std::vector<std::uint8_t> called(r.scores.size());
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    const double thr = use_classes ? r.thresholds.for_label(data.eval.labels[i]) : r.thresholds.global;
    called[i] = r.scores.scores[i] >= thr ? 1 : 0;
    if (use_classes) r.scores.scores[i] -= thr;
  }
  if (r.scores.n_members() > 0 && r.scores.n_nonmembers() > 0) {
    r.calibrated_accuracy = balanced_accuracy(r.scores.is_member, called);
  }
  return r;
}

std::vector<float> nn_features(const PredictionVector& pred, int true_label) {
  const std::size_t K = pred.num_classes();
  if (true_label < 0 || static_cast<std::size_t>(true_label) >= K) {
    throw ArgumentError("true label out of range");
  }
  std::vector<double> sorted = pred.probs;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<float> f(2 * K, 0.0f);
  for (std::size_t i = 0; i < K; ++i) f[i] = static_cast<float>(sorted[i]);
  f[K + static_cast<std::size_t>(true_label)] = 1.0f;
  return f;
}

namespace {

nn::Tensor feature_tensor(const std::vector<std::vector<float>>& rows, std::span<const std::size_t> pick) {
  const int d = static_cast<int>(rows.front().size());
  nn::Tensor t({static_cast<int>(pick.size()), d});
  for (std::size_t r = 0; r < pick.size(); ++r) {
    const auto& row = rows[pick[r]];
    if (static_cast<int>(row.size()) != d) throw ArgumentError("feature rows differ in length");
    std::copy(row.begin(), row.end(), t.data() + r * d);
  }
  return t;
}

}  // namespace

std::vector<double> nn_attack(const std::vector<std::vector<float>>& features_known,
                              std::span<const std::uint8_t> membership_known,
                              const std::vector<std::vector<float>>& features_eval,
                              const NnAttackConfig& config) {
  if (features_known.size() != membership_known.size()) {
    throw ArgumentError("one membership bit per known feature row");
  }
  const auto nm = static_cast<std::size_t>(std::count(membership_known.begin(), membership_known.end(), 1));
  const std::size_t nn_count = membership_known.size() - nm;
  if (nm == 0 || nn_count == 0) throw CalibrationError("NN attack needs both membership values");
  if (static_cast<double>(std::max(nm, nn_count)) > 1.1 * static_cast<double>(std::min(nm, nn_count))) {
    throw ArgumentError("NN attack known set must be balanced within 10%");
  }
  if (config.epochs < 1 || config.batch_size < 1 || config.hidden < 1) {
    throw ArgumentError("NN attack needs positive epochs, batch size and width");
  }
  const int d = static_cast<int>(features_known.front().size());
  Rng rng(derive_seed(config.seed, {0x4e4e41ULL}));
  const nn::Linear l1(d, config.hidden, rng), l2(config.hidden, config.hidden, rng),
      l3(config.hidden, 1, rng);
  nn::ParameterList params;
  params.add(l1);
  params.add(l2);
  params.add(l3);
  auto forward = [&](const nn::Var& x) { return l3(nn::relu(l2(nn::relu(l1(x))))); };

  nn::Adam opt(params.params(), {.lr = config.lr});
  std::vector<std::size_t> order(features_known.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      const std::span<const std::size_t> pick(order.data() + start, n);
      std::vector<float> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = membership_known[pick[i]];
      opt.zero_grad();
      const nn::Var loss = nn::bce_with_logits(forward(nn::Var(feature_tensor(features_known, pick))), y);
      nn::backward(loss);
      opt.step();
    }
  }

  std::vector<double> out;
  if (features_eval.empty()) return out;
  nn::NoGradGuard no_grad;
  std::vector<std::size_t> all(features_eval.size());
  std::iota(all.begin(), all.end(), 0);
  const nn::Var z = forward(nn::Var(feature_tensor(features_eval, all)));
  for (std::size_t i = 0; i < all.size(); ++i) {
    out.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(z.value()[i]))));
  }
  return out;
}

AttackScores nn_attack_scores(const AttackData& data, const NnAttackConfig& config,
                              const std::string& target_id) {
  auto features = [](const LabeledOutputs& o) {
    std::vector<std::vector<float>> f;
    for (std::size_t i = 0; i < o.ids.size(); ++i) f.push_back(nn_features(o.preds[i], o.labels[i]));
    return f;
  };
  const std::vector<double> p = nn_attack(features(data.known), data.known.is_member,
                                          features(data.eval), config);
  AttackScores s;
  s.attack_id = "nn";
  s.target_id = target_id;
  for (std::size_t i = 0; i < p.size(); ++i) s.push(data.eval.ids[i], p[i], data.eval.is_member[i] != 0);
  return s;
}

GaussianFit fit_gaussian(std::span<const double> values, double std_floor) {
  if (values.empty()) throw ArgumentError("fit_gaussian of no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::max(std::sqrt(ss / n), std_floor)};
}

double gaussian_log_pdf(double x, const GaussianFit& g) {
  const double z = (x - g.mean) / g.stddev;
  return -0.5 * z * z - std::log(g.stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double true_class_logit(const PredictionVector& pred, int true_label) {
  if (true_label < 0 || static_cast<std::size_t>(true_label) >= pred.num_classes()) {
    throw ArgumentError("true label out of range");
  }
  const double p = clamp_prob(pred.probs[static_cast<std::size_t>(true_label)]);
  return std::log(p / (1.0 - p));
}

std::string to_string(LiraVariant v) { return v == LiraVariant::kOnline ? "lira_online" : "lira_offline"; }

double lira_online_score(double target, const GaussianFit& in, const GaussianFit& out) {
  return gaussian_log_pdf(target, in) - gaussian_log_pdf(target, out);
}

double lira_offline_score(double target, const GaussianFit& out) {
  return (target - out.mean) / out.stddev;
}

ShadowEnsemble train_shadows(const Dataset& dataset, const IdList& pool_ids, int num_models,
                             const ClassifierConfig& config, std::uint64_t seed) {
  if (num_models < 2 || num_models % 2 != 0) {
    throw ArgumentError("shadow ensemble size must be even and >= 2");
  }
  if (pool_ids.empty()) throw ArgumentError("shadow pool is empty");
  ShadowEnsemble e;
  e.pool_ids = pool_ids;
  e.seed = seed;
  const auto M = static_cast<std::size_t>(num_models);
  e.in_mask.assign(M, std::vector<std::uint8_t>(pool_ids.size(), 0));
  Rng rng(derive_seed(seed, {0x534841ULL}));
  std::vector<std::size_t> models(M);
  std::iota(models.begin(), models.end(), 0);
  for (std::size_t i = 0; i < pool_ids.size(); ++i) {
    std::shuffle(models.begin(), models.end(), rng);
    for (std::size_t m = 0; m < M / 2; ++m) e.in_mask[models[m]][i] = 1;
  }
  for (std::size_t m = 0; m < M; ++m) {
    IdList train;
    for (std::size_t i = 0; i < pool_ids.size(); ++i) {
      if (e.in_mask[m][i]) train.push_back(pool_ids[i]);
    }
    ClassifierConfig c = config;
    c.seed = derive_seed(seed, {0x4d4f44ULL, m});
    e.models.push_back(train_classifier(dataset, train, c));
  }
  return e;
}

ShadowObservations collect_observations(
    const ShadowEnsemble& ensemble, const LabeledOutputs& eval,
    const std::vector<std::vector<PredictionVector>>& shadow_outputs) {
  if (shadow_outputs.size() != ensemble.in_mask.size()) {
    throw ArgumentError("one output list per shadow model");
  }
  std::unordered_map<std::size_t, std::size_t> pos;
  for (std::size_t i = 0; i < ensemble.pool_ids.size(); ++i) pos[ensemble.pool_ids[i]] = i;
  ShadowObservations obs;
  obs.in.resize(eval.ids.size());
  obs.out.resize(eval.ids.size());
  for (std::size_t i = 0; i < eval.ids.size(); ++i) {
    const auto it = pos.find(eval.ids[i]);
    for (std::size_t m = 0; m < shadow_outputs.size(); ++m) {
      if (shadow_outputs[m].size() != eval.ids.size()) {
        throw ArgumentError("shadow output list length differs from eval list");
      }
      const double phi = true_class_logit(shadow_outputs[m][i], eval.labels[i]);
      const bool in = it != pos.end() && ensemble.in_mask[m][it->second];
      (in ? obs.in : obs.out)[i].push_back(phi);
    }
  }
  return obs;
}

AttackScores lira_scores(const ShadowObservations& obs, const LabeledOutputs& eval,
                         LiraVariant variant, const std::string& target_id) {
  if (obs.in.size() != eval.ids.size() || obs.out.size() != eval.ids.size()) {
    throw ArgumentError("one observation set per eval sample");
  }
  AttackScores s;
  s.attack_id = to_string(variant);
  s.target_id = target_id;
  for (std::size_t i = 0; i < eval.ids.size(); ++i) {
    const bool online = variant == LiraVariant::kOnline;
    if (obs.out[i].size() < 2 || (online && obs.in[i].size() < 2)) {
      throw CalibrationError("sample " + std::to_string(eval.ids[i]) +
                             " lacks shadow coverage (IN " + std::to_string(obs.in[i].size()) +
                             ", OUT " + std::to_string(obs.out[i].size()) + ")");
    }
    const double x = true_class_logit(eval.preds[i], eval.labels[i]);
    const GaussianFit out = fit_gaussian(obs.out[i]);
    const double score =
        online ? lira_online_score(x, fit_gaussian(obs.in[i]), out) : lira_offline_score(x, out);
    s.push(eval.ids[i], score, eval.is_member[i] != 0);
  }
  return s;
}

std::string to_string(TargetKind t) {
  switch (t) {
    case TargetKind::kUndefended: return "undefended";
    case TargetKind::kDefended: return "defended";
    case TargetKind::kCascaded: return "cascaded";
  }
  return "?";
}

TargetKind parse_target(const std::string& s) {
  for (TargetKind t : {TargetKind::kUndefended, TargetKind::kDefended, TargetKind::kCascaded}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown target descriptor '" + s + "'");
}

namespace {

class Forwarding : public Classifier {
 public:
  explicit Forwarding(const Classifier& m) : m_(m) {}
  int num_classes() const override { return m_.num_classes(); }
  ImageShape input_shape() const override { return m_.input_shape(); }
  std::vector<PredictionVector> predict_batch(std::span<const Image> images) const override {
    return m_.predict_batch(images);
  }

 private:
  const Classifier& m_;
};

}  // namespace

std::unique_ptr<Classifier> attack_target(TargetKind kind, const Classifier& model,
                                          const Deployment& deployment) {
  if (kind == TargetKind::kUndefended) return std::make_unique<Forwarding>(model);
  if (deployment.dmodel == nullptr) throw ConfigError("defended targets need a diffusion model");
  auto defender = std::make_shared<Defender>(model, *deployment.dmodel, deployment.defense,
                                             deployment.interval);
  if (kind == TargetKind::kDefended) {
    return std::make_unique<Cascade>(model, std::vector<CascadeStage>{
                                                {CascadeStage::Kind::kPreInference, defender, nullptr}});
  }
  std::vector<CascadeStage> stages{{CascadeStage::Kind::kPreInference, defender, nullptr}};
  for (const auto& post : deployment.post_stages) {
    stages.push_back({CascadeStage::Kind::kPostInference, nullptr, post});
  }
  return std::make_unique<Cascade>(model, std::move(stages));
}

void write_scores_csv(const std::string& path, std::span<const AttackScores> all) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "sample_id,score,is_member,attack_id,target_id\n";
  out.precision(17);
  for (const AttackScores& s : all) {
    s.validate();
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << (s.sample_ids.empty() ? i : s.sample_ids[i]) << ',' << s.scores[i] << ','
          << static_cast<int>(s.is_member[i]) << ',' << s.attack_id << ',' << s.target_id << '\n';
    }
  }
}

std::vector<AttackScores> read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,score,is_member,attack_id,target_id") {
    throw FormatError(path + ": unexpected header");
  }
  std::vector<AttackScores> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 5 fields");
    const auto key = std::make_pair(f[3], f[4]);
    auto [it, fresh] = index.try_emplace(key, out.size());
    if (fresh) {
      out.emplace_back();
      out.back().attack_id = f[3];
      out.back().target_id = f[4];
    }
    try {
      out[it->second].push(std::stoull(f[0]), std::stod(f[1]), f[2] == "1");
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

}  // namespace reconguard
