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

#include "reconguard/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "reconguard/errors.h"
#include "reconguard/plots.h"
#include "reconguard/random.h"

namespace reconguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads one config object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, label(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + label(key) + "'");
    }
  }

 private:
  std::string label(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

bool is_metric_attack(const std::string& id) {
  for (MetricKind k : all_metric_kinds()) {
    if (to_string(k) == id) return true;
  }
  return false;
}

bool is_known_attack(const std::string& id) {
  return is_metric_attack(id) || id == "nn" || id == "lira_online" || id == "lira_offline";
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.get("dataset", c.dataset);
  {
    Section s = root.sub("splits");
    s.get("member", c.splits.member);
    s.get("defender", c.splits.defender);
    s.get("attacker", c.splits.attacker);
    s.get("eval", c.splits.eval);
    s.get("allow_defender_attacker_overlap", c.splits.allow_defender_attacker_overlap);
    s.get("seed", c.split_seed);
    s.finish();
  }
  {
    Section s = root.sub("classifier");
    s.get("architecture", c.classifier.architecture);
    s.get("channels", c.classifier.channels);
    s.get("hidden", c.classifier.hidden);
    s.get("epochs", c.classifier.epochs);
    s.get("lr", c.classifier.lr);
    s.get("weight_decay", c.classifier.weight_decay);
    s.get("batch_size", c.classifier.batch_size);
    s.get("seed", c.classifier.seed);
    s.get("label_smoothing", c.label_smoothing);
    s.finish();
  }
  {
    Section s = root.sub("diffusion");
    s.get("T_max", c.diffusion.T_max);
    s.get("beta_start", c.diffusion.beta_start);
    s.get("beta_end", c.diffusion.beta_end);
    s.get("base_channels", c.diffusion.base_channels);
    s.get("train_t_max", c.diffusion.train_t_max);
    s.get("epochs", c.diffusion.epochs);
    s.get("lr", c.diffusion.lr);
    s.get("batch_size", c.diffusion.batch_size);
    s.get("seed", c.diffusion.seed);
    s.finish();
  }
  {
    Section s = root.sub("defense");
    int scenario = static_cast<int>(c.defense.scenario);
    s.get("scenario", scenario);
    if (scenario < 1 || scenario > 3) throw ConfigError("defense.scenario must be 1, 2 or 3");
    c.defense.scenario = static_cast<Scenario>(scenario);
    s.get("N", c.defense.N);
    s.get("T", c.defense.T);
    s.get("k", c.defense.k);
    Section g = s.sub("grid");
    g.get("num_endpoints", c.defense.grid.num_endpoints);
    g.get("num_bins", c.defense.grid.num_bins);
    g.finish();
    std::string fallback = to_string(c.defense.fallback);
    s.get("fallback", fallback);
    c.defense.fallback = parse_fallback(fallback);
    s.get("aggregation", c.defense.aggregation);
    s.get("seed", c.defense.seed);
    s.finish();
  }
  {
    Section s = root.sub("attacks");
    s.get("list", c.attacks);
    s.get("per_class_thresholds", c.per_class_thresholds);
    Section nn = s.sub("nn");
    nn.get("hidden", c.nn_attack.hidden);
    nn.get("epochs", c.nn_attack.epochs);
    nn.get("lr", c.nn_attack.lr);
    nn.get("batch_size", c.nn_attack.batch_size);
    nn.get("seed", c.nn_attack.seed);
    nn.finish();
    Section lira = s.sub("lira");
    lira.get("shadows", c.lira_shadows);
    lira.get("epochs", c.lira_epochs);
    lira.finish();
    s.finish();
  }
  root.get("targets", c.targets);
  {
    Section s = root.sub("cascade");
    s.get("round_decimals", c.cascade_round_decimals);
    s.finish();
  }
  root.get("output_dir", c.output_dir);
  root.get("repeat_seeds", c.repeat_seeds);
  {
    Section s = root.sub("keep_generating");
    s.get("max_iters", c.keep_generating_iters);
    s.get("T", c.keep_generating_T);
    s.finish();
  }
  {
    Section s = root.sub("sweep");
    s.get("N", c.sweep_N);
    s.get("T", c.sweep_T);
    s.finish();
  }
  {
    Section s = root.sub("scan");
    s.get("intervals", c.scan_intervals);
    s.finish();
  }
  {
    Section s = root.sub("latency");
    s.get("queries", c.latency_queries);
    s.get("N", c.latency_N);
    s.finish();
  }
  root.get("plots", c.plots);
  root.finish();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  return {
      {"dataset", dataset},
      {"splits",
       {{"member", splits.member},
        {"defender", splits.defender},
        {"attacker", splits.attacker},
        {"eval", splits.eval},
        {"allow_defender_attacker_overlap", splits.allow_defender_attacker_overlap},
        {"seed", split_seed}}},
      {"classifier",
       {{"architecture", classifier.architecture},
        {"channels", classifier.channels},
        {"hidden", classifier.hidden},
        {"epochs", classifier.epochs},
        {"lr", classifier.lr},
        {"weight_decay", classifier.weight_decay},
        {"batch_size", classifier.batch_size},
        {"seed", classifier.seed},
        {"label_smoothing", label_smoothing}}},
      {"diffusion",
       {{"T_max", diffusion.T_max},
        {"beta_start", diffusion.beta_start},
        {"beta_end", diffusion.beta_end},
        {"base_channels", diffusion.base_channels},
        {"train_t_max", diffusion.train_t_max},
        {"epochs", diffusion.epochs},
        {"lr", diffusion.lr},
        {"batch_size", diffusion.batch_size},
        {"seed", diffusion.seed}}},
      {"defense",
       {{"scenario", static_cast<int>(defense.scenario)},
        {"N", defense.N},
        {"T", defense.T},
        {"k", defense.k},
        {"grid", {{"num_endpoints", defense.grid.num_endpoints}, {"num_bins", defense.grid.num_bins}}},
        {"fallback", to_string(defense.fallback)},
        {"aggregation", defense.aggregation},
        {"seed", defense.seed}}},
      {"attacks",
       {{"list", attacks},
        {"per_class_thresholds", per_class_thresholds},
        {"nn",
         {{"hidden", nn_attack.hidden},
          {"epochs", nn_attack.epochs},
          {"lr", nn_attack.lr},
          {"batch_size", nn_attack.batch_size},
          {"seed", nn_attack.seed}}},
        {"lira", {{"shadows", lira_shadows}, {"epochs", lira_epochs}}}}},
      {"targets", targets},
      {"cascade", {{"round_decimals", cascade_round_decimals}}},
      {"output_dir", output_dir},
      {"repeat_seeds", repeat_seeds},
      {"keep_generating", {{"max_iters", keep_generating_iters}, {"T", keep_generating_T}}},
      {"sweep", {{"N", sweep_N}, {"T", sweep_T}}},
      {"scan", {{"intervals", scan_intervals}}},
      {"latency", {{"queries", latency_queries}, {"N", latency_N}}},
      {"plots", plots},
  };
}

void ExperimentConfig::validate() const {
  defense.validate();
  if (defense.T > diffusion.T_max) throw ConfigError("defense.T exceeds diffusion.T_max");
  if (attacks.empty()) throw ConfigError("attacks.list is empty");
  for (const std::string& a : attacks) {
    if (!is_known_attack(a)) throw ConfigError("unknown attack '" + a + "'");
  }
  if (targets.empty()) throw ConfigError("targets is empty");
  for (const std::string& t : targets) parse_target(t);
  if (repeat_seeds.empty()) throw ConfigError("repeat_seeds is empty");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("classifier.label_smoothing must lie in [0, 1)");
  }
  if (lira_shadows < 2 || lira_shadows % 2 != 0) throw ConfigError("attacks.lira.shadows must be even and >= 2");
  if (keep_generating_iters < 1) throw ConfigError("keep_generating.max_iters must be >= 1");
  if (keep_generating_T < 0 || keep_generating_T > diffusion.T_max) {
    throw ConfigError("keep_generating.T must lie in [0, T_max]");
  }
  for (int T : sweep_T) {
    if (T < 1 || T > diffusion.T_max) throw ConfigError("sweep.T values must lie in [1, T_max]");
  }
  for (int N : sweep_N) {
    if (N < 1) throw ConfigError("sweep.N values must be >= 1");
  }
  for (int N : latency_N) {
    if (N < 1) throw ConfigError("latency.N values must be >= 1");
  }
  if (scan_intervals < 1) throw ConfigError("scan.intervals must be >= 1");
  if (latency_queries < 10) throw ConfigError("latency.queries must be >= 10");
  if (cascade_round_decimals < 0 || cascade_round_decimals > 15) {
    throw ConfigError("cascade.round_decimals must lie in [0, 15]");
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &config;
  std::stringstream ss(path);
  std::vector<std::string> parts;
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
  (*node)[parts.back()] = value;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::uint64_t hash_text(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

void log_line(const std::string& msg) { std::clog << "[reconguard] " << msg << std::endl; }

template <typename F>
decltype(auto) stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

constexpr std::uint32_t kReconMagic = 0x52475243;  // "RGRC"

void save_scored(const std::string& path, const std::vector<ReconstructionBatch>& batches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return;  // cache writes are best effort
  auto put = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  const std::size_t n = batches.empty() ? 0 : batches.front().predictions.size();
  const std::size_t K = n == 0 ? 0 : batches.front().predictions.front().num_classes();
  put(kReconMagic);
  put(static_cast<std::uint32_t>(batches.size()));
  put(static_cast<std::uint32_t>(n));
  put(static_cast<std::uint32_t>(K));
  for (const ReconstructionBatch& b : batches) {
    for (const PredictionVector& p : b.predictions) {
      out.write(reinterpret_cast<const char*>(p.probs.data()),
                static_cast<std::streamsize>(K * sizeof(double)));
    }
  }
}

std::optional<std::vector<ReconstructionBatch>> load_scored(const std::string& path,
                                                           std::size_t samples, int min_n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  auto get = [&in]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  };
  if (get() != kReconMagic) return std::nullopt;
  const std::uint32_t count = get(), n = get(), K = get();
  if (!in || count != samples || static_cast<int>(n) < min_n) return std::nullopt;
  std::vector<ReconstructionBatch> out(count);
  for (ReconstructionBatch& b : out) {
    for (std::uint32_t j = 0; j < n; ++j) {
      std::vector<double> probs(K);
      in.read(reinterpret_cast<char*>(probs.data()), static_cast<std::streamsize>(K * sizeof(double)));
      b.predictions.push_back(PredictionVector::from_probs(std::move(probs)));
      b.logits.push_back(logit_score(b.predictions.back()));
    }
  }
  if (!in) return std::nullopt;
  return out;
}

}  // namespace

struct Experiment::Cache {
  std::optional<Dataset> dataset;
  std::uint64_t dataset_hash = 0;
  std::optional<SplitSpec> split;
  std::optional<ClassifierModel> classifier;
  std::uint64_t classifier_key = 0;
  std::optional<DiffusionModel> diffusion;
  std::uint64_t diffusion_key = 0;
  std::map<ListId, std::vector<PredictionVector>> originals;
  std::map<std::tuple<ListId, int, int>, std::vector<ReconstructionBatch>> scored;
  std::optional<ShadowEnsemble> shadows;
  std::map<std::string, std::vector<std::vector<PredictionVector>>> shadow_outputs;
};

Experiment::Experiment(ExperimentConfig config, std::uint64_t repeat_seed)
    : config_(std::move(config)), repeat_seed_(repeat_seed), cache_(std::make_unique<Cache>()) {
  config_.validate();
}

Experiment::~Experiment() = default;

std::uint64_t Experiment::stage_seed(std::uint64_t base, std::uint64_t tag) const {
  return derive_seed(base, {repeat_seed_, tag});
}

std::uint64_t Experiment::split_seed() const { return stage_seed(config_.split_seed, 1); }
std::uint64_t Experiment::defense_seed() const { return stage_seed(config_.defense.seed, 4); }

std::string Experiment::checkpoint_dir() const {
  const fs::path dir = fs::path(config_.output_dir) / "checkpoints";
  fs::create_directories(dir);
  return dir.string();
}

const Dataset& Experiment::dataset() {
  if (!cache_->dataset) {
    stage("data", [&] {
      cache_->dataset.emplace(load_dataset(config_.dataset));
      cache_->dataset_hash = cache_->dataset->content_hash();
      return 0;
    });
  }
  return *cache_->dataset;
}

const SplitSpec& Experiment::split() {
  if (!cache_->split) {
    const Dataset& d = dataset();
    stage("data", [&] {
      cache_->split.emplace(make_splits(d, config_.splits, split_seed()));
      validate_split(*cache_->split, d.size(), config_.splits.allow_defender_attacker_overlap);
      return 0;
    });
  }
  return *cache_->split;
}

const ClassifierModel& Experiment::classifier() {
  if (cache_->classifier) return *cache_->classifier;
  const Dataset& d = dataset();
  const SplitSpec& s = split();
  return stage("train-classifier", [&]() -> const ClassifierModel& {
    ClassifierConfig c = config_.classifier;
    c.seed = stage_seed(config_.classifier.seed, 2);
    if (config_.label_smoothing > 0.0) {
      c.hook = std::make_shared<LabelSmoothingHook>(config_.label_smoothing);
    }
    json key = config_.to_json().at("classifier");
    key["seed"] = c.seed;
    cache_->classifier_key = derive_seed(cache_->dataset_hash, {hash_ids(s.member_ids), hash_text(key.dump())});
    const std::string prefix = checkpoint_dir() + "/classifier-" + hex(cache_->classifier_key);
    if (fs::exists(prefix + ".json") && fs::exists(prefix + ".bin")) {
      cache_->classifier.emplace(ClassifierModel::load(prefix));
    } else {
      log_line("seed " + std::to_string(repeat_seed_) + ": training classifier");
      cache_->classifier.emplace(train_classifier(d, s.member_ids, c));
      cache_->classifier->save(prefix);
    }
    return *cache_->classifier;
  });
}

const DiffusionModel& Experiment::diffusion() {
  if (cache_->diffusion) return *cache_->diffusion;
  const Dataset& d = dataset();
  const SplitSpec& s = split();
  return stage("train-diffusion", [&]() -> const DiffusionModel& {
    DiffusionConfig c = config_.diffusion;
    c.seed = stage_seed(config_.diffusion.seed, 3);
    json key = config_.to_json().at("diffusion");
    key["seed"] = c.seed;
    cache_->diffusion_key = derive_seed(cache_->dataset_hash, {hash_ids(s.member_ids), hash_text(key.dump())});
    const std::string prefix = checkpoint_dir() + "/diffusion-" + hex(cache_->diffusion_key);
    if (fs::exists(prefix + ".json") && fs::exists(prefix + ".bin")) {
      cache_->diffusion.emplace(DiffusionModel::load(prefix));
    } else {
      log_line("seed " + std::to_string(repeat_seed_) + ": training diffusion model");
      cache_->diffusion.emplace(train_ddpm(d, s.member_ids, c));
      cache_->diffusion->save(prefix);
    }
    return *cache_->diffusion;
  });
}

const IdList& Experiment::ids(ListId list) {
  const SplitSpec& s = split();
  switch (list) {
    case ListId::kDefenderMember: return s.defender_member_ids;
    case ListId::kDefenderNonmember: return s.defender_nonmember_ids;
    case ListId::kKnownMember: return s.attacker_known_member_ids;
    case ListId::kKnownNonmember: return s.attacker_known_nonmember_ids;
    case ListId::kEvalMember: return s.eval_member_ids;
    case ListId::kEvalNonmember: return s.eval_nonmember_ids;
  }
  throw ArgumentError("unknown list");
}

const std::vector<PredictionVector>& Experiment::originals(ListId list) {
  auto it = cache_->originals.find(list);
  if (it == cache_->originals.end()) {
    const std::vector<Image> images = dataset().images(ids(list));
    it = cache_->originals.emplace(list, predict(classifier(), images)).first;
  }
  return it->second;
}

const std::vector<ReconstructionBatch>& Experiment::scored(ListId list, int n, int T, int k) {
  const auto key = std::make_tuple(list, T, k);
  auto it = cache_->scored.find(key);
  if (it != cache_->scored.end() && static_cast<int>(it->second.front().predictions.size()) >= n) {
    return it->second;
  }
  // Generate enough variants for every N this configuration will ask for.
  int want = std::max(n, config_.defense.N);
  for (int v : config_.sweep_N) want = std::max(want, v);
  const IdList& list_ids = ids(list);
  const Classifier& model = classifier();
  const Denoiser& dm = diffusion();
  const std::uint64_t seed = defense_seed();
  const std::uint64_t file_key =
      derive_seed(cache_->classifier_key, {cache_->diffusion_key, hash_ids(list_ids),
                                           static_cast<std::uint64_t>(T), static_cast<std::uint64_t>(k), seed});
  const std::string path = checkpoint_dir() + "/recon-" + hex(file_key) + ".bin";
  std::vector<ReconstructionBatch> batches;
  if (auto loaded = load_scored(path, list_ids.size(), want)) {
    batches = std::move(*loaded);
  } else {
    batches = stage("defend", [&] {
      log_line("seed " + std::to_string(repeat_seed_) + ": reconstructing " +
               std::to_string(list_ids.size()) + " images x " + std::to_string(want) +
               " variants at T=" + std::to_string(T));
      const std::vector<Image> images = dataset().images(list_ids);
      std::vector<std::uint64_t> seeds;
      for (const Image& x : images) seeds.push_back(query_seed(seed, x));
      return score_reconstructions(model, dm, images, want, T, k, seeds);
    });
    save_scored(path, batches);
  }
  return cache_->scored[key] = std::move(batches);
}

std::vector<SamplePool> Experiment::pools(ListId list, int n, int T, int k) {
  const auto& batches = scored(list, n, T, k);
  const auto& orig = originals(list);
  std::vector<SamplePool> out;
  out.reserve(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    ReconstructionBatch b;
    b.predictions.assign(batches[i].predictions.begin(), batches[i].predictions.begin() + n);
    b.logits.assign(batches[i].logits.begin(), batches[i].logits.begin() + n);
    out.push_back(make_pool(b, orig[i]));
  }
  return out;
}

std::optional<IntervalRecord> Experiment::fit_interval(const DefenseConfig& defense) {
  if (defense.aggregation || defense.scenario == Scenario::kRandom) return std::nullopt;
  return stage("fit-interval", [&] {
    const std::vector<SamplePool> mem = pools(ListId::kDefenderMember, defense.N, defense.T, defense.k);
    const std::vector<SamplePool> non = pools(ListId::kDefenderNonmember, defense.N, defense.T, defense.k);
    IntervalRecord r;
    r.scenario = defense.scenario;
    r.N = defense.N;
    r.T = defense.T;
    r.k = defense.k;
    r.grid = defense.grid;
    r.calibration_hash = derive_seed(cache_->classifier_key,
                                     {cache_->diffusion_key, hash_ids(ids(ListId::kDefenderMember)),
                                      hash_ids(ids(ListId::kDefenderNonmember)), defense_seed()});
    if (defense.scenario == Scenario::kFitted) {
      const FittedInterval f = fit_interval_scenario1(mem, non, defense.grid, defense.fallback);
      r.interval = f.interval;
      r.js_value = f.js;
    } else {
      r.interval = fit_interval_scenario2(candidate_logits(mem));
      r.js_value = selection_js(mem, non, r.interval, defense.fallback, defense.grid.num_bins);
    }
    return r;
  });
}

std::vector<Selection> Experiment::defended(ListId list, const DefenseConfig& defense,
                                            const std::optional<SelectionInterval>& interval) {
  DefenseConfig d = defense;
  d.seed = defense_seed();
  const Defender defender(classifier(), diffusion(), d, interval);
  const auto& batches = scored(list, d.N, d.T, d.k);
  const auto& orig = originals(list);
  const IdList& list_ids = ids(list);
  std::vector<Selection> out;
  out.reserve(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Image& x = dataset()[list_ids[i]].image;
    out.push_back(defender.select(batches[i], orig[i], selection_seed(d.seed, x)));
  }
  return out;
}

TargetOutputs Experiment::target_outputs(TargetKind kind, const DefenseConfig& defense,
                                         const std::optional<SelectionInterval>& interval) {
  TargetOutputs t;
  t.target_id = to_string(kind);
  const RoundingStage rounding(config_.cascade_round_decimals);
  auto outputs = [&](ListId list) {
    if (kind == TargetKind::kUndefended) return originals(list);
    std::vector<PredictionVector> preds;
    for (Selection& s : defended(list, defense, interval)) {
      preds.push_back(kind == TargetKind::kCascaded ? rounding.apply(s.prediction) : std::move(s.prediction));
    }
    return preds;
  };
  auto fill = [&](LabeledOutputs& o, ListId mem, ListId non) {
    for (ListId list : {mem, non}) {
      std::vector<PredictionVector> preds = outputs(list);
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::size_t id = ids(list)[i];
        o.ids.push_back(id);
        o.labels.push_back(dataset()[id].label);
        o.is_member.push_back(list == mem ? 1 : 0);
        o.preds.push_back(std::move(preds[i]));
      }
    }
  };
  t.data.num_classes = dataset().num_classes();
  fill(t.data.known, ListId::kKnownMember, ListId::kKnownNonmember);
  fill(t.data.eval, ListId::kEvalMember, ListId::kEvalNonmember);
  for (std::size_t i = 0; i < t.data.eval.ids.size(); ++i) {
    const double v = logit_score(t.data.eval.preds[i]);
    (t.data.eval.is_member[i] ? t.eval_member_logits : t.eval_nonmember_logits).push_back(v);
  }
  return t;
}

const ShadowEnsemble& Experiment::shadows() {
  if (cache_->shadows) return *cache_->shadows;
  return stage("attack", [&]() -> const ShadowEnsemble& {
    const SplitSpec& s = split();
    IdList pool;
    for (const IdList* l : {&s.eval_member_ids, &s.eval_nonmember_ids, &s.attacker_known_member_ids,
                            &s.attacker_known_nonmember_ids}) {
      pool.insert(pool.end(), l->begin(), l->end());
    }
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    ClassifierConfig c = config_.classifier;
    if (config_.lira_epochs > 0) c.epochs = config_.lira_epochs;
    log_line("seed " + std::to_string(repeat_seed_) + ": training " +
             std::to_string(config_.lira_shadows) + " shadow models");
    cache_->shadows.emplace(
        train_shadows(dataset(), pool, config_.lira_shadows, c, stage_seed(config_.classifier.seed, 5)));
    return *cache_->shadows;
  });
}

AttackScores Experiment::run_attack(const std::string& attack_id, TargetKind kind,
                                    const TargetOutputs& outputs, const DefenseConfig& defense,
                                    const std::optional<SelectionInterval>& interval) {
  return stage("attack", [&] {
    if (is_metric_attack(attack_id)) {
      return metric_attack(parse_metric(attack_id), outputs.data, config_.per_class_thresholds,
                           outputs.target_id)
          .scores;
    }
    if (attack_id == "nn") {
      NnAttackConfig c = config_.nn_attack;
      c.seed = stage_seed(config_.nn_attack.seed, 6);
      return nn_attack_scores(outputs.data, c, outputs.target_id);
    }
    if (attack_id != "lira_online" && attack_id != "lira_offline") {
      throw ConfigError("unknown attack '" + attack_id + "'");
    }
    const ShadowEnsemble& ens = shadows();
    const LabeledOutputs& eval = outputs.data.eval;
    const std::string cache_key = outputs.target_id + "/" + std::to_string(defense.N) + "/" +
                                  std::to_string(defense.T) + "/" +
                                  (interval ? plots::fmt(interval->lo) + ":" + plots::fmt(interval->hi) : "-");
    auto found = cache_->shadow_outputs.find(cache_key);
    if (found == cache_->shadow_outputs.end()) {
      std::vector<std::vector<PredictionVector>> per_model(ens.models.size());
      const std::vector<Image> images = dataset().images(eval.ids);
      if (kind == TargetKind::kUndefended) {
        for (std::size_t m = 0; m < ens.models.size(); ++m) per_model[m] = predict(ens.models[m], images);
      } else {
        // The attacker wraps each shadow in the deployed defence, with its
        // own randomness.
        DefenseConfig d = defense;
        d.seed = stage_seed(config_.defense.seed, 7);
        const RoundingStage rounding(config_.cascade_round_decimals);
        std::vector<std::uint64_t> seeds;
        for (const Image& x : images) seeds.push_back(query_seed(d.seed, x));
        constexpr std::size_t kChunk = 16;
        for (std::size_t start = 0; start < images.size(); start += kChunk) {
          const std::size_t n = std::min(kChunk, images.size() - start);
          const std::span<const Image> part(images.data() + start, n);
          const std::vector<ReconstructionBatch> recon =
              reconstruct_many(diffusion(), part, d.T, d.k, d.N,
                               std::span<const std::uint64_t>(seeds.data() + start, n));
          for (std::size_t m = 0; m < ens.models.size(); ++m) {
            const Defender defender(ens.models[m], diffusion(), d, interval);
            const std::vector<PredictionVector> orig = predict(ens.models[m], part);
            for (std::size_t i = 0; i < n; ++i) {
              ReconstructionBatch b;
              b.predictions = predict(ens.models[m], recon[i].variants);
              for (const PredictionVector& p : b.predictions) b.logits.push_back(logit_score(p));
              PredictionVector p =
                  defender.select(b, orig[i], selection_seed(d.seed, part[i])).prediction;
              per_model[m].push_back(kind == TargetKind::kCascaded ? rounding.apply(p) : std::move(p));
            }
          }
        }
      }
      found = cache_->shadow_outputs.emplace(cache_key, std::move(per_model)).first;
    }
    const ShadowObservations obs = collect_observations(ens, eval, found->second);
    return lira_scores(obs, eval,
                       attack_id == "lira_online" ? LiraVariant::kOnline : LiraVariant::kOffline,
                       outputs.target_id);
  });
}

namespace {

std::string seed_tag(const Experiment& e) { return "seed" + std::to_string(e.repeat_seed()); }

fs::path out_dir(const ExperimentConfig& c, const std::string& sub) {
  const fs::path p = fs::path(c.output_dir) / sub;
  fs::create_directories(p);
  return p;
}

}  // namespace

SeedReport run_seed(Experiment& e) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = e.config();
  SeedReport r;
  r.repeat_seed = e.repeat_seed();
  const Dataset& d = e.dataset();
  const SplitSpec& s = e.split();
  write_json((out_dir(cfg, "splits") / (seed_tag(e) + ".json")).string(), s);

  const ClassifierModel& model = e.classifier();
  r.train_accuracy = stage("evaluate", [&] { return evaluate_accuracy(model, s.member_ids, d); });
  r.test_accuracy = stage("evaluate", [&] { return evaluate_accuracy(model, s.nonmember_ids, d); });
  r.gap_attack = gap_attack_accuracy(r.train_accuracy, r.test_accuracy);

  DefenseConfig defense = cfg.defense;
  defense.seed = e.defense_seed();
  const bool needs_defense = std::any_of(cfg.targets.begin(), cfg.targets.end(),
                                         [](const std::string& t) { return t != "undefended"; });
  std::optional<SelectionInterval> interval;
  if (needs_defense) {
    e.diffusion();
    r.interval = e.fit_interval(defense);
    if (r.interval) {
      interval = r.interval->interval;
      write_json((out_dir(cfg, "intervals") / (seed_tag(e) + ".json")).string(), *r.interval);
    }
  }

  const fs::path metrics_dir = out_dir(cfg, "metrics");
  const fs::path plots_dir = out_dir(cfg, "plots");
  std::vector<AttackScores> all_scores;
  std::vector<PredictionVector> undefended_eval;
  for (const std::string& target_name : cfg.targets) {
    const TargetKind kind = parse_target(target_name);
    const TargetOutputs out = e.target_outputs(kind, defense, interval);
    if (kind == TargetKind::kUndefended || undefended_eval.empty()) {
      undefended_eval = e.target_outputs(TargetKind::kUndefended, defense, interval).data.eval.preds;
    }

    UtilityRow u;
    u.target_id = target_name;
    const LabeledOutputs& ev = out.data.eval;
    std::size_t ok_m = 0, ok_n = 0, nm = 0, nn = 0;
    for (std::size_t i = 0; i < ev.ids.size(); ++i) {
      const bool ok = ev.preds[i].predicted_label == ev.labels[i];
      if (ev.is_member[i]) {
        ++nm;
        ok_m += ok;
      } else {
        ++nn;
        ok_n += ok;
      }
      if (ev.preds[i].predicted_label != undefended_eval[i].predicted_label) ++u.label_mismatches;
    }
    u.member_accuracy = static_cast<double>(ok_m) / static_cast<double>(nm);
    u.nonmember_accuracy = static_cast<double>(ok_n) / static_cast<double>(nn);
    u.eval_accuracy = static_cast<double>(ok_m + ok_n) / static_cast<double>(nm + nn);
    std::size_t ok_u = 0;
    for (std::size_t i = 0; i < ev.ids.size(); ++i) ok_u += undefended_eval[i].predicted_label == ev.labels[i];
    u.undefended_eval_accuracy = static_cast<double>(ok_u) / static_cast<double>(ev.ids.size());
    r.utility.push_back(u);
    r.eval_js[target_name] = js_between(out.eval_member_logits, out.eval_nonmember_logits, kJsBins);

    std::vector<plots::Series> roc_series;
    std::vector<std::vector<std::string>> roc_rows;
    for (const std::string& attack : cfg.attacks) {
      AttackScores scores = e.run_attack(attack, kind, out, defense, interval);
      const MetricBundle b = compute_metrics(scores);
      write_json((metrics_dir / (seed_tag(e) + "_" + attack + "_" + target_name + ".json")).string(), b);
      r.bundles.push_back(b);
      if (parse_target(target_name) == kind && attack != "nn" && attack.rfind("lira", 0) != 0) {
        const MetricAttackResult m = metric_attack(parse_metric(attack), out.data, cfg.per_class_thresholds, target_name);
        r.calibrated_accuracy[attack + "/" + target_name] = m.calibrated_accuracy;
      }
      plots::Series roc{attack, {}, {}};
      for (const RocPoint& p : roc_curve(scores)) {
        roc.x.push_back(p.fpr);
        roc.y.push_back(p.tpr);
        roc_rows.push_back({attack, plots::fmt(p.fpr), plots::fmt(p.tpr)});
      }
      roc_series.push_back(std::move(roc));
      all_scores.push_back(std::move(scores));
    }

    if (cfg.plots) {
      const std::string base = (plots_dir / (seed_tag(e) + "_")).string();
      const double floor = 1.0 / static_cast<double>(std::max<std::size_t>(1, out.eval_nonmember_logits.size()));
      plots::line_svg(base + "roc_" + target_name + ".svg",
                      {"ROC (" + target_name + ")", "false positive rate", "true positive rate", true, true,
                       floor, floor},
                      roc_series);
      plots::write_csv(base + "roc_" + target_name + ".csv", {"attack", "fpr", "tpr"}, roc_rows);
      plots::histogram_svg(base + "logits_" + target_name + ".svg",
                           {"Logit of returned confidence (" + target_name + ")", "logit", "share"},
                           {{"members", out.eval_member_logits, {}}, {"non-members", out.eval_nonmember_logits, {}}},
                           kJsBins);
      std::vector<std::vector<std::string>> rows;
      for (double v : out.eval_member_logits) rows.push_back({"1", plots::fmt(v)});
      for (double v : out.eval_nonmember_logits) rows.push_back({"0", plots::fmt(v)});
      plots::write_csv(base + "logits_" + target_name + ".csv", {"is_member", "logit"}, rows);
      for (const char* kind_name : {"roc_", "logits_"}) {
        r.plot_files.push_back(base + kind_name + target_name + ".svg");
      }
    }
  }
  write_scores_csv((out_dir(cfg, "tables") / ("scores_" + seed_tag(e) + ".csv")).string(), all_scores);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double Report::best_auc(const std::string& target_id) const {
  double best = 0.0;
  for (const SummaryRow& s : summary) {
    if (s.target_id == target_id) best = std::max(best, s.auc_mean);
  }
  return best;
}

double Report::best_accuracy(const std::string& target_id) const {
  double best = 0.0;
  for (const SummaryRow& s : summary) {
    if (s.target_id == target_id) best = std::max(best, s.accuracy_mean);
  }
  return best;
}

namespace {

std::vector<SummaryRow> summarise(const std::vector<SeedReport>& seeds) {
  std::map<std::pair<std::string, std::string>, std::vector<const MetricBundle*>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const SeedReport& s : seeds) {
    for (const MetricBundle& b : s.bundles) {
      const auto key = std::make_pair(b.attack_id, b.target_id);
      if (!groups.contains(key)) order.push_back(key);
      groups[key].push_back(&b);
    }
  }
  auto mean_std = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
  };
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    std::vector<double> aucs, accs;
    for (const MetricBundle* b : groups[key]) {
      aucs.push_back(b->auc);
      accs.push_back(b->attack_accuracy);
    }
    SummaryRow row;
    row.attack_id = key.first;
    row.target_id = key.second;
    std::tie(row.auc_mean, row.auc_std) = mean_std(aucs);
    std::tie(row.accuracy_mean, row.accuracy_std) = mean_std(accs);
    row.runs = aucs.size();
    out.push_back(row);
  }
  return out;
}

json seed_json(const SeedReport& s) {
  json j = {{"repeat_seed", s.repeat_seed},
            {"train_accuracy", s.train_accuracy},
            {"test_accuracy", s.test_accuracy},
            {"gap_attack_accuracy", s.gap_attack},
            {"bundles", s.bundles},
            {"calibrated_accuracy", s.calibrated_accuracy},
            {"eval_js", s.eval_js},
            {"plots", s.plot_files},
            {"seconds", s.seconds}};
  if (s.interval) j["interval"] = *s.interval;
  json util = json::array();
  for (const UtilityRow& u : s.utility) {
    util.push_back({{"target_id", u.target_id},
                    {"member_accuracy", u.member_accuracy},
                    {"nonmember_accuracy", u.nonmember_accuracy},
                    {"eval_accuracy", u.eval_accuracy},
                    {"undefended_eval_accuracy", u.undefended_eval_accuracy},
                    {"label_mismatches", u.label_mismatches}});
  }
  j["utility"] = util;
  return j;
}

}  // namespace

Report run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
  Report report;
  json seeds = json::array();
  for (std::uint64_t seed : config.repeat_seeds) {
    Experiment e(config, seed);
    report.seeds.push_back(run_seed(e));
    json sj = seed_json(report.seeds.back());
    sj["split_hash"] = e.split().hash();
    sj["split_seed"] = e.split_seed();
    seeds.push_back(sj);
  }
  report.summary = summarise(report.seeds);

  const fs::path tables = out_dir(config, "tables");
  std::vector<std::vector<std::string>> metric_rows, util_rows, summary_rows, js_rows;
  for (const SeedReport& s : report.seeds) {
    for (const MetricBundle& b : s.bundles) {
      const auto cal = s.calibrated_accuracy.find(b.attack_id + "/" + b.target_id);
      metric_rows.push_back({std::to_string(s.repeat_seed), b.attack_id, b.target_id, plots::fmt(b.auc),
                             plots::fmt(b.attack_accuracy), plots::fmt(b.tpr_at_fpr001),
                             plots::fmt(b.tnr_at_fnr001),
                             cal == s.calibrated_accuracy.end() ? "" : plots::fmt(cal->second)});
    }
    for (const UtilityRow& u : s.utility) {
      util_rows.push_back({std::to_string(s.repeat_seed), u.target_id, plots::fmt(u.member_accuracy),
                           plots::fmt(u.nonmember_accuracy), plots::fmt(u.eval_accuracy),
                           plots::fmt(u.eval_accuracy - u.undefended_eval_accuracy),
                           std::to_string(u.label_mismatches)});
    }
    for (const auto& [target, js] : s.eval_js) {
      js_rows.push_back({std::to_string(s.repeat_seed), target, plots::fmt(js)});
    }
  }
  for (const SummaryRow& row : report.summary) {
    summary_rows.push_back({row.attack_id, row.target_id, plots::fmt(row.auc_mean), plots::fmt(row.auc_std),
                            plots::fmt(row.accuracy_mean), plots::fmt(row.accuracy_std),
                            std::to_string(row.runs)});
  }
  plots::write_csv((tables / "metrics.csv").string(),
                   {"seed", "attack", "target", "auc", "attack_accuracy", "tpr_at_fpr001", "tnr_at_fnr001",
                    "calibrated_accuracy"},
                   metric_rows);
  plots::write_csv((tables / "utility.csv").string(),
                   {"seed", "target", "member_accuracy", "nonmember_accuracy", "eval_accuracy",
                    "accuracy_delta", "label_mismatches"},
                   util_rows);
  plots::write_csv((tables / "summary.csv").string(),
                   {"attack", "target", "auc_mean", "auc_std", "accuracy_mean", "accuracy_std", "runs"},
                   summary_rows);
  plots::write_csv((tables / "js.csv").string(), {"seed", "target", "js"}, js_rows);

  json summary = json::array();
  for (const SummaryRow& row : report.summary) {
    summary.push_back({{"attack_id", row.attack_id},
                       {"target_id", row.target_id},
                       {"auc_mean", row.auc_mean},
                       {"auc_std", row.auc_std},
                       {"accuracy_mean", row.accuracy_mean},
                       {"accuracy_std", row.accuracy_std},
                       {"runs", row.runs}});
  }
  json headline = json::object();
  for (const std::string& t : config.targets) {
    headline[t] = {{"best_auc", report.best_auc(t)}, {"best_accuracy", report.best_accuracy(t)}};
  }
  write_json((fs::path(config.output_dir) / "manifest.json").string(),
             {{"config", config.to_json()},
              {"js", {{"log_base", 2}, {"bins", kJsBins}, {"smoothing", kJsSmoothing}}},
              {"seeds", seeds},
              {"summary", summary},
              {"headline", headline}});
  return report;
}

BestAttack best_defended_attack(Experiment& e, const DefenseConfig& defense,
                                const std::optional<SelectionInterval>& interval,
                                const std::vector<std::string>& attacks) {
  const TargetOutputs out = e.target_outputs(TargetKind::kDefended, defense, interval);
  BestAttack best;
  for (const std::string& a : attacks) {
    const AttackScores s = e.run_attack(a, TargetKind::kDefended, out, defense, interval);
    const double auc = roc_auc(s);
    if (auc > best.auc) {
      best.auc = auc;
      best.auc_attack = a;
    }
    best.accuracy = std::max(best.accuracy, best_threshold_accuracy(s));
  }
  return best;
}

std::vector<SweepCell> sweep_nt(Experiment& e, const std::vector<int>& N_values,
                                const std::vector<int>& T_values) {
  const ExperimentConfig& cfg = e.config();
  std::vector<SweepCell> cells;
  for (int N : N_values) {
    for (int T : T_values) {
      if (T < 1 || T > cfg.diffusion.T_max) {
        throw ArgumentError("sweep T=" + std::to_string(T) + " outside [1, T_max]");
      }
      DefenseConfig d = cfg.defense;
      d.scenario = Scenario::kFitted;
      d.aggregation = false;
      d.N = N;
      d.T = T;
      d.k = std::min(cfg.defense.k, T);
      d.seed = e.defense_seed();
      const std::optional<IntervalRecord> rec = e.fit_interval(d);
      SweepCell c;
      c.N = N;
      c.T = T;
      c.interval_lo = rec->interval.lo;
      c.interval_hi = rec->interval.hi;
      c.best = best_defended_attack(e, d, rec->interval, cfg.attacks);
      cells.push_back(c);
    }
  }
  const fs::path tables = out_dir(cfg, "tables");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::vector<double>> grid;
  std::vector<std::string> row_labels, col_labels;
  for (int T : T_values) col_labels.push_back("T=" + std::to_string(T));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& c = cells[i];
    rows.push_back({std::to_string(e.repeat_seed()), std::to_string(c.N), std::to_string(c.T),
                    plots::fmt(c.interval_lo), plots::fmt(c.interval_hi), plots::fmt(c.best.auc),
                    plots::fmt(c.best.accuracy), c.best.auc_attack});
    if (i % T_values.size() == 0) {
      grid.emplace_back();
      row_labels.push_back("N=" + std::to_string(c.N));
    }
    grid.back().push_back(c.best.auc);
  }
  plots::write_csv((tables / ("sweep_" + seed_tag(e) + ".csv")).string(),
                   {"seed", "N", "T", "lo", "hi", "best_auc", "best_accuracy", "best_auc_attack"}, rows);
  if (cfg.plots && !cells.empty()) {
    plots::heatmap_svg((out_dir(cfg, "plots") / ("sweep_auc_" + seed_tag(e) + ".svg")).string(),
                       "Best attack AUC over N and T", row_labels, col_labels, grid);
  }
  return cells;
}

std::vector<SelectionInterval> scan_candidates(Experiment& e, int count) {
  if (count < 1) throw ArgumentError("scan needs at least one interval");
  DefenseConfig d = e.config().defense;
  d.seed = e.defense_seed();
  const std::vector<SamplePool> mem = e.pools(ListId::kDefenderMember, d.N, d.T, d.k);
  const std::vector<SamplePool> non = e.pools(ListId::kDefenderNonmember, d.N, d.T, d.k);
  const FittedInterval fit = fit_interval_scenario1(mem, non, d.grid, d.fallback);
  if (fit.degenerate) return {fit.interval};
  std::vector<std::pair<double, SelectionInterval>> all;
  for (std::size_t i = 0; i < fit.grid.size(); ++i) {
    for (std::size_t j = i + 1; j < fit.grid.size(); ++j) {
      const SelectionInterval iv{fit.grid[i], fit.grid[j]};
      if (iv == fit.interval) continue;
      all.emplace_back(selection_js(mem, non, iv, d.fallback, d.grid.num_bins), iv);
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<SelectionInterval> out{fit.interval};
  const int extra = std::min<int>(count - 1, static_cast<int>(all.size()));
  for (int q = 1; q <= extra; ++q) {
    // Evenly spaced ranks across the JS-sorted list, ending at the worst.
    const std::size_t idx = static_cast<std::size_t>(
        std::llround(static_cast<double>(q) * static_cast<double>(all.size() - 1) / extra));
    out.push_back(all[idx].second);
  }
  return out;
}

std::vector<ScanRow> interval_js_scan(Experiment& e, const std::vector<SelectionInterval>& intervals) {
  const ExperimentConfig& cfg = e.config();
  DefenseConfig d = cfg.defense;
  d.scenario = Scenario::kFitted;
  d.aggregation = false;
  d.seed = e.defense_seed();
  const std::vector<SamplePool> mem = e.pools(ListId::kDefenderMember, d.N, d.T, d.k);
  const std::vector<SamplePool> non = e.pools(ListId::kDefenderNonmember, d.N, d.T, d.k);
  std::vector<ScanRow> rows;
  for (const SelectionInterval& iv : intervals) {
    ScanRow r;
    r.interval = iv;
    r.js = selection_js(mem, non, iv, d.fallback, d.grid.num_bins);
    const TargetOutputs out = e.target_outputs(TargetKind::kDefended, d, iv);
    r.eval_js = js_between(out.eval_member_logits, out.eval_nonmember_logits, kJsBins);
    r.best = best_defended_attack(e, d, iv, cfg.attacks);
    rows.push_back(r);
  }
  std::vector<std::vector<std::string>> csv;
  plots::Series auc{"best AUC", {}, {}}, acc{"best accuracy", {}, {}};
  for (const ScanRow& r : rows) {
    csv.push_back({std::to_string(e.repeat_seed()), plots::fmt(r.interval.lo), plots::fmt(r.interval.hi),
                   plots::fmt(r.js), plots::fmt(r.eval_js), plots::fmt(r.best.auc), plots::fmt(r.best.accuracy)});
    auc.x.push_back(r.js);
    auc.y.push_back(r.best.auc);
    acc.x.push_back(r.js);
    acc.y.push_back(r.best.accuracy);
  }
  plots::write_csv((out_dir(cfg, "tables") / ("interval_scan_" + seed_tag(e) + ".csv")).string(),
                   {"seed", "lo", "hi", "js", "eval_js", "best_auc", "best_accuracy"}, csv);
  if (cfg.plots && !rows.empty()) {
    plots::scatter_svg((out_dir(cfg, "plots") / ("interval_scan_" + seed_tag(e) + ".svg")).string(),
                       {"Attack strength against selection JS", "JS divergence (defender pools)", "metric"},
                       {auc, acc});
  }
  return rows;
}

KeepGeneratingSummary keep_generating_ablation(Experiment& e) {
  const ExperimentConfig& cfg = e.config();
  DefenseConfig d = cfg.defense;
  d.scenario = Scenario::kFitted;
  d.aggregation = false;
  d.T = cfg.keep_generating_T > 0 ? cfg.keep_generating_T : cfg.defense.T;
  d.k = std::min(cfg.defense.k, d.T);
  d.seed = e.defense_seed();
  const IntervalRecord rec = *e.fit_interval(d);

  KeepGeneratingSummary s;
  s.interval = rec.interval;
  s.T = d.T;
  s.max_iters = cfg.keep_generating_iters;
  std::size_t inside = 0, total = 0;
  for (ListId list : {ListId::kDefenderMember, ListId::kDefenderNonmember}) {
    for (const SamplePool& p : e.pools(list, d.N, d.T, d.k)) {
      for (double v : p.candidate_logits) inside += rec.interval.contains(v) ? 1 : 0;
      total += p.candidate_logits.size();
    }
  }
  s.candidate_coverage = total == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(total);

  std::vector<Image> images;
  for (ListId list : {ListId::kEvalMember, ListId::kEvalNonmember}) {
    for (Image& x : e.dataset().images(e.ids(list))) images.push_back(std::move(x));
  }
  const std::uint64_t base = derive_seed(d.seed, {0x4b47454eULL});
  std::vector<std::uint64_t> seeds;
  for (const Image& x : images) seeds.push_back(query_seed(base, x));
  const std::vector<KeepGenerating> runs = stage("keep-generating", [&] {
    return keep_generating_many(images, e.classifier(), e.diffusion(), rec.interval, s.max_iters, d.T, d.k,
                                seeds);
  });
  s.samples = runs.size();
  std::vector<std::size_t> hits_by(static_cast<std::size_t>(s.max_iters), 0);
  for (const KeepGenerating& r : runs) {
    if (r.hit && r.n_generations == 1) ++s.first_hit;
    if (!(r.hit && r.n_generations == 1)) {
      ++s.initially_missing;
      if (r.hit) ++s.later_hit;
    }
    if (r.hit) ++hits_by[static_cast<std::size_t>(r.n_generations - 1)];
  }
  std::size_t cum = 0;
  for (std::size_t i = 0; i < hits_by.size(); ++i) {
    cum += hits_by[i];
    s.cdf.push_back(static_cast<double>(cum) / static_cast<double>(s.samples));
  }
  std::vector<std::vector<std::string>> rows;
  plots::Series series{"[" + plots::fmt(s.interval.lo) + ", " + plots::fmt(s.interval.hi) + "]", {}, {}};
  for (std::size_t i = 0; i < s.cdf.size(); ++i) {
    rows.push_back({std::to_string(i + 1), plots::fmt(s.cdf[i])});
    series.x.push_back(static_cast<double>(i + 1));
    series.y.push_back(s.cdf[i]);
  }
  plots::write_csv((out_dir(cfg, "tables") / ("keep_generating_" + seed_tag(e) + ".csv")).string(),
                   {"generations", "cdf"}, rows);
  if (cfg.plots) {
    series.x.insert(series.x.begin(), 0.0);
    series.y.insert(series.y.begin(), 0.0);
    plots::line_svg((out_dir(cfg, "plots") / ("keep_generating_cdf_" + seed_tag(e) + ".svg")).string(),
                    {"Samples inside the interval by generation", "generations", "share of samples"},
                    {series});
  }
  return s;
}

LatencyStats measure_latency(Experiment& e, TargetKind kind, int N, int n_queries) {
  if (n_queries < 10) throw ArgumentError("latency needs at least 10 queries");
  const ExperimentConfig& cfg = e.config();
  const IdList& ids = e.ids(ListId::kEvalNonmember);
  if (ids.empty()) throw ArgumentError("latency needs eval images");
  DefenseConfig d = cfg.defense;
  d.N = N;
  d.seed = e.defense_seed();
  std::unique_ptr<Classifier> target;
  if (kind == TargetKind::kUndefended) {
    target = attack_target(kind, e.classifier(), {});
  } else {
    Deployment dep;
    dep.dmodel = &e.diffusion();
    dep.defense = d;
    if (const auto rec = e.fit_interval(d)) dep.interval = rec->interval;
    dep.post_stages.push_back(std::make_shared<RoundingStage>(cfg.cascade_round_decimals));
    target = attack_target(kind, e.classifier(), dep);
  }
  std::vector<double> ms;
  for (int q = 0; q < n_queries; ++q) {
    const Image& x = e.dataset()[ids[static_cast<std::size_t>(q) % ids.size()]].image;
    const auto t0 = std::chrono::steady_clock::now();
    predict_one(*target, x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  LatencyStats s;
  s.target_id = to_string(kind);
  s.N = kind == TargetKind::kUndefended ? 0 : N;
  s.queries = n_queries;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
  s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

}  // namespace reconguard
