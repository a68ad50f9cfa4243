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

#include "reconguard/classifier.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "reconguard/errors.h"
#include "reconguard/nn/layers.h"
#include "reconguard/nn/ops.h"
#include "reconguard/random.h"

namespace reconguard {

using nn::Tensor;
using nn::Var;

class ClassifierNet {
 public:
  ClassifierNet(const ClassifierManifest& m, Rng& rng) : manifest_(m) {
    ImageShape s = m.input_shape;
    int c_in = s.channels, h = s.height, w = s.width;
    if (m.architecture == "cnn") {
      if (m.channels.empty()) throw ArgumentError("cnn needs at least one conv block");
      for (int c : m.channels) {
        if (c < 1) throw ArgumentError("conv widths must be positive");
        convs_.emplace_back(c_in, c, 3, rng);
        const bool pool = h >= 4 && h % 2 == 0 && w >= 4 && w % 2 == 0;
        pools_.push_back(pool);
        if (pool) h /= 2, w /= 2;
        c_in = c;
      }
      flat_ = c_in * h * w;
    } else if (m.architecture == "mlp") {
      flat_ = static_cast<int>(s.size());
    } else {
      throw ArgumentError("unknown classifier architecture '" + m.architecture + "'");
    }
    if (m.hidden < 1) throw ArgumentError("hidden width must be positive");
    fc1_ = nn::Linear(flat_, m.hidden, rng);
    fc2_ = nn::Linear(m.hidden, m.num_classes, rng);
    for (const auto& c : convs_) params_.add(c);
    params_.add(fc1_);
    params_.add(fc2_);
  }

  Var forward(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = nn::relu(convs_[i](h));
      if (pools_[i]) h = nn::max_pool2(h);
    }
    const int batch = x.value().dim(0);
    h = nn::reshape(h, {batch, flat_});
    h = nn::relu(fc1_(h));
    return fc2_(h);
  }

  nn::ParameterList& params() { return params_; }
  const nn::ParameterList& params() const { return params_; }

 private:
  ClassifierManifest manifest_;
  std::vector<nn::Conv2d> convs_;
  std::vector<bool> pools_;
  nn::Linear fc1_, fc2_;
  int flat_ = 0;
  nn::ParameterList params_;
};

namespace {

constexpr std::size_t kPredictChunk = 256;

ClassifierManifest manifest_from(const ClassifierConfig& c, ImageShape shape, int num_classes) {
  ClassifierManifest m;
  m.architecture = c.architecture;
  m.num_classes = num_classes;
  m.input_shape = shape;
  m.channels = c.channels;
  m.hidden = c.hidden;
  m.epochs = c.epochs;
  m.lr = c.lr;
  m.weight_decay = c.weight_decay;
  m.batch_size = c.batch_size;
  m.seed = c.seed;
  m.hook = c.hook ? c.hook->name() : "";
  return m;
}

nlohmann::json manifest_json(const ClassifierManifest& m) {
  return {{"architecture", m.architecture},
          {"num_classes", m.num_classes},
          {"input_shape", {m.input_shape.height, m.input_shape.width, m.input_shape.channels}},
          {"channels", m.channels},
          {"hidden", m.hidden},
          {"epochs", m.epochs},
          {"lr", m.lr},
          {"weight_decay", m.weight_decay},
          {"batch_size", m.batch_size},
          {"seed", m.seed},
          {"split_hash", m.split_hash},
          {"hook", m.hook},
          {"epoch_loss", m.epoch_loss}};
}

}  // namespace

PredictionVector PredictionVector::from_probs(std::vector<double> probs) {
  PredictionVector p;
  p.predicted_label = argmax(probs);
  p.probs = std::move(probs);
  return p;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax of empty vector");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

double clamp_prob(double p) { return std::clamp(p, kProbFloor, kProbCeil); }

std::vector<PredictionVector> predict(const Classifier& model, std::span<const Image> images) {
  const std::size_t expected = model.input_shape().size();
  for (const Image& img : images) {
    if (img.size() != expected) {
      throw ArgumentError("image has " + std::to_string(img.size()) + " values, model expects " +
                          std::to_string(expected));
    }
  }
  return model.predict_batch(images);
}

PredictionVector predict_one(const Classifier& model, const Image& image) {
  return predict(model, std::span<const Image>(&image, 1)).front();
}

LabelSmoothingHook::LabelSmoothingHook(double epsilon) : epsilon_(epsilon) {
  if (epsilon < 0.0 || epsilon >= 1.0) throw ArgumentError("label smoothing epsilon in [0, 1)");
}

std::string LabelSmoothingHook::name() const {
  std::ostringstream os;
  os << "label_smoothing(" << epsilon_ << ")";
  return os.str();
}

void LabelSmoothingHook::adjust_targets(nn::Tensor& targets) const {
  const int K = targets.dim(1);
  for (float& v : targets.values()) {
    v = static_cast<float>((1.0 - epsilon_) * v + epsilon_ / K);
  }
}

Tensor images_to_nchw(std::span<const Image* const> images, const ImageShape& shape) {
  const int n = static_cast<int>(images.size());
  const int H = shape.height, W = shape.width, C = shape.channels;
  Tensor t({n, C, H, W});
  for (int i = 0; i < n; ++i) {
    const Image& img = *images[static_cast<std::size_t>(i)];
    float* dst = t.data() + static_cast<std::size_t>(i) * C * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < C; ++c) {
          dst[(c * H + y) * W + x] = img[(static_cast<std::size_t>(y) * W + x) * C + c];
        }
      }
    }
  }
  return t;
}

Tensor images_to_nchw(std::span<const Image> images, const ImageShape& shape) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const Image& img : images) ptrs.push_back(&img);
  return images_to_nchw(std::span<const Image* const>(ptrs), shape);
}

ClassifierModel::ClassifierModel(const ClassifierConfig& config, ImageShape input_shape,
                                 int num_classes)
    : manifest_(manifest_from(config, input_shape, num_classes)) {
  if (num_classes < 2) throw ArgumentError("classifier needs at least two classes");
  Rng rng(derive_seed(config.seed, {0x434c53ULL}));
  net_ = std::make_unique<ClassifierNet>(manifest_, rng);
}

ClassifierModel::~ClassifierModel() = default;
ClassifierModel::ClassifierModel(ClassifierModel&&) noexcept = default;
ClassifierModel& ClassifierModel::operator=(ClassifierModel&&) noexcept = default;

Var ClassifierModel::logits(const Var& batch) const {
  // Pixels enter the network in [-1, 1].
  Tensor x = batch.value();
  for (float& v : x.values()) v = 2.0f * v - 1.0f;
  return net_->forward(Var(std::move(x)));
}

std::vector<Var> ClassifierModel::parameters() const { return net_->params().params(); }

std::vector<PredictionVector> ClassifierModel::predict_batch(std::span<const Image> images) const {
  nn::NoGradGuard no_grad;
  std::vector<PredictionVector> out;
  out.reserve(images.size());
  const int K = manifest_.num_classes;
  for (std::size_t start = 0; start < images.size(); start += kPredictChunk) {
    const std::size_t n = std::min(kPredictChunk, images.size() - start);
    const Var z = logits(Var(images_to_nchw(images.subspan(start, n), manifest_.input_shape)));
    for (std::size_t r = 0; r < n; ++r) {
      const float* row = z.value().data() + r * K;
      const double zmax = *std::max_element(row, row + K);
      std::vector<double> p(static_cast<std::size_t>(K));
      double denom = 0.0;
      for (int c = 0; c < K; ++c) denom += p[c] = std::exp(static_cast<double>(row[c]) - zmax);
      for (double& v : p) v /= denom;
      out.push_back(PredictionVector::from_probs(std::move(p)));
    }
  }
  return out;
}

void ClassifierModel::save(const std::string& prefix) const {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + prefix + ".bin");
  net_->params().save(bin);
  std::ofstream js(prefix + ".json");
  js << manifest_json(manifest_).dump(2) << '\n';
}

ClassifierModel ClassifierModel::load(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw LoadError("missing classifier manifest " + prefix + ".json");
  const auto j = nlohmann::json::parse(js);
  ClassifierConfig c;
  c.architecture = j.at("architecture");
  c.channels = j.at("channels").get<std::vector<int>>();
  c.hidden = j.at("hidden");
  c.epochs = j.at("epochs");
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.batch_size = j.at("batch_size");
  c.seed = j.at("seed");
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  ClassifierModel model(c, {shape.at(0), shape.at(1), shape.at(2)}, j.at("num_classes"));
  model.manifest_.split_hash = j.at("split_hash");
  model.manifest_.hook = j.at("hook");
  model.manifest_.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw LoadError("missing classifier weights " + prefix + ".bin");
  model.net_->params().load(bin);
  return model;
}

ClassifierModel train_classifier(const Dataset& dataset, std::span<const std::size_t> member_ids,
                                 const ClassifierConfig& config) {
  if (member_ids.empty()) throw ArgumentError("train_classifier needs a non-empty member list");
  if (config.epochs < 1) throw ArgumentError("train_classifier needs epochs >= 1");
  if (config.batch_size < 1) throw ArgumentError("train_classifier needs batch_size >= 1");
  for (std::size_t id : member_ids) dataset.at(id);

  ClassifierModel model(config, dataset.shape(), dataset.num_classes());
  model.mutable_manifest().split_hash = hash_ids(member_ids);
  nn::Adam opt(model.parameters(), {.lr = config.lr, .weight_decay = config.weight_decay});
  Rng rng(derive_seed(config.seed, {0x545241ULL}));
  std::vector<std::size_t> order(member_ids.begin(), member_ids.end());
  const int K = dataset.num_classes();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      std::vector<const Image*> imgs;
      Tensor targets({static_cast<int>(n), K}, 0.0f);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& s = dataset[order[start + i]];
        imgs.push_back(&s.image);
        targets[i * K + static_cast<std::size_t>(s.label)] = 1.0f;
      }
      if (config.hook) config.hook->adjust_targets(targets);
      opt.zero_grad();
      const Var z = model.logits(Var(images_to_nchw(std::span<const Image* const>(imgs), dataset.shape())));
      const Var loss = nn::softmax_cross_entropy(z, targets);
      nn::backward(loss);
      opt.step();
      loss_sum += loss.value()[0];
      ++batches;
    }
    model.mutable_manifest().epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return model;
}

double evaluate_accuracy(const Classifier& model, std::span<const std::size_t> ids,
                         const Dataset& dataset) {
  if (ids.empty()) throw ArgumentError("evaluate_accuracy needs a non-empty id list");
  const std::vector<Image> imgs = dataset.images(ids);
  const auto preds = predict(model, imgs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (preds[i].predicted_label == dataset[ids[i]].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

}  // namespace reconguard
