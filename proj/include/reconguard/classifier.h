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

#ifndef RECONGUARD_CLASSIFIER_H_
#define RECONGUARD_CLASSIFIER_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "reconguard/data.h"
#include "reconguard/nn/autograd.h"
#include "reconguard/nn/tensor.h"

namespace reconguard {

// A posterior over classes. predicted_label is the argmax with ties going to
// the lowest index.
struct PredictionVector {
  std::vector<double> probs;
  int predicted_label = 0;

  static PredictionVector from_probs(std::vector<double> probs);
  std::size_t num_classes() const { return probs.size(); }
  bool operator==(const PredictionVector&) const = default;
};

int argmax(std::span<const double> values);

// Lower/upper clamp applied before any log or logit transform of a posterior.
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;
double clamp_prob(double p);

// Black-box view of a target model: images in, posteriors out.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int num_classes() const = 0;
  virtual ImageShape input_shape() const = 0;
  // One posterior per image, in order. Must be a pure function of each image.
  virtual std::vector<PredictionVector> predict_batch(std::span<const Image> images) const = 0;
};

// Validates shapes and forwards to the model.
std::vector<PredictionVector> predict(const Classifier& model, std::span<const Image> images);
PredictionVector predict_one(const Classifier& model, const Image& image);

// Training-time plugin: rewrites one-hot targets before the loss. This is the
// extension point for training-stage defences cascaded with the pre-inference
// reconstruction.
class TrainingHook {
 public:
  virtual ~TrainingHook() = default;
  virtual std::string name() const = 0;
  // targets: [B, K], rows one-hot on entry.
  virtual void adjust_targets(nn::Tensor& targets) const = 0;
};

class LabelSmoothingHook : public TrainingHook {
 public:
  explicit LabelSmoothingHook(double epsilon);
  std::string name() const override;
  void adjust_targets(nn::Tensor& targets) const override;

 private:
  double epsilon_;
};

struct ClassifierConfig {
  std::string architecture = "cnn";  // "cnn" or "mlp"
  std::vector<int> channels = {16, 32, 64, 64};  // one 3x3 conv block each
  int hidden = 128;
  int epochs = 100;
  float lr = 1e-3f;
  float weight_decay = 1e-6f;
  int batch_size = 128;
  std::uint64_t seed = 0;
  std::shared_ptr<const TrainingHook> hook;
};

struct ClassifierManifest {
  std::string architecture;
  int num_classes = 0;
  ImageShape input_shape;
  std::vector<int> channels;
  int hidden = 0;
  int epochs = 0;
  float lr = 0;
  float weight_decay = 0;
  int batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t split_hash = 0;
  std::string hook;
  std::vector<double> epoch_loss;
};

class ClassifierNet;

class ClassifierModel : public Classifier {
 public:
  // Freshly initialised (untrained) network.
  ClassifierModel(const ClassifierConfig& config, ImageShape input_shape, int num_classes);
  ~ClassifierModel() override;
  ClassifierModel(ClassifierModel&&) noexcept;
  ClassifierModel& operator=(ClassifierModel&&) noexcept;

  int num_classes() const override { return manifest_.num_classes; }
  ImageShape input_shape() const override { return manifest_.input_shape; }
  std::vector<PredictionVector> predict_batch(std::span<const Image> images) const override;

  // Raw logits for an NCHW batch; records the tape when grad is enabled.
  nn::Var logits(const nn::Var& batch) const;
  std::vector<nn::Var> parameters() const;

  const ClassifierManifest& manifest() const { return manifest_; }
  ClassifierManifest& mutable_manifest() { return manifest_; }

  // Writes <prefix>.bin (weights) and <prefix>.json (manifest).
  void save(const std::string& prefix) const;
  static ClassifierModel load(const std::string& prefix);

 private:
  ClassifierManifest manifest_;
  std::unique_ptr<ClassifierNet> net_;
};

// Packs HWC images into an NCHW tensor.
nn::Tensor images_to_nchw(std::span<const Image> images, const ImageShape& shape);
nn::Tensor images_to_nchw(std::span<const Image* const> images, const ImageShape& shape);

ClassifierModel train_classifier(const Dataset& dataset, std::span<const std::size_t> member_ids,
                                 const ClassifierConfig& config);

double evaluate_accuracy(const Classifier& model, std::span<const std::size_t> ids,
                         const Dataset& dataset);

}  // namespace reconguard

#endif  // RECONGUARD_CLASSIFIER_H_
