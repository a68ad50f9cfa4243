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

#ifndef RECONGUARD_DIFFUSION_H_
#define RECONGUARD_DIFFUSION_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "reconguard/classifier.h"
#include "reconguard/data.h"
#include "reconguard/nn/autograd.h"
#include "reconguard/nn/tensor.h"

namespace reconguard {

// Per-step noise levels, indexed by t = 0..T_max. Index 0 is the clean image:
// beta[0] = 0 and alpha_bar[0] = 1.
struct NoiseSchedule {
  int T_max = 0;
  double beta_start = 0;
  double beta_end = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

// Linear beta from beta_start at t = 1 to beta_end at t = T_max.
NoiseSchedule build_schedule(int T_max, double beta_start, double beta_end);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, in the [-1, 1]
// pixel convention.
std::vector<float> forward_noise(std::span<const float> x0, int t, std::span<const float> eps,
                                 const NoiseSchedule& schedule);

// One single-step transition x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps.
std::vector<float> forward_step(std::span<const float> x_prev, int t, std::span<const float> eps,
                                const NoiseSchedule& schedule);

// Anything that predicts the added noise from (x_t, t).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual const NoiseSchedule& schedule() const = 0;
  virtual ImageShape input_shape() const = 0;
  // x: [B, C, H, W] in [-1, 1] space; t: one step per row. Returns a tensor of
  // the same shape. Each row's output must depend only on that row.
  virtual nn::Tensor predict_noise(const nn::Tensor& x, std::span<const int> t) const = 0;
};

struct DiffusionConfig {
  int T_max = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int base_channels = 16;
  // Training draws t uniformly from [1, train_t_max]; 0 means T_max.
  int train_t_max = 0;
  int epochs = 100;
  float lr = 1e-3f;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

struct DiffusionManifest {
  int T_max = 0;
  double beta_start = 0;
  double beta_end = 0;
  int base_channels = 0;
  int train_t_max = 0;
  int epochs = 0;
  float lr = 0;
  int batch_size = 0;
  ImageShape input_shape;
  std::uint64_t train_ids_hash = 0;
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;
  // Noise-prediction MSE on a fixed probe set before and after training.
  double probe_mse_initial = 0;
  double probe_mse_final = 0;
};

class UNet;

// Small U-Net noise predictor with a sinusoidal timestep embedding.
class DiffusionModel : public Denoiser {
 public:
  DiffusionModel(const DiffusionConfig& config, ImageShape input_shape);
  ~DiffusionModel() override;
  DiffusionModel(DiffusionModel&&) noexcept;
  DiffusionModel& operator=(DiffusionModel&&) noexcept;

  const NoiseSchedule& schedule() const override { return schedule_; }
  ImageShape input_shape() const override { return manifest_.input_shape; }
  nn::Tensor predict_noise(const nn::Tensor& x, std::span<const int> t) const override;

  nn::Var forward(const nn::Var& x, std::span<const int> t) const;
  std::vector<nn::Var> parameters() const;

  const DiffusionManifest& manifest() const { return manifest_; }
  DiffusionManifest& mutable_manifest() { return manifest_; }

  void save(const std::string& prefix) const;
  static DiffusionModel load(const std::string& prefix);

 private:
  DiffusionManifest manifest_;
  NoiseSchedule schedule_;
  std::unique_ptr<UNet> net_;
};

DiffusionModel train_ddpm(const Dataset& dataset, std::span<const std::size_t> ids,
                          const DiffusionConfig& config);

// Mean noise-prediction MSE over `images` at the given per-image steps with
// noise drawn from `seed`.
double noise_prediction_mse(const Denoiser& model, std::span<const Image> images,
                            std::span<const int> t, std::uint64_t seed);

// The N reconstructions of one input plus what the classifier says about them.
// Images are dropped (variants left empty) when the caller only needs the
// predictions.
struct ReconstructionBatch {
  Image original;
  std::vector<Image> variants;
  std::vector<PredictionVector> predictions;
  std::vector<double> logits;
  std::uint64_t seed = 0;
};

// Timesteps visited by the strided reverse pass: T, T-k, ... while > 0.
std::vector<int> reverse_timesteps(int T, int k);

// The forward noise used for variant j of a reconstruction seeded with
// `seed`. Variant j does not depend on how many variants are requested, so
// n = 10 is a prefix of n = 50.
std::vector<float> variant_noise(std::uint64_t seed, int j, std::size_t size);

// Noises x to level T and runs the deterministic strided reverse pass, n
// times with independent noise. Output pixels are in [0, 1].
ReconstructionBatch reconstruct(const Denoiser& model, const Image& x, int T, int k, int n,
                                std::uint64_t seed);

// Batched form over many inputs; seeds[i] seeds input i. Variants are packed
// across inputs so each denoiser call sees up to `batch_size` rows.
std::vector<ReconstructionBatch> reconstruct_many(const Denoiser& model,
                                                  std::span<const Image> xs, int T, int k, int n,
                                                  std::span<const std::uint64_t> seeds,
                                                  int batch_size = 64);

}  // namespace reconguard

#endif  // RECONGUARD_DIFFUSION_H_
