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


#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "reconguard/classifier.h"
#include "reconguard/data.h"
#include "reconguard/diffusion.h"
#include "reconguard/errors.h"

namespace reconguard {
namespace {

// Exact rational product of the first 40 linear-schedule alphas, rounded.
constexpr double kAlphaBar40 = 0.9806463645668043;

// Denoiser that predicts zero noise and counts its calls.
class ZeroDenoiser : public Denoiser {
 public:
  explicit ZeroDenoiser(ImageShape shape) : schedule_(build_schedule(1000, 1e-4, 0.02)), shape_(shape) {}
  const NoiseSchedule& schedule() const override { return schedule_; }
  ImageShape input_shape() const override { return shape_; }
  nn::Tensor predict_noise(const nn::Tensor& x, std::span<const int>) const override {
    ++calls;
    rows += x.dim(0);
    return nn::Tensor(x.shape());
  }
  mutable int calls = 0;
  mutable int rows = 0;

 private:
  NoiseSchedule schedule_;
  ImageShape shape_;
};

Image gradient_image(ImageShape s, float phase = 0.0f) {
  Image x(s.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5f + 0.4f * std::sin(0.37f * i + phase);
  return x;
}

IdList iota_ids(std::size_t n) {
  IdList v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TEST(Schedule, Endpoints) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  ASSERT_EQ(s.beta.size(), 1001u);
  EXPECT_DOUBLE_EQ(s.beta[1], 1e-4);
  EXPECT_DOUBLE_EQ(s.beta[1000], 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 1.0);
  EXPECT_NEAR(s.alpha_bar[1], 1.0 - 1e-4, 1e-15);
  EXPECT_NEAR(s.alpha_bar[40], kAlphaBar40, 1e-12);
}

TEST(Schedule, Identities) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_GT(s.beta[t], 0.0);
    EXPECT_LT(s.beta[t], 1.0);
    EXPECT_EQ(s.alpha[t], 1.0 - s.beta[t]);
    EXPECT_NEAR(s.alpha_bar[t], s.alpha_bar[t - 1] * s.alpha[t], 1e-12);
    EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    if (t > 1) {
      EXPECT_GT(s.beta[t], s.beta[t - 1]);
    }
  }
}

TEST(Schedule, SingleStep) {
  const NoiseSchedule s = build_schedule(1, 0.3, 0.3);
  EXPECT_DOUBLE_EQ(s.beta[1], 0.3);
  EXPECT_NEAR(s.alpha_bar[1], 0.7, 1e-15);
}

TEST(Schedule, InvalidBounds) {
  EXPECT_THROW(build_schedule(0, 1e-4, 0.02), ArgumentError);
  EXPECT_THROW(build_schedule(10, 0.0, 0.02), ArgumentError);
  EXPECT_THROW(build_schedule(10, 0.03, 0.02), ArgumentError);
  EXPECT_THROW(build_schedule(10, 1e-4, 1.0), ArgumentError);
}

TEST(ForwardNoise, ZeroNoiseScales) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  const std::vector<float> x0 = {-1.0f, 0.25f, 0.8f}, eps(3, 0.0f);
  const std::vector<float> y = forward_noise(x0, 40, eps, s);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::sqrt(kAlphaBar40) * x0[i], 1e-6);
}

TEST(ForwardNoise, NearIdentityWhenAlphaBarIsOne) {
  const NoiseSchedule s = build_schedule(5, 1e-14, 1e-14);
  const std::vector<float> x0 = {-0.5f, 0.5f}, eps = {1.0f, -2.0f};
  const std::vector<float> y = forward_noise(x0, 5, eps, s);
  EXPECT_NEAR(y[0], x0[0], 1e-6);
  EXPECT_NEAR(y[1], x0[1], 1e-6);
}

TEST(ForwardNoise, Linear) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  std::vector<float> x0(16), eps(16), ax(16), ae(16);
  for (int i = 0; i < 16; ++i) x0[i] = g(rng), eps[i] = g(rng), ax[i] = 2.5f * x0[i], ae[i] = 2.5f * eps[i];
  const auto a = forward_noise(ax, 300, ae, s), b = forward_noise(x0, 300, eps, s);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(a[i], 2.5f * b[i], 1e-5);
}

TEST(ForwardNoise, Errors) {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const std::vector<float> x(4, 0.0f), e3(3, 0.0f);
  EXPECT_THROW(forward_noise(x, 0, x, s), ArgumentError);
  EXPECT_THROW(forward_noise(x, 101, x, s), ArgumentError);
  EXPECT_THROW(forward_noise(x, 5, e3, s), ArgumentError);
  EXPECT_THROW(forward_step(x, 0, x, s), ArgumentError);
}

TEST(ForwardNoise, StepwiseMatchesClosedFormWithoutNoise) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  std::vector<float> x = {0.6f, -0.3f};
  const std::vector<float> zero(2, 0.0f);
  for (int t = 1; t <= 40; ++t) x = forward_step(x, t, zero, s);
  const auto y = forward_noise(std::vector<float>{0.6f, -0.3f}, 40, zero, s);
  EXPECT_NEAR(x[0], y[0], 1e-6);
  EXPECT_NEAR(x[1], y[1], 1e-6);
}

TEST(Reconstruct, StepCounts) {
  EXPECT_EQ(reverse_timesteps(40, 10), (std::vector<int>{40, 30, 20, 10}));
  EXPECT_EQ(reverse_timesteps(45, 10), (std::vector<int>{45, 35, 25, 15, 5}));
  EXPECT_EQ(reverse_timesteps(1, 1), (std::vector<int>{1}));
  const ImageShape shape{4, 4, 3};
  const ZeroDenoiser d(shape);
  const ReconstructionBatch b = reconstruct(d, gradient_image(shape), 40, 10, 3, 7);
  EXPECT_EQ(d.calls, 4);
  EXPECT_EQ(d.rows, 12);
  EXPECT_EQ(b.variants.size(), 3u);
}

TEST(Reconstruct, SingleStepShape) {
  const ImageShape shape{4, 4, 3};
  const ZeroDenoiser d(shape);
  const ReconstructionBatch b = reconstruct(d, gradient_image(shape), 1, 1, 1, 0);
  EXPECT_EQ(d.calls, 1);
  ASSERT_EQ(b.variants.size(), 1u);
  EXPECT_EQ(b.variants[0].size(), shape.size());
}

TEST(Reconstruct, Errors) {
  const ImageShape shape{4, 4, 3};
  const ZeroDenoiser d(shape);
  const Image x = gradient_image(shape);
  EXPECT_THROW(reconstruct(d, x, 0, 1, 1, 0), ArgumentError);
  EXPECT_THROW(reconstruct(d, x, 1001, 10, 1, 0), ArgumentError);
  EXPECT_THROW(reconstruct(d, x, 10, 11, 1, 0), ArgumentError);
  EXPECT_THROW(reconstruct(d, x, 10, 0, 1, 0), ArgumentError);
  EXPECT_THROW(reconstruct(d, x, 10, 5, 0, 0), ArgumentError);
  EXPECT_THROW(reconstruct(d, Image(5, 0.5f), 10, 5, 1, 0), ArgumentError);
}

// With a zero noise prediction the deterministic reverse pass returns
// x_T / sqrt(alpha_bar_T): the noised image with the attenuation undone.
TEST(Reconstruct, ZeroDenoiserUndoesAttenuation) {
  const ImageShape shape{4, 4, 3};
  const ZeroDenoiser d(shape);
  const Image x = gradient_image(shape);
  const int T = 40;
  const ReconstructionBatch b = reconstruct(d, x, T, 10, 4, 11);
  const double ab = d.schedule().alpha_bar[T];
  for (int j = 0; j < 4; ++j) {
    const std::vector<float> eps = variant_noise(11, j, shape.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double expect = std::clamp(2.0 * x[i] - 1.0 + std::sqrt((1.0 - ab) / ab) * eps[i], -1.0, 1.0);
      EXPECT_NEAR(b.variants[j][i], 0.5 * (expect + 1.0), 1e-5);
    }
  }
}

TEST(Reconstruct, DeterministicAndPrefixStable) {
  const ImageShape shape{4, 4, 3};
  const ZeroDenoiser d(shape);
  const Image x = gradient_image(shape);
  const ReconstructionBatch a = reconstruct(d, x, 20, 5, 5, 3);
  const ReconstructionBatch b = reconstruct(d, x, 20, 5, 3, 3);
  const ReconstructionBatch c = reconstruct(d, x, 20, 5, 3, 4);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(a.variants[j], b.variants[j]);
  EXPECT_NE(a.variants[0], a.variants[1]);
  EXPECT_NE(b.variants[0], c.variants[0]);
  EXPECT_EQ(reconstruct(d, x, 20, 5, 1, 9).variants, reconstruct(d, x, 20, 5, 1, 9).variants);
}

class TrainedDdpm : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(synth_dataset(4, 50, 8, 2));
    DiffusionConfig c;
    c.base_channels = 8;
    c.epochs = 6;
    c.batch_size = 32;
    c.train_t_max = 100;
    c.seed = 1;
    model_ = new DiffusionModel(train_ddpm(*data_, iota_ids(200), c));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete data_;
  }
  static Dataset* data_;
  static DiffusionModel* model_;
};

Dataset* TrainedDdpm::data_ = nullptr;
DiffusionModel* TrainedDdpm::model_ = nullptr;

TEST_F(TrainedDdpm, ManifestRecordsTraining) {
  const DiffusionManifest& m = model_->manifest();
  EXPECT_EQ(m.train_ids_hash, hash_ids(iota_ids(200)));
  EXPECT_EQ(m.epoch_loss.size(), 6u);
  EXPECT_LT(m.probe_mse_final, m.probe_mse_initial);
}

TEST_F(TrainedDdpm, BatchedMatchesSingle) {
  const std::vector<Image> xs = data_->images(IdList{0, 1, 2});
  const std::vector<std::uint64_t> seeds = {5, 6, 7};
  const auto many = reconstruct_many(*model_, xs, 30, 10, 3, seeds, 4);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(many[i].variants, reconstruct(*model_, xs[i], 30, 10, 3, seeds[i]).variants);
  }
}

TEST_F(TrainedDdpm, OutputsFiniteAndInRange) {
  const ReconstructionBatch b = reconstruct(*model_, (*data_)[3].image, 40, 10, 8, 1);
  for (const Image& v : b.variants) {
    for (float p : v) {
      ASSERT_TRUE(std::isfinite(p));
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
}

TEST_F(TrainedDdpm, DistanceGrowsWithT) {
  const std::vector<Image> xs = data_->images(iota_ids(100));
  std::vector<std::uint64_t> seeds(xs.size());
  std::iota(seeds.begin(), seeds.end(), 100);
  double prev = 0.0;
  for (int T : {10, 40, 80}) {
    double total = 0.0;
    for (const ReconstructionBatch& b : reconstruct_many(*model_, xs, T, 10 > T ? T : 10, 1, seeds)) {
      double d = 0.0;
      for (std::size_t i = 0; i < b.original.size(); ++i) {
        d += (b.variants[0][i] - b.original[i]) * (b.variants[0][i] - b.original[i]);
      }
      total += std::sqrt(d);
    }
    EXPECT_GT(total / xs.size(), prev) << "T=" << T;
    prev = total / xs.size();
  }
}

TEST_F(TrainedDdpm, SaveLoad) {
  const std::string prefix = (std::filesystem::temp_directory_path() / "reconguard_ddpm").string();
  model_->save(prefix);
  const DiffusionModel back = DiffusionModel::load(prefix);
  const Image& x = (*data_)[0].image;
  EXPECT_EQ(reconstruct(back, x, 20, 10, 2, 3).variants, reconstruct(*model_, x, 20, 10, 2, 3).variants);
  EXPECT_EQ(back.manifest().train_ids_hash, model_->manifest().train_ids_hash);
}

TEST(TrainDdpm, ReducesNoiseMseAndIsReproducible) {
  const Dataset d = synth_dataset(4, 50, 8, 3);
  DiffusionConfig c;
  c.base_channels = 8;
  c.epochs = 8;
  c.batch_size = 32;
  c.seed = 2;
  const DiffusionModel a = train_ddpm(d, iota_ids(200), c);
  const DiffusionModel b = train_ddpm(d, iota_ids(200), c);
  EXPECT_EQ(a.manifest().epoch_loss, b.manifest().epoch_loss);
  // Over the full step range the final loss is well under half the initial.
  EXPECT_LT(a.manifest().probe_mse_final, 0.5 * a.manifest().probe_mse_initial);
}

TEST(TrainDdpm, Errors) {
  const Dataset d = synth_dataset(2, 4, 8, 3);
  DiffusionConfig c;
  c.epochs = 1;
  EXPECT_THROW(train_ddpm(d, IdList{}, c), ArgumentError);
  c.epochs = -1;
  EXPECT_THROW(train_ddpm(d, iota_ids(4), c), ArgumentError);
  c.epochs = 1;
  c.batch_size = 0;
  EXPECT_THROW(train_ddpm(d, iota_ids(4), c), ArgumentError);
}

}  // namespace
}  // namespace reconguard
