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

#include "reconguard/diffusion.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "reconguard/errors.h"
#include "reconguard/nn/layers.h"
#include "reconguard/nn/ops.h"
#include "reconguard/random.h"

namespace reconguard {

using nn::Tensor;
using nn::Var;

NoiseSchedule build_schedule(int T_max, double beta_start, double beta_end) {
  if (T_max < 1) throw ArgumentError("schedule needs T_max >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ArgumentError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T_max = T_max;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto n = static_cast<std::size_t>(T_max) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  for (int t = 1; t <= T_max; ++t) {
    const double frac = T_max == 1 ? 0.0 : static_cast<double>(t - 1) / (T_max - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

namespace {

void check_step(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T_max) {
    throw ArgumentError("timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(s.T_max) + "]");
  }
}

std::vector<float> affine(std::span<const float> x, double a, std::span<const float> eps,
                          double b) {
  if (x.size() != eps.size()) throw ArgumentError("noise shape differs from image shape");
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(a * x[i] + b * eps[i]);
  return out;
}

}  // namespace

std::vector<float> forward_noise(std::span<const float> x0, int t, std::span<const float> eps,
                                 const NoiseSchedule& schedule) {
  check_step(t, schedule);
  const double ab = schedule.alpha_bar[t];
  return affine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

std::vector<float> forward_step(std::span<const float> x_prev, int t, std::span<const float> eps,
                                const NoiseSchedule& schedule) {
  check_step(t, schedule);
  return affine(x_prev, std::sqrt(schedule.alpha[t]), eps, std::sqrt(schedule.beta[t]));
}

namespace {

struct ResBlock {
  nn::Conv2d conv1, conv2, skip;
  nn::Linear time_proj;
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(int in, int out, int temb, Rng& rng)
      : conv1(in, out, 3, rng), conv2(out, out, 3, rng, 0.5f), time_proj(temb, out, rng),
        has_skip(in != out) {
    if (has_skip) skip = nn::Conv2d(in, out, 1, rng);
  }

  Var operator()(const Var& x, const Var& temb) const {
    Var h = conv1(nn::silu(x));
    h = nn::add_channel_bias(h, time_proj(temb));
    h = conv2(nn::silu(h));
    return nn::add(has_skip ? skip(x) : x, h);
  }

  void register_into(nn::ParameterList& p) const {
    p.add(conv1);
    p.add(conv2);
    p.add(time_proj);
    if (has_skip) p.add(skip);
  }
};

}  // namespace

// Two resolutions below the input, one residual block per level on each path.
class UNet {
 public:
  UNet(int channels, int base, Rng& rng) : base_(base) {
    const int temb = 4 * base;
    time1_ = nn::Linear(base, temb, rng);
    time2_ = nn::Linear(temb, temb, rng);
    in_ = nn::Conv2d(channels, base, 3, rng);
    down0_ = ResBlock(base, base, temb, rng);
    down1_ = ResBlock(base, 2 * base, temb, rng);
    mid_ = ResBlock(2 * base, 2 * base, temb, rng);
    up1_ = ResBlock(4 * base, 2 * base, temb, rng);
    up0_ = ResBlock(3 * base, base, temb, rng);
    out_ = nn::Conv2d(base, channels, 3, rng, 0.0f);
    params_.add(time1_);
    params_.add(time2_);
    params_.add(in_);
    for (const ResBlock* b : {&down0_, &down1_, &mid_, &up1_, &up0_}) b->register_into(params_);
    params_.add(out_);
  }

  Var forward(const Var& x, std::span<const int> t) const {
    const Var temb = time2_(nn::silu(time1_(Var(timestep_embedding(t)))));
    const Var h0 = down0_(in_(x), temb);
    const Var h1 = down1_(nn::avg_pool2(h0), temb);
    Var h = mid_(nn::avg_pool2(h1), temb);
    h = up1_(nn::concat_channels(nn::upsample2(h), h1), temb);
    h = up0_(nn::concat_channels(nn::upsample2(h), h0), temb);
    return out_(nn::silu(h));
  }

  const nn::ParameterList& params() const { return params_; }
  nn::ParameterList& params() { return params_; }

 private:
  Tensor timestep_embedding(std::span<const int> t) const {
    const int half = base_ / 2;
    Tensor e({static_cast<int>(t.size()), base_});
    for (std::size_t r = 0; r < t.size(); ++r) {
      for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e[r * base_ + i] = static_cast<float>(std::sin(t[r] * freq));
        e[r * base_ + half + i] = static_cast<float>(std::cos(t[r] * freq));
      }
    }
    return e;
  }

  int base_;
  nn::Linear time1_, time2_;
  nn::Conv2d in_, out_;
  ResBlock down0_, down1_, mid_, up1_, up0_;
  nn::ParameterList params_;
};

namespace {

DiffusionManifest manifest_from(const DiffusionConfig& c, ImageShape shape) {
  DiffusionManifest m;
  m.T_max = c.T_max;
  m.beta_start = c.beta_start;
  m.beta_end = c.beta_end;
  m.base_channels = c.base_channels;
  m.train_t_max = c.train_t_max == 0 ? c.T_max : c.train_t_max;
  m.epochs = c.epochs;
  m.lr = c.lr;
  m.batch_size = c.batch_size;
  m.input_shape = shape;
  m.seed = c.seed;
  return m;
}

// [0, 1] HWC images to [-1, 1] NCHW.
Tensor to_model_space(std::span<const Image* const> images, const ImageShape& shape) {
  Tensor t = images_to_nchw(images, shape);
  for (float& v : t.values()) v = 2.0f * v - 1.0f;
  return t;
}

std::vector<float> gaussian(Rng& rng, std::size_t n) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = dist(rng);
  return v;
}

}  // namespace

DiffusionModel::DiffusionModel(const DiffusionConfig& config, ImageShape input_shape)
    : manifest_(manifest_from(config, input_shape)),
      schedule_(build_schedule(config.T_max, config.beta_start, config.beta_end)) {
  if (config.base_channels < 2 || config.base_channels % 2 != 0) {
    throw ArgumentError("diffusion base_channels must be even and >= 2");
  }
  if (input_shape.height % 4 != 0 || input_shape.width % 4 != 0 || input_shape.height < 4 ||
      input_shape.width < 4) {
    throw ArgumentError("diffusion input height and width must be positive multiples of 4");
  }
  if (manifest_.train_t_max < 1 || manifest_.train_t_max > config.T_max) {
    throw ArgumentError("train_t_max must lie in [1, T_max]");
  }
  Rng rng(derive_seed(config.seed, {0x554e4554ULL}));
  net_ = std::make_unique<UNet>(input_shape.channels, config.base_channels, rng);
}

DiffusionModel::~DiffusionModel() = default;
DiffusionModel::DiffusionModel(DiffusionModel&&) noexcept = default;
DiffusionModel& DiffusionModel::operator=(DiffusionModel&&) noexcept = default;

Var DiffusionModel::forward(const Var& x, std::span<const int> t) const {
  if (x.value().rank() != 4 || static_cast<std::size_t>(x.value().dim(0)) != t.size()) {
    throw ArgumentError("denoiser needs one timestep per batch row");
  }
  return net_->forward(x, t);
}

Tensor DiffusionModel::predict_noise(const Tensor& x, std::span<const int> t) const {
  nn::NoGradGuard no_grad;
  return forward(Var(x), t).value();
}

std::vector<Var> DiffusionModel::parameters() const { return net_->params().params(); }

void DiffusionModel::save(const std::string& prefix) const {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + prefix + ".bin");
  net_->params().save(bin);
  const DiffusionManifest& m = manifest_;
  const nlohmann::json j = {
      {"T_max", m.T_max},
      {"beta_start", m.beta_start},
      {"beta_end", m.beta_end},
      {"train_ids_hash", m.train_ids_hash},
      {"seed", m.seed},
      {"base_channels", m.base_channels},
      {"train_t_max", m.train_t_max},
      {"epochs", m.epochs},
      {"lr", m.lr},
      {"batch_size", m.batch_size},
      {"input_shape", {m.input_shape.height, m.input_shape.width, m.input_shape.channels}},
      {"epoch_loss", m.epoch_loss},
      {"probe_mse_initial", m.probe_mse_initial},
      {"probe_mse_final", m.probe_mse_final}};
  std::ofstream js(prefix + ".json");
  js << j.dump(2) << '\n';
}

DiffusionModel DiffusionModel::load(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw LoadError("missing diffusion manifest " + prefix + ".json");
  const auto j = nlohmann::json::parse(js);
  DiffusionConfig c;
  c.T_max = j.at("T_max");
  c.beta_start = j.at("beta_start");
  c.beta_end = j.at("beta_end");
  c.seed = j.at("seed");
  c.base_channels = j.at("base_channels");
  c.train_t_max = j.at("train_t_max");
  c.epochs = j.at("epochs");
  c.lr = j.at("lr");
  c.batch_size = j.at("batch_size");
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  DiffusionModel model(c, {shape.at(0), shape.at(1), shape.at(2)});
  model.manifest_.train_ids_hash = j.at("train_ids_hash");
  model.manifest_.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  model.manifest_.probe_mse_initial = j.at("probe_mse_initial");
  model.manifest_.probe_mse_final = j.at("probe_mse_final");
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw LoadError("missing diffusion weights " + prefix + ".bin");
  model.net_->params().load(bin);
  return model;
}

double noise_prediction_mse(const Denoiser& model, std::span<const Image> images,
                            std::span<const int> t, std::uint64_t seed) {
  if (images.empty() || images.size() != t.size()) {
    throw ArgumentError("noise_prediction_mse needs one timestep per image");
  }
  const NoiseSchedule& s = model.schedule();
  const ImageShape shape = model.input_shape();
  Rng rng(seed);
  std::vector<const Image*> ptrs;
  for (const Image& img : images) ptrs.push_back(&img);
  const Tensor x0 = to_model_space(ptrs, shape);
  const std::size_t per = shape.size();
  Tensor xt(x0.shape());
  Tensor eps(x0.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_step(t[i], s);
    const std::vector<float> e = gaussian(rng, per);
    const std::span<const float> row(x0.data() + i * per, per);
    const std::vector<float> noisy = forward_noise(row, t[i], e, s);
    std::copy(e.begin(), e.end(), eps.data() + i * per);
    std::copy(noisy.begin(), noisy.end(), xt.data() + i * per);
  }
  const Tensor pred = model.predict_noise(xt, t);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - eps[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

DiffusionModel train_ddpm(const Dataset& dataset, std::span<const std::size_t> ids,
                          const DiffusionConfig& config) {
  if (ids.empty()) throw ArgumentError("train_ddpm needs a non-empty id list");
  if (config.epochs < 0) throw ArgumentError("train_ddpm needs epochs >= 0");
  if (config.batch_size < 1) throw ArgumentError("train_ddpm needs batch_size >= 1");
  for (std::size_t id : ids) dataset.at(id);

  DiffusionModel model(config, dataset.shape());
  DiffusionManifest& manifest = model.mutable_manifest();
  manifest.train_ids_hash = hash_ids(ids);
  const NoiseSchedule& s = model.schedule();
  const int t_hi = manifest.train_t_max;

  // Fixed probe: up to 64 training images at evenly spread steps.
  const std::size_t n_probe = std::min<std::size_t>(64, ids.size());
  std::vector<Image> probe;
  std::vector<int> probe_t;
  for (std::size_t i = 0; i < n_probe; ++i) {
    probe.push_back(dataset[ids[i * ids.size() / n_probe]].image);
    probe_t.push_back(1 + static_cast<int>(i * static_cast<std::size_t>(t_hi) / n_probe));
  }
  const std::uint64_t probe_seed = derive_seed(config.seed, {0x50524f42ULL});
  manifest.probe_mse_initial = noise_prediction_mse(model, probe, probe_t, probe_seed);

  nn::Adam opt(model.parameters(), {.lr = config.lr});
  Rng rng(derive_seed(config.seed, {0x44445041ULL}));
  std::uniform_int_distribution<int> step_dist(1, t_hi);
  std::vector<std::size_t> order(ids.begin(), ids.end());
  const ImageShape shape = dataset.shape();
  const std::size_t per = shape.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      std::vector<const Image*> imgs;
      for (std::size_t i = 0; i < n; ++i) imgs.push_back(&dataset[order[start + i]].image);
      Tensor x = to_model_space(imgs, shape);
      Tensor eps(x.shape());
      std::vector<int> t(n);
      for (std::size_t i = 0; i < n; ++i) {
        t[i] = step_dist(rng);
        const std::vector<float> e = gaussian(rng, per);
        const std::span<const float> row(x.data() + i * per, per);
        const std::vector<float> noisy = forward_noise(row, t[i], e, s);
        std::copy(e.begin(), e.end(), eps.data() + i * per);
        std::copy(noisy.begin(), noisy.end(), x.data() + i * per);
      }
      opt.zero_grad();
      const Var loss = nn::mse_loss(model.forward(Var(std::move(x)), t), eps);
      nn::backward(loss);
      opt.step();
      loss_sum += loss.value()[0];
      ++batches;
    }
    manifest.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  manifest.probe_mse_final = noise_prediction_mse(model, probe, probe_t, probe_seed);
  return model;
}

std::vector<int> reverse_timesteps(int T, int k) {
  if (T < 1 || k < 1 || k > T) throw ArgumentError("reverse pass needs 1 <= k <= T");
  std::vector<int> steps;
  for (int t = T; t > 0; t -= k) steps.push_back(t);
  return steps;
}

std::vector<float> variant_noise(std::uint64_t seed, int j, std::size_t size) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(j)}));
  return gaussian(rng, size);
}

std::vector<ReconstructionBatch> reconstruct_many(const Denoiser& model,
                                                  std::span<const Image> xs, int T, int k, int n,
                                                  std::span<const std::uint64_t> seeds,
                                                  int batch_size) {
  const NoiseSchedule& s = model.schedule();
  if (T < 1 || T > s.T_max) {
    throw ArgumentError("reconstruction level T=" + std::to_string(T) + " outside [1, " +
                        std::to_string(s.T_max) + "]");
  }
  if (k < 1 || k > T) throw ArgumentError("reconstruction stride needs 1 <= k <= T");
  if (n < 1) throw ArgumentError("reconstruction needs n >= 1");
  if (batch_size < 1) throw ArgumentError("reconstruction batch_size must be positive");
  if (seeds.size() != xs.size()) throw ArgumentError("one seed per reconstructed input");
  const ImageShape shape = model.input_shape();
  const std::size_t per = shape.size();
  for (const Image& x : xs) {
    if (x.size() != per) throw ArgumentError("reconstruction input has the wrong shape");
  }

  const std::vector<int> steps = reverse_timesteps(T, k);
  std::vector<ReconstructionBatch> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i].original = xs[i];
    out[i].seed = seeds[i];
    out[i].variants.resize(static_cast<std::size_t>(n));
  }

  const std::size_t total = xs.size() * static_cast<std::size_t>(n);
  const int H = shape.height, W = shape.width, C = shape.channels;
  for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t rows = std::min<std::size_t>(batch_size, total - start);
    std::vector<const Image*> srcs;
    for (std::size_t r = 0; r < rows; ++r) srcs.push_back(&xs[(start + r) / n]);
    Tensor x = to_model_space(srcs, shape);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t job = start + r;
      const int j = static_cast<int>(job % n);
      // Noise is drawn in HWC order and packed to NCHW alongside the image.
      const std::vector<float> e_hwc = variant_noise(seeds[job / n], j, per);
      const Image e_img(e_hwc.begin(), e_hwc.end());
      const Tensor e = images_to_nchw(std::span<const Image>(&e_img, 1), shape);
      const std::span<const float> row(x.data() + r * per, per);
      const std::vector<float> noisy = forward_noise(row, T, e.values(), s);
      std::copy(noisy.begin(), noisy.end(), x.data() + r * per);
    }
    for (std::size_t si = 0; si < steps.size(); ++si) {
      const int t = steps[si];
      const int t_next = si + 1 < steps.size() ? steps[si + 1] : 0;
      const std::vector<int> tv(rows, t);
      const Tensor eps = model.predict_noise(x, tv);
      const double ab = s.alpha_bar[t], ab_next = s.alpha_bar[t_next];
      const double sa = std::sqrt(ab), s1a = std::sqrt(1.0 - ab);
      const double sn = std::sqrt(ab_next), s1n = std::sqrt(1.0 - ab_next);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0_hat = (x[i] - s1a * eps[i]) / sa;
        x[i] = static_cast<float>(sn * x0_hat + s1n * eps[i]);
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t job = start + r;
      Image img(per);
      const float* src = x.data() + r * per;
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          for (int c = 0; c < C; ++c) {
            const float v = std::clamp(src[(c * H + y) * W + xx], -1.0f, 1.0f);
            img[(static_cast<std::size_t>(y) * W + xx) * C + c] = 0.5f * (v + 1.0f);
          }
        }
      }
      out[job / n].variants[job % n] = std::move(img);
    }
  }
  return out;
}

ReconstructionBatch reconstruct(const Denoiser& model, const Image& x, int T, int k, int n,
                                std::uint64_t seed) {
  return std::move(
      reconstruct_many(model, std::span<const Image>(&x, 1), T, k, n,
                       std::span<const std::uint64_t>(&seed, 1))
          .front());
}

}  // namespace reconguard
