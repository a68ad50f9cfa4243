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

#include "reconguard/nn/layers.h"

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>

#include "reconguard/errors.h"
#include "reconguard/nn/ops.h"

namespace reconguard::nn {
namespace {

constexpr std::uint32_t kMagic = 0x52474e4e;  // "RGNN"

Tensor he_normal(std::vector<int> shape, int fan_in, float gain, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, gain * std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, float gain)
    : weight(he_normal({out_channels, in_channels, kernel, kernel},
                       in_channels * kernel * kernel, gain, rng),
             true),
      bias(Tensor({out_channels}, 0.0f), true) {}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight, bias); }

Linear::Linear(int in_features, int out_features, Rng& rng, float gain)
    : weight(he_normal({out_features, in_features}, in_features, gain, rng), true),
      bias(Tensor({out_features}, 0.0f), true) {}

Var Linear::operator()(const Var& x) const { return linear(x, weight, bias); }

std::size_t ParameterList::count() const {
  std::size_t n = 0;
  for (const Var& p : params_) n += p.value().size();
  return n;
}

void ParameterList::save(std::ostream& out) const {
  auto put = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  put(kMagic);
  put(static_cast<std::uint32_t>(params_.size()));
  for (const Var& p : params_) {
    const Tensor& t = p.value();
    put(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put(static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing parameters");
}

void ParameterList::load(std::istream& in) {
  auto get = [&in]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("truncated checkpoint");
    return v;
  };
  if (get() != kMagic) throw FormatError("not a parameter checkpoint");
  if (get() != params_.size()) throw FormatError("checkpoint tensor count mismatch");
  for (const Var& p : params_) {
    Tensor& t = const_cast<Var&>(p).mutable_value();
    const std::uint32_t rank = get();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get());
    if (shape != t.shape()) throw FormatError("checkpoint shape mismatch " + t.shape_string());
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw FormatError("truncated checkpoint");
  }
}

Adam::Adam(std::vector<Var> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Var& p : params_) {
    m_.emplace_back(p.value().size(), 0.0f);
    v_.emplace_back(p.value().size(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (const Var& p : params_) {
    if (p.has_grad()) p.grad().fill(0.0f);
  }
}

void Adam::step() {
  ++step_count_;
  const float bc1 = 1.0f - std::pow(options_.beta1, static_cast<float>(step_count_));
  const float bc2 = 1.0f - std::pow(options_.beta2, static_cast<float>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k];
    if (!p.has_grad()) continue;
    Tensor& w = p.mutable_value();
    const Tensor& g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = g[i] + options_.weight_decay * w[i];
      m[i] = options_.beta1 * m[i] + (1.0f - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0f - options_.beta2) * gi * gi;
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      w[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace reconguard::nn
