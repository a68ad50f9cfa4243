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

#ifndef RECONGUARD_NN_LAYERS_H_
#define RECONGUARD_NN_LAYERS_H_

#include <iosfwd>
#include <vector>

#include "reconguard/nn/autograd.h"
#include "reconguard/random.h"

namespace reconguard::nn {

struct Conv2d {
  Var weight;  // [out, in, k, k]
  Var bias;    // [out]

  Conv2d() = default;
  // He-normal init scaled by `gain`.
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng,
         float gain = 1.0f);
  Var operator()(const Var& x) const;
};

struct Linear {
  Var weight;  // [out, in]
  Var bias;    // [out]

  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng, float gain = 1.0f);
  Var operator()(const Var& x) const;
};

// Flat list of trainable leaves, in a fixed registration order.
class ParameterList {
 public:
  void add(const Conv2d& c) { add(c.weight), add(c.bias); }
  void add(const Linear& l) { add(l.weight), add(l.bias); }
  void add(const Var& v) { params_.push_back(v); }

  const std::vector<Var>& params() const { return params_; }
  std::size_t count() const;

  // Binary layout: magic, tensor count, then (rank, dims, floats) per tensor.
  void save(std::ostream& out) const;
  // Shapes must match the registered tensors exactly.
  void load(std::istream& in);

 private:
  std::vector<Var> params_;
};

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options);
  void zero_grad();
  void step();

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  std::vector<std::vector<float>> m_, v_;
  long step_count_ = 0;
};

}  // namespace reconguard::nn

#endif  // RECONGUARD_NN_LAYERS_H_
