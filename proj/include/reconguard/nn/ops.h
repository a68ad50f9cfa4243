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

#ifndef RECONGUARD_NN_OPS_H_
#define RECONGUARD_NN_OPS_H_

#include <span>

#include "reconguard/nn/autograd.h"

namespace reconguard::nn {

// All image ops take NCHW inputs. Every per-sample computation is independent
// of the batch it travels in, so batched and single-sample results agree
// bit-for-bit.

// Stride-1 convolution with 'same' zero padding; kernel is [Cout, Cin, k, k]
// with k odd.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
// x: [B, in], weight: [out, in], bias: [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

Var relu(const Var& x);
Var silu(const Var& x);
Var max_pool2(const Var& x);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
// x: [N, C, H, W] plus e: [N, C] broadcast over space.
Var add_channel_bias(const Var& x, const Var& e);
Var reshape(const Var& x, std::vector<int> shape);

// Mean soft-target cross entropy over the batch; logits and targets [B, K].
Var softmax_cross_entropy(const Var& logits, const Tensor& targets);
// Mean squared error against a constant target.
Var mse_loss(const Var& pred, const Tensor& target);
// Mean binary cross entropy; logits [B, 1], labels in {0, 1}.
Var bce_with_logits(const Var& logits, std::span<const float> labels);

}  // namespace reconguard::nn

#endif  // RECONGUARD_NN_OPS_H_
