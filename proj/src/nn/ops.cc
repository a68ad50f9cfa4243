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

#include "reconguard/nn/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "reconguard/errors.h"

namespace reconguard::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapConstRow = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using MapConstVec = Eigen::Map<const Eigen::VectorXf>;

void require(bool ok, const char* what) {
  if (!ok) throw ArgumentError(what);
}

Tensor* grad_if_needed(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

// col[(c*k + i)*k + j][y*W + x] = x[c][y + i - p][x + j - p], zero outside.
void im2col(const float* src, int C, int H, int W, int k, float* col) {
  const int p = k / 2;
  const int hw = H * W;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        float* dst = col + static_cast<std::size_t>((c * k + i) * k + j) * hw;
        const int dx = j - p;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          float* row = dst + y * W;
          const int sy = y + i - p;
          if (sy < 0 || sy >= H || x1 <= x0) {
            std::memset(row, 0, sizeof(float) * W);
            continue;
          }
          const float* srow = src + (c * H + sy) * W;
          for (int x = 0; x < x0; ++x) row[x] = 0.0f;
          std::memcpy(row + x0, srow + x0 + dx, sizeof(float) * (x1 - x0));
          for (int x = x1; x < W; ++x) row[x] = 0.0f;
        }
      }
    }
  }
}

void col2im_add(const float* col, int C, int H, int W, int k, float* dst) {
  const int p = k / 2;
  const int hw = H * W;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const float* src = col + static_cast<std::size_t>((c * k + i) * k + j) * hw;
        const int dx = j - p;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          const int sy = y + i - p;
          if (sy < 0 || sy >= H) continue;
          float* drow = dst + (c * H + sy) * W;
          const float* srow = src + y * W;
          for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& Wt = weight.value();
  require(X.rank() == 4 && Wt.rank() == 4, "conv2d expects rank-4 input and kernel");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int cout = Wt.dim(0), k = Wt.dim(2);
  require(Wt.dim(1) == C, "conv2d channel mismatch");
  require(Wt.dim(3) == k && k % 2 == 1, "conv2d expects square odd kernel");
  require(bias.value().size() == static_cast<std::size_t>(cout), "conv2d bias size");
  const int K = C * k * k, hw = H * W;

  Tensor Y({N, cout, H, W});
  std::vector<float> col(k > 1 ? static_cast<std::size_t>(K) * hw : 0);
  MapConstRow wm(Wt.data(), cout, K);
  const float* b = bias.value().data();
  for (int n = 0; n < N; ++n) {
    const float* xs = X.data() + static_cast<std::size_t>(n) * C * hw;
    const float* colp = xs;
    if (k > 1) {
      im2col(xs, C, H, W, k, col.data());
      colp = col.data();
    }
    MapRow ym(Y.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    ym.noalias() = wm * MapConstRow(colp, K, hw);
    for (int o = 0; o < cout; ++o) ym.row(o).array() += b[o];
  }

  return make_op(std::move(Y), {x, weight, bias}, [=](Node& self) {
    const Tensor& Xv = self.inputs[0]->value;
    const Tensor& Wv = self.inputs[1]->value;
    Tensor* dx = grad_if_needed(self, 0);
    Tensor* dw = grad_if_needed(self, 1);
    Tensor* db = grad_if_needed(self, 2);
    MapConstRow wmat(Wv.data(), cout, K);
    std::vector<float> colbuf(k > 1 ? static_cast<std::size_t>(K) * hw : 0);
    std::vector<float> dcol(dx ? static_cast<std::size_t>(K) * hw : 0);
    for (int n = 0; n < N; ++n) {
      MapConstRow g(self.grad.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
      const float* xs = Xv.data() + static_cast<std::size_t>(n) * C * hw;
      if (dw) {
        const float* colp = xs;
        if (k > 1) {
          im2col(xs, C, H, W, k, colbuf.data());
          colp = colbuf.data();
        }
        MapRow(dw->data(), cout, K).noalias() += g * MapConstRow(colp, K, hw).transpose();
      }
      if (db) {
        // Plain loops: Eigen reductions peel by pointer alignment, which makes
        // the summation order depend on where the buffer was allocated.
        const float* gp = self.grad.data() + static_cast<std::size_t>(n) * cout * hw;
        for (int o = 0; o < cout; ++o) {
          float s = 0.0f;
          for (int i = 0; i < hw; ++i) s += gp[static_cast<std::size_t>(o) * hw + i];
          (*db)[o] += s;
        }
      }
      if (dx) {
        float* dxs = dx->data() + static_cast<std::size_t>(n) * C * hw;
        if (k == 1) {
          MapRow(dxs, C, hw).noalias() += wmat.transpose() * g;
        } else {
          MapRow(dcol.data(), K, hw).noalias() = wmat.transpose() * g;
          col2im_add(dcol.data(), C, H, W, k, dxs);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& Wt = weight.value();
  require(X.rank() == 2 && Wt.rank() == 2, "linear expects rank-2 input and weight");
  const int B = X.dim(0), in = X.dim(1), out = Wt.dim(0);
  require(Wt.dim(1) == in, "linear feature mismatch");
  require(bias.value().size() == static_cast<std::size_t>(out), "linear bias size");
  Tensor Y({B, out});
  MapConstRow wm(Wt.data(), out, in);
  MapConstVec bv(bias.value().data(), out);
  for (int r = 0; r < B; ++r) {
    MapVec y(Y.data() + static_cast<std::size_t>(r) * out, out);
    y.noalias() = wm * MapConstVec(X.data() + static_cast<std::size_t>(r) * in, in);
    y += bv;
  }
  return make_op(std::move(Y), {x, weight, bias}, [=](Node& self) {
    MapConstRow g(self.grad.data(), B, out);
    MapConstRow xm(self.inputs[0]->value.data(), B, in);
    MapConstRow wmat(self.inputs[1]->value.data(), out, in);
    if (Tensor* dw = grad_if_needed(self, 1)) {
      MapRow(dw->data(), out, in).noalias() += g.transpose() * xm;
    }
    if (Tensor* db = grad_if_needed(self, 2)) {
      for (int r = 0; r < B; ++r) {
        for (int o = 0; o < out; ++o) (*db)[o] += self.grad[static_cast<std::size_t>(r) * out + o];
      }
    }
    if (Tensor* dx = grad_if_needed(self, 0)) {
      MapRow(dx->data(), B, in).noalias() += g * wmat;
    }
  });
}

Var relu(const Var& x) {
  Tensor Y = x.value();
  for (float& v : Y.values()) v = v > 0.0f ? v : 0.0f;
  return make_op(std::move(Y), {x}, [](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    const Tensor& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > 0.0f) dx[i] += self.grad[i];
    }
  });
}

Var silu(const Var& x) {
  Tensor Y = x.value();
  for (float& v : Y.values()) v = v / (1.0f + std::exp(-v));
  return make_op(std::move(Y), {x}, [](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    const Tensor& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-xv[i]));
      dx[i] += self.grad[i] * (s + xv[i] * s * (1.0f - s));
    }
  });
}

Var max_pool2(const Var& x) {
  const Tensor& X = x.value();
  require(X.rank() == 4 && X.dim(2) % 2 == 0 && X.dim(3) % 2 == 0,
          "max_pool2 expects even spatial dims");
  const int NC = X.dim(0) * X.dim(1), H = X.dim(2), W = X.dim(3);
  const int h = H / 2, w = W / 2;
  Tensor Y({X.dim(0), X.dim(1), h, w});
  auto argmax = std::make_shared<std::vector<int>>(Y.size());
  for (int p = 0; p < NC; ++p) {
    const float* src = X.data() + static_cast<std::size_t>(p) * H * W;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        int best = (2 * y) * W + 2 * xx;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * W + 2 * xx + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * h + y) * w + xx;
        Y[o] = src[best];
        (*argmax)[o] = static_cast<int>(static_cast<std::size_t>(p) * H * W + best);
      }
    }
  }
  return make_op(std::move(Y), {x}, [argmax](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) dx[(*argmax)[o]] += self.grad[o];
  });
}

Var avg_pool2(const Var& x) {
  const Tensor& X = x.value();
  require(X.rank() == 4 && X.dim(2) % 2 == 0 && X.dim(3) % 2 == 0,
          "avg_pool2 expects even spatial dims");
  const int NC = X.dim(0) * X.dim(1), H = X.dim(2), W = X.dim(3);
  const int h = H / 2, w = W / 2;
  Tensor Y({X.dim(0), X.dim(1), h, w});
  for (int p = 0; p < NC; ++p) {
    const float* src = X.data() + static_cast<std::size_t>(p) * H * W;
    float* dst = Y.data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const float* s = src + 2 * y * W + 2 * xx;
        dst[y * w + xx] = 0.25f * (s[0] + s[1] + s[W] + s[W + 1]);
      }
    }
  }
  return make_op(std::move(Y), {x}, [=](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (int p = 0; p < NC; ++p) {
      float* d = dx.data() + static_cast<std::size_t>(p) * H * W;
      const float* g = self.grad.data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          const float v = 0.25f * g[y * w + xx];
          float* s = d + 2 * y * W + 2 * xx;
          s[0] += v, s[1] += v, s[W] += v, s[W + 1] += v;
        }
      }
    }
  });
}

Var upsample2(const Var& x) {
  const Tensor& X = x.value();
  require(X.rank() == 4, "upsample2 expects rank-4 input");
  const int NC = X.dim(0) * X.dim(1), h = X.dim(2), w = X.dim(3);
  const int H = 2 * h, W = 2 * w;
  Tensor Y({X.dim(0), X.dim(1), H, W});
  for (int p = 0; p < NC; ++p) {
    const float* src = X.data() + static_cast<std::size_t>(p) * h * w;
    float* dst = Y.data() + static_cast<std::size_t>(p) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) dst[y * W + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_op(std::move(Y), {x}, [=](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (int p = 0; p < NC; ++p) {
      float* d = dx.data() + static_cast<std::size_t>(p) * h * w;
      const float* g = self.grad.data() + static_cast<std::size_t>(p) * H * W;
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) d[(y / 2) * w + xx / 2] += g[y * W + xx];
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 4 && B.rank() == 4 && A.dim(0) == B.dim(0) &&
              A.dim(2) == B.dim(2) && A.dim(3) == B.dim(3),
          "concat_channels shape mismatch");
  const int N = A.dim(0), ca = A.dim(1), cb = B.dim(1), hw = A.dim(2) * A.dim(3);
  Tensor Y({N, ca + cb, A.dim(2), A.dim(3)});
  for (int n = 0; n < N; ++n) {
    float* dst = Y.data() + static_cast<std::size_t>(n) * (ca + cb) * hw;
    std::memcpy(dst, A.data() + static_cast<std::size_t>(n) * ca * hw, sizeof(float) * ca * hw);
    std::memcpy(dst + static_cast<std::size_t>(ca) * hw,
                B.data() + static_cast<std::size_t>(n) * cb * hw, sizeof(float) * cb * hw);
  }
  return make_op(std::move(Y), {a, b}, [=](Node& self) {
    Tensor* da = grad_if_needed(self, 0);
    Tensor* db = grad_if_needed(self, 1);
    for (int n = 0; n < N; ++n) {
      const float* g = self.grad.data() + static_cast<std::size_t>(n) * (ca + cb) * hw;
      if (da) {
        float* d = da->data() + static_cast<std::size_t>(n) * ca * hw;
        for (int i = 0; i < ca * hw; ++i) d[i] += g[i];
      }
      if (db) {
        float* d = db->data() + static_cast<std::size_t>(n) * cb * hw;
        for (int i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add shape mismatch");
  Tensor Y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  return make_op(std::move(Y), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* d = grad_if_needed(self, k)) {
        for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
      }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& e) {
  const Tensor& X = x.value();
  const Tensor& E = e.value();
  require(X.rank() == 4 && E.rank() == 2 && E.dim(0) == X.dim(0) && E.dim(1) == X.dim(1),
          "add_channel_bias shape mismatch");
  const int NC = X.dim(0) * X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor Y = X;
  for (int p = 0; p < NC; ++p) {
    float* d = Y.data() + static_cast<std::size_t>(p) * hw;
    for (int i = 0; i < hw; ++i) d[i] += E[p];
  }
  return make_op(std::move(Y), {x, e}, [=](Node& self) {
    if (Tensor* dx = grad_if_needed(self, 0)) {
      for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += self.grad[i];
    }
    if (Tensor* de = grad_if_needed(self, 1)) {
      for (int p = 0; p < NC; ++p) {
        const float* g = self.grad.data() + static_cast<std::size_t>(p) * hw;
        float s = 0.0f;
        for (int i = 0; i < hw; ++i) s += g[i];
        (*de)[p] += s;
      }
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor Y = x.value().reshaped(std::move(shape));
  return make_op(std::move(Y), {x}, [](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& targets) {
  const Tensor& Z = logits.value();
  require(Z.rank() == 2 && targets.shape() == Z.shape(), "cross entropy shape mismatch");
  const int B = Z.dim(0), K = Z.dim(1);
  auto probs = std::make_shared<std::vector<float>>(Z.size());
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const float* z = Z.data() + static_cast<std::size_t>(r) * K;
    const float* t = targets.data() + static_cast<std::size_t>(r) * K;
    const float zmax = *std::max_element(z, z + K);
    double denom = 0.0;
    for (int c = 0; c < K; ++c) denom += std::exp(static_cast<double>(z[c] - zmax));
    const double log_denom = std::log(denom);
    for (int c = 0; c < K; ++c) {
      const double logp = static_cast<double>(z[c] - zmax) - log_denom;
      (*probs)[static_cast<std::size_t>(r) * K + c] = static_cast<float>(std::exp(logp));
      loss -= t[c] * logp;
    }
  }
  Tensor out({1}, {static_cast<float>(loss / B)});
  Tensor tgt = targets;
  return make_op(std::move(out), {logits}, [probs, tgt, B](Node& self) {
    Tensor& dz = self.inputs[0]->grad_buffer();
    const float scale = self.grad[0] / static_cast<float>(B);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += scale * ((*probs)[i] - tgt[i]);
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  const Tensor& P = pred.value();
  require(P.shape() == target.shape(), "mse shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double d = static_cast<double>(P[i]) - target[i];
    s += d * d;
  }
  const std::size_t n = P.size();
  Tensor out({1}, {static_cast<float>(s / static_cast<double>(n))});
  Tensor tgt = target;
  return make_op(std::move(out), {pred}, [tgt, n](Node& self) {
    Tensor& dp = self.inputs[0]->grad_buffer();
    const Tensor& pv = self.inputs[0]->value;
    const float scale = 2.0f * self.grad[0] / static_cast<float>(n);
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += scale * (pv[i] - tgt[i]);
  });
}

Var bce_with_logits(const Var& logits, std::span<const float> labels) {
  const Tensor& Z = logits.value();
  require(Z.size() == labels.size(), "bce label count mismatch");
  const std::size_t n = Z.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = Z[i];
    s += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor out({1}, {static_cast<float>(s / static_cast<double>(n))});
  std::vector<float> y(labels.begin(), labels.end());
  return make_op(std::move(out), {logits}, [y, n](Node& self) {
    Tensor& dz = self.inputs[0]->grad_buffer();
    const Tensor& zv = self.inputs[0]->value;
    const float scale = self.grad[0] / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float sig = 1.0f / (1.0f + std::exp(-zv[i]));
      dz[i] += scale * (sig - y[i]);
    }
  });
}

}  // namespace reconguard::nn
