// Copyright 2026 The motiondiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// AdamW with decoupled weight decay and global gradient-norm clipping.

#include <cmath>
#include <cstdint>
#include <vector>

#include "motiondiff/nn.hpp"

namespace motiondiff {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm bound; 0 disables clipping.
  double grad_clip = 1.0;
};

/// First and second moments per parameter, plus the bias-correction count.
template <class S>
struct AdamState {
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
  std::int64_t count = 0;

  static AdamState zeros_like(const nn::ParamRefs<S>& params) {
    AdamState st;
    for (auto* p : params) {
      st.m.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      st.v.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
    return st;
  }
};

/// L2 norm of all non-frozen gradients taken together.
template <class S>
double global_grad_norm(const nn::ParamRefs<S>& params) {
  double sq = 0.0;
  for (auto* p : params)
    if (!p->frozen && p->grad.size() > 0) sq += p->grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// One update from the accumulated gradients; frozen parameters are left
/// bit-identical. Returns the pre-clipping gradient norm.
template <class S>
double adamw_step(const nn::ParamRefs<S>& params, AdamState<S>& st, const AdamWConfig& cfg) {
  if (st.m.size() != params.size() || st.v.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  const double norm = global_grad_norm(params);
  const S scale = (cfg.grad_clip > 0 && norm > cfg.grad_clip) ? S(cfg.grad_clip / norm) : S(1);
  st.count += 1;
  const S bc1 = S(1.0 - std::pow(cfg.beta1, static_cast<double>(st.count)));
  const S bc2 = S(1.0 - std::pow(cfg.beta2, static_cast<double>(st.count)));
  const S b1 = S(cfg.beta1), b2 = S(cfg.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    if (p->frozen) continue;
    if (p->grad.size() == 0) p->zero_grad();
    const Mat<S> g = p->grad * scale;
    st.m[k] = b1 * st.m[k] + (S(1) - b1) * g;
    st.v[k] = b2 * st.v[k] + (S(1) - b2) * g.cwiseProduct(g);
    p->value *= S(1.0 - cfg.lr * cfg.weight_decay);
    p->value.array() -= S(cfg.lr) * (st.m[k].array() / bc1) / ((st.v[k].array() / bc2).sqrt() + S(cfg.eps));
  }
  return norm;
}

}  // namespace motiondiff
