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

// Transformer building blocks on top of the autograd tape.

#include <cmath>
#include <string>
#include <vector>

#include "motiondiff/autograd.hpp"
#include "motiondiff/random.hpp"

namespace motiondiff::nn {

template <class S>
using Param = ag::Parameter<S>;
template <class S>
using Var = ag::Var<S>;
template <class S>
using ParamRefs = std::vector<Param<S>*>;

template <class S>
Mat<S> normal_init(Index rows, Index cols, double stddev, Rng& rng) {
  return standard_normal<S>(rows, cols, rng) * S(stddev);
}

/// Sinusoidal embedding of a scalar position: sin terms in the first half,
/// cos terms in the second.
template <class S>
RowVec<S> sinusoidal(double position, Index dim) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal embedding width must be even");
  const Index half = dim / 2;
  RowVec<S> out(dim);
  for (Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out(i) = S(std::sin(position * freq));
    out(half + i) = S(std::cos(position * freq));
  }
  return out;
}

template <class S>
Mat<S> sinusoidal_table(Index rows, Index dim) {
  Mat<S> t(rows, dim);
  for (Index r = 0; r < rows; ++r) t.row(r) = sinusoidal<S>(static_cast<double>(r), dim);
  return t;
}

template <class S>
struct Linear {
  Param<S> weight, bias;

  Linear() = default;
  Linear(const std::string& name, Index in, Index out, Rng& rng)
      : weight(name + ".weight", normal_init<S>(in, out, std::sqrt(2.0 / static_cast<double>(in + out)), rng)),
        bias(name + ".bias", Mat<S>::Zero(1, out)) {}

  Var<S> operator()(const Var<S>& x) const { return ag::linear(x, weight, &bias); }
  void collect(ParamRefs<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class S>
struct LayerNorm {
  Param<S> gain, bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim)
      : gain(name + ".gain", Mat<S>::Ones(1, dim)), bias(name + ".bias", Mat<S>::Zero(1, dim)) {}

  Var<S> operator()(const Var<S>& x) const { return ag::layer_norm(x, gain, bias); }
  void collect(ParamRefs<S>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

template <class S>
struct MultiHeadAttention {
  Linear<S> query, key, value, out;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Index d_model, Index d_context, int n_heads, Rng& rng)
      : query(name + ".q", d_model, d_model, rng),
        key(name + ".k", d_context, d_model, rng),
        value(name + ".v", d_context, d_model, rng),
        out(name + ".o", d_model, d_model, rng),
        heads(n_heads) {}

  /// Queries from x; keys and values from the first `key_limit` rows of ctx.
  Var<S> operator()(const Var<S>& x, const Var<S>& ctx, Index key_limit) const {
    return out(ag::attention(query(x), key(ctx), value(ctx), heads, key_limit));
  }
  void collect(ParamRefs<S>& o) {
    query.collect(o);
    key.collect(o);
    value.collect(o);
    out.collect(o);
  }
};

template <class S>
struct FeedForward {
  Linear<S> up, down;

  FeedForward() = default;
  FeedForward(const std::string& name, Index d_model, Index d_ff, Rng& rng)
      : up(name + ".up", d_model, d_ff, rng), down(name + ".down", d_ff, d_model, rng) {}

  Var<S> operator()(const Var<S>& x, S drop, Rng* rng) const { return down(ag::dropout(ag::gelu(up(x)), drop, rng)); }
  void collect(ParamRefs<S>& o) {
    up.collect(o);
    down.collect(o);
  }
};

/// Pre-norm transformer block: masked self-attention, optional
/// cross-attention, feedforward, each wrapped in a residual connection.
template <class S>
struct TransformerBlock {
  LayerNorm<S> norm_self, norm_cross, norm_ff;
  MultiHeadAttention<S> self_attn, cross_attn;
  FeedForward<S> ff;
  bool has_cross = false;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, Index d_model, int heads, Index d_ff, Index d_context, bool cross, Rng& rng)
      : norm_self(name + ".norm_self", d_model),
        norm_cross(name + ".norm_cross", d_model),
        norm_ff(name + ".norm_ff", d_model),
        self_attn(name + ".self_attn", d_model, d_model, heads, rng),
        ff(name + ".ff", d_model, d_ff, rng),
        has_cross(cross) {
    if (cross) cross_attn = MultiHeadAttention<S>(name + ".cross_attn", d_model, d_context, heads, rng);
  }

  /// `self_keys` limits self-attention to the leading valid tokens; `ctx`
  /// and `ctx_keys` are ignored without cross-attention.
  Var<S> operator()(Var<S> x, Index self_keys, const Var<S>* ctx, Index ctx_keys, S drop, Rng* rng) const {
    Var<S> h = norm_self(x);
    x = ag::add(x, ag::dropout(self_attn(h, h, self_keys), drop, rng));
    if (has_cross) {
      if (ctx == nullptr) throw DimensionError("cross-attention block needs a context");
      x = ag::add(x, ag::dropout(cross_attn(norm_cross(x), *ctx, ctx_keys), drop, rng));
    }
    x = ag::add(x, ag::dropout(ff(norm_ff(x), drop, rng), drop, rng));
    return x;
  }

  void collect(ParamRefs<S>& o) {
    norm_self.collect(o);
    self_attn.collect(o);
    if (has_cross) {
      norm_cross.collect(o);
      cross_attn.collect(o);
    }
    norm_ff.collect(o);
    ff.collect(o);
  }
};

}  // namespace motiondiff::nn
