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

// Transformer-decoder noise/variance predictor.
//
// Token layout for a motion of F frames: [TS, ML, CLS, frame_1 .. frame_F].
//   TS  - sinusoidal(t) through a two-layer SiLU projection
//   ML  - sinusoidal(length) through a separate two-layer projection
//   CLS - pooled text vector, linearly projected
//   frame tokens - per-frame linear projection plus a fixed sinusoidal
//                  positional encoding
// Self-attention keys are limited to the special tokens and the first
// `length` frames; cross-attention reads the text token sequence. Outputs at
// frame positions are projected to 2 * d_motion and split into (eps, v).
// With input_skip, eps additionally receives x_t scaled per dimension by a
// zero-initialized projection of the TS token.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/diffusion.hpp"
#include "motiondiff/nn.hpp"
#include "motiondiff/text_encoder.hpp"

namespace motiondiff {

struct DenoiserConfig {
  Index d_model = 768;
  int n_layers = 8;
  int n_heads = 8;
  Index d_ff = 2048;
  double dropout = 0.1;
  Index d_motion = kPoseDims;
  Index max_frames = 471;
  Index max_ctx_tokens = 20;
  Index d_text = 768;
  /// Adds x_t * gate(TS token) to the noise prediction. Off at the default
  /// width; narrow models (d_model < d_motion) cannot otherwise pass the
  /// full-rank input through to the output.
  bool input_skip = false;

  void validate() const {
    if (d_model <= 0 || d_model % 2 != 0) throw ConfigError("d_model must be positive and even");
    if (n_heads <= 0 || d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (n_layers <= 0) throw ConfigError("n_layers must be positive");
    if (d_ff <= 0 || d_motion <= 0 || d_text <= 0) throw ConfigError("layer widths must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (max_frames <= 0) throw ConfigError("max_frames must be positive");
    if (max_ctx_tokens < 1) throw ConfigError("max_ctx_tokens must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"d_model", c.d_model},   {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
       {"d_ff", c.d_ff},         {"dropout", c.dropout},       {"d_motion", c.d_motion},
       {"max_frames", c.max_frames}, {"max_ctx_tokens", c.max_ctx_tokens}, {"d_text", c.d_text}, {"input_skip", c.input_skip}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("dropout").get_to(c.dropout);
  j.at("d_motion").get_to(c.d_motion);
  j.at("max_frames").get_to(c.max_frames);
  j.at("max_ctx_tokens").get_to(c.max_ctx_tokens);
  j.at("d_text").get_to(c.d_text);
  c.input_skip = j.value("input_skip", false);
}

template <class S>
struct DenoiserVars {
  ag::Var<S> eps;
  ag::Var<S> v;
};

template <class S>
class Denoiser {
 public:
  /// Number of special tokens preceding the frame tokens.
  static constexpr Index kSpecialTokens = 3;

  struct Tokens {
    ag::Var<S> sequence;  // (kSpecialTokens + F) x d_model
    Index self_keys = 0;  // kSpecialTokens + length
    ag::Var<S> step;      // TS token before dropout
  };

  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const Index d = cfg.d_model;
    motion_in_ = nn::Linear<S>("denoiser.motion_in", cfg.d_motion, d, rng);
    step_fc1_ = nn::Linear<S>("denoiser.step_fc1", d, d, rng);
    step_fc2_ = nn::Linear<S>("denoiser.step_fc2", d, d, rng);
    length_fc1_ = nn::Linear<S>("denoiser.length_fc1", d, d, rng);
    length_fc2_ = nn::Linear<S>("denoiser.length_fc2", d, d, rng);
    pooled_proj_ = nn::Linear<S>("denoiser.pooled_proj", cfg.d_text, d, rng);
    if (cfg.d_text == d) pooled_proj_.weight.value = Mat<S>::Identity(d, d);
    for (int l = 0; l < cfg.n_layers; ++l)
      blocks_.emplace_back("denoiser.block" + std::to_string(l), d, cfg.n_heads, cfg.d_ff, cfg.d_text, true, rng);
    final_norm_ = nn::LayerNorm<S>("denoiser.final_norm", d);
    head_ = nn::Linear<S>("denoiser.head", d, 2 * cfg.d_motion, rng);
    if (cfg.input_skip) {
      skip_gate_ = nn::Linear<S>("denoiser.skip_gate", d, cfg.d_motion, rng);
      skip_gate_.weight.value.setZero();
    }
    positions_ = nn::sinusoidal_table<S>(cfg.max_frames, d);
  }

  const DenoiserConfig& config() const { return cfg_; }

  Tokens build_tokens(ag::Tape<S>& tape, const ag::Var<S>& m_t, int t, Index length,
                      const ContextVars<S>& ctx, Rng* dropout_rng = nullptr) const {
    const Index frames = m_t.rows();
    if (length > cfg_.max_frames || frames > cfg_.max_frames)
      throw CapacityError("motion length " + std::to_string(std::max(length, frames)) + " exceeds max_frames " +
                          std::to_string(cfg_.max_frames));
    if (length < 1 || length > frames)
      throw DimensionError("length " + std::to_string(length) + " must lie in [1, " + std::to_string(frames) + "]");
    if (m_t.cols() != cfg_.d_motion)
      throw DimensionError("motion width " + std::to_string(m_t.cols()) + " != " + std::to_string(cfg_.d_motion));
    if (t < 0) throw IndexError("negative diffusion step");
    if (ctx.pooled.cols() != cfg_.d_text || ctx.tokens.cols() != cfg_.d_text)
      throw DimensionError("text context width does not match d_text");

    const Index d = cfg_.d_model;
    auto step_tok = step_fc2_(ag::silu(step_fc1_(tape.constant(nn::sinusoidal<S>(t, d)))));
    auto len_tok = length_fc2_(ag::silu(length_fc1_(tape.constant(nn::sinusoidal<S>(static_cast<double>(length), d)))));
    auto cls_tok = pooled_proj_(ctx.pooled);
    auto frame_tok = ag::add_const(motion_in_(m_t), positions_.topRows(frames));
    auto seq = ag::concat_rows<S>({step_tok, len_tok, cls_tok, frame_tok});
    const S drop = dropout_rng ? S(cfg_.dropout) : S(0);
    return {ag::dropout(seq, drop, dropout_rng), kSpecialTokens + length, step_tok};
  }

  DenoiserVars<S> forward(ag::Tape<S>& tape, const ag::Var<S>& m_t, int t, Index length, const ContextVars<S>& ctx,
                          Rng* dropout_rng = nullptr) const {
    Tokens tok = build_tokens(tape, m_t, t, length, ctx, dropout_rng);
    const S drop = dropout_rng ? S(cfg_.dropout) : S(0);
    const Index ctx_keys = std::min<Index>(ctx.tokens.rows(), cfg_.max_ctx_tokens);
    ag::Var<S> x = tok.sequence;
    for (const auto& b : blocks_) x = b(x, tok.self_keys, &ctx.tokens, ctx_keys, drop, dropout_rng);
    auto frames = ag::slice_rows(x, kSpecialTokens, m_t.rows());
    auto out = head_(final_norm_(frames));
    auto eps = ag::slice_cols(out, 0, cfg_.d_motion);
    if (cfg_.input_skip) eps = ag::add(eps, ag::mul_row(m_t, skip_gate_(tok.step)));
    return {eps, ag::slice_cols(out, cfg_.d_motion, cfg_.d_motion)};
  }

  /// Inference without gradient bookkeeping.
  DenoiserOutput<S> predict(const Mat<S>& m_t, int t, Index length, const TextContext<S>& ctx) const {
    ag::Tape<S> tape(false);
    auto out = forward(tape, tape.constant(m_t), t, length, context_on_tape(tape, ctx));
    return {out.eps.value(), out.v.value()};
  }

  void collect(nn::ParamRefs<S>& out) {
    motion_in_.collect(out);
    step_fc1_.collect(out);
    step_fc2_.collect(out);
    length_fc1_.collect(out);
    length_fc2_.collect(out);
    pooled_proj_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    final_norm_.collect(out);
    head_.collect(out);
    if (cfg_.input_skip) skip_gate_.collect(out);
  }

 private:
  DenoiserConfig cfg_;
  nn::Linear<S> motion_in_, step_fc1_, step_fc2_, length_fc1_, length_fc2_, pooled_proj_;
  std::vector<nn::TransformerBlock<S>> blocks_;
  nn::LayerNorm<S> final_norm_;
  nn::Linear<S> head_, skip_gate_;
  Mat<S> positions_;
};

}  // namespace motiondiff
