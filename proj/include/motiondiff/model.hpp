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

// A complete text-to-motion diffusion model: noise schedule, denoiser,
// toy text encoder (optionally overridden by stored embeddings) and the
// per-dimension data normalizer. The network operates on normalized
// motion; sampling and editing return motion in data units.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"
#include "motiondiff/random.hpp"
#include "motiondiff/text_encoder.hpp"

namespace motiondiff {

struct ModelConfig {
  DenoiserConfig denoiser;
  TextConfig text;
  int diffusion_steps = 1000;
  double schedule_offset = 0.008;

  void validate() const {
    denoiser.validate();
    if (text.dim != denoiser.d_text) throw ConfigError("text.dim must equal denoiser.d_text");
    if (diffusion_steps < 2) throw ConfigError("diffusion_steps must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"denoiser", c.denoiser},
       {"text", {{"vocab", c.text.vocab}, {"dim", c.text.dim}, {"max_words", c.text.max_words}}},
       {"diffusion_steps", c.diffusion_steps},
       {"schedule_offset", c.schedule_offset}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("denoiser").get_to(c.denoiser);
  j.at("text").at("vocab").get_to(c.text.vocab);
  j.at("text").at("dim").get_to(c.text.dim);
  j.at("text").at("max_words").get_to(c.text.max_words);
  j.at("diffusion_steps").get_to(c.diffusion_steps);
  j.at("schedule_offset").get_to(c.schedule_offset);
}

/// Per-dimension affine map to roughly unit-variance data.
struct Normalizer {
  RowVec<double> mean;
  RowVec<double> std;

  static Normalizer identity(Index dims) { return {RowVec<double>::Zero(dims), RowVec<double>::Ones(dims)}; }

  /// Statistics over the valid frames of every motion; std is floored so
  /// constant dimensions stay finite.
  static Normalizer fit(const std::vector<MotionSequence>& motions, double min_std = 1e-2) {
    if (motions.empty()) throw ConfigError("cannot fit a normalizer on an empty dataset");
    const Index dims = motions.front().dims();
    RowVec<double> sum = RowVec<double>::Zero(dims), sq = RowVec<double>::Zero(dims);
    double count = 0;
    for (const auto& m : motions) {
      if (m.dims() != dims) throw DimensionError("normalizer: inconsistent motion widths");
      auto valid = m.data.topRows(m.valid_len);
      sum += valid.colwise().sum();
      sq += valid.array().square().matrix().colwise().sum();
      count += static_cast<double>(m.valid_len);
    }
    if (count < 1) throw ConfigError("normalizer: no valid frames");
    Normalizer n;
    n.mean = sum / count;
    n.std = ((sq / count).array() - n.mean.array().square()).max(0.0).sqrt().max(min_std).matrix();
    return n;
  }

  Index dims() const { return mean.size(); }

  template <class S>
  Mat<S> normalize(const Mat<double>& x) const {
    return ((x.rowwise() - mean).array().rowwise() / std.array()).matrix().template cast<S>();
  }
  template <class S>
  Mat<double> denormalize(const Mat<S>& x) const {
    return ((x.template cast<double>().array().rowwise() * std.array()).rowwise() + mean.array()).matrix();
  }
};

template <class S>
class MotionModel {
 public:
  MotionModel() = default;
  MotionModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng = make_rng(seed, {0x6d6f64656cULL});
    schedule_ = build_cosine_schedule(cfg.diffusion_steps, cfg.schedule_offset);
    denoiser_ = Denoiser<S>(cfg.denoiser, rng);
    text_ = ToyTextEncoder<S>(cfg.text, rng);
    normalizer_ = Normalizer::identity(cfg.denoiser.d_motion);
  }

  const ModelConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const Denoiser<S>& denoiser() const { return denoiser_; }
  Denoiser<S>& denoiser() { return denoiser_; }
  const ToyTextEncoder<S>& text_encoder() const { return text_; }
  ToyTextEncoder<S>& text_encoder() { return text_; }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) {
    if (n.dims() != cfg_.denoiser.d_motion) throw DimensionError("normalizer width does not match d_motion");
    normalizer_ = std::move(n);
  }

  /// Stored embeddings take precedence over the toy encoder for known texts.
  /// The empty prompt always maps to the learned null context.
  void set_embedding_store(std::shared_ptr<const EmbeddingStore<S>> store) {
    if (store && store->size() > 0 && store->dim() != cfg_.text.dim)
      throw DimensionError("embedding file width does not match d_text");
    store_ = std::move(store);
  }

  TextContext<S> encode_text(const std::string& text) const {
    if (auto hit = stored(text)) return *hit;
    return text_.encode(text);
  }
  TextContext<S> null_context() const { return text_.encode(""); }

  ContextVars<S> encode_text(ag::Tape<S>& tape, const std::string& text) const {
    if (auto hit = stored(text)) return context_on_tape(tape, *hit);
    return text_.encode(tape, text);
  }

  DenoiserOutput<S> predict(const Mat<S>& m_t, int t, Index length, const TextContext<S>& ctx) const {
    return denoiser_.predict(m_t, t, length, ctx);
  }

  /// Every trainable tensor in a fixed order (denoiser, then text table).
  nn::ParamRefs<S> parameters() {
    nn::ParamRefs<S> out;
    denoiser_.collect(out);
    text_.collect(out);
    return out;
  }

  std::vector<Mat<S>> parameter_values() const {
    std::vector<Mat<S>> out;
    for (auto* p : const_cast<MotionModel*>(this)->parameters()) out.push_back(p->value);
    return out;
  }

  void load_parameter_values(const std::vector<Mat<S>>& values) {
    auto params = parameters();
    if (values.size() != params.size()) throw DimensionError("parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(params[i]->value, values[i], params[i]->name.c_str());
      params[i]->value = values[i];
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : parameter_values()) n += static_cast<std::size_t>(v.size());
    return n;
  }

 private:
  std::optional<TextContext<S>> stored(const std::string& text) const {
    if (!store_ || text.empty()) return std::nullopt;
    if (auto hit = store_->find(text)) return hit;
    log::warn("no stored embedding for \"" + text + "\", using the toy encoder");
    return std::nullopt;
  }

  ModelConfig cfg_;
  DiffusionSchedule schedule_;
  Denoiser<S> denoiser_;
  ToyTextEncoder<S> text_;
  Normalizer normalizer_;
  std::shared_ptr<const EmbeddingStore<S>> store_;
};

}  // namespace motiondiff
