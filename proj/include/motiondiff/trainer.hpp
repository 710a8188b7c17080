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

// Denoiser training: hybrid loss, AdamW with decoupled weight decay, global
// gradient-norm clipping, and a periodically updated EMA copy of the
// weights.
//
// Every step draws its batch, timesteps, noise and dropout masks from
// make_rng(seed, {kTrainStream, step}); nothing else carries RNG state, so a
// run resumed from a checkpoint replays the uninterrupted trajectory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/dataset.hpp"
#include "motiondiff/model.hpp"
#include "motiondiff/optim.hpp"

namespace motiondiff {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Weight of the variational term in the hybrid loss.
  double lambda = 1e-3;
  double ema_decay = 0.99;
  int ema_interval = 10;
  double null_text_prob = 0.25;
  int total_steps = 10000;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool freeze_text = false;
  /// Global gradient-norm bound; 0 disables clipping.
  double grad_clip = 1.0;
  Index clip_length = 128;
  Index clip_stride = 32;

  void validate() const {
    if (!(lr >= 0)) throw ConfigError("lr must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("ema_decay must lie in [0, 1)");
    if (ema_interval < 1) throw ConfigError("ema_interval must be >= 1");
    if (!(null_text_prob >= 0 && null_text_prob <= 1)) throw ConfigError("null_text_prob must lie in [0, 1]");
    if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
    if (clip_length < 1 || clip_stride < 1) throw ConfigError("clip_length and clip_stride must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"lambda", c.lambda},
       {"ema_decay", c.ema_decay},
       {"ema_interval", c.ema_interval},
       {"null_text_prob", c.null_text_prob},
       {"total_steps", c.total_steps},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"freeze_text", c.freeze_text},
       {"grad_clip", c.grad_clip},
       {"clip_length", c.clip_length},
       {"clip_stride", c.clip_stride}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("lr").get_to(c.lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("lambda").get_to(c.lambda);
  j.at("ema_decay").get_to(c.ema_decay);
  j.at("ema_interval").get_to(c.ema_interval);
  j.at("null_text_prob").get_to(c.null_text_prob);
  j.at("total_steps").get_to(c.total_steps);
  j.at("batch_size").get_to(c.batch_size);
  j.at("seed").get_to(c.seed);
  j.at("freeze_text").get_to(c.freeze_text);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("clip_length").get_to(c.clip_length);
  j.at("clip_stride").get_to(c.clip_stride);
}

inline AdamWConfig optimizer_settings(const TrainConfig& c) {
  return {c.lr, c.weight_decay, c.beta1, c.beta2, c.adam_eps, c.grad_clip};
}

/// Everything a checkpoint has to capture.
template <class S>
struct TrainingState {
  MotionModel<S> model;
  std::vector<Mat<S>> ema;
  AdamState<S> adam;
  TrainConfig config;
  std::int64_t step = 0;

  TrainingState() = default;
  TrainingState(MotionModel<S> m, TrainConfig cfg) : model(std::move(m)), config(std::move(cfg)) {
    config.validate();
    model.text_encoder().set_frozen(config.freeze_text);
    ema = model.parameter_values();
    adam = AdamState<S>::zeros_like(model.parameters());
  }

  /// Copy of the model carrying the EMA weights.
  MotionModel<S> ema_model() const {
    MotionModel<S> m = model;
    m.load_parameter_values(ema);
    return m;
  }
};

struct StepReport {
  std::int64_t step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  std::vector<int> timesteps;
};

inline nlohmann::json to_json(const StepReport& r, double lr) {
  return {{"step", r.step},        {"simple", r.loss.simple}, {"vlb", r.loss.vlb},
          {"hybrid", r.loss.hybrid}, {"grad_norm", r.grad_norm}, {"lr", lr}};
}

/// Normalized, fixed-length training clips.
template <class S>
std::vector<TrainingExample<S>> prepare_examples(const std::vector<LabeledMotion>& data, const Normalizer& norm,
                                                 Index clip_length, Index clip_stride) {
  std::vector<TrainingExample<S>> out;
  for (const auto& item : data) {
    for (const auto& clip : clip_to_length(item.motion, clip_length, clip_stride)) {
      TrainingExample<S> ex;
      ex.valid_len = clip.valid_len;
      ex.motion = norm.normalize<S>(clip.data.topRows(clip.valid_len));
      ex.text = item.text;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

/// Normalizer statistics over the clips the trainer will actually see.
inline Normalizer fit_normalizer(const std::vector<LabeledMotion>& data, Index clip_length, Index clip_stride) {
  std::vector<MotionSequence> clips;
  for (const auto& item : data)
    for (auto& c : clip_to_length(item.motion, clip_length, clip_stride)) clips.push_back(std::move(c));
  return Normalizer::fit(clips);
}

inline constexpr std::uint64_t kTrainStream = 3;

/// One optimizer step on `batch`; the returned loss is the batch mean of the
/// per-sequence losses. Throws NumericError on a non-finite loss before
/// touching any parameter.
template <class S>
StepReport train_step(TrainingState<S>& st, const Batch<S>& batch, Rng& dropout_rng) {
  const TrainConfig& cfg = st.config;
  MotionModel<S>& model = st.model;
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();

  StepReport rep;
  rep.step = st.step + 1;
  rep.timesteps = batch.timesteps;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Index len = batch.valid_lens[i];
    const int t = batch.timesteps[i];
    // Padding never reaches valid outputs, so the forward pass only needs
    // the valid rows.
    const Mat<S> x0 = batch.motions[i].topRows(len);
    const Mat<S> noise = batch.noises[i].topRows(len);
    ag::Tape<S> tape;
    auto ctx = model.encode_text(tape, batch.texts[i]);
    auto m_t = tape.constant(diffuse<S>(model.schedule(), x0, t, noise));
    auto out = model.denoiser().forward(tape, m_t, t, len, ctx, &dropout_rng);
    auto loss = loss_terms<S>(model.schedule(), x0, t, noise, {out.eps.value(), out.v.value()}, cfg.lambda, len);
    rep.loss.simple += loss.terms.simple * inv_b;
    rep.loss.vlb += loss.terms.vlb * inv_b;
    rep.loss.hybrid += loss.terms.hybrid * inv_b;
    tape.backward({{out.eps, loss.grad_eps * S(inv_b)}, {out.v, loss.grad_v * S(inv_b)}});
  }
  rep.loss.lambda = cfg.lambda;
  if (!std::isfinite(rep.loss.hybrid)) {
    std::ostringstream os;
    os << "non-finite loss at step " << rep.step << " (simple=" << rep.loss.simple << ", vlb=" << rep.loss.vlb
       << ", t=[";
    for (std::size_t i = 0; i < rep.timesteps.size(); ++i) os << (i ? "," : "") << rep.timesteps[i];
    os << "])";
    throw NumericError(os.str());
  }

  rep.grad_norm = adamw_step(params, st.adam, optimizer_settings(cfg));
  st.step += 1;
  if (st.step % cfg.ema_interval == 0) {
    const S d = S(cfg.ema_decay);
    for (std::size_t k = 0; k < params.size(); ++k) st.ema[k] = d * st.ema[k] + (S(1) - d) * params[k]->value;
  }
  return rep;
}

/// Batch, timesteps, noise and dropout for one step, all from that step's
/// stream. Items are drawn without replacement when the dataset is large
/// enough, with replacement otherwise.
template <class S>
Batch<S> draw_batch(const std::vector<TrainingExample<S>>& data, const TrainConfig& cfg, int diffusion_steps,
                    Rng& rng) {
  if (data.empty()) throw ConfigError("training set is empty");
  const std::size_t n = data.size(), b = static_cast<std::size_t>(cfg.batch_size);
  std::vector<TrainingExample<S>> items;
  items.reserve(b);
  if (b <= n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < b; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      items.push_back(data[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < b; ++i) items.push_back(data[pick(rng)]);
  }
  return make_batch<S>(std::span<const TrainingExample<S>>(items), diffusion_steps, cfg.null_text_prob, rng);
}

using StepCallback = std::function<void(const StepReport&)>;

/// Runs until st.step == st.config.total_steps (or `until`, if smaller and
/// non-negative), invoking `on_step` after every step.
template <class S>
void train(TrainingState<S>& st, const std::vector<TrainingExample<S>>& data, const StepCallback& on_step = {},
           std::int64_t until = -1) {
  const std::int64_t stop = until >= 0 ? std::min<std::int64_t>(until, st.config.total_steps) : st.config.total_steps;
  while (st.step < stop) {
    Rng rng = make_rng(st.config.seed, {kTrainStream, static_cast<std::uint64_t>(st.step)});
    Batch<S> batch = draw_batch(data, st.config, st.model.schedule().steps(), rng);
    StepReport rep = train_step(st, batch, rng);
    if (on_step) on_step(rep);
  }
}

}  // namespace motiondiff
