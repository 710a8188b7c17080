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

// Dual encoder for evaluation features, trained contrastively.
//
// Motion side: per-frame projection plus sinusoidal positions, a stack of
// self-attention blocks limited to the valid frames, mean pooling over those
// frames and a linear head. Text side: its own hashed word-embedding table,
// mean pooled, then a two-layer GELU head. Both outputs are unit vectors.
// Training minimizes the symmetric InfoNCE loss over in-batch negatives at a
// fixed temperature.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/checkpoint.hpp"
#include "motiondiff/metrics.hpp"
#include "motiondiff/dataset.hpp"
#include "motiondiff/model.hpp"
#include "motiondiff/nn.hpp"
#include "motiondiff/optim.hpp"
#include "motiondiff/text_encoder.hpp"

namespace motiondiff {

struct ExtractorConfig {
  Index d_motion = kPoseDims;
  Index d_model = 512;
  int n_layers = 6;
  int n_heads = 8;
  Index d_ff = 768;
  double dropout = 0.1;
  Index max_frames = 471;
  Index d_feat = 512;
  Index vocab = 4096;
  Index d_word = 512;
  Index max_words = 20;
  double temperature = 0.07;

  void validate() const {
    if (d_model <= 0 || d_model % 2 != 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw ConfigError("extractor d_model must be even and divisible by n_heads");
    if (n_layers < 1 || d_ff < 1 || d_feat < 1 || d_word < 1 || d_motion < 1 || max_frames < 1)
      throw ConfigError("extractor sizes must be positive");
    if (vocab < 2 || max_words < 1) throw ConfigError("extractor vocabulary needs at least 2 rows");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("extractor dropout must lie in [0, 1)");
    if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ExtractorConfig& c) {
  j = {{"d_motion", c.d_motion}, {"d_model", c.d_model},       {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
       {"d_ff", c.d_ff},         {"dropout", c.dropout},       {"max_frames", c.max_frames}, {"d_feat", c.d_feat},
       {"vocab", c.vocab},       {"d_word", c.d_word},         {"max_words", c.max_words}, {"temperature", c.temperature}};
}

inline void from_json(const nlohmann::json& j, ExtractorConfig& c) {
  j.at("d_motion").get_to(c.d_motion);
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("dropout").get_to(c.dropout);
  j.at("max_frames").get_to(c.max_frames);
  j.at("d_feat").get_to(c.d_feat);
  j.at("vocab").get_to(c.vocab);
  j.at("d_word").get_to(c.d_word);
  j.at("max_words").get_to(c.max_words);
  j.at("temperature").get_to(c.temperature);
}

/// Symmetric InfoNCE value and its gradient with respect to both feature
/// matrices (row i of each side is a positive pair).
template <class S>
struct ContrastiveLoss {
  double motion_to_text = 0.0;
  double text_to_motion = 0.0;
  double total = 0.0;  // mean of the two directions
  Mat<S> grad_motion;
  Mat<S> grad_text;
};

namespace detail {

/// Mean cross-entropy of each row of `logits` against its diagonal entry;
/// writes d(loss)/d(logits) to `grad`.
inline double diagonal_cross_entropy(const Eigen::MatrixXd& logits, Eigen::MatrixXd& grad) {
  const Index n = logits.rows();
  grad.resize(n, n);
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    loss += -(logits(i, i) - mx - std::log(z));
    grad.row(i) = e / z;
    grad(i, i) -= 1.0;
  }
  grad /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

}  // namespace detail

/// Logits are (motion_feats * text_feats^T) / temperature.
template <class S>
ContrastiveLoss<S> info_nce(const Mat<S>& motion_feats, const Mat<S>& text_feats, double temperature) {
  require_same_shape(motion_feats, text_feats, "info_nce");
  if (motion_feats.rows() < 2) throw ConfigError("InfoNCE needs a batch of at least 2 pairs");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  const Eigen::MatrixXd m = motion_feats.template cast<double>(), t = text_feats.template cast<double>();
  const Eigen::MatrixXd logits = m * t.transpose() / temperature;
  Eigen::MatrixXd g_rows, g_cols;
  ContrastiveLoss<S> r;
  r.motion_to_text = detail::diagonal_cross_entropy(logits, g_rows);
  r.text_to_motion = detail::diagonal_cross_entropy(logits.transpose(), g_cols);
  r.total = 0.5 * (r.motion_to_text + r.text_to_motion);
  const Eigen::MatrixXd g_logits = 0.5 * (g_rows + g_cols.transpose()) / temperature;
  r.grad_motion = (g_logits * t).template cast<S>();
  r.grad_text = (g_logits.transpose() * m).template cast<S>();
  return r;
}

template <class S>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const ExtractorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const Index d = cfg.d_model;
    motion_in_ = nn::Linear<S>("extractor.motion_in", cfg.d_motion, d, rng);
    for (int l = 0; l < cfg.n_layers; ++l)
      blocks_.emplace_back("extractor.block" + std::to_string(l), d, cfg.n_heads, cfg.d_ff, d, false, rng);
    motion_norm_ = nn::LayerNorm<S>("extractor.motion_norm", d);
    motion_out_ = nn::Linear<S>("extractor.motion_out", d, cfg.d_feat, rng);
    words_ = ag::Parameter<S>("extractor.words", nn::normal_init<S>(cfg.vocab, cfg.d_word, 1.0, rng));
    text_fc1_ = nn::Linear<S>("extractor.text_fc1", cfg.d_word, cfg.d_feat, rng);
    text_fc2_ = nn::Linear<S>("extractor.text_fc2", cfg.d_feat, cfg.d_feat, rng);
    positions_ = nn::sinusoidal_table<S>(cfg.max_frames, d);
    normalizer_ = Normalizer::identity(cfg.d_motion);
  }

  const ExtractorConfig& config() const { return cfg_; }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) {
    if (n.dims() != cfg_.d_motion) throw DimensionError("extractor normalizer width does not match d_motion");
    normalizer_ = std::move(n);
  }

  /// `motion` holds normalized valid frames only.
  ag::Var<S> motion_features(ag::Tape<S>& tape, const Mat<S>& motion, Rng* dropout_rng = nullptr) const {
    const Index frames = motion.rows();
    if (frames < 1) throw DimensionError("extractor: empty motion");
    if (frames > cfg_.max_frames)
      throw CapacityError("extractor: motion length " + std::to_string(frames) + " exceeds max_frames " +
                          std::to_string(cfg_.max_frames));
    if (motion.cols() != cfg_.d_motion) throw DimensionError("extractor: motion width does not match d_motion");
    const S drop = dropout_rng ? S(cfg_.dropout) : S(0);
    auto x = ag::add_const(motion_in_(tape.constant(motion)), positions_.topRows(frames));
    x = ag::dropout(x, drop, dropout_rng);
    for (const auto& b : blocks_) x = b(x, frames, nullptr, 0, drop, dropout_rng);
    auto pooled = ag::mean_rows(motion_norm_(x), frames);
    return ag::l2_normalize_rows(motion_out_(pooled));
  }

  std::vector<int> word_ids(const std::string& text) const {
    auto words = tokenize(text);
    if (words.empty()) return {0};
    if (static_cast<Index>(words.size()) > cfg_.max_words) words.resize(static_cast<std::size_t>(cfg_.max_words));
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(1 + static_cast<int>(fnv1a(w) % static_cast<std::uint64_t>(cfg_.vocab - 1)));
    return ids;
  }

  ag::Var<S> text_features(ag::Tape<S>& tape, const std::string& text) const {
    const auto ids = word_ids(text);
    auto emb = ag::embedding(tape, words_, std::span<const int>(ids));
    auto pooled = ag::mean_rows(emb, emb.rows());
    return ag::l2_normalize_rows(text_fc2_(ag::gelu(text_fc1_(pooled))));
  }

  RowVec<double> encode_motion(const MotionSequence& m) const {
    ag::Tape<S> tape(false);
    const Mat<S> x = normalizer_.normalize<S>(m.data.topRows(m.valid_len));
    return motion_features(tape, x).value().template cast<double>();
  }

  RowVec<double> encode_text(const std::string& text) const {
    ag::Tape<S> tape(false);
    return text_features(tape, text).value().template cast<double>();
  }

  Mat<double> encode_motions(const std::vector<MotionSequence>& ms) const {
    Mat<double> out(static_cast<Index>(ms.size()), cfg_.d_feat);
    for (std::size_t i = 0; i < ms.size(); ++i) out.row(static_cast<Index>(i)) = encode_motion(ms[i]);
    return out;
  }

  Mat<double> encode_texts(const std::vector<std::string>& texts) const {
    Mat<double> out(static_cast<Index>(texts.size()), cfg_.d_feat);
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Index>(i)) = encode_text(texts[i]);
    return out;
  }

  /// Cosine similarity between the motion and text features.
  double mclip(const MotionSequence& m, const std::string& text) const {
    return cosine_similarity(encode_motion(m), encode_text(text));
  }

  void collect(nn::ParamRefs<S>& out) {
    motion_in_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    motion_norm_.collect(out);
    motion_out_.collect(out);
    out.push_back(&words_);
    text_fc1_.collect(out);
    text_fc2_.collect(out);
  }

  nn::ParamRefs<S> parameters() {
    nn::ParamRefs<S> out;
    collect(out);
    return out;
  }

 private:
  ExtractorConfig cfg_;
  nn::Linear<S> motion_in_;
  std::vector<nn::TransformerBlock<S>> blocks_;
  nn::LayerNorm<S> motion_norm_;
  nn::Linear<S> motion_out_;
  ag::Parameter<S> words_;
  nn::Linear<S> text_fc1_, text_fc2_;
  Mat<S> positions_;
  Normalizer normalizer_;
};

struct ExtractorTrainConfig {
  AdamWConfig optimizer{1e-4, 1e-4, 0.9, 0.999, 1e-8, 1.0};
  int steps = 2000;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Index clip_length = 128;
  Index clip_stride = 32;

  void validate() const {
    if (steps < 0) throw ConfigError("extractor steps must be >= 0");
    if (batch_size < 2) throw ConfigError("contrastive training needs batch_size >= 2");
    if (clip_length < 1 || clip_stride < 1) throw ConfigError("clip_length and clip_stride must be >= 1");
  }
};

/// Loss and gradients for one batch of (normalized motion, text) pairs;
/// gradients accumulate into the extractor's parameters.
template <class S>
ContrastiveLoss<S> contrastive_step(const FeatureExtractor<S>& fx, const std::vector<const TrainingExample<S>*>& batch,
                                    Rng* dropout_rng) {
  const Index n = static_cast<Index>(batch.size());
  ag::Tape<S> tape;
  std::vector<ag::Var<S>> mv, tv;
  Mat<S> mf(n, fx.config().d_feat), tf(n, fx.config().d_feat);
  for (Index i = 0; i < n; ++i) {
    const auto& ex = *batch[static_cast<std::size_t>(i)];
    mv.push_back(fx.motion_features(tape, ex.motion.topRows(ex.valid_len), dropout_rng));
    tv.push_back(fx.text_features(tape, ex.text));
    mf.row(i) = mv.back().value();
    tf.row(i) = tv.back().value();
  }
  ContrastiveLoss<S> loss = info_nce<S>(mf, tf, fx.config().temperature);
  std::vector<std::pair<ag::Var<S>, Mat<S>>> seeds;
  for (Index i = 0; i < n; ++i) {
    seeds.emplace_back(mv[static_cast<std::size_t>(i)], loss.grad_motion.row(i));
    seeds.emplace_back(tv[static_cast<std::size_t>(i)], loss.grad_text.row(i));
  }
  tape.backward(seeds);
  return loss;
}

/// Up to batch_size examples with pairwise distinct texts, so no in-batch
/// negative is secretly a positive.
template <class S>
std::vector<const TrainingExample<S>*> draw_distinct_text_batch(const std::vector<TrainingExample<S>>& data,
                                                                std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::set<std::string> seen;
  std::vector<const TrainingExample<S>*> out;
  for (std::size_t i : order) {
    if (out.size() == batch_size) break;
    if (seen.insert(data[i].text).second) out.push_back(&data[i]);
  }
  return out;
}

inline constexpr std::uint64_t kExtractorStream = 4;

using ExtractorCallback = std::function<void(int step, double loss)>;

/// Returns a trained extractor whose normalizer is fitted on `data`.
template <class S>
FeatureExtractor<S> train_feature_extractor(const std::vector<LabeledMotion>& data, const ExtractorConfig& cfg,
                                            const ExtractorTrainConfig& tc, const ExtractorCallback& on_step = {}) {
  cfg.validate();
  tc.validate();
  Rng init = make_rng(tc.seed, {kExtractorStream});
  FeatureExtractor<S> fx(cfg, init);
  fx.set_normalizer(fit_normalizer(data, tc.clip_length, tc.clip_stride));
  const auto examples = prepare_examples<S>(data, fx.normalizer(), tc.clip_length, tc.clip_stride);
  std::set<std::string> texts;
  for (const auto& e : examples) texts.insert(e.text);
  if (texts.size() < 2) throw ConfigError("contrastive training needs at least 2 distinct texts");

  auto params = fx.parameters();
  AdamState<S> adam = AdamState<S>::zeros_like(params);
  for (int step = 0; step < tc.steps; ++step) {
    Rng rng = make_rng(tc.seed, {kExtractorStream, static_cast<std::uint64_t>(step) + 1});
    const auto batch = draw_distinct_text_batch(examples, static_cast<std::size_t>(tc.batch_size), rng);
    for (auto* p : params) p->zero_grad();
    const auto loss = contrastive_step(fx, batch, &rng);
    if (!std::isfinite(loss.total)) throw NumericError("non-finite contrastive loss at step " + std::to_string(step + 1));
    adamw_step(params, adam, tc.optimizer);
    if (on_step) on_step(step + 1, loss.total);
  }
  return fx;
}

template <class S>
void save_extractor(const FeatureExtractor<S>& fx, const std::filesystem::path& path) {
  auto params = const_cast<FeatureExtractor<S>&>(fx).parameters();
  std::vector<Mat<S>> values;
  for (auto* p : params) values.push_back(p->value);
  nlohmann::json header = {{"kind", "feature_extractor"},
                           {"extractor", fx.config()},
                           {"normalizer", detail::normalizer_json(fx.normalizer())}};
  write_container<S>(path, header, {detail::named_group<S>("params", params, values)});
}

template <class S>
FeatureExtractor<S> load_extractor(const std::filesystem::path& path) {
  const Container<S> c = read_container<S>(path);
  const nlohmann::json& header = c.header;
  try {
    if (header.at("kind").get<std::string>() != "feature_extractor")
      throw ParseError(path.string() + ": not a feature extractor checkpoint");
    Rng rng = make_rng(0);
    FeatureExtractor<S> fx(header.at("extractor").get<ExtractorConfig>(), rng);
    fx.set_normalizer(detail::normalizer_from_json(header.at("normalizer")));
    auto params = fx.parameters();
    const auto values = detail::checked_values(c, "params", params);
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
    return fx;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad extractor header: " + e.what());
  }
}

}  // namespace motiondiff
