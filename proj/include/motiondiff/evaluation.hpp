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

// Metric evaluation of a trained model against annotated reference motions.
//
// Sample i is generated with seed sample_seed(seed, i), so reports do not
// depend on the number of worker threads.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "motiondiff/dataset.hpp"
#include "motiondiff/feature_extractor.hpp"
#include "motiondiff/metrics.hpp"
#include "motiondiff/sampler.hpp"

namespace motiondiff {

inline constexpr std::uint64_t kEvalStream = 5;

/// Seed of the i-th independent sample drawn under a master seed.
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  Rng r = make_rng(seed, {kEvalStream, index});
  return r();
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
/// failure after all workers stop.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        {
          std::lock_guard lock(mu);
          if (failure) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct EvalOptions {
  /// Guidance, step count and method; length and seed are set per sample.
  SampleSpec sampling;
  std::uint64_t seed = 0;
  /// Samples per set for multimodality; 0 skips the metric.
  int multimodality_samples = 10;
  int candidates = 32;
  int jobs = 1;
};

template <class S, class E>
MetricReport evaluate(const MotionModel<S>& model, const FeatureExtractor<E>& fx,
                      const std::vector<LabeledMotion>& data, const EvalOptions& opt) {
  if (data.empty()) throw ConfigError("evaluation set is empty");
  const Index max_frames = std::min(model.config().denoiser.max_frames, fx.config().max_frames);
  const std::size_t n = data.size();

  std::vector<MotionSequence> refs(n), gens(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = data[i].motion;
    const Index len = std::min(m.valid_len, max_frames);
    if (len < 2) throw ValidationError("reference motion " + std::to_string(i) + " has fewer than 2 frames");
    refs[i] = MotionSequence(m.data.topRows(len), len, m.fps);
  }
  parallel_for(n, opt.jobs, [&](std::size_t i) {
    SampleSpec spec = opt.sampling;
    spec.length = refs[i].valid_len;
    spec.seed = sample_seed(opt.seed, i);
    gens[i] = sample(model, model.encode_text(data[i].text), spec);
    gens[i].fps = refs[i].fps;
  });

  MetricReport r;
  r.samples = n;
  std::vector<Mat<double>> gen_pos, ref_pos;
  for (std::size_t i = 0; i < n; ++i) {
    gen_pos.push_back(motion_positions(gens[i]));
    ref_pos.push_back(motion_positions(refs[i]));
  }
  r.ape = ape_mean(gen_pos, ref_pos);
  r.ave = ave_mean(gen_pos, ref_pos);
  for (const auto& p : gen_pos) r.joint_variance += joint_diversity(p) / static_cast<double>(n);

  const Mat<double> gen_feats = fx.encode_motions(gens);
  const Mat<double> ref_feats = fx.encode_motions(refs);
  r.fd = frechet_distance(gen_feats, ref_feats);

  std::map<std::string, int> index;
  std::vector<std::string> pool;
  for (const auto& d : data)
    if (index.emplace(d.text, static_cast<int>(pool.size())).second) pool.push_back(d.text);
  const Mat<double> pool_feats = fx.encode_texts(pool);
  std::vector<int> gt;
  for (std::size_t i = 0; i < n; ++i) {
    const int g = index.at(data[i].text);
    gt.push_back(g);
    r.mclip += cosine_similarity(gen_feats.row(static_cast<Index>(i)), pool_feats.row(g)) / static_cast<double>(n);
    r.mclip_ground_truth += cosine_similarity(ref_feats.row(static_cast<Index>(i)), pool_feats.row(g)) / static_cast<double>(n);
  }
  Rng rank_rng = make_rng(opt.seed, {kEvalStream, 0x72707265ULL});
  r.r_precision = r_precision(gen_feats, gt, pool_feats, rank_rng, opt.candidates);

  if (opt.multimodality_samples > 0) {
    const std::size_t s_l = static_cast<std::size_t>(opt.multimodality_samples);
    std::vector<Index> lengths(pool.size(), 0);
    for (std::size_t i = 0; i < n; ++i)
      if (lengths[static_cast<std::size_t>(gt[i])] == 0) lengths[static_cast<std::size_t>(gt[i])] = refs[i].valid_len;
    std::vector<MotionSequence> extra(pool.size() * 2 * s_l);
    parallel_for(extra.size(), opt.jobs, [&](std::size_t k) {
      const std::size_t c = k / (2 * s_l);
      SampleSpec spec = opt.sampling;
      spec.length = lengths[c];
      spec.seed = sample_seed(opt.seed, n + k);
      extra[k] = sample(model, model.encode_text(pool[c]), spec);
    });
    std::vector<Mat<double>> sets_a, sets_b;
    for (std::size_t c = 0; c < pool.size(); ++c) {
      Mat<double> a(static_cast<Index>(s_l), fx.config().d_feat), b(static_cast<Index>(s_l), fx.config().d_feat);
      for (std::size_t k = 0; k < s_l; ++k) {
        a.row(static_cast<Index>(k)) = fx.encode_motion(extra[c * 2 * s_l + k]);
        b.row(static_cast<Index>(k)) = fx.encode_motion(extra[c * 2 * s_l + s_l + k]);
      }
      sets_a.push_back(std::move(a));
      sets_b.push_back(std::move(b));
    }
    r.multimodality = multimodality(sets_a, sets_b);
  }
  return r;
}

}  // namespace motiondiff
