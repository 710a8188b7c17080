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


// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. The end-to-end criteria train a small model on the synthetic
// dataset; pass --skip-training to run only the structural checks.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "criteria.hpp"
#include "motiondiff.hpp"

namespace {

using namespace motiondiff;
using checks::fmt;
using checks::Verdict;

int g_failures = 0;
nlohmann::json g_summary = nlohmann::json::array();

void report(const std::string& name, const Verdict& v) {
  std::printf("%s  %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
  std::fflush(stdout);
  g_failures += !v.pass;
  g_summary.push_back({{"criterion", name}, {"pass", v.pass}, {"detail", v.detail}, {"seconds", v.seconds}});
}

void note(const std::string& text) {
  std::printf("      %s\n", text.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// End-to-end run. Settings are fixed in advance; nothing here is tuned
// against the measured outcome.

constexpr Index kFrames = 40;
constexpr int kTrainSteps = 8000;
constexpr int kRepeats = 8;  // samples per prompt
constexpr double kGuidance = 8.0;

struct Sweep {
  double mclip = 0.0;
  double mismatched = 0.0;
  RPrecision r;
  double seconds = 0.0;
};

struct EndToEnd {
  std::vector<LabeledMotion> data;
  FeatureExtractor<float> fx;
  MotionModel<float> model;
  std::vector<std::string> pool;
  Mat<double> pool_feats;
  double train_seconds = 0.0;
  double final_loss = 0.0;
};

Sweep sweep(const EndToEnd& e, int steps, SamplerMethod method) {
  checks::Stopwatch clock;
  std::vector<MotionSequence> gens;
  std::vector<int> gt;
  for (int rep = 0; rep < kRepeats; ++rep)
    for (std::size_t c = 0; c < e.pool.size(); ++c) {
      SampleSpec spec;
      spec.length = kFrames;
      spec.guidance_scale = kGuidance;
      spec.steps = steps;
      spec.method = method;
      // The same seeds at every K, so the sweep compares like with like.
      spec.seed = sample_seed(2026, gt.size());
      gens.push_back(sample(e.model, e.model.encode_text(e.pool[c]), spec));
      gt.push_back(static_cast<int>(c));
    }
  const Mat<double> feats = e.fx.encode_motions(gens);
  Sweep s;
  Rng rank_rng = make_rng(2026, {kEvalStream});
  s.r = r_precision(feats, gt, e.pool_feats, rank_rng, 32);
  Rng mismatch_rng = make_rng(2026, {kEvalStream, 1});
  std::uniform_int_distribution<int> other(1, static_cast<int>(e.pool.size()) - 1);
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const int g = gt[i];
    const int wrong = (g + other(mismatch_rng)) % static_cast<int>(e.pool.size());
    s.mclip += cosine_similarity(feats.row(static_cast<Index>(i)), e.pool_feats.row(g)) / gens.size();
    s.mismatched += cosine_similarity(feats.row(static_cast<Index>(i)), e.pool_feats.row(wrong)) / gens.size();
  }
  s.seconds = clock.seconds();
  return s;
}

EndToEnd build_end_to_end() {
  EndToEnd e;
  DatasetSpec ds;
  ds.samples_per_class = 32;
  ds.min_frames = ds.max_frames = kFrames;
  ds.seed = 1;
  e.data = generate_synthetic(ds);
  note("synthetic set: " + std::to_string(e.data.size()) + " motions, 8 classes, " + std::to_string(kFrames) + " frames");

  ExtractorConfig xc;
  xc.d_model = 64;
  xc.n_layers = 2;
  xc.n_heads = 4;
  xc.d_ff = 128;
  xc.d_feat = 64;
  xc.d_word = 64;
  xc.max_frames = 128;
  ExtractorTrainConfig xt;
  xt.steps = 300;
  xt.batch_size = 32;
  xt.clip_length = kFrames;
  xt.optimizer.lr = 1e-3;
  checks::Stopwatch fx_clock;
  e.fx = train_feature_extractor<float>(e.data, xc, xt);

  std::map<std::string, int> index;
  for (const auto& d : e.data)
    if (index.emplace(d.text, static_cast<int>(e.pool.size())).second) e.pool.push_back(d.text);
  e.pool_feats = e.fx.encode_texts(e.pool);
  {
    std::vector<MotionSequence> refs;
    std::vector<int> gt;
    for (const auto& d : e.data) {
      refs.push_back(d.motion);
      gt.push_back(index.at(d.text));
    }
    Rng rng = make_rng(2026, {kEvalStream});
    const auto rp = r_precision(e.fx.encode_motions(refs), gt, e.pool_feats, rng, 32);
    note("feature extractor: " + fmt(fx_clock.seconds()) + " s, R-precision of the real motions top-1 " + fmt(rp.top1));
  }

  ModelConfig mc;
  mc.denoiser.d_model = 64;
  mc.denoiser.n_layers = 2;
  mc.denoiser.n_heads = 4;
  mc.denoiser.d_ff = 128;
  mc.denoiser.d_text = mc.text.dim = 64;
  mc.denoiser.max_frames = 128;
  mc.denoiser.input_skip = true;
  mc.diffusion_steps = 100;
  MotionModel<float> model(mc, 7);
  TrainConfig tc;
  tc.total_steps = kTrainSteps;
  tc.batch_size = 32;
  tc.lr = 1e-3;
  tc.clip_length = kFrames;
  tc.seed = 3;
  model.set_normalizer(fit_normalizer(e.data, tc.clip_length, tc.clip_stride));
  TrainingState<float> st(std::move(model), tc);
  const auto examples = prepare_examples<float>(e.data, st.model.normalizer(), tc.clip_length, tc.clip_stride);
  checks::Stopwatch clock;
  double window = 0.0;
  train(st, examples, [&](const StepReport& r) {
    window += r.loss.simple;
    if (r.step % 1000 == 0) {
      note("step " + std::to_string(r.step) + ": mean simple loss " + fmt(window / 1000) + ", " + fmt(clock.seconds()) + " s");
      e.final_loss = window / 1000;
      window = 0.0;
    }
  });
  e.train_seconds = clock.seconds();
  e.model = st.ema_model();
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  bool skip_training = false;
  std::string summary_path = "acceptance_results.json";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--skip-training") == 0) skip_training = true;
    else if (std::strcmp(argv[i], "--summary") == 0 && i + 1 < argc) summary_path = argv[++i];
    else {
      std::fprintf(stderr, "usage: %s [--skip-training] [--summary FILE]\n", argv[0]);
      return 2;
    }
  }

  try {
    report("diffusion identities", checks::diffusion_identities());
    {
      Verdict plain = checks::gradient_check(false), skip = checks::gradient_check(true);
      Verdict both{plain.pass && skip.pass, "plain: " + plain.detail + "; with input skip: " + skip.detail,
                   plain.seconds + skip.seconds};
      report("gradient correctness", both);
    }
    report("padding invariance", checks::padding_invariance(20));
    report("sampler equivalences", checks::sampler_equivalences());
    report("editing exactness", checks::editing_exactness(10));
    report("6D rotation round-trip", checks::rotation_roundtrip(1000));
    report("metric oracles", checks::metric_oracles());
    report("null-text replacement frequency", checks::null_text_replacement());

    if (skip_training) {
      note("end-to-end criteria skipped (--skip-training)");
    } else {
      const EndToEnd e = build_end_to_end();
      const Sweep full = sweep(e, 0, SamplerMethod::ddpm);
      Verdict overfit;
      overfit.seconds = e.train_seconds;
      overfit.pass = e.train_seconds <= 1200.0 && full.r.top1 >= 0.6 && full.mclip - full.mismatched >= 0.1;
      overfit.detail = std::to_string(kTrainSteps) + " steps in " + fmt(e.train_seconds) + " s (<= 1200 s), R-precision top-1 " +
                       fmt(full.r.top1) + " (>= 0.6; top-2 " + fmt(full.r.top2) + ", top-3 " + fmt(full.r.top3) +
                       "), mCLIP " + fmt(full.mclip) + " vs mismatched " + fmt(full.mismatched) + " (gap " +
                       fmt(full.mclip - full.mismatched) + " >= 0.1), " + std::to_string(kRepeats * e.pool.size()) +
                       " samples, guidance " + fmt(kGuidance);
      report("end-to-end overfit", overfit);

      const Sweep k25 = sweep(e, 25, SamplerMethod::ddpm);
      const Sweep k5 = sweep(e, 5, SamplerMethod::ddpm);
      const double rel25 = (k25.mclip - full.mclip) / full.mclip, rel5 = (k5.mclip - full.mclip) / full.mclip;
      Verdict trend;
      trend.pass = std::abs(rel25) <= 0.05 && rel5 <= -0.10;
      trend.seconds = full.seconds + k25.seconds + k5.seconds;
      trend.detail = "DDPM mCLIP K=100 (=T) " + fmt(full.mclip) + ", K=25 " + fmt(k25.mclip) + " (" + fmt(100 * rel25) +
                     "%, within 5%), K=5 " + fmt(k5.mclip) + " (" + fmt(100 * rel5) + "%, at least -10%)";
      report("step-reduction trend", trend);

      // Informational: the deterministic sampler on the same model.
      for (int k : {100, 25, 5}) {
        const Sweep d = sweep(e, k, SamplerMethod::ddim);
        note("DDIM (eta 0) K=" + std::to_string(k) + ": mCLIP " + fmt(d.mclip) + ", R-precision top-1 " + fmt(d.r.top1));
        g_summary.push_back({{"info", "ddim"}, {"steps", k}, {"mclip", d.mclip}, {"top1", d.r.top1}});
      }
      g_summary.push_back({{"info", "ddpm"},
                           {"mclip", {{"100", full.mclip}, {"25", k25.mclip}, {"5", k5.mclip}}},
                           {"top1", {{"100", full.r.top1}, {"25", k25.r.top1}, {"5", k5.r.top1}}},
                           {"mismatched_mclip", full.mismatched},
                           {"train_seconds", e.train_seconds}});
    }
  } catch (const std::exception& ex) {
    std::printf("FAIL  acceptance run aborted: %s\n", ex.what());
    return 1;
  }

  std::ofstream(summary_path) << g_summary.dump(2) << "\n";
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
