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


// Synthetic data, batching, optimization, checkpoints, the feature
// extractor and the evaluation driver.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "criteria.hpp"
#include "motiondiff.hpp"

namespace motiondiff {
namespace {

namespace fs = std::filesystem;
using checks::bit_equal;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "motiondiff_training_test";
  fs::create_directories(dir);
  return dir / name;
}

DatasetSpec small_spec(int per_class = 2) {
  DatasetSpec s;
  s.samples_per_class = per_class;
  s.min_frames = 10;
  s.max_frames = 14;
  s.seed = 3;
  return s;
}

ModelConfig small_model() { return checks::tiny_config(kPoseDims, 20, true); }

TrainConfig small_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 4;
  t.total_steps = 10;
  t.clip_length = 12;
  t.clip_stride = 4;
  t.ema_interval = 2;
  t.seed = 9;
  return t;
}

struct Setup {
  std::vector<LabeledMotion> data;
  TrainingState<float> state;
  std::vector<TrainingExample<float>> examples;
};

Setup make_setup(TrainConfig tc = small_train(), int per_class = 2) {
  Setup s;
  s.data = generate_synthetic(small_spec(per_class));
  MotionModel<float> model(small_model(), 4);
  model.set_normalizer(fit_normalizer(s.data, tc.clip_length, tc.clip_stride));
  s.state = TrainingState<float>(std::move(model), tc);
  s.examples = prepare_examples<float>(s.data, s.state.model.normalizer(), tc.clip_length, tc.clip_stride);
  return s;
}

bool same_parameters(const std::vector<Mat<float>>& a, const std::vector<Mat<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_equal(a[i], b[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synthetic, ShapeCountsAndPrompts) {
  const auto data = generate_synthetic(small_spec(6));  // enough variants to cover every prompt
  EXPECT_EQ(data.size(), 48u);
  std::set<std::string> prompts;
  for (const auto& d : data) {
    EXPECT_GE(d.motion.valid_len, 10);
    EXPECT_LE(d.motion.valid_len, 14);
    EXPECT_EQ(d.motion.dims(), kPoseDims);
    EXPECT_TRUE(d.motion.data.allFinite());
    prompts.insert(d.text);
  }
  EXPECT_EQ(prompts.size(), 35u);

  std::set<std::string> all;
  std::size_t total = 0;
  for (auto f : kAllFamilies) {
    total += family_prompts(f).size();
    for (const auto& p : family_prompts(f)) all.insert(p);
  }
  EXPECT_EQ(all.size(), total) << "a prompt is shared between families";
  EXPECT_EQ(all.size(), 35u);
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = generate_synthetic(small_spec()), b = generate_synthetic(small_spec());
  auto spec = small_spec();
  spec.seed = 4;
  const auto c = generate_synthetic(spec);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a[i].motion.data, b[i].motion.data));
    EXPECT_EQ(a[i].text, b[i].text);
    any_diff |= !bit_equal(a[i].motion.data, c[i].motion.data);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Synthetic, FamiliesAreDistinguishableByMotion) {
  // Mean joint-position trajectories differ between families.
  DatasetSpec spec = small_spec(1);
  spec.jitter = 0.0;
  const auto data = generate_synthetic(spec);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = i + 1; j < data.size(); ++j) {
      const Index n = std::min(data[i].motion.valid_len, data[j].motion.valid_len);
      const Mat<double> a = motion_positions(data[i].motion).topRows(n), b = motion_positions(data[j].motion).topRows(n);
      EXPECT_GT((a - b).norm(), 0.1) << data[i].text << " vs " << data[j].text;
    }
}

TEST(Synthetic, WriteAndLoadRoundTrip) {
  const auto data = generate_synthetic(small_spec());
  const auto dir = scratch("dataset");
  fs::remove_all(dir);
  write_dataset(data, dir);
  EXPECT_TRUE(fs::exists(dir / "annotations.jsonl"));
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].text, data[i].text);
    EXPECT_TRUE(bit_equal(back[i].motion.data, data[i].motion.data));
  }
  EXPECT_THROW(load_dataset(scratch("no_such_dataset")), IoError);
}

TEST(Synthetic, SpecValidation) {
  DatasetSpec s = small_spec();
  s.classes.resize(1);
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = small_spec();
  s.min_frames = 20;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(Clips, WindowsAndPadding) {
  Rng rng = make_rng(1);
  const MotionSequence m(standard_normal<double>(20, 3, rng), 18);
  const auto windows = clip_to_length(m, 8, 5);
  ASSERT_EQ(windows.size(), 3u);  // starts 0, 5, 10
  EXPECT_TRUE(bit_equal(windows[2].data, Mat<double>(m.data.middleRows(10, 8))));
  const auto padded = clip_to_length(m, 24, 5);
  ASSERT_EQ(padded.size(), 1u);
  EXPECT_EQ(padded[0].valid_len, 18);
  EXPECT_EQ(padded[0].frames(), 24);
  EXPECT_TRUE(padded[0].data.bottomRows(6).isZero(0));
  EXPECT_THROW(clip_to_length(m, 0, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Batching

TEST(Batching, NullTextReplacement) {
  const auto v = checks::null_text_replacement();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Batching, NullProbabilityEndpoints) {
  EXPECT_EQ(checks::null_text_frequency(500, 0.0, 1), 0.0);
  EXPECT_EQ(checks::null_text_frequency(500, 1.0, 1), 1.0);
}

TEST(Batching, PaddingNoiseAndTimesteps) {
  std::vector<TrainingExample<float>> items = {{Mat<float>::Ones(3, 2), 3, "a"}, {Mat<float>::Ones(5, 2), 5, "b"}};
  Rng rng = make_rng(2);
  std::set<int> steps;
  for (int k = 0; k < 200; ++k) {
    const auto b = make_batch<float>(std::span<const TrainingExample<float>>(items), 7, 0.25, rng);
    ASSERT_EQ(b.motions[0].rows(), 5);
    EXPECT_TRUE(b.motions[0].bottomRows(2).isZero(0));
    EXPECT_TRUE(b.noises[0].bottomRows(2).isZero(0));
    for (int t : b.timesteps) steps.insert(t);
  }
  EXPECT_EQ(steps, (std::set<int>{1, 2, 3, 4, 5, 6, 7}));
  EXPECT_THROW(make_batch<float>(std::span<const TrainingExample<float>>(items), 7, 1.5, rng), ConfigError);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(AdamW, FirstStepMatchesTheUpdateRule) {
  ag::Parameter<double> p("p", Mat<double>::Constant(1, 3, 2.0));
  p.grad = Mat<double>(1, 3);
  p.grad << 0.1, -0.2, 0.0;
  nn::ParamRefs<double> ps{&p};
  auto st = AdamState<double>::zeros_like(ps);
  AdamWConfig cfg{0.01, 0.1, 0.9, 0.999, 1e-8, 0.0};
  adamw_step(ps, st, cfg);
  // Bias-corrected moments after one step are g and g^2.
  for (Index i = 0; i < 3; ++i) {
    const double g = i == 0 ? 0.1 : (i == 1 ? -0.2 : 0.0);
    const double expect = 2.0 * (1 - 0.01 * 0.1) - 0.01 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(p.value(0, i), expect, 1e-12);
  }
}

TEST(AdamW, ClipsByGlobalNormAndSkipsFrozen) {
  ag::Parameter<double> a("a", Mat<double>::Zero(1, 2)), b("b", Mat<double>::Zero(1, 1)), f("f", Mat<double>::Ones(1, 1));
  a.grad = Mat<double>(1, 2);
  a.grad << 3, 0;
  b.grad = Mat<double>::Constant(1, 1, 4);
  f.grad = Mat<double>::Constant(1, 1, 100);
  f.frozen = true;
  nn::ParamRefs<double> ps{&a, &b, &f};
  auto st = AdamState<double>::zeros_like(ps);
  const double norm = adamw_step(ps, st, AdamWConfig{0.1, 0.0, 0.9, 0.999, 1e-8, 1.0});
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(st.m[0](0, 0), 0.1 * 3.0 / 5.0, 1e-15);
  EXPECT_EQ(f.value(0, 0), 1.0);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, ZeroLearningRateLeavesWeightsUntouched) {
  TrainConfig tc = small_train();
  tc.lr = 0.0;
  auto s = make_setup(tc);
  const auto before = s.state.model.parameter_values();
  train(s.state, s.examples);
  EXPECT_EQ(s.state.step, 10);
  EXPECT_TRUE(same_parameters(before, s.state.model.parameter_values()));
}

TEST(Training, EmaWithZeroDecayTracksTheWeights) {
  TrainConfig tc = small_train();
  tc.ema_decay = 0.0;
  auto s = make_setup(tc);
  train(s.state, s.examples, {}, 4);  // interval 2: EMA refreshed at step 4
  EXPECT_TRUE(same_parameters(s.state.ema, s.state.model.parameter_values()));
  train(s.state, s.examples, {}, 5);
  EXPECT_FALSE(same_parameters(s.state.ema, s.state.model.parameter_values()));
}

TEST(Training, OverfitsASmallSet) {
  TrainConfig tc = small_train();
  tc.total_steps = 200;
  tc.batch_size = 8;
  tc.null_text_prob = 0.0;
  auto s = make_setup(tc, 1);
  double first = 0, last = 0;
  train(s.state, s.examples, [&](const StepReport& r) {
    if (r.step <= 20) first += r.loss.simple / 20;
    if (r.step > 180) last += r.loss.simple / 20;
  });
  EXPECT_LT(last, 0.5 * first) << "first 20 steps " << first << ", last 20 steps " << last;
}

TEST(Training, FrozenTextTableStaysFixed) {
  TrainConfig tc = small_train();
  tc.freeze_text = true;
  auto s = make_setup(tc);
  const Mat<float> table = s.state.model.parameters().back()->value;
  train(s.state, s.examples);
  EXPECT_TRUE(bit_equal(table, s.state.model.parameters().back()->value));

  auto t = make_setup(small_train());
  train(t.state, t.examples);
  EXPECT_FALSE(bit_equal(table, t.state.model.parameters().back()->value));
}

TEST(Training, NonFiniteLossNamesTheTimesteps) {
  auto s = make_setup();
  s.state.model.parameters().front()->value(0, 0) = NAN;
  try {
    train(s.state, s.examples);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("t=["), std::string::npos) << e.what();
  }
}

TEST(Training, ConfigValidation) {
  TrainConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.null_text_prob = 1.5;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.ema_decay = 1.5;
  EXPECT_THROW(tc.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripRestoresEverything) {
  auto s = make_setup();
  train(s.state, s.examples, {}, 5);
  const auto path = scratch("round.ckpt");
  save_checkpoint(s.state, path);
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(back.step, 5);
  EXPECT_TRUE(same_parameters(back.model.parameter_values(), s.state.model.parameter_values()));
  EXPECT_TRUE(same_parameters(back.ema, s.state.ema));
  EXPECT_TRUE(same_parameters(back.adam.m, s.state.adam.m));
  EXPECT_TRUE(same_parameters(back.adam.v, s.state.adam.v));
  EXPECT_EQ(back.adam.count, s.state.adam.count);
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(s.state.config));
  EXPECT_EQ(nlohmann::json(back.model.config()), nlohmann::json(s.state.model.config()));
  EXPECT_TRUE(bit_equal(back.model.normalizer().mean, s.state.model.normalizer().mean));

  const auto ema = load_model<float>(path, true), raw = load_model<float>(path, false);
  EXPECT_TRUE(same_parameters(ema.parameter_values(), s.state.ema));
  EXPECT_TRUE(same_parameters(raw.parameter_values(), s.state.model.parameter_values()));
}

TEST(Checkpoint, ResumedTrainingFollowsTheSameTrajectory) {
  auto straight = make_setup();
  train(straight.state, straight.examples);

  auto split = make_setup();
  train(split.state, split.examples, {}, 4);
  const auto path = scratch("resume.ckpt");
  save_checkpoint(split.state, path);
  auto resumed = load_checkpoint<float>(path);
  train(resumed, split.examples);
  EXPECT_EQ(resumed.step, 10);
  EXPECT_TRUE(same_parameters(resumed.model.parameter_values(), straight.state.model.parameter_values()));
  EXPECT_TRUE(same_parameters(resumed.ema, straight.state.ema));
}

TEST(Checkpoint, CorruptionTruncationAndVersions) {
  auto s = make_setup();
  const auto path = scratch("corrupt.ckpt");
  save_checkpoint(s.state, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary) << b; };

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x5a;
  write(flipped);
  EXPECT_THROW(load_checkpoint<float>(path), ParseError);

  write(bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW(load_checkpoint<float>(path), ParseError);

  std::string version = bytes;
  version[8] = 9;  // format version follows the 8-byte magic
  write(version);
  EXPECT_THROW(load_checkpoint<float>(path), VersionError);

  write("not a checkpoint at all, just some text that is long enough");
  EXPECT_THROW(load_checkpoint<float>(path), ParseError);

  write(bytes);
  EXPECT_NO_THROW(load_checkpoint<float>(path));
  EXPECT_THROW(load_checkpoint<double>(path), VersionError);
  EXPECT_THROW(load_checkpoint<float>(scratch("absent.ckpt")), IoError);
}

// ---------------------------------------------------------------------------
// Feature extractor

ExtractorConfig tiny_extractor() {
  ExtractorConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 12;
  c.d_feat = 6;
  c.d_word = 5;
  c.vocab = 23;
  c.max_frames = 16;
  c.dropout = 0.0;
  return c;
}

TEST(InfoNce, IdenticalFeaturesGiveLogN) {
  const Mat<double> f = Mat<double>::Ones(6, 4) / 2.0;
  const auto l = info_nce<double>(f, f, 0.07);
  EXPECT_NEAR(l.total, std::log(6.0), 1e-12);
  EXPECT_NEAR(l.grad_motion.norm(), 0.0, 1e-12);
}

TEST(InfoNce, GradientsMatchFiniteDifferences) {
  Rng rng = make_rng(3);
  Mat<double> mf = standard_normal<double>(5, 4, rng), tf = standard_normal<double>(5, 4, rng);
  const auto l = info_nce<double>(mf, tf, 0.3);
  const double h = 1e-6;
  for (int side = 0; side < 2; ++side) {
    Mat<double>& x = side ? tf : mf;
    const Mat<double>& g = side ? l.grad_text : l.grad_motion;
    for (Index i = 0; i < x.size(); ++i) {
      const double saved = x.data()[i];
      x.data()[i] = saved + h;
      const double up = info_nce<double>(mf, tf, 0.3).total;
      x.data()[i] = saved - h;
      const double down = info_nce<double>(mf, tf, 0.3).total;
      x.data()[i] = saved;
      EXPECT_NEAR(g.data()[i], (up - down) / (2 * h), 1e-7);
    }
  }
}

TEST(Extractor, ParameterGradientsMatchFiniteDifferences) {
  Rng rng = make_rng(4);
  FeatureExtractor<double> fx(tiny_extractor(), rng);
  for (auto* p : fx.parameters()) p->value += 0.1 * standard_normal<double>(p->value.rows(), p->value.cols(), rng);
  std::vector<TrainingExample<double>> ex;
  const char* texts[] = {"a person walks", "someone jumps up", "waving hands", "a slow squat"};
  for (int i = 0; i < 4; ++i) ex.push_back({standard_normal<double>(5, kPoseDims, rng), 3 + i % 3, texts[i]});
  std::vector<const TrainingExample<double>*> batch;
  for (const auto& e : ex) batch.push_back(&e);
  auto params = fx.parameters();
  for (auto* p : params) p->zero_grad();
  contrastive_step(fx, batch, nullptr);
  // Further passes keep accumulating into grad, so keep the analytic copy.
  std::vector<Mat<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  const double h = 1e-5;
  double worst = 0;
  std::string where;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (Index i = 0; i < params[k]->value.size(); ++i) {
      auto* p = params[k];
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + h;
      const double up = contrastive_step(fx, batch, nullptr).total;
      w = saved - h;
      const double down = contrastive_step(fx, batch, nullptr).total;
      w = saved;
      const double e = checks::gradient_rel_err(analytic[k].data()[i], (up - down) / (2 * h));
      if (e > worst) {
        worst = e;
        where = p->name;
      }
    }
  EXPECT_LT(worst, 1e-4) << where;
}

TEST(Extractor, DistinctTextBatches) {
  std::vector<TrainingExample<float>> ex;
  for (int i = 0; i < 30; ++i) ex.push_back({Mat<float>::Zero(2, 3), 2, "text " + std::to_string(i % 7)});
  Rng rng = make_rng(5);
  const auto b = draw_distinct_text_batch(ex, 10, rng);
  EXPECT_EQ(b.size(), 7u);
  std::set<std::string> seen;
  for (auto* e : b) EXPECT_TRUE(seen.insert(e->text).second);
}

TEST(Extractor, TrainsSavesAndLoads) {
  const auto data = generate_synthetic(small_spec(2));
  ExtractorTrainConfig tc;
  tc.steps = 60;
  tc.batch_size = 16;
  tc.clip_length = 12;
  tc.optimizer.lr = 3e-3;
  std::vector<double> losses;
  const auto fx = train_feature_extractor<float>(data, tiny_extractor(), tc, [&](int, double l) { losses.push_back(l); });
  ASSERT_EQ(losses.size(), 60u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[50 + i];
  }
  EXPECT_LT(tail, head);
  const auto path = scratch("fx.bin");
  save_extractor(fx, path);
  const auto back = load_extractor<float>(path);
  EXPECT_EQ(back.encode_motion(data[0].motion), fx.encode_motion(data[0].motion));
  EXPECT_EQ(back.encode_text(data[0].text), fx.encode_text(data[0].text));
  EXPECT_NEAR(fx.encode_text("x").norm(), 1.0, 1e-5);
  EXPECT_THROW(load_checkpoint<float>(path), ParseError);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluation, ReportIsIndependentOfWorkerCount) {
  auto s = make_setup();
  train(s.state, s.examples, {}, 3);
  ExtractorTrainConfig tc;
  tc.steps = 2;
  tc.batch_size = 4;
  tc.clip_length = 12;
  const auto fx = train_feature_extractor<float>(s.data, tiny_extractor(), tc);
  EvalOptions opt;
  opt.sampling.steps = 3;
  opt.multimodality_samples = 2;
  opt.candidates = 4;
  opt.seed = 7;
  const auto a = evaluate(s.state.ema_model(), fx, s.data, opt);
  opt.jobs = 3;
  const auto b = evaluate(s.state.ema_model(), fx, s.data, opt);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.samples, s.data.size());
  EXPECT_TRUE(a.multimodality.has_value());
  EXPECT_TRUE(to_json(a)["mid"].is_null());
  opt.multimodality_samples = 0;
  EXPECT_FALSE(evaluate(s.state.ema_model(), fx, s.data, opt).multimodality.has_value());
}

TEST(Evaluation, SampleSeedsAreDistinct) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(sample_seed(42, i));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_NE(sample_seed(1, 0), sample_seed(2, 0));
}

TEST(Evaluation, ParallelForPropagatesFailures) {
  std::vector<int> hit(50, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] = 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 50);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw NumericError("boom");
               }),
               NumericError);
}

}  // namespace
}  // namespace motiondiff
