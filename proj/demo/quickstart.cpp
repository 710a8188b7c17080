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


// Minimal end-to-end use of the library: train a tiny text-conditioned model
// on the synthetic set for a few hundred steps, sample a motion from a
// prompt, then keep its lower body and regenerate the rest under another prompt.
//
//   quickstart [OUT_DIR]

#include <cstdio>
#include <filesystem>

#include "motiondiff.hpp"

using namespace motiondiff;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : ".";
  std::filesystem::create_directories(out);

  DatasetSpec ds;
  ds.samples_per_class = 8;
  ds.min_frames = ds.max_frames = 32;
  const auto data = generate_synthetic(ds);

  ModelConfig mc;
  mc.denoiser.d_model = 32;
  mc.denoiser.n_layers = 2;
  mc.denoiser.n_heads = 4;
  mc.denoiser.d_ff = 64;
  mc.denoiser.d_text = mc.text.dim = 32;
  mc.denoiser.max_frames = 64;
  mc.denoiser.input_skip = true;
  mc.diffusion_steps = 50;

  TrainConfig tc;
  tc.total_steps = 300;
  tc.batch_size = 16;
  tc.lr = 1e-3;
  tc.clip_length = 32;

  MotionModel<float> model(mc, /*seed=*/1);
  model.set_normalizer(fit_normalizer(data, tc.clip_length, tc.clip_stride));
  TrainingState<float> st(std::move(model), tc);
  const auto examples = prepare_examples<float>(data, st.model.normalizer(), tc.clip_length, tc.clip_stride);
  train(st, examples, [](const StepReport& r) {
    if (r.step % 100 == 0) std::printf("step %lld  L_simple %.4f\n", static_cast<long long>(r.step), r.loss.simple);
  });
  const MotionModel<float> ema = st.ema_model();

  SampleSpec spec;
  spec.length = 32;
  spec.steps = 25;
  spec.seed = 42;
  const std::string prompt = data.front().text;
  const MotionSequence motion = sample(ema, ema.encode_text(prompt), spec);
  save_motion(motion, out / "sample.json");
  save_positions_sidecar(motion, out / "sample.pos.json");

  const MotionSequence edited =
      edit(ema, motion, joint_mask(motion, lower_body_joints()), ema.encode_text(data.back().text), spec);
  save_motion(edited, out / "edited.json");
  std::printf("sampled \"%s\" and re-generated everything above the hips; wrote %s\n", prompt.c_str(), out.string().c_str());
}
