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

// Reverse-process generation: ancestral (DDPM) and DDIM updates over an
// optionally respaced step plan, with classifier-free guidance.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "motiondiff/diffusion.hpp"
#include "motiondiff/model.hpp"
#include "motiondiff/random.hpp"

namespace motiondiff {

enum class SamplerMethod { ddpm, ddim };

inline SamplerMethod parse_sampler_method(const std::string& s) {
  if (s == "ddpm") return SamplerMethod::ddpm;
  if (s == "ddim") return SamplerMethod::ddim;
  throw ConfigError("unknown sampling method '" + s + "' (expected ddpm or ddim)");
}

struct SampleSpec {
  Index length = 128;
  double guidance_scale = 8.0;
  /// false runs the conditional prediction alone (one forward pass per step).
  bool guided = true;
  /// Number of reverse steps K; 0 means the full schedule.
  int steps = 0;
  SamplerMethod method = SamplerMethod::ddpm;
  double ddim_eta = 0.0;
  std::uint64_t seed = 0;

  void validate(int diffusion_steps, Index max_frames) const {
    if (length < 1) throw ConfigError("sample length must be >= 1");
    if (length > max_frames)
      throw CapacityError("sample length " + std::to_string(length) + " exceeds max_frames " + std::to_string(max_frames));
    if (steps < 0 || steps > diffusion_steps)
      throw ConfigError("sampling steps must lie in [1, " + std::to_string(diffusion_steps) + "]");
    if (guidance_scale < 0.0) throw ConfigError("guidance scale must be >= 0");
    if (!(ddim_eta >= 0.0 && ddim_eta <= 1.0)) throw ConfigError("ddim_eta must lie in [0, 1]");
  }
};

/// eps(null) + s * (eps(c) - eps(null)), evaluated as s * eps(c) + (1 - s) * eps(null)
/// so that s = 1 and s = 0 return their endpoint exactly.
template <class S>
Mat<S> guided_epsilon(const Mat<S>& eps_cond, const Mat<S>& eps_uncond, double scale) {
  require_same_shape(eps_cond, eps_uncond, "guided_epsilon");
  return S(scale) * eps_cond + S(1.0 - scale) * eps_uncond;
}

/// Reverse steps to visit: plan step i (1-based) evaluates the network at
/// original timestep timesteps[i - 1] and updates with schedule(i).
struct StepPlan {
  std::vector<int> timesteps;
  DiffusionSchedule schedule;

  int steps() const { return static_cast<int>(timesteps.size()); }
};

inline StepPlan full_plan(const DiffusionSchedule& base) {
  StepPlan p;
  p.schedule = base;
  for (int t = 1; t <= base.steps(); ++t) p.timesteps.push_back(t);
  return p;
}

/// K evenly strided steps ending at T. Respaced betas are
/// 1 - abar(t_i) / abar(t_{i-1}), which keeps every marginal q(M_t | M_0) at
/// the selected steps unchanged; adjacent steps copy the original beta.
inline StepPlan respace(const DiffusionSchedule& base, int k) {
  const int t_max = base.steps();
  if (k < 1 || k > t_max)
    throw ConfigError("respacing needs 1 <= K <= T, got K=" + std::to_string(k) + ", T=" + std::to_string(t_max));
  StepPlan p;
  std::vector<double> betas;
  int prev = 0;
  for (int i = 1; i <= k; ++i) {
    const int t = static_cast<int>((static_cast<long long>(i) * t_max * 2 + k) / (2LL * k));
    p.timesteps.push_back(t);
    betas.push_back(t == prev + 1 ? base.beta(t) : 1.0 - base.alpha_bar(t) / base.alpha_bar(prev));
    prev = t;
  }
  p.schedule = DiffusionSchedule::from_betas(std::move(betas));
  return p;
}

template <class S>
StepPlan plan_for(const MotionModel<S>& model, const SampleSpec& spec) {
  const int t_max = model.schedule().steps();
  if (spec.steps == 0 || spec.steps == t_max) return full_plan(model.schedule());
  return respace(model.schedule(), spec.steps);
}

/// Called with the plan index of the state just produced (K for the
/// initial noise, 0 for the final sample) and the state itself.
template <class S>
using StepObserver = std::function<void(int index, const Mat<S>& state)>;

/// Lets the editor rewrite the state after each update (index as above).
template <class S>
using StepHook = std::function<void(int index, Mat<S>& state)>;

/// Runs the reverse chain from `x` (normalized units) and returns the
/// final normalized sample.
template <class S>
Mat<S> run_reverse(const MotionModel<S>& model, const TextContext<S>& ctx, const SampleSpec& spec,
                   const StepPlan& plan, Mat<S> x, Rng& rng, const StepObserver<S>& observe = {},
                   const StepHook<S>& hook = {}) {
  const TextContext<S> null_ctx = model.null_context();
  const auto& sch = plan.schedule;
  const Index length = spec.length;
  if (x.rows() < length) throw DimensionError("initial state shorter than sample length");
  if (observe) observe(plan.steps(), x);
  for (int i = plan.steps(); i >= 1; --i) {
    const int t = plan.timesteps[static_cast<std::size_t>(i - 1)];
    DenoiserOutput<S> out = model.predict(x, t, length, ctx);
    Mat<S> eps = out.eps;
    if (spec.guided) eps = guided_epsilon<S>(out.eps, model.predict(x, t, length, null_ctx).eps, spec.guidance_scale);

    if (spec.method == SamplerMethod::ddpm) {
      Mat<S> mean = mean_from_epsilon<S>(sch, x, eps, i);
      if (i > 1) {
        const Mat<S> log_var = variance_from_raw<S>(sch, out.v, i);
        const Mat<S> z = standard_normal<S>(x.rows(), x.cols(), rng);
        x = mean + ((S(0.5) * log_var.array()).exp() * z.array()).matrix();
      } else {
        x = std::move(mean);
      }
    } else {
      const double ab = sch.alpha_bar(i), ab_prev = sch.alpha_bar(i - 1);
      const Mat<S> x0 = (x - S(std::sqrt(1.0 - ab)) * eps) * S(1.0 / std::sqrt(ab));
      const double sigma =
          spec.ddim_eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_prev));
      x = S(std::sqrt(ab_prev)) * x0 + S(std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma))) * eps;
      if (i > 1 && sigma > 0.0) x += S(sigma) * standard_normal<S>(x.rows(), x.cols(), rng);
    }
    if (!all_finite(x)) throw NumericError("non-finite state at diffusion step " + std::to_string(t));
    if (hook) hook(i - 1, x);
    if (observe) observe(i - 1, x);
  }
  return x;
}

/// Stream id of the generator that draws M_T and ancestral noise.
inline constexpr std::uint64_t kSamplerStream = 1;

template <class S>
MotionSequence sample_with_plan(const MotionModel<S>& model, const TextContext<S>& ctx, const SampleSpec& spec,
                                const StepPlan& plan, const StepObserver<S>& observe = {}) {
  spec.validate(model.schedule().steps(), model.config().denoiser.max_frames);
  Rng rng = make_rng(spec.seed, {kSamplerStream});
  Mat<S> x = standard_normal<S>(spec.length, model.config().denoiser.d_motion, rng);
  Mat<S> out = run_reverse(model, ctx, spec, plan, std::move(x), rng, observe);
  return MotionSequence(model.normalizer().denormalize(out), spec.length);
}

template <class S>
MotionSequence sample(const MotionModel<S>& model, const TextContext<S>& ctx, const SampleSpec& spec,
                      const StepObserver<S>& observe = {}) {
  spec.validate(model.schedule().steps(), model.config().denoiser.max_frames);
  return sample_with_plan(model, ctx, spec, plan_for(model, spec), observe);
}

/// Starts from a caller-supplied M_T (normalized units); seed only feeds
/// ancestral noise.
template <class S>
MotionSequence sample_from(const MotionModel<S>& model, const TextContext<S>& ctx, const SampleSpec& spec,
                           const Mat<S>& x_t) {
  spec.validate(model.schedule().steps(), model.config().denoiser.max_frames);
  if (x_t.rows() != spec.length || x_t.cols() != model.config().denoiser.d_motion)
    throw DimensionError("initial state shape does not match the sample spec");
  Rng rng = make_rng(spec.seed, {kSamplerStream});
  Mat<S> out = run_reverse(model, ctx, spec, plan_for(model, spec), x_t, rng);
  return MotionSequence(model.normalizer().denormalize(out), spec.length);
}

}  // namespace motiondiff
