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

// Synthetic text/motion corpus and the training-data pipeline (clipping,
// null-text replacement, timestep and noise draws, padding).
//
// Each motion family has a handful of variants, each with exactly one
// prompt, so every distinct prompt names a distinct motion. Renders are
// parametric in normalized clip time u in [0, 1], so "once" and "twice"
// mean the same number of cycles at any clip length.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "motiondiff/motion.hpp"
#include "motiondiff/random.hpp"

namespace motiondiff {

enum class MotionFamily { walk, arm_raise, turn, squat, jump, wave, kick_left, kick_right };

inline constexpr std::array<MotionFamily, 8> kAllFamilies = {
    MotionFamily::walk, MotionFamily::arm_raise, MotionFamily::turn,      MotionFamily::squat,
    MotionFamily::jump, MotionFamily::wave,      MotionFamily::kick_left, MotionFamily::kick_right};

inline const char* family_name(MotionFamily f) {
  switch (f) {
    case MotionFamily::walk: return "walk";
    case MotionFamily::arm_raise: return "arm_raise";
    case MotionFamily::turn: return "turn";
    case MotionFamily::squat: return "squat";
    case MotionFamily::jump: return "jump";
    case MotionFamily::wave: return "wave";
    case MotionFamily::kick_left: return "kick_left";
    case MotionFamily::kick_right: return "kick_right";
  }
  return "?";
}

/// Prompt of every variant, indexed by variant id.
inline const std::vector<std::string>& family_prompts(MotionFamily f) {
  static const std::vector<std::string> walk = {
      "a person walks forward slowly", "a person walks forward quickly", "a person walks backward slowly",
      "a person walks backward quickly", "a person walks sideways to the left"};
  static const std::vector<std::string> arm = {
      "a person raises the left arm to shoulder height", "a person raises the right arm to shoulder height",
      "a person raises both arms to shoulder height",    "a person raises the left arm above the head",
      "a person raises the right arm above the head",    "a person raises both arms above the head"};
  static const std::vector<std::string> turn = {"a person turns to the left", "a person turns to the right",
                                                "a person turns around to the left", "a person turns around to the right"};
  static const std::vector<std::string> squat = {"a person squats down slightly once", "a person squats down slightly twice",
                                                 "a person squats down deeply once", "a person squats down deeply twice"};
  static const std::vector<std::string> jump = {"a person jumps in place once", "a person jumps in place twice",
                                                "a person jumps forward once", "a person jumps forward twice"};
  static const std::vector<std::string> wave = {"a person waves the left hand slowly", "a person waves the left hand quickly",
                                                "a person waves the right hand slowly", "a person waves the right hand quickly"};
  static const std::vector<std::string> kick_l = {
      "a person kicks low with the left leg once", "a person kicks high with the left leg once",
      "a person kicks low with the left leg twice", "a person kicks high with the left leg twice"};
  static const std::vector<std::string> kick_r = {
      "a person kicks low with the right leg once", "a person kicks high with the right leg once",
      "a person kicks low with the right leg twice", "a person kicks high with the right leg twice"};
  switch (f) {
    case MotionFamily::walk: return walk;
    case MotionFamily::arm_raise: return arm;
    case MotionFamily::turn: return turn;
    case MotionFamily::squat: return squat;
    case MotionFamily::jump: return jump;
    case MotionFamily::wave: return wave;
    case MotionFamily::kick_left: return kick_l;
    case MotionFamily::kick_right: return kick_r;
  }
  return walk;
}

/// Per-sample perturbation of a family's nominal parameters.
struct RenderJitter {
  double amplitude = 1.0;  // multiplies joint angles
  double speed = 1.0;      // multiplies root translation speed
  double phase = 0.0;      // radians added to periodic phases
  Eigen::Vector3d start = Eigen::Vector3d::Zero();
};

namespace detail {

inline Eigen::Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix(); }
inline Eigen::Matrix3d rot_y(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix(); }
inline Eigen::Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

/// Bump rising over [a, a + w], holding, and falling over [b - w, b].
inline double plateau(double u, double a, double b, double w) {
  return smoothstep((u - a) / w) * smoothstep((b - u) / w);
}

struct PoseFrame {
  Eigen::Vector3d root{0.0, 0.92, 0.0};
  std::array<Eigen::Matrix3d, kNumJoints> rot;

  PoseFrame() {
    rot.fill(Eigen::Matrix3d::Identity());
    rot[16] = rot_z(-1.2);  // arms lowered at rest
    rot[17] = rot_z(1.2);
  }

  RowVec<double> pack() const {
    Pose p;
    p.root_translation = root;
    for (int j = 0; j < kNumJoints; ++j) {
      p.joint_rotations[j].head<3>() = rot[j].col(0);
      p.joint_rotations[j].tail<3>() = rot[j].col(1);
    }
    return p.pack();
  }
};

constexpr int kLHip = 1, kRHip = 2, kSpine1 = 3, kLKnee = 4, kRKnee = 5, kLAnkle = 7, kRAnkle = 8, kLShoulder = 16,
              kRShoulder = 17, kLElbow = 18, kRElbow = 19;

inline void gait(PoseFrame& p, double w, double amp, bool sideways, double sign) {
  const double s = std::sin(w);
  if (sideways) {
    p.rot[kLHip] = rot_z(0.35 * amp * std::max(0.0, s));
    p.rot[kRHip] = rot_z(-0.35 * amp * std::max(0.0, -s));
  } else {
    p.rot[kLHip] = rot_x(-sign * 0.5 * amp * s);
    p.rot[kRHip] = rot_x(sign * 0.5 * amp * s);
    p.rot[kLShoulder] = rot_x(sign * 0.4 * amp * s) * rot_z(-1.2);
    p.rot[kRShoulder] = rot_x(-sign * 0.4 * amp * s) * rot_z(1.2);
  }
  p.rot[kLKnee] = rot_x(0.7 * amp * std::max(0.0, s));
  p.rot[kRKnee] = rot_x(0.7 * amp * std::max(0.0, -s));
}

}  // namespace detail

/// Renders one motion of `frames` frames.
inline MotionSequence render_family(MotionFamily family, int variant, Index frames, double fps, const RenderJitter& jit) {
  using namespace detail;
  const auto& prompts = family_prompts(family);
  if (variant < 0 || variant >= static_cast<int>(prompts.size())) throw ConfigError("unknown family variant");
  if (frames < 2) throw ConfigError("synthetic motions need at least 2 frames");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Mat<double> data(frames, kPoseDims);
  const double a = jit.amplitude;
  for (Index f = 0; f < frames; ++f) {
    const double u = static_cast<double>(f) / static_cast<double>(frames - 1);
    const double time = static_cast<double>(f) / fps;
    PoseFrame p;
    switch (family) {
      case MotionFamily::walk: {
        const bool quick = variant == 1 || variant == 3;
        const bool backward = variant == 2 || variant == 3;
        const bool sideways = variant == 4;
        const double cycles = quick ? 3.0 : 1.5;
        const double speed = (quick ? 1.2 : 0.5) * (backward ? 0.7 : 1.0) * jit.speed;
        const double w = kTwoPi * cycles * u + jit.phase;
        gait(p, w, a, sideways, backward ? -1.0 : 1.0);
        p.root.y() += 0.02 * std::abs(std::sin(w));
        if (sideways)
          p.root.x() += 0.4 * jit.speed * time;
        else
          p.root.z() += (backward ? -1.0 : 1.0) * speed * time;
        break;
      }
      case MotionFamily::arm_raise: {
        const int side = variant % 3;  // 0 left, 1 right, 2 both
        const double delta = (variant < 3 ? 1.2 : 2.6) * a;
        const double s = plateau(u, 0.05, 0.95, 0.35);
        if (side != 1) p.rot[kLShoulder] = rot_z(-1.2 + delta * s);
        if (side != 0) p.rot[kRShoulder] = rot_z(1.2 - delta * s);
        break;
      }
      case MotionFamily::turn: {
        const double dir = (variant % 2 == 0) ? 1.0 : -1.0;
        const double angle = (variant < 2 ? std::numbers::pi / 2 : std::numbers::pi) * a;
        p.rot[0] = rot_y(dir * angle * smoothstep((u - 0.1) / 0.8));
        const double w = kTwoPi * 2.0 * u + jit.phase;
        p.rot[kLHip] = rot_x(-0.25 * std::max(0.0, std::sin(w)));
        p.rot[kRHip] = rot_x(-0.25 * std::max(0.0, -std::sin(w)));
        p.rot[kLKnee] = rot_x(0.5 * std::max(0.0, std::sin(w)));
        p.rot[kRKnee] = rot_x(0.5 * std::max(0.0, -std::sin(w)));
        break;
      }
      case MotionFamily::squat: {
        const double cycles = (variant % 2 == 0) ? 1.0 : 2.0;
        const double depth = (variant < 2 ? 0.6 : 1.3) * a;
        const double s = std::sin(std::numbers::pi * cycles * u);
        const double d = depth * s * s;
        p.rot[kLHip] = rot_x(-d);
        p.rot[kRHip] = rot_x(-d);
        p.rot[kLKnee] = rot_x(1.8 * d);
        p.rot[kRKnee] = rot_x(1.8 * d);
        p.rot[kLAnkle] = rot_x(-0.8 * d);
        p.rot[kRAnkle] = rot_x(-0.8 * d);
        p.rot[kSpine1] = rot_x(0.3 * d);
        p.rot[kLShoulder] = rot_x(-0.9 * d) * rot_z(-1.2);
        p.rot[kRShoulder] = rot_x(-0.9 * d) * rot_z(1.2);
        p.root.y() -= 0.28 * d;
        break;
      }
      case MotionFamily::jump: {
        const double cycles = (variant % 2 == 0) ? 1.0 : 2.0;
        const bool forward = variant >= 2;
        const double cu = cycles * u;
        const double phase = cu - std::floor(cu);
        const double done = std::floor(cu);
        const double crouch = phase < 0.35 ? std::sin(std::numbers::pi * phase / 0.35)
                                           : (phase > 0.75 ? 0.6 * std::sin(std::numbers::pi * (phase - 0.75) / 0.25) : 0.0);
        const double air = (phase >= 0.35 && phase <= 0.75) ? std::sin(std::numbers::pi * (phase - 0.35) / 0.4) : 0.0;
        p.rot[kLHip] = rot_x(-0.8 * a * crouch);
        p.rot[kRHip] = rot_x(-0.8 * a * crouch);
        p.rot[kLKnee] = rot_x(1.4 * a * crouch);
        p.rot[kRKnee] = rot_x(1.4 * a * crouch);
        p.rot[kLShoulder] = rot_z(-1.2 + 1.6 * air * a);
        p.rot[kRShoulder] = rot_z(1.2 - 1.6 * air * a);
        p.root.y() += 0.35 * a * air - 0.2 * crouch;
        if (forward) p.root.z() += 0.6 * jit.speed * (done + smoothstep((phase - 0.35) / 0.4));
        break;
      }
      case MotionFamily::wave: {
        const bool left = variant < 2;
        const double waves = (variant % 2 == 0) ? 2.0 : 5.0;
        const double up = smoothstep(u / 0.2);
        const double osc = std::sin(kTwoPi * waves * u + jit.phase) * up;
        if (left) {
          p.rot[kLShoulder] = rot_z(-1.2 + 2.0 * a * up);
          p.rot[kLElbow] = rot_z(0.6 * up + 0.5 * a * osc);
        } else {
          p.rot[kRShoulder] = rot_z(1.2 - 2.0 * a * up);
          p.rot[kRElbow] = rot_z(-0.6 * up - 0.5 * a * osc);
        }
        break;
      }
      case MotionFamily::kick_left:
      case MotionFamily::kick_right: {
        const bool left = family == MotionFamily::kick_left;
        const double cycles = variant < 2 ? 1.0 : 2.0;
        const double height = (variant % 2 == 0 ? 0.7 : 1.4) * a;
        const double s = std::sin(std::numbers::pi * cycles * u);
        const double k = height * s * s;
        const int hip = left ? kLHip : kRHip, knee = left ? kLKnee : kRKnee;
        const int arm = left ? kRShoulder : kLShoulder;
        p.rot[hip] = rot_x(-k);
        p.rot[knee] = rot_x(0.5 * std::abs(std::sin(2.0 * std::numbers::pi * cycles * u)));
        p.rot[arm] = rot_x(-0.5 * k) * rot_z(left ? 1.2 : -1.2);
        break;
      }
    }
    p.root += jit.start;
    data.row(f) = p.pack();
  }
  return MotionSequence(std::move(data), frames, fps);
}

struct DatasetSpec {
  std::vector<MotionFamily> classes{kAllFamilies.begin(), kAllFamilies.end()};
  int samples_per_class = 32;
  Index min_frames = 64;
  Index max_frames = 128;
  double fps = kDefaultFps;
  /// Relative amplitude/speed jitter per sample.
  double jitter = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes.size() < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    if (samples_per_class < 1) throw ConfigError("samples per class must be >= 1");
    if (min_frames < 2 || max_frames < min_frames) throw ConfigError("invalid frame length range");
    if (!(fps > 0)) throw ConfigError("fps must be positive");
    if (!(jitter >= 0 && jitter < 1)) throw ConfigError("jitter must lie in [0, 1)");
  }
};

struct LabeledMotion {
  MotionSequence motion;
  std::string text;
  MotionFamily family = MotionFamily::walk;
  int variant = 0;
};

/// Deterministic given spec.seed. Variants are assigned round-robin within
/// each class.
inline std::vector<LabeledMotion> generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0x73796e7468ULL});
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<Index> length(spec.min_frames, spec.max_frames);
  std::vector<LabeledMotion> out;
  for (MotionFamily fam : spec.classes) {
    const int n_var = static_cast<int>(family_prompts(fam).size());
    for (int i = 0; i < spec.samples_per_class; ++i) {
      const int variant = i % n_var;
      RenderJitter j;
      j.amplitude = 1.0 + spec.jitter * unit(rng);
      j.speed = 1.0 + spec.jitter * unit(rng);
      j.phase = 2.0 * spec.jitter * unit(rng);
      j.start = Eigen::Vector3d(0.5 * spec.jitter * unit(rng), 0.0, 0.5 * spec.jitter * unit(rng));
      const Index frames = length(rng);
      out.push_back({render_family(fam, variant, frames, spec.fps, j), family_prompts(fam)[static_cast<std::size_t>(variant)],
                     fam, variant});
    }
  }
  return out;
}

/// Writes motions/NNNNNN.json plus annotations.jsonl under `dir`.
inline void write_dataset(const std::vector<LabeledMotion>& items, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "motions", ec);
  if (ec) throw IoError("cannot create " + (dir / "motions").string() + ": " + ec.message());
  std::vector<Annotation> ann;
  for (std::size_t i = 0; i < items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "motions/%06zu.json", i);
    save_motion(items[i].motion, dir / name);
    ann.push_back({name, items[i].text});
  }
  save_annotations(ann, dir / "annotations.jsonl");
}

/// Reads annotations.jsonl and every motion it references.
inline std::vector<LabeledMotion> load_dataset(const std::filesystem::path& dir) {
  const auto ann_path = dir / "annotations.jsonl";
  if (!std::filesystem::exists(ann_path)) throw IoError("missing annotations file " + ann_path.string());
  std::vector<LabeledMotion> out;
  for (const auto& a : load_annotations(ann_path)) {
    LabeledMotion lm;
    lm.motion = load_motion(dir / a.motion);
    lm.text = a.text;
    out.push_back(std::move(lm));
  }
  if (out.empty()) throw IoError("dataset " + dir.string() + " has no annotations");
  return out;
}

/// Fixed-length clips: longer motions become windows starting every
/// `stride` frames; shorter ones are zero-padded with valid_len kept.
inline std::vector<MotionSequence> clip_to_length(const MotionSequence& m, Index target, Index stride) {
  if (target < 1) throw ConfigError("clip length must be >= 1");
  if (stride < 1) throw ConfigError("clip stride must be >= 1");
  const Index len = m.valid_len;
  std::vector<MotionSequence> clips;
  if (len > target) {
    for (Index start = 0; start + target <= len; start += stride)
      clips.emplace_back(m.data.middleRows(start, target), target, m.fps);
  } else if (len == target && m.frames() == target) {
    clips.push_back(m);
  } else {
    Mat<double> padded = Mat<double>::Zero(target, m.dims());
    padded.topRows(len) = m.data.topRows(len);
    clips.emplace_back(std::move(padded), len, m.fps);
  }
  return clips;
}

/// One normalized training sequence (padding rows are zero).
template <class S>
struct TrainingExample {
  Mat<S> motion;
  Index valid_len = 0;
  std::string text;
};

template <class S>
struct Batch {
  std::vector<Mat<S>> motions;  // each max_len x dims, zero beyond valid_len
  std::vector<Index> valid_lens;
  std::vector<std::string> texts;  // "" where the prompt was replaced by the null text
  std::vector<int> timesteps;      // uniform over 1..T
  std::vector<Mat<S>> noises;      // standard normal on valid rows, zero on padding

  std::size_t size() const { return motions.size(); }
};

template <class S>
Batch<S> make_batch(std::span<const TrainingExample<S>> items, int diffusion_steps, double null_prob, Rng& rng) {
  if (items.empty()) throw ConfigError("make_batch: no items");
  if (!(null_prob >= 0.0 && null_prob <= 1.0)) throw ConfigError("null-text probability must lie in [0, 1]");
  Index max_len = 0;
  for (const auto& it : items) max_len = std::max(max_len, it.valid_len);
  std::bernoulli_distribution drop(null_prob);
  std::uniform_int_distribution<int> step(1, diffusion_steps);
  Batch<S> b;
  for (const auto& it : items) {
    const Index dims = it.motion.cols();
    Mat<S> m = Mat<S>::Zero(max_len, dims);
    m.topRows(it.valid_len) = it.motion.topRows(it.valid_len);
    b.motions.push_back(std::move(m));
    b.valid_lens.push_back(it.valid_len);
    b.texts.push_back(drop(rng) ? std::string() : it.text);
    b.timesteps.push_back(step(rng));
    Mat<S> noise = Mat<S>::Zero(max_len, dims);
    noise.topRows(it.valid_len) = standard_normal<S>(it.valid_len, dims, rng);
    b.noises.push_back(std::move(noise));
  }
  return b;
}

}  // namespace motiondiff
