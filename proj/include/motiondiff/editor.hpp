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

// Mask-based editing: "diffuse then conditionally denoise". Entries with
// mask 1 are taken from the reference (diffused to the current step) after
// every reverse update; entries with mask 0 are generated under the prompt.
//
// Mask file (JSON), any combination of:
//   {"frames": [[a, b], ...]}   preserve every dim of frames a..b-1
//                               (a single [a, b] pair is also accepted)
//   {"joints": [j, ...]}        preserve joint j's 6 rotation dims in every
//                               frame; j = 24 stands for root translation
//   {"grid": [[0|1, ...], ...]} explicit frames x dims matrix
// The preserved sets of all given keys are united.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/sampler.hpp"

namespace motiondiff {

struct EditMask {
  /// frames x dims, 1 = preserve reference, 0 = editable.
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grid;

  static EditMask zeros(Index frames, Index dims) {
    EditMask m;
    m.grid.setZero(frames, dims);
    return m;
  }
  static EditMask ones(Index frames, Index dims) {
    EditMask m;
    m.grid.setOnes(frames, dims);
    return m;
  }
  static EditMask like(const MotionSequence& ref) { return zeros(ref.frames(), ref.dims()); }

  Index frames() const { return grid.rows(); }
  Index dims() const { return grid.cols(); }
  Index preserved() const { return grid.template cast<Index>().sum(); }

  void validate() const {
    for (Index i = 0; i < grid.size(); ++i)
      if (grid.data()[i] > 1) throw ValidationError("edit mask entries must be 0 or 1");
  }
};

/// First n_context frames preserved, the rest editable.
inline EditMask prediction_mask(const MotionSequence& ref, Index n_context) {
  if (n_context <= 0 || n_context >= ref.frames())
    throw ConfigError("prediction context must lie in (0, " + std::to_string(ref.frames()) + "), got " +
                      std::to_string(n_context));
  EditMask m = EditMask::like(ref);
  m.grid.topRows(n_context).setOnes();
  return m;
}

/// First n_head and last n_tail frames preserved. Both zero gives an
/// all-editable mask.
inline EditMask inbetween_mask(const MotionSequence& ref, Index n_head, Index n_tail) {
  if (n_head < 0 || n_tail < 0) throw ConfigError("in-between frame counts must be >= 0");
  if (n_head + n_tail >= ref.frames())
    throw ConfigError("in-between head + tail (" + std::to_string(n_head + n_tail) +
                      ") must be smaller than the frame count " + std::to_string(ref.frames()));
  EditMask m = EditMask::like(ref);
  m.grid.topRows(n_head).setOnes();
  m.grid.bottomRows(n_tail).setOnes();
  return m;
}

/// Preserves the listed joints in every frame; kRootTranslation (24)
/// selects the three root-translation dims.
inline EditMask joint_mask(const MotionSequence& ref, const std::vector<int>& joints) {
  if (ref.dims() != kPoseDims) throw DimensionError("joint masks require 147-dim motion");
  EditMask m = EditMask::like(ref);
  for (int j : joints) {
    if (j < 0 || j > kRootTranslation)
      throw ConfigError("joint index " + std::to_string(j) + " outside [0, " + std::to_string(kRootTranslation) + "]");
    if (j == kRootTranslation)
      m.grid.leftCols(kRootDims).setOnes();
    else
      m.grid.middleCols(rotation_offset(j), kRotDims).setOnes();
  }
  return m;
}

/// Pelvis, hips, knees, ankles, feet and root translation.
inline const std::vector<int>& lower_body_joints() {
  static const std::vector<int> j = {0, 1, 2, 4, 5, 7, 8, 10, 11, kRootTranslation};
  return j;
}

inline EditMask mask_from_json(const nlohmann::json& j, const MotionSequence& ref, const std::string& source = "mask") {
  auto fail = [&](const std::string& ptr, const std::string& msg) { return ParseError(source + ": " + ptr + ": " + msg); };
  if (!j.is_object()) throw fail("", "expected an object");
  if (!j.contains("frames") && !j.contains("joints") && !j.contains("grid"))
    throw fail("", "expected one of frames, joints, grid");
  EditMask m = EditMask::like(ref);
  if (j.contains("frames")) {
    const auto& f = j["frames"];
    if (!f.is_array()) throw fail("/frames", "expected an array");
    std::vector<nlohmann::json> ranges;
    if (f.size() == 2 && f[0].is_number_integer()) ranges.push_back(f);
    else
      for (const auto& r : f) ranges.push_back(r);
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      const auto& r = ranges[i];
      const std::string ptr = "/frames/" + std::to_string(i);
      if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer())
        throw fail(ptr, "expected a [begin, end) integer pair");
      const Index a = r[0].get<Index>(), b = r[1].get<Index>();
      if (a < 0 || b < a || b > ref.frames()) throw fail(ptr, "range outside [0, " + std::to_string(ref.frames()) + "]");
      m.grid.middleRows(a, b - a).setOnes();
    }
  }
  if (j.contains("joints")) {
    const auto& js = j["joints"];
    if (!js.is_array()) throw fail("/joints", "expected an array");
    std::vector<int> ids;
    for (std::size_t i = 0; i < js.size(); ++i) {
      if (!js[i].is_number_integer()) throw fail("/joints/" + std::to_string(i), "expected an integer");
      ids.push_back(js[i].get<int>());
    }
    const EditMask jm = joint_mask(ref, ids);
    m.grid = m.grid.cwiseMax(jm.grid);
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    if (!g.is_array() || static_cast<Index>(g.size()) != ref.frames())
      throw DimensionError(source + ": /grid: expected " + std::to_string(ref.frames()) + " rows");
    for (Index r = 0; r < ref.frames(); ++r) {
      const auto& row = g[static_cast<std::size_t>(r)];
      const std::string ptr = "/grid/" + std::to_string(r);
      if (!row.is_array() || static_cast<Index>(row.size()) != ref.dims())
        throw DimensionError(source + ": " + ptr + ": expected " + std::to_string(ref.dims()) + " entries");
      for (Index c = 0; c < ref.dims(); ++c) {
        const auto& x = row[static_cast<std::size_t>(c)];
        if (!x.is_number_integer() || (x.get<int>() != 0 && x.get<int>() != 1))
          throw fail(ptr + "/" + std::to_string(c), "expected 0 or 1");
        if (x.get<int>() == 1) m.grid(r, c) = 1;
      }
    }
  }
  return m;
}

inline EditMask load_mask(const std::filesystem::path& path, const MotionSequence& ref) {
  return mask_from_json(read_json_file(path), ref, path.string());
}

/// Stream id of the generator that diffuses the reference.
inline constexpr std::uint64_t kReferenceStream = 2;

/// Edits `reference` under `ctx`. The network sees reference.valid_len
/// frames; padding rows are returned unchanged. Editable entries start from
/// the same M_T draw that sample() would use with this spec, preserved
/// entries from the diffused reference, and the final sample takes every
/// preserved entry from the undiffused reference itself.
template <class S>
MotionSequence edit(const MotionModel<S>& model, const MotionSequence& reference, const EditMask& mask,
                    const TextContext<S>& ctx, SampleSpec spec) {
  if (mask.frames() != reference.frames() || mask.dims() != reference.dims())
    throw DimensionError("edit mask is " + std::to_string(mask.frames()) + "x" + std::to_string(mask.dims()) +
                         " but the reference is " + std::to_string(reference.frames()) + "x" +
                         std::to_string(reference.dims()));
  mask.validate();
  if (reference.dims() != model.config().denoiser.d_motion) throw DimensionError("reference width does not match model");
  if (reference.valid_len < 1) throw DimensionError("reference has no valid frames");
  spec.length = reference.valid_len;
  spec.validate(model.schedule().steps(), model.config().denoiser.max_frames);

  const Index len = reference.valid_len, dims = reference.dims();
  const StepPlan plan = plan_for(model, spec);
  const Mat<S> ref = model.normalizer().template normalize<S>(reference.data.topRows(len));
  const auto keep = mask.grid.topRows(len).array() != 0;

  Rng rng = make_rng(spec.seed, {kSamplerStream});
  Rng ref_rng = make_rng(spec.seed, {kReferenceStream});
  auto diffused_ref = [&](int index) {
    return diffuse<S>(plan.schedule, ref, index, standard_normal<S>(len, dims, ref_rng));
  };

  Mat<S> x = standard_normal<S>(len, dims, rng);
  x = keep.select(diffused_ref(plan.steps()), x);
  StepHook<S> overwrite = [&](int index, Mat<S>& state) {
    if (index >= 1) state = keep.select(diffused_ref(index), state);
  };
  Mat<S> out = run_reverse(model, ctx, spec, plan, std::move(x), rng, {}, overwrite);

  MotionSequence result = reference;
  const Mat<double> generated = model.normalizer().denormalize(out);
  result.data.topRows(len) = keep.select(reference.data.topRows(len), generated);
  return result;
}

}  // namespace motiondiff
