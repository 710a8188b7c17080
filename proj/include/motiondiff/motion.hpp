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

// Pose and motion representation: 3 root-translation dims followed by 24
// joint rotations in the 6D (two-column) format, 147 values per frame.
// Joint order follows the SMPL kinematic tree; rotations are relative to the
// parent joint, joint 0 carries the global body orientation.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "motiondiff/log.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

inline constexpr int kNumJoints = 24;
inline constexpr int kRootDims = 3;
inline constexpr int kRotDims = 6;
inline constexpr int kPoseDims = kRootDims + kNumJoints * kRotDims;  // 147
inline constexpr double kDefaultFps = 20.0;

/// Pseudo joint index standing for the three root-translation dims in masks.
inline constexpr int kRootTranslation = kNumJoints;

inline constexpr std::array<const char*, kNumJoints> kJointNames = {
    "pelvis",     "left_hip",       "right_hip",      "spine1",      "left_knee",   "right_knee",
    "spine2",     "left_ankle",     "right_ankle",    "spine3",      "left_foot",   "right_foot",
    "neck",       "left_collar",    "right_collar",   "head",        "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",    "left_wrist",     "right_wrist", "left_hand",   "right_hand"};

/// First column of the flat pose vector holding joint j's 6D rotation.
constexpr int rotation_offset(int joint) { return kRootDims + joint * kRotDims; }

using Vec6 = Eigen::Matrix<double, 6, 1>;

struct Pose {
  Eigen::Vector3d root_translation = Eigen::Vector3d::Zero();
  std::array<Vec6, kNumJoints> joint_rotations{};

  static Pose identity() {
    Pose p;
    Vec6 id;
    id << 1, 0, 0, 0, 1, 0;
    p.joint_rotations.fill(id);
    return p;
  }

  RowVec<double> pack() const {
    RowVec<double> v(kPoseDims);
    v.head<3>() = root_translation.transpose();
    for (int j = 0; j < kNumJoints; ++j) v.segment<6>(rotation_offset(j)) = joint_rotations[j].transpose();
    return v;
  }

  template <class Derived>
  static Pose unpack(const Eigen::MatrixBase<Derived>& v) {
    if (v.size() != kPoseDims)
      throw DimensionError("pose vector must have " + std::to_string(kPoseDims) + " entries, got " +
                           std::to_string(v.size()));
    Pose p;
    for (int i = 0; i < 3; ++i) p.root_translation(i) = v(i);
    for (int j = 0; j < kNumJoints; ++j)
      for (int i = 0; i < 6; ++i) p.joint_rotations[j](i) = v(rotation_offset(j) + i);
    return p;
  }
};

/// frames x dims data, of which the first valid_len rows are real motion and
/// the rest is padding.
struct MotionSequence {
  Mat<double> data;
  Index valid_len = 0;
  double fps = kDefaultFps;

  MotionSequence() = default;
  MotionSequence(Mat<double> d, Index valid, double f = kDefaultFps) : data(std::move(d)), valid_len(valid), fps(f) {
    validate();
  }
  static MotionSequence zeros(Index frames, Index dims = kPoseDims, double fps = kDefaultFps) {
    return MotionSequence(Mat<double>::Zero(frames, dims), frames, fps);
  }

  Index frames() const { return data.rows(); }
  Index dims() const { return data.cols(); }

  void validate() const {
    if (valid_len < 0 || valid_len > data.rows())
      throw DimensionError("valid_len " + std::to_string(valid_len) + " exceeds frame count " +
                           std::to_string(data.rows()));
    if (!(fps > 0)) throw ConfigError("fps must be positive");
  }

  /// The valid prefix only.
  MotionSequence trimmed() const { return MotionSequence(data.topRows(valid_len), valid_len, fps); }
};

/// Converts a 6D rotation (first two matrix columns, column-major flattened)
/// into a rotation matrix by Gram-Schmidt. Degenerate input is completed
/// with canonical axes and a warning.
inline Eigen::Matrix3d rot6d_to_matrix(const Vec6& r) {
  constexpr double kTiny = 1e-12;
  Eigen::Vector3d a1 = r.head<3>(), a2 = r.tail<3>();
  bool degenerate = false;
  Eigen::Vector3d b1;
  if (a1.norm() < kTiny) {
    b1 = Eigen::Vector3d::UnitX();
    degenerate = true;
  } else {
    b1 = a1.normalized();
  }
  Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
  if (u2.norm() < kTiny * std::max(1.0, a2.norm())) {
    degenerate = true;
    Eigen::Vector3d axis = std::abs(b1.y()) < 0.9 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitZ();
    u2 = axis - b1.dot(axis) * b1;
  }
  Eigen::Vector3d b2 = u2.normalized();
  if (degenerate) log::warn("degenerate 6D rotation completed with canonical axes");
  Eigen::Matrix3d m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

inline Vec6 matrix_to_rot6d(const Eigen::Matrix3d& m, double tolerance = 1e-6) {
  const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= tolerance) || !(std::abs(m.determinant() - 1.0) <= tolerance))
    throw ValidationError("matrix_to_rot6d: input is not a rotation (orthonormality error " + std::to_string(ortho) +
                          ", det " + std::to_string(m.determinant()) + ")");
  Vec6 r;
  r.head<3>() = m.col(0);
  r.tail<3>() = m.col(1);
  return r;
}

struct Skeleton {
  std::array<int, kNumJoints> parent{};
  std::array<Eigen::Vector3d, kNumJoints> offset{};

  void validate() const {
    if (parent[0] != -1) throw ValidationError("skeleton: joint 0 must be the root");
    for (int j = 1; j < kNumJoints; ++j) {
      // Parents precede children, which also rules out cycles.
      if (parent[j] < 0 || parent[j] >= j)
        throw ValidationError("skeleton: joint " + std::to_string(j) + " has invalid parent");
    }
    for (const auto& o : offset)
      if (!o.allFinite()) throw ValidationError("skeleton: non-finite bone offset");
  }

  /// Fixed human-proportioned 24-joint table (meters, y up, z forward,
  /// x toward the body's left).
  static const Skeleton& standard() {
    static const Skeleton s = [] {
      Skeleton k;
      k.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
      const double o[kNumJoints][3] = {
          {0.0, 0.0, 0.0},       {0.06, -0.09, 0.0},   {-0.06, -0.09, 0.0},  {0.0, 0.11, -0.02},
          {0.04, -0.38, 0.0},    {-0.04, -0.38, 0.0},  {0.0, 0.13, 0.0},     {0.0, -0.40, -0.04},
          {0.0, -0.40, -0.04},   {0.0, 0.05, 0.02},    {0.02, -0.05, 0.12},  {-0.02, -0.05, 0.12},
          {0.0, 0.21, -0.03},    {0.08, 0.11, -0.02},  {-0.08, 0.11, -0.02}, {0.0, 0.09, 0.05},
          {0.12, 0.04, -0.01},   {-0.12, 0.04, -0.01}, {0.26, 0.0, -0.02},   {-0.26, 0.0, -0.02},
          {0.25, 0.01, 0.0},     {-0.25, 0.01, 0.0},   {0.08, -0.01, -0.01}, {-0.08, -0.01, -0.01}};
      for (int j = 0; j < kNumJoints; ++j) k.offset[j] = Eigen::Vector3d(o[j][0], o[j][1], o[j][2]);
      k.validate();
      return k;
    }();
    return s;
  }
};

/// Global joint positions (24 x 3) for one pose.
inline Mat<double> forward_kinematics(const Pose& pose, const Skeleton& skel = Skeleton::standard()) {
  std::array<Eigen::Matrix3d, kNumJoints> global;
  Mat<double> pos(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Matrix3d local = rot6d_to_matrix(pose.joint_rotations[j]);
    const int p = skel.parent[j];
    if (p < 0) {
      global[j] = local;
      pos.row(j) = pose.root_translation.transpose();
    } else {
      global[j] = global[p] * local;
      pos.row(j) = pos.row(p) + (global[p] * skel.offset[j]).transpose();
    }
  }
  return pos;
}

/// Joint positions of the valid frames, one row per frame, joint j in
/// columns [3j, 3j + 3).
inline Mat<double> motion_positions(const MotionSequence& m, const Skeleton& skel = Skeleton::standard()) {
  if (m.dims() != kPoseDims) throw DimensionError("motion_positions requires 147-dim motion");
  Mat<double> out(m.valid_len, kNumJoints * 3);
  for (Index f = 0; f < m.valid_len; ++f) {
    const Mat<double> p = forward_kinematics(Pose::unpack(m.data.row(f)), skel);
    for (int j = 0; j < kNumJoints; ++j) out.block(f, 3 * j, 1, 3) = p.row(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File IO

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Parses the motion JSON object. Diagnostics name the offending JSON pointer.
inline MotionSequence motion_from_json(const nlohmann::json& j, int expected_dims = kPoseDims,
                                       const std::string& source = "motion") {
  auto fail = [&](const std::string& ptr, const std::string& msg) -> ParseError {
    return ParseError(source + ": " + ptr + ": " + msg);
  };
  if (!j.is_object()) throw fail("", "expected an object");
  if (!j.contains("frames") || !j["frames"].is_array()) throw fail("/frames", "missing or not an array");
  const auto& frames = j["frames"];

  Index dims = expected_dims;
  if (j.contains("dims")) {
    if (!j["dims"].is_number_integer()) throw fail("/dims", "expected an integer");
    dims = j["dims"].get<Index>();
    if (dims != expected_dims)
      throw fail("/dims", "motion has " + std::to_string(dims) + " dims but " + std::to_string(expected_dims) +
                              " are required");
  }

  double fps = kDefaultFps;
  if (j.contains("fps")) {
    if (!j["fps"].is_number() || !(j["fps"].get<double>() > 0)) throw fail("/fps", "expected a positive number");
    fps = j["fps"].get<double>();
  } else {
    log::warn(source + ": missing fps, assuming 20");
  }

  const Index n = static_cast<Index>(frames.size());
  Mat<double> data(n, dims);
  for (Index f = 0; f < n; ++f) {
    const auto& row = frames[static_cast<std::size_t>(f)];
    const std::string ptr = "/frames/" + std::to_string(f);
    if (!row.is_array()) throw fail(ptr, "expected an array");
    if (static_cast<Index>(row.size()) != dims)
      throw fail(ptr, "expected " + std::to_string(dims) + " values, got " + std::to_string(row.size()));
    for (Index d = 0; d < dims; ++d) {
      const auto& x = row[static_cast<std::size_t>(d)];
      if (!x.is_number()) throw fail(ptr + "/" + std::to_string(d), "expected a number");
      data(f, d) = x.get<double>();
    }
  }

  Index valid = n;
  if (j.contains("valid_len")) {
    if (!j["valid_len"].is_number_integer()) throw fail("/valid_len", "expected an integer");
    valid = j["valid_len"].get<Index>();
    if (valid < 0 || valid > n) throw fail("/valid_len", "must lie in [0, frame count]");
  }
  return MotionSequence(std::move(data), valid, fps);
}

inline nlohmann::json motion_to_json(const MotionSequence& m) {
  nlohmann::json j;
  if (m.fps == std::floor(m.fps))
    j["fps"] = static_cast<long long>(m.fps);
  else
    j["fps"] = m.fps;
  j["dims"] = m.dims();
  j["valid_len"] = m.valid_len;
  nlohmann::json frames = nlohmann::json::array();
  for (Index f = 0; f < m.frames(); ++f) {
    nlohmann::json row = nlohmann::json::array();
    for (Index d = 0; d < m.dims(); ++d) row.push_back(m.data(f, d));
    frames.push_back(std::move(row));
  }
  j["frames"] = std::move(frames);
  return j;
}

inline MotionSequence load_motion(const std::filesystem::path& path, int expected_dims = kPoseDims) {
  return motion_from_json(read_json_file(path), expected_dims, path.string());
}

inline void save_motion(const MotionSequence& m, const std::filesystem::path& path) {
  if (!m.data.allFinite()) throw NumericError("refusing to save non-finite motion to " + path.string());
  write_text_file(path, motion_to_json(m).dump());
}

/// Joint-position sidecar: frames x 24 x 3 plus the bone list (parents).
inline void save_positions_sidecar(const MotionSequence& m, const std::filesystem::path& path,
                                   const Skeleton& skel = Skeleton::standard()) {
  const Mat<double> pos = motion_positions(m, skel);
  nlohmann::json j;
  j["fps"] = m.fps;
  j["joints"] = kNumJoints;
  j["parents"] = skel.parent;
  j["joint_names"] = kJointNames;
  nlohmann::json frames = nlohmann::json::array();
  for (Index f = 0; f < pos.rows(); ++f) {
    nlohmann::json frame = nlohmann::json::array();
    for (int jt = 0; jt < kNumJoints; ++jt)
      frame.push_back({pos(f, 3 * jt), pos(f, 3 * jt + 1), pos(f, 3 * jt + 2)});
    frames.push_back(std::move(frame));
  }
  j["frames"] = std::move(frames);
  write_text_file(path, j.dump());
}

struct Annotation {
  std::string motion;  // path relative to the annotation file's directory
  std::string text;
};

inline std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  std::vector<Annotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("motion") || !j["motion"].is_string())
      throw ParseError(where + ": /motion: expected a string");
    if (!j.contains("text") || !j["text"].is_string()) throw ParseError(where + ": /text: expected a string");
    out.push_back({j["motion"].get<std::string>(), j["text"].get<std::string>()});
  }
  return out;
}

inline void save_annotations(const std::vector<Annotation>& items, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& a : items) os << nlohmann::json{{"motion", a.motion}, {"text", a.text}}.dump() << '\n';
  write_text_file(path, os.str());
}

}  // namespace motiondiff
