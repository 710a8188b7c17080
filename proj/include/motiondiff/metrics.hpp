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

// Evaluation metrics over joint positions (APE, AVE, joint variance) and
// over extractor features (FD, R-precision, multimodality, mCLIP).
//
// Joint positions are F x (24*3) matrices as produced by motion_positions().
// Position variants:
//   root   - the root joint
//   traj   - the root projected onto the ground plane (x, z)
//   local  - non-root joints expressed relative to the root
//   global - every joint in world coordinates

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "motiondiff/log.hpp"
#include "motiondiff/motion.hpp"
#include "motiondiff/random.hpp"

namespace motiondiff {

struct PositionErrors {
  double root = 0.0;
  double traj = 0.0;
  double local = 0.0;
  double global = 0.0;
};

namespace detail {

inline void check_positions(const Mat<double>& gen, const Mat<double>& ref) {
  if (gen.cols() != 3 * kNumJoints || ref.cols() != 3 * kNumJoints)
    throw DimensionError("joint positions must have " + std::to_string(3 * kNumJoints) + " columns");
  if (gen.rows() != ref.rows())
    throw DimensionError("frame counts differ (" + std::to_string(gen.rows()) + " vs " + std::to_string(ref.rows()) + ")");
  if (gen.rows() < 1) throw DimensionError("no frames");
}

inline Eigen::Vector3d joint(const Mat<double>& p, Index f, int j) { return p.row(f).segment<3>(3 * j).transpose(); }

}  // namespace detail

/// Mean per-joint L2 distance over frames, averaged over joints within a
/// variant. Samples are averaged by ape_mean().
inline PositionErrors ape(const Mat<double>& gen, const Mat<double>& ref) {
  detail::check_positions(gen, ref);
  const Index frames = gen.rows();
  PositionErrors e;
  for (Index f = 0; f < frames; ++f) {
    const Eigen::Vector3d gr = detail::joint(gen, f, 0), rr = detail::joint(ref, f, 0);
    e.root += (gr - rr).norm();
    e.traj += Eigen::Vector2d(gr.x() - rr.x(), gr.z() - rr.z()).norm();
    for (int j = 0; j < kNumJoints; ++j) {
      const Eigen::Vector3d g = detail::joint(gen, f, j), r = detail::joint(ref, f, j);
      e.global += (g - r).norm();
      if (j > 0) e.local += ((g - gr) - (r - rr)).norm();
    }
  }
  const double n = static_cast<double>(frames);
  e.root /= n;
  e.traj /= n;
  e.global /= n * kNumJoints;
  e.local /= n * (kNumJoints - 1);
  return e;
}

/// Unbiased (divisor F - 1) temporal variance of every joint coordinate.
struct JointVariance {
  Mat<double> global;  // 24 x 3
  Mat<double> local;   // 24 x 3, root-relative (row 0 is zero)
  Eigen::Vector2d traj = Eigen::Vector2d::Zero();
};

inline JointVariance joint_variance(const Mat<double>& pos) {
  if (pos.cols() != 3 * kNumJoints) throw DimensionError("joint positions must have 72 columns");
  const Index frames = pos.rows();
  if (frames < 2) throw ValidationError("temporal variance needs at least 2 frames");
  Mat<double> rel = pos;
  for (int j = 0; j < kNumJoints; ++j) rel.middleCols(3 * j, 3) -= pos.leftCols(3);
  auto var = [&](const Mat<double>& p) {
    const RowVec<double> mean = p.colwise().mean();
    const RowVec<double> v = (p.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(frames - 1);
    return Mat<double>(Eigen::Map<const Mat<double>>(v.data(), kNumJoints, 3));
  };
  JointVariance jv;
  jv.global = var(pos);
  jv.local = var(rel);
  jv.traj = Eigen::Vector2d(jv.global(0, 0), jv.global(0, 2));
  return jv;
}

/// L2 distance between variance vectors, averaged within each variant.
inline PositionErrors ave(const Mat<double>& gen, const Mat<double>& ref) {
  detail::check_positions(gen, ref);
  const JointVariance a = joint_variance(gen), b = joint_variance(ref);
  PositionErrors e;
  e.root = (a.global.row(0) - b.global.row(0)).norm();
  e.traj = (a.traj - b.traj).norm();
  for (int j = 0; j < kNumJoints; ++j) {
    e.global += (a.global.row(j) - b.global.row(j)).norm();
    if (j > 0) e.local += (a.local.row(j) - b.local.row(j)).norm();
  }
  e.global /= kNumJoints;
  e.local /= kNumJoints - 1;
  return e;
}

/// Sample mean of a per-pair metric.
template <class F>
PositionErrors mean_over_pairs(const std::vector<Mat<double>>& gen, const std::vector<Mat<double>>& ref, F&& metric) {
  if (gen.size() != ref.size()) throw DimensionError("sample counts differ");
  if (gen.empty()) throw ConfigError("no samples");
  PositionErrors s;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const PositionErrors e = metric(gen[i], ref[i]);
    s.root += e.root;
    s.traj += e.traj;
    s.local += e.local;
    s.global += e.global;
  }
  const double n = static_cast<double>(gen.size());
  return {s.root / n, s.traj / n, s.local / n, s.global / n};
}

inline PositionErrors ape_mean(const std::vector<Mat<double>>& gen, const std::vector<Mat<double>>& ref) {
  return mean_over_pairs(gen, ref, [](const auto& a, const auto& b) { return ape(a, b); });
}
inline PositionErrors ave_mean(const std::vector<Mat<double>>& gen, const std::vector<Mat<double>>& ref) {
  return mean_over_pairs(gen, ref, [](const auto& a, const auto& b) { return ave(a, b); });
}

/// Joint diversity: mean norm of the per-joint temporal variance.
inline double joint_diversity(const Mat<double>& pos) {
  const JointVariance jv = joint_variance(pos);
  return jv.global.rowwise().norm().mean();
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are
/// samples). The covariance cross term uses the symmetric form
/// sqrt(S1^1/2 S2 S1^1/2); eigenvalues below -1e-8 (relative to the largest)
/// are reported as a numeric failure, smaller negatives are clamped.
inline double frechet_distance(const Mat<double>& a, const Mat<double>& b) {
  if (a.cols() != b.cols()) throw DimensionError("feature widths differ");
  if (a.rows() < 2 || b.rows() < 2) throw ConfigError("Frechet distance needs at least 2 samples per set");
  auto stats = [](const Mat<double>& x, RowVec<double>& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean();
    const Mat<double> c = x.rowwise() - mu;
    cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  };
  RowVec<double> mu1, mu2;
  Eigen::MatrixXd s1, s2;
  stats(a, mu1, s1);
  stats(b, mu2, s2);

  auto psd_sqrt = [](const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -tol) throw NumericError(std::string(what) + " is not positive semi-definite");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  const Eigen::MatrixXd r1 = psd_sqrt(s1, "first covariance");
  const Eigen::MatrixXd inner = r1 * s2 * r1;
  const Eigen::MatrixXd cross = psd_sqrt(0.5 * (inner + inner.transpose()), "covariance product");
  const double fd = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace();
  return std::max(0.0, fd);
}

struct RPrecision {
  double top1 = 0.0;
  double top2 = 0.0;
  double top3 = 0.0;
};

/// For motion i the candidates are pool row gt[i] plus `candidates - 1`
/// other pool rows drawn without replacement; a top-k hit means fewer than
/// k negatives are strictly closer (Euclidean) than the ground truth.
/// Pool rows must correspond to distinct texts.
inline RPrecision r_precision(const Mat<double>& motion_feats, const std::vector<int>& gt, const Mat<double>& pool_feats,
                              Rng& rng, int candidates = 32) {
  if (motion_feats.rows() != static_cast<Index>(gt.size())) throw DimensionError("one ground-truth index per motion");
  if (motion_feats.cols() != pool_feats.cols()) throw DimensionError("motion and text feature widths differ");
  if (candidates < 2) throw ConfigError("need at least 2 candidates");
  const Index negatives = candidates - 1;
  if (pool_feats.rows() - 1 < negatives)
    throw ConfigError("text pool has " + std::to_string(pool_feats.rows()) + " distinct texts; " +
                      std::to_string(negatives) + " negatives plus the ground truth are required");
  if (motion_feats.rows() == 0) throw ConfigError("no motions to rank");
  const Index pool = pool_feats.rows();
  std::vector<int> idx(static_cast<std::size_t>(pool));
  RPrecision r;
  for (Index i = 0; i < motion_feats.rows(); ++i) {
    const int g = gt[static_cast<std::size_t>(i)];
    if (g < 0 || g >= pool) throw IndexError("ground-truth index out of range");
    std::iota(idx.begin(), idx.end(), 0);
    std::swap(idx[static_cast<std::size_t>(g)], idx.back());
    // Partial Fisher-Yates over the non-GT prefix.
    for (Index k = 0; k < negatives; ++k) {
      std::uniform_int_distribution<Index> pick(k, pool - 2);
      std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    const double d_gt = (motion_feats.row(i) - pool_feats.row(g)).norm();
    int closer = 0;
    for (Index k = 0; k < negatives; ++k)
      if ((motion_feats.row(i) - pool_feats.row(idx[static_cast<std::size_t>(k)])).norm() < d_gt) ++closer;
    r.top1 += closer < 1;
    r.top2 += closer < 2;
    r.top3 += closer < 3;
  }
  const double n = static_cast<double>(motion_feats.rows());
  r.top1 /= n;
  r.top2 /= n;
  r.top3 /= n;
  return r;
}

/// Mean distance between paired features of two sample sets per text.
/// sets_a[c] and sets_b[c] are S_l x d.
inline double multimodality(const std::vector<Mat<double>>& sets_a, const std::vector<Mat<double>>& sets_b) {
  if (sets_a.size() != sets_b.size() || sets_a.empty()) throw ConfigError("multimodality needs matching non-empty set lists");
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t c = 0; c < sets_a.size(); ++c) {
    if (sets_a[c].rows() != sets_b[c].rows() || sets_a[c].cols() != sets_b[c].cols())
      throw ConfigError("multimodality set sizes differ for text " + std::to_string(c));
    sum += (sets_a[c] - sets_b[c]).rowwise().norm().sum();
    count += static_cast<double>(sets_a[c].rows());
  }
  return sum / count;
}

/// Cosine similarity; 0 (with a warning) if either vector is zero.
inline double cosine_similarity(const RowVec<double>& a, const RowVec<double>& b) {
  if (a.size() != b.size()) throw DimensionError("cosine: widths differ");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    log::warn("cosine similarity of a zero vector is taken as 0");
    return 0.0;
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

struct MetricReport {
  PositionErrors ape;
  PositionErrors ave;
  double mclip = 0.0;
  double mclip_ground_truth = 0.0;
  double fd = 0.0;
  RPrecision r_precision;
  std::optional<double> multimodality;
  double joint_variance = 0.0;
  std::size_t samples = 0;
};

inline nlohmann::json to_json(const PositionErrors& e) {
  return {{"root", e.root}, {"traj", e.traj}, {"local", e.local}, {"global", e.global}};
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = {{"samples", r.samples},
                      {"ape", to_json(r.ape)},
                      {"ave", to_json(r.ave)},
                      {"mclip", r.mclip},
                      {"mclip_ground_truth", r.mclip_ground_truth},
                      {"fd", r.fd},
                      {"r_precision", {{"top1", r.r_precision.top1}, {"top2", r.r_precision.top2}, {"top3", r.r_precision.top3}}},
                      {"joint_variance", r.joint_variance},
                      {"mid", nullptr}};
  j["multimodality"] = r.multimodality ? nlohmann::json(*r.multimodality) : nlohmann::json(nullptr);
  return j;
}

inline std::string format_table(const MetricReport& r) {
  std::ostringstream os;
  char line[128];
  auto row = [&](const char* name, double v) {
    std::snprintf(line, sizeof(line), "  %-22s %12.6f\n", name, v);
    os << line;
  };
  os << "metric                       value\n";
  row("APE root (m)", r.ape.root);
  row("APE traj (m)", r.ape.traj);
  row("APE local (m)", r.ape.local);
  row("APE global (m)", r.ape.global);
  row("AVE root (m^2)", r.ave.root);
  row("AVE traj (m^2)", r.ave.traj);
  row("AVE local (m^2)", r.ave.local);
  row("AVE global (m^2)", r.ave.global);
  row("mCLIP", r.mclip);
  row("mCLIP (ground truth)", r.mclip_ground_truth);
  row("FD", r.fd);
  row("R-precision top-1", r.r_precision.top1);
  row("R-precision top-2", r.r_precision.top2);
  row("R-precision top-3", r.r_precision.top3);
  if (r.multimodality)
    row("Multimodality", *r.multimodality);
  else
    os << "  Multimodality                   n/a\n";
  row("Joint variance (m^2)", r.joint_variance);
  os << "  samples               " << r.samples << "\n";
  return os.str();
}

}  // namespace motiondiff
