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

// Forward (noising) process, closed-form posterior, reverse-process
// parameterization and the hybrid training objective.
//
// Step indexing: transitions are numbered t = 1..T. Index 0 denotes clean
// data, so alpha_bar(0) == 1 and every per-step accessor takes t in [1, T].

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "motiondiff/motion.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  /// Derives every table from the per-step betas. Two schedules built from
  /// identical betas are identical bit for bit.
  static DiffusionSchedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule needs at least one step");
    DiffusionSchedule s;
    const std::size_t n = betas.size();
    s.betas_ = std::move(betas);
    s.alphas_.resize(n);
    s.alpha_bars_.resize(n);
    s.posterior_vars_.resize(n);
    s.log_betas_.resize(n);
    s.posterior_log_vars_.resize(n);
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double b = s.betas_[i];
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta_" + std::to_string(i + 1) + " outside (0, 1)");
      s.alphas_[i] = 1.0 - b;
      const double prev = running;
      running *= s.alphas_[i];
      s.alpha_bars_[i] = running;
      s.posterior_vars_[i] = b * (1.0 - prev) / (1.0 - running);
      s.log_betas_[i] = std::log(b);
    }
    // beta_tilde_1 is zero; its log is replaced by log beta_tilde_2 (or
    // log beta_1 for a one-step schedule).
    for (std::size_t i = 0; i < n; ++i) {
      const double v = s.posterior_vars_[i] > 0.0 ? s.posterior_vars_[i] : (n > 1 ? s.posterior_vars_[1] : s.betas_[0]);
      s.posterior_log_vars_[i] = std::log(v);
    }
    return s;
  }

  int steps() const { return static_cast<int>(betas_.size()); }

  void check_step(int t) const {
    if (t < 1 || t > steps())
      throw IndexError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }

  double beta(int t) const { return betas_[idx(t)]; }
  double alpha(int t) const { return alphas_[idx(t)]; }
  /// alpha_bar(0) == 1 by convention.
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[idx(t)];
  }
  double posterior_variance(int t) const { return posterior_vars_[idx(t)]; }
  double log_beta(int t) const { return log_betas_[idx(t)]; }
  /// log beta_tilde_t with the t = 1 zero replaced by beta_tilde_2.
  double posterior_log_variance_clipped(int t) const { return posterior_log_vars_[idx(t)]; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& posterior_variances() const { return posterior_vars_; }

 private:
  std::size_t idx(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_, alphas_, alpha_bars_, posterior_vars_, log_betas_, posterior_log_vars_;
};

/// Unnormalized cosine signal level; alpha_bar(t) = f(t) / f(0).
inline double cosine_signal(double t, int steps, double offset) {
  const double c = std::cos(((t / steps) + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
  return c * c;
}

/// Cosine noise schedule with betas clipped at `max_beta`.
inline DiffusionSchedule build_cosine_schedule(int steps, double offset = 0.008, double max_beta = 0.999) {
  if (steps < 2) throw ConfigError("cosine schedule needs T >= 2, got " + std::to_string(steps));
  if (!(offset > 0.0 && offset < 0.1)) throw ConfigError("cosine schedule offset must lie in (0, 0.1)");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    const double b = 1.0 - cosine_signal(t, steps, offset) / cosine_signal(t - 1, steps, offset);
    betas[static_cast<std::size_t>(t - 1)] = std::min(b, max_beta);
  }
  return DiffusionSchedule::from_betas(std::move(betas));
}

/// M_t = sqrt(abar_t) M_0 + sqrt(1 - abar_t) eps.
template <class S>
Mat<S> diffuse(const DiffusionSchedule& s, const Mat<S>& m0, int t, const Mat<S>& noise) {
  require_same_shape(m0, noise, "diffuse");
  const double ab = s.alpha_bar(t);
  if (t != 0) s.check_step(t);
  return S(std::sqrt(ab)) * m0 + S(std::sqrt(1.0 - ab)) * noise;
}

inline MotionSequence diffuse(const DiffusionSchedule& s, const MotionSequence& m0, int t, const Mat<double>& noise) {
  return MotionSequence(diffuse<double>(s, m0.data, t, noise), m0.valid_len, m0.fps);
}

/// Diagonal Gaussian over a frames x dims tensor.
template <class S>
struct PosteriorGaussian {
  Mat<S> mean;
  /// Exact variance; zero at t = 1.
  double variance = 0.0;
  /// Elementwise log variance, floored at t = 1 (see
  /// DiffusionSchedule::posterior_log_variance_clipped).
  Mat<S> log_variance;
};

/// q(M_{t-1} | M_t, M_0).
template <class S>
PosteriorGaussian<S> posterior(const DiffusionSchedule& s, const Mat<S>& m_t, const Mat<S>& m0, int t) {
  s.check_step(t);
  require_same_shape(m_t, m0, "posterior");
  const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * s.beta(t) / (1.0 - ab);
  const double ct = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
  PosteriorGaussian<S> out;
  out.mean = S(c0) * m0 + S(ct) * m_t;
  out.variance = s.posterior_variance(t);
  out.log_variance = Mat<S>::Constant(m0.rows(), m0.cols(), S(s.posterior_log_variance_clipped(t)));
  return out;
}

/// mu_theta = (M_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t).
template <class S>
Mat<S> mean_from_epsilon(const DiffusionSchedule& s, const Mat<S>& m_t, const Mat<S>& eps, int t) {
  s.check_step(t);
  require_same_shape(m_t, eps, "mean_from_epsilon");
  const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  return (m_t - S(coef) * eps) * S(1.0 / std::sqrt(s.alpha(t)));
}

/// Log variance interpolated between log beta_tilde_t (fraction 0) and
/// log beta_t (fraction 1), elementwise.
template <class S>
Mat<S> variance_from_v(const DiffusionSchedule& s, const Mat<S>& fraction, int t) {
  s.check_step(t);
  const S hi = S(s.log_beta(t)), lo = S(s.posterior_log_variance_clipped(t));
  return (fraction.array() * hi + (S(1) - fraction.array()) * lo).matrix();
}

/// Maps the network's raw variance output v to the interpolation fraction
/// (v + 1) / 2 before calling variance_from_v.
template <class S>
Mat<S> variance_from_raw(const DiffusionSchedule& s, const Mat<S>& raw, int t) {
  return variance_from_v<S>(s, ((raw.array() + S(1)) * S(0.5)).matrix(), t);
}

/// Elementwise KL(N(m1, e^lv1) || N(m2, e^lv2)). The variance part is
/// d + expm1(-d) with d = lv2 - lv1, which keeps equal inputs at exactly 0.
template <class S>
Mat<S> normal_kl(const Mat<S>& m1, const Mat<S>& lv1, const Mat<S>& m2, const Mat<S>& lv2) {
  const auto d = (lv2 - lv1).array();
  return (S(0.5) * (d + (-d).expm1() + (m1.array() - m2.array()).square() * (-lv2.array()).exp())).matrix();
}

struct LossBreakdown {
  double simple = 0.0;
  double vlb = 0.0;
  double hybrid = 0.0;
  double lambda = 0.0;
};

template <class S>
struct DenoiserOutput {
  Mat<S> eps;
  Mat<S> v;
};

/// Loss value plus its gradient with respect to both network outputs.
template <class S>
struct LossResult {
  LossBreakdown terms;
  Mat<S> grad_eps;
  Mat<S> grad_v;
};

/// Hybrid objective for one sequence. Only the first `valid_frames` rows
/// count; every term is a mean over valid elements.
///
/// The vlb term sees the model mean through a gradient stop: it is computed
/// from `detached_eps` when given (finite-difference checks pin it this way)
/// or from output.eps otherwise, and never back-propagates into eps. For
/// t >= 2 it is KL(q(M_{t-1}|M_t,M_0) || p(M_{t-1}|M_t)); for t = 1 it is
/// the Gaussian negative log-likelihood of M_0, which can be negative.
template <class S>
LossResult<S> loss_terms(const DiffusionSchedule& s, const Mat<S>& m0, int t, const Mat<S>& noise,
                         const DenoiserOutput<S>& output, double lambda, Index valid_frames,
                         const Mat<S>* detached_eps = nullptr) {
  s.check_step(t);
  if (lambda < 0.0) throw ConfigError("vlb weight lambda must be >= 0");
  require_same_shape(m0, noise, "loss_terms noise");
  require_same_shape(m0, output.eps, "loss_terms eps");
  require_same_shape(m0, output.v, "loss_terms v");
  if (valid_frames <= 0 || valid_frames > m0.rows()) throw DimensionError("loss_terms: invalid valid frame count");

  const Index f = valid_frames, d = m0.cols();
  const double n = static_cast<double>(f * d);
  LossResult<S> r;
  r.grad_eps = Mat<S>::Zero(m0.rows(), d);
  r.grad_v = Mat<S>::Zero(m0.rows(), d);

  const Mat<S> diff = output.eps.topRows(f) - noise.topRows(f);
  r.terms.simple = diff.template cast<double>().squaredNorm() / n;
  r.grad_eps.topRows(f) = diff * S(2.0 / n);

  const Mat<S> x0 = m0.topRows(f);
  const Mat<S> m_t = diffuse<S>(s, x0, t, Mat<S>(noise.topRows(f)));
  const Mat<S> eps_for_mean = detached_eps ? Mat<S>(detached_eps->topRows(f)) : Mat<S>(output.eps.topRows(f));
  const Mat<S> model_mean = mean_from_epsilon<S>(s, m_t, eps_for_mean, t);
  const Mat<S> model_lv = variance_from_raw<S>(s, Mat<S>(output.v.topRows(f)), t);
  const S dlv_dv = S(0.5 * (s.log_beta(t) - s.posterior_log_variance_clipped(t)));

  Mat<S> dterm_dlv;
  if (t >= 2) {
    const auto q = posterior<S>(s, m_t, x0, t);
    const Mat<S> true_lv = Mat<S>::Constant(f, d, S(std::log(q.variance)));
    const Mat<S> kl = normal_kl<S>(q.mean, true_lv, model_mean, model_lv);
    r.terms.vlb = kl.template cast<double>().sum() / n;
    dterm_dlv = (S(0.5) * (S(1) - (true_lv - model_lv).array().exp() -
                           (q.mean - model_mean).array().square() * (-model_lv.array()).exp()))
                    .matrix();
  } else {
    const S log2pi = S(std::log(2.0 * std::numbers::pi));
    const Mat<S> nll = (S(0.5) * (log2pi + model_lv.array() +
                                  (x0 - model_mean).array().square() * (-model_lv.array()).exp()))
                           .matrix();
    r.terms.vlb = nll.template cast<double>().sum() / n;
    dterm_dlv = (S(0.5) * (S(1) - (x0 - model_mean).array().square() * (-model_lv.array()).exp())).matrix();
  }
  r.grad_v.topRows(f) = dterm_dlv * S(lambda / n) * dlv_dv;
  r.terms.lambda = lambda;
  r.terms.hybrid = r.terms.simple + lambda * r.terms.vlb;
  return r;
}

}  // namespace motiondiff
