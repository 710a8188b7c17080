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

// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Trainable
// weights live outside the tape as Parameter objects; ops that consume a
// Parameter accumulate straight into Parameter::grad. A tape constructed with
// record_gradients = false keeps only forward values (used for sampling).

#include <cmath>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "motiondiff/tensor.hpp"

namespace motiondiff::ag {

template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
  /// Accumulator; mutable so const (read-only) models can run forward passes.
  mutable Mat<S> grad;
  /// Frozen parameters never accumulate gradient.
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Mat<S> v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

template <class S>
class Tape;

template <class S>
class Var {
 public:
  Var() = default;

  const Mat<S>& value() const { return tape_->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape<S>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<S>;
  Var(Tape<S>* t, int id) : tape_(t), id_(id) {}
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

template <class S>
class Tape {
 public:
  /// Receives the gradient flowing into the node and the node's own value.
  using Backward = std::function<void(const Mat<S>& grad_out, const Mat<S>& value_out)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<S> constant(Mat<S> v) { return push(std::move(v), false, {}); }
  /// Leaf whose gradient is kept; used by tests and for loss inputs.
  Var<S> variable(Mat<S> v) { return push(std::move(v), true, {}); }

  Var<S> push(Mat<S> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = recording_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Mat<S>& value(const Var<S>& v) const { return nodes_.at(check(v)).value; }

  /// Gradient accumulated into v; an empty matrix if none reached it.
  const Mat<S>& grad(const Var<S>& v) const { return nodes_.at(check(v)).grad; }

  bool requires_grad(const Var<S>& v) const { return nodes_.at(check(v)).requires_grad; }

  template <class Derived>
  void accumulate(const Var<S>& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_.at(check(v));
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Seeds d(loss)/d(var) for each pair and sweeps the tape backwards.
  void backward(const std::vector<std::pair<Var<S>, Mat<S>>>& seeds) {
    for (const auto& [v, g] : seeds) {
      require_same_shape(value(v), g, "backward seed");
      accumulate(v, g);
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(n.grad, n.value);
    }
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    Backward backward;
  };

  int check(const Var<S>& v) const {
    if (v.tape() != this) throw Error("autograd: variable belongs to a different tape");
    return v.id();
  }

  bool recording_;
  std::deque<Node> nodes_;
};

namespace detail {

template <class S>
bool needs(const Var<S>& v) {
  return v.tape()->requires_grad(v);
}

template <class S>
bool needs(const Parameter<S>* p) {
  return p != nullptr && !p->frozen;
}

template <class S, class Derived>
void add_to(const Parameter<S>& p, const Eigen::MatrixBase<Derived>& g) {
  if (p.frozen) return;
  if (p.grad.size() == 0) p.zero_grad();
  p.grad += g;
}

}  // namespace detail

/// y = x W + b with W stored as (in x out).
template <class S>
Var<S> linear(const Var<S>& x, const Parameter<S>& w, const Parameter<S>* b = nullptr) {
  if (x.cols() != w.value.rows())
    throw DimensionError("linear '" + w.name + "': input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(w.value.rows()));
  Mat<S> y = x.value() * w.value;
  if (b != nullptr) y.rowwise() += b->value.row(0);
  Tape<S>* tape = x.tape();
  const bool rg = detail::needs(x) || detail::needs(&w) || detail::needs(b);
  return tape->push(std::move(y), rg, [tape, x, &w, b](const Mat<S>& g, const Mat<S>&) {
    if (detail::needs(x)) tape->accumulate(x, g * w.value.transpose());
    if (!w.frozen) detail::add_to(w, x.value().transpose() * g);
    if (b != nullptr && !b->frozen) detail::add_to(*b, g.colwise().sum());
  });
}

/// Per-row layer normalization with learned gain and bias (1 x cols each).
template <class S>
Var<S> layer_norm(const Var<S>& x, const Parameter<S>& gain, const Parameter<S>& bias, S eps = S(1e-5)) {
  const Index n = x.rows(), d = x.cols();
  Mat<S> xhat(n, d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(n);
  for (Index r = 0; r < n; ++r) {
    auto row = x.value().row(r);
    const S mean = row.mean();
    const S var = (row.array() - mean).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std(r);
  }
  Mat<S> y = (xhat.array().rowwise() * gain.value.row(0).array()).rowwise() + bias.value.row(0).array();
  Tape<S>* tape = x.tape();
  const bool rg = detail::needs(x) || detail::needs(&gain) || detail::needs(&bias);
  return tape->push(std::move(y), rg,
                    [tape, x, &gain, &bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        const Mat<S>& g, const Mat<S>&) {
                      if (!gain.frozen) detail::add_to(gain, (g.array() * xhat.array()).colwise().sum().matrix());
                      if (!bias.frozen) detail::add_to(bias, g.colwise().sum());
                      if (!detail::needs(x)) return;
                      Mat<S> dxhat = g.array().rowwise() * gain.value.row(0).array();
                      Mat<S> dx(g.rows(), g.cols());
                      for (Index r = 0; r < g.rows(); ++r) {
                        const S m1 = dxhat.row(r).mean();
                        const S m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                        dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                      }
                      tape->accumulate(x, dx);
                    });
}

/// tanh-approximated GELU.
template <class S>
Var<S> gelu(const Var<S>& x) {
  const S c = std::sqrt(S(2) / S(M_PI));
  Mat<S> th = (c * (x.value().array() + S(0.044715) * x.value().array().cube())).tanh().matrix();
  Mat<S> y = (S(0.5) * x.value().array() * (S(1) + th.array())).matrix();
  Tape<S>* tape = x.tape();
  return tape->push(std::move(y), detail::needs(x), [tape, x, th = std::move(th), c](const Mat<S>& g, const Mat<S>&) {
    const auto& xv = x.value().array();
    auto d = S(0.5) * (S(1) + th.array()) +
             S(0.5) * xv * (S(1) - th.array().square()) * c * (S(1) + S(3 * 0.044715) * xv.square());
    tape->accumulate(x, (g.array() * d).matrix());
  });
}

template <class S>
Var<S> silu(const Var<S>& x) {
  Mat<S> sig = (S(1) / (S(1) + (-x.value().array()).exp())).matrix();
  Mat<S> y = (x.value().array() * sig.array()).matrix();
  Tape<S>* tape = x.tape();
  return tape->push(std::move(y), detail::needs(x), [tape, x, sig = std::move(sig)](const Mat<S>& g, const Mat<S>&) {
    auto d = sig.array() * (S(1) + x.value().array() * (S(1) - sig.array()));
    tape->accumulate(x, (g.array() * d).matrix());
  });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape<S>* tape = a.tape();
  return tape->push(a.value() + b.value(), detail::needs(a) || detail::needs(b),
                    [tape, a, b](const Mat<S>& g, const Mat<S>&) {
                      tape->accumulate(a, g);
                      tape->accumulate(b, g);
                    });
}

/// Scales every row of x elementwise by the 1 x cols row vector `row`.
template <class S>
Var<S> mul_row(const Var<S>& x, const Var<S>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw DimensionError("mul_row: expected a 1 x cols scale");
  Tape<S>* tape = x.tape();
  Mat<S> y = x.value().array().rowwise() * row.value().row(0).array();
  return tape->push(std::move(y), detail::needs(x) || detail::needs(row), [tape, x, row](const Mat<S>& g, const Mat<S>&) {
    tape->accumulate(x, (g.array().rowwise() * row.value().row(0).array()).matrix());
    tape->accumulate(row, (g.array() * x.value().array()).colwise().sum().matrix());
  });
}

/// Adds a constant (no gradient) of identical shape.
template <class S, class Derived>
Var<S> add_const(const Var<S>& a, const Eigen::MatrixBase<Derived>& c) {
  require_same_shape(a.value(), c, "add_const");
  Tape<S>* tape = a.tape();
  return tape->push(a.value() + c, detail::needs(a),
                    [tape, a](const Mat<S>& g, const Mat<S>&) { tape->accumulate(a, g); });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    rows += p.rows();
    rg = rg || detail::needs(p);
  }
  Mat<S> y(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  Tape<S>* tape = parts.front().tape();
  return tape->push(std::move(y), rg, [tape, parts](const Mat<S>& g, const Mat<S>&) {
    Index off = 0;
    for (const auto& p : parts) {
      tape->accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

template <class S>
Var<S> slice_rows(const Var<S>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw DimensionError("slice_rows: out of range");
  Tape<S>* tape = x.tape();
  return tape->push(x.value().middleRows(start, count), detail::needs(x),
                    [tape, x, start, count](const Mat<S>& g, const Mat<S>&) {
                      Mat<S> full = Mat<S>::Zero(x.rows(), x.cols());
                      full.middleRows(start, count) = g;
                      tape->accumulate(x, full);
                    });
}

template <class S>
Var<S> slice_cols(const Var<S>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw DimensionError("slice_cols: out of range");
  Tape<S>* tape = x.tape();
  return tape->push(x.value().middleCols(start, count), detail::needs(x),
                    [tape, x, start, count](const Mat<S>& g, const Mat<S>&) {
                      Mat<S> full = Mat<S>::Zero(x.rows(), x.cols());
                      full.middleCols(start, count) = g;
                      tape->accumulate(x, full);
                    });
}

/// Mean over the first `count` rows, producing a 1 x cols row.
template <class S>
Var<S> mean_rows(const Var<S>& x, Index count) {
  if (count <= 0 || count > x.rows()) throw DimensionError("mean_rows: invalid row count");
  Mat<S> y = x.value().topRows(count).colwise().mean();
  Tape<S>* tape = x.tape();
  return tape->push(std::move(y), detail::needs(x), [tape, x, count](const Mat<S>& g, const Mat<S>&) {
    Mat<S> full = Mat<S>::Zero(x.rows(), x.cols());
    full.topRows(count).rowwise() = g.row(0) / S(count);
    tape->accumulate(x, full);
  });
}

/// Gathers table rows by id.
template <class S>
Var<S> embedding(Tape<S>& tape, const Parameter<S>& table, std::span<const int> ids) {
  Mat<S> y(static_cast<Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows()) throw IndexError("embedding: id out of range");
    y.row(static_cast<Index>(i)) = table.value.row(ids[i]);
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return tape.push(std::move(y), !table.frozen, [&table, id_copy = std::move(id_copy)](const Mat<S>& g, const Mat<S>&) {
    if (table.frozen) return;
    if (table.grad.size() == 0) table.zero_grad();
    for (std::size_t i = 0; i < id_copy.size(); ++i) table.grad.row(id_copy[i]) += g.row(static_cast<Index>(i));
  });
}

/// Inverted dropout; identity when p == 0 or no generator is supplied.
template <class S, class Rng>
Var<S> dropout(const Var<S>& x, S p, Rng* rng) {
  if (rng == nullptr || p <= S(0)) return x;
  if (p >= S(1)) throw ConfigError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  Mat<S> mask(x.rows(), x.cols());
  const S scale = S(1) / (S(1) - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : S(0);
  Mat<S> y = x.value().cwiseProduct(mask);
  Tape<S>* tape = x.tape();
  return tape->push(std::move(y), detail::needs(x), [tape, x, mask = std::move(mask)](const Mat<S>& g, const Mat<S>&) {
    tape->accumulate(x, g.cwiseProduct(mask));
  });
}

/// Scales every row to unit Euclidean norm.
template <class S>
Var<S> l2_normalize_rows(const Var<S>& x, S eps = S(1e-12)) {
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms = x.value().rowwise().norm();
  norms = norms.cwiseMax(eps);
  Mat<S> y = x.value().array().colwise() / norms.array();
  Tape<S>* tape = x.tape();
  return tape->push(std::move(y), detail::needs(x), [tape, x, norms = std::move(norms)](const Mat<S>& g, const Mat<S>& y) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (g.array() * y.array()).rowwise().sum();
    Mat<S> dx = (g.array() - y.array().colwise() * dots.array()).colwise() / norms.array();
    tape->accumulate(x, dx);
  });
}

/// Multi-head scaled dot-product attention. Queries are (n x d); keys and
/// values are (m x d). Only the first `key_limit` key rows participate, so
/// whatever lies beyond them has no influence on any output.
template <class S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, int heads, Index key_limit) {
  const Index n = q.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw DimensionError("attention: q/k/v shapes disagree");
  if (heads <= 0 || d % heads != 0) throw ConfigError("attention: width not divisible by head count");
  if (key_limit <= 0 || key_limit > k.rows()) throw DimensionError("attention: invalid key limit");
  const Index dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const Index m = key_limit;

  Mat<S> out(n, d);
  std::vector<Mat<S>> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = q.value().middleCols(h * dh, dh);
    auto kh = k.value().topRows(m).middleCols(h * dh, dh);
    auto vh = v.value().topRows(m).middleCols(h * dh, dh);
    Mat<S> sc = (qh * kh.transpose()) * scale;
    for (Index r = 0; r < n; ++r) {
      const S mx = sc.row(r).maxCoeff();
      sc.row(r) = (sc.row(r).array() - mx).exp();
      sc.row(r) /= sc.row(r).sum();
    }
    out.middleCols(h * dh, dh) = sc * vh;
    probs[static_cast<std::size_t>(h)] = std::move(sc);
  }
  Tape<S>* tape = q.tape();
  const bool rg = detail::needs(q) || detail::needs(k) || detail::needs(v);
  return tape->push(std::move(out), rg,
                    [tape, q, k, v, heads, dh, m, scale, probs = std::move(probs)](const Mat<S>& g, const Mat<S>&) {
                      Mat<S> dq = Mat<S>::Zero(q.rows(), q.cols());
                      Mat<S> dk = Mat<S>::Zero(k.rows(), k.cols());
                      Mat<S> dv = Mat<S>::Zero(v.rows(), v.cols());
                      for (int h = 0; h < heads; ++h) {
                        const Mat<S>& p = probs[static_cast<std::size_t>(h)];
                        auto go = g.middleCols(h * dh, dh);
                        auto qh = q.value().middleCols(h * dh, dh);
                        auto kh = k.value().topRows(m).middleCols(h * dh, dh);
                        auto vh = v.value().topRows(m).middleCols(h * dh, dh);
                        dv.topRows(m).middleCols(h * dh, dh) = p.transpose() * go;
                        Mat<S> dp = go * vh.transpose();
                        Eigen::Matrix<S, Eigen::Dynamic, 1> rs = (dp.array() * p.array()).rowwise().sum();
                        Mat<S> ds = (p.array() * (dp.array().colwise() - rs.array())).matrix() * scale;
                        dq.middleCols(h * dh, dh) = ds * kh;
                        dk.topRows(m).middleCols(h * dh, dh) = ds.transpose() * qh;
                      }
                      tape->accumulate(q, dq);
                      tape->accumulate(k, dk);
                      tape->accumulate(v, dv);
                    });
}

}  // namespace motiondiff::ag
