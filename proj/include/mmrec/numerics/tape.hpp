#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/numerics/tensor.hpp"

namespace mmrec {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Records a computation for one training step and replays it in reverse to
/// accumulate gradients. Leaves bound to a Tensor push their gradient into
/// Tensor::grad. A tape built with `record = false` keeps only values.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<T>&)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient can be read back with grad().
  Var<T> variable(Matrix<T> value) { return push(std::move(value), true, nullptr); }

  Var<T> parameter(Tensor<T>& p) {
    if (!p.requires_grad || !record_) return constant(p.data);
    Tensor<T>* target = &p;
    return push(p.data, true, [target](Tape&, const Matrix<T>& g) {
      if (target->grad.rows() != g.rows() || target->grad.cols() != g.cols()) {
        target->grad = g;
      } else {
        target->grad += g;
      }
    });
  }

  Var<T> push(Matrix<T> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Matrix<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated at `v` by the last backward(); zeros if none reached it.
  Matrix<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <class Expr>
  void accumulate(std::size_t id, const Expr& contribution) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(Var<T> loss) {
    if (!record_) throw Error("backward() on a non-recording tape");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) throw ShapeError("backward() needs a scalar (1x1) loss");
    if (!root.requires_grad) return;
    root.grad = Matrix<T>::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------
namespace ad {

namespace detail {
template <class T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const auto& v : vars)
    if (v.tape->requires_grad(v)) return true;
  return false;
}

template <class T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}
}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value() * b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a.id, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b.id, a.value().transpose() * g);
  });
}

/// a · bᵀ
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: column counts differ");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value() * b.value().transpose();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a.id, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b.id, g.transpose() * a.value());
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "add");
  Tape<T>& t = *a.tape;
  return t.push(a.value() + b.value(), detail::any_grad({a, b}),
                [a, b](Tape<T>& t, const Matrix<T>& g) {
                  t.accumulate(a.id, g);
                  t.accumulate(b.id, g);
                });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "sub");
  Tape<T>& t = *a.tape;
  return t.push(a.value() - b.value(), detail::any_grad({a, b}),
                [a, b](Tape<T>& t, const Matrix<T>& g) {
                  t.accumulate(a.id, g);
                  t.accumulate(b.id, -g);
                });
}

/// Adds the 1 x n row `r` to every row of `a`.
template <class T>
Var<T> add_row(Var<T> a, Var<T> r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_row: bias shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().rowwise() + r.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, r}), [a, r](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a.id, g);
    if (t.requires_grad(r)) t.accumulate(r.id, g.colwise().sum());
  });
}

template <class T>
Var<T> sub_row(Var<T> a, Var<T> r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("sub_row: shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().rowwise() - r.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, r}), [a, r](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a.id, g);
    if (t.requires_grad(r)) t.accumulate(r.id, -g.colwise().sum());
  });
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "mul");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a.id, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b.id, g.cwiseProduct(a.value()));
  });
}

/// Scales row i of `a` by c(i, 0).
template <class T>
Var<T> mul_col(Var<T> a, Var<T> c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw ShapeError("mul_col: shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = c.value().col(0).asDiagonal() * a.value();
  return t.push(std::move(out), detail::any_grad({a, c}), [a, c](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a.id, c.value().col(0).asDiagonal() * g);
    if (t.requires_grad(c)) t.accumulate(c.id, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

/// Elementwise product with a constant matrix (e.g. a dropout mask).
template <class T>
Var<T> mul_const(Var<T> a, Matrix<T> m) {
  if (m.rows() != a.rows() || m.cols() != a.cols()) throw ShapeError("mul_const: shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().cwiseProduct(m);
  return t.push(std::move(out), detail::any_grad({a}),
                [a, m = std::move(m)](Tape<T>& t, const Matrix<T>& g) {
                  t.accumulate(a.id, g.cwiseProduct(m));
                });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& t = *a.tape;
  return t.push(a.value() * s, detail::any_grad({a}),
                [a, s](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a.id, g * s); });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().cwiseMax(T(0));
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a.id, (a.value().array() > T(0)).select(g, T(0)));
  });
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  Tape<T>& t = *a.tape;
  Matrix<T> y = softmax<T>(a.value(), 1);
  Matrix<T> y_copy = y;
  return t.push(std::move(y), detail::any_grad({a}),
                [a, y = std::move(y_copy)](Tape<T>& t, const Matrix<T>& g) {
                  Eigen::Matrix<T, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
                  Matrix<T> ga = y.cwiseProduct(g.colwise() - dot);
                  t.accumulate(a.id, ga);
                });
}

/// Row-wise log-sum-exp, N x 1.
template <class T>
Var<T> logsumexp_rows(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  if (!x.allFinite()) throw NumericError("logsumexp_rows: non-finite input");
  Matrix<T> out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    out(r, 0) = mx + std::log((x.row(r).array() - mx).exp().sum());
  }
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> p = softmax<T>(a.value(), 1);
    t.accumulate(a.id, g.col(0).asDiagonal() * p);
  });
}

/// Row-wise dot products, N x 1.
template <class T>
Var<T> rowwise_dot(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "rowwise_dot");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a.id, g.col(0).asDiagonal() * b.value());
    if (t.requires_grad(b)) t.accumulate(b.id, g.col(0).asDiagonal() * a.value());
  });
}

/// Sum of all entries, 1 x 1.
template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a.id, Matrix<T>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// Sum over rows of -log softmax(logits_i)[targets_i].
template <class T>
Var<T> cross_entropy_rows(Var<T> logits, std::vector<std::size_t> targets) {
  const Matrix<T>& x = logits.value();
  if (targets.size() != static_cast<std::size_t>(x.rows())) {
    throw ShapeError("cross_entropy_rows: one target per row required");
  }
  for (std::size_t tgt : targets) {
    if (tgt >= static_cast<std::size_t>(x.cols())) {
      throw IndexError("cross_entropy: target " + std::to_string(tgt) + " out of range " +
                       std::to_string(x.cols()));
    }
  }
  if (!x.allFinite()) throw NumericError("cross_entropy: non-finite logits");
  // Softmax kept for the backward pass: d/dlogits = softmax - onehot.
  Matrix<T> p(x.rows(), x.cols());
  T total = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - mx).exp();
    const T z = p.row(r).sum();
    p.row(r) /= z;
    total += mx + std::log(z) - x(r, static_cast<Eigen::Index>(targets[r]));
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  Tape<T>& t = *logits.tape;
  const bool rg = detail::any_grad({logits});
  if (!rg) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true,
                [logits, targets = std::move(targets), p = std::move(p)](Tape<T>& t, const Matrix<T>& g) mutable {
                  for (std::size_t r = 0; r < targets.size(); ++r) {
                    p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(targets[r])) -= T(1);
                  }
                  p *= g(0, 0);
                  t.accumulate(logits.id, p);
                });
}

/// Sum over rows of -log probs(i, targets_i), for rows that are already
/// probability distributions.
template <class T>
Var<T> nll_rows(Var<T> probs, std::vector<std::size_t> targets) {
  const Matrix<T>& p = probs.value();
  if (targets.size() != static_cast<std::size_t>(p.rows())) {
    throw ShapeError("nll_rows: one target per row required");
  }
  T total = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= static_cast<std::size_t>(p.cols())) throw IndexError("nll_rows: target out of range");
    const T v = p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(targets[r]));
    if (!(v > T(0))) throw NumericError("nll_rows: non-positive probability");
    total -= std::log(v);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  Tape<T>& t = *probs.tape;
  return t.push(std::move(out), detail::any_grad({probs}),
                [probs, targets = std::move(targets)](Tape<T>& t, const Matrix<T>& g) {
                  const Matrix<T>& p = probs.value();
                  Matrix<T> gp = Matrix<T>::Zero(p.rows(), p.cols());
                  for (std::size_t r = 0; r < targets.size(); ++r) {
                    const auto i = static_cast<Eigen::Index>(r);
                    const auto j = static_cast<Eigen::Index>(targets[r]);
                    gp(i, j) = -g(0, 0) / p(i, j);
                  }
                  t.accumulate(probs.id, gp);
                });
}

/// Normalizes each row to zero mean and unit variance, then applies the
/// 1 x n `gamma` and `beta`.
template <class T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-8)) {
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw ShapeError("layer_norm: gamma/beta must be 1 x " + std::to_string(n));
  }
  const Matrix<T>& xv = x.value();
  Matrix<T> xhat(xv.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                  beta.value().row(0).array();
  Tape<T>& t = *x.tape;
  return t.push(std::move(out), detail::any_grad({x, gamma, beta}),
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<T>& t, const Matrix<T>& g) {
                  if (t.requires_grad(gamma)) t.accumulate(gamma.id, g.cwiseProduct(xhat).colwise().sum());
                  if (t.requires_grad(beta)) t.accumulate(beta.id, g.colwise().sum());
                  if (!t.requires_grad(x)) return;
                  const T n = static_cast<T>(xhat.cols());
                  Matrix<T> gx_hat = g.array().rowwise() * gamma.value().row(0).array();
                  Matrix<T> gx(xhat.rows(), xhat.cols());
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const T mean_g = gx_hat.row(r).sum() / n;
                    const T mean_gx = gx_hat.row(r).dot(xhat.row(r)) / n;
                    gx.row(r) = inv_std(r) *
                                (gx_hat.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
                  }
                  t.accumulate(x.id, gx);
                });
}

/// Rows of `table` selected by `indices` (repeats allowed).
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> indices) {
  const Matrix<T>& tv = table.value();
  Matrix<T> out(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= static_cast<std::size_t>(tv.rows())) {
      throw IndexError("gather_rows: row " + std::to_string(indices[i]) + " out of range " +
                       std::to_string(tv.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(static_cast<Eigen::Index>(indices[i]));
  }
  Tape<T>& t = *table.tape;
  return t.push(std::move(out), detail::any_grad({table}),
                [table, indices = std::move(indices)](Tape<T>& t, const Matrix<T>& g) {
                  Matrix<T> gt = Matrix<T>::Zero(table.rows(), table.cols());
                  for (std::size_t i = 0; i < indices.size(); ++i) {
                    gt.row(static_cast<Eigen::Index>(indices[i])) += g.row(static_cast<Eigen::Index>(i));
                  }
                  t.accumulate(table.id, gt);
                });
}

template <class T>
Var<T> concat_cols(std::vector<Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
    rg = rg || p.tape->requires_grad(p);
  }
  Matrix<T> out(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  Tape<T>& t = *parts.front().tape;
  return t.push(std::move(out), rg, [parts = std::move(parts)](Tape<T>& t, const Matrix<T>& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p.id, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

/// Stacks matrices with equal column counts vertically.
template <class T>
Var<T> concat_rows(std::vector<Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
    rg = rg || p.tape->requires_grad(p);
  }
  Matrix<T> out(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  Tape<T>& t = *parts.front().tape;
  return t.push(std::move(out), rg, [parts = std::move(parts)](Tape<T>& t, const Matrix<T>& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p.id, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

/// Columns [first, first + count) of `a`.
template <class T>
Var<T> slice_cols(Var<T> a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().middleCols(first, count);
  return t.push(std::move(out), detail::any_grad({a}),
                [a, first, count](Tape<T>& t, const Matrix<T>& g) {
                  Matrix<T> ga = Matrix<T>::Zero(a.rows(), a.cols());
                  ga.middleCols(first, count) = g;
                  t.accumulate(a.id, ga);
                });
}

/// Inverted dropout: zeroes entries with probability p, scales survivors by 1/(1-p).
template <class T, class Rng>
Var<T> dropout(Var<T> a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix<T> mask(a.rows(), a.cols());
  const T s = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : T(0);
  return mul_const(a, std::move(mask));
}

}  // namespace ad
}  // namespace mmrec
