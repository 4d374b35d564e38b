#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmrec/numerics/tape.hpp"

namespace mmrec {

/// Row ranges of independent sequences stacked in one matrix, plus an
/// optional per-row key validity mask (0 = padding).
struct SequenceLayout {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::vector<std::uint8_t> key_valid;

  static SequenceLayout single(std::size_t n) {
    SequenceLayout l;
    l.append(n);
    return l;
  }

  void append(std::size_t length) {
    offsets.push_back(total_rows());
    lengths.push_back(length);
  }

  std::size_t total_rows() const {
    return offsets.empty() ? 0 : offsets.back() + lengths.back();
  }

  bool valid(std::size_t row) const { return key_valid.empty() || key_valid[row] != 0; }
};

template <class T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo, ln_gamma, ln_beta;

  AttentionParams() = default;
  AttentionParams(const std::string& prefix, Eigen::Index dim)
      : wq(prefix + ".wq", dim, dim),
        bq(prefix + ".bq", 1, dim),
        wk(prefix + ".wk", dim, dim),
        bk(prefix + ".bk", 1, dim),
        wv(prefix + ".wv", dim, dim),
        bv(prefix + ".bv", 1, dim),
        wo(prefix + ".wo", dim, dim),
        bo(prefix + ".bo", 1, dim),
        ln_gamma(prefix + ".ln_gamma", 1, dim),
        ln_beta(prefix + ".ln_beta", 1, dim) {
    ln_gamma.data.setOnes();
  }

  template <class F>
  void for_each(F&& f) {
    for (Tensor<T>* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln_gamma, &ln_beta}) f(*p);
  }

  template <class Rng>
  void init(Rng& rng, double stddev) {
    for (Tensor<T>* p : {&wq, &wk, &wv, &wo}) init_normal(*p, stddev, rng);
  }
};

template <class T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2, ln_gamma, ln_beta;

  FfnParams() = default;
  FfnParams(const std::string& prefix, Eigen::Index dim, Eigen::Index inner)
      : w1(prefix + ".w1", dim, inner),
        b1(prefix + ".b1", 1, inner),
        w2(prefix + ".w2", inner, dim),
        b2(prefix + ".b2", 1, dim),
        ln_gamma(prefix + ".ln_gamma", 1, dim),
        ln_beta(prefix + ".ln_beta", 1, dim) {
    ln_gamma.data.setOnes();
  }

  template <class F>
  void for_each(F&& f) {
    for (Tensor<T>* p : {&w1, &b1, &w2, &b2, &ln_gamma, &ln_beta}) f(*p);
  }

  template <class Rng>
  void init(Rng& rng, double stddev) {
    init_normal(w1, stddev, rng);
    init_normal(w2, stddev, rng);
  }
};

namespace ad {

/// Scaled dot-product attention over each sequence of `layout`, split into
/// `heads` column blocks. Masked keys (future positions when `causal`, and
/// padding) get zero weight. A query with no admissible key outputs zeros.
template <class T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, const SequenceLayout& layout,
                            std::size_t heads, bool causal) {
  const Eigen::Index rows = q.rows();
  const Eigen::Index dim = q.cols();
  if (heads == 0 || dim % static_cast<Eigen::Index>(heads) != 0) {
    throw ConfigError("attention: model dim " + std::to_string(dim) +
                      " not divisible by head count " + std::to_string(heads));
  }
  if (k.rows() != rows || v.rows() != rows || k.cols() != dim || v.cols() != dim ||
      layout.total_rows() != static_cast<std::size_t>(rows)) {
    throw ShapeError("attention: q/k/v/layout shapes disagree");
  }
  if (!layout.key_valid.empty() && layout.key_valid.size() != static_cast<std::size_t>(rows)) {
    throw ShapeError("attention: pad mask length differs from row count");
  }
  const Eigen::Index dk = dim / static_cast<Eigen::Index>(heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  const Matrix<T>& qv = q.value();
  const Matrix<T>& kv = k.value();
  const Matrix<T>& vv = v.value();

  Matrix<T> out = Matrix<T>::Zero(rows, dim);
  std::vector<Matrix<T>> probs;
  probs.reserve(layout.offsets.size() * heads);
  for (std::size_t s = 0; s < layout.offsets.size(); ++s) {
    const auto off = static_cast<Eigen::Index>(layout.offsets[s]);
    const auto n = static_cast<Eigen::Index>(layout.lengths[s]);
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
      Matrix<T> scores = (qv.block(off, c0, n, dk) * kv.block(off, c0, n, dk).transpose()) * scale;
      Matrix<T> p = Matrix<T>::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
          if ((causal && j > i) || !layout.valid(static_cast<std::size_t>(off + j))) continue;
          mx = std::max(mx, scores(i, j));
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T total = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if ((causal && j > i) || !layout.valid(static_cast<std::size_t>(off + j))) continue;
          p(i, j) = std::exp(scores(i, j) - mx);
          total += p(i, j);
        }
        p.row(i) /= total;
      }
      out.block(off, c0, n, dk) = p * vv.block(off, c0, n, dk);
      probs.push_back(std::move(p));
    }
  }

  Tape<T>& t = *q.tape;
  return t.push(
      std::move(out), detail::any_grad({q, k, v}),
      [q, k, v, layout, heads, dk, scale, probs = std::move(probs)](Tape<T>& t,
                                                                    const Matrix<T>& g) {
        const Matrix<T>& qv = q.value();
        const Matrix<T>& kv = k.value();
        const Matrix<T>& vv = v.value();
        Matrix<T> gq = Matrix<T>::Zero(qv.rows(), qv.cols());
        Matrix<T> gk = Matrix<T>::Zero(qv.rows(), qv.cols());
        Matrix<T> gv = Matrix<T>::Zero(qv.rows(), qv.cols());
        std::size_t idx = 0;
        for (std::size_t s = 0; s < layout.offsets.size(); ++s) {
          const auto off = static_cast<Eigen::Index>(layout.offsets[s]);
          const auto n = static_cast<Eigen::Index>(layout.lengths[s]);
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
            const Matrix<T>& p = probs[idx];
            auto go = g.block(off, c0, n, dk);
            gv.block(off, c0, n, dk) += p.transpose() * go;
            Matrix<T> gp = go * vv.block(off, c0, n, dk).transpose();
            Eigen::Matrix<T, Eigen::Dynamic, 1> dot = gp.cwiseProduct(p).rowwise().sum();
            Matrix<T> gs = p.cwiseProduct(gp.colwise() - dot) * scale;
            gq.block(off, c0, n, dk) += gs * kv.block(off, c0, n, dk);
            gk.block(off, c0, n, dk) += gs.transpose() * qv.block(off, c0, n, dk);
          }
        }
        t.accumulate(q.id, gq);
        t.accumulate(k.id, gk);
        t.accumulate(v.id, gv);
      });
}

}  // namespace ad

/// Multi-head self-attention sublayer: LN(H + MHA(H)·Wo + bo), post-norm.
template <class T, class Rng = std::mt19937_64>
Var<T> attention_layer(Var<T> h, AttentionParams<T>& p, const SequenceLayout& layout,
                       std::size_t heads, bool causal = true, double dropout = 0.0,
                       Rng* rng = nullptr) {
  Tape<T>& t = *h.tape;
  auto q = ad::add_row(ad::matmul(h, t.parameter(p.wq)), t.parameter(p.bq));
  auto k = ad::add_row(ad::matmul(h, t.parameter(p.wk)), t.parameter(p.bk));
  auto v = ad::add_row(ad::matmul(h, t.parameter(p.wv)), t.parameter(p.bv));
  auto a = ad::multi_head_attention(q, k, v, layout, heads, causal);
  auto o = ad::add_row(ad::matmul(a, t.parameter(p.wo)), t.parameter(p.bo));
  if (rng != nullptr && dropout > 0.0) o = ad::dropout(o, dropout, *rng);
  return ad::layer_norm_rows(ad::add(h, o), t.parameter(p.ln_gamma), t.parameter(p.ln_beta));
}

/// Position-wise feed-forward sublayer: LN(X + ReLU(X·W1 + b1)·W2 + b2).
template <class T, class Rng = std::mt19937_64>
Var<T> ffn_layer(Var<T> x, FfnParams<T>& p, double dropout = 0.0, Rng* rng = nullptr) {
  Tape<T>& t = *x.tape;
  if (x.cols() != p.w1.rows()) throw ShapeError("ffn_layer: input width does not match W1");
  auto hidden = ad::relu(ad::add_row(ad::matmul(x, t.parameter(p.w1)), t.parameter(p.b1)));
  auto o = ad::add_row(ad::matmul(hidden, t.parameter(p.w2)), t.parameter(p.b2));
  if (rng != nullptr && dropout > 0.0) o = ad::dropout(o, dropout, *rng);
  return ad::layer_norm_rows(ad::add(x, o), t.parameter(p.ln_gamma), t.parameter(p.ln_beta));
}

}  // namespace mmrec
