#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/numerics/tape.hpp"
#include "mmrec/training/config.hpp"

namespace mmrec {

namespace ad {

/// Sequence-item contrast with in-batch negatives:
/// -Σ_j log softmax_j'(u_j · e_j' / τ)[j].
template <class T>
Var<T> loss_csi(Var<T> users, Var<T> items, double tau) {
  if (!(tau > 0.0)) throw ConfigError("loss_csi: tau must be > 0");
  if (users.rows() != items.rows() || users.cols() != items.cols()) {
    throw ShapeError("loss_csi: user and item batches differ in shape");
  }
  if (users.rows() == 0) throw ShapeError("loss_csi: empty batch");
  std::vector<std::size_t> diag(static_cast<std::size_t>(users.rows()));
  for (std::size_t j = 0; j < diag.size(); ++j) diag[j] = j;
  return cross_entropy_rows(scale(matmul_nt(users, items), static_cast<T>(1.0 / tau)), std::move(diag));
}

/// Sequence-sequence contrast. The positive for u_j is its augmented view
/// û_j. With CssForm::literal the normalizer runs over u_j · u_j' for all
/// originals j' (self term included); CssForm::infonce normalizes over
/// u_j · û_j' instead.
template <class T>
Var<T> loss_css(Var<T> users, Var<T> augmented, double tau, CssForm form = CssForm::literal) {
  if (!(tau > 0.0)) throw ConfigError("loss_css: tau must be > 0");
  if (users.rows() != augmented.rows() || users.cols() != augmented.cols()) {
    throw ShapeError("loss_css: original and augmented batches differ in shape");
  }
  if (users.rows() == 0) throw ShapeError("loss_css: empty batch");
  const T inv_tau = static_cast<T>(1.0 / tau);
  if (form == CssForm::infonce) {
    std::vector<std::size_t> diag(static_cast<std::size_t>(users.rows()));
    for (std::size_t j = 0; j < diag.size(); ++j) diag[j] = j;
    return cross_entropy_rows(scale(matmul_nt(users, augmented), inv_tau), std::move(diag));
  }
  auto normalizer = sum(logsumexp_rows(scale(matmul_nt(users, users), inv_tau)));
  auto positives = scale(sum(rowwise_dot(users, augmented)), inv_tau);
  return sub(normalizer, positives);
}

/// ½ softmax(u_m · Cᵀ) + ½ softmax(u_s · (C + C_id)ᵀ); only the
/// single-domain head when `use_mix` is false; C_id omitted when absent.
template <class T>
Var<T> fused_probabilities(std::optional<Var<T>> mixed_users, Var<T> single_users, Var<T> content,
                           std::optional<Var<T>> ids, bool use_mix = true) {
  auto single_candidates = ids ? add(content, *ids) : content;
  auto p_single = softmax_rows(matmul_nt(single_users, single_candidates));
  if (!use_mix || !mixed_users) return p_single;
  auto p_mixed = softmax_rows(matmul_nt(*mixed_users, content));
  return scale(add(p_mixed, p_single), static_cast<T>(0.5));
}

}  // namespace ad

template <class T>
T loss_csi(const Matrix<T>& users, const Matrix<T>& items, double tau) {
  Tape<T> tape(false);
  return ad::loss_csi(tape.constant(users), tape.constant(items), tau).value()(0, 0);
}

template <class T>
T loss_css(const Matrix<T>& users, const Matrix<T>& augmented, double tau,
           CssForm form = CssForm::literal) {
  Tape<T> tape(false);
  return ad::loss_css(tape.constant(users), tape.constant(augmented), tau, form).value()(0, 0);
}

/// Fused next-item distribution over the candidate rows of `content`
/// (one row per candidate) for a single user; returns 1 x n_candidates.
template <class T>
Matrix<T> fused_predict(const Matrix<T>& u_mixed, const Matrix<T>& u_single, const Matrix<T>& content,
                        const Matrix<T>& ids) {
  if (u_mixed.cols() != content.cols() || u_single.cols() != content.cols() ||
      ids.rows() != content.rows() || ids.cols() != content.cols()) {
    throw ShapeError("fused_predict: dimension mismatch");
  }
  Tape<T> tape(false);
  return ad::fused_probabilities<T>(tape.constant(u_mixed), tape.constant(u_single),
                                    tape.constant(content), tape.constant(ids))
      .value();
}

/// Keeps each item independently with probability 1 - drop_ratio; keeps the
/// last item when everything would be dropped. Order is preserved.
template <class Item, class Rng>
std::vector<Item> augment_drop(std::span<const Item> seq, double drop_ratio, Rng& rng) {
  if (seq.size() < 2) throw TooShortError("augment_drop: sequence shorter than 2");
  if (!(drop_ratio >= 0.0 && drop_ratio < 1.0)) throw ConfigError("drop_ratio must lie in [0,1)");
  std::bernoulli_distribution keep(1.0 - drop_ratio);
  std::vector<Item> out;
  for (const Item& it : seq)
    if (keep(rng)) out.push_back(it);
  if (out.empty()) out.push_back(seq.back());
  return out;
}

template <class Item, class Rng>
std::vector<Item> augment_drop(const std::vector<Item>& seq, double drop_ratio, Rng& rng) {
  return augment_drop(std::span<const Item>(seq), drop_ratio, rng);
}

}  // namespace mmrec
