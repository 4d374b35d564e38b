#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmrec/numerics/attention.hpp"
#include "mmrec/numerics/grad_check.hpp"
#include "mmrec/projector.hpp"
#include "mmrec/synth.hpp"
#include "mmrec/training/finetune.hpp"
#include "mmrec/training/losses.hpp"
#include "mmrec/training/pretrain.hpp"
#include "support/toy.hpp"

namespace mmrec::testing {

struct GradCase {
  std::string name;
  GradCheckReport report;
};

namespace detail {

using Rng = std::mt19937_64;
using D = double;

inline Tensor<D> random_tensor(const std::string& name, Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Tensor<D> t(name, r, c);
  init_normal(t, scale, rng);
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Reduces an output to a scalar through fixed random weights so every
/// output entry carries a distinct gradient.
inline Var<D> project_out(Var<D> out, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<D> w(out.rows(), out.cols());
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return ad::sum(ad::mul_const(out, std::move(w)));
}

}  // namespace detail

/// Finite-difference checks of every differentiable primitive and of the
/// composite losses on random toy shapes drawn from `seed`
/// (d <= 8, T <= 4 rows, n <= 6 items).
inline std::vector<GradCase> run_grad_suite(std::uint64_t seed) {
  using detail::D;
  using detail::pick;
  using detail::project_out;
  using detail::random_tensor;
  detail::Rng rng(seed);
  std::vector<GradCase> cases;
  const std::uint64_t wseed = seed * 7919 + 1;

  const auto r = static_cast<Eigen::Index>(pick(rng, 1, 4));
  const auto c = static_cast<Eigen::Index>(pick(rng, 2, 8));
  const auto k = static_cast<Eigen::Index>(pick(rng, 1, 6));

  auto check = [&](const std::string& name, std::vector<Tensor<D>*> params, auto&& fn) {
    cases.push_back({name, grad_check(fn, params)});
  };

  {
    auto a = random_tensor("a", r, c, rng);
    auto b = random_tensor("b", c, k, rng);
    check("matmul", {&a, &b}, [&](Tape<D>& t) {
      return project_out(ad::matmul(t.parameter(a), t.parameter(b)), wseed);
    });
  }
  {
    auto a = random_tensor("a", r, c, rng);
    auto b = random_tensor("b", k, c, rng);
    check("matmul_nt", {&a, &b}, [&](Tape<D>& t) {
      return project_out(ad::matmul_nt(t.parameter(a), t.parameter(b)), wseed);
    });
  }
  {
    auto a = random_tensor("a", r, c, rng);
    auto b = random_tensor("b", r, c, rng);
    auto row = random_tensor("row", 1, c, rng);
    auto col = random_tensor("col", r, 1, rng);
    check("add", {&a, &b}, [&](Tape<D>& t) { return project_out(ad::add(t.parameter(a), t.parameter(b)), wseed); });
    check("sub", {&a, &b}, [&](Tape<D>& t) { return project_out(ad::sub(t.parameter(a), t.parameter(b)), wseed); });
    check("mul", {&a, &b}, [&](Tape<D>& t) { return project_out(ad::mul(t.parameter(a), t.parameter(b)), wseed); });
    check("add_row", {&a, &row},
          [&](Tape<D>& t) { return project_out(ad::add_row(t.parameter(a), t.parameter(row)), wseed); });
    check("sub_row", {&a, &row},
          [&](Tape<D>& t) { return project_out(ad::sub_row(t.parameter(a), t.parameter(row)), wseed); });
    check("mul_col", {&a, &col},
          [&](Tape<D>& t) { return project_out(ad::mul_col(t.parameter(a), t.parameter(col)), wseed); });
    check("scale", {&a}, [&](Tape<D>& t) { return project_out(ad::scale(t.parameter(a), 1.7), wseed); });
    check("relu", {&a}, [&](Tape<D>& t) { return project_out(ad::relu(t.parameter(a)), wseed); });
    check("softmax_rows", {&a}, [&](Tape<D>& t) { return project_out(ad::softmax_rows(t.parameter(a)), wseed); });
    check("logsumexp_rows", {&a},
          [&](Tape<D>& t) { return project_out(ad::logsumexp_rows(t.parameter(a)), wseed); });
    check("rowwise_dot", {&a, &b},
          [&](Tape<D>& t) { return project_out(ad::rowwise_dot(t.parameter(a), t.parameter(b)), wseed); });
    check("sum", {&a}, [&](Tape<D>& t) { return ad::sum(ad::mul(t.parameter(a), t.parameter(a))); });
    check("slice_cols", {&a},
          [&](Tape<D>& t) { return project_out(ad::slice_cols(t.parameter(a), c / 2, c - c / 2), wseed); });
    check("concat_cols", {&a, &b},
          [&](Tape<D>& t) { return project_out(ad::concat_cols<D>({t.parameter(a), t.parameter(b)}), wseed); });
    check("concat_rows", {&a, &b},
          [&](Tape<D>& t) { return project_out(ad::concat_rows<D>({t.parameter(a), t.parameter(b)}), wseed); });
    check("dropout", {&a}, [&](Tape<D>& t) {
      detail::Rng drop_rng(wseed);
      return project_out(ad::dropout(t.parameter(a), 0.3, drop_rng), wseed);
    });
    std::vector<std::size_t> targets;
    for (Eigen::Index i = 0; i < r; ++i) targets.push_back(pick(rng, 0, static_cast<std::size_t>(c) - 1));
    check("cross_entropy_rows", {&a}, [&](Tape<D>& t) { return ad::cross_entropy_rows(t.parameter(a), targets); });
    check("nll_rows", {&a},
          [&](Tape<D>& t) { return ad::nll_rows(ad::softmax_rows(t.parameter(a)), targets); });
    auto gamma = random_tensor("gamma", 1, c, rng);
    auto beta = random_tensor("beta", 1, c, rng);
    check("layer_norm_rows", {&a, &gamma, &beta}, [&](Tape<D>& t) {
      return project_out(ad::layer_norm_rows(t.parameter(a), t.parameter(gamma), t.parameter(beta)), wseed);
    });
    auto table = random_tensor("table", k, c, rng);
    std::vector<std::size_t> idx;
    for (Eigen::Index i = 0; i < r + 1; ++i) idx.push_back(pick(rng, 0, static_cast<std::size_t>(k) - 1));
    check("gather_rows", {&table},
          [&](Tape<D>& t) { return project_out(ad::gather_rows(t.parameter(table), idx), wseed); });
  }
  {
    // Two stacked sequences, one with a padded key.
    const std::size_t heads = pick(rng, 1, 2);
    const auto dim = static_cast<Eigen::Index>(heads * pick(rng, 1, 4));
    SequenceLayout layout;
    layout.append(pick(rng, 1, 3));
    layout.append(pick(rng, 2, 3));
    layout.key_valid.assign(layout.total_rows(), 1);
    layout.key_valid[layout.offsets[1] + 1] = 0;
    const auto n = static_cast<Eigen::Index>(layout.total_rows());
    auto q = random_tensor("q", n, dim, rng);
    auto kk = random_tensor("k", n, dim, rng);
    auto v = random_tensor("v", n, dim, rng);
    for (bool causal : {true, false}) {
      check(causal ? "multi_head_attention_causal" : "multi_head_attention", {&q, &kk, &v}, [&](Tape<D>& t) {
        return project_out(
            ad::multi_head_attention(t.parameter(q), t.parameter(kk), t.parameter(v), layout, heads, causal), wseed);
      });
    }
    AttentionParams<D> ap("attn", dim);
    ap.init(rng, 0.5);
    ap.for_each([&](Tensor<D>& p) {
      if (p.name.find("ln_") == std::string::npos && p.name.find(".b") != std::string::npos) init_normal(p, 0.3, rng);
    });
    std::vector<Tensor<D>*> aps;
    ap.for_each([&](Tensor<D>& p) { aps.push_back(&p); });
    aps.push_back(&q);
    check("attention_layer", aps, [&](Tape<D>& t) {
      return project_out(attention_layer(t.parameter(q), ap, layout, heads, true), wseed);
    });
    FfnParams<D> fp("ffn", dim, static_cast<Eigen::Index>(pick(rng, 2, 8)));
    fp.init(rng, 0.5);
    init_normal(fp.b1, 0.3, rng);
    std::vector<Tensor<D>*> fps;
    fp.for_each([&](Tensor<D>& p) { fps.push_back(&p); });
    fps.push_back(&q);
    check("ffn_layer", fps, [&](Tape<D>& t) { return project_out(ffn_layer(t.parameter(q), fp), wseed); });
  }
  {
    const auto in = static_cast<Eigen::Index>(pick(rng, 2, 8));
    const auto out = static_cast<Eigen::Index>(pick(rng, 1, 8));
    MoEProjector<D> proj("proj", Modality::text, in, out, pick(rng, 1, 4));
    proj.init(rng, 0.5);
    proj.for_each([&](Tensor<D>& p) {
      if (p.name.find(".b") != std::string::npos) init_normal(p, 0.3, rng);
    });
    auto feats = random_tensor("features", r + 1, in, rng);
    Matrix<D> present = Matrix<D>::Ones(r + 1, 1);
    present(0, 0) = 0.0;
    std::vector<Tensor<D>*> ps;
    proj.for_each([&](Tensor<D>& p) { ps.push_back(&p); });
    ps.push_back(&feats);
    check("moe_project", ps, [&](Tape<D>& t) {
      return project_out(ad::moe_project(t.parameter(feats), proj, present), wseed);
    });
  }
  {
    const auto tt = static_cast<Eigen::Index>(pick(rng, 1, 4));
    const auto dd = static_cast<Eigen::Index>(pick(rng, 2, 8));
    auto u = random_tensor("u", tt, dd, rng);
    auto e = random_tensor("e", tt, dd, rng);
    const double tau = 0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    check("loss_csi", {&u, &e}, [&](Tape<D>& t) { return ad::loss_csi(t.parameter(u), t.parameter(e), tau); });
    check("loss_css_literal", {&u, &e}, [&](Tape<D>& t) {
      return ad::loss_css(t.parameter(u), t.parameter(e), tau, CssForm::literal);
    });
    check("loss_css_infonce", {&u, &e}, [&](Tape<D>& t) {
      return ad::loss_css(t.parameter(u), t.parameter(e), tau, CssForm::infonce);
    });
    auto cand = random_tensor("content", k + 1, dd, rng);
    auto ids = random_tensor("ids", k + 1, dd, rng);
    std::vector<std::size_t> targets;
    for (Eigen::Index i = 0; i < tt; ++i) targets.push_back(pick(rng, 0, static_cast<std::size_t>(k)));
    check("fused_probabilities", {&u, &e, &cand, &ids}, [&](Tape<D>& t) {
      auto p = ad::fused_probabilities<D>(t.parameter(u), t.parameter(e), t.parameter(cand), t.parameter(ids));
      return ad::nll_rows(p, targets);
    });
  }

  // Composite losses on a toy model and a toy dataset.
  const SynthConfig sc = toy_synth(seed);
  const SynthData sd = synth_generate(sc);
  const TrainingConfig tc = toy_training(sc);
  const auto table = FeatureTable<D>::build(sd.dataset);
  {
    auto model = PretrainedModel<D>::build(tc, ModelSwitches{});
    model.init(rng);
    model.for_each([&](Tensor<D>& p) {
      if (p.name.find("ln_gamma") == std::string::npos && p.name.find("position") == std::string::npos &&
          p.data.isZero())
        init_normal(p, 0.3, rng);
    });
    auto seqs = build_pretrain_sequences(sd.dataset, table, kToySources, tc.n_max);
    std::vector<PretrainSequence> usable;
    for (const auto& s : seqs)
      if (s.rows.size() >= 3) usable.push_back(s);
    if (usable.empty()) throw ConfigError("grad suite: toy data has no sequence of length 3");
    // Two sequences cut to 3 items (T = 4 instances), each context with a
    // one-item augmented view.
    PretrainBatch batch;
    for (std::size_t s = 0; s < 2; ++s) {
      auto seq = usable[pick(rng, 0, usable.size() - 1)];
      seq.rows.resize(3);
      batch.augmented.push_back({seq.rows[pick(rng, 0, 1)]});
      batch.sequences.push_back(std::move(seq));
    }
    std::vector<Tensor<D>*> ps;
    model.for_each([&](Tensor<D>& p) { ps.push_back(&p); });
    check("pretrain_loss", ps, [&](Tape<D>& t) { return pretrain_loss(t, model, table, batch).total; });
  }
  {
    auto pre = PretrainedModel<D>::build(tc, ModelSwitches{});
    pre.init(rng);
    const auto td = build_target_data(sd.dataset, table, kToyTarget, {"d0", "d1"});
    auto model = FinetunedModel<D>::from_pretrained(pre, ModelSwitches{}, kToyTarget, td.vocab_ids);
    init_normal(model.ids.table, 0.5, rng);
    model.projectors.for_each([&](Tensor<D>& p) {
      if (p.data.isZero()) init_normal(p, 0.3, rng);
    });
    auto cases = eval_cases(td, SplitMode::valid);
    if (cases.size() > 4) cases.resize(4);
    const auto batch = make_eval_batch(td, cases, tc.n_max);
    std::vector<Tensor<D>*> ps;
    model.for_each([&](Tensor<D>& p) {
      if (p.requires_grad) ps.push_back(&p);
    });
    check("finetune_loss", ps, [&](Tape<D>& t) { return finetune_loss(t, model, table, td, batch); });
  }
  return cases;
}

}  // namespace mmrec::testing
