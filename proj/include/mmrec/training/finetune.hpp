#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/encoder.hpp"
#include "mmrec/error.hpp"
#include "mmrec/evaluation/metrics.hpp"
#include "mmrec/numerics/adam.hpp"
#include "mmrec/projector.hpp"
#include "mmrec/training/checkpoint.hpp"
#include "mmrec/training/config.hpp"
#include "mmrec/training/losses.hpp"
#include "mmrec/training/pretrain.hpp"

namespace mmrec {

// ---------------------------------------------------------------------------
// Target-domain data
// ---------------------------------------------------------------------------

/// One target-domain user: the target sequence (as table rows and as
/// vocabulary indices) and the mixed flow over every flow domain, with the
/// flow position of each target item.
struct TargetUser {
  std::string user;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> vocab;
  std::vector<std::size_t> flow;
  std::vector<std::size_t> flow_pos;
};

struct TargetData {
  std::string domain;
  std::vector<std::size_t> vocab_rows;  // table rows, candidate order
  std::vector<std::string> vocab_ids;
  std::vector<TargetUser> users;        // users with >= 3 target interactions
  std::vector<double> train_frequency;  // per vocabulary item, over training prefixes
};

/// Vocabulary = every item of the target domain in the feature table.
/// Users with fewer than 3 target interactions cannot be split and are left out.
template <class T>
TargetData build_target_data(const Dataset& data, const FeatureTable<T>& table, const std::string& target,
                             const std::set<std::string>& flow_domains) {
  TargetData td;
  td.domain = target;
  td.vocab_rows = table.rows_of_domain(target);
  if (td.vocab_rows.empty()) throw ConfigError("target domain '" + target + "' has no items");
  std::map<std::size_t, std::size_t> vocab_of_row;
  for (std::size_t v = 0; v < td.vocab_rows.size(); ++v) {
    vocab_of_row.emplace(td.vocab_rows[v], v);
    td.vocab_ids.push_back(table.item_ids[td.vocab_rows[v]]);
  }
  std::set<std::string> domains = flow_domains;
  domains.insert(target);
  const auto flows = build_all_mixed_flows(data.interactions, domains);
  td.train_frequency.assign(td.vocab_rows.size(), 0.0);
  for (const auto& seq : build_domain_sequences(data.interactions, target)) {
    if (seq.items.size() < 3) continue;
    TargetUser u;
    u.user = seq.user_id;
    for (const auto& it : seq.items) {
      const std::size_t r = table.row(it.item_id);
      u.rows.push_back(r);
      u.vocab.push_back(vocab_of_row.at(r));
    }
    const auto& flow = flows.at(seq.user_id).items;
    std::size_t k = 0;
    for (std::size_t j = 0; j < flow.size(); ++j) {
      u.flow.push_back(table.row(flow[j].item_id));
      if (flow[j].domain_id == target) u.flow_pos.push_back(j);
    }
    if (u.flow_pos.size() != u.rows.size()) throw FormatError("flow and target sequence disagree for '" + u.user + "'");
    for (k = 0; k + 2 < u.vocab.size(); ++k) td.train_frequency[u.vocab[k]] += 1.0;
    td.users.push_back(std::move(u));
  }
  if (td.users.empty()) throw ConfigError("target domain '" + target + "' has no user with 3 or more interactions");
  return td;
}

enum class SplitMode { valid, test };

/// Predicting users[user].vocab[k] from everything before it.
struct PredictionCase {
  std::size_t user = 0;
  std::size_t k = 0;
};

inline std::vector<PredictionCase> eval_cases(const TargetData& td, SplitMode mode) {
  std::vector<PredictionCase> out;
  for (std::size_t u = 0; u < td.users.size(); ++u) {
    const std::size_t m = td.users[u].vocab.size();
    out.push_back({u, mode == SplitMode::valid ? m - 2 : m - 1});
  }
  return out;
}

/// Encoder sequences of one step and, per prediction, the sequence and
/// position whose hidden state represents the user.
struct FinetuneBatch {
  std::vector<std::vector<std::size_t>> single_seqs;   // table rows
  std::vector<std::vector<std::size_t>> single_vocab;  // parallel vocabulary indices
  std::vector<std::vector<std::size_t>> mixed_seqs;    // table rows
  std::vector<std::pair<std::size_t, std::size_t>> single_at;
  std::vector<std::pair<std::size_t, std::size_t>> mixed_at;
  std::vector<std::size_t> targets;  // vocabulary indices

  std::size_t size() const { return targets.size(); }
};

/// Each case gets its own contexts: the last n_max target items before k
/// and the last n_max flow items before the target's flow position.
inline FinetuneBatch make_eval_batch(const TargetData& td, std::span<const PredictionCase> cases, std::size_t n_max) {
  FinetuneBatch b;
  for (const auto& c : cases) {
    const TargetUser& u = td.users.at(c.user);
    if (c.k == 0 || c.k >= u.vocab.size()) throw RangeError("prediction case without context");
    const std::size_t s0 = c.k > n_max ? c.k - n_max : 0;
    b.single_seqs.emplace_back(u.rows.begin() + static_cast<std::ptrdiff_t>(s0), u.rows.begin() + static_cast<std::ptrdiff_t>(c.k));
    b.single_vocab.emplace_back(u.vocab.begin() + static_cast<std::ptrdiff_t>(s0), u.vocab.begin() + static_cast<std::ptrdiff_t>(c.k));
    b.single_at.emplace_back(b.single_seqs.size() - 1, c.k - s0 - 1);
    const std::size_t fk = u.flow_pos[c.k];
    const std::size_t f0 = fk > n_max ? fk - n_max : 0;
    b.mixed_seqs.emplace_back(u.flow.begin() + static_cast<std::ptrdiff_t>(f0), u.flow.begin() + static_cast<std::ptrdiff_t>(fk));
    b.mixed_at.emplace_back(b.mixed_seqs.size() - 1, fk - f0 - 1);
    b.targets.push_back(u.vocab[c.k]);
  }
  return b;
}

/// Training instances k = 1 .. m-3 of each user share one causal encoder
/// pass per head over the training prefix (most recent n_max items);
/// instances whose context starts before that window are skipped.
inline FinetuneBatch make_train_batch(const TargetData& td, std::span<const std::size_t> users, std::size_t n_max) {
  FinetuneBatch b;
  for (std::size_t ui : users) {
    const TargetUser& u = td.users.at(ui);
    const std::size_t m = u.vocab.size();
    if (m < 4) continue;  // the training prefix t_0..t_{m-3} has no (context, next) pair
    const std::size_t last = m - 3;  // largest training target index
    const std::size_t s_end = last;  // single context rows [s0, s_end)
    const std::size_t s0 = s_end > n_max ? s_end - n_max : 0;
    const std::size_t f_end = u.flow_pos[last];
    const std::size_t f0 = f_end > n_max ? f_end - n_max : 0;
    const std::size_t s_idx = b.single_seqs.size();
    b.single_seqs.emplace_back(u.rows.begin() + static_cast<std::ptrdiff_t>(s0), u.rows.begin() + static_cast<std::ptrdiff_t>(s_end));
    b.single_vocab.emplace_back(u.vocab.begin() + static_cast<std::ptrdiff_t>(s0), u.vocab.begin() + static_cast<std::ptrdiff_t>(s_end));
    b.mixed_seqs.emplace_back(u.flow.begin() + static_cast<std::ptrdiff_t>(f0), u.flow.begin() + static_cast<std::ptrdiff_t>(f_end));
    for (std::size_t k = 1; k <= last; ++k) {
      if (k - 1 < s0 || u.flow_pos[k] - 1 < f0) continue;
      b.single_at.emplace_back(s_idx, k - 1 - s0);
      b.mixed_at.emplace_back(s_idx, u.flow_pos[k] - 1 - f0);
      b.targets.push_back(u.vocab[k]);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Target-domain model: projectors, a mixed-flow and a single-domain
/// encoder instance, and the item ID table. Tensor names: projector.*,
/// encoder_mixed.*, encoder_single.*, item_id_embedding.
template <class T>
struct FinetunedModel {
  TrainingConfig config;
  ModelSwitches switches;
  std::string target_domain;
  ProjectorBank<T> projectors;
  Encoder<T> mixed;
  Encoder<T> single;
  ItemIdEmbedding<T> ids;

  static FinetunedModel build(const TrainingConfig& cfg, const ModelSwitches& sw, const std::string& target,
                              std::vector<std::string> vocab) {
    cfg.validate();
    FinetunedModel m;
    m.config = cfg;
    m.switches = sw;
    m.target_domain = target;
    m.projectors = make_projectors<T>(cfg, sw);
    m.mixed = Encoder<T>("encoder_mixed", cfg.encoder_shape());
    m.single = Encoder<T>("encoder_single", cfg.encoder_shape());
    m.ids = ItemIdEmbedding<T>("item_id_embedding", std::move(vocab), cfg.model_dim());
    return m;
  }

  /// Encoders and positions copied from the pre-trained stack(s) and frozen.
  static FinetunedModel from_pretrained(const PretrainedModel<T>& pre, const ModelSwitches& sw,
                                        const std::string& target, std::vector<std::string> vocab) {
    FinetunedModel m = build(pre.config, sw, target, std::move(vocab));
    m.projectors = pre.projectors;
    m.mixed = pre.encoder.renamed("encoder.", "encoder_mixed.");
    m.single = pre.single_encoder ? *pre.single_encoder : pre.encoder.renamed("encoder.", "encoder_single.");
    m.freeze_encoders();
    return m;
  }

  void freeze_encoders() {
    mixed.for_each([](Tensor<T>& t) { t.requires_grad = false; });
    single.for_each([](Tensor<T>& t) { t.requires_grad = false; });
  }

  template <class F>
  void for_each(F&& f) {
    projectors.for_each(f);
    mixed.for_each(f);
    single.for_each(f);
    if (switches.use_id) f(ids.table);
  }

  std::size_t parameter_count(bool trainable_only) {
    std::size_t n = 0;
    for_each([&](Tensor<T>& t) {
      if (!trainable_only || t.requires_grad) n += static_cast<std::size_t>(t.size());
    });
    return n;
  }
};

template <class T>
Checkpoint to_checkpoint(FinetunedModel<T>& model, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json echo = model_echo(model.config, model.switches, "finetuned");
  echo["target_domain"] = model.target_domain;
  echo["vocab"] = model.ids.items;
  echo["frozen_encoders"] = !model.mixed.positions.table.requires_grad;
  for (auto it = extra.begin(); it != extra.end(); ++it) echo[it.key()] = it.value();
  return collect_checkpoint<T>(model, echo.dump());
}

template <class T>
FinetunedModel<T> finetuned_from_checkpoint(const Checkpoint& ckpt) {
  const nlohmann::json echo = parse_echo(ckpt, "finetuned");
  TrainingConfig cfg;
  from_json(echo.at("training"), cfg);
  auto model = FinetunedModel<T>::build(cfg, switches_from_json(echo.at("switches")),
                                        echo.at("target_domain").get<std::string>(),
                                        echo.at("vocab").get<std::vector<std::string>>());
  restore_checkpoint<T>(model, ckpt);
  if (echo.value("frozen_encoders", false)) model.freeze_encoders();
  return model;
}

// ---------------------------------------------------------------------------
// Forward pass and loss
// ---------------------------------------------------------------------------

/// Fused next-item distribution, one row per prediction of `batch`, over
/// the full target vocabulary.
template <class T, class Rng = std::mt19937_64>
Var<T> finetune_probabilities(Tape<T>& tape, FinetunedModel<T>& model, const FeatureTable<T>& table,
                              const TargetData& td, const FinetuneBatch& batch, Rng* dropout_rng = nullptr) {
  if (batch.size() == 0) throw ShapeError("finetune batch has no prediction");
  if (model.ids.size() != td.vocab_rows.size()) throw ShapeError("ID table size differs from the target vocabulary");
  const bool use_mix = model.switches.use_mix;

  std::vector<std::size_t> uniq(td.vocab_rows);
  for (const auto& s : batch.single_seqs) uniq.insert(uniq.end(), s.begin(), s.end());
  if (use_mix)
    for (const auto& s : batch.mixed_seqs) uniq.insert(uniq.end(), s.begin(), s.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < uniq.size(); ++i) local.emplace(uniq[i], i);
  auto to_local = [&](const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(local.at(r));
    return out;
  };

  Var<T> projected = project_rows(tape, table, model.projectors, uniq, model.switches.use_modality);
  Var<T> content = ad::gather_rows(projected, to_local(td.vocab_rows));
  std::optional<Var<T>> id_table;
  if (model.switches.use_id) id_table = tape.parameter(model.ids.table);
  const double dropout = dropout_rng != nullptr ? model.config.dropout : 0.0;

  auto run = [&](const std::vector<std::vector<std::size_t>>& seqs, const std::vector<std::vector<std::size_t>>* vocab,
                 const std::vector<std::pair<std::size_t, std::size_t>>& at, Encoder<T>& enc) {
    BatchInputs<T> inputs;
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const auto rows = to_local(seqs[s]);
      if (vocab != nullptr) {
        inputs.add_sequence(rows, (*vocab)[s]);
      } else {
        inputs.add_sequence(rows);
      }
    }
    auto x = inputs.build(projected, enc.positions, vocab != nullptr ? id_table : std::nullopt);
    auto h = encode(x, enc.stack, inputs.layout, dropout, dropout_rng);
    std::vector<std::size_t> picks;
    for (const auto& [s, pos] : at) picks.push_back(inputs.layout.offsets[s] + pos);
    return ad::gather_rows(h, std::move(picks));
  };

  Var<T> u_single = run(batch.single_seqs, id_table ? &batch.single_vocab : nullptr, batch.single_at, model.single);
  std::optional<Var<T>> u_mixed;
  if (use_mix) u_mixed = run(batch.mixed_seqs, nullptr, batch.mixed_at, model.mixed);
  return ad::fused_probabilities(u_mixed, u_single, content, id_table, use_mix);
}

/// Σ −log P_fused[target] over the batch.
template <class T, class Rng = std::mt19937_64>
Var<T> finetune_loss(Tape<T>& tape, FinetunedModel<T>& model, const FeatureTable<T>& table, const TargetData& td,
                     const FinetuneBatch& batch, Rng* dropout_rng = nullptr) {
  return ad::nll_rows(finetune_probabilities(tape, model, table, td, batch, dropout_rng), batch.targets);
}

/// Full-vocabulary rank of each case's target under the fused scores.
template <class T>
std::vector<std::size_t> rank_cases(FinetunedModel<T>& model, const FeatureTable<T>& table, const TargetData& td,
                                    std::span<const PredictionCase> cases, std::size_t chunk = 256) {
  std::vector<std::size_t> ranks;
  ranks.reserve(cases.size());
  for (std::size_t start = 0; start < cases.size(); start += chunk) {
    const std::size_t n = std::min(chunk, cases.size() - start);
    const auto batch = make_eval_batch(td, cases.subspan(start, n), model.config.n_max);
    Tape<T> tape(false);
    const Matrix<T> p = finetune_probabilities<T>(tape, model, table, td, batch).value();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = p.row(static_cast<Eigen::Index>(i));
      ranks.push_back(rank_of_target(std::span<const T>(row.data(), static_cast<std::size_t>(row.size())),
                                     batch.targets[i]));
    }
  }
  return ranks;
}

template <class T>
MetricReport evaluate_model(FinetunedModel<T>& model, const FeatureTable<T>& table, const TargetData& td,
                            SplitMode mode, const std::vector<std::size_t>& ks = kDefaultKs) {
  const auto cases = eval_cases(td, mode);
  if (cases.empty()) throw ConfigError("evaluation set is empty");
  return aggregate_ranks(rank_cases(model, table, td, cases), ks);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <class T>
struct FinetuneResult {
  FinetunedModel<T> model;
  std::vector<double> valid_ndcg10;
  std::size_t best_epoch = 0;  // 1-based
};

/// Adam on finetune_loss with early stopping on validation NDCG@10; the
/// returned model holds the parameters of the best epoch. Without a
/// pre-trained model (switches.pretrain false) every tensor starts random
/// and stays trainable. Optimization knobs come from `cfg`; the
/// architecture comes from `pretrained` when given.
template <class T>
FinetuneResult<T> finetune(const PretrainedModel<T>* pretrained, const Dataset& data, const std::string& target,
                           const std::vector<std::string>& flow_domains, const TrainingConfig& cfg,
                           const ModelSwitches& sw,
                           const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate();
  if (sw.pretrain && pretrained == nullptr) throw ConfigError("finetune: missing checkpoint");
  if (pretrained != nullptr && sw.pretrain && pretrained->switches.moe != sw.moe) {
    throw ConfigError("finetune: projector construction differs from the pre-trained model");
  }
  if (data.content.count(target) == 0) throw ConfigError("finetune: target domain '" + target + "' has no embeddings");
  TrainingConfig arch = (pretrained != nullptr && sw.pretrain) ? pretrained->config : cfg;
  arch.dropout = cfg.dropout;
  arch.finetune_lr = cfg.finetune_lr;
  arch.finetune_batch_size = cfg.finetune_batch_size;
  arch.max_epochs = cfg.max_epochs;
  arch.patience = cfg.patience;
  arch.seed = cfg.seed;

  const auto table = FeatureTable<T>::build(data);
  for (Modality m : kModalities) {
    if (static_cast<std::size_t>(table.features[static_cast<std::size_t>(m)].cols()) != arch.input_dim(m)) {
      throw ConfigError(std::string("finetune: ") + std::string(modality_name(m)) +
                        " width differs from the model input dim");
    }
  }
  const auto td = build_target_data(data, table, target, std::set<std::string>(flow_domains.begin(), flow_domains.end()));

  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  FinetuneResult<T> result;
  if (sw.pretrain) {
    result.model = FinetunedModel<T>::from_pretrained(*pretrained, sw, target, td.vocab_ids);
    result.model.config = arch;
  } else {
    result.model = FinetunedModel<T>::build(arch, sw, target, td.vocab_ids);
    for (auto& p : result.model.projectors.projectors) p.init(rng, arch.init_std);
    result.model.mixed.init(rng, arch.init_std);
    result.model.single.init(rng, arch.init_std);
  }
  FinetunedModel<T>& model = result.model;
  init_normal(model.ids.table, arch.init_std, rng);

  auto params = trainable_tensors<T>(model);
  AdamState<T> adam(arch.finetune_lr);
  EarlyStopping stopper(arch.patience);
  std::vector<Matrix<T>> best;
  for (Tensor<T>* p : params) best.push_back(p->data);

  std::vector<std::size_t> order(td.users.size());
  for (std::size_t epoch = 1; epoch <= arch.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += arch.finetune_batch_size) {
      const std::size_t n = std::min(arch.finetune_batch_size, order.size() - start);
      const auto batch = make_train_batch(td, std::span<const std::size_t>(order.data() + start, n), arch.n_max);
      if (batch.size() == 0) continue;
      for (Tensor<T>* p : params) p->zero_grad();
      Tape<T> tape;
      auto loss = finetune_loss(tape, model, table, td, batch, &rng);
      tape.backward(loss);
      adam_step(params, adam);
    }
    const double score = evaluate_model(model, table, td, SplitMode::valid).ndcg_at(10);
    result.valid_ndcg10.push_back(score);
    if (on_epoch) on_epoch(epoch, score);
    const auto decision = stopper.update(score);
    if (stopper.improved()) {
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->data;
    }
    if (decision == EarlyStopDecision::stop) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best[i];
  for (Tensor<T>* p : params) p->grad.resize(0, 0);
  return result;
}

}  // namespace mmrec
