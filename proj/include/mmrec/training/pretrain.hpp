#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/encoder.hpp"
#include "mmrec/error.hpp"
#include "mmrec/numerics/adam.hpp"
#include "mmrec/projector.hpp"
#include "mmrec/training/checkpoint.hpp"
#include "mmrec/training/config.hpp"
#include "mmrec/training/losses.hpp"

namespace mmrec {

/// Copies the modality widths of `data` into `cfg`.
inline void adopt_input_dims(TrainingConfig& cfg, const Dataset& data) {
  for (const auto& [domain, stores] : data.content) {
    cfg.dim_text = stores[Modality::text].dim();
    cfg.dim_image = stores[Modality::image].dim();
    cfg.dim_cross = stores[Modality::cross].dim();
    return;
  }
  throw ConfigError("dataset has no content stores");
}

template <class T>
ProjectorBank<T> make_projectors(const TrainingConfig& cfg, const ModelSwitches& sw) {
  ProjectorBank<T> bank;
  for (Modality m : kModalities) {
    const auto mi = static_cast<std::size_t>(m);
    bank.projectors[mi] = MoEProjector<T>("projector." + std::string(modality_name(m)), m,
                                          static_cast<Eigen::Index>(cfg.input_dim(m)),
                                          static_cast<Eigen::Index>(cfg.d), cfg.experts, !sw.moe[mi]);
  }
  return bank;
}

/// Projectors plus the sequence encoder(s) learned from the source domains.
/// Tensor names: projector.<modality>.*, encoder.*, and encoder_single.*
/// when single-domain sequences get their own stack.
template <class T>
struct PretrainedModel {
  TrainingConfig config;
  ModelSwitches switches;
  ProjectorBank<T> projectors;
  Encoder<T> encoder;
  std::optional<Encoder<T>> single_encoder;

  /// Zero-valued parameters with the configured shapes.
  static PretrainedModel build(const TrainingConfig& cfg, const ModelSwitches& sw) {
    cfg.validate();
    PretrainedModel m;
    m.config = cfg;
    m.switches = sw;
    m.projectors = make_projectors<T>(cfg, sw);
    m.encoder = Encoder<T>("encoder", cfg.encoder_shape());
    if (cfg.separate_single_stack) m.single_encoder = Encoder<T>("encoder_single", cfg.encoder_shape());
    return m;
  }

  template <class Rng>
  void init(Rng& rng) {
    for (auto& p : projectors.projectors) p.init(rng, config.init_std);
    encoder.init(rng, config.init_std);
    if (single_encoder) single_encoder->init(rng, config.init_std);
  }

  template <class F>
  void for_each(F&& f) {
    projectors.for_each(f);
    encoder.for_each(f);
    if (single_encoder) single_encoder->for_each(f);
  }

  Encoder<T>& encoder_for(bool mixed) { return (!mixed && single_encoder) ? *single_encoder : encoder; }
};

inline nlohmann::json model_echo(const TrainingConfig& cfg, const ModelSwitches& sw, const std::string& kind) {
  return nlohmann::json{{"kind", kind}, {"training", to_json(cfg)}, {"switches", to_json(sw)}};
}

inline ModelSwitches switches_from_json(const nlohmann::json& j) {
  ModelSwitches s;
  try {
    s.moe = j.at("moe").get<std::array<bool, 3>>();
    s.use_modality = j.at("use_modality").get<std::array<bool, 3>>();
    s.use_mix = j.at("use_mix").get<bool>();
    s.use_id = j.at("use_id").get<bool>();
    s.pretrain = j.at("pretrain").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad switches in config echo: ") + e.what());
  }
  return s;
}

inline nlohmann::json parse_echo(const Checkpoint& ckpt, const std::string& expected_kind) {
  nlohmann::json echo;
  try {
    echo = nlohmann::json::parse(ckpt.config_echo);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config echo is not JSON: ") + e.what());
  }
  if (!echo.is_object() || echo.value("kind", "") != expected_kind) {
    throw FormatError("checkpoint is not a " + expected_kind + " model");
  }
  return echo;
}

/// `extra` keys are merged into the echo (e.g. the experiment config).
template <class T>
Checkpoint to_checkpoint(PretrainedModel<T>& model, const std::string& rng_text,
                         const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json echo = model_echo(model.config, model.switches, "pretrained");
  echo["rng_state"] = rng_text;
  for (auto it = extra.begin(); it != extra.end(); ++it) echo[it.key()] = it.value();
  return collect_checkpoint<T>(model, echo.dump());
}

template <class T>
PretrainedModel<T> pretrained_from_checkpoint(const Checkpoint& ckpt) {
  const nlohmann::json echo = parse_echo(ckpt, "pretrained");
  TrainingConfig cfg;
  from_json(echo.at("training"), cfg);
  auto model = PretrainedModel<T>::build(cfg, switches_from_json(echo.at("switches")));
  restore_checkpoint<T>(model, ckpt);
  return model;
}

// ---------------------------------------------------------------------------
// Instances and batches
// ---------------------------------------------------------------------------

/// A source-domain sequence as feature-table rows; every position j >= 1
/// is one (prefix, next item) instance.
struct PretrainSequence {
  std::vector<std::size_t> rows;
  bool mixed = false;
};

/// Mixed flows over `sources` and single-domain sequences of every source,
/// each truncated to its most recent n_max + 1 items; sequences shorter
/// than 2 carry no instance and are skipped.
template <class T>
std::vector<PretrainSequence> build_pretrain_sequences(const Dataset& data, const FeatureTable<T>& table,
                                                       const std::vector<std::string>& sources,
                                                       std::size_t n_max) {
  const std::set<std::string> source_set(sources.begin(), sources.end());
  std::vector<PretrainSequence> out;
  for (const auto& [user, flow] : build_all_mixed_flows(data.interactions, source_set)) {
    if (flow.items.size() < 2) continue;
    PretrainSequence s{{}, true};
    for (const auto& it : truncate_left(flow.items, n_max + 1)) s.rows.push_back(table.row(it.item_id));
    out.push_back(std::move(s));
  }
  for (const auto& domain : source_set) {
    for (const auto& seq : build_domain_sequences(data.interactions, domain)) {
      if (seq.items.size() < 2) continue;
      PretrainSequence s{{}, false};
      for (const auto& it : truncate_left(seq.items, n_max + 1)) s.rows.push_back(table.row(it.item_id));
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Sequences of one step plus the dropped-item view of each context; an
/// empty view means the context was too short to augment.
struct PretrainBatch {
  std::vector<PretrainSequence> sequences;
  std::vector<std::vector<std::size_t>> augmented;
};

template <class Rng>
PretrainBatch make_pretrain_batch(const std::vector<PretrainSequence>& all, std::span<const std::size_t> pick,
                                  const TrainingConfig& cfg, Rng& rng) {
  PretrainBatch b;
  for (std::size_t i : pick) {
    const auto& s = all.at(i);
    b.sequences.push_back(s);
    std::vector<std::size_t> aug;
    const std::span<const std::size_t> context(s.rows.data(), s.rows.size() - 1);
    if (cfg.lambda > 0.0 && context.size() >= 2) aug = augment_drop(context, cfg.drop_ratio, rng);
    b.augmented.push_back(std::move(aug));
  }
  return b;
}

template <class T>
struct PretrainLoss {
  Var<T> total;
  Var<T> csi;
  std::optional<Var<T>> css;
  std::size_t instances = 0;
  std::size_t css_pairs = 0;
};

/// L_CSI over every prefix instance of the batch plus λ · L_CSS over each
/// context and its augmented view. Causal attention lets one encoder pass
/// per sequence produce the representation of every prefix.
template <class T, class Rng = std::mt19937_64>
PretrainLoss<T> pretrain_loss(Tape<T>& tape, PretrainedModel<T>& model, const FeatureTable<T>& table,
                              const PretrainBatch& batch, Rng* dropout_rng = nullptr) {
  const TrainingConfig& cfg = model.config;
  if (batch.sequences.empty()) throw ShapeError("pretrain_loss: empty batch");

  std::vector<std::size_t> uniq;
  for (const auto& s : batch.sequences) uniq.insert(uniq.end(), s.rows.begin(), s.rows.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < uniq.size(); ++i) local.emplace(uniq[i], i);
  auto to_local = [&](std::span<const std::size_t> rows) {
    std::vector<std::size_t> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(local.at(r));
    return out;
  };

  Var<T> projected = project_rows(tape, table, model.projectors, uniq, model.switches.use_modality);

  std::vector<Var<T>> user_parts, orig_parts, aug_parts;
  std::vector<std::size_t> positives;
  const double dropout = dropout_rng != nullptr ? cfg.dropout : 0.0;
  const bool split_groups = model.single_encoder.has_value();
  for (int group = 0; group < (split_groups ? 2 : 1); ++group) {
    const bool mixed_group = group == 0;
    BatchInputs<T> inputs;
    std::vector<std::size_t> instance_rows, css_rows, aug_rows;
    std::vector<std::vector<std::size_t>> aug_locals;
    for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
      const auto& seq = batch.sequences[s];
      if (split_groups && seq.mixed != mixed_group) continue;
      if (seq.rows.size() < 2) throw TooShortError("pretrain sequence shorter than 2");
      const auto rows = to_local(seq.rows);
      const std::size_t off = inputs.layout.total_rows();
      const std::size_t ctx = rows.size() - 1;
      inputs.add_sequence(std::span<const std::size_t>(rows.data(), ctx));
      for (std::size_t j = 0; j < ctx; ++j) {
        instance_rows.push_back(off + j);
        positives.push_back(rows[j + 1]);
      }
      if (!batch.augmented[s].empty()) {
        css_rows.push_back(off + ctx - 1);
        aug_locals.push_back(to_local(batch.augmented[s]));
      }
    }
    for (const auto& aug : aug_locals) {
      const std::size_t off = inputs.layout.total_rows();
      inputs.add_sequence(aug);
      aug_rows.push_back(off + aug.size() - 1);
    }
    if (instance_rows.empty()) continue;
    Encoder<T>& enc = model.encoder_for(mixed_group);
    auto x = inputs.build(projected, enc.positions);
    auto h = encode(x, enc.stack, inputs.layout, dropout, dropout_rng);
    user_parts.push_back(ad::gather_rows(h, std::move(instance_rows)));
    if (!css_rows.empty()) {
      orig_parts.push_back(ad::gather_rows(h, std::move(css_rows)));
      aug_parts.push_back(ad::gather_rows(h, std::move(aug_rows)));
    }
  }

  PretrainLoss<T> out;
  out.instances = positives.size();
  auto users = user_parts.size() == 1 ? user_parts[0] : ad::concat_rows(user_parts);
  auto items = ad::gather_rows(projected, std::move(positives));
  out.csi = ad::loss_csi(users, items, cfg.tau);
  out.total = out.csi;
  if (cfg.lambda > 0.0 && !orig_parts.empty()) {
    auto orig = orig_parts.size() == 1 ? orig_parts[0] : ad::concat_rows(orig_parts);
    auto aug = aug_parts.size() == 1 ? aug_parts[0] : ad::concat_rows(aug_parts);
    out.css = ad::loss_css(orig, aug, cfg.tau, cfg.css_form);
    out.css_pairs = static_cast<std::size_t>(orig.rows());
    out.total = ad::add(out.csi, ad::scale(*out.css, static_cast<T>(cfg.lambda)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <class T>
std::vector<Tensor<T>*> trainable_tensors(auto& model) {
  std::vector<Tensor<T>*> out;
  model.for_each([&](Tensor<T>& t) {
    if (t.requires_grad) out.push_back(&t);
  });
  return out;
}

template <class T>
struct PretrainResult {
  PretrainedModel<T> model;
  std::vector<double> epoch_losses;  // mean total loss per instance
  std::string rng_state;
};

/// Adam on pretrain_loss over shuffled source sequences. A pure function of
/// (data, sources, cfg, switches): one mt19937_64 seeded with cfg.seed
/// drives initialization, shuffling, augmentation and dropout in that order.
template <class T>
PretrainResult<T> pretrain(const Dataset& data, const std::vector<std::string>& sources,
                           const TrainingConfig& cfg, const ModelSwitches& switches,
                           const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate();
  if (sources.empty()) throw ConfigError("pretrain: no source domains");
  for (const auto& s : sources) {
    if (data.content.count(s) == 0) throw ConfigError("pretrain: source domain '" + s + "' has no embeddings");
  }
  const auto table = FeatureTable<T>::build(data);
  for (Modality m : kModalities) {
    if (static_cast<std::size_t>(table.features[static_cast<std::size_t>(m)].cols()) != cfg.input_dim(m)) {
      throw ConfigError(std::string("pretrain: ") + std::string(modality_name(m)) +
                        " width differs from the configured input dim");
    }
  }
  const auto sequences = build_pretrain_sequences(data, table, sources, cfg.n_max);
  if (sequences.empty()) throw ConfigError("pretrain: no source sequence has 2 or more items");

  std::mt19937_64 rng(cfg.seed);
  PretrainResult<T> result{PretrainedModel<T>::build(cfg, switches), {}, {}};
  PretrainedModel<T>& model = result.model;
  model.init(rng);
  auto params = trainable_tensors<T>(model);
  AdamState<T> adam(cfg.lr);

  std::vector<std::size_t> order(sequences.size());
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t instances = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto batch = make_pretrain_batch(sequences, std::span<const std::size_t>(order.data() + start, n), cfg, rng);
      for (Tensor<T>* p : params) p->zero_grad();
      Tape<T> tape;
      auto loss = pretrain_loss(tape, model, table, batch, &rng);
      tape.backward(loss.total);
      adam_step(params, adam);
      total += static_cast<double>(loss.total.value()(0, 0));
      instances += loss.instances;
    }
    result.epoch_losses.push_back(total / static_cast<double>(instances));
    if (on_epoch) on_epoch(epoch + 1, result.epoch_losses.back());
  }
  result.rng_state = rng_state(rng);
  return result;
}

}  // namespace mmrec
