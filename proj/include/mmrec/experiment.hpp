#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/error.hpp"
#include "mmrec/evaluation/analysis.hpp"
#include "mmrec/evaluation/metrics.hpp"
#include "mmrec/synth.hpp"
#include "mmrec/training/checkpoint.hpp"
#include "mmrec/training/config.hpp"
#include "mmrec/training/finetune.hpp"
#include "mmrec/training/pretrain.hpp"

namespace mmrec {

/// Everything one pipeline run needs. `seed` overrides the training and
/// synthetic-data seeds so one number fixes the whole run.
struct ExperimentConfig {
  std::string data_dir = "data";
  std::string output_dir = "out";
  std::vector<std::string> source_domains = {"d0", "d1", "d2"};
  std::string target_domain = "d3";
  TrainingConfig training;
  SynthConfig synth;
  std::vector<std::size_t> eval_ks = kDefaultKs;
  std::string variant = "full";
  std::vector<std::string> variants;  // empty -> all nine
  std::vector<double> robustness_ratios = {0.1, 0.3, 0.5, 1.0};
  std::vector<double> popularity_bounds = {0.0, 5.0, 20.0, 50.0};
  std::uint64_t seed = 7;

  /// Source domains plus the target: the domains whose files are loaded and
  /// whose items form the fine-tuning mixed flows.
  std::set<std::string> all_domains() const {
    std::set<std::string> d(source_domains.begin(), source_domains.end());
    d.insert(target_domain);
    return d;
  }

  std::vector<std::string> flow_domains() const {
    std::vector<std::string> out;
    for (const auto& d : all_domains())
      if (d != target_domain) out.push_back(d);
    return out;
  }

  std::string path(const std::string& file) const { return output_dir + "/" + file; }
  std::string pretrained_path() const { return path("pretrained.um2r"); }
  std::string finetuned_path() const { return path("finetuned.um2r"); }

  void validate() const {
    if (source_domains.empty()) throw ConfigError("source_domains must not be empty");
    if (target_domain.empty()) throw ConfigError("target_domain must be set");
    for (const auto& s : source_domains) {
      if (s == target_domain) throw ConfigError("target domain '" + s + "' is also a source domain");
    }
    if (eval_ks.empty()) throw ConfigError("eval_ks must not be empty");
    for (std::size_t k : eval_ks) {
      if (k == 0) throw ConfigError("eval_ks entries must be >= 1");
    }
    for (double r : robustness_ratios) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("robustness ratios must lie in [0,1]");
    }
    (void)parse_variant(variant);
    for (const auto& v : variants) (void)parse_variant(v);
    training.validate();
    synth.validate();
  }
};

inline nlohmann::json to_json(const SynthConfig& s) {
  return nlohmann::json{{"n_users", s.n_users},
                        {"n_items_per_domain", s.n_items_per_domain},
                        {"n_domains", s.n_domains},
                        {"latent_dim", s.latent_dim},
                        {"interactions_per_user", s.interactions_per_user},
                        {"dim_text", s.dim_text},
                        {"dim_image", s.dim_image},
                        {"dim_cross", s.dim_cross},
                        {"noise_text", s.noise_text},
                        {"noise_image", s.noise_image},
                        {"noise_cross", s.noise_cross},
                        {"missing_text", s.missing_text},
                        {"missing_image", s.missing_image},
                        {"missing_cross", s.missing_cross},
                        {"affinity_scale", s.affinity_scale},
                        {"popularity_scale", s.popularity_scale},
                        {"domain_offset_scale", s.domain_offset_scale},
                        {"seed", s.seed}};
}

namespace detail {
inline void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown " + where + " key '" + it.key() + "'");
  }
}
}  // namespace detail

inline void from_json(const nlohmann::json& j, SynthConfig& s) {
  detail::reject_unknown(j, to_json(SynthConfig{}), "synth config");
  using detail::read_field;
  read_field(j, "n_users", s.n_users);
  read_field(j, "n_items_per_domain", s.n_items_per_domain);
  read_field(j, "n_domains", s.n_domains);
  read_field(j, "latent_dim", s.latent_dim);
  read_field(j, "interactions_per_user", s.interactions_per_user);
  read_field(j, "dim_text", s.dim_text);
  read_field(j, "dim_image", s.dim_image);
  read_field(j, "dim_cross", s.dim_cross);
  read_field(j, "noise_text", s.noise_text);
  read_field(j, "noise_image", s.noise_image);
  read_field(j, "noise_cross", s.noise_cross);
  read_field(j, "missing_text", s.missing_text);
  read_field(j, "missing_image", s.missing_image);
  read_field(j, "missing_cross", s.missing_cross);
  read_field(j, "affinity_scale", s.affinity_scale);
  read_field(j, "popularity_scale", s.popularity_scale);
  read_field(j, "domain_offset_scale", s.domain_offset_scale);
  read_field(j, "seed", s.seed);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return nlohmann::json{{"data_dir", c.data_dir},
                        {"output_dir", c.output_dir},
                        {"source_domains", c.source_domains},
                        {"target_domain", c.target_domain},
                        {"training", to_json(c.training)},
                        {"synth", to_json(c.synth)},
                        {"eval_ks", c.eval_ks},
                        {"variant", c.variant},
                        {"variants", c.variants},
                        {"robustness_ratios", c.robustness_ratios},
                        {"popularity_bounds", c.popularity_bounds},
                        {"seed", c.seed}};
}

/// Overlays `j` onto `c`; unknown keys are rejected. The top-level seed is
/// propagated to the training and synth seeds.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  detail::reject_unknown(j, to_json(ExperimentConfig{}), "experiment config");
  using detail::read_field;
  read_field(j, "data_dir", c.data_dir);
  read_field(j, "output_dir", c.output_dir);
  read_field(j, "source_domains", c.source_domains);
  read_field(j, "target_domain", c.target_domain);
  if (j.contains("training")) from_json(j.at("training"), c.training);
  if (j.contains("synth")) from_json(j.at("synth"), c.synth);
  read_field(j, "eval_ks", c.eval_ks);
  read_field(j, "variant", c.variant);
  read_field(j, "variants", c.variants);
  read_field(j, "robustness_ratios", c.robustness_ratios);
  read_field(j, "popularity_bounds", c.popularity_bounds);
  read_field(j, "seed", c.seed);
  c.training.seed = c.seed;
  c.synth.seed = c.seed;
}

/// Applies a `key=value` override. Dotted keys address nested blocks
/// ("training.lr"); the value is parsed as JSON and falls back to a string.
inline void apply_override(nlohmann::json& j, const std::string& key, const std::string& value) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json* node = &j;
  std::string rest = key;
  for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1)) {
    node = &(*node)[rest.substr(0, dot)];
  }
  (*node)[rest] = parsed;
}

inline ExperimentConfig load_experiment_config(const std::string& path,
                                               const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& [k, v] : overrides) apply_override(j, k, v);
  ExperimentConfig c;
  from_json(j, c);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

using Model = float;
using Log = std::function<void(const std::string&)>;

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::string config_echo(const ExperimentConfig& c) { return to_json(c).dump(); }

inline void run_synth(const ExperimentConfig& c) {
  const SynthData sd = synth_generate(c.synth);
  ensure_dir(c.data_dir);
  save_dataset(c.data_dir, sd.dataset);
}

inline Dataset load_experiment_data(const ExperimentConfig& c) {
  for (const auto& d : c.all_domains()) {
    for (Modality m : kModalities) {
      if (!std::filesystem::exists(embedding_path(c.data_dir, d, m))) {
        throw ConfigError("missing embedding file '" + embedding_path(c.data_dir, d, m) + "'");
      }
    }
  }
  if (!std::filesystem::exists(interactions_path(c.data_dir))) {
    throw ConfigError("missing interactions file '" + interactions_path(c.data_dir) + "'");
  }
  return load_dataset(c.data_dir, c.all_domains());
}

/// Training config with the data's modality widths.
inline TrainingConfig resolved_training(const ExperimentConfig& c, const Dataset& data) {
  TrainingConfig t = c.training;
  adopt_input_dims(t, data);
  return t;
}

inline std::string curve_tsv(const std::string& column, const std::vector<double>& values) {
  std::string out = "epoch\t" + column + "\n";
  for (std::size_t i = 0; i < values.size(); ++i) out += std::to_string(i + 1) + "\t" + format_metric(values[i]) + "\n";
  return out;
}

inline std::string metric_tsv(const MetricReport& r, const std::string& echo) {
  std::ostringstream os;
  write_metric_tsv(os, r, echo);
  return os.str();
}

inline PretrainResult<Model> pretrain_variant(const ExperimentConfig& c, const Dataset& data, const ModelSwitches& sw,
                                              const Log& log = {}) {
  return pretrain<Model>(data, c.source_domains, resolved_training(c, data), sw, [&](std::size_t e, double loss) {
    if (log) log("pretrain epoch " + std::to_string(e) + " loss " + format_metric(loss));
  });
}

inline FinetuneResult<Model> finetune_variant(const ExperimentConfig& c, const Dataset& data,
                                              const PretrainedModel<Model>* pre, const ModelSwitches& sw,
                                              const Log& log = {}) {
  return finetune<Model>(pre, data, c.target_domain, c.flow_domains(), resolved_training(c, data), sw,
                         [&](std::size_t e, double ndcg) {
                           if (log) log("finetune epoch " + std::to_string(e) + " valid ndcg@10 " + format_metric(ndcg));
                         });
}

inline MetricReport test_report(const ExperimentConfig& c, const Dataset& data, FinetunedModel<Model>& model) {
  const auto table = FeatureTable<Model>::build(data);
  const auto flows = c.flow_domains();
  const auto td = build_target_data(data, table, c.target_domain, std::set<std::string>(flows.begin(), flows.end()));
  return evaluate_model(model, table, td, SplitMode::test, c.eval_ks);
}

/// Writes pretrained.um2r and pretrain_loss.tsv.
inline void run_pretrain(const ExperimentConfig& c, const Log& log = {}) {
  const Dataset data = load_experiment_data(c);
  const ModelSwitches sw = switches_for(parse_variant(c.variant));
  if (!sw.pretrain) throw ConfigError("variant '" + c.variant + "' has no pre-training stage");
  auto r = pretrain_variant(c, data, sw, log);
  ensure_dir(c.output_dir);
  save_checkpoint(c.pretrained_path(), to_checkpoint(r.model, r.rng_state, {{"experiment", to_json(c)}}));
  write_text(c.path("pretrain_loss.tsv"), curve_tsv("loss", r.epoch_losses));
}

inline PretrainedModel<Model> load_pretrained(const ExperimentConfig& c) {
  if (!std::filesystem::exists(c.pretrained_path())) {
    throw ConfigError("missing checkpoint '" + c.pretrained_path() + "'; run pretrain first");
  }
  return pretrained_from_checkpoint<Model>(load_checkpoint(c.pretrained_path()));
}

/// Writes finetuned.um2r and valid_curve.tsv.
inline void run_finetune(const ExperimentConfig& c, const Log& log = {}) {
  const ModelSwitches sw = switches_for(parse_variant(c.variant));
  std::optional<PretrainedModel<Model>> pre;
  if (sw.pretrain) pre = load_pretrained(c);
  const Dataset data = load_experiment_data(c);
  auto r = finetune_variant(c, data, pre ? &*pre : nullptr, sw, log);
  ensure_dir(c.output_dir);
  save_checkpoint(c.finetuned_path(), to_checkpoint(r.model, {{"experiment", to_json(c)}, {"best_epoch", r.best_epoch}}));
  write_text(c.path("valid_curve.tsv"), curve_tsv("ndcg@10", r.valid_ndcg10));
}

/// Writes metrics.tsv for the test split.
inline MetricReport run_evaluate(const ExperimentConfig& c) {
  if (!std::filesystem::exists(c.finetuned_path())) {
    throw ConfigError("missing checkpoint '" + c.finetuned_path() + "'; run finetune first");
  }
  auto model = finetuned_from_checkpoint<Model>(load_checkpoint(c.finetuned_path()));
  if (model.target_domain != c.target_domain) {
    throw ConfigError("model was fine-tuned on '" + model.target_domain + "', config targets '" + c.target_domain + "'");
  }
  const Dataset data = load_experiment_data(c);
  const MetricReport r = test_report(c, data, model);
  ensure_dir(c.output_dir);
  write_text(c.path("metrics.tsv"), metric_tsv(r, config_echo(c)));
  return r;
}

inline std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d", static_cast<int>(std::lround(r * 100.0)));
  return buf;
}

/// Dataset whose target-domain `modality` store lost a `ratio` share of its
/// entries; the mask seed is derived from the run seed.
inline Dataset mask_target(const Dataset& data, const std::string& target, Modality m, double ratio,
                           std::uint64_t seed) {
  Dataset out = data;
  auto it = out.content.find(target);
  if (it == out.content.end()) throw ConfigError("target domain '" + target + "' has no embeddings");
  it->second = modality_mask(it->second, m, ratio, seed);
  return out;
}

/// One report per (text|image, ratio): the target store loses that share of
/// the modality, then the pre-trained model is fine-tuned and tested on it.
/// Writes robustness_<modality>_<ratio%>.tsv; returns the reports in order.
inline std::vector<std::pair<std::string, MetricReport>> run_robustness(const ExperimentConfig& c, const Log& log = {}) {
  const PretrainedModel<Model> pre = load_pretrained(c);
  const Dataset data = load_experiment_data(c);
  const ModelSwitches sw = pre.switches;
  std::vector<std::pair<std::string, MetricReport>> out;
  ensure_dir(c.output_dir);
  for (Modality m : {Modality::text, Modality::image}) {
    for (double ratio : c.robustness_ratios) {
      const std::string name = "robustness_" + std::string(modality_name(m)) + "_" + ratio_tag(ratio);
      if (log) log(name);
      const Dataset masked = mask_target(data, c.target_domain, m, ratio, c.seed);
      auto r = finetune_variant(c, masked, &pre, sw);
      const MetricReport rep = test_report(c, masked, r.model);
      nlohmann::json echo = to_json(c);
      echo["mask"] = {{"modality", modality_name(m)}, {"ratio", ratio}};
      write_text(c.path(name + ".tsv"), metric_tsv(rep, echo.dump()));
      out.emplace_back(name, rep);
    }
  }
  return out;
}

/// Runs each variant end to end (pre-training is shared by variants with
/// the same projector construction). Writes ablation_<variant>.tsv and a
/// summary ablation.tsv with one row per variant.
inline std::vector<std::pair<AblationVariant, MetricReport>> run_ablation(const ExperimentConfig& c,
                                                                          const Dataset& data,
                                                                          const std::vector<AblationVariant>& variants,
                                                                          const Log& log = {},
                                                                          bool write_files = true) {
  std::map<std::string, PretrainedModel<Model>> pretrained;
  std::vector<std::pair<AblationVariant, MetricReport>> out;
  for (AblationVariant v : variants) {
    const ModelSwitches sw = switches_for(v);
    if (log) log("variant " + variant_name(v));
    const PretrainedModel<Model>* pre = nullptr;
    if (sw.pretrain) {
      const std::string key = nlohmann::json(sw.moe).dump() + nlohmann::json(sw.use_modality).dump();
      auto it = pretrained.find(key);
      if (it == pretrained.end()) it = pretrained.emplace(key, pretrain_variant(c, data, sw, log).model).first;
      pre = &it->second;
    }
    auto r = finetune_variant(c, data, pre, sw, log);
    out.emplace_back(v, test_report(c, data, r.model));
  }
  if (write_files) {
    ensure_dir(c.output_dir);
    std::string summary = "variant";
    for (std::size_t k : c.eval_ks) summary += "\trecall@" + std::to_string(k);
    for (std::size_t k : c.eval_ks) summary += "\tndcg@" + std::to_string(k);
    summary += "\n";
    for (const auto& [v, rep] : out) {
      std::string tag = variant_name(v);
      for (char& ch : tag)
        if (ch == '/' || ch == ' ') ch = '_';
      nlohmann::json echo = to_json(c);
      echo["variant"] = variant_name(v);
      write_text(c.path("ablation_" + tag + ".tsv"), metric_tsv(rep, echo.dump()));
      summary += variant_name(v);
      for (std::size_t k : c.eval_ks) summary += "\t" + format_metric(rep.recall_at(k));
      for (std::size_t k : c.eval_ks) summary += "\t" + format_metric(rep.ndcg_at(k));
      summary += "\n";
    }
    write_text(c.path("ablation.tsv"), summary);
  }
  return out;
}

inline std::vector<AblationVariant> selected_variants(const ExperimentConfig& c) {
  if (c.variants.empty()) return {kAblationVariants.begin(), kAblationVariants.end()};
  std::vector<AblationVariant> out;
  for (const auto& v : c.variants) out.push_back(parse_variant(v));
  return out;
}

}  // namespace mmrec
