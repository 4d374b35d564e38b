#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "mmrec/encoder.hpp"
#include "mmrec/error.hpp"

namespace mmrec {

/// Denominator of the sequence-sequence loss: `literal` contrasts each
/// original view against the other originals; `infonce` contrasts it
/// against the augmented views.
enum class CssForm { literal, infonce };

/// Every model and optimization hyperparameter. Paper-scale runs used a
/// batch of 2048 and d in {64, 128}; the defaults here are desk scale.
struct TrainingConfig {
  // model
  std::size_t d = 16;
  std::size_t experts = 8;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_dim = 0;  // 0 -> 4 * 3d
  std::size_t n_max = 50;
  double dropout = 0.2;
  double init_std = 0.02;
  std::size_t dim_text = 768;
  std::size_t dim_image = 2048;
  std::size_t dim_cross = 768;
  bool separate_single_stack = false;
  // objectives
  double tau = 0.07;
  double lambda = 1e-3;
  double drop_ratio = 0.2;
  CssForm css_form = CssForm::literal;
  // optimization
  double lr = 1e-3;
  double finetune_lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t finetune_batch_size = 64;
  std::size_t pretrain_epochs = 30;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 7;

  std::size_t model_dim() const { return 3 * d; }

  std::size_t input_dim(Modality m) const {
    return m == Modality::text ? dim_text : m == Modality::image ? dim_image : dim_cross;
  }

  EncoderShape encoder_shape() const {
    EncoderShape s;
    s.model_dim = model_dim();
    s.layers = layers;
    s.heads = heads;
    s.ffn_dim = ffn_dim == 0 ? 4 * model_dim() : ffn_dim;
    s.n_max = n_max;
    return s;
  }

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(drop_ratio >= 0.0 && drop_ratio < 1.0)) throw ConfigError("drop_ratio must lie in [0,1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (d == 0 || experts == 0) throw ConfigError("d and experts must be positive");
    if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("learning rates must be > 0");
    if (batch_size == 0 || finetune_batch_size == 0) throw ConfigError("batch sizes must be positive");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (dim_text == 0 || dim_image == 0 || dim_cross == 0) throw ConfigError("input dims must be positive");
    encoder_shape().validate();
  }
};

/// Structural toggles used by the ablation variants.
struct ModelSwitches {
  std::array<bool, 3> moe{true, true, true};           // false -> plain linear projector
  std::array<bool, 3> use_modality{true, true, true};  // false -> modality treated as missing
  bool use_mix = true;
  bool use_id = true;
  bool pretrain = true;

  bool operator==(const ModelSwitches&) const = default;
};

enum class AblationVariant { full, wo_cp, wo_tp, wo_vp, wo_vt, wo_cvt, wo_mix, wo_id, wo_cl };

inline constexpr std::array<AblationVariant, 9> kAblationVariants = {
    AblationVariant::full,  AblationVariant::wo_cp,  AblationVariant::wo_tp,
    AblationVariant::wo_vp, AblationVariant::wo_vt,  AblationVariant::wo_cvt,
    AblationVariant::wo_mix, AblationVariant::wo_id, AblationVariant::wo_cl};

inline std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::full:
      return "full";
    case AblationVariant::wo_cp:
      return "w/o CP";
    case AblationVariant::wo_tp:
      return "w/o TP";
    case AblationVariant::wo_vp:
      return "w/o VP";
    case AblationVariant::wo_vt:
      return "w/o VT";
    case AblationVariant::wo_cvt:
      return "w/o CVT";
    case AblationVariant::wo_mix:
      return "w/o MIX";
    case AblationVariant::wo_id:
      return "w/o ID";
    case AblationVariant::wo_cl:
      return "w/o CL";
  }
  return "?";
}

/// Accepts "w/o CP", "wo_cp" and "wo-cp" spellings.
inline AblationVariant parse_variant(const std::string& name) {
  std::string key;
  for (char c : name) {
    if (c == '/' || c == ' ' || c == '_' || c == '-') continue;
    key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  for (AblationVariant v : kAblationVariants) {
    std::string vk;
    for (char c : variant_name(v)) {
      if (c == '/' || c == ' ') continue;
      vk += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (vk == key) return v;
  }
  throw ConfigError("unknown ablation variant '" + name + "'");
}

inline ModelSwitches switches_for(AblationVariant v) {
  ModelSwitches s;
  constexpr auto text = static_cast<std::size_t>(Modality::text);
  constexpr auto image = static_cast<std::size_t>(Modality::image);
  constexpr auto cross = static_cast<std::size_t>(Modality::cross);
  switch (v) {
    case AblationVariant::full:
      break;
    case AblationVariant::wo_cp:
      s.moe[cross] = false;
      break;
    case AblationVariant::wo_tp:
      s.moe[text] = false;
      break;
    case AblationVariant::wo_vp:
      s.moe[image] = false;
      break;
    case AblationVariant::wo_vt:
      s.moe[text] = s.moe[image] = false;
      break;
    case AblationVariant::wo_cvt:
      s.moe = {false, false, false};
      break;
    case AblationVariant::wo_mix:
      s.use_mix = false;
      break;
    case AblationVariant::wo_id:
      s.use_id = false;
      break;
    case AblationVariant::wo_cl:
      s.pretrain = false;
      break;
  }
  return s;
}

/// Text modality only: image and cross-modal inputs are dropped entirely.
inline ModelSwitches text_only_switches() {
  ModelSwitches s;
  s.use_modality = {true, false, false};
  return s;
}

// ---------------------------------------------------------------------------
// JSON binding
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainingConfig& c) {
  return nlohmann::json{{"d", c.d},
                        {"experts", c.experts},
                        {"layers", c.layers},
                        {"heads", c.heads},
                        {"ffn_dim", c.ffn_dim},
                        {"n_max", c.n_max},
                        {"dropout", c.dropout},
                        {"init_std", c.init_std},
                        {"dim_text", c.dim_text},
                        {"dim_image", c.dim_image},
                        {"dim_cross", c.dim_cross},
                        {"separate_single_stack", c.separate_single_stack},
                        {"tau", c.tau},
                        {"lambda", c.lambda},
                        {"drop_ratio", c.drop_ratio},
                        {"css_form", c.css_form == CssForm::literal ? "literal" : "infonce"},
                        {"lr", c.lr},
                        {"finetune_lr", c.finetune_lr},
                        {"batch_size", c.batch_size},
                        {"finetune_batch_size", c.finetune_batch_size},
                        {"pretrain_epochs", c.pretrain_epochs},
                        {"max_epochs", c.max_epochs},
                        {"patience", c.patience},
                        {"seed", c.seed}};
}

namespace detail {
template <class V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}
}  // namespace detail

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  const nlohmann::json known = to_json(TrainingConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown training config key '" + it.key() + "'");
  }
  using detail::read_field;
  read_field(j, "d", c.d);
  read_field(j, "experts", c.experts);
  read_field(j, "layers", c.layers);
  read_field(j, "heads", c.heads);
  read_field(j, "ffn_dim", c.ffn_dim);
  read_field(j, "n_max", c.n_max);
  read_field(j, "dropout", c.dropout);
  read_field(j, "init_std", c.init_std);
  read_field(j, "dim_text", c.dim_text);
  read_field(j, "dim_image", c.dim_image);
  read_field(j, "dim_cross", c.dim_cross);
  read_field(j, "separate_single_stack", c.separate_single_stack);
  read_field(j, "tau", c.tau);
  read_field(j, "lambda", c.lambda);
  read_field(j, "drop_ratio", c.drop_ratio);
  if (j.contains("css_form")) {
    std::string form;
    read_field(j, "css_form", form);
    if (form == "literal") {
      c.css_form = CssForm::literal;
    } else if (form == "infonce") {
      c.css_form = CssForm::infonce;
    } else {
      throw ConfigError("css_form must be 'literal' or 'infonce'");
    }
  }
  read_field(j, "lr", c.lr);
  read_field(j, "finetune_lr", c.finetune_lr);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "finetune_batch_size", c.finetune_batch_size);
  read_field(j, "pretrain_epochs", c.pretrain_epochs);
  read_field(j, "max_epochs", c.max_epochs);
  read_field(j, "patience", c.patience);
  read_field(j, "seed", c.seed);
}

inline nlohmann::json to_json(const ModelSwitches& s) {
  return nlohmann::json{{"moe", s.moe},
                        {"use_modality", s.use_modality},
                        {"use_mix", s.use_mix},
                        {"use_id", s.use_id},
                        {"pretrain", s.pretrain}};
}

}  // namespace mmrec
