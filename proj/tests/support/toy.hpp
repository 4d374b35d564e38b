#pragma once

#include <string>
#include <vector>

#include "mmrec/synth.hpp"
#include "mmrec/training/config.hpp"

namespace mmrec::testing {

/// Three domains (d0, d1 sources; d2 target), six items each, tiny widths.
inline SynthConfig toy_synth(std::uint64_t seed) {
  SynthConfig s;
  s.n_users = 4;
  s.n_items_per_domain = 6;
  s.n_domains = 3;
  s.latent_dim = 3;
  s.interactions_per_user = 12;
  s.dim_text = 5;
  s.dim_image = 6;
  s.dim_cross = 4;
  s.missing_text = 0.2;
  s.missing_image = 0.2;
  s.missing_cross = 0.0;
  s.seed = seed;
  return s;
}

/// d = 4 (model width 12), one layer, two heads, no dropout. A large init
/// keeps every nonlinearity away from its flat regions.
inline TrainingConfig toy_training(const SynthConfig& s) {
  TrainingConfig t;
  t.d = 4;
  t.experts = 2;
  t.layers = 1;
  t.heads = 2;
  t.ffn_dim = 8;
  t.n_max = 8;
  t.dropout = 0.0;
  t.init_std = 0.5;
  t.dim_text = s.dim_text;
  t.dim_image = s.dim_image;
  t.dim_cross = s.dim_cross;
  t.tau = 0.5;
  t.lambda = 0.3;
  t.seed = s.seed;
  return t;
}

inline const std::vector<std::string> kToySources = {"d0", "d1"};
inline const std::string kToyTarget = "d2";

/// A desk-sized benchmark small enough for unit tests: 4 domains of 40
/// items, 60 users, short training.
inline SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig s;
  s.n_users = 60;
  s.n_items_per_domain = 40;
  s.n_domains = 4;
  s.latent_dim = 4;
  s.interactions_per_user = 24;
  s.dim_text = 8;
  s.dim_image = 10;
  s.dim_cross = 8;
  s.seed = seed;
  return s;
}

inline TrainingConfig small_training(const SynthConfig& s) {
  TrainingConfig t;
  t.d = 8;
  t.experts = 2;
  t.layers = 1;
  t.heads = 2;
  t.n_max = 20;
  t.dim_text = s.dim_text;
  t.dim_image = s.dim_image;
  t.dim_cross = s.dim_cross;
  t.batch_size = 32;
  t.finetune_batch_size = 16;
  t.pretrain_epochs = 2;
  t.max_epochs = 3;
  t.patience = 2;
  t.seed = s.seed;
  return t;
}

inline const std::vector<std::string> kSmallSources = {"d0", "d1", "d2"};
inline const std::string kSmallTarget = "d3";

}  // namespace mmrec::testing
