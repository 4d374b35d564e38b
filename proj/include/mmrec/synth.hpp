#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/error.hpp"

namespace mmrec {

/// Parameters of the synthetic multi-domain generator.
///
/// Users share a latent preference vector across domains. Each domain maps
/// item latents through its own random rotation before the user affinity is
/// taken, so content features (a per-modality linear map of the raw item
/// latent plus a domain offset and noise) need a domain-specific correction
/// to be comparable across domains.
struct SynthConfig {
  std::size_t n_users = 500;
  std::size_t n_items_per_domain = 300;
  std::size_t n_domains = 4;
  std::size_t latent_dim = 8;
  std::size_t interactions_per_user = 40;
  std::size_t dim_text = 16;
  std::size_t dim_image = 24;
  std::size_t dim_cross = 16;
  double noise_text = 0.5;
  double noise_image = 0.8;
  double noise_cross = 0.3;
  double missing_text = 0.05;
  double missing_image = 0.05;
  double missing_cross = 0.0;
  /// Multiplier on the user-item affinity inside the sampling softmax.
  double affinity_scale = 1.0;
  /// Std-dev of per-item log-popularity offsets.
  double popularity_scale = 0.5;
  /// Std-dev of per-domain feature offsets.
  double domain_offset_scale = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_users == 0 || n_items_per_domain == 0 || n_domains == 0 || latent_dim == 0 ||
        interactions_per_user == 0 || dim_text == 0 || dim_image == 0 || dim_cross == 0) {
      throw ConfigError("synth: all counts and dims must be positive");
    }
    for (double r : {missing_text, missing_image, missing_cross}) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("synth: missing rates must lie in [0,1]");
    }
    for (double s : {noise_text, noise_image, noise_cross, popularity_scale, domain_offset_scale}) {
      if (!(s >= 0.0)) throw ConfigError("synth: noise scales must be >= 0");
    }
  }

  std::size_t dim(Modality m) const {
    switch (m) {
      case Modality::text:
        return dim_text;
      case Modality::image:
        return dim_image;
      case Modality::cross:
        return dim_cross;
    }
    return 0;
  }
  double noise(Modality m) const {
    return m == Modality::text ? noise_text : m == Modality::image ? noise_image : noise_cross;
  }
  double missing(Modality m) const {
    return m == Modality::text ? missing_text : m == Modality::image ? missing_image : missing_cross;
  }
};

inline std::string synth_domain_name(std::size_t d) { return "d" + std::to_string(d); }

inline std::string synth_item_name(std::size_t d, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "d%zu_i%04zu", d, i);
  return buf;
}

inline std::string synth_user_name(std::size_t u) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%05zu", u);
  return buf;
}

struct SynthLatents {
  /// n_users x latent_dim
  std::vector<std::vector<double>> users;
  /// Domain-mapped item latents, keyed by item id; affinity = user . item.
  std::map<std::string, std::vector<double>> items;
  std::map<std::string, double> popularity;

  double affinity(std::size_t user, const std::string& item_id) const {
    const auto& z = users.at(user);
    const auto& y = items.at(item_id);
    double s = 0;
    for (std::size_t k = 0; k < z.size(); ++k) s += z[k] * y[k];
    return s;
  }
};

struct SynthData {
  Dataset dataset;
  SynthLatents latents;
};

namespace detail {

inline std::vector<std::vector<double>> random_orthogonal(std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> q(k, std::vector<double>(k));
  for (auto& row : q)
    for (auto& v : row) v = normal(rng);
  // Gram-Schmidt on rows.
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < k; ++c) dot += q[i][c] * q[j][c];
      for (std::size_t c = 0; c < k; ++c) q[i][c] -= dot * q[j][c];
    }
    double norm = 0;
    for (double v : q[i]) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : q[i]) v /= norm;
  }
  return q;
}

}  // namespace detail

/// Deterministic in `cfg.seed`. Interactions are emitted user by user in
/// time order; feature values are rounded to 32-bit floats so the in-memory
/// dataset equals what a save/load round trip produces.
inline SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = cfg.latent_dim;

  SynthData out;
  auto& latents = out.latents;
  latents.users.assign(cfg.n_users, std::vector<double>(k));
  for (auto& z : latents.users)
    for (auto& v : z) v = normal(rng);

  // Modality maps shared by all domains (one frozen encoder per modality).
  std::array<std::vector<std::vector<double>>, 3> modality_maps;
  for (Modality m : kModalities) {
    auto& map = modality_maps[static_cast<std::size_t>(m)];
    map.assign(cfg.dim(m), std::vector<double>(k));
    const double s = 1.0 / std::sqrt(static_cast<double>(k));
    for (auto& row : map)
      for (auto& v : row) v = s * normal(rng);
  }

  std::vector<std::vector<std::string>> domain_items(cfg.n_domains);
  for (std::size_t d = 0; d < cfg.n_domains; ++d) {
    const auto rotation = detail::random_orthogonal(k, rng);
    ContentStores stores;
    std::array<std::vector<double>, 3> offsets;
    for (Modality m : kModalities) {
      stores[m] = ModalityStore(m, cfg.dim(m));
      auto& off = offsets[static_cast<std::size_t>(m)];
      off.resize(cfg.dim(m));
      for (auto& v : off) v = cfg.domain_offset_scale * normal(rng);
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < cfg.n_items_per_domain; ++i) {
      const std::string id = synth_item_name(d, i);
      domain_items[d].push_back(id);
      std::vector<double> raw(k);
      for (auto& v : raw) v = normal(rng);
      std::vector<double> mapped(k, 0.0);
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c) mapped[r] += rotation[r][c] * raw[c];
      latents.items[id] = mapped;
      latents.popularity[id] = cfg.popularity_scale * normal(rng);
      for (Modality m : kModalities) {
        const auto& map = modality_maps[static_cast<std::size_t>(m)];
        const auto& off = offsets[static_cast<std::size_t>(m)];
        std::vector<double> feat(cfg.dim(m));
        for (std::size_t r = 0; r < feat.size(); ++r) {
          double acc = off[r];
          for (std::size_t c = 0; c < k; ++c) acc += map[r][c] * raw[c];
          feat[r] = detail::round_to_float(acc + cfg.noise(m) * normal(rng));
        }
        const bool drop = unit(rng) < cfg.missing(m);
        if (!drop) stores[m].insert(id, std::move(feat));
      }
    }
    out.dataset.content.emplace(synth_domain_name(d), std::move(stores));
  }

  // Per (user, domain) sampling distributions over that domain's items.
  std::uniform_int_distribution<std::size_t> pick_domain(0, cfg.n_domains - 1);
  std::uniform_int_distribution<std::int64_t> start_time(0, 999);
  std::uniform_int_distribution<std::int64_t> gap(1, 5);
  out.dataset.interactions.reserve(cfg.n_users * cfg.interactions_per_user);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    std::vector<std::discrete_distribution<std::size_t>> choosers;
    choosers.reserve(cfg.n_domains);
    for (std::size_t d = 0; d < cfg.n_domains; ++d) {
      std::vector<double> logits;
      logits.reserve(domain_items[d].size());
      double max_logit = -1e300;
      for (const auto& id : domain_items[d]) {
        double l = cfg.affinity_scale * latents.affinity(u, id) + latents.popularity[id];
        logits.push_back(l);
        max_logit = std::max(max_logit, l);
      }
      for (auto& l : logits) l = std::exp(l - max_logit);
      choosers.emplace_back(logits.begin(), logits.end());
    }
    std::int64_t t = start_time(rng);
    const std::string user = synth_user_name(u);
    for (std::size_t step = 0; step < cfg.interactions_per_user; ++step) {
      const std::size_t d = pick_domain(rng);
      const std::size_t i = choosers[d](rng);
      out.dataset.interactions.push_back({user, domain_items[d][i], synth_domain_name(d), t});
      t += gap(rng);
    }
  }
  return out;
}

}  // namespace mmrec
