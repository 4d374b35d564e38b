#pragma once

#include <array>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/numerics/tape.hpp"

namespace mmrec {

/// Parametric whitening (e - b) · W mapping a d_m feature into R^d.
template <class T>
struct WhiteningExpert {
  Tensor<T> w;  // d_m x d
  Tensor<T> b;  // 1 x d_m

  WhiteningExpert() = default;
  WhiteningExpert(const std::string& prefix, Eigen::Index input_dim, Eigen::Index output_dim)
      : w(prefix + ".w", input_dim, output_dim), b(prefix + ".b", 1, input_dim) {}
};

template <class T>
Matrix<T> whiten(const Matrix<T>& e, const WhiteningExpert<T>& expert) {
  if (e.rows() != 1 || e.cols() != expert.w.rows()) {
    throw ShapeError("whiten: feature has " + std::to_string(e.cols()) + " entries, expert expects " +
                     std::to_string(expert.w.rows()));
  }
  return (e - expert.b.data) * expert.w.data;
}

/// G whitening experts mixed by a softmax router that reads the raw feature.
///
/// A `plain_linear` projector is the degenerate single map e · W: one expert,
/// no centering vector, no router. It stands in for the MoE in ablations.
template <class T>
class MoEProjector {
 public:
  MoEProjector() = default;

  MoEProjector(const std::string& prefix, Modality modality, Eigen::Index input_dim,
               Eigen::Index output_dim, std::size_t experts, bool plain_linear = false)
      : modality_(modality), plain_(plain_linear) {
    if (experts == 0) throw ConfigError("MoE projector needs at least one expert");
    if (input_dim <= 0 || output_dim <= 0) throw ConfigError("MoE projector dims must be positive");
    const std::size_t g = plain_linear ? 1 : experts;
    for (std::size_t k = 0; k < g; ++k) {
      experts_.emplace_back(prefix + ".expert" + std::to_string(k), input_dim, output_dim);
    }
    router_w_ = Tensor<T>(prefix + ".router.w", input_dim, static_cast<Eigen::Index>(g));
    router_b_ = Tensor<T>(prefix + ".router.b", 1, static_cast<Eigen::Index>(g));
  }

  Modality modality() const noexcept { return modality_; }
  bool plain_linear() const noexcept { return plain_; }
  std::size_t expert_count() const noexcept { return experts_.size(); }
  Eigen::Index input_dim() const { return experts_.front().w.rows(); }
  Eigen::Index output_dim() const { return experts_.front().w.cols(); }

  WhiteningExpert<T>& expert(std::size_t k) { return experts_.at(k); }
  const WhiteningExpert<T>& expert(std::size_t k) const { return experts_.at(k); }
  Tensor<T>& router_w() { return router_w_; }
  Tensor<T>& router_b() { return router_b_; }
  const Tensor<T>& router_w() const { return router_w_; }
  const Tensor<T>& router_b() const { return router_b_; }

  /// Visits the parameters that exist for this construction.
  template <class F>
  void for_each(F&& f) {
    for (auto& e : experts_) {
      f(e.w);
      if (!plain_) f(e.b);
    }
    if (!plain_) {
      f(router_w_);
      f(router_b_);
    }
  }

  template <class Rng>
  void init(Rng& rng, double stddev) {
    for (auto& e : experts_) init_normal(e.w, stddev, rng);
    if (!plain_) init_normal(router_w_, stddev, rng);
  }

 private:
  Modality modality_ = Modality::text;
  bool plain_ = false;
  std::vector<WhiteningExpert<T>> experts_;
  Tensor<T> router_w_;
  Tensor<T> router_b_;
};

/// Softmax(e · W_r + b_r) over the experts; all mass on the single expert
/// for a plain linear projector.
template <class T>
Matrix<T> route(const Matrix<T>& e, const MoEProjector<T>& proj) {
  if (e.rows() != 1 || e.cols() != proj.input_dim()) throw ShapeError("route: feature dim mismatch");
  if (proj.plain_linear()) return Matrix<T>::Ones(1, 1);
  Matrix<T> logits = e * proj.router_w().data + proj.router_b().data;
  return softmax<T>(logits, 1);
}

template <class T>
Matrix<T> moe_project(const Matrix<T>& e, const MoEProjector<T>& proj) {
  const Matrix<T> g = route(e, proj);
  Matrix<T> out = Matrix<T>::Zero(1, proj.output_dim());
  for (std::size_t k = 0; k < proj.expert_count(); ++k) {
    out += g(0, static_cast<Eigen::Index>(k)) * whiten(e, proj.expert(k));
  }
  return out;
}

namespace ad {

/// Batched MoE projection of an N x d_m feature matrix. Rows whose
/// `present` entry is 0 come out as zero and pass no gradient.
template <class T>
Var<T> moe_project(Var<T> features, MoEProjector<T>& proj, const Matrix<T>& present) {
  Tape<T>& t = *features.tape;
  if (features.cols() != proj.input_dim()) {
    throw ShapeError("moe_project: feature dim " + std::to_string(features.cols()) +
                     " != projector input dim " + std::to_string(proj.input_dim()));
  }
  Var<T> out{};
  if (proj.plain_linear()) {
    out = matmul(features, t.parameter(proj.expert(0).w));
  } else {
    auto routes = softmax_rows(
        add_row(matmul(features, t.parameter(proj.router_w())), t.parameter(proj.router_b())));
    for (std::size_t k = 0; k < proj.expert_count(); ++k) {
      auto& ex = proj.expert(k);
      auto whitened = matmul(sub_row(features, t.parameter(ex.b)), t.parameter(ex.w));
      auto weighted = mul_col(whitened, slice_cols(routes, static_cast<Eigen::Index>(k), 1));
      out = k == 0 ? weighted : add(out, weighted);
    }
  }
  return mul_col(out, t.constant(present));
}

}  // namespace ad

/// The three per-modality projectors, with separate parameters.
template <class T>
struct ProjectorBank {
  std::array<MoEProjector<T>, 3> projectors;

  MoEProjector<T>& operator[](Modality m) { return projectors[static_cast<std::size_t>(m)]; }
  const MoEProjector<T>& operator[](Modality m) const {
    return projectors[static_cast<std::size_t>(m)];
  }

  template <class F>
  void for_each(F&& f) {
    for (auto& p : projectors) p.for_each(f);
  }
};

template <class T>
struct ProjectedItem {
  std::array<Matrix<T>, 3> vectors;  // each 1 x d
  std::array<bool, 3> missing{};
};

/// Projects every modality of one item; a missing modality yields the zero
/// vector with its flag set.
template <class T>
ProjectedItem<T> project_item(const std::string& item_id, const ContentStores& stores,
                              const ProjectorBank<T>& bank) {
  ProjectedItem<T> out;
  for (Modality m : kModalities) {
    const auto mi = static_cast<std::size_t>(m);
    const auto& proj = bank[m];
    if (static_cast<Eigen::Index>(stores[m].dim()) != proj.input_dim()) {
      throw ConfigError(std::string(modality_name(m)) + " store dim " +
                        std::to_string(stores[m].dim()) + " != projector input dim " +
                        std::to_string(proj.input_dim()));
    }
    const auto* feat = stores[m].find(item_id);
    if (feat == nullptr) {
      out.vectors[mi] = Matrix<T>::Zero(1, proj.output_dim());
      out.missing[mi] = true;
      continue;
    }
    Matrix<T> e(1, static_cast<Eigen::Index>(feat->size()));
    for (std::size_t i = 0; i < feat->size(); ++i) e(0, static_cast<Eigen::Index>(i)) = static_cast<T>((*feat)[i]);
    out.vectors[mi] = moe_project(e, proj);
  }
  return out;
}

/// Dense feature matrices for a fixed, sorted item universe; row i holds
/// item_ids[i]. Missing entries are zero rows with present = 0.
template <class T>
struct FeatureTable {
  std::vector<std::string> item_ids;
  std::vector<std::string> item_domains;
  std::map<std::string, std::size_t> index;
  std::array<Matrix<T>, 3> features;
  std::array<Matrix<T>, 3> present;  // N x 1 of {0, 1}

  std::size_t size() const { return item_ids.size(); }

  std::size_t row(const std::string& item_id) const {
    auto it = index.find(item_id);
    if (it == index.end()) throw NotFoundError("unknown item '" + item_id + "'");
    return it->second;
  }

  /// Items of `domain`, in table order.
  std::vector<std::size_t> rows_of_domain(const std::string& domain) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < item_ids.size(); ++i)
      if (item_domains[i] == domain) out.push_back(i);
    return out;
  }

  /// Universe = every item referenced by interactions or content stores.
  static FeatureTable build(const Dataset& data) {
    std::map<std::string, std::string> domain_of;
    for (const auto& [domain, stores] : data.content)
      for (Modality m : kModalities)
        for (const auto& [id, v] : stores[m].vectors()) domain_of.emplace(id, domain);
    for (const auto& r : data.interactions) {
      auto [it, inserted] = domain_of.emplace(r.item_id, r.domain_id);
      if (!inserted && it->second != r.domain_id) {
        throw FormatError("item '" + r.item_id + "' appears in domains '" + it->second +
                          "' and '" + r.domain_id + "'");
      }
    }
    FeatureTable table;
    for (const auto& [id, domain] : domain_of) {
      table.index.emplace(id, table.item_ids.size());
      table.item_ids.push_back(id);
      table.item_domains.push_back(domain);
    }
    const auto n = static_cast<Eigen::Index>(table.item_ids.size());
    for (Modality m : kModalities) {
      const auto mi = static_cast<std::size_t>(m);
      std::size_t dim = 0;
      for (const auto& [domain, stores] : data.content) {
        if (dim == 0) dim = stores[m].dim();
        if (stores[m].dim() != dim) {
          throw ConfigError(std::string(modality_name(m)) + " dims differ across domains");
        }
      }
      if (dim == 0) throw ConfigError("dataset has no content stores");
      table.features[mi] = Matrix<T>::Zero(n, static_cast<Eigen::Index>(dim));
      table.present[mi] = Matrix<T>::Zero(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& id = table.item_ids[static_cast<std::size_t>(i)];
        auto c = data.content.find(table.item_domains[static_cast<std::size_t>(i)]);
        if (c == data.content.end()) continue;
        const auto* v = c->second[m].find(id);
        if (v == nullptr) continue;
        for (std::size_t j = 0; j < v->size(); ++j)
          table.features[mi](i, static_cast<Eigen::Index>(j)) = static_cast<T>((*v)[j]);
        table.present[mi](i, 0) = T(1);
      }
    }
    return table;
  }
};

/// N x 3d matrix [ê_t ; ê_p ; ê_c] for every item of the table. Modalities
/// switched off in `use` are treated as missing for all items.
template <class T>
Var<T> project_all(Tape<T>& tape, const FeatureTable<T>& table, ProjectorBank<T>& bank,
                   std::array<bool, 3> use = {true, true, true}) {
  std::vector<Var<T>> parts;
  for (Modality m : kModalities) {
    const auto mi = static_cast<std::size_t>(m);
    Matrix<T> present = table.present[mi];
    if (!use[mi]) present.setZero();
    parts.push_back(ad::moe_project(tape.constant(table.features[mi]), bank[m], present));
  }
  return ad::concat_cols(std::move(parts));
}

/// Projection of the listed table rows only, in the given order; returns
/// rows.size() x 3d.
template <class T>
Var<T> project_rows(Tape<T>& tape, const FeatureTable<T>& table, ProjectorBank<T>& bank,
                    const std::vector<std::size_t>& rows, std::array<bool, 3> use = {true, true, true}) {
  std::vector<Var<T>> parts;
  const auto n = static_cast<Eigen::Index>(rows.size());
  for (Modality m : kModalities) {
    const auto mi = static_cast<std::size_t>(m);
    Matrix<T> feats(n, table.features[mi].cols());
    Matrix<T> present = Matrix<T>::Zero(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
      if (r >= table.features[mi].rows()) throw IndexError("project_rows: row out of range");
      feats.row(i) = table.features[mi].row(r);
      if (use[mi]) present(i, 0) = table.present[mi](r, 0);
    }
    parts.push_back(ad::moe_project(tape.constant(std::move(feats)), bank[m], present));
  }
  return ad::concat_cols(std::move(parts));
}

}  // namespace mmrec
