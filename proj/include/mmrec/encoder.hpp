#pragma once

#include <array>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/numerics/attention.hpp"
#include "mmrec/projector.hpp"

namespace mmrec {

struct EncoderShape {
  std::size_t model_dim = 48;  // 3d
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_dim = 192;
  std::size_t n_max = 50;

  void validate() const {
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
      throw ConfigError("encoder: model dim " + std::to_string(model_dim) +
                        " must be a positive multiple of the head count " + std::to_string(heads));
    }
    if (n_max == 0 || ffn_dim == 0) throw ConfigError("encoder: n_max and ffn_dim must be positive");
  }
};

/// Learnable absolute positions, one row per position.
template <class T>
struct PositionTable {
  Tensor<T> table;

  PositionTable() = default;
  PositionTable(const std::string& name, std::size_t n_max, std::size_t dim)
      : table(name, static_cast<Eigen::Index>(n_max), static_cast<Eigen::Index>(dim)) {}

  std::size_t n_max() const { return static_cast<std::size_t>(table.rows()); }
};

template <class T>
struct TransformerStack {
  EncoderShape shape;
  std::vector<AttentionParams<T>> attention;
  std::vector<FfnParams<T>> ffn;

  TransformerStack() = default;
  TransformerStack(const std::string& prefix, const EncoderShape& s) : shape(s) {
    s.validate();
    const auto dim = static_cast<Eigen::Index>(s.model_dim);
    for (std::size_t l = 0; l < s.layers; ++l) {
      const std::string p = prefix + ".layer" + std::to_string(l);
      attention.emplace_back(p + ".attn", dim);
      ffn.emplace_back(p + ".ffn", dim, static_cast<Eigen::Index>(s.ffn_dim));
    }
  }

  template <class F>
  void for_each(F&& f) {
    for (std::size_t l = 0; l < attention.size(); ++l) {
      attention[l].for_each(f);
      ffn[l].for_each(f);
    }
  }

  template <class Rng>
  void init(Rng& rng, double stddev) {
    for (std::size_t l = 0; l < attention.size(); ++l) {
      attention[l].init(rng, stddev);
      ffn[l].init(rng, stddev);
    }
  }
};

/// One encoder instance: a Transformer stack with its position table.
template <class T>
struct Encoder {
  TransformerStack<T> stack;
  PositionTable<T> positions;

  Encoder() = default;
  Encoder(const std::string& prefix, const EncoderShape& s)
      : stack(prefix, s), positions(prefix + ".position", s.n_max, s.model_dim) {}

  template <class F>
  void for_each(F&& f) {
    stack.for_each(f);
    f(positions.table);
  }

  template <class Rng>
  void init(Rng& rng, double stddev) {
    stack.init(rng, stddev);
    init_normal(positions.table, stddev, rng);
  }

  /// Copy with every tensor renamed from `from` prefix to `to` prefix.
  Encoder renamed(const std::string& from, const std::string& to) const {
    Encoder out = *this;
    out.for_each([&](Tensor<T>& t) {
      if (t.name.rfind(from, 0) == 0) t.name = to + t.name.substr(from.size());
    });
    return out;
  }
};

/// Target-domain item ID embeddings, one 3d row per vocabulary item.
template <class T>
struct ItemIdEmbedding {
  Tensor<T> table;
  std::vector<std::string> items;

  ItemIdEmbedding() = default;
  ItemIdEmbedding(const std::string& name, std::vector<std::string> vocab, std::size_t dim)
      : table(name, static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim)),
        items(std::move(vocab)) {}

  std::size_t size() const { return items.size(); }
};

/// f0_j = [ê_t ; ê_p ; ê_c] + p_j (+ e_v when an ID row is given).
template <class T>
Matrix<T> concat_input(const std::array<Matrix<T>, 3>& projections, std::size_t position,
                       const PositionTable<T>& positions,
                       const std::optional<Matrix<T>>& id_embedding = std::nullopt) {
  if (position >= positions.n_max()) {
    throw RangeError("position " + std::to_string(position) + " >= n_max " +
                     std::to_string(positions.n_max()));
  }
  const Eigen::Index d = projections[0].cols();
  for (const auto& p : projections) {
    if (p.rows() != 1 || p.cols() != d) throw ShapeError("concat_input: projection shapes differ");
  }
  if (positions.table.cols() != 3 * d) throw ShapeError("concat_input: position width != 3d");
  Matrix<T> out(1, 3 * d);
  for (std::size_t m = 0; m < 3; ++m) out.middleCols(static_cast<Eigen::Index>(m) * d, d) = projections[m];
  out += positions.table.data.row(static_cast<Eigen::Index>(position));
  if (id_embedding) {
    if (id_embedding->rows() != 1 || id_embedding->cols() != 3 * d) {
      throw ShapeError("concat_input: ID embedding width != 3d");
    }
    out += *id_embedding;
  }
  return out;
}

/// Runs every layer (attention then FFN) over the stacked sequences of
/// `layout`. Each sequence must fit the position table.
template <class T, class Rng = std::mt19937_64>
Var<T> encode(Var<T> inputs, TransformerStack<T>& stack, const SequenceLayout& layout,
              double dropout = 0.0, Rng* rng = nullptr) {
  for (std::size_t len : layout.lengths) {
    if (len > stack.shape.n_max) {
      throw RangeError("sequence of length " + std::to_string(len) + " exceeds n_max " +
                       std::to_string(stack.shape.n_max) + "; truncate_left first");
    }
  }
  if (inputs.cols() != static_cast<Eigen::Index>(stack.shape.model_dim)) {
    throw ShapeError("encode: input width != model dim");
  }
  Var<T> h = inputs;
  for (std::size_t l = 0; l < stack.attention.size(); ++l) {
    h = attention_layer(h, stack.attention[l], layout, stack.shape.heads, true, dropout, rng);
    h = ffn_layer(h, stack.ffn[l], dropout, rng);
  }
  return h;
}

/// Value-only encoding of one sequence (rows = positions), with an optional
/// pad mask (0 = padding). No dropout.
template <class T>
Matrix<T> encode(const Matrix<T>& inputs, TransformerStack<T>& stack,
                 const std::vector<std::uint8_t>& pad_mask = {}) {
  Tape<T> tape(false);
  SequenceLayout layout = SequenceLayout::single(static_cast<std::size_t>(inputs.rows()));
  layout.key_valid = pad_mask;
  return encode<T>(tape.constant(inputs), stack, layout).value();
}

/// Hidden state at the last unpadded position.
template <class T>
Matrix<T> user_context_repr(const Matrix<T>& hidden, std::size_t true_length) {
  if (true_length == 0) throw TooShortError("user_context_repr: empty sequence");
  if (true_length > static_cast<std::size_t>(hidden.rows())) {
    throw RangeError("user_context_repr: true_length exceeds encoded length");
  }
  return hidden.row(static_cast<Eigen::Index>(true_length - 1));
}

/// Builds stacked encoder inputs for sequences given as item-table rows:
/// gathered content + positions (+ ID rows when `id_table` is provided).
template <class T>
struct BatchInputs {
  std::vector<std::size_t> item_rows;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> id_rows;  // parallel to item_rows when IDs are used
  SequenceLayout layout;

  void add_sequence(std::span<const std::size_t> rows, std::span<const std::size_t> ids = {}) {
    layout.append(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      item_rows.push_back(rows[j]);
      positions.push_back(j);
      if (!ids.empty()) id_rows.push_back(ids[j]);
    }
  }

  Var<T> build(Var<T> projected, PositionTable<T>& pos, std::optional<Var<T>> id_table = {}) const {
    Tape<T>& t = *projected.tape;
    auto x = ad::add(ad::gather_rows(projected, item_rows), ad::gather_rows(t.parameter(pos.table), positions));
    if (id_table) {
      if (id_rows.size() != item_rows.size()) throw ShapeError("BatchInputs: ID rows missing");
      x = ad::add(x, ad::gather_rows(*id_table, id_rows));
    }
    return x;
  }
};

}  // namespace mmrec
