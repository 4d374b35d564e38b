#pragma once

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mmrec/error.hpp"

namespace mmrec {

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::string domain_id;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

enum class Modality : std::size_t { text = 0, image = 1, cross = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::text, Modality::image,
                                                        Modality::cross};

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::text:
      return "text";
    case Modality::image:
      return "image";
    case Modality::cross:
      return "cross";
  }
  return "?";
}

inline Modality parse_modality(std::string_view name) {
  for (Modality m : kModalities) {
    if (modality_name(m) == name) return m;
  }
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

/// Per-item feature vectors of one modality. An item without a stored
/// vector is missing for this modality.
class ModalityStore {
 public:
  ModalityStore() = default;
  ModalityStore(Modality modality, std::size_t dim) : modality_(modality), dim_(dim) {
    if (dim == 0) throw FormatError("modality store dim must be positive");
  }

  Modality modality() const noexcept { return modality_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }

  bool present(const std::string& item_id) const { return vectors_.count(item_id) != 0; }

  /// nullptr when the item is missing.
  const std::vector<double>* find(const std::string& item_id) const {
    auto it = vectors_.find(item_id);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  void insert(const std::string& item_id, std::vector<double> values) {
    if (values.size() != dim_) {
      throw FormatError("item '" + item_id + "': vector has " + std::to_string(values.size()) +
                        " entries, expected " + std::to_string(dim_));
    }
    if (!vectors_.emplace(item_id, std::move(values)).second) {
      throw FormatError("duplicate item_id '" + item_id + "'");
    }
  }

  void erase(const std::string& item_id) { vectors_.erase(item_id); }

  const std::map<std::string, std::vector<double>>& vectors() const noexcept { return vectors_; }

  bool operator==(const ModalityStore&) const = default;

 private:
  Modality modality_ = Modality::text;
  std::size_t dim_ = 1;
  std::map<std::string, std::vector<double>> vectors_;
};

/// The three modality stores of one domain, indexed by Modality.
struct ContentStores {
  std::array<ModalityStore, 3> stores;

  ModalityStore& operator[](Modality m) { return stores[static_cast<std::size_t>(m)]; }
  const ModalityStore& operator[](Modality m) const {
    return stores[static_cast<std::size_t>(m)];
  }
  bool operator==(const ContentStores&) const = default;
};

struct TimedItem {
  std::string item_id;
  std::int64_t timestamp = 0;
  bool operator==(const TimedItem&) const = default;
};

struct BehaviorSequence {
  std::string user_id;
  std::string domain_id;
  std::vector<TimedItem> items;

  std::vector<std::string> item_ids() const {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.item_id);
    return out;
  }
  bool operator==(const BehaviorSequence&) const = default;
};

struct FlowItem {
  std::string item_id;
  std::string domain_id;
  std::int64_t timestamp = 0;
  bool operator==(const FlowItem&) const = default;
};

struct MixedFlow {
  std::string user_id;
  std::vector<FlowItem> items;
  bool operator==(const MixedFlow&) const = default;
};

template <class Item>
struct PredictionTarget {
  std::vector<Item> context;
  Item target;
};

template <class Item>
struct SplitTriple {
  std::vector<Item> train;
  PredictionTarget<Item> valid;
  PredictionTarget<Item> test;
};

// ---------------------------------------------------------------------------
// File ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(buf.c_str(), &end, 10);
  if (errno != 0 || end != buf.c_str() + buf.size()) return false;
  out = v;
  return true;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(buf.c_str(), &end);
  if (errno != 0 || end != buf.c_str() + buf.size()) return false;
  out = v;
  return true;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

/// Shortest representation that parses back to the same float value.
/// Embedding values carry float32 precision in memory and on disk.
inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", round_to_float(v));
  return buf;
}

}  // namespace detail

/// Parses `user<TAB>item<TAB>domain<TAB>timestamp` records, one per line.
inline std::vector<Interaction> parse_interactions(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto fields = detail::split(line, '\t');
    if (fields.size() != 4) {
      throw ParseError(lineno, "expected 4 tab-separated fields, got " +
                                   std::to_string(fields.size()));
    }
    Interaction rec;
    rec.user_id = fields[0];
    rec.item_id = fields[1];
    rec.domain_id = fields[2];
    if (rec.user_id.empty() || rec.item_id.empty() || rec.domain_id.empty()) {
      throw ParseError(lineno, "empty id token");
    }
    if (!detail::parse_int64(fields[3], rec.timestamp) || rec.timestamp < 0) {
      throw ParseError(lineno, "timestamp is not a non-negative integer: '" +
                                   std::string(fields[3]) + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<Interaction> load_interactions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read interactions file '" + path + "'");
  return parse_interactions(in);
}

inline void write_interactions(std::ostream& out, std::span<const Interaction> records) {
  for (const auto& r : records) {
    out << r.user_id << '\t' << r.item_id << '\t' << r.domain_id << '\t' << r.timestamp << '\n';
  }
}

inline void save_interactions(const std::string& path, std::span<const Interaction> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write interactions file '" + path + "'");
  write_interactions(out, records);
}

/// Parses `dim=<d>` followed by `item<TAB>v1 v2 ... vd` lines.
inline ModalityStore parse_embedding_store(std::istream& in, Modality modality) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("embedding file is empty");
  detail::strip_cr(line);
  std::int64_t dim = 0;
  if (line.rfind("dim=", 0) != 0 || !detail::parse_int64(std::string_view(line).substr(4), dim) ||
      dim <= 0) {
    throw FormatError("first line must be 'dim=<d>', got '" + line + "'");
  }
  ModalityStore store(modality, static_cast<std::size_t>(dim));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError("line " + std::to_string(lineno) + ": expected 'item_id<TAB>values'");
    }
    std::string item_id = line.substr(0, tab);
    std::vector<double> values;
    values.reserve(store.dim());
    for (auto tok : detail::split(std::string_view(line).substr(tab + 1), ' ')) {
      if (tok.empty()) continue;
      double v = 0;
      if (!detail::parse_double(tok, v)) {
        throw FormatError("item '" + item_id + "': bad real '" + std::string(tok) + "'");
      }
      values.push_back(detail::round_to_float(v));
    }
    store.insert(item_id, std::move(values));
  }
  return store;
}

inline ModalityStore load_embedding_store(const std::string& path, Modality modality) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read embedding file '" + path + "'");
  return parse_embedding_store(in, modality);
}

inline void write_embedding_store(std::ostream& out, const ModalityStore& store) {
  out << "dim=" << store.dim() << '\n';
  for (const auto& [id, values] : store.vectors()) {
    out << id << '\t';
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out << ' ';
      out << detail::format_real(values[i]);
    }
    out << '\n';
  }
}

inline void save_embedding_store(const std::string& path, const ModalityStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file '" + path + "'");
  write_embedding_store(out, store);
}

// ---------------------------------------------------------------------------
// Sequence construction
// ---------------------------------------------------------------------------

/// One sequence per user with at least one interaction in `domain_id`,
/// ordered by user id; items sorted by (timestamp, item_id).
inline std::vector<BehaviorSequence> build_domain_sequences(std::span<const Interaction> records,
                                                            const std::string& domain_id) {
  std::map<std::string, BehaviorSequence> by_user;
  for (const auto& r : records) {
    if (r.domain_id != domain_id) continue;
    auto& seq = by_user[r.user_id];
    seq.user_id = r.user_id;
    seq.domain_id = domain_id;
    seq.items.push_back({r.item_id, r.timestamp});
  }
  std::vector<BehaviorSequence> out;
  out.reserve(by_user.size());
  for (auto& [user, seq] : by_user) {
    std::stable_sort(seq.items.begin(), seq.items.end(), [](const auto& a, const auto& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.item_id < b.item_id;
    });
    out.push_back(std::move(seq));
  }
  return out;
}

namespace detail {
inline void sort_flow(std::vector<FlowItem>& items) {
  std::stable_sort(items.begin(), items.end(), [](const FlowItem& a, const FlowItem& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.domain_id != b.domain_id) return a.domain_id < b.domain_id;
    return a.item_id < b.item_id;
  });
}
}  // namespace detail

/// All of a user's interactions across domains, sorted by
/// (timestamp, domain_id, item_id).
inline MixedFlow build_mixed_flow(std::span<const Interaction> records, const std::string& user_id) {
  MixedFlow flow{user_id, {}};
  for (const auto& r : records) {
    if (r.user_id == user_id) flow.items.push_back({r.item_id, r.domain_id, r.timestamp});
  }
  if (flow.items.empty()) throw NotFoundError("unknown user '" + user_id + "'");
  detail::sort_flow(flow.items);
  return flow;
}

/// Mixed flows of every user, restricted to `domains` (all domains when
/// empty). Users without any kept interaction are omitted.
inline std::map<std::string, MixedFlow> build_all_mixed_flows(
    std::span<const Interaction> records, const std::set<std::string>& domains = {}) {
  std::map<std::string, MixedFlow> flows;
  for (const auto& r : records) {
    if (!domains.empty() && domains.count(r.domain_id) == 0) continue;
    auto& f = flows[r.user_id];
    f.user_id = r.user_id;
    f.items.push_back({r.item_id, r.domain_id, r.timestamp});
  }
  for (auto& [user, f] : flows) detail::sort_flow(f.items);
  return flows;
}

/// Leave-one-out: last item is the test target, penultimate the validation
/// target, the rest is the training prefix.
template <class Item>
SplitTriple<Item> leave_one_out_split(std::span<const Item> seq) {
  if (seq.size() < 3) {
    throw TooShortError("sequence of length " + std::to_string(seq.size()) +
                        " is too short for a leave-one-out split (need >= 3)");
  }
  const std::size_t n = seq.size();
  SplitTriple<Item> split;
  split.train.assign(seq.begin(), seq.end() - 2);
  split.valid.context = split.train;
  split.valid.target = seq[n - 2];
  split.test.context.assign(seq.begin(), seq.end() - 1);
  split.test.target = seq[n - 1];
  return split;
}

template <class Item>
SplitTriple<Item> leave_one_out_split(const std::vector<Item>& seq) {
  return leave_one_out_split(std::span<const Item>(seq));
}

/// Keeps the most recent `n_max` items.
template <class Item>
std::vector<Item> truncate_left(std::span<const Item> items, std::size_t n_max) {
  if (n_max == 0) throw ConfigError("truncate_left: n_max must be >= 1");
  const std::size_t keep = std::min(items.size(), n_max);
  return std::vector<Item>(items.end() - static_cast<std::ptrdiff_t>(keep), items.end());
}

template <class Item>
std::vector<Item> truncate_left(const std::vector<Item>& items, std::size_t n_max) {
  return truncate_left(std::span<const Item>(items), n_max);
}

// ---------------------------------------------------------------------------
// Dataset directory layout
// ---------------------------------------------------------------------------

/// Interactions plus per-domain content. On disk: `interactions.tsv` and
/// `<domain>.<modality>.emb` in one directory.
struct Dataset {
  std::vector<Interaction> interactions;
  std::map<std::string, ContentStores> content;

  std::set<std::string> domains() const {
    std::set<std::string> out;
    for (const auto& r : interactions) out.insert(r.domain_id);
    for (const auto& [d, c] : content) out.insert(d);
    return out;
  }
  bool operator==(const Dataset&) const = default;
};

inline std::string interactions_path(const std::string& dir) { return dir + "/interactions.tsv"; }

inline std::string embedding_path(const std::string& dir, const std::string& domain, Modality m) {
  return dir + "/" + domain + "." + std::string(modality_name(m)) + ".emb";
}

inline void save_dataset(const std::string& dir, const Dataset& data) {
  save_interactions(interactions_path(dir), data.interactions);
  for (const auto& [domain, stores] : data.content) {
    for (Modality m : kModalities) save_embedding_store(embedding_path(dir, domain, m), stores[m]);
  }
}

inline Dataset load_dataset(const std::string& dir, const std::set<std::string>& domains) {
  Dataset data;
  data.interactions = load_interactions(interactions_path(dir));
  for (const auto& domain : domains) {
    ContentStores stores;
    for (Modality m : kModalities) {
      stores[m] = load_embedding_store(embedding_path(dir, domain, m), m);
    }
    data.content.emplace(domain, std::move(stores));
  }
  return data;
}

}  // namespace mmrec
