#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmrec/error.hpp"

namespace mmrec {

inline const std::vector<std::size_t> kDefaultKs = {5, 10, 20};

/// 1 + #{items scoring strictly higher} + #{items tied with the target at a
/// smaller index}.
template <class S>
std::size_t rank_of_target(std::span<const S> scores, std::size_t target) {
  if (target >= scores.size()) {
    throw IndexError("rank_of_target: target " + std::to_string(target) + " outside " +
                     std::to_string(scores.size()) + " scores");
  }
  const S st = scores[target];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
  }
  return rank;
}

template <class S>
std::size_t rank_of_target(const std::vector<S>& scores, std::size_t target) {
  return rank_of_target(std::span<const S>(scores), target);
}

inline double recall_at_k(std::size_t rank, std::size_t k) { return rank >= 1 && rank <= k ? 1.0 : 0.0; }

inline double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || rank > k) return 0.0;
  return 1.0 / std::log2(1.0 + static_cast<double>(rank));
}

struct MetricReport {
  std::vector<std::size_t> ks = kDefaultKs;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::size_t users = 0;

  double recall_at(std::size_t k) const {
    auto it = recall.find(k);
    if (it == recall.end()) throw NotFoundError("report has no recall@" + std::to_string(k));
    return it->second;
  }

  double ndcg_at(std::size_t k) const {
    auto it = ndcg.find(k);
    if (it == ndcg.end()) throw NotFoundError("report has no ndcg@" + std::to_string(k));
    return it->second;
  }

  bool operator==(const MetricReport&) const = default;
};

/// Means over users of the per-user metrics; an empty rank list gives zeros.
inline MetricReport aggregate_ranks(std::span<const std::size_t> ranks,
                                    const std::vector<std::size_t>& ks = kDefaultKs) {
  MetricReport r;
  r.ks = ks;
  r.users = ranks.size();
  for (std::size_t k : ks) {
    double rec = 0.0;
    double nd = 0.0;
    for (std::size_t rank : ranks) {
      rec += recall_at_k(rank, k);
      nd += ndcg_at_k(rank, k);
    }
    const double n = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
    r.recall[k] = rec / n;
    r.ndcg[k] = nd / n;
  }
  return r;
}

inline MetricReport aggregate_ranks(const std::vector<std::size_t>& ranks,
                                    const std::vector<std::size_t>& ks = kDefaultKs) {
  return aggregate_ranks(std::span<const std::size_t>(ranks), ks);
}

/// Report for explicit score rows: scores[u] ranks every candidate for
/// user u, targets[u] is that user's ground truth.
template <class S>
MetricReport evaluate_scores(const std::vector<std::vector<S>>& scores, const std::vector<std::size_t>& targets,
                             const std::vector<std::size_t>& ks = kDefaultKs) {
  if (scores.size() != targets.size()) throw ShapeError("evaluate_scores: one target per score row required");
  if (scores.empty()) throw ConfigError("evaluation set is empty");
  std::vector<std::size_t> ranks;
  for (std::size_t u = 0; u < scores.size(); ++u) ranks.push_back(rank_of_target(scores[u], targets[u]));
  return aggregate_ranks(ranks, ks);
}

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// `metric<TAB>value` rows, values with 6 decimals; an optional trailing
/// `config` row carries the config echo.
inline void write_metric_tsv(std::ostream& out, const MetricReport& r,
                             const std::optional<std::string>& config_echo = std::nullopt) {
  out << "metric\tvalue\n";
  for (std::size_t k : r.ks) out << "recall@" << k << '\t' << format_metric(r.recall_at(k)) << '\n';
  for (std::size_t k : r.ks) out << "ndcg@" << k << '\t' << format_metric(r.ndcg_at(k)) << '\n';
  out << "users\t" << r.users << '\n';
  if (config_echo) out << "config\t" << *config_echo << '\n';
}

enum class EarlyStopDecision { proceed, stop };

/// Tracks the best score seen; stops after `patience` consecutive updates
/// without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("patience must be >= 1");
  }

  EarlyStopDecision update(double score) {
    ++updates_;
    improved_ = score > best_;
    if (improved_) {
      best_ = score;
      best_update_ = updates_;
      stale_ = 0;
    } else {
      ++stale_;
    }
    return stale_ >= patience_ ? EarlyStopDecision::stop : EarlyStopDecision::proceed;
  }

  bool improved() const noexcept { return improved_; }
  double best() const noexcept { return best_; }
  std::size_t best_update() const noexcept { return best_update_; }  // 1-based, 0 before any update
  std::size_t updates() const noexcept { return updates_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_update_ = 0;
  std::size_t updates_ = 0;
  std::size_t stale_ = 0;
  bool improved_ = false;
};

}  // namespace mmrec
