#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/error.hpp"
#include "mmrec/evaluation/metrics.hpp"
#include "mmrec/training/finetune.hpp"

namespace mmrec {

/// Ranks of each case's target when items are scored by training frequency.
inline std::vector<std::size_t> popularity_ranks(const TargetData& td, SplitMode mode) {
  std::vector<std::size_t> ranks;
  for (const auto& c : eval_cases(td, mode)) {
    ranks.push_back(rank_of_target(td.train_frequency, td.users[c.user].vocab[c.k]));
  }
  return ranks;
}

inline MetricReport popularity_report(const TargetData& td, SplitMode mode,
                                      const std::vector<std::size_t>& ks = kDefaultKs) {
  return aggregate_ranks(popularity_ranks(td, mode), ks);
}

/// Flips a seeded uniform sample of floor(ratio * n_present) items of
/// `modality` to missing; the other modalities are untouched.
inline ContentStores modality_mask(const ContentStores& stores, Modality modality, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in [0,1]");
  ContentStores out = stores;
  std::vector<std::string> ids;
  for (const auto& [id, v] : stores[modality].vectors()) ids.push_back(id);
  const auto n_drop = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ids.size())));
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first n_drop slots become the sample.
  for (std::size_t i = 0; i < n_drop; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
    out[modality].erase(ids[i]);
  }
  return out;
}

/// 1-based index g with bounds[g-1] <= freq < bounds[g]; the last group is
/// open above. 0 when freq lies below bounds[0].
inline std::size_t popularity_group(double freq, const std::vector<double>& bounds) {
  for (std::size_t i = 1; i < bounds.size(); ++i) {
    if (!(bounds[i] > bounds[i - 1])) throw ConfigError("popularity bounds must be strictly increasing");
  }
  if (bounds.empty() || freq < bounds.front()) return 0;
  std::size_t g = 0;
  while (g < bounds.size() && freq >= bounds[g]) ++g;
  return g;
}

inline double improvement_ratio(double ours, double base) {
  if (base == 0.0) return ours == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (ours - base) / base;
}

struct PopularityGroup {
  std::size_t index = 0;  // 1-based
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  MetricReport ours;
  MetricReport baseline;
};

struct PopularityGroupReport {
  std::vector<PopularityGroup> groups;  // non-empty groups only
};

/// Partitions test cases by the training frequency of their target item and
/// aggregates both rank lists per group.
inline PopularityGroupReport popularity_group_report(std::span<const std::size_t> ours,
                                                     std::span<const std::size_t> baseline,
                                                     std::span<const double> target_frequency,
                                                     const std::vector<double>& bounds,
                                                     const std::vector<std::size_t>& ks = kDefaultKs) {
  if (ours.size() != baseline.size() || ours.size() != target_frequency.size()) {
    throw ShapeError("popularity_group_report: rank and frequency lists differ in length");
  }
  std::vector<std::vector<std::size_t>> our_ranks(bounds.size() + 1), base_ranks(bounds.size() + 1);
  for (std::size_t i = 0; i < ours.size(); ++i) {
    const std::size_t g = popularity_group(target_frequency[i], bounds);
    our_ranks[g].push_back(ours[i]);
    base_ranks[g].push_back(baseline[i]);
  }
  PopularityGroupReport report;
  for (std::size_t g = 0; g <= bounds.size(); ++g) {
    if (our_ranks[g].empty()) continue;
    PopularityGroup grp;
    grp.index = g;
    grp.lower = g == 0 ? -std::numeric_limits<double>::infinity() : bounds[g - 1];
    grp.upper = g < bounds.size() ? bounds[g] : std::numeric_limits<double>::infinity();
    grp.ours = aggregate_ranks(our_ranks[g], ks);
    grp.baseline = aggregate_ranks(base_ranks[g], ks);
    report.groups.push_back(std::move(grp));
  }
  return report;
}

/// Training frequency of each test target, aligned with eval_cases(td, mode).
inline std::vector<double> target_frequencies(const TargetData& td, SplitMode mode) {
  std::vector<double> out;
  for (const auto& c : eval_cases(td, mode)) out.push_back(td.train_frequency[td.users[c.user].vocab[c.k]]);
  return out;
}

}  // namespace mmrec
