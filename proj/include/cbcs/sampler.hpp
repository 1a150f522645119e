#pragma once

// Coverage-centric coreset selection (CCS) and the uniform random baseline.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "cbcs/error.hpp"
#include "cbcs/rng.hpp"
#include "cbcs/types.hpp"

namespace cbcs {

enum class SelectionMode { Labeled, LabelFree };

inline std::string to_string(SelectionMode m) { return m == SelectionMode::Labeled ? "labeled" : "label-free"; }

inline SelectionMode parse_mode(const std::string& s) {
  if (s == "labeled") return SelectionMode::Labeled;
  if (s == "label-free" || s == "label_free") return SelectionMode::LabelFree;
  throw Error(ErrorCode::InvalidArgument, "mode must be 'labeled' or 'label-free', got '" + s + "'");
}

/// (dataset tag, pruning rate in whole percent, mode) -> cutoff rate.
class CutoffTable {
 public:
  void set(const std::string& tag, int alpha_percent, SelectionMode mode, double beta) {
    entries_[{canonical_tag(tag), alpha_percent, mode}] = beta;
  }

  std::optional<double> find(const std::string& tag, double alpha, SelectionMode mode) const {
    const double pct = alpha * 100.0;
    const double rounded = std::round(pct);
    if (std::abs(pct - rounded) > 1e-9) return std::nullopt;
    auto it = entries_.find({canonical_tag(tag), static_cast<int>(rounded), mode});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

  /// "CIFAR-10", "cifar_10" and "cifar10" all name the same dataset.
  static std::string canonical_tag(const std::string& tag) {
    std::string out;
    for (unsigned char c : tag) {
      if (c == '-' || c == '_' || c == ' ') continue;
      out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
  }

  /// Cutoff rates published for CIFAR-10, CIFAR-100 and ImageNet.
  static CutoffTable builtin() {
    CutoffTable t;
    const auto L = SelectionMode::Labeled;
    const auto F = SelectionMode::LabelFree;
    t.set("cifar10", 30, L, 0.0);
    t.set("cifar10", 50, L, 0.0);
    t.set("cifar10", 70, L, 0.1);
    t.set("cifar10", 90, L, 0.3);
    t.set("cifar100", 30, L, 0.1);
    t.set("cifar100", 50, L, 0.2);
    t.set("cifar100", 70, L, 0.2);
    t.set("cifar100", 90, L, 0.5);
    t.set("imagenet", 30, L, 0.0);
    t.set("imagenet", 50, L, 0.1);
    t.set("imagenet", 70, L, 0.2);
    t.set("imagenet", 90, L, 0.3);
    t.set("cifar10", 30, F, 0.0);
    t.set("cifar10", 50, F, 0.0);
    t.set("cifar10", 70, F, 0.2);
    t.set("cifar10", 90, F, 0.4);
    t.set("cifar100", 30, F, 0.0);
    t.set("cifar100", 50, F, 0.2);
    t.set("cifar100", 70, F, 0.4);
    t.set("cifar100", 90, F, 0.5);
    t.set("imagenet", 30, F, 0.0);
    t.set("imagenet", 50, F, 0.1);
    t.set("imagenet", 70, F, 0.2);
    t.set("imagenet", 90, F, 0.3);
    return t;
  }

 private:
  std::map<std::tuple<std::string, int, SelectionMode>, double> entries_;
};

inline double lookup_cutoff(const CutoffTable& table, const std::string& tag, double alpha, SelectionMode mode) {
  if (auto beta = table.find(tag, alpha, mode)) return *beta;
  throw Error(ErrorCode::UnknownConfig, "no cutoff rate for dataset '" + tag + "' at alpha=" +
                                            std::to_string(alpha) + " (" + to_string(mode) +
                                            "); pass beta explicitly");
}

/// Intermediate state of one CCS run, exposed for inspection and tests.
struct CcsTrace {
  std::size_t budget = 0;
  std::vector<std::size_t> pruned;             // sample indices removed as hardest
  double low = 0.0;                            // surviving score range
  double high = 0.0;
  double width = 0.0;                          // bin interval width
  std::vector<std::vector<std::size_t>> bins;  // sample indices per bin id (may be empty)
  std::vector<std::size_t> visit_order;        // non-empty bin ids, fewest members first
  std::vector<std::size_t> bin_budget;         // picks taken from visit_order[i]
  std::size_t pre_topup = 0;
  std::size_t topped_up = 0;
};

inline void validate_spec(const SelectionSpec& spec, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidSpec, "empty score table");
  if (!(spec.alpha >= 0.0 && spec.alpha < 1.0)) throw Error(ErrorCode::InvalidSpec, "alpha must be in [0, 1)");
  if (!(spec.beta >= 0.0 && spec.beta < 1.0)) throw Error(ErrorCode::InvalidSpec, "beta must be in [0, 1)");
  if (spec.bins < 1) throw Error(ErrorCode::InvalidSpec, "bins must be >= 1");
  if (spec.budget(n) < 1) throw Error(ErrorCode::InvalidSpec, "alpha leaves an empty budget");
}

/**
 * Coverage-centric selection over AUM scores.
 *
 *  1. Drop the floor(n * beta) lowest-AUM samples (ties: smaller index first).
 *  2. Split the surviving score range into `bins` equal-width intervals, the
 *     last one closed on the right.
 *  3. Visit non-empty bins fewest-first (ties: lower bin id) and take
 *     min(|B|, floor(m_rem / bins_left)) members from each.
 *  4. With topup on, fill any remainder from unselected survivors.
 *
 * Sampling within a bin is uniform without replacement: a seeded random
 * permutation ranks all samples once and each draw takes the lowest-ranked
 * eligible members. Output indices are ascending.
 */
inline Coreset ccs_select(const ScoreTable& scores, const SelectionSpec& spec, CcsTrace* trace = nullptr) {
  const std::size_t n = scores.size();
  validate_spec(spec, n);
  scores.validate(n);

  const std::size_t budget = spec.budget(n);
  const std::size_t cut = spec.cutoff_count(n);
  const std::size_t pool = n - cut;
  if (spec.topup && budget > pool) {
    throw Error(ErrorCode::BudgetExceedsPool, "budget " + std::to_string(budget) + " exceeds the " +
                                                  std::to_string(pool) + " samples left after the cutoff");
  }

  const auto& entries = scores.entries;
  std::vector<std::size_t> by_score(n);
  std::iota(by_score.begin(), by_score.end(), std::size_t{0});
  std::sort(by_score.begin(), by_score.end(), [&](std::size_t a, std::size_t b) {
    if (entries[a].aum != entries[b].aum) return entries[a].aum < entries[b].aum;
    return entries[a].index < entries[b].index;
  });

  Rng rng(spec.seed);
  const auto order = rng.permutation(n);
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;
  auto by_rank = [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; };

  CcsTrace local;
  CcsTrace& t = trace ? *trace : local;
  t = CcsTrace{};
  t.budget = budget;
  for (std::size_t p = 0; p < cut; ++p) t.pruned.push_back(entries[by_score[p]].index);

  // Survivors, as sample indices (entries are indexed by sample index below).
  std::vector<const ScoreEntry*> by_index(n);
  for (const auto& e : entries) by_index[e.index] = &e;
  std::vector<std::size_t> survivors;
  survivors.reserve(pool);
  for (std::size_t p = cut; p < n; ++p) survivors.push_back(entries[by_score[p]].index);

  t.low = by_index[survivors.front()]->aum;
  t.high = by_index[survivors.back()]->aum;
  t.width = (t.high - t.low) / static_cast<double>(spec.bins);
  t.bins.assign(spec.bins, {});
  for (std::size_t idx : survivors) {
    std::size_t bin = 0;
    if (t.width > 0.0) {
      const double pos = (by_index[idx]->aum - t.low) / t.width;
      bin = std::min(spec.bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos))));
    }
    t.bins[bin].push_back(idx);
  }

  for (std::size_t b = 0; b < t.bins.size(); ++b) {
    if (!t.bins[b].empty()) t.visit_order.push_back(b);
  }
  std::stable_sort(t.visit_order.begin(), t.visit_order.end(),
                   [&](std::size_t a, std::size_t b) { return t.bins[a].size() < t.bins[b].size(); });

  std::vector<bool> chosen(n, false);
  std::vector<std::size_t> picked;
  picked.reserve(budget);
  std::size_t remaining = budget;
  for (std::size_t v = 0; v < t.visit_order.size(); ++v) {
    const std::size_t bins_left = t.visit_order.size() - v;
    auto members = t.bins[t.visit_order[v]];
    const std::size_t take = std::min(members.size(), remaining / bins_left);
    std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end(),
                      by_rank);
    for (std::size_t k = 0; k < take; ++k) {
      chosen[members[k]] = true;
      picked.push_back(members[k]);
    }
    t.bin_budget.push_back(take);
    remaining -= take;
  }
  t.pre_topup = picked.size();

  if (spec.topup && remaining > 0) {
    std::vector<std::size_t> rest;
    for (std::size_t idx : survivors) {
      if (!chosen[idx]) rest.push_back(idx);
    }
    std::sort(rest.begin(), rest.end(), by_rank);
    const std::size_t take = std::min(remaining, rest.size());
    picked.insert(picked.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(take));
    t.topped_up = take;
  }

  Coreset out;
  out.indices = std::move(picked);
  std::sort(out.indices.begin(), out.indices.end());
  out.meta.method = "ccs";
  out.meta.spec = spec;
  out.meta.pool_size = n;
  return out;
}

/// m indices drawn uniformly without replacement from [0, n), ascending.
inline Coreset random_select(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m > n) {
    throw Error(ErrorCode::BudgetExceedsPool,
                "budget " + std::to_string(m) + " exceeds pool of " + std::to_string(n));
  }
  Rng rng(seed);
  Coreset out;
  out.indices = rng.sample_without_replacement(n, m);
  std::sort(out.indices.begin(), out.indices.end());
  out.meta.method = "random";
  out.meta.spec.seed = seed;
  out.meta.spec.alpha = n == 0 ? 0.0 : 1.0 - static_cast<double>(m) / static_cast<double>(n);
  out.meta.spec.bins = 1;
  out.meta.pool_size = n;
  return out;
}

}  // namespace cbcs
