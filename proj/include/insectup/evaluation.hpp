#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "insectup/classifier.hpp"

namespace insectup {

struct LabeledImage {
  Image image;
  std::string content_digest;
  std::string species_id;
};

/// Species ids ordered by descending probability, ties by ascending taxon_id.
inline std::vector<std::string> ranked_species(const ProbabilityVector& p) {
  std::vector<std::pair<std::string, double>> v(p.entries.begin(), p.entries.end());
  std::stable_sort(v.begin(), v.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(v.size());
  for (auto& e : v) out.push_back(std::move(e.first));
  return out;
}

struct RankTally {
  std::size_t chosen = 0;   // items whose hierarchical answer stopped at this rank
  std::size_t correct = 0;  // ... and that answer is an ancestor-or-self of the truth
};

struct EvaluationReport {
  std::size_t items = 0;
  std::vector<double> topk;  // topk[i] = top-(i+1) accuracy
  double hierarchical_accuracy = 0.0;
  std::array<RankTally, 5> per_rank{};  // indexed by ordinal(rank) + 1

  const RankTally& at(Rank r) const { return per_rank[ordinal(r) + 1]; }
};

inline void check_labels(std::span<const LabeledImage> items, const Taxonomy& t) {
  if (items.empty()) throw Error(ErrorCode::EmptyDataset, "evaluation set is empty");
  for (const auto& item : items) {
    if (t.node(item.species_id).rank != Rank::Species) {
      throw Error(ErrorCode::UnknownTaxon, "label '" + item.species_id + "' is not a species");
    }
  }
}

/// Top-1..top-k accuracy plus the hierarchical view: how often the
/// threshold-controlled answer is an ancestor-or-self of the truth.
inline EvaluationReport evaluate(ModelBackend& backend, std::span<const LabeledImage> items,
                                 const Taxonomy& t, const RankThresholds& tau, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  check_labels(items, t);
  EvaluationReport report;
  report.items = items.size();
  std::vector<std::size_t> hits(k, 0);
  std::size_t hier_hits = 0;
  for (const auto& item : items) {
    auto cls = classify_image(item.image, item.content_digest, backend, t, tau);
    auto ranked = ranked_species(cls.probabilities);
    auto pos = std::find(ranked.begin(), ranked.end(), item.species_id) - ranked.begin();
    for (std::size_t j = static_cast<std::size_t>(pos); j < k; ++j) hits[j]++;
    bool ok = t.is_ancestor_or_self(cls.result.chosen, item.species_id);
    auto& tally = report.per_rank[ordinal(cls.result.chosen_rank) + 1];
    tally.chosen++;
    if (ok) {
      tally.correct++;
      hier_hits++;
    }
  }
  double n = static_cast<double>(items.size());
  for (auto h : hits) report.topk.push_back(static_cast<double>(h) / n);
  report.hierarchical_accuracy = static_cast<double>(hier_hits) / n;
  return report;
}

inline double evaluate_topk(ModelBackend& backend, std::span<const LabeledImage> items,
                            const Taxonomy& t, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  check_labels(items, t);
  std::size_t hits = 0;
  for (const auto& item : items) {
    auto p = backend.score(BackendInput{preprocess(item.image), item.content_digest});
    validate(p, t);
    auto ranked = ranked_species(p);
    auto end = ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked.size()));
    if (std::find(ranked.begin(), end, item.species_id) != end) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

}  // namespace insectup
