#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "insectup/error.hpp"
#include "insectup/image.hpp"
#include "insectup/taxonomy.hpp"

namespace insectup {

inline constexpr double kSimplexTolerance = 1e-6;

/// Species-level scores produced by a model backend, keyed by species taxon_id.
struct ProbabilityVector {
  std::map<std::string, double> entries;

  double operator[](const std::string& id) const { return entries.at(id); }
  std::size_t size() const noexcept { return entries.size(); }

  /// Values in the taxonomy's species order (ascending taxon_id).
  static ProbabilityVector from_ordered(const Taxonomy& t, const std::vector<double>& values) {
    const auto& species = t.species();
    if (values.size() != species.size()) {
      throw Error(ErrorCode::KeyMismatch, "expected " + std::to_string(species.size()) +
                                              " species scores, got " +
                                              std::to_string(values.size()));
    }
    ProbabilityVector p;
    for (std::size_t i = 0; i < species.size(); ++i) p.entries.emplace(t.id(species[i]), values[i]);
    return p;
  }

  friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;
};

/// Throws KeyMismatch when keys differ from the species set and
/// InvalidProbabilities when the values are not a distribution.
inline void validate(const ProbabilityVector& p, const Taxonomy& t) {
  const auto& species = t.species();
  if (p.entries.size() != species.size()) {
    throw Error(ErrorCode::KeyMismatch, "probability vector has " +
                                            std::to_string(p.entries.size()) + " entries for " +
                                            std::to_string(species.size()) + " species");
  }
  auto it = p.entries.begin();
  double sum = 0.0;
  for (auto s : species) {
    if (it->first != t.id(s)) {
      throw Error(ErrorCode::KeyMismatch, "unexpected species key '" + it->first + "'");
    }
    if (!(it->second >= 0.0) || it->second > 1.0 + kSimplexTolerance) {
      throw Error(ErrorCode::InvalidProbabilities,
                  "score for '" + it->first + "' is outside [0,1]");
    }
    sum += it->second;
    ++it;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw Error(ErrorCode::InvalidProbabilities, "scores sum to " + csv::format_number(sum));
  }
}

/// Confidence per taxonomy node, indexed like Taxonomy nodes (0 = root).
struct NodeConfidenceMap {
  std::vector<double> conf;

  double at(Taxonomy::Index i) const { return conf.at(i); }
  double at(const Taxonomy& t, std::string_view id) const { return conf.at(t.index_of(id)); }
};

/// Node confidence = total probability mass of the species beneath it.
inline NodeConfidenceMap rollup(const ProbabilityVector& p, const Taxonomy& t) {
  const auto& species = t.species();
  if (p.entries.size() != species.size()) {
    throw Error(ErrorCode::KeyMismatch, "probability vector does not cover the species set");
  }
  NodeConfidenceMap m;
  m.conf.assign(t.size(), 0.0);
  auto it = p.entries.begin();
  for (auto s : species) {
    if (it->first != t.id(s)) {
      throw Error(ErrorCode::KeyMismatch, "unexpected species key '" + it->first + "'");
    }
    m.conf[s] = it->second;
    ++it;
  }
  // Node indices follow taxon_id order, not depth, so sum rank by rank upward.
  for (int r = ordinal(Rank::Genus); r >= ordinal(Rank::Root); --r) {
    for (Taxonomy::Index i = 0; i < t.size(); ++i) {
      if (ordinal(t.rank(i)) != r) continue;
      double sum = 0.0;
      for (auto c : t.children(i)) sum += m.conf[c];
      m.conf[i] = sum;
    }
  }
  return m;
}

struct RankThresholds {
  double species = 0.70;
  double genus = 0.70;
  double family = 0.70;
  double order = 0.70;

  double at(Rank r) const {
    switch (r) {
      case Rank::Species: return species;
      case Rank::Genus: return genus;
      case Rank::Family: return family;
      case Rank::Order: return order;
      case Rank::Root: return 0.0;
    }
    return 1.0;
  }

  static RankThresholds uniform(double tau) { return {tau, tau, tau, tau}; }

  void validate() const {
    for (double v : {species, genus, family, order}) {
      if (!(v > 0.0 && v <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "rank thresholds must lie in (0,1]");
      }
    }
  }

  friend bool operator==(const RankThresholds&, const RankThresholds&) = default;
};

struct PathStep {
  std::string taxon_id;
  double confidence = 0.0;

  friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct ClassificationResult {
  std::string chosen;
  Rank chosen_rank = Rank::Root;
  double confidence = 0.0;
  std::vector<PathStep> path;  // root first
  RankThresholds thresholds_used;

  bool is_root() const noexcept { return chosen_rank == Rank::Root; }

  friend bool operator==(const ClassificationResult&, const ClassificationResult&) = default;
};

/// Greedy descent along the dominant-mass path. At each node the most
/// confident child (smallest taxon_id on ties) is entered only if it clears
/// its rank's threshold; the root means "unidentified insect".
inline ClassificationResult classify_hierarchical(const NodeConfidenceMap& m, const Taxonomy& t,
                                                  const RankThresholds& tau) {
  ClassificationResult out;
  out.thresholds_used = tau;
  Taxonomy::Index cur = Taxonomy::kRoot;
  out.path.push_back({t.id(cur), m.at(cur)});
  while (!t.children(cur).empty()) {
    const auto& kids = t.children(cur);
    Taxonomy::Index best = kids.front();
    for (auto c : kids) {
      if (m.at(c) > m.at(best)) best = c;  // kids sorted by id: first max wins
    }
    if (m.at(best) < tau.at(t.rank(best))) break;
    cur = best;
    out.path.push_back({t.id(cur), m.at(cur)});
  }
  out.chosen = t.id(cur);
  out.chosen_rank = t.rank(cur);
  out.confidence = m.at(cur);
  return out;
}

/// What a backend sees: the preprocessed pixels plus the SHA-256 of the
/// original upload (lets fixture backends key on content).
struct BackendInput {
  const Image& image;
  std::string content_digest;
};

/// Any source of species probabilities: an embedded network, a remote
/// scorer, or a fixture stub.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual ProbabilityVector score(const BackendInput& input) = 0;

  /// How many score() calls may safely run at once.
  virtual std::size_t max_concurrency() const { return 1; }
  virtual std::string kind() const = 0;
};

struct ImageClassification {
  ProbabilityVector probabilities;
  ClassificationResult result;
};

inline ImageClassification classify_preprocessed(const Image& model_input,
                                                 std::string content_digest,
                                                 ModelBackend& backend, const Taxonomy& t,
                                                 const RankThresholds& tau) {
  ImageClassification out;
  out.probabilities = backend.score(BackendInput{model_input, std::move(content_digest)});
  validate(out.probabilities, t);
  out.result = classify_hierarchical(rollup(out.probabilities, t), t, tau);
  return out;
}

inline ImageClassification classify_image(const Image& img, std::string content_digest,
                                          ModelBackend& backend, const Taxonomy& t,
                                          const RankThresholds& tau) {
  return classify_preprocessed(preprocess(img), std::move(content_digest), backend, t, tau);
}

}  // namespace insectup
