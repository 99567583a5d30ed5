#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "insectup/csv.hpp"
#include "insectup/error.hpp"

namespace insectup {

enum class Rank : int { Root = -1, Order = 0, Family = 1, Genus = 2, Species = 3 };

constexpr int ordinal(Rank r) { return static_cast<int>(r); }

constexpr std::string_view to_string(Rank r) {
  switch (r) {
    case Rank::Root: return "root";
    case Rank::Order: return "order";
    case Rank::Family: return "family";
    case Rank::Genus: return "genus";
    case Rank::Species: return "species";
  }
  return "?";
}

inline std::optional<Rank> parse_rank(std::string_view s) {
  if (s == "order") return Rank::Order;
  if (s == "family") return Rank::Family;
  if (s == "genus") return Rank::Genus;
  if (s == "species") return Rank::Species;
  if (s == "root") return Rank::Root;
  return std::nullopt;
}

inline constexpr std::string_view kRootId = "ROOT";
inline constexpr std::string_view kTaxonomyHeader =
    "taxon_id,parent_id,rank,scientific_name,common_name";

struct TaxonNode {
  std::string taxon_id;
  std::string parent_id;  // kRootId for orders, empty for the synthetic root
  Rank rank = Rank::Root;
  std::string scientific_name;
  std::optional<std::string> common_name;

  friend bool operator==(const TaxonNode&, const TaxonNode&) = default;
};

/// One data row of the taxonomy table, prior to validation.
struct TaxonRow {
  std::size_t line = 0;
  std::string taxon_id;
  std::string parent_id;
  std::string rank;
  std::string scientific_name;
  std::string common_name;
};

struct Violation {
  ErrorCode code;
  std::size_t line = 0;
  std::string taxon_id;
  std::string message;
};

class TaxonomyError : public Error {
 public:
  explicit TaxonomyError(std::vector<Violation> violations)
      : Error(violations.empty() ? ErrorCode::MalformedTaxonomy : violations.front().code,
              summarize(violations)),
        violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<Violation>& v) {
    std::string out = std::to_string(v.size()) + " taxonomy violation(s)";
    for (const auto& x : v) {
      out += "\n  line " + std::to_string(x.line) + ": " + std::string(to_string(x.code)) +
             " (" + x.taxon_id + "): " + x.message;
    }
    return out;
  }

  std::vector<Violation> violations_;
};

/// Immutable rooted tree over order/family/genus/species. Node 0 is the
/// synthetic root; children are kept sorted by taxon_id.
class Taxonomy {
 public:
  using Index = std::size_t;
  static constexpr Index kRoot = 0;

  Taxonomy() = default;

  static Taxonomy load(std::span<const TaxonRow> rows);
  static Taxonomy from_csv(std::string_view text);

  std::string to_csv() const;

  std::uint64_t version() const noexcept { return version_; }
  void set_version(std::uint64_t v) noexcept { version_ = v; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

  Index index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) {
      throw Error(ErrorCode::UnknownTaxon, "unknown taxon '" + std::string(id) + "'");
    }
    return it->second;
  }

  const TaxonNode& node(Index i) const { return nodes_.at(i); }
  const TaxonNode& node(std::string_view id) const { return nodes_[index_of(id)]; }
  const std::vector<TaxonNode>& nodes() const noexcept { return nodes_; }

  Index parent(Index i) const { return parent_.at(i); }
  const std::vector<Index>& children(Index i) const { return children_.at(i); }
  Rank rank(Index i) const { return nodes_.at(i).rank; }
  const std::string& id(Index i) const { return nodes_.at(i).taxon_id; }

  /// Species leaves in taxon_id order; this is also the model output order.
  const std::vector<Index>& species() const noexcept { return species_; }
  std::vector<std::string> species_ids() const {
    std::vector<std::string> out;
    out.reserve(species_.size());
    for (Index i : species_) out.push_back(nodes_[i].taxon_id);
    return out;
  }

  std::optional<std::string> ancestor_at_rank(std::string_view id, Rank r) const {
    Index i = index_of(id);
    if (ordinal(r) > ordinal(nodes_[i].rank)) return std::nullopt;
    while (nodes_[i].rank != r) i = parent_[i];
    return nodes_[i].taxon_id;
  }

  bool is_ancestor_or_self(Index ancestor, Index node) const {
    while (true) {
      if (node == ancestor) return true;
      if (node == kRoot) return false;
      node = parent_[node];
    }
  }
  bool is_ancestor_or_self(std::string_view ancestor, std::string_view node) const {
    return is_ancestor_or_self(index_of(ancestor), index_of(node));
  }

  /// Root first, then each ancestor down to and including `i`.
  std::vector<Index> lineage(Index i) const {
    std::vector<Index> out;
    for (;;) {
      out.push_back(i);
      if (i == kRoot) break;
      i = parent_[i];
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::vector<Index> leaves_under(Index i) const {
    std::vector<Index> out;
    std::vector<Index> stack{i};
    while (!stack.empty()) {
      Index n = stack.back();
      stack.pop_back();
      if (children_[n].empty()) {
        out.push_back(n);
        continue;
      }
      for (auto it = children_[n].rbegin(); it != children_[n].rend(); ++it) stack.push_back(*it);
    }
    return out;
  }

  std::vector<std::string> leaves_under(std::string_view id) const {
    std::vector<std::string> out;
    for (Index i : leaves_under(index_of(id))) out.push_back(nodes_[i].taxon_id);
    return out;
  }

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) {
    return a.nodes_ == b.nodes_ && a.children_ == b.children_;
  }

 private:
  std::vector<TaxonNode> nodes_;
  std::vector<Index> parent_;
  std::vector<std::vector<Index>> children_;
  std::vector<Index> species_;
  std::unordered_map<std::string, Index> index_;
  std::uint64_t version_ = 0;
};

inline Taxonomy Taxonomy::load(std::span<const TaxonRow> rows) {
  std::vector<Violation> violations;
  auto violate = [&](ErrorCode code, const TaxonRow& row, std::string message) {
    violations.push_back({code, row.line, row.taxon_id, std::move(message)});
  };

  // Pass 1: per-row field checks, duplicate detection.
  std::map<std::string, const TaxonRow*> by_id;
  std::map<std::string, Rank> ranks;
  for (const auto& row : rows) {
    if (row.taxon_id.empty()) {
      violate(ErrorCode::MalformedTaxonomy, row, "empty taxon_id");
      continue;
    }
    if (row.taxon_id == kRootId) {
      violate(ErrorCode::MalformedTaxonomy, row, "taxon_id ROOT is reserved");
      continue;
    }
    auto rank = parse_rank(row.rank);
    if (!rank || *rank == Rank::Root) {
      violate(ErrorCode::MalformedTaxonomy, row, "unknown rank '" + row.rank + "'");
      continue;
    }
    if (row.scientific_name.empty()) {
      violate(ErrorCode::MalformedTaxonomy, row, "empty scientific_name");
    }
    if (!by_id.emplace(row.taxon_id, &row).second) {
      violate(ErrorCode::DuplicateId, row,
              "taxon_id already defined on line " + std::to_string(by_id[row.taxon_id]->line));
      continue;
    }
    ranks[row.taxon_id] = *rank;
  }

  // Pass 2: parent linkage and rank adjacency.
  for (const auto& [id, row] : by_id) {
    Rank rank = ranks[id];
    if (row->parent_id == kRootId) {
      if (rank != Rank::Order) {
        violate(ErrorCode::RankSkip, *row,
                std::string(to_string(rank)) + " cannot hang directly under ROOT");
      }
      continue;
    }
    auto parent = ranks.find(row->parent_id);
    if (parent == ranks.end()) {
      violate(ErrorCode::UnknownParent, *row, "parent '" + row->parent_id + "' is not defined");
      continue;
    }
    if (ordinal(parent->second) + 1 != ordinal(rank)) {
      violate(ErrorCode::RankSkip, *row,
              std::string(to_string(rank)) + " under " + std::string(to_string(parent->second)) +
                  " '" + row->parent_id + "'");
    }
  }

  // Pass 3: every node must reach ROOT without revisiting a node.
  for (const auto& [id, row] : by_id) {
    std::map<std::string, bool> seen;
    std::string cur = id;
    while (cur != kRootId) {
      if (seen[cur]) {
        violate(ErrorCode::CycleDetected, *row, "parent chain loops back to '" + cur + "'");
        break;
      }
      seen[cur] = true;
      auto it = by_id.find(cur);
      if (it == by_id.end()) break;  // UnknownParent already reported
      cur = it->second->parent_id;
    }
  }

  // Pass 4: leaves are exactly the species.
  std::map<std::string, std::size_t> child_count;
  for (const auto& [id, row] : by_id) child_count[row->parent_id]++;
  for (const auto& [id, row] : by_id) {
    Rank rank = ranks[id];
    bool leaf = child_count[id] == 0;
    if (leaf && rank != Rank::Species) {
      violate(ErrorCode::LeafNotSpecies, *row,
              std::string(to_string(rank)) + " '" + id + "' has no children");
    }
  }
  if (by_id.empty() && violations.empty()) {
    violations.push_back({ErrorCode::LeafNotSpecies, 0, std::string(kRootId),
                          "taxonomy has no species"});
  }

  if (!violations.empty()) {
    std::stable_sort(violations.begin(), violations.end(),
                     [](const Violation& a, const Violation& b) { return a.line < b.line; });
    throw TaxonomyError(std::move(violations));
  }

  Taxonomy t;
  t.nodes_.push_back(TaxonNode{std::string(kRootId), "", Rank::Root, "Insecta", std::nullopt});
  t.index_.emplace(std::string(kRootId), kRoot);
  for (const auto& [id, row] : by_id) {  // std::map iteration is sorted by id
    TaxonNode n;
    n.taxon_id = id;
    n.parent_id = row->parent_id;
    n.rank = ranks[id];
    n.scientific_name = row->scientific_name;
    if (!row->common_name.empty()) n.common_name = row->common_name;
    t.index_.emplace(id, t.nodes_.size());
    t.nodes_.push_back(std::move(n));
  }
  t.parent_.assign(t.nodes_.size(), kRoot);
  t.children_.assign(t.nodes_.size(), {});
  for (Index i = 1; i < t.nodes_.size(); ++i) {
    Index p = t.index_.at(t.nodes_[i].parent_id);
    t.parent_[i] = p;
    t.children_[p].push_back(i);  // ascending i == ascending taxon_id
    if (t.nodes_[i].rank == Rank::Species) t.species_.push_back(i);
  }
  return t;
}

inline Taxonomy Taxonomy::from_csv(std::string_view text) {
  auto rows = csv::parse(text);
  if (rows.empty()) {
    throw TaxonomyError({{ErrorCode::MalformedTaxonomy, 1, "", "missing header"}});
  }
  std::string header;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) {
    if (i) header += ',';
    header += rows[0].fields[i];
  }
  if (header != kTaxonomyHeader) {
    throw TaxonomyError({{ErrorCode::MalformedTaxonomy, rows[0].line, "",
                          "expected header '" + std::string(kTaxonomyHeader) + "'"}});
  }
  std::vector<TaxonRow> parsed;
  std::vector<Violation> violations;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto& f = rows[r].fields;
    if (f.size() != 5) {
      violations.push_back({ErrorCode::MalformedTaxonomy, rows[r].line, f.empty() ? "" : f[0],
                            "expected 5 columns, got " + std::to_string(f.size())});
      continue;
    }
    parsed.push_back({rows[r].line, f[0], f[1], f[2], f[3], f[4]});
  }
  if (!violations.empty()) throw TaxonomyError(std::move(violations));
  return load(parsed);
}

inline std::string Taxonomy::to_csv() const {
  std::string out(kTaxonomyHeader);
  out.push_back('\n');
  // pre-order so parents always precede their children
  std::vector<Index> stack;
  for (auto it = children_[kRoot].rbegin(); it != children_[kRoot].rend(); ++it) {
    stack.push_back(*it);
  }
  while (!stack.empty()) {
    Index i = stack.back();
    stack.pop_back();
    const auto& n = nodes_[i];
    csv::append_row(out, {n.taxon_id, n.parent_id, std::string(to_string(n.rank)),
                          n.scientific_name, n.common_name.value_or("")});
    for (auto it = children_[i].rbegin(); it != children_[i].rend(); ++it) stack.push_back(*it);
  }
  return out;
}

}  // namespace insectup
