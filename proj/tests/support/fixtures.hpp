#pragma once

// Fixture generators and brute-force oracles shared by the unit and
// acceptance suites. Oracles deliberately avoid the library's own traversal
// helpers: they work from the raw row table.

#include <algorithm>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "insectup/classifier.hpp"
#include "insectup/consensus.hpp"
#include "insectup/image.hpp"
#include "insectup/taxonomy.hpp"

namespace insectup::testing {

using Rng = std::mt19937_64;

inline TaxonRow row(std::string id, std::string parent, std::string rank, std::string name = "",
                    std::string common = "") {
  if (name.empty()) name = "Name " + id;
  return {0, std::move(id), std::move(parent), std::move(rank), std::move(name),
          std::move(common)};
}

inline std::vector<TaxonRow> numbered(std::vector<TaxonRow> rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].line = i + 2;
  return rows;
}

/// family F with genera G1={s1,s2}, G2={s3} under order O.
inline std::vector<TaxonRow> three_species_rows() {
  return numbered({row("O", "ROOT", "order"), row("F", "O", "family"), row("G1", "F", "genus"),
                   row("G2", "F", "genus"), row("s1", "G1", "species"),
                   row("s2", "G1", "species"), row("s3", "G2", "species")});
}

/// 4 orders x 5 families x 5 genera; genera hold 4 species each, the last
/// one 7, giving 403 species.
inline std::vector<TaxonRow> spipoll_scale_rows() {
  std::vector<TaxonRow> rows;
  char buf[32];
  int species = 0;
  for (int o = 0; o < 4; ++o) {
    std::snprintf(buf, sizeof buf, "o%d", o);
    std::string oid = buf;
    rows.push_back(row(oid, "ROOT", "order", "Ordo " + oid));
    for (int f = 0; f < 5; ++f) {
      std::snprintf(buf, sizeof buf, "f%d%d", o, f);
      std::string fid = buf;
      rows.push_back(row(fid, oid, "family", "Familia " + fid));
      for (int g = 0; g < 5; ++g) {
        std::snprintf(buf, sizeof buf, "g%d%d%d", o, f, g);
        std::string gid = buf;
        rows.push_back(row(gid, fid, "genus", "Genus " + gid));
        bool last = o == 3 && f == 4 && g == 4;
        for (int s = 0; s < (last ? 7 : 4); ++s) {
          std::snprintf(buf, sizeof buf, "s%03d", species++);
          rows.push_back(row(buf, gid, "species", "Species " + std::string(buf)));
        }
      }
    }
  }
  return numbered(rows);
}

inline std::string rows_to_csv(const std::vector<TaxonRow>& rows) {
  std::string out(kTaxonomyHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    csv::append_row(out, {r.taxon_id, r.parent_id, r.rank, r.scientific_name, r.common_name});
  }
  return out;
}

// Split n items into k non-empty consecutive groups; returns group sizes.
inline std::vector<std::size_t> random_partition(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> cuts(n - 1);
  for (std::size_t i = 0; i < cuts.size(); ++i) cuts[i] = i + 1;
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(k - 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> sizes;
  std::size_t prev = 0;
  for (auto c : cuts) {
    sizes.push_back(c - prev);
    prev = c;
  }
  sizes.push_back(n - prev);
  return sizes;
}

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Random 4-rank tree with 1..max_species species. Ids are random tokens so
/// id order is unrelated to tree shape.
inline std::vector<TaxonRow> random_taxonomy_rows(Rng& rng, std::size_t max_species,
                                                  std::size_t min_species = 1) {
  std::size_t species = uniform(rng, min_species, max_species);
  std::size_t genera = uniform(rng, 1, species);
  std::size_t families = uniform(rng, 1, genera);
  std::size_t orders = uniform(rng, 1, families);
  std::set<std::string> used;
  auto fresh = [&](char prefix) {
    for (;;) {
      std::string id(1, prefix);
      id += std::to_string(uniform(rng, 0, 99999));
      if (used.insert(id).second) return id;
    }
  };
  std::vector<TaxonRow> rows;
  std::vector<std::string> order_ids, family_ids, genus_ids;
  for (std::size_t i = 0; i < orders; ++i) {
    order_ids.push_back(fresh('o'));
    rows.push_back(row(order_ids.back(), "ROOT", "order"));
  }
  auto attach = [&](const std::vector<std::string>& parents, std::size_t count, char prefix,
                    const char* rank, std::vector<std::string>* out) {
    auto sizes = random_partition(rng, count, parents.size());
    for (std::size_t p = 0; p < parents.size(); ++p) {
      for (std::size_t j = 0; j < sizes[p]; ++j) {
        auto id = fresh(prefix);
        rows.push_back(row(id, parents[p], rank));
        if (out) out->push_back(id);
      }
    }
  };
  attach(order_ids, families, 'f', "family", &family_ids);
  attach(family_ids, genera, 'g', "genus", &genus_ids);
  attach(genus_ids, species, 's', "species", nullptr);
  std::shuffle(rows.begin(), rows.end(), rng);
  return numbered(rows);
}

/// Simplex vector with every entry a multiple of 1/denominator, so any
/// summation order gives the same bits.
inline std::vector<double> dyadic_simplex(Rng& rng, std::size_t n, std::uint64_t denominator) {
  std::vector<std::uint64_t> cuts;
  for (std::size_t i = 0; i + 1 < n; ++i) cuts.push_back(uniform(rng, 0, denominator));
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> out;
  std::uint64_t prev = 0;
  for (auto c : cuts) {
    out.push_back(static_cast<double>(c - prev) / static_cast<double>(denominator));
    prev = c;
  }
  out.push_back(static_cast<double>(denominator - prev) / static_cast<double>(denominator));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Continuous simplex sample (normalized exponentials).
inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  double s = 0;
  for (auto& x : v) s += (x = e(rng));
  for (auto& x : v) x /= s;
  return v;
}

/// Raw parent table, independent of Taxonomy's internal indices.
struct RawTree {
  std::map<std::string, std::string> parent;  // id -> parent id ("ROOT" for orders)
  std::map<std::string, Rank> rank;

  explicit RawTree(const std::vector<TaxonRow>& rows) {
    rank["ROOT"] = Rank::Root;
    for (const auto& r : rows) {
      parent[r.taxon_id] = r.parent_id;
      rank[r.taxon_id] = *parse_rank(r.rank);
    }
  }

  bool under(const std::string& ancestor, std::string node) const {
    for (;;) {
      if (node == ancestor) return true;
      if (node == "ROOT") return false;
      node = parent.at(node);
    }
  }

  std::vector<std::string> children(const std::string& id) const {
    std::vector<std::string> out;
    for (const auto& [c, p] : parent) {
      if (p == id) out.push_back(c);
    }
    return out;  // map order == sorted by id
  }

  std::vector<std::string> path_from_root(std::string id) const {
    std::vector<std::string> out{id};
    while (id != "ROOT") out.push_back(id = parent.at(id));
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::vector<std::string> all_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : rank) out.push_back(id);
    return out;
  }
};

/// Brute-force leaf-mass roll-up: for every node, sum p over all species
/// beneath it by scanning the whole species list.
inline std::map<std::string, double> brute_rollup(const RawTree& tree,
                                                  const std::map<std::string, double>& p) {
  std::map<std::string, double> conf;
  for (const auto& id : tree.all_ids()) {
    double s = 0;
    for (const auto& [sp, v] : p) {
      if (tree.under(id, sp)) s += v;
    }
    conf[id] = s;
  }
  return conf;
}

struct PathOracleResult {
  std::string chosen;
  std::vector<std::string> path;
};

/// Enumerates every node and accepts the unique one whose root path follows
/// the max-score child (smallest id on ties) with each step clearing its
/// threshold, and whose own best child (if any) fails its threshold.
inline PathOracleResult brute_greedy(const RawTree& tree, const std::map<std::string, double>& score,
                                     const std::function<double(Rank)>& threshold) {
  auto is_greedy_step = [&](const std::string& child) {
    const auto& parent = tree.parent.at(child);
    for (const auto& sib : tree.children(parent)) {
      if (score.at(sib) > score.at(child)) return false;
      if (score.at(sib) == score.at(child) && sib < child) return false;
    }
    return score.at(child) >= threshold(tree.rank.at(child));
  };
  std::vector<PathOracleResult> hits;
  for (const auto& id : tree.all_ids()) {
    auto path = tree.path_from_root(id);
    bool ok = true;
    for (std::size_t i = 1; i < path.size() && ok; ++i) ok = is_greedy_step(path[i]);
    if (!ok) continue;
    bool extends = false;
    for (const auto& c : tree.children(id)) extends = extends || is_greedy_step(c);
    if (!extends) hits.push_back({id, path});
  }
  if (hits.size() != 1) return {"<ambiguous:" + std::to_string(hits.size()) + ">", {}};
  return hits.front();
}

/// Live-vote selection written independently: latest (timestamp, vote_id) per user.
inline std::vector<IdentificationVote> brute_live(const std::vector<IdentificationVote>& votes) {
  std::set<std::string> users;
  for (const auto& v : votes) users.insert(v.user_id);
  std::vector<IdentificationVote> out;
  for (const auto& u : users) {
    const IdentificationVote* best = nullptr;
    for (const auto& v : votes) {
      if (v.user_id != u) continue;
      if (!best || v.timestamp > best->timestamp ||
          (v.timestamp == best->timestamp && v.vote_id > best->vote_id)) {
        best = &v;
      }
    }
    out.push_back(*best);
  }
  return out;
}

struct ConsensusOracle {
  std::map<std::string, double> share;
  std::optional<std::string> label;
  ConsensusStatus status = ConsensusStatus::Pending;
  double label_share = 0.0;
  double total = 0.0;
  std::size_t count = 0;
};

inline ConsensusOracle brute_consensus(const RawTree& tree,
                                       const std::vector<IdentificationVote>& votes,
                                       const std::map<std::string, double>& weights,
                                       const ConsensusParams& params) {
  ConsensusOracle o;
  auto live = brute_live(votes);  // sorted by user id
  o.count = live.size();
  for (const auto& v : live) o.total += weights.at(v.user_id);
  for (const auto& id : tree.all_ids()) {
    double dep = 0;
    for (const auto& v : live) {
      if (tree.under(id, v.taxon_id)) dep += weights.at(v.user_id);
    }
    o.share[id] = o.total > 0 ? dep / o.total : 0.0;
  }
  if (o.count < params.min_votes) return o;
  auto g = brute_greedy(tree, o.share, [&](Rank) { return params.theta; });
  o.label = g.chosen;
  o.label_share = o.share.at(g.chosen);
  o.status = g.chosen == "ROOT" ? ConsensusStatus::Disputed : ConsensusStatus::Consensus;
  return o;
}

/// Horizontal luma ramp with a vertical component, leaving headroom for
/// brightness shifts.
inline Image gradient_image(int w, int h, int max_value = 200) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int v = (x * max_value) / std::max(1, w - 1);
      int u = (y * 40) / std::max(1, h - 1);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::min(255, v));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::min(255, (v + u) / 2));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::min(255, u * 3));
    }
  }
  return img;
}

inline Image noise_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  return img;
}

inline Image solid_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  }
  return img;
}

}  // namespace insectup::testing
