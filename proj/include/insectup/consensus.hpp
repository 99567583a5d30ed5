#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "insectup/error.hpp"
#include "insectup/taxonomy.hpp"

namespace insectup {

struct IdentificationVote {
  std::string vote_id;
  std::string observation_id;
  std::string user_id;
  std::string taxon_id;  // any rank
  std::int64_t timestamp = 0;
  bool is_expert = false;

  friend bool operator==(const IdentificationVote&, const IdentificationVote&) = default;
};

struct UserHistory {
  std::uint64_t resolved = 0;
  std::uint64_t correct = 0;

  friend bool operator==(const UserHistory&, const UserHistory&) = default;
};

/// Laplace-smoothed accuracy (Beta(1,1) posterior mean); strictly inside (0,1).
inline double user_reliability(std::uint64_t resolved, std::uint64_t correct) {
  if (correct > resolved) {
    throw Error(ErrorCode::InvalidHistory, "correct count exceeds resolved count");
  }
  return (static_cast<double>(correct) + 1.0) / (static_cast<double>(resolved) + 2.0);
}

inline double user_reliability(const UserHistory& h) {
  return user_reliability(h.resolved, h.correct);
}

enum class ConsensusStatus { Pending, Consensus, Disputed, ExpertResolved };

constexpr std::string_view to_string(ConsensusStatus s) {
  switch (s) {
    case ConsensusStatus::Pending: return "PENDING";
    case ConsensusStatus::Consensus: return "CONSENSUS";
    case ConsensusStatus::Disputed: return "DISPUTED";
    case ConsensusStatus::ExpertResolved: return "EXPERT_RESOLVED";
  }
  return "?";
}

inline std::optional<ConsensusStatus> parse_consensus_status(std::string_view s) {
  if (s == "PENDING") return ConsensusStatus::Pending;
  if (s == "CONSENSUS") return ConsensusStatus::Consensus;
  if (s == "DISPUTED") return ConsensusStatus::Disputed;
  if (s == "EXPERT_RESOLVED") return ConsensusStatus::ExpertResolved;
  return std::nullopt;
}

struct ConsensusResult {
  std::string observation_id;
  ConsensusStatus status = ConsensusStatus::Pending;
  std::optional<std::string> label;  // ROOT when disputed, none while pending
  double share = 0.0;
  double total_weight = 0.0;
  std::size_t vote_count = 0;

  friend bool operator==(const ConsensusResult&, const ConsensusResult&) = default;
};

struct ConsensusParams {
  double theta = 0.6;
  std::size_t min_votes = 3;

  void validate() const {
    if (!(theta > 0.0 && theta <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "consensus share threshold must lie in (0,1]");
    }
    if (min_votes < 1) throw Error(ErrorCode::InvalidConfig, "min_votes must be at least 1");
  }
};

/// One live vote per user: later timestamp wins, vote_id breaks ties. The
/// result is ordered by user_id so downstream sums do not depend on arrival order.
inline std::vector<IdentificationVote> live_votes(std::span<const IdentificationVote> votes) {
  std::map<std::string, IdentificationVote> by_user;
  for (const auto& v : votes) {
    auto [it, inserted] = by_user.emplace(v.user_id, v);
    if (!inserted) {
      const auto& cur = it->second;
      if (v.timestamp > cur.timestamp ||
          (v.timestamp == cur.timestamp && v.vote_id > cur.vote_id)) {
        it->second = v;
      }
    }
  }
  std::vector<IdentificationVote> out;
  out.reserve(by_user.size());
  for (auto& [_, v] : by_user) out.push_back(std::move(v));
  return out;
}

/// Weight deposited on every taxonomy node by a vote set: each vote credits
/// its taxon and all of that taxon's ancestors.
struct VoteDeposits {
  std::vector<double> deposited;
  double total_weight = 0.0;

  double share(Taxonomy::Index i) const {
    return total_weight > 0.0 ? deposited.at(i) / total_weight : 0.0;
  }
};

inline VoteDeposits deposit_votes(std::span<const IdentificationVote> live, const Taxonomy& t,
                                  const std::map<std::string, double>& weights) {
  VoteDeposits d;
  d.deposited.assign(t.size(), 0.0);
  for (const auto& v : live) {
    if (!t.contains(v.taxon_id) || v.taxon_id == kRootId) {
      throw Error(ErrorCode::UnknownTaxonInVote,
                  "vote " + v.vote_id + " names unknown taxon '" + v.taxon_id + "'");
    }
    auto w = weights.find(v.user_id);
    if (w == weights.end()) {
      throw Error(ErrorCode::MissingWeight, "no reliability weight for user '" + v.user_id + "'");
    }
    d.total_weight += w->second;
    for (auto i = t.index_of(v.taxon_id);; i = t.parent(i)) {
      d.deposited[i] += w->second;
      if (i == Taxonomy::kRoot) break;
    }
  }
  return d;
}

/// Reliability-weighted consensus over the live votes of one observation.
/// The label is found by greedy max-share descent from the root, entering a
/// child only while its share reaches theta.
inline ConsensusResult consensus(std::string observation_id,
                                 std::span<const IdentificationVote> votes, const Taxonomy& t,
                                 const std::map<std::string, double>& weights,
                                 const ConsensusParams& params) {
  auto live = live_votes(votes);
  auto d = deposit_votes(live, t, weights);

  ConsensusResult r;
  r.observation_id = std::move(observation_id);
  r.total_weight = d.total_weight;
  r.vote_count = live.size();
  if (r.vote_count < params.min_votes) {
    r.status = ConsensusStatus::Pending;
    return r;
  }

  Taxonomy::Index cur = Taxonomy::kRoot;
  while (!t.children(cur).empty()) {
    const auto& kids = t.children(cur);
    Taxonomy::Index best = kids.front();
    for (auto c : kids) {
      if (d.share(c) > d.share(best)) best = c;
    }
    if (d.share(best) < params.theta) break;
    cur = best;
  }
  r.label = t.id(cur);
  r.share = d.share(cur);
  r.status = cur == Taxonomy::kRoot ? ConsensusStatus::Disputed : ConsensusStatus::Consensus;
  return r;
}

struct ResolutionOutcome {
  ConsensusResult result;
  std::map<std::string, UserHistory> updated_histories;  // only users that changed
};

/// Expert arbitration. Every other live voter gets one more resolved
/// identification, and a correct one when they named the final label or one
/// of its ancestors.
inline ResolutionOutcome resolve_dispute(const ConsensusResult& current,
                                         std::span<const IdentificationVote> votes,
                                         const IdentificationVote& expert_vote,
                                         const Taxonomy& t,
                                         const std::map<std::string, UserHistory>& histories) {
  if (!expert_vote.is_expert) {
    throw Error(ErrorCode::NotExpert, "user '" + expert_vote.user_id + "' is not an expert");
  }
  if (current.status == ConsensusStatus::ExpertResolved) {
    throw Error(ErrorCode::AlreadyExpertResolved,
                "observation " + current.observation_id + " is already expert-resolved");
  }
  if (current.status == ConsensusStatus::Pending) {
    throw Error(ErrorCode::NotResolvable,
                "observation " + current.observation_id + " has not reached quorum");
  }
  if (!t.contains(expert_vote.taxon_id) || expert_vote.taxon_id == kRootId) {
    throw Error(ErrorCode::UnknownTaxonInVote,
                "expert vote names unknown taxon '" + expert_vote.taxon_id + "'");
  }
  auto final_label = t.index_of(expert_vote.taxon_id);

  std::vector<IdentificationVote> all(votes.begin(), votes.end());
  all.push_back(expert_vote);
  auto live = live_votes(all);

  ResolutionOutcome out;
  for (const auto& v : live) {
    if (v.user_id == expert_vote.user_id) continue;
    UserHistory h;
    if (auto it = histories.find(v.user_id); it != histories.end()) h = it->second;
    h.resolved += 1;
    if (t.contains(v.taxon_id) && t.is_ancestor_or_self(t.index_of(v.taxon_id), final_label)) {
      h.correct += 1;
    }
    out.updated_histories[v.user_id] = h;
  }
  out.result.observation_id = current.observation_id;
  out.result.status = ConsensusStatus::ExpertResolved;
  out.result.label = expert_vote.taxon_id;
  out.result.share = 1.0;
  out.result.total_weight = current.total_weight;
  out.result.vote_count = live.size();
  return out;
}

}  // namespace insectup
