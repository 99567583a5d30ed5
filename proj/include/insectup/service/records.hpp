#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "insectup/classifier.hpp"
#include "insectup/consensus.hpp"
#include "insectup/demography.hpp"
#include "insectup/screening.hpp"

namespace insectup::service {

struct Observation {
  std::string observation_id;
  std::string image_ref;  // SHA-256 of the uploaded bytes
  double latitude = 0.0;
  double longitude = 0.0;
  std::int64_t captured_at = 0;
  std::string submitted_by;
  PerceptualHash hash;
  ScreeningVerdict screening;
  std::optional<ClassificationResult> machine_result;  // absent for duplicates
  std::optional<std::string> raw_probs_ref;
  ConsensusResult consensus;
  std::int64_t created_at = 0;
  std::string source = "upload";  // upload | import

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct UserRecord {
  std::string user_id;
  bool is_expert = false;
  std::string token_sha256;
  UserHistory history;

  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

nlohmann::json to_json(const ClassificationResult& r);
ClassificationResult classification_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ScreeningVerdict& v);
ScreeningVerdict verdict_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ConsensusResult& r);
ConsensusResult consensus_from_json(const nlohmann::json& j);

nlohmann::json to_json(const IdentificationVote& v);
IdentificationVote vote_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Observation& o);
Observation observation_from_json(const nlohmann::json& j);

/// Stored form keeps the token hash; the public form drops it.
nlohmann::json to_json(const UserRecord& u, bool include_secret = true);
UserRecord user_from_json(const nlohmann::json& j);

nlohmann::json to_json(const DemographyCell& c);
nlohmann::json to_json(const NoveltyEvent& e);
nlohmann::json to_json(const TaxonNode& n);

/// Consensus snapshot export: observation_id,status,label,share,vote_count.
inline constexpr std::string_view kConsensusCsvHeader = "observation_id,status,label,share,vote_count";

}  // namespace insectup::service
