#include "insectup/service/records.hpp"

namespace insectup::service {

using nlohmann::json;

namespace {

json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> read_optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

Rank rank_from(const json& j) {
  auto r = parse_rank(j.get<std::string>());
  if (!r) throw Error(ErrorCode::StorageFailure, "bad rank in record: " + j.dump());
  return *r;
}

}  // namespace

json to_json(const ClassificationResult& r) {
  json path = json::array();
  for (const auto& s : r.path) path.push_back({{"taxon_id", s.taxon_id}, {"confidence", s.confidence}});
  return {{"chosen", r.chosen},
          {"chosen_rank", std::string(to_string(r.chosen_rank))},
          {"confidence", r.confidence},
          {"path", path},
          {"thresholds_used",
           {{"species", r.thresholds_used.species},
            {"genus", r.thresholds_used.genus},
            {"family", r.thresholds_used.family},
            {"order", r.thresholds_used.order}}}};
}

ClassificationResult classification_from_json(const json& j) {
  ClassificationResult r;
  r.chosen = j.at("chosen").get<std::string>();
  r.chosen_rank = rank_from(j.at("chosen_rank"));
  r.confidence = j.at("confidence").get<double>();
  for (const auto& s : j.at("path")) {
    r.path.push_back({s.at("taxon_id").get<std::string>(), s.at("confidence").get<double>()});
  }
  const auto& t = j.at("thresholds_used");
  r.thresholds_used = {t.at("species").get<double>(), t.at("genus").get<double>(),
                       t.at("family").get<double>(), t.at("order").get<double>()};
  return r;
}

json to_json(const ScreeningVerdict& v) {
  return {{"status", std::string(to_string(v.status))},
          {"matched_observation_id", optional_string(v.matched_observation_id)},
          {"max_species_prob", v.max_species_prob},
          {"entropy", v.entropy}};
}

ScreeningVerdict verdict_from_json(const json& j) {
  ScreeningVerdict v;
  auto s = parse_screening_status(j.at("status").get<std::string>());
  if (!s) throw Error(ErrorCode::StorageFailure, "bad screening status in record");
  v.status = *s;
  v.matched_observation_id = read_optional_string(j, "matched_observation_id");
  v.max_species_prob = j.at("max_species_prob").get<double>();
  v.entropy = j.at("entropy").get<double>();
  return v;
}

json to_json(const ConsensusResult& r) {
  return {{"observation_id", r.observation_id},
          {"status", std::string(to_string(r.status))},
          {"label", optional_string(r.label)},
          {"share", r.share},
          {"total_weight", r.total_weight},
          {"vote_count", r.vote_count}};
}

ConsensusResult consensus_from_json(const json& j) {
  ConsensusResult r;
  r.observation_id = j.at("observation_id").get<std::string>();
  auto s = parse_consensus_status(j.at("status").get<std::string>());
  if (!s) throw Error(ErrorCode::StorageFailure, "bad consensus status in record");
  r.status = *s;
  r.label = read_optional_string(j, "label");
  r.share = j.at("share").get<double>();
  r.total_weight = j.at("total_weight").get<double>();
  r.vote_count = j.at("vote_count").get<std::size_t>();
  return r;
}

json to_json(const IdentificationVote& v) {
  return {{"vote_id", v.vote_id},     {"observation_id", v.observation_id},
          {"user_id", v.user_id},     {"taxon_id", v.taxon_id},
          {"timestamp", v.timestamp}, {"is_expert", v.is_expert}};
}

IdentificationVote vote_from_json(const json& j) {
  return {j.at("vote_id").get<std::string>(),   j.at("observation_id").get<std::string>(),
          j.at("user_id").get<std::string>(),   j.at("taxon_id").get<std::string>(),
          j.at("timestamp").get<std::int64_t>(), j.at("is_expert").get<bool>()};
}

json to_json(const Observation& o) {
  return {{"observation_id", o.observation_id},
          {"image_ref", o.image_ref},
          {"latitude", o.latitude},
          {"longitude", o.longitude},
          {"captured_at", o.captured_at},
          {"submitted_by", o.submitted_by},
          {"perceptual_hash", o.hash.hex()},
          {"screening", to_json(o.screening)},
          {"machine_result", o.machine_result ? to_json(*o.machine_result) : json(nullptr)},
          {"raw_probs_ref", optional_string(o.raw_probs_ref)},
          {"consensus", to_json(o.consensus)},
          {"created_at", o.created_at},
          {"source", o.source}};
}

Observation observation_from_json(const json& j) {
  Observation o;
  o.observation_id = j.at("observation_id").get<std::string>();
  o.image_ref = j.at("image_ref").get<std::string>();
  o.latitude = j.at("latitude").get<double>();
  o.longitude = j.at("longitude").get<double>();
  o.captured_at = j.at("captured_at").get<std::int64_t>();
  o.submitted_by = j.at("submitted_by").get<std::string>();
  o.hash = PerceptualHash::from_hex(j.at("perceptual_hash").get<std::string>());
  o.screening = verdict_from_json(j.at("screening"));
  if (!j.at("machine_result").is_null()) o.machine_result = classification_from_json(j.at("machine_result"));
  o.raw_probs_ref = read_optional_string(j, "raw_probs_ref");
  o.consensus = consensus_from_json(j.at("consensus"));
  o.created_at = j.at("created_at").get<std::int64_t>();
  o.source = j.at("source").get<std::string>();
  return o;
}

json to_json(const UserRecord& u, bool include_secret) {
  json j{{"user_id", u.user_id},
         {"is_expert", u.is_expert},
         {"resolved_count", u.history.resolved},
         {"correct_count", u.history.correct},
         {"weight", user_reliability(u.history)}};
  if (include_secret) j["token_sha256"] = u.token_sha256;
  return j;
}

UserRecord user_from_json(const json& j) {
  UserRecord u;
  u.user_id = j.at("user_id").get<std::string>();
  u.is_expert = j.at("is_expert").get<bool>();
  u.token_sha256 = j.value("token_sha256", "");
  u.history.resolved = j.at("resolved_count").get<std::uint64_t>();
  u.history.correct = j.at("correct_count").get<std::uint64_t>();
  return u;
}

json to_json(const DemographyCell& c) {
  return {{"taxon_id", c.taxon_id},
          {"lat_idx", c.cell.lat_idx},
          {"lon_idx", c.cell.lon_idx},
          {"cell_size", c.cell.cell_size_deg},
          {"year", c.bucket.year},
          {"month", c.bucket.month},
          {"count", c.count},
          {"total", c.total_in_cell_bucket},
          {"relative_frequency", c.relative_frequency}};
}

json to_json(const NoveltyEvent& e) {
  return {{"taxon_id", e.taxon_id},
          {"lat_idx", e.cell.lat_idx},
          {"lon_idx", e.cell.lon_idx},
          {"cell_size", e.cell.cell_size_deg},
          {"first_timestamp", e.first_timestamp},
          {"observation_id", e.observation_id}};
}

json to_json(const TaxonNode& n) {
  return {{"taxon_id", n.taxon_id},
          {"parent_id", n.parent_id.empty() ? json(nullptr) : json(n.parent_id)},
          {"rank", std::string(to_string(n.rank))},
          {"scientific_name", n.scientific_name},
          {"common_name", optional_string(n.common_name)}};
}

}  // namespace insectup::service
