#pragma once

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "insectup/classifier.hpp"
#include "insectup/consensus.hpp"
#include "insectup/demography.hpp"
#include "insectup/screening.hpp"
#include "insectup/service/config.hpp"
#include "insectup/service/journal.hpp"
#include "insectup/service/records.hpp"
#include "insectup/taxonomy.hpp"

namespace insectup::service {

enum class OpenMode { ReadWrite, ReadOnly };

struct SubmitRequest {
  std::string image_bytes;
  double latitude = 0.0;
  double longitude = 0.0;
  std::int64_t captured_at = 0;
  std::string user_id;
};

struct ObservationFilter {
  std::optional<ConsensusStatus> status;
  std::optional<ScreeningStatus> screening;
  std::optional<std::string> taxon;  // effective label at or below this taxon
};

struct Page {
  std::vector<Observation> items;
  std::optional<std::string> next_cursor;
};

struct TaxonomyImport {
  std::uint64_t version = 0;
  std::size_t nodes = 0;
  std::size_t species = 0;
};

struct ManifestRow {
  std::size_t line = 0;
  std::string image_path;
  std::string species_id;
  double latitude = 0.0;
  double longitude = 0.0;
  std::int64_t captured_at = 0;
  std::optional<std::string> error;  // set when the row itself could not be parsed
};

struct ImportIssue {
  std::size_t line = 0;
  std::string outcome;  // skipped | failed
  std::string code;
  std::string message;
  std::optional<std::string> matched_observation_id;
};

struct ImportReport {
  std::size_t accepted = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t already_imported = 0;
  std::vector<ImportIssue> issues;
};

/// Parses a dataset manifest (image_path,species_taxon_id,lat,lon,captured_at).
/// captured_at is UTC seconds or an ISO-8601 `YYYY-MM-DDTHH:MM:SSZ` stamp.
std::vector<ManifestRow> parse_manifest(std::string_view text);
std::int64_t parse_timestamp(std::string_view text);

/// The persistent platform: observations, votes, users and taxonomy behind a
/// write-ahead journal plus periodic snapshots under `storage_root`.
///
/// Reads share a lock; writes are serialized and each is one journal record,
/// so a crash leaves either all or none of an operation's effects.
class Platform {
 public:
  using Clock = std::function<std::int64_t()>;

  explicit Platform(Config config, OpenMode mode = OpenMode::ReadWrite, Clock clock = {});
  ~Platform();
  Platform(const Platform&) = delete;
  Platform& operator=(const Platform&) = delete;

  const Config& config() const { return config_; }

  // Taxonomy
  std::shared_ptr<const Taxonomy> taxonomy() const;
  std::uint64_t taxonomy_version() const;
  TaxonomyImport import_taxonomy(std::string_view csv_text);

  // Users
  /// Registers a user and returns their bearer token (generated when absent).
  std::string add_user(const std::string& user_id, bool is_expert,
                       std::optional<std::string> token = std::nullopt);
  std::vector<UserRecord> users() const;
  std::optional<UserRecord> user(const std::string& user_id) const;
  std::optional<std::string> authenticate(std::string_view token) const;

  // Mutations. An idempotency key replays the first outcome.
  Observation submit_observation(const SubmitRequest& req,
                                 std::optional<std::string> idempotency_key = std::nullopt);
  ConsensusResult propose_identification(const std::string& observation_id,
                                         const std::string& user_id, const std::string& taxon_id,
                                         std::optional<std::string> idempotency_key = std::nullopt);
  ConsensusResult expert_resolve(const std::string& observation_id, const std::string& user_id,
                                 const std::string& taxon_id,
                                 std::optional<std::string> idempotency_key = std::nullopt);
  /// Recomputes consensus from the live votes and current weights.
  ConsensusResult recompute(const std::string& observation_id);

  ImportReport import_dataset(std::span<const ManifestRow> rows,
                              const std::filesystem::path& base_dir,
                              const std::function<void(std::size_t done, std::size_t total)>& progress = {});

  // Queries
  std::optional<Observation> observation(const std::string& id) const;
  std::vector<IdentificationVote> votes(const std::string& observation_id) const;
  Page list(const ObservationFilter& filter, std::optional<std::string> cursor,
            std::size_t limit) const;
  std::size_t observation_count() const;

  /// Accepted observations carrying a final label (plus machine labels when
  /// configured).
  std::vector<Occurrence> occurrences() const;
  /// All taxa when `taxon` is empty.
  std::vector<DemographyCell> demography(std::optional<std::string> taxon,
                                         std::optional<double> cell_size) const;
  std::vector<NoveltyEvent> novelty(std::optional<double> cell_size) const;
  std::string consensus_csv() const;

  std::string image_bytes(const std::string& image_ref) const;
  std::optional<std::string> raw_probabilities(const std::string& observation_id) const;

  /// Canonical state document (what snapshots hold, minus bookkeeping).
  nlohmann::json state() const;
  std::string state_digest() const;

  void snapshot();
  Journal& journal_for_testing();

  static std::string encode_cursor(const std::string& observation_id);
  static std::string decode_cursor(std::string_view cursor);

 private:
  struct Scored;

  void load();
  void append(nlohmann::json record);
  void apply(const nlohmann::json& record);
  nlohmann::json snapshot_document() const;
  void restore(const nlohmann::json& doc);
  void rebuild_index();
  std::vector<Occurrence> collect_occurrences() const;

  std::shared_ptr<ModelBackend> backend_for(const std::shared_ptr<const Taxonomy>& t);
  Scored score(const std::string& bytes, const std::shared_ptr<const Taxonomy>& t, bool classify);
  std::string put_blob(const std::string& kind, std::string_view bytes, std::string_view suffix);
  std::filesystem::path blob_path(const std::string& kind, const std::string& digest,
                                  std::string_view suffix) const;
  std::map<std::string, double> weights_for(std::span<const IdentificationVote> live) const;
  std::optional<std::string> effective_label(const Observation& o) const;
  const Taxonomy& require_taxonomy() const;
  void require_writable() const;
  std::optional<nlohmann::json> replay(const std::optional<std::string>& key) const;
  std::string next_observation_id() const;
  std::string next_vote_id() const;

  Config config_;
  OpenMode mode_;
  Clock clock_;
  std::filesystem::path root_;
  int lock_fd_ = -1;

  mutable std::shared_mutex mu_;
  std::unique_ptr<Journal> journal_;
  std::uint64_t seq_ = 0;
  std::size_t since_snapshot_ = 0;

  std::shared_ptr<const Taxonomy> taxonomy_;
  std::uint64_t taxonomy_version_ = 0;

  std::mutex backend_mu_;
  std::shared_ptr<ModelBackend> backend_;
  std::uint64_t backend_version_ = 0;

  std::map<std::string, Observation> observations_;
  std::map<std::string, std::vector<IdentificationVote>> votes_;
  std::map<std::string, UserRecord> users_;
  std::map<std::string, std::string> tokens_;  // token sha256 -> user id
  std::map<std::string, nlohmann::json> idempotency_;
  std::map<std::string, std::string> import_keys_;  // row key -> observation id
  std::uint64_t observation_counter_ = 0;
  std::uint64_t vote_counter_ = 0;

  std::vector<PerceptualHash> blocklist_;
  HashIndex index_;
  std::vector<std::string> anchors_;  // accepted observation ids in index order
};

}  // namespace insectup::service
