#include "insectup/service/platform.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>

#include "insectup/csv.hpp"
#include "insectup/service/backends.hpp"
#include "insectup/service/codec.hpp"
#include "insectup/service/digest.hpp"

namespace insectup::service {

using nlohmann::json;

namespace {

constexpr std::string_view kManifestHeader = "image_path,species_taxon_id,lat,lon,captured_at";

std::string padded(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%08llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

bool is_hex_digest(std::string_view s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

json probabilities_json(const ProbabilityVector& p) {
  json j = json::object();
  for (const auto& [id, v] : p.entries) j[id] = v;
  return j;
}

std::int64_t system_seconds() {
  using namespace std::chrono;
  return duration_cast<seconds>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
  if (text.find('-') == std::string_view::npos || text.front() == '-') {
    return csv::parse_int(text, "captured_at");
  }
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail = 0;
  std::string buf(text);
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &s, &tail) != 7 ||
      tail != 'Z' || buf.size() != 20) {
    throw Error(ErrorCode::BadRequest, "timestamp '" + buf + "' is not UTC seconds or YYYY-MM-DDTHH:MM:SSZ");
  }
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) {
    throw Error(ErrorCode::BadRequest, "timestamp '" + buf + "' is not a valid date");
  }
  auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
  return tp.time_since_epoch().count();
}

std::vector<ManifestRow> parse_manifest(std::string_view text) {
  auto rows = csv::parse(text);
  if (rows.empty()) throw Error(ErrorCode::BadRequest, "manifest is empty");
  std::string header;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) {
    header += (i ? "," : "") + rows[0].fields[i];
  }
  if (header != kManifestHeader) {
    throw Error(ErrorCode::BadRequest, "manifest header must be '" + std::string(kManifestHeader) + "'");
  }
  std::vector<ManifestRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    ManifestRow r;
    r.line = rows[i].line;
    if (f.size() != 5) {
      r.error = "expected 5 fields, found " + std::to_string(f.size());
      out.push_back(std::move(r));
      continue;
    }
    r.image_path = f[0];
    r.species_id = f[1];
    try {
      r.latitude = csv::parse_double(f[2], "lat");
      r.longitude = csv::parse_double(f[3], "lon");
      r.captured_at = parse_timestamp(f[4]);
    } catch (const Error& e) {
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct Platform::Scored {
  std::string digest;
  PerceptualHash hash;
  std::optional<ProbabilityVector> probabilities;
};

Platform::Platform(Config config, OpenMode mode, Clock clock)
    : config_(std::move(config)), mode_(mode), clock_(clock ? std::move(clock) : Clock(system_seconds)) {
  root_ = config_.storage_root;
  if (!config_.blocklist.empty()) blocklist_ = parse_blocklist(read_file(config_.blocklist));
  if (mode_ == OpenMode::ReadWrite) {
    std::error_code ec;
    std::filesystem::create_directories(root_ / "blobs", ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot create store " + root_.string() + ": " + ec.message());
    auto lock_path = root_ / "LOCK";
    lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (lock_fd_ < 0) throw Error(ErrorCode::StorageFailure, "cannot open " + lock_path.string());
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(lock_fd_);
      lock_fd_ = -1;
      throw Error(ErrorCode::StoreLocked, "store " + root_.string() + " is in use by another process");
    }
  }
  load();
}

Platform::~Platform() {
  journal_.reset();
  if (lock_fd_ >= 0) ::close(lock_fd_);
}

void Platform::load() {
  std::uint64_t snapshot_seq = 0;
  auto snap = root_ / "snapshot.json";
  if (std::filesystem::exists(snap)) {
    auto doc = json::parse(read_file(snap), nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::StorageFailure, "snapshot " + snap.string() + " is unreadable");
    restore(doc);
    snapshot_seq = doc.at("seq").get<std::uint64_t>();
  } else {
    rebuild_index();
  }
  seq_ = snapshot_seq;
  auto contents = Journal::read(root_ / "journal.jsonl");
  for (const auto& record : contents.records) {
    auto seq = record.at("seq").get<std::uint64_t>();
    if (seq <= snapshot_seq) continue;
    apply(record);
    seq_ = seq;
    ++since_snapshot_;
  }
  if (mode_ == OpenMode::ReadWrite) {
    journal_ = std::make_unique<Journal>(root_ / "journal.jsonl", contents.valid_bytes);
  }
}

json Platform::state() const {
  json users = json::array();
  for (const auto& [_, u] : users_) users.push_back(to_json(u, true));
  json observations = json::array();
  for (const auto& [_, o] : observations_) observations.push_back(to_json(o));
  json votes = json::object();
  for (const auto& [id, vs] : votes_) {
    json list = json::array();
    for (const auto& v : vs) list.push_back(to_json(v));
    votes[id] = list;
  }
  json idem = json::object();
  for (const auto& [k, v] : idempotency_) idem[k] = v;
  json imports = json::object();
  for (const auto& [k, v] : import_keys_) imports[k] = v;
  return {{"taxonomy",
           taxonomy_ ? json{{"version", taxonomy_version_}, {"csv", taxonomy_->to_csv()}} : json(nullptr)},
          {"users", users},
          {"observations", observations},
          {"votes", votes},
          {"idempotency", idem},
          {"import_keys", imports},
          {"anchors", anchors_},
          {"counters", {{"observation", observation_counter_}, {"vote", vote_counter_}}}};
}

json Platform::snapshot_document() const {
  auto doc = state();
  doc["seq"] = seq_;
  return doc;
}

void Platform::restore(const json& doc) {
  if (!doc.at("taxonomy").is_null()) {
    auto t = Taxonomy::from_csv(doc["taxonomy"].at("csv").get<std::string>());
    taxonomy_version_ = doc["taxonomy"].at("version").get<std::uint64_t>();
    t.set_version(taxonomy_version_);
    taxonomy_ = std::make_shared<const Taxonomy>(std::move(t));
  }
  for (const auto& u : doc.at("users")) {
    auto rec = user_from_json(u);
    if (!rec.token_sha256.empty()) tokens_[rec.token_sha256] = rec.user_id;
    users_[rec.user_id] = std::move(rec);
  }
  for (const auto& o : doc.at("observations")) {
    auto obs = observation_from_json(o);
    observations_[obs.observation_id] = std::move(obs);
  }
  for (const auto& [id, list] : doc.at("votes").items()) {
    for (const auto& v : list) votes_[id].push_back(vote_from_json(v));
  }
  for (const auto& [k, v] : doc.at("idempotency").items()) idempotency_[k] = v;
  for (const auto& [k, v] : doc.at("import_keys").items()) import_keys_[k] = v.get<std::string>();
  anchors_ = doc.at("anchors").get<std::vector<std::string>>();
  observation_counter_ = doc.at("counters").at("observation").get<std::uint64_t>();
  vote_counter_ = doc.at("counters").at("vote").get<std::uint64_t>();
  rebuild_index();
}

void Platform::rebuild_index() {
  index_ = HashIndex{};
  for (auto h : blocklist_) index_.insert(h, blocklist_id(h));
  for (const auto& id : anchors_) index_.insert(observations_.at(id).hash, id);
}

void Platform::apply(const json& record) {
  const auto type = record.at("type").get<std::string>();
  auto remember = [&](const char* kind, const json& value) {
    if (auto it = record.find("idempotency_key"); it != record.end()) {
      idempotency_[it->get<std::string>()] = {{"kind", kind}, {"value", value}};
    }
  };
  if (type == "taxonomy") {
    auto t = Taxonomy::from_csv(record.at("csv").get<std::string>());
    taxonomy_version_ = record.at("version").get<std::uint64_t>();
    t.set_version(taxonomy_version_);
    taxonomy_ = std::make_shared<const Taxonomy>(std::move(t));
  } else if (type == "user") {
    auto u = user_from_json(record.at("user"));
    if (auto old = users_.find(u.user_id); old != users_.end()) tokens_.erase(old->second.token_sha256);
    if (!u.token_sha256.empty()) tokens_[u.token_sha256] = u.user_id;
    users_[u.user_id] = std::move(u);
  } else if (type == "observation") {
    auto o = observation_from_json(record.at("observation"));
    ++observation_counter_;
    if (o.screening.status == ScreeningStatus::Accepted) {
      index_.insert(o.hash, o.observation_id);
      anchors_.push_back(o.observation_id);
    }
    if (auto it = record.find("import_key"); it != record.end()) {
      import_keys_[it->get<std::string>()] = o.observation_id;
    }
    remember("observation", record.at("observation"));
    observations_[o.observation_id] = std::move(o);
  } else if (type == "vote" || type == "resolve") {
    auto v = vote_from_json(record.at("vote"));
    ++vote_counter_;
    auto& obs = observations_.at(v.observation_id);
    obs.consensus = consensus_from_json(record.at("consensus"));
    votes_[v.observation_id].push_back(std::move(v));
    if (type == "resolve") {
      for (const auto& [user, h] : record.at("histories").items()) {
        auto& u = users_[user];
        u.user_id = user;
        u.history = {h.at("resolved").get<std::uint64_t>(), h.at("correct").get<std::uint64_t>()};
      }
      if (record.value("rescued", false)) {
        obs.screening.status = ScreeningStatus::Accepted;
        index_.insert(obs.hash, obs.observation_id);
        anchors_.push_back(obs.observation_id);
      }
    }
    remember("consensus", record.at("consensus"));
  } else if (type == "recompute") {
    auto c = consensus_from_json(record.at("consensus"));
    observations_.at(c.observation_id).consensus = c;
  } else {
    throw Error(ErrorCode::StorageFailure, "unknown journal record type '" + type + "'");
  }
}

void Platform::append(json record) {
  record["seq"] = seq_ + 1;
  journal_->append(record);
  ++seq_;
  apply(record);
  if (config_.snapshot_every > 0 && ++since_snapshot_ >= config_.snapshot_every) {
    write_file_atomic(root_ / "snapshot.json", snapshot_document().dump());
    journal_->clear();
    since_snapshot_ = 0;
  }
}

void Platform::snapshot() {
  require_writable();
  std::unique_lock lock(mu_);
  write_file_atomic(root_ / "snapshot.json", snapshot_document().dump());
  journal_->clear();
  since_snapshot_ = 0;
}

Journal& Platform::journal_for_testing() {
  require_writable();
  return *journal_;
}

void Platform::require_writable() const {
  if (mode_ != OpenMode::ReadWrite) throw Error(ErrorCode::StoreLocked, "store opened read-only");
}

const Taxonomy& Platform::require_taxonomy() const {
  if (!taxonomy_) throw Error(ErrorCode::InvalidConfig, "no taxonomy loaded; run import-taxonomy first");
  return *taxonomy_;
}

std::optional<json> Platform::replay(const std::optional<std::string>& key) const {
  if (!key) return std::nullopt;
  auto it = idempotency_.find(*key);
  if (it == idempotency_.end()) return std::nullopt;
  return it->second.at("value");
}

std::string Platform::next_observation_id() const { return padded("obs-", observation_counter_ + 1); }
std::string Platform::next_vote_id() const { return padded("vote-", vote_counter_ + 1); }

std::shared_ptr<const Taxonomy> Platform::taxonomy() const {
  std::shared_lock lock(mu_);
  return taxonomy_;
}

std::uint64_t Platform::taxonomy_version() const {
  std::shared_lock lock(mu_);
  return taxonomy_version_;
}

TaxonomyImport Platform::import_taxonomy(std::string_view csv_text) {
  require_writable();
  auto t = Taxonomy::from_csv(csv_text);
  std::unique_lock lock(mu_);
  // Stored records must stay meaningful under the new tree.
  std::set<std::string> missing;
  auto need = [&](const std::optional<std::string>& id) {
    if (id && *id != kRootId && !t.contains(*id)) missing.insert(*id);
  };
  for (const auto& [_, o] : observations_) {
    need(o.consensus.label);
    if (o.machine_result) need(o.machine_result->chosen);
  }
  for (const auto& [_, vs] : votes_) {
    for (const auto& v : vs) need(v.taxon_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::InvalidArgument, "new taxonomy drops taxa still referenced by the store: " + list);
  }
  TaxonomyImport report{taxonomy_version_ + 1, t.size(), t.species().size()};
  append({{"type", "taxonomy"}, {"csv", t.to_csv()}, {"version", report.version}});
  return report;
}

std::string Platform::add_user(const std::string& user_id, bool is_expert, std::optional<std::string> token) {
  require_writable();
  if (user_id.empty()) throw Error(ErrorCode::InvalidArgument, "user id must not be empty");
  if (token && token->empty()) throw Error(ErrorCode::InvalidArgument, "token must not be empty");
  std::string secret = token ? *token : random_token();
  std::unique_lock lock(mu_);
  if (users_.count(user_id) && !users_.at(user_id).token_sha256.empty()) {
    throw Error(ErrorCode::InvalidArgument, "user '" + user_id + "' already exists");
  }
  auto hash = sha256_hex(secret);
  if (tokens_.count(hash)) throw Error(ErrorCode::InvalidArgument, "token already in use");
  UserRecord u{user_id, is_expert, hash, {}};
  if (auto it = users_.find(user_id); it != users_.end()) u.history = it->second.history;
  append({{"type", "user"}, {"user", to_json(u, true)}});
  return secret;
}

std::vector<UserRecord> Platform::users() const {
  std::shared_lock lock(mu_);
  std::vector<UserRecord> out;
  for (const auto& [_, u] : users_) out.push_back(u);
  return out;
}

std::optional<UserRecord> Platform::user(const std::string& user_id) const {
  std::shared_lock lock(mu_);
  auto it = users_.find(user_id);
  if (it == users_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> Platform::authenticate(std::string_view token) const {
  if (token.empty()) return std::nullopt;
  auto hash = sha256_hex(token);
  std::shared_lock lock(mu_);
  auto it = tokens_.find(hash);
  if (it == tokens_.end()) return std::nullopt;
  return it->second;
}

std::shared_ptr<ModelBackend> Platform::backend_for(const std::shared_ptr<const Taxonomy>& t) {
  std::lock_guard lock(backend_mu_);
  if (!backend_ || backend_version_ != t->version()) {
    backend_ = make_backend(config_.backend, *t);
    backend_version_ = t->version();
  }
  return backend_;
}

Platform::Scored Platform::score(const std::string& bytes, const std::shared_ptr<const Taxonomy>& t,
                                 bool classify) {
  Scored s;
  auto img = decode_image(bytes);
  s.digest = sha256_hex(bytes);
  s.hash = perceptual_hash(img);
  if (classify) {
    auto backend = backend_for(t);
    auto p = backend->score(BackendInput{preprocess(img), s.digest});
    validate(p, *t);
    s.probabilities = std::move(p);
  }
  return s;
}

std::filesystem::path Platform::blob_path(const std::string& kind, const std::string& digest,
                                          std::string_view suffix) const {
  return root_ / "blobs" / kind / digest.substr(0, 2) / (digest + std::string(suffix));
}

std::string Platform::put_blob(const std::string& kind, std::string_view bytes, std::string_view suffix) {
  auto digest = sha256_hex(bytes);
  auto path = blob_path(kind, digest, suffix);
  if (!std::filesystem::exists(path)) {
    std::filesystem::create_directories(path.parent_path());
    write_file_atomic(path, bytes);
  }
  return digest;
}

Observation Platform::submit_observation(const SubmitRequest& req, std::optional<std::string> key) {
  require_writable();
  {
    std::shared_lock lock(mu_);
    if (auto r = replay(key)) return observation_from_json(*r);
  }
  if (!valid_coordinates(req.latitude, req.longitude)) {
    throw Error(ErrorCode::OutOfRangeCoordinates, "coordinates (" + csv::format_number(req.latitude) + ", " +
                                                      csv::format_number(req.longitude) + ") out of range");
  }
  if (req.user_id.empty()) throw Error(ErrorCode::BadRequest, "submission needs a user");
  auto t = taxonomy();
  if (!t) require_taxonomy();

  // Score outside the lock; a hash already in the index needs no scores.
  auto probe = score(req.image_bytes, t, false);
  bool duplicate;
  {
    std::shared_lock lock(mu_);
    duplicate = duplicate_check(probe.hash, index_, config_.screening.d_max).has_value();
  }
  auto scored = duplicate ? probe : score(req.image_bytes, t, true);
  put_blob("images", req.image_bytes, "");

  std::unique_lock lock(mu_);
  if (auto r = replay(key)) return observation_from_json(*r);
  if (taxonomy_ != t && scored.probabilities) {
    lock.unlock();
    return submit_observation(req, key);  // taxonomy swapped mid-flight: score again
  }
  auto verdict = assess(scored.hash, scored.probabilities ? &*scored.probabilities : nullptr, index_,
                        config_.screening);

  Observation o;
  o.observation_id = next_observation_id();
  o.image_ref = scored.digest;
  o.latitude = req.latitude;
  o.longitude = req.longitude;
  o.captured_at = req.captured_at;
  o.submitted_by = req.user_id;
  o.hash = scored.hash;
  o.screening = verdict;
  if (verdict.status != ScreeningStatus::FlaggedDuplicate) {
    o.machine_result = classify_hierarchical(rollup(*scored.probabilities, *t), *t, config_.tau);
    o.raw_probs_ref = put_blob("probs", probabilities_json(*scored.probabilities).dump(), ".json");
  }
  o.consensus.observation_id = o.observation_id;
  o.created_at = clock_();
  o.source = "upload";

  json record{{"type", "observation"}, {"observation", to_json(o)}};
  if (key) record["idempotency_key"] = *key;
  append(std::move(record));
  return o;
}

std::map<std::string, double> Platform::weights_for(std::span<const IdentificationVote> live) const {
  std::map<std::string, double> w;
  for (const auto& v : live) {
    auto it = users_.find(v.user_id);
    w[v.user_id] = user_reliability(it == users_.end() ? UserHistory{} : it->second.history);
  }
  return w;
}

ConsensusResult Platform::propose_identification(const std::string& observation_id, const std::string& user_id,
                                                 const std::string& taxon_id, std::optional<std::string> key) {
  require_writable();
  std::unique_lock lock(mu_);
  if (auto r = replay(key)) return consensus_from_json(*r);
  auto it = observations_.find(observation_id);
  if (it == observations_.end()) throw Error(ErrorCode::NoSuchObservation, "no observation " + observation_id);
  const auto& o = it->second;
  if (o.screening.status == ScreeningStatus::FlaggedDuplicate) {
    throw Error(ErrorCode::ObservationQuarantined,
                observation_id + " duplicates " + o.screening.matched_observation_id.value_or("?"));
  }
  const auto& t = require_taxonomy();
  if (taxon_id == kRootId || !t.contains(taxon_id)) {
    throw Error(ErrorCode::UnknownTaxon, "unknown taxon '" + taxon_id + "'");
  }
  auto u = users_.find(user_id);
  if (u == users_.end() || u->second.token_sha256.empty()) {
    throw Error(ErrorCode::Unauthorized, "unknown user '" + user_id + "'");
  }
  IdentificationVote vote{next_vote_id(), observation_id, user_id, taxon_id, clock_(), u->second.is_expert};

  ConsensusResult result = o.consensus;
  if (o.consensus.status != ConsensusStatus::ExpertResolved) {
    auto all = votes_[observation_id];
    all.push_back(vote);
    auto weights = weights_for(live_votes(all));
    result = consensus(observation_id, all, t, weights, config_.consensus);
  }
  json record{{"type", "vote"}, {"vote", to_json(vote)}, {"consensus", to_json(result)}};
  if (key) record["idempotency_key"] = *key;
  append(std::move(record));
  return result;
}

ConsensusResult Platform::expert_resolve(const std::string& observation_id, const std::string& user_id,
                                         const std::string& taxon_id, std::optional<std::string> key) {
  require_writable();
  std::unique_lock lock(mu_);
  if (auto r = replay(key)) return consensus_from_json(*r);
  auto u = users_.find(user_id);
  if (u == users_.end() || !u->second.is_expert) {
    throw Error(ErrorCode::NotExpert, "user '" + user_id + "' is not an expert");
  }
  auto it = observations_.find(observation_id);
  if (it == observations_.end()) throw Error(ErrorCode::NoSuchObservation, "no observation " + observation_id);
  const auto& o = it->second;
  if (o.screening.status == ScreeningStatus::FlaggedDuplicate) {
    throw Error(ErrorCode::ObservationQuarantined, observation_id + " is a flagged duplicate");
  }
  const auto& t = require_taxonomy();
  IdentificationVote vote{next_vote_id(), observation_id, user_id, taxon_id, clock_(), true};
  const auto& prior = votes_[observation_id];
  std::map<std::string, UserHistory> histories;
  for (const auto& v : prior) {
    if (auto h = users_.find(v.user_id); h != users_.end()) histories[v.user_id] = h->second.history;
  }
  auto outcome = resolve_dispute(o.consensus, prior, vote, t, histories);

  // A quarantined no-insect photo confirmed by an expert rejoins the data,
  // unless a near-duplicate was accepted meanwhile.
  bool rescued = o.screening.status == ScreeningStatus::FlaggedNoInsect &&
                 !duplicate_check(o.hash, index_, config_.screening.d_max);
  json h = json::object();
  for (const auto& [user, hist] : outcome.updated_histories) {
    h[user] = {{"resolved", hist.resolved}, {"correct", hist.correct}};
  }
  json record{{"type", "resolve"},        {"vote", to_json(vote)}, {"consensus", to_json(outcome.result)},
              {"histories", h},           {"rescued", rescued}};
  if (key) record["idempotency_key"] = *key;
  append(std::move(record));
  return outcome.result;
}

ConsensusResult Platform::recompute(const std::string& observation_id) {
  require_writable();
  std::unique_lock lock(mu_);
  auto it = observations_.find(observation_id);
  if (it == observations_.end()) throw Error(ErrorCode::NoSuchObservation, "no observation " + observation_id);
  const auto& o = it->second;
  if (o.consensus.status == ConsensusStatus::ExpertResolved ||
      o.screening.status == ScreeningStatus::FlaggedDuplicate) {
    return o.consensus;
  }
  const auto& all = votes_[observation_id];
  auto result = consensus(observation_id, all, require_taxonomy(), weights_for(live_votes(all)), config_.consensus);
  if (result != o.consensus) append({{"type", "recompute"}, {"consensus", to_json(result)}});
  return result;
}

ImportReport Platform::import_dataset(std::span<const ManifestRow> rows, const std::filesystem::path& base_dir,
                                      const std::function<void(std::size_t, std::size_t)>& progress) {
  require_writable();
  auto t = taxonomy();
  if (!t) require_taxonomy();
  ScreeningConfig trusted = config_.screening;
  trusted.presence_gate = false;  // curated labels: the photo does show an insect

  ImportReport report;
  auto issue = [&](const ManifestRow& r, const char* outcome, std::string code, std::string message,
                   std::optional<std::string> matched = std::nullopt) {
    report.issues.push_back({r.line, outcome, std::move(code), std::move(message), std::move(matched)});
  };
  std::size_t done = 0;
  for (const auto& row : rows) {
    try {
      if (row.error) throw Error(ErrorCode::BadRequest, *row.error);
      if (!t->contains(row.species_id) || t->node(row.species_id).rank != Rank::Species) {
        throw Error(ErrorCode::UnknownTaxon, "'" + row.species_id + "' is not a species in the taxonomy");
      }
      if (!valid_coordinates(row.latitude, row.longitude)) {
        throw Error(ErrorCode::OutOfRangeCoordinates, "coordinates out of range");
      }
      std::filesystem::path path(row.image_path);
      if (path.is_relative()) path = base_dir / path;
      auto bytes = read_file(path);
      auto digest = sha256_hex(bytes);
      auto row_key = sha256_hex(digest + "\x1f" + row.species_id + "\x1f" + csv::format_number(row.latitude) +
                                "\x1f" + csv::format_number(row.longitude) + "\x1f" +
                                std::to_string(row.captured_at));
      std::optional<HashMatch> dup;
      auto probe = score(bytes, t, false);
      {
        std::shared_lock lock(mu_);
        if (import_keys_.count(row_key)) {
          ++report.already_imported;
          if (progress) progress(++done, rows.size());
          continue;
        }
        dup = duplicate_check(probe.hash, index_, config_.screening.d_max);
      }
      if (dup) {
        ++report.skipped;
        issue(row, "skipped", "Duplicate", "duplicate image", dup->observation_id);
        if (progress) progress(++done, rows.size());
        continue;
      }
      auto scored = score(bytes, t, true);
      put_blob("images", bytes, "");

      std::unique_lock lock(mu_);
      if (import_keys_.count(row_key)) {
        ++report.already_imported;
      } else if (auto v = assess(scored.hash, &*scored.probabilities, index_, trusted);
                 v.status == ScreeningStatus::FlaggedDuplicate) {
        ++report.skipped;
        issue(row, "skipped", "Duplicate", "duplicate image", v.matched_observation_id);
      } else {
        Observation o;
        o.observation_id = next_observation_id();
        o.image_ref = scored.digest;
        o.latitude = row.latitude;
        o.longitude = row.longitude;
        o.captured_at = row.captured_at;
        o.submitted_by = "import";
        o.hash = scored.hash;
        o.screening = v;
        o.machine_result = classify_hierarchical(rollup(*scored.probabilities, *t), *t, config_.tau);
        o.raw_probs_ref = put_blob("probs", probabilities_json(*scored.probabilities).dump(), ".json");
        o.consensus = {o.observation_id, ConsensusStatus::ExpertResolved, row.species_id, 1.0, 0.0, 0};
        o.created_at = clock_();
        o.source = "import";
        append({{"type", "observation"}, {"observation", to_json(o)}, {"import_key", row_key}});
        ++report.accepted;
      }
    } catch (const Error& e) {
      ++report.failed;
      issue(row, "failed", std::string(e.code_name()), e.what());
    }
    if (progress) progress(++done, rows.size());
  }
  return report;
}

std::optional<Observation> Platform::observation(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = observations_.find(id);
  if (it == observations_.end()) return std::nullopt;
  return it->second;
}

std::vector<IdentificationVote> Platform::votes(const std::string& observation_id) const {
  std::shared_lock lock(mu_);
  auto it = votes_.find(observation_id);
  if (it == votes_.end()) return {};
  return it->second;
}

std::size_t Platform::observation_count() const {
  std::shared_lock lock(mu_);
  return observations_.size();
}

std::optional<std::string> Platform::effective_label(const Observation& o) const {
  const auto& c = o.consensus;
  if ((c.status == ConsensusStatus::Consensus || c.status == ConsensusStatus::ExpertResolved) && c.label &&
      *c.label != kRootId) {
    return c.label;
  }
  if (o.machine_result && !o.machine_result->is_root()) return o.machine_result->chosen;
  return std::nullopt;
}

std::string Platform::encode_cursor(const std::string& observation_id) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out = "c";
  for (unsigned char c : observation_id) {
    out += kDigits[c >> 4];
    out += kDigits[c & 0xf];
  }
  return out;
}

std::string Platform::decode_cursor(std::string_view cursor) {
  if (cursor.size() < 3 || cursor[0] != 'c' || cursor.size() % 2 != 1) {
    throw Error(ErrorCode::BadCursor, "malformed cursor");
  }
  std::string out;
  for (std::size_t i = 1; i < cursor.size(); i += 2) {
    int v = 0;
    for (char c : cursor.substr(i, 2)) {
      int d = c >= '0' && c <= '9' ? c - '0' : c >= 'a' && c <= 'f' ? c - 'a' + 10 : -1;
      if (d < 0) throw Error(ErrorCode::BadCursor, "malformed cursor");
      v = v * 16 + d;
    }
    out += static_cast<char>(v);
  }
  return out;
}

Page Platform::list(const ObservationFilter& filter, std::optional<std::string> cursor, std::size_t limit) const {
  if (limit < 1) throw Error(ErrorCode::BadFilter, "limit must be positive");
  std::string after = cursor ? decode_cursor(*cursor) : std::string();
  std::shared_lock lock(mu_);
  std::optional<Taxonomy::Index> taxon;
  if (filter.taxon) {
    if (!taxonomy_ || !taxonomy_->contains(*filter.taxon)) {
      throw Error(ErrorCode::BadFilter, "unknown taxon '" + *filter.taxon + "'");
    }
    taxon = taxonomy_->index_of(*filter.taxon);
  }
  Page page;
  auto it = cursor ? observations_.upper_bound(after) : observations_.begin();
  for (; it != observations_.end(); ++it) {
    const auto& o = it->second;
    if (filter.status && o.consensus.status != *filter.status) continue;
    if (filter.screening && o.screening.status != *filter.screening) continue;
    if (taxon) {
      auto label = effective_label(o);
      if (!label || !taxonomy_->contains(*label) ||
          !taxonomy_->is_ancestor_or_self(*taxon, taxonomy_->index_of(*label))) {
        continue;
      }
    }
    if (page.items.size() == limit) {
      page.next_cursor = encode_cursor(page.items.back().observation_id);
      break;
    }
    page.items.push_back(o);
  }
  return page;
}

std::vector<Occurrence> Platform::occurrences() const {
  std::shared_lock lock(mu_);
  return collect_occurrences();
}

std::vector<Occurrence> Platform::collect_occurrences() const {
  std::vector<Occurrence> out;
  for (const auto& [id, o] : observations_) {
    if (o.screening.status != ScreeningStatus::Accepted) continue;
    const auto& c = o.consensus;
    std::optional<std::string> label;
    if ((c.status == ConsensusStatus::Consensus || c.status == ConsensusStatus::ExpertResolved) && c.label &&
        *c.label != kRootId) {
      label = c.label;
    } else if (config_.include_machine_labels && o.machine_result && !o.machine_result->is_root()) {
      label = o.machine_result->chosen;
    }
    if (label) out.push_back({id, *label, o.latitude, o.longitude, o.captured_at});
  }
  return out;
}

std::vector<DemographyCell> Platform::demography(std::optional<std::string> taxon,
                                                 std::optional<double> cell_size) const {
  double size = cell_size.value_or(config_.cell_size);
  if (!(size > 0.0) || !std::isfinite(size)) throw Error(ErrorCode::BadFilter, "cell_size must be positive");
  std::shared_lock lock(mu_);
  if (!taxonomy_) {
    if (taxon) throw Error(ErrorCode::UnknownTaxon, "no taxonomy loaded");
    return {};
  }
  const auto& t = *taxonomy_;
  auto occ = collect_occurrences();
  std::set<std::string> taxa;
  if (taxon) {
    if (!t.contains(*taxon)) throw Error(ErrorCode::UnknownTaxon, "unknown taxon '" + *taxon + "'");
    taxa.insert(*taxon);
  } else {
    for (const auto& o : occ) {
      for (auto i = t.index_of(o.taxon_id); i != Taxonomy::kRoot; i = t.parent(i)) taxa.insert(t.id(i));
    }
  }
  std::vector<DemographyCell> rows;
  for (const auto& id : taxa) {
    auto part = aggregate(occ, id, size, t);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

std::vector<NoveltyEvent> Platform::novelty(std::optional<double> cell_size) const {
  double size = cell_size.value_or(config_.cell_size);
  if (!(size > 0.0) || !std::isfinite(size)) throw Error(ErrorCode::BadFilter, "cell_size must be positive");
  std::shared_lock lock(mu_);
  if (!taxonomy_) return {};
  return novelty_scan(collect_occurrences(), *taxonomy_, size);
}

std::string Platform::consensus_csv() const {
  std::shared_lock lock(mu_);
  std::string out(kConsensusCsvHeader);
  out += '\n';
  for (const auto& [id, o] : observations_) {
    const auto& c = o.consensus;
    csv::append_row(out, {id, std::string(to_string(c.status)), c.label.value_or(""),
                          csv::format_number(c.share), std::to_string(c.vote_count)});
  }
  return out;
}

std::string Platform::image_bytes(const std::string& image_ref) const {
  if (!is_hex_digest(image_ref)) throw Error(ErrorCode::BadRequest, "bad image reference");
  auto path = blob_path("images", image_ref, "");
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::StorageFailure, "image " + image_ref + " missing");
  return read_file(path);
}

std::optional<std::string> Platform::raw_probabilities(const std::string& observation_id) const {
  auto o = observation(observation_id);
  if (!o) throw Error(ErrorCode::NoSuchObservation, "no observation " + observation_id);
  if (!o->raw_probs_ref) return std::nullopt;
  return read_file(blob_path("probs", *o->raw_probs_ref, ".json"));
}

std::string Platform::state_digest() const {
  std::shared_lock lock(mu_);
  return sha256_hex(state().dump());
}

}  // namespace insectup::service
