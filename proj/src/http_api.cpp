#include "insectup/service/http_api.hpp"

#include <httplib.h>
#include <json.hpp>

#include <charconv>

#include "insectup/csv.hpp"

namespace insectup::service {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadRequest:
    case ErrorCode::BadFilter:
    case ErrorCode::BadCursor:
    case ErrorCode::InvalidArgument:
    case ErrorCode::OutOfRangeCoordinates:
    case ErrorCode::OutOfRange:
    case ErrorCode::UndecodableImage:
    case ErrorCode::EmptyImage:
    case ErrorCode::UnknownTaxon:
    case ErrorCode::UnknownTaxonInVote:
      return 400;
    case ErrorCode::Unauthorized:
      return 401;
    case ErrorCode::NotExpert:
      return 403;
    case ErrorCode::NoSuchObservation:
      return 404;
    case ErrorCode::ObservationQuarantined:
    case ErrorCode::AlreadyExpertResolved:
    case ErrorCode::NotResolvable:
      return 409;
    case ErrorCode::KeyMismatch:
    case ErrorCode::InvalidProbabilities:
      return 502;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::StoreLocked:
      return 503;
    default:
      return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, http_status(code), {{"code", std::string(to_string(code))}, {"message", message}});
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  auto v = req.get_param_value(name);
  if (v.empty()) return std::nullopt;
  return v;
}

std::optional<double> number_param(const httplib::Request& req, const char* name) {
  auto v = param(req, name);
  if (!v) return std::nullopt;
  try {
    return csv::parse_double(*v, name);
  } catch (const Error&) {
    throw Error(ErrorCode::BadFilter, std::string(name) + " must be a number");
  }
}

std::size_t limit_param(const httplib::Request& req) {
  auto v = param(req, "limit");
  if (!v) return 50;
  long long n = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), n);
  if (ec != std::errc() || p != v->data() + v->size() || n < 1 || n > 1000) {
    throw Error(ErrorCode::BadFilter, "limit must be an integer in [1, 1000]");
  }
  return static_cast<std::size_t>(n);
}

bool wants_csv(const httplib::Request& req) {
  auto f = param(req, "format");
  if (!f || *f == "json") return false;
  if (*f == "csv") return true;
  throw Error(ErrorCode::BadFilter, "format must be json or csv");
}

json body_json(const httplib::Request& req) {
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
  return j;
}

std::string string_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
    throw Error(ErrorCode::BadRequest, std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

json page_json(const Page& page) {
  json items = json::array();
  for (const auto& o : page.items) items.push_back(to_json(o));
  return {{"items", items}, {"next_cursor", page.next_cursor ? json(*page.next_cursor) : json(nullptr)}};
}

std::string sniff_image_type(std::string_view bytes) {
  if (bytes.starts_with("\x89PNG")) return "image/png";
  if (bytes.starts_with("\xff\xd8")) return "image/jpeg";
  if (bytes.starts_with("GIF8")) return "image/gif";
  if (bytes.starts_with("BM")) return "image/bmp";
  return "application/octet-stream";
}

}  // namespace

ApiServer::ApiServer(Platform& platform) : platform_(platform), server_(std::make_unique<httplib::Server>()) {
  routes();
}

ApiServer::~ApiServer() { stop(); }

httplib::Server& ApiServer::server() { return *server_; }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool ApiServer::run() { return server_->listen_after_bind(); }

void ApiServer::stop() {
  if (server_->is_running()) server_->stop();
}

void ApiServer::routes() {
  auto& s = *server_;
  auto& p = platform_;

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::StorageFailure, e.what());
    }
  });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty() && res.status == 404) {
      send_error(res, ErrorCode::BadRequest, "no such route");
      res.status = 404;
    }
  });

  auto authed = [&p](const httplib::Request& req) {
    auto header = req.get_header_value("Authorization");
    constexpr std::string_view kBearer = "Bearer ";
    if (!std::string_view(header).starts_with(kBearer)) {
      throw Error(ErrorCode::Unauthorized, "missing bearer token");
    }
    auto user = p.authenticate(std::string_view(header).substr(kBearer.size()));
    if (!user) throw Error(ErrorCode::Unauthorized, "invalid bearer token");
    return *user;
  };
  auto idem = [](const httplib::Request& req, const std::string& user,
                 const std::string& scope) -> std::optional<std::string> {
    auto key = req.get_header_value("Idempotency-Key");
    if (key.empty()) return std::nullopt;
    if (key.size() > 200) throw Error(ErrorCode::BadRequest, "Idempotency-Key too long");
    return user + "\x1f" + scope + "\x1f" + key;
  };

  s.Get("/api/v1/health", [&p](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"taxonomy_version", p.taxonomy_version()},
                         {"observations", p.observation_count()}});
  });

  s.Get("/api/v1/me", [&p, authed](const httplib::Request& req, httplib::Response& res) {
    auto user = p.user(authed(req));
    send_json(res, 200, to_json(*user, false));
  });

  s.Post("/api/v1/observations", [&p, authed, idem](const httplib::Request& req, httplib::Response& res) {
    auto user = authed(req);
    if (!req.is_multipart_form_data() || !req.has_file("image") || !req.has_file("metadata")) {
      throw Error(ErrorCode::BadRequest, "expected multipart form with 'image' and 'metadata'");
    }
    auto meta = json::parse(req.get_file_value("metadata").content, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) throw Error(ErrorCode::BadRequest, "metadata must be a JSON object");
    SubmitRequest sub;
    sub.image_bytes = req.get_file_value("image").content;
    sub.user_id = user;
    try {
      sub.latitude = meta.at("latitude").get<double>();
      sub.longitude = meta.at("longitude").get<double>();
      const auto& at = meta.at("captured_at");
      sub.captured_at = at.is_string() ? parse_timestamp(at.get<std::string>()) : at.get<std::int64_t>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::BadRequest, "metadata needs numeric latitude, longitude and captured_at");
    }
    auto o = p.submit_observation(sub, idem(req, user, "submit"));
    send_json(res, 201, to_json(o));
  });

  s.Get("/api/v1/observations", [&p](const httplib::Request& req, httplib::Response& res) {
    ObservationFilter f;
    if (auto v = param(req, "status")) {
      f.status = parse_consensus_status(*v);
      if (!f.status) throw Error(ErrorCode::BadFilter, "unknown status '" + *v + "'");
    }
    if (auto v = param(req, "screening")) {
      f.screening = parse_screening_status(*v);
      if (!f.screening) throw Error(ErrorCode::BadFilter, "unknown screening status '" + *v + "'");
    }
    f.taxon = param(req, "taxon");
    send_json(res, 200, page_json(p.list(f, param(req, "cursor"), limit_param(req))));
  });

  s.Get(R"(/api/v1/observations/([^/]+))", [&p](const httplib::Request& req, httplib::Response& res) {
    auto o = p.observation(req.matches[1]);
    if (!o) throw Error(ErrorCode::NoSuchObservation, "no observation " + std::string(req.matches[1]));
    send_json(res, 200, to_json(*o));
  });

  s.Get(R"(/api/v1/observations/([^/]+)/votes)", [&p](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    if (!p.observation(id)) throw Error(ErrorCode::NoSuchObservation, "no observation " + id);
    auto live = live_votes(p.votes(id));
    std::map<std::string, double> by_taxon;
    double total = 0.0;
    json votes = json::array();
    for (const auto& v : live) {
      auto u = p.user(v.user_id);
      double w = user_reliability(u ? u->history : UserHistory{});
      by_taxon[v.taxon_id] += w;
      total += w;
      auto j = to_json(v);
      j["weight"] = w;
      votes.push_back(j);
    }
    json tally = json::array();
    for (const auto& [taxon, w] : by_taxon) {
      tally.push_back({{"taxon_id", taxon}, {"weight", w}, {"share", total > 0 ? w / total : 0.0}});
    }
    send_json(res, 200, {{"observation_id", id}, {"votes", votes}, {"tally", tally}});
  });

  s.Get(R"(/api/v1/observations/([^/]+)/image)", [&p](const httplib::Request& req, httplib::Response& res) {
    auto o = p.observation(req.matches[1]);
    if (!o) throw Error(ErrorCode::NoSuchObservation, "no observation " + std::string(req.matches[1]));
    auto bytes = p.image_bytes(o->image_ref);
    auto type = sniff_image_type(bytes);
    res.set_content(std::move(bytes), type);
  });

  s.Get(R"(/api/v1/observations/([^/]+)/probabilities)",
        [&p](const httplib::Request& req, httplib::Response& res) {
          auto probs = p.raw_probabilities(req.matches[1]);
          if (!probs) send_json(res, 200, nullptr);
          else res.set_content(*probs, "application/json");
        });

  s.Post(R"(/api/v1/observations/([^/]+)/votes)",
         [&p, authed, idem](const httplib::Request& req, httplib::Response& res) {
           auto user = authed(req);
           std::string id = req.matches[1];
           auto taxon = string_field(body_json(req), "taxon_id");
           auto r = p.propose_identification(id, user, taxon, idem(req, user, "vote:" + id));
           send_json(res, 200, to_json(r));
         });

  s.Post(R"(/api/v1/observations/([^/]+)/resolve)",
         [&p, authed, idem](const httplib::Request& req, httplib::Response& res) {
           auto user = authed(req);
           std::string id = req.matches[1];
           auto taxon = string_field(body_json(req), "taxon_id");
           auto r = p.expert_resolve(id, user, taxon, idem(req, user, "resolve:" + id));
           send_json(res, 200, to_json(r));
         });

  s.Get("/api/v1/disputed", [&p](const httplib::Request& req, httplib::Response& res) {
    ObservationFilter f;
    f.status = ConsensusStatus::Disputed;
    send_json(res, 200, page_json(p.list(f, param(req, "cursor"), limit_param(req))));
  });

  s.Get("/api/v1/demography", [&p](const httplib::Request& req, httplib::Response& res) {
    bool csv = wants_csv(req);
    auto rows = p.demography(param(req, "taxon"), number_param(req, "cell_size"));
    if (csv) {
      res.set_content(demography_csv(rows), "text/csv");
      return;
    }
    auto sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const DemographyCell& a, const DemographyCell& b) {
      return std::tie(a.taxon_id, a.cell, a.bucket) < std::tie(b.taxon_id, b.cell, b.bucket);
    });
    json out = json::array();
    for (const auto& r : sorted) out.push_back(to_json(r));
    send_json(res, 200, {{"rows", out}});
  });

  s.Get("/api/v1/demography/series", [&p](const httplib::Request& req, httplib::Response& res) {
    auto taxon = param(req, "taxon");
    auto lat = number_param(req, "lat_idx");
    auto lon = number_param(req, "lon_idx");
    if (!taxon || !lat || !lon) throw Error(ErrorCode::BadFilter, "series needs taxon, lat_idx and lon_idx");
    auto size = number_param(req, "cell_size").value_or(p.config().cell_size);
    auto rows = p.demography(taxon, size);
    GridCell cell{static_cast<std::int64_t>(*lat), static_cast<std::int64_t>(*lon), size};
    json out = json::array();
    for (const auto& pt : fluctuation_series(rows, *taxon, cell)) {
      out.push_back({{"year", pt.month.year}, {"month", pt.month.month}, {"count", pt.count},
                     {"relative_frequency", pt.relative_frequency ? json(*pt.relative_frequency) : json(nullptr)}});
    }
    send_json(res, 200, {{"taxon_id", *taxon}, {"series", out}});
  });

  s.Get("/api/v1/novelty", [&p](const httplib::Request& req, httplib::Response& res) {
    bool csv = wants_csv(req);
    auto events = p.novelty(number_param(req, "cell_size"));
    if (csv) {
      res.set_content(novelty_csv(events), "text/csv");
      return;
    }
    json out = json::array();
    for (const auto& e : events) out.push_back(to_json(e));
    send_json(res, 200, {{"events", out}});
  });

  s.Get("/api/v1/consensus", [&p](const httplib::Request&, httplib::Response& res) {
    res.set_content(p.consensus_csv(), "text/csv");
  });

  s.Get("/api/v1/taxonomy", [&p](const httplib::Request&, httplib::Response& res) {
    auto t = p.taxonomy();
    if (!t) throw Error(ErrorCode::InvalidConfig, "no taxonomy loaded");
    json nodes = json::array();
    for (Taxonomy::Index i = 1; i < t->size(); ++i) nodes.push_back(to_json(t->node(i)));
    send_json(res, 200, {{"version", t->version()}, {"species_count", t->species().size()}, {"nodes", nodes}});
  });

  s.Get(R"(/api/v1/taxonomy/([^/]+))", [&p](const httplib::Request& req, httplib::Response& res) {
    auto t = p.taxonomy();
    if (!t) throw Error(ErrorCode::InvalidConfig, "no taxonomy loaded");
    std::string id = req.matches[1];
    if (!t->contains(id)) {
      send_error(res, ErrorCode::UnknownTaxon, "unknown taxon '" + id + "'");
      res.status = 404;
      return;
    }
    auto i = t->index_of(id);
    json children = json::array();
    for (auto c : t->children(i)) children.push_back(to_json(t->node(c)));
    json lineage = json::array();
    for (auto a : t->lineage(i)) lineage.push_back(t->id(a));
    auto j = to_json(t->node(i));
    j["children"] = children;
    j["lineage"] = lineage;
    j["species_count"] = t->leaves_under(i).size();
    send_json(res, 200, j);
  });

  if (!p.config().ui_root.empty()) s.set_mount_point("/ui", p.config().ui_root);
}

}  // namespace insectup::service
