#include "insectup/service/backends.hpp"

#include <httplib.h>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace insectup::service {

using nlohmann::json;

namespace {

std::vector<double> vector_from_json(const json& j, const std::vector<std::string>& species,
                                     std::string_view what) {
  std::vector<double> out;
  if (j.is_array()) {
    for (const auto& v : j) {
      if (!v.is_number()) throw Error(ErrorCode::InvalidProbabilities, std::string(what) + ": non-numeric entry");
      out.push_back(v.get<double>());
    }
    return out;
  }
  if (j.is_object()) {
    out.assign(species.size(), 0.0);
    if (j.size() != species.size()) {
      throw Error(ErrorCode::KeyMismatch, std::string(what) + ": expected " +
                                              std::to_string(species.size()) + " species keys");
    }
    for (std::size_t i = 0; i < species.size(); ++i) {
      auto it = j.find(species[i]);
      if (it == j.end() || !it->is_number()) {
        throw Error(ErrorCode::KeyMismatch, std::string(what) + ": missing species " + species[i]);
      }
      out[i] = it->get<double>();
    }
    return out;
  }
  throw Error(ErrorCode::InvalidProbabilities, std::string(what) + ": expected array or object");
}

ProbabilityVector to_vector(const std::vector<double>& values, const std::vector<std::string>& species) {
  if (values.size() != species.size()) {
    throw Error(ErrorCode::KeyMismatch, "backend produced " + std::to_string(values.size()) +
                                            " scores for " + std::to_string(species.size()) +
                                            " species");
  }
  ProbabilityVector p;
  for (std::size_t i = 0; i < species.size(); ++i) p.entries.emplace(species[i], values[i]);
  return p;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BackendUnavailable, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::unique_ptr<StubBackend> load_stub_fixture(const std::filesystem::path& path, const Taxonomy& t) {
  auto species = t.species_ids();
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, "stub fixture " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "stub fixture must be a JSON object");
  std::map<std::string, std::vector<double>> table;
  std::optional<std::vector<double>> fallback;
  for (const auto& [digest, value] : j.items()) {
    auto v = vector_from_json(value, species, "stub fixture entry " + digest);
    if (v.size() != species.size()) {
      throw Error(ErrorCode::KeyMismatch, "stub fixture entry " + digest + ": expected " +
                                              std::to_string(species.size()) + " values");
    }
    if (digest == "*") {
      fallback = std::move(v);
    } else {
      table.emplace(digest, std::move(v));
    }
  }
  return std::make_unique<StubBackend>(t, std::move(table), std::move(fallback));
}

ProbabilityVector probabilities_from_json(const std::string& body, const Taxonomy& t) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("remote scorer sent invalid JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("probabilities")) j = j["probabilities"];
  auto species = t.species_ids();
  return to_vector(vector_from_json(j, species, "remote reply"), species);
}

struct OnnxBackend::Impl {
  cv::dnn::Net net;
  std::vector<std::string> species;
  BackendConfig cfg;
};

OnnxBackend::OnnxBackend(const BackendConfig& cfg, const Taxonomy& t) : impl_(std::make_unique<Impl>()) {
  impl_->species = t.species_ids();
  impl_->cfg = cfg;
  try {
    impl_->net = cv::dnn::readNetFromONNX(cfg.model);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::BackendUnavailable, "cannot load model " + cfg.model + ": " + e.what());
  }
  if (impl_->net.empty()) throw Error(ErrorCode::BackendUnavailable, "empty model " + cfg.model);
}

OnnxBackend::~OnnxBackend() = default;

ProbabilityVector OnnxBackend::score(const BackendInput& input) {
  const auto& img = input.image;
  const auto& cfg = impl_->cfg;
  int dims[] = {1, 3, img.height, img.width};
  cv::Mat blob(4, dims, CV_32F);
  auto* data = blob.ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        data[c * plane + static_cast<std::size_t>(y) * img.width + x] =
            static_cast<float>((img.at(x, y, c) - cfg.input_mean[c]) * cfg.input_scale);
      }
    }
  }
  cv::Mat out;
  try {
    impl_->net.setInput(blob);
    out = impl_->net.forward();
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("model inference failed: ") + e.what());
  }
  out = out.reshape(1, 1);
  std::vector<double> values(out.total());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = out.at<float>(0, static_cast<int>(i));
  if (cfg.apply_softmax && !values.empty()) {
    double m = *std::max_element(values.begin(), values.end());
    double z = 0.0;
    for (auto& v : values) z += (v = std::exp(v - m));
    for (auto& v : values) v /= z;
  }
  return to_vector(values, impl_->species);
}

RemoteBackend::RemoteBackend(const BackendConfig& cfg, const Taxonomy& t)
    : species_(t.species_ids()), parallelism_(cfg.parallelism), timeout_ms_(cfg.timeout_ms) {
  auto scheme_end = cfg.url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidConfig, "backend.url needs a scheme");
  auto slash = cfg.url.find('/', scheme_end + 3);
  scheme_host_port_ = cfg.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg.url.substr(slash);
}

ProbabilityVector RemoteBackend::score(const BackendInput& input) {
  httplib::Client client(scheme_host_port_);
  auto secs = timeout_ms_ / 1000;
  auto usecs = (timeout_ms_ % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  httplib::Headers headers{{"X-Image-Width", std::to_string(input.image.width)},
                           {"X-Image-Height", std::to_string(input.image.height)},
                           {"X-Content-Digest", input.content_digest}};
  std::string body(input.image.pixels.begin(), input.image.pixels.end());
  auto res = client.Post(path_, headers, body, "application/octet-stream");
  if (!res) {
    throw Error(ErrorCode::BackendUnavailable,
                "remote scorer unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::BackendUnavailable, "remote scorer answered HTTP " + std::to_string(res->status));
  }
  auto j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::BackendUnavailable, "remote scorer sent invalid JSON");
  if (j.is_object() && j.contains("probabilities")) j = j["probabilities"];
  return to_vector(vector_from_json(j, species_, "remote reply"), species_);
}

BackendPool::BackendPool(std::unique_ptr<ModelBackend> inner, std::size_t parallelism)
    : inner_(std::move(inner)),
      limit_(std::max<std::size_t>(1, std::min(parallelism, inner_->max_concurrency()))),
      slots_(static_cast<std::ptrdiff_t>(limit_)) {}

ProbabilityVector BackendPool::score(const BackendInput& input) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return inner_->score(input);
}

std::unique_ptr<ModelBackend> make_backend(const BackendConfig& cfg, const Taxonomy& t) {
  std::unique_ptr<ModelBackend> inner;
  if (cfg.kind == "stub") {
    if (cfg.fixture.empty()) throw Error(ErrorCode::InvalidConfig, "backend.kind=stub needs backend.fixture");
    inner = load_stub_fixture(cfg.fixture, t);
  } else if (cfg.kind == "file-model") {
    inner = std::make_unique<OnnxBackend>(cfg, t);
  } else if (cfg.kind == "remote") {
    inner = std::make_unique<RemoteBackend>(cfg, t);
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown backend kind '" + cfg.kind + "'");
  }
  return std::make_unique<BackendPool>(std::move(inner), cfg.parallelism);
}

}  // namespace insectup::service
