#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>

#include "insectup/classifier.hpp"
#include "insectup/service/config.hpp"
#include "insectup/stub_backend.hpp"

namespace insectup::service {

/// Reads a stub fixture: a JSON object mapping SHA-256 hex digests to either
/// an array in species order or an object {species_id: probability}. The key
/// "*" supplies a fallback vector for unknown digests.
std::unique_ptr<StubBackend> load_stub_fixture(const std::filesystem::path& path,
                                               const Taxonomy& t);

/// ONNX network via OpenCV's dnn module. Input is NCHW float RGB, each value
/// (pixel - mean[c]) * scale; the output must hold one score per species in
/// taxon_id order.
class OnnxBackend final : public ModelBackend {
 public:
  OnnxBackend(const BackendConfig& cfg, const Taxonomy& t);
  ~OnnxBackend() override;

  ProbabilityVector score(const BackendInput& input) override;
  std::string kind() const override { return "file-model"; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// POSTs the preprocessed pixels (raw interleaved RGB, 224x224) to a remote
/// scorer. The reply is JSON: an array in species order, an object keyed by
/// species, or either of those under "probabilities".
class RemoteBackend final : public ModelBackend {
 public:
  RemoteBackend(const BackendConfig& cfg, const Taxonomy& t);

  ProbabilityVector score(const BackendInput& input) override;
  std::size_t max_concurrency() const override { return parallelism_; }
  std::string kind() const override { return "remote"; }

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::vector<std::string> species_;
  std::size_t parallelism_;
  int timeout_ms_;
};

/// Bounds how many score() calls reach the wrapped backend at once.
class BackendPool final : public ModelBackend {
 public:
  BackendPool(std::unique_ptr<ModelBackend> inner, std::size_t parallelism);

  ProbabilityVector score(const BackendInput& input) override;
  std::size_t max_concurrency() const override { return limit_; }
  std::string kind() const override { return inner_->kind(); }

 private:
  std::unique_ptr<ModelBackend> inner_;
  std::size_t limit_;
  std::counting_semaphore<> slots_;
};

std::unique_ptr<ModelBackend> make_backend(const BackendConfig& cfg, const Taxonomy& t);

ProbabilityVector probabilities_from_json(const std::string& body, const Taxonomy& t);

}  // namespace insectup::service
