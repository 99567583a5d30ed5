#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "insectup/classifier.hpp"

namespace insectup {

/// Deterministic backend answering from a fixture table keyed by the SHA-256
/// of the uploaded bytes. Vectors are in taxonomy species order. An optional
/// fallback vector answers unknown digests.
class StubBackend final : public ModelBackend {
 public:
  StubBackend(const Taxonomy& t, std::map<std::string, std::vector<double>> table,
              std::optional<std::vector<double>> fallback = std::nullopt)
      : species_(t.species_ids()), table_(std::move(table)), fallback_(std::move(fallback)) {}

  ProbabilityVector score(const BackendInput& input) override {
    const std::vector<double>* values = nullptr;
    if (auto it = table_.find(input.content_digest); it != table_.end()) {
      values = &it->second;
    } else if (fallback_) {
      values = &*fallback_;
    } else {
      throw Error(ErrorCode::BackendUnavailable,
                  "stub fixture has no entry for digest " + input.content_digest);
    }
    if (values->size() != species_.size()) {
      throw Error(ErrorCode::KeyMismatch, "stub vector length " + std::to_string(values->size()) +
                                              " does not match " +
                                              std::to_string(species_.size()) + " species");
    }
    ProbabilityVector p;
    for (std::size_t i = 0; i < species_.size(); ++i) p.entries.emplace(species_[i], (*values)[i]);
    return p;
  }

  std::size_t max_concurrency() const override { return 64; }
  std::string kind() const override { return "stub"; }

  void set(std::string digest, std::vector<double> values) {
    table_[std::move(digest)] = std::move(values);
  }

 private:
  std::vector<std::string> species_;
  std::map<std::string, std::vector<double>> table_;
  std::optional<std::vector<double>> fallback_;
};

}  // namespace insectup
