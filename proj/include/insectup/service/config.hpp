#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "insectup/classifier.hpp"
#include "insectup/consensus.hpp"
#include "insectup/screening.hpp"

namespace insectup::service {

struct BackendConfig {
  std::string kind = "stub";  // stub | file-model | remote
  std::string fixture;        // stub: JSON digest -> vector
  std::string model;          // file-model: ONNX path
  std::string url;            // remote: POST endpoint
  std::size_t parallelism = 1;
  double input_scale = 1.0;
  std::array<double, 3> input_mean{0.0, 0.0, 0.0};
  bool apply_softmax = false;
  int timeout_ms = 10000;
};

/// Service configuration. The file format is one `key = value` per line with
/// `#` comments; every key can be overridden by INSECTUP_<KEY> in the
/// environment, dots and all letters mapped to `_` and upper case
/// (tau.species -> INSECTUP_TAU_SPECIES).
struct Config {
  std::string listen = "127.0.0.1:8080";
  std::filesystem::path storage_root = "insectup-store";
  BackendConfig backend;
  RankThresholds tau;
  ConsensusParams consensus;
  ScreeningConfig screening;
  std::string blocklist;
  double cell_size = 0.5;
  bool include_machine_labels = false;
  std::size_t snapshot_every = 500;
  std::string ui_root;

  /// Applies one setting. Throws InvalidConfig on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);

  /// Checks cross-field constraints.
  void validate() const;

  static const std::vector<std::string>& keys();
  static std::string env_name(std::string_view key);

  /// File (if given) then environment overrides, then validate().
  static Config load(const std::optional<std::filesystem::path>& file,
                     const std::map<std::string, std::string>& env = environment());
  static Config parse(std::string_view text, std::string_view origin = "<config>");
  static std::map<std::string, std::string> environment();
};

}  // namespace insectup::service
