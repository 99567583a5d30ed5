#pragma once

// Scratch stores, images and stub fixtures for the service-level tests.

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "insectup/service/codec.hpp"
#include "insectup/service/config.hpp"
#include "insectup/service/digest.hpp"
#include "support/fixtures.hpp"

namespace insectup::testing {

/// Two orders so that split votes can end up DISPUTED at the root.
inline std::vector<TaxonRow> two_order_rows() {
  return numbered({row("O1", "ROOT", "order"), row("F1", "O1", "family"), row("G1", "F1", "genus"),
                   row("G2", "F1", "genus"), row("s1", "G1", "species"), row("s2", "G1", "species"),
                   row("s3", "G2", "species"), row("O2", "ROOT", "order"), row("F2", "O2", "family"),
                   row("G3", "F2", "genus"), row("s4", "G3", "species")});
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("insectup-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

/// A PNG whose dHash is unrelated to other seeds' (random noise).
inline std::string noise_png(std::uint64_t seed, int w = 48, int h = 40) {
  Rng rng(seed);
  return service::encode_png(noise_image(rng, w, h));
}

/// A stub fixture: every image is confidently `fallback` unless listed.
inline nlohmann::json stub_fixture(const std::vector<std::string>& species, const std::string& fallback) {
  nlohmann::json j = nlohmann::json::object();
  nlohmann::json hot = nlohmann::json::object();
  for (const auto& s : species) hot[s] = s == fallback ? 1.0 : 0.0;
  j["*"] = hot;
  return j;
}

inline nlohmann::json uniform_entry(const std::vector<std::string>& species) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : species) j[s] = 1.0 / static_cast<double>(species.size());
  return j;
}

/// Store plus stub backend on a scratch directory, preloaded with nothing.
struct ServiceEnv {
  TempDir dir;
  service::Config config;
  nlohmann::json fixture;
  std::vector<std::string> species{"s1", "s2", "s3", "s4"};

  ServiceEnv() {
    fixture = stub_fixture(species, "s1");
    config.storage_root = dir / "store";
    config.backend.kind = "stub";
    config.backend.fixture = (dir / "stub.json").string();
    save_fixture();
  }

  void save_fixture() { write_text(config.backend.fixture, fixture.dump()); }

  /// Make the stub answer uniformly for these bytes, so the gate flags them.
  void mark_no_insect(const std::string& bytes) {
    fixture[service::sha256_hex(bytes)] = uniform_entry(species);
    save_fixture();
  }

  std::string taxonomy_csv() const { return rows_to_csv(two_order_rows()); }
};

}  // namespace insectup::testing
