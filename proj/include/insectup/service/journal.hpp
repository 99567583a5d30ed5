#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace insectup::service {

/// Append-only write-ahead record. Each line is `<crc32 hex> <json>\n` and is
/// fsync'd before append() returns.
class Journal {
 public:
  struct Contents {
    std::vector<nlohmann::json> records;
    std::uintmax_t valid_bytes = 0;  // prefix holding intact records
    std::uintmax_t file_bytes = 0;
  };

  /// Reads every intact record. A torn or corrupt final line is ignored; a
  /// corrupt line followed by intact ones throws StorageFailure.
  static Contents read(const std::filesystem::path& file);

  /// Opens for appending, cutting the file back to `valid_bytes`.
  Journal(std::filesystem::path file, std::uintmax_t valid_bytes);
  ~Journal();
  Journal(const Journal&) = delete;
  Journal& operator=(const Journal&) = delete;

  void append(const nlohmann::json& record);

  /// Empties the journal once a snapshot covers its records.
  void clear();

  /// Test hook: runs with the open fd and the encoded line in place of the
  /// normal write. Lets crash tests write a prefix and die.
  using WriteHook = std::function<void(int fd, std::string_view line)>;
  void set_write_hook(WriteHook hook) { hook_ = std::move(hook); }

  static std::string encode(const nlohmann::json& record);

 private:
  std::filesystem::path file_;
  int fd_ = -1;
  WriteHook hook_;
};

/// Writes `content` to `path` atomically: temp file, fsync, rename, fsync dir.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Retries short writes; throws StorageFailure.
void write_all(int fd, std::string_view data);

}  // namespace insectup::service
