#include "insectup/service/journal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "insectup/error.hpp"
#include "insectup/service/digest.hpp"

namespace insectup::service {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw Error(ErrorCode::StorageFailure, what + ": " + std::strerror(errno));
}

void fsync_dir(const std::filesystem::path& dir) {
  int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) fail("cannot open " + dir.string());
  ::fsync(fd);
  ::close(fd);
}

bool decode_line(std::string_view line, json& out) {
  if (line.size() < 10 || line[8] != ' ') return false;
  std::uint32_t want = 0;
  for (int i = 0; i < 8; ++i) {
    char c = line[i];
    int d = c >= '0' && c <= '9' ? c - '0' : c >= 'a' && c <= 'f' ? c - 'a' + 10 : -1;
    if (d < 0) return false;
    want = (want << 4) | static_cast<std::uint32_t>(d);
  }
  auto body = line.substr(9);
  if (crc32(body) != want) return false;
  out = json::parse(body, nullptr, false);
  return !out.is_discarded();
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("write failed");
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail("cannot create " + tmp.string());
  try {
    write_all(fd, content);
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    fail("fsync failed for " + tmp.string());
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) fail("rename to " + path.string() + " failed");
  fsync_dir(path.parent_path());
}

std::string Journal::encode(const json& record) {
  auto body = record.dump();
  char crc[9];
  std::snprintf(crc, sizeof crc, "%08x", crc32(body));
  return std::string(crc) + " " + body + "\n";
}

Journal::Contents Journal::read(const std::filesystem::path& file) {
  Contents c;
  if (!std::filesystem::exists(file)) return c;
  auto text = read_file(file);
  c.file_bytes = text.size();
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail: no terminator
    json record;
    if (!decode_line(std::string_view(text).substr(pos, nl - pos), record)) {
      if (nl + 1 < text.size()) {
        throw Error(ErrorCode::StorageFailure,
                    "journal " + file.string() + " is corrupt at byte " + std::to_string(pos));
      }
      break;  // damaged final line
    }
    c.records.push_back(std::move(record));
    pos = nl + 1;
    c.valid_bytes = pos;
  }
  return c;
}

Journal::Journal(std::filesystem::path file, std::uintmax_t valid_bytes) : file_(std::move(file)) {
  fd_ = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) fail("cannot open journal " + file_.string());
  if (::ftruncate(fd_, static_cast<off_t>(valid_bytes)) != 0) fail("cannot trim journal");
  ::fsync(fd_);
  fsync_dir(file_.parent_path());
}

Journal::~Journal() {
  if (fd_ >= 0) ::close(fd_);
}

void Journal::append(const json& record) {
  auto line = encode(record);
  if (hook_) {
    hook_(fd_, line);
  } else {
    write_all(fd_, line);
  }
  if (::fdatasync(fd_) != 0) fail("fdatasync failed for journal");
}

void Journal::clear() {
  if (::ftruncate(fd_, 0) != 0) fail("cannot clear journal");
  ::fsync(fd_);
}

}  // namespace insectup::service
