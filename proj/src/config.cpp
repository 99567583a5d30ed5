#include "insectup/service/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "insectup/csv.hpp"

extern char** environ;

namespace insectup::service {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view why) {
  throw Error(ErrorCode::InvalidConfig,
              "config " + std::string(key) + "=" + std::string(value) + ": " + std::string(why));
}

double number(std::string_view key, std::string_view value) {
  try {
    return csv::parse_double(value, key);
  } catch (const Error&) {
    bad(key, value, "not a number");
  }
}

std::size_t count(std::string_view key, std::string_view value) {
  long long v = 0;
  try {
    v = csv::parse_int(value, key);
  } catch (const Error&) {
    bad(key, value, "not an integer");
  }
  if (v < 0) bad(key, value, "must be non-negative");
  return static_cast<std::size_t>(v);
}

bool boolean(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad(key, value, "expected true or false");
}

}  // namespace

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> k{
      "listen",          "storage_root",       "backend.kind",
      "backend.fixture", "backend.model",      "backend.url",
      "backend.parallelism", "backend.input_scale", "backend.input_mean",
      "backend.softmax", "backend.timeout_ms", "tau.species",
      "tau.genus",       "tau.family",         "tau.order",
      "consensus.theta", "consensus.min_votes", "screening.d_max",
      "screening.min_max_prob", "screening.max_entropy", "screening.presence_gate",
      "screening.blocklist", "demography.cell_size", "demography.include_machine_labels",
      "snapshot_every",  "ui_root"};
  return k;
}

std::string Config::env_name(std::string_view key) {
  std::string out = "INSECTUP_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void Config::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "listen") {
    listen = value;
  } else if (key == "storage_root") {
    storage_root = std::string(value);
  } else if (key == "backend.kind") {
    if (value != "stub" && value != "file-model" && value != "remote") {
      bad(key, value, "expected stub, file-model or remote");
    }
    backend.kind = value;
  } else if (key == "backend.fixture") {
    backend.fixture = value;
  } else if (key == "backend.model") {
    backend.model = value;
  } else if (key == "backend.url") {
    backend.url = value;
  } else if (key == "backend.parallelism") {
    backend.parallelism = count(key, value);
  } else if (key == "backend.input_scale") {
    backend.input_scale = number(key, value);
  } else if (key == "backend.input_mean") {
    std::stringstream ss{std::string(value)};
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
      if (i >= 3) bad(key, value, "expected three comma-separated numbers");
      backend.input_mean[i++] = number(key, trim(part));
    }
    if (i != 3) bad(key, value, "expected three comma-separated numbers");
  } else if (key == "backend.softmax") {
    backend.apply_softmax = boolean(key, value);
  } else if (key == "backend.timeout_ms") {
    backend.timeout_ms = static_cast<int>(count(key, value));
  } else if (key == "tau.species") {
    tau.species = number(key, value);
  } else if (key == "tau.genus") {
    tau.genus = number(key, value);
  } else if (key == "tau.family") {
    tau.family = number(key, value);
  } else if (key == "tau.order") {
    tau.order = number(key, value);
  } else if (key == "consensus.theta") {
    consensus.theta = number(key, value);
  } else if (key == "consensus.min_votes") {
    consensus.min_votes = count(key, value);
  } else if (key == "screening.d_max") {
    auto d = count(key, value);
    if (d > 64) bad(key, value, "at most 64 bits");
    screening.d_max = static_cast<int>(d);
  } else if (key == "screening.min_max_prob") {
    screening.min_max_prob = number(key, value);
  } else if (key == "screening.max_entropy") {
    if (value.empty() || value == "auto") {
      screening.max_entropy.reset();
    } else {
      screening.max_entropy = number(key, value);
    }
  } else if (key == "screening.presence_gate") {
    screening.presence_gate = boolean(key, value);
  } else if (key == "screening.blocklist") {
    blocklist = value;
  } else if (key == "demography.cell_size") {
    cell_size = number(key, value);
  } else if (key == "demography.include_machine_labels") {
    include_machine_labels = boolean(key, value);
  } else if (key == "snapshot_every") {
    snapshot_every = count(key, value);
  } else if (key == "ui_root") {
    ui_root = value;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown config key '" + std::string(key) + "'");
  }
}

void Config::validate() const {
  tau.validate();
  consensus.validate();
  if (!(cell_size > 0.0)) throw Error(ErrorCode::InvalidConfig, "demography.cell_size must be positive");
  if (backend.parallelism < 1) throw Error(ErrorCode::InvalidConfig, "backend.parallelism must be at least 1");
  if (backend.kind == "file-model" && backend.model.empty()) {
    throw Error(ErrorCode::InvalidConfig, "backend.kind=file-model needs backend.model");
  }
  if (backend.kind == "remote" && backend.url.empty()) {
    throw Error(ErrorCode::InvalidConfig, "backend.kind=remote needs backend.url");
  }
  if (!(screening.min_max_prob >= 0.0 && screening.min_max_prob <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "screening.min_max_prob must lie in [0,1]");
  }
}

Config Config::parse(std::string_view text, std::string_view origin) {
  Config c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::InvalidConfig, std::string(origin) + ":" + std::to_string(line_no) +
                                                ": expected key = value");
    }
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig,
                  std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

std::map<std::string, std::string> Config::environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    if (!kv.starts_with("INSECTUP_")) continue;
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return env;
}

Config Config::load(const std::optional<std::filesystem::path>& file,
                    const std::map<std::string, std::string>& env) {
  Config c;
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw Error(ErrorCode::StorageFailure, "cannot read config " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    c = parse(ss.str(), file->string());
  }
  for (const auto& key : keys()) {
    if (auto it = env.find(env_name(key)); it != env.end()) c.set(key, it->second);
  }
  c.validate();
  return c;
}

}  // namespace insectup::service
