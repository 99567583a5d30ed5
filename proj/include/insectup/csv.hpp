#pragma once

#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "insectup/error.hpp"

namespace insectup::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number of the first physical line
  std::vector<std::string> fields;
};

// RFC 4180 style reader: quoted fields may contain commas, doubled quotes and
// newlines. A trailing CR before LF is tolerated and stripped.
inline std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  std::size_t i = 0;
  std::size_t line = 1;
  while (i < text.size()) {
    Row row;
    row.line = line;
    std::string field;
    bool in_quotes = false;
    bool row_done = false;
    while (i < text.size() && !row_done) {
      char c = text[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            field.push_back('"');
            i += 2;
            continue;
          }
          in_quotes = false;
        } else {
          if (c == '\n') ++line;
          field.push_back(c);
        }
        ++i;
        continue;
      }
      switch (c) {
        case '"':
          in_quotes = true;
          break;
        case ',':
          row.fields.push_back(std::move(field));
          field.clear();
          break;
        case '\r':
          break;
        case '\n':
          row_done = true;
          ++line;
          break;
        default:
          field.push_back(c);
      }
      ++i;
    }
    if (in_quotes) {
      throw Error(ErrorCode::BadRequest,
                  "unterminated quoted field starting on line " + std::to_string(row.line));
    }
    row.fields.push_back(std::move(field));
    // blank lines carry no data
    if (row.fields.size() == 1 && row.fields[0].empty()) continue;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void append_row(std::string& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += escape(fields[i]);
  }
  out.push_back('\n');
}

/// Shortest representation that round-trips; reports and exports must be
/// byte-stable across runs and processes.
inline std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

inline double parse_double(std::string_view text, std::string_view what) {
  double value = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::BadRequest, "invalid number for " + std::string(what) + ": '" +
                                           std::string(text) + "'");
  }
  return value;
}

inline long long parse_int(std::string_view text, std::string_view what) {
  long long value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::BadRequest, "invalid integer for " + std::string(what) + ": '" +
                                           std::string(text) + "'");
  }
  return value;
}

}  // namespace insectup::csv
