#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace insectup::service {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

std::uint32_t crc32(std::string_view bytes);

/// 32 random bytes as hex, for bearer tokens.
std::string random_token();

}  // namespace insectup::service
