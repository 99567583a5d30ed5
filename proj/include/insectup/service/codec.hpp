#pragma once

#include <string>
#include <string_view>

#include "insectup/image.hpp"

namespace insectup::service {

/// Decodes JPEG/PNG/etc. bytes into an RGB image. Throws UndecodableImage.
Image decode_image(std::string_view bytes);

/// Lossless PNG encoding, used by fixtures and tests.
std::string encode_png(const Image& img);

}  // namespace insectup::service
