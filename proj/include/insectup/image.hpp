#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "insectup/error.hpp"

namespace insectup {

/// Decoded 8-bit RGB image, row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const noexcept { return width <= 0 || height <= 0; }

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr int kModelInputSide = 224;

namespace detail {

// Source coordinate for destination sample `d` under pixel-center alignment,
// clamped to the valid range.
struct Tap {
  int lo;
  int hi;
  double frac;
};

inline Tap bilinear_tap(int d, int src_len, int dst_len) {
  double scale = static_cast<double>(src_len) / dst_len;
  double s = (d + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
  int lo = static_cast<int>(std::floor(s));
  int hi = std::min(lo + 1, src_len - 1);
  return {lo, hi, s - lo};
}

// a + f*(b-a) is exact when a == b, which keeps flat regions flat.
inline double lerp(double a, double b, double f) { return a + f * (b - a); }

}  // namespace detail

/// Bilinear resample of a `channels`-interleaved grid. Identity when the
/// destination size equals the source size.
template <typename T>
std::vector<double> resize_bilinear(std::span<const T> src, int src_w, int src_h, int channels,
                                    int dst_w, int dst_h) {
  std::vector<double> out(static_cast<std::size_t>(dst_w) * dst_h * channels);
  std::vector<detail::Tap> xs(dst_w);
  for (int x = 0; x < dst_w; ++x) xs[x] = detail::bilinear_tap(x, src_w, dst_w);
  auto px = [&](int x, int y, int c) {
    return static_cast<double>(src[(static_cast<std::size_t>(y) * src_w + x) * channels + c]);
  };
  for (int y = 0; y < dst_h; ++y) {
    auto ty = detail::bilinear_tap(y, src_h, dst_h);
    for (int x = 0; x < dst_w; ++x) {
      const auto& tx = xs[x];
      for (int c = 0; c < channels; ++c) {
        double top = detail::lerp(px(tx.lo, ty.lo, c), px(tx.hi, ty.lo, c), tx.frac);
        double bottom = detail::lerp(px(tx.lo, ty.hi, c), px(tx.hi, ty.hi, c), tx.frac);
        out[(static_cast<std::size_t>(y) * dst_w + x) * channels + c] =
            detail::lerp(top, bottom, ty.frac);
      }
    }
  }
  return out;
}

struct CropWindow {
  int x = 0;
  int y = 0;
  int side = 0;
};

/// Largest centered square; odd remainders round the offset down.
inline CropWindow center_square(int width, int height) {
  int side = std::min(width, height);
  return {(width - side) / 2, (height - side) / 2, side};
}

inline Image crop(const Image& img, const CropWindow& w) {
  Image out(w.side, w.side);
  for (int y = 0; y < w.side; ++y) {
    const auto* row = &img.pixels[(static_cast<std::size_t>(y + w.y) * img.width + w.x) * 3];
    std::copy(row, row + static_cast<std::size_t>(w.side) * 3,
              &out.pixels[static_cast<std::size_t>(y) * w.side * 3]);
  }
  return out;
}

inline Image resize(const Image& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  auto values = resize_bilinear<std::uint8_t>(img.pixels, img.width, img.height, 3, width, height);
  Image out(width, height);
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(values[i]), 0L, 255L));
  }
  return out;
}

/// Model input contract: center square crop, bilinear resize to 224x224,
/// channel order and value range untouched.
inline Image preprocess(const Image& img) {
  if (img.empty() || img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw Error(ErrorCode::EmptyImage, "image has no pixels");
  }
  return resize(crop(img, center_square(img.width, img.height)), kModelInputSide,
                kModelInputSide);
}

}  // namespace insectup
