#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "insectup/classifier.hpp"
#include "insectup/error.hpp"
#include "insectup/image.hpp"

namespace insectup {

/// 64-bit difference hash. Comparison (i, j) of the 9x8 luma grid lives in
/// bit index i*8+j counted from the most significant bit, so the hex form
/// reads in raster order.
struct PerceptualHash {
  std::uint64_t bits = 0;

  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[i] = digits[(bits >> (60 - 4 * i)) & 0xF];
    return out;
  }

  static PerceptualHash from_hex(std::string_view s) {
    if (s.size() != 16) throw Error(ErrorCode::BadRequest, "hash must be 16 hex characters");
    std::uint64_t v = 0;
    for (char c : s) {
      int d;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
      else throw Error(ErrorCode::BadRequest, "invalid hex digit in hash '" + std::string(s) + "'");
      v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return {v};
  }

  bool bit(int index) const { return (bits >> (63 - index)) & 1u; }

  friend bool operator==(const PerceptualHash&, const PerceptualHash&) = default;
};

inline int hamming(PerceptualHash a, PerceptualHash b) { return std::popcount(a.bits ^ b.bits); }

/// ITU-R BT.601 luma scaled by 1000 so the conversion is exact in integers.
inline std::vector<std::int32_t> luma_x1000(const Image& img) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 299 * img.pixels[3 * i] + 587 * img.pixels[3 * i + 1] + 114 * img.pixels[3 * i + 2];
  }
  return out;
}

inline PerceptualHash perceptual_hash(const Image& img) {
  if (img.empty()) throw Error(ErrorCode::EmptyImage, "image has no pixels");
  auto luma = luma_x1000(img);
  auto grid = resize_bilinear<std::int32_t>(luma, img.width, img.height, 1, 9, 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      bits <<= 1;
      if (grid[i * 9 + j] > grid[i * 9 + j + 1]) bits |= 1u;
    }
  }
  return {bits};
}

struct HashMatch {
  std::string observation_id;
  int distance = 0;

  friend bool operator==(const HashMatch&, const HashMatch&) = default;
};

/// Near-duplicate index. Hashes are split into kBands disjoint bit bands; two
/// hashes within distance < kBands agree exactly on at least one band, so
/// lookups only score entries sharing a band value. Radii at or beyond
/// kBands fall back to a full scan.
class HashIndex {
 public:
  static constexpr int kBands = 9;

  struct Entry {
    PerceptualHash hash;
    std::string observation_id;
    std::uint64_t sequence = 0;  // insertion order; smaller is earlier
    bool live = true;
  };

  void insert(PerceptualHash h, std::string observation_id) {
    std::size_t slot = entries_.size();
    entries_.push_back({h, std::move(observation_id), next_sequence_++, true});
    for (int b = 0; b < kBands; ++b) bands_[b][band_value(h, b)].push_back(slot);
    ++live_count_;
  }

  /// Drops every entry for an observation (used when a provisionally accepted
  /// observation is later flagged).
  void erase(std::string_view observation_id) {
    for (auto& e : entries_) {
      if (e.live && e.observation_id == observation_id) {
        e.live = false;
        --live_count_;
      }
    }
  }

  std::size_t size() const noexcept { return live_count_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::optional<HashMatch> nearest(PerceptualHash h, int d_max) const {
    const Entry* best = nullptr;
    int best_d = 65;
    auto consider = [&](const Entry& e) {
      if (!e.live) return;
      int d = hamming(h, e.hash);
      if (d > d_max) return;
      if (d < best_d || (d == best_d && e.sequence < best->sequence)) {
        best = &e;
        best_d = d;
      }
    };
    if (d_max < kBands) {
      for (int b = 0; b < kBands; ++b) {
        auto it = bands_[b].find(band_value(h, b));
        if (it == bands_[b].end()) continue;
        for (auto slot : it->second) consider(entries_[slot]);
      }
    } else {
      for (const auto& e : entries_) consider(e);
    }
    if (!best) return std::nullopt;
    return HashMatch{best->observation_id, best_d};
  }

 private:
  // Bands 0..7 take 7 bits each, band 8 the remaining 8.
  static std::uint32_t band_value(PerceptualHash h, int band) {
    int shift = band * 7;
    int width = band == kBands - 1 ? 64 - shift : 7;
    return static_cast<std::uint32_t>((h.bits >> shift) & ((1ull << width) - 1));
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> bands_[kBands];
  std::uint64_t next_sequence_ = 0;
  std::size_t live_count_ = 0;
};

inline std::optional<HashMatch> duplicate_check(PerceptualHash h, const HashIndex& index,
                                                int d_max = 8) {
  return index.nearest(h, d_max);
}

/// Blocklist text: one 16-hex-char hash per line; '#' starts a comment.
inline std::vector<PerceptualHash> parse_blocklist(std::string_view text) {
  std::vector<PerceptualHash> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
      line.remove_suffix(1);
    }
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) {
      line.remove_prefix(1);
    }
    if (line.empty()) continue;
    try {
      out.push_back(PerceptualHash::from_hex(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::BadRequest,
                  "blocklist line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::string blocklist_id(PerceptualHash h) { return "blocklist:" + h.hex(); }

enum class ScreeningStatus { Accepted, FlaggedDuplicate, FlaggedNoInsect };

constexpr std::string_view to_string(ScreeningStatus s) {
  switch (s) {
    case ScreeningStatus::Accepted: return "ACCEPTED";
    case ScreeningStatus::FlaggedDuplicate: return "FLAGGED_DUPLICATE";
    case ScreeningStatus::FlaggedNoInsect: return "FLAGGED_NO_INSECT";
  }
  return "?";
}

inline std::optional<ScreeningStatus> parse_screening_status(std::string_view s) {
  if (s == "ACCEPTED") return ScreeningStatus::Accepted;
  if (s == "FLAGGED_DUPLICATE") return ScreeningStatus::FlaggedDuplicate;
  if (s == "FLAGGED_NO_INSECT") return ScreeningStatus::FlaggedNoInsect;
  return std::nullopt;
}

struct ScreeningVerdict {
  ScreeningStatus status = ScreeningStatus::Accepted;
  std::optional<std::string> matched_observation_id;
  double max_species_prob = 0.0;
  double entropy = 0.0;  // nats

  friend bool operator==(const ScreeningVerdict&, const ScreeningVerdict&) = default;
};

struct ScreeningConfig {
  int d_max = 8;
  double min_max_prob = 0.05;
  std::optional<double> max_entropy;  // default 0.9 * ln(species count)
  bool presence_gate = true;
};

inline double entropy_nats(const ProbabilityVector& p) {
  double h = 0.0;
  for (const auto& [_, v] : p.entries) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline double max_probability(const ProbabilityVector& p) {
  double m = 0.0;
  for (const auto& [_, v] : p.entries) m = std::max(m, v);
  return m;
}

struct GateDecision {
  bool accept = true;
  double max_prob = 0.0;
  double entropy = 0.0;
};

/// Flags a photo as insect-free only when the classifier is both unsure of
/// its top species and spread across many species.
inline GateDecision insect_presence_gate(const ProbabilityVector& p, double min_max_prob,
                                         std::optional<double> max_entropy = std::nullopt) {
  GateDecision g;
  g.max_prob = max_probability(p);
  g.entropy = entropy_nats(p);
  double limit = max_entropy.value_or(0.9 * std::log(static_cast<double>(p.size())));
  g.accept = !(g.max_prob < min_max_prob && g.entropy > limit);
  return g;
}

/// The verdict screen() would give, without touching the index.
inline ScreeningVerdict assess(PerceptualHash h, const ProbabilityVector* p, const HashIndex& index,
                               const ScreeningConfig& config) {
  ScreeningVerdict v;
  if (auto m = duplicate_check(h, index, config.d_max)) {
    v.status = ScreeningStatus::FlaggedDuplicate;
    v.matched_observation_id = m->observation_id;
    return v;
  }
  if (!p) throw Error(ErrorCode::InvalidArgument, "screening a fresh image needs its scores");
  auto gate = insect_presence_gate(*p, config.min_max_prob, config.max_entropy);
  v.max_species_prob = gate.max_prob;
  v.entropy = gate.entropy;
  if (config.presence_gate && !gate.accept) v.status = ScreeningStatus::FlaggedNoInsect;
  return v;
}

/// Duplicate check first, then the presence gate. Only accepted hashes
/// become dedup anchors.
inline ScreeningVerdict screen(PerceptualHash h, const ProbabilityVector* p, HashIndex& index,
                               const ScreeningConfig& config, std::string_view observation_id) {
  auto v = assess(h, p, index, config);
  if (v.status == ScreeningStatus::Accepted) index.insert(h, std::string(observation_id));
  return v;
}

inline ScreeningVerdict screen(const Image& image, const ProbabilityVector& p, HashIndex& index,
                               const ScreeningConfig& config, std::string_view observation_id) {
  return screen(perceptual_hash(image), &p, index, config, observation_id);
}

}  // namespace insectup
