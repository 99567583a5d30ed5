#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "insectup/csv.hpp"
#include "insectup/error.hpp"
#include "insectup/taxonomy.hpp"

namespace insectup {

inline constexpr double kDefaultCellSize = 0.5;

struct GridCell {
  std::int64_t lat_idx = 0;
  std::int64_t lon_idx = 0;
  double cell_size_deg = kDefaultCellSize;

  auto key() const { return std::tie(lat_idx, lon_idx); }
  friend bool operator==(const GridCell&, const GridCell&) = default;
  friend bool operator<(const GridCell& a, const GridCell& b) { return a.key() < b.key(); }
};

inline bool valid_coordinates(double lat, double lon) {
  return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

/// Equal-angle grid. Longitude 180 is the same meridian as -180.
inline GridCell grid_cell(double lat, double lon, double cell_size_deg) {
  if (!(cell_size_deg > 0.0) || !std::isfinite(cell_size_deg)) {
    throw Error(ErrorCode::OutOfRange, "cell size must be positive");
  }
  if (!valid_coordinates(lat, lon)) {
    throw Error(ErrorCode::OutOfRange, "coordinates (" + csv::format_number(lat) + ", " +
                                           csv::format_number(lon) + ") out of range");
  }
  if (lon == 180.0) lon = -180.0;
  return {static_cast<std::int64_t>(std::floor(lat / cell_size_deg)),
          static_cast<std::int64_t>(std::floor(lon / cell_size_deg)), cell_size_deg};
}

struct YearMonth {
  int year = 1970;
  int month = 1;  // 1..12

  auto key() const { return std::tie(year, month); }
  friend bool operator==(const YearMonth&, const YearMonth&) = default;
  friend bool operator<(const YearMonth& a, const YearMonth& b) { return a.key() < b.key(); }

  YearMonth next() const { return month == 12 ? YearMonth{year + 1, 1} : YearMonth{year, month + 1}; }
};

inline YearMonth utc_month(std::int64_t unix_seconds) {
  using namespace std::chrono;
  auto days = floor<std::chrono::days>(sys_seconds{seconds{unix_seconds}});
  year_month_day ymd{days};
  return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month()))};
}

/// An accepted observation carrying its final label.
struct Occurrence {
  std::string observation_id;
  std::string taxon_id;
  double latitude = 0.0;
  double longitude = 0.0;
  std::int64_t captured_at = 0;
};

struct DemographyCell {
  std::string taxon_id;
  GridCell cell;
  YearMonth bucket;
  std::size_t count = 0;
  std::size_t total_in_cell_bucket = 0;
  double relative_frequency = 0.0;

  friend bool operator==(const DemographyCell&, const DemographyCell&) = default;
};

/// Per (cell, month): how many occurrences fall under `taxon_filter`, next to
/// the total of all occurrences there. Rows with a zero count are omitted.
inline std::vector<DemographyCell> aggregate(std::span<const Occurrence> occurrences,
                                             std::string_view taxon_filter, double cell_size,
                                             const Taxonomy& t) {
  auto filter = t.index_of(taxon_filter);
  using Key = std::tuple<std::int64_t, std::int64_t, int, int>;
  std::map<Key, std::pair<std::size_t, std::size_t>> tally;  // (count, total)
  for (const auto& o : occurrences) {
    auto c = grid_cell(o.latitude, o.longitude, cell_size);
    auto m = utc_month(o.captured_at);
    auto& slot = tally[{c.lat_idx, c.lon_idx, m.year, m.month}];
    slot.second++;
    if (t.is_ancestor_or_self(filter, t.index_of(o.taxon_id))) slot.first++;
  }
  std::vector<DemographyCell> out;
  for (const auto& [key, v] : tally) {
    if (v.first == 0) continue;
    auto [lat, lon, y, mo] = key;
    out.push_back({std::string(taxon_filter), {lat, lon, cell_size}, {y, mo}, v.first, v.second,
                   static_cast<double>(v.first) / static_cast<double>(v.second)});
  }
  return out;
}

struct SeriesPoint {
  YearMonth month;
  std::size_t count = 0;
  std::optional<double> relative_frequency;  // none for months without data

  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

/// Month-by-month history of one taxon in one cell; gaps between the first
/// and last observed month are filled with zero counts.
inline std::vector<SeriesPoint> fluctuation_series(std::span<const DemographyCell> cells,
                                                   std::string_view taxon, const GridCell& cell) {
  std::map<YearMonth, const DemographyCell*> months;
  for (const auto& c : cells) {
    if (c.taxon_id == taxon && c.cell.lat_idx == cell.lat_idx && c.cell.lon_idx == cell.lon_idx) {
      months[c.bucket] = &c;
    }
  }
  std::vector<SeriesPoint> out;
  if (months.empty()) return out;
  auto last = months.rbegin()->first;
  for (auto m = months.begin()->first;; m = m.next()) {
    auto it = months.find(m);
    if (it == months.end()) {
      out.push_back({m, 0, std::nullopt});
    } else {
      out.push_back({m, it->second->count, it->second->relative_frequency});
    }
    if (m == last) break;
  }
  return out;
}

struct NoveltyEvent {
  std::string taxon_id;
  GridCell cell;
  std::int64_t first_timestamp = 0;
  std::string observation_id;

  friend bool operator==(const NoveltyEvent&, const NoveltyEvent&) = default;
};

/// First occurrence of each species in each cell. Coarser labels are not
/// species records and are skipped.
inline std::vector<NoveltyEvent> novelty_scan(std::span<const Occurrence> occurrences,
                                              const Taxonomy& t, double cell_size) {
  std::map<std::tuple<std::string, std::int64_t, std::int64_t>, NoveltyEvent> first;
  for (const auto& o : occurrences) {
    if (t.node(o.taxon_id).rank != Rank::Species) continue;
    auto c = grid_cell(o.latitude, o.longitude, cell_size);
    NoveltyEvent e{o.taxon_id, c, o.captured_at, o.observation_id};
    auto [it, inserted] = first.try_emplace({o.taxon_id, c.lat_idx, c.lon_idx}, e);
    if (!inserted) {
      auto& cur = it->second;
      if (std::tie(e.first_timestamp, e.observation_id) <
          std::tie(cur.first_timestamp, cur.observation_id)) {
        cur = e;
      }
    }
  }
  std::vector<NoveltyEvent> out;
  out.reserve(first.size());
  for (auto& [_, e] : first) out.push_back(std::move(e));
  std::sort(out.begin(), out.end(), [](const NoveltyEvent& a, const NoveltyEvent& b) {
    return std::tie(a.first_timestamp, a.observation_id, a.taxon_id) <
           std::tie(b.first_timestamp, b.observation_id, b.taxon_id);
  });
  return out;
}

inline constexpr std::string_view kDemographyCsvHeader =
    "taxon_id,lat_idx,lon_idx,cell_size,year,month,count,total,relative_frequency";
inline constexpr std::string_view kNoveltyCsvHeader =
    "taxon_id,lat_idx,lon_idx,first_timestamp,observation_id";

/// Rows ordered by (taxon, cell, month) whatever the input order.
inline std::string demography_csv(std::vector<DemographyCell> rows) {
  std::sort(rows.begin(), rows.end(), [](const DemographyCell& a, const DemographyCell& b) {
    return std::tie(a.taxon_id, a.cell.lat_idx, a.cell.lon_idx, a.bucket.year, a.bucket.month) <
           std::tie(b.taxon_id, b.cell.lat_idx, b.cell.lon_idx, b.bucket.year, b.bucket.month);
  });
  std::string out(kDemographyCsvHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    csv::append_row(out, {r.taxon_id, std::to_string(r.cell.lat_idx),
                          std::to_string(r.cell.lon_idx), csv::format_number(r.cell.cell_size_deg),
                          std::to_string(r.bucket.year), std::to_string(r.bucket.month),
                          std::to_string(r.count), std::to_string(r.total_in_cell_bucket),
                          csv::format_number(r.relative_frequency)});
  }
  return out;
}

inline std::string novelty_csv(std::span<const NoveltyEvent> events) {
  std::string out(kNoveltyCsvHeader);
  out.push_back('\n');
  for (const auto& e : events) {
    csv::append_row(out, {e.taxon_id, std::to_string(e.cell.lat_idx),
                          std::to_string(e.cell.lon_idx), std::to_string(e.first_timestamp),
                          e.observation_id});
  }
  return out;
}

}  // namespace insectup
