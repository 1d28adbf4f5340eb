#pragma once

// The 43 built-environment features per station and month, plus the
// temporal features (month of year, station age).

#include <algorithm>
#include <array>
#include <map>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tripgen/common.hpp"
#include "tripgen/csv.hpp"
#include "tripgen/data_pipeline.hpp"
#include "tripgen/geo.hpp"
#include "tripgen/year_month.hpp"

namespace tripgen {

inline constexpr std::size_t kPoiCount = 10;
inline constexpr std::size_t kSocioCount = 11;
inline constexpr std::size_t kRoadLevelCount = 7;
inline constexpr std::size_t kRoadCount = 2 * kRoadLevelCount + 2;
inline constexpr std::size_t kTransitCount = 2;
inline constexpr std::size_t kBssCount = 4;
inline constexpr std::size_t kFeatureCount = kPoiCount + kSocioCount + kRoadCount + kTransitCount + kBssCount;
static_assert(kFeatureCount == 43);

// Offsets of each block inside the vector.
inline constexpr std::size_t kPoiOffset = 0;
inline constexpr std::size_t kSocioOffset = kPoiOffset + kPoiCount;
inline constexpr std::size_t kRoadOffset = kSocioOffset + kSocioCount;
inline constexpr std::size_t kTransitOffset = kRoadOffset + kRoadCount;
inline constexpr std::size_t kBssOffset = kTransitOffset + kTransitCount;

struct FeatureConfig {
  std::array<std::string, kPoiCount> poi_categories = {"residential", "educational",    "cultural",   "recreational",
                                                       "commercial",  "religious",      "transportation", "government",
                                                       "health",      "social_services"};
  std::array<std::string, kSocioCount> tract_attributes = {
      "population_density", "housing_unit_density", "pct_in_households", "pct_under_18",
      "avg_household_size", "total_housing_units",  "pct_occupied_housing", "pct_hispanic",
      "pct_white",          "pct_asian",            "pct_black"};
  std::array<std::string, kRoadLevelCount> road_levels = {"motorway", "trunk",        "primary",    "secondary",
                                                          "tertiary", "unclassified", "residential"};
  double radius_m = 500.0;
  std::array<double, 3> band_edges_m = {500.0, 1000.0, 5000.0};
};

/// Column names in vector order.
inline std::vector<std::string> feature_names(const FeatureConfig& cfg = {}) {
  std::vector<std::string> names;
  for (const auto& c : cfg.poi_categories) names.push_back("poi_" + c);
  for (const auto& a : cfg.tract_attributes) names.push_back(a);
  for (const auto& l : cfg.road_levels) names.push_back("road_count_" + l);
  for (const auto& l : cfg.road_levels) names.push_back("road_length_" + l);
  names.push_back("bike_lane_length");
  names.push_back("junction_count");
  names.push_back("subway_distance");
  names.push_back("subway_count");
  names.push_back("bss_count_0_500");
  names.push_back("bss_count_500_1000");
  names.push_back("bss_count_1000_5000");
  names.push_back("bss_mean_distance");
  return names;
}

/// Built-environment vector of one station in one month.
struct FeatureVector {
  std::array<double, kFeatureCount> values{};

  [[nodiscard]] std::span<const double> poi() const { return {values.data() + kPoiOffset, kPoiCount}; }
  [[nodiscard]] std::span<const double> sociodemographics() const { return {values.data() + kSocioOffset, kSocioCount}; }
  [[nodiscard]] std::span<const double> road_network() const { return {values.data() + kRoadOffset, kRoadCount}; }
  [[nodiscard]] std::span<const double> transit() const { return {values.data() + kTransitOffset, kTransitCount}; }
  [[nodiscard]] std::span<const double> bss_network() const { return {values.data() + kBssOffset, kBssCount}; }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const FeatureVector&) const = default;
};

struct TemporalFeatures {
  int month_index = 0;  // 0 = January
  int station_age = 0;  // months since first active month
};

inline TemporalFeatures temporal_features(const StationRecord& station, YearMonth month) {
  return {month.month_of_year(), std::max(0, month - station.first_active_month)};
}

// ---------------------------------------------------------------------------
// Individual extractors

/// Point counts within radius_m (inclusive), one bin per category. Layers
/// without categories (subways, junctions) are passed an empty list and
/// produce a single total.
inline std::vector<double> extract_radius_counts(geo::LatLon center, const geo::GeoLayer& layer, double radius_m,
                                                 std::span<const std::string> categories = {}) {
  std::vector<double> counts(categories.empty() ? 1 : categories.size(), 0.0);
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < categories.size(); ++i) index.emplace(categories[i], i);
  const geo::SearchBox box(center, radius_m);
  for (const auto& p : layer.points) {
    std::size_t bin = 0;
    if (!categories.empty()) {
      auto it = index.find(p.category);
      if (it == index.end())
        throw DataError(geo::to_string(layer.kind) + ": unknown category '" + p.category + "'");
      bin = it->second;
    }
    if (box.may_contain(p.pos) && geo::haversine(center, p.pos) <= radius_m) counts[bin] += 1.0;
  }
  return counts;
}

/// Attributes of the tract containing the point, else of the tract with the
/// nearest centroid.
inline std::array<double, kSocioCount> extract_sociodemographics(geo::LatLon center, const geo::GeoLayer& tracts,
                                                                 std::span<const std::string, kSocioCount> attributes) {
  if (tracts.polygons.empty()) throw DataError("census_tract layer is empty");
  const geo::PolygonFeature* match = nullptr;
  for (const auto& t : tracts.polygons) {
    if (geo::polygon_contains(t, center)) {
      match = &t;
      break;
    }
  }
  if (!match) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : tracts.polygons) {
      const double d = geo::haversine(center, geo::centroid(t));
      if (d < best) {
        best = d;
        match = &t;
      }
    }
  }
  std::array<double, kSocioCount> out{};
  for (std::size_t i = 0; i < kSocioCount; ++i) {
    auto it = match->attributes.find(attributes[i]);
    if (it == match->attributes.end())
      throw DataError("tract " + match->id + " lacks attribute '" + attributes[i] + "'");
    out[i] = it->second;
  }
  return out;
}

struct RoadFeatures {
  std::array<double, kRoadLevelCount> count{};
  std::array<double, kRoadLevelCount> length_m{};
};

namespace detail {

inline geo::LatLon midpoint(geo::LatLon a, geo::LatLon b) { return {(a.lat + b.lat) / 2, (a.lon + b.lon) / 2}; }

/// Length of the segments whose midpoint lies within the radius; whether
/// any segment qualified.
inline std::pair<double, bool> line_length_within(geo::LatLon center, const geo::LineFeature& line, double radius_m,
                                                  const geo::SearchBox& box) {
  double length = 0;
  bool touched = false;
  for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
    const auto mid = midpoint(line.points[i], line.points[i + 1]);
    if (!box.may_contain(mid) || geo::haversine(center, mid) > radius_m) continue;
    length += geo::haversine(line.points[i], line.points[i + 1]);
    touched = true;
  }
  return {length, touched};
}

}  // namespace detail

/// Per road level: number of roads with a segment midpoint inside the
/// radius and the summed length of those segments. Roads whose level is
/// not configured are ignored.
inline RoadFeatures extract_road_features(geo::LatLon center, const geo::GeoLayer& roads, double radius_m,
                                          std::span<const std::string, kRoadLevelCount> levels) {
  RoadFeatures out;
  const geo::SearchBox box(center, radius_m);
  for (const auto& line : roads.lines) {
    auto it = std::find(levels.begin(), levels.end(), line.level);
    if (it == levels.end()) continue;
    const auto [len, touched] = detail::line_length_within(center, line, radius_m, box);
    if (!touched) continue;
    const auto lvl = static_cast<std::size_t>(it - levels.begin());
    out.count[lvl] += 1.0;
    out.length_m[lvl] += len;
  }
  return out;
}

/// Bike-lane length within the radius counting lanes open by `month`.
inline double extract_bike_lane_length(geo::LatLon center, const geo::GeoLayer& lanes, double radius_m, YearMonth month) {
  double total = 0;
  const geo::SearchBox box(center, radius_m);
  for (const auto& line : lanes.lines) {
    if (line.open_month && month < *line.open_month) continue;
    total += detail::line_length_within(center, line, radius_m, box).first;
  }
  return total;
}

/// Distance to the nearest subway station and count within radius.
inline std::array<double, 2> extract_transit(geo::LatLon center, const geo::GeoLayer& subways, double radius_m) {
  if (subways.points.empty()) throw DataError("subway layer is empty");
  double nearest = std::numeric_limits<double>::infinity();
  double count = 0;
  for (const auto& p : subways.points) {
    const double d = geo::haversine(center, p.pos);
    nearest = std::min(nearest, d);
    if (d <= radius_m) count += 1.0;
  }
  return {nearest, count};
}

struct BssNetworkFeatures {
  std::array<double, 3> band_counts{};  // [0,500), [500,1000), [1000,5000) m
  double mean_distance_m = 0;
  bool isolated = false;  // no other active station; mean reported as 0

  [[nodiscard]] std::array<double, kBssCount> values() const {
    return {band_counts[0], band_counts[1], band_counts[2], mean_distance_m};
  }
};

/// Band counts and mean distance to the other active stations. The target
/// is excluded by id if present in `active`.
inline BssNetworkFeatures extract_bss_network(const StationRecord& station, std::span<const StationRecord> active,
                                              const std::array<double, 3>& edges = {500.0, 1000.0, 5000.0}) {
  BssNetworkFeatures out;
  const geo::LatLon c{station.lat, station.lon};
  double sum = 0;
  std::size_t n = 0;
  for (const auto& other : active) {
    if (other.id == station.id) continue;
    const double d = geo::haversine(c, {other.lat, other.lon});
    sum += d;
    ++n;
    if (d < edges[0]) out.band_counts[0] += 1;
    else if (d < edges[1]) out.band_counts[1] += 1;
    else if (d < edges[2]) out.band_counts[2] += 1;
  }
  if (n == 0) out.isolated = true;
  else out.mean_distance_m = sum / static_cast<double>(n);
  return out;
}

/// The mean-distance part of extract_bss_network alone, accumulated in the
/// same order so the two agree bit for bit.
inline double bss_mean_distance(const StationRecord& station, std::span<const StationRecord> active) {
  const geo::LatLon c{station.lat, station.lon};
  double sum = 0;
  std::size_t n = 0;
  for (const auto& other : active) {
    if (other.id == station.id) continue;
    sum += geo::haversine(c, {other.lat, other.lon});
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Assembly

/// The 37 features that do not depend on the station network. Only the
/// bike-lane length depends on the month.
struct StaticFeatures {
  std::array<double, kPoiCount> poi{};
  std::array<double, kSocioCount> socio{};
  RoadFeatures road;
  double junction_count = 0;
  std::array<double, 2> transit{};
};

inline StaticFeatures extract_static_features(geo::LatLon c, const geo::LayerSet& layers, const FeatureConfig& cfg) {
  StaticFeatures s;
  const auto poi = extract_radius_counts(c, layers.get(geo::LayerKind::poi), cfg.radius_m, cfg.poi_categories);
  std::copy(poi.begin(), poi.end(), s.poi.begin());
  s.socio = extract_sociodemographics(c, layers.get(geo::LayerKind::census_tract), cfg.tract_attributes);
  s.road = extract_road_features(c, layers.get(geo::LayerKind::road), cfg.radius_m, cfg.road_levels);
  s.junction_count = extract_radius_counts(c, layers.get(geo::LayerKind::junction), cfg.radius_m)[0];
  s.transit = extract_transit(c, layers.get(geo::LayerKind::subway), cfg.radius_m);
  return s;
}

inline FeatureVector combine_features(const StaticFeatures& s, double bike_lane_length, const BssNetworkFeatures& bss) {
  FeatureVector v;
  std::size_t i = 0;
  for (double x : s.poi) v[i++] = x;
  for (double x : s.socio) v[i++] = x;
  for (double x : s.road.count) v[i++] = x;
  for (double x : s.road.length_m) v[i++] = x;
  v[i++] = bike_lane_length;
  v[i++] = s.junction_count;
  v[i++] = s.transit[0];
  v[i++] = s.transit[1];
  for (double x : bss.values()) v[i++] = x;
  return v;
}

/// Full 43-vector: poi, sociodemographics, road network, transit, BSS
/// network, in that order.
inline FeatureVector assemble_features(const StationRecord& station, YearMonth month, const geo::LayerSet& layers,
                                       std::span<const StationRecord> active, const FeatureConfig& cfg = {}) {
  layers.require_all();
  const geo::LatLon c{station.lat, station.lon};
  const auto s = extract_static_features(c, layers, cfg);
  const double lanes = extract_bike_lane_length(c, layers.get(geo::LayerKind::bike_lane), cfg.radius_m, month);
  return combine_features(s, lanes, extract_bss_network(station, active, cfg.band_edges_m));
}

/// assemble_features with the network-independent part cached per
/// location. Safe to share across threads.
class FeatureExtractor {
 public:
  FeatureExtractor(const geo::LayerSet& layers, FeatureConfig cfg = {}) : layers_(layers), cfg_(std::move(cfg)) {
    layers_.require_all();
  }

  [[nodiscard]] const FeatureConfig& config() const { return cfg_; }
  [[nodiscard]] const geo::LayerSet& layers() const { return layers_; }

  const StaticFeatures& static_features(geo::LatLon c) const {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(c);
    if (it == cache_.end()) it = cache_.emplace(c, extract_static_features(c, layers_, cfg_)).first;
    return it->second;
  }

  double bike_lane_length(geo::LatLon c, YearMonth month) const {
    return extract_bike_lane_length(c, layers_.get(geo::LayerKind::bike_lane), cfg_.radius_m, month);
  }

  FeatureVector operator()(const StationRecord& station, YearMonth month, std::span<const StationRecord> active) const {
    const geo::LatLon c{station.lat, station.lon};
    return combine_features(static_features(c), bike_lane_length(c, month),
                            extract_bss_network(station, active, cfg_.band_edges_m));
  }

 private:
  const geo::LayerSet& layers_;
  FeatureConfig cfg_;
  mutable std::mutex mutex_;
  mutable std::map<geo::LatLon, StaticFeatures> cache_;
};

// ---------------------------------------------------------------------------
// Feature matrix export

struct FeatureRow {
  std::string station_id;
  YearMonth month;
  FeatureVector x;
};

inline void write_feature_table(std::ostream& out, std::span<const FeatureRow> rows, const FeatureConfig& cfg = {}) {
  std::vector<std::string> header = {"station_id", "month"};
  for (auto& n : feature_names(cfg)) header.push_back(std::move(n));
  csv::write_row(out, header);
  for (const auto& r : rows) {
    std::vector<std::string> fields = {r.station_id, r.month.to_string()};
    for (double v : r.x.values) fields.push_back(csv::format_double(v));
    csv::write_row(out, fields);
  }
}

inline std::vector<FeatureRow> read_feature_table(std::istream& in, const FeatureConfig& cfg = {}) {
  csv::Reader reader(in);
  const auto names = feature_names(cfg);
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(reader.column(n));
  const auto c_id = reader.column("station_id"), c_m = reader.column("month");
  std::vector<FeatureRow> out;
  std::vector<std::string> row;
  while (reader.next(row)) {
    FeatureRow r{row.at(c_id), YearMonth::parse(row.at(c_m)), {}};
    for (std::size_t i = 0; i < kFeatureCount; ++i) r.x[i] = csv::parse_double(row.at(cols[i]));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tripgen
