#pragma once

// WGS84 points, great-circle distance, and the vector layers (POIs,
// census tracts, roads, bike lanes, subway stations, junctions) with
// GeoJSON input/output.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripgen/common.hpp"
#include "tripgen/year_month.hpp"

namespace tripgen::geo {

inline constexpr double kEarthRadiusM = 6'371'000.0;

struct LatLon {
  double lat = 0;
  double lon = 0;
  bool operator==(const LatLon&) const = default;
  auto operator<=>(const LatLon&) const = default;
};

inline double to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

/// Great-circle distance in meters.
inline double haversine(LatLon a, LatLon b) {
  const double phi1 = to_radians(a.lat), phi2 = to_radians(b.lat);
  const double dphi = phi2 - phi1, dlam = to_radians(b.lon - a.lon);
  const double s1 = std::sin(dphi / 2), s2 = std::sin(dlam / 2);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

inline bool valid(LatLon p) { return p.lat >= -90 && p.lat <= 90 && p.lon >= -180 && p.lon <= 180; }

/// Cheap rejection box around a center: any point farther than radius_m
/// lies outside it.
struct SearchBox {
  double lat_lo, lat_hi, lon_lo, lon_hi;
  bool full_lon = false;

  SearchBox(LatLon c, double radius_m) {
    const double dlat = radius_m / kEarthRadiusM * 180.0 / std::numbers::pi * 1.000001 + 1e-9;
    lat_lo = c.lat - dlat;
    lat_hi = c.lat + dlat;
    const double max_abs_lat = std::max(std::abs(lat_lo), std::abs(lat_hi));
    if (max_abs_lat >= 89.0) {
      full_lon = true;
      lon_lo = lon_hi = 0;
    } else {
      const double dlon = dlat / std::cos(to_radians(max_abs_lat));
      lon_lo = c.lon - dlon;
      lon_hi = c.lon + dlon;
      full_lon = lon_lo < -180 || lon_hi > 180;
    }
  }
  [[nodiscard]] bool may_contain(LatLon p) const {
    if (p.lat < lat_lo || p.lat > lat_hi) return false;
    return full_lon || (p.lon >= lon_lo && p.lon <= lon_hi);
  }
};

// ---------------------------------------------------------------------------
// Layers

enum class LayerKind { poi, census_tract, road, bike_lane, subway, junction };

inline constexpr std::array<LayerKind, 6> kAllLayerKinds = {LayerKind::poi,       LayerKind::census_tract,
                                                            LayerKind::road,      LayerKind::bike_lane,
                                                            LayerKind::subway,    LayerKind::junction};

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::poi: return "poi";
    case LayerKind::census_tract: return "census_tract";
    case LayerKind::road: return "road";
    case LayerKind::bike_lane: return "bike_lane";
    case LayerKind::subway: return "subway";
    case LayerKind::junction: return "junction";
  }
  return "?";
}

struct PointFeature {
  LatLon pos;
  std::string category;  // POI category; empty for subways and junctions
};

struct LineFeature {
  std::vector<LatLon> points;
  std::string level;                   // road level; empty for bike lanes
  std::optional<YearMonth> open_month;  // bike lanes only
};

struct PolygonFeature {
  std::string id;
  std::vector<std::vector<LatLon>> rings;  // outer ring first, then holes
  std::map<std::string, double> attributes;
};

struct GeoLayer {
  LayerKind kind = LayerKind::poi;
  std::vector<PointFeature> points;
  std::vector<LineFeature> lines;
  std::vector<PolygonFeature> polygons;
};

// ---------------------------------------------------------------------------
// Planar geometry on lon/lat (adequate at census-tract scale)

/// Ray casting on one ring; points on an edge may fall either way.
inline bool ring_contains(std::span<const LatLon> ring, LatLon p) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const LatLon a = ring[i], b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

inline bool polygon_contains(const PolygonFeature& poly, LatLon p) {
  if (poly.rings.empty() || !ring_contains(poly.rings.front(), p)) return false;
  for (std::size_t h = 1; h < poly.rings.size(); ++h)
    if (ring_contains(poly.rings[h], p)) return false;
  return true;
}

/// Area centroid of the outer ring; falls back to the vertex mean for
/// degenerate rings.
inline LatLon centroid(const PolygonFeature& poly) {
  if (poly.rings.empty() || poly.rings.front().empty()) throw DataError("tract " + poly.id + " has no outer ring");
  const auto& r = poly.rings.front();
  double a2 = 0, cx = 0, cy = 0;
  const std::size_t n = r.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double cross = r[j].lon * r[i].lat - r[i].lon * r[j].lat;
    a2 += cross;
    cx += (r[j].lon + r[i].lon) * cross;
    cy += (r[j].lat + r[i].lat) * cross;
  }
  if (std::abs(a2) < 1e-18) {
    LatLon m{0, 0};
    for (const auto& p : r) {
      m.lat += p.lat;
      m.lon += p.lon;
    }
    return {m.lat / static_cast<double>(n), m.lon / static_cast<double>(n)};
  }
  return {cy / (3.0 * a2), cx / (3.0 * a2)};
}

// ---------------------------------------------------------------------------
// GeoJSON

namespace detail {

inline LatLon read_position(const nlohmann::json& c, const std::string& where) {
  if (!c.is_array() || c.size() < 2) throw DataError(where + ": malformed position");
  LatLon p{c[1].get<double>(), c[0].get<double>()};
  if (!valid(p)) throw DataError(where + ": coordinates outside WGS84 range");
  return p;
}

inline std::vector<LatLon> read_positions(const nlohmann::json& c, const std::string& where) {
  std::vector<LatLon> out;
  for (const auto& p : c) out.push_back(read_position(p, where));
  return out;
}

inline nlohmann::json write_position(LatLon p) { return nlohmann::json::array({p.lon, p.lat}); }

inline nlohmann::json write_positions(std::span<const LatLon> ps) {
  auto a = nlohmann::json::array();
  for (auto p : ps) a.push_back(write_position(p));
  return a;
}

inline std::optional<YearMonth> read_open_month(const nlohmann::json& props) {
  if (!props.contains("open_date") || props["open_date"].is_null()) return std::nullopt;
  const auto text = props["open_date"].get<std::string>();
  if (text.empty()) return std::nullopt;
  return YearMonth::parse(text);
}

}  // namespace detail

/// Parses a FeatureCollection into a layer of the given kind. Geometry
/// types must match the kind (Point / LineString / Polygon, plus their
/// Multi* forms). Category and level checks happen in feature extraction.
inline GeoLayer parse_geojson(const nlohmann::json& doc, LayerKind kind) {
  GeoLayer layer;
  layer.kind = kind;
  if (doc.value("type", "") != "FeatureCollection") throw DataError(to_string(kind) + ": expected a FeatureCollection");
  std::size_t index = 0;
  for (const auto& f : doc.at("features")) {
    const std::string where = to_string(kind) + " feature " + std::to_string(index++);
    const auto& geom = f.at("geometry");
    const auto& props = f.contains("properties") && f["properties"].is_object() ? f["properties"] : nlohmann::json::object();
    const std::string type = geom.at("type").get<std::string>();
    const auto& coords = geom.at("coordinates");
    switch (kind) {
      case LayerKind::poi:
      case LayerKind::subway:
      case LayerKind::junction: {
        const std::string category = kind == LayerKind::poi ? props.value("category", "") : "";
        if (type == "Point") layer.points.push_back({detail::read_position(coords, where), category});
        else if (type == "MultiPoint")
          for (const auto& c : coords) layer.points.push_back({detail::read_position(c, where), category});
        else throw DataError(where + ": expected Point geometry, got " + type);
        break;
      }
      case LayerKind::road:
      case LayerKind::bike_lane: {
        LineFeature proto;
        if (kind == LayerKind::road) proto.level = props.value("level", "");
        else proto.open_month = detail::read_open_month(props);
        if (type == "LineString") {
          proto.points = detail::read_positions(coords, where);
          layer.lines.push_back(std::move(proto));
        } else if (type == "MultiLineString") {
          for (const auto& part : coords) {
            LineFeature line = proto;
            line.points = detail::read_positions(part, where);
            layer.lines.push_back(std::move(line));
          }
        } else {
          throw DataError(where + ": expected LineString geometry, got " + type);
        }
        break;
      }
      case LayerKind::census_tract: {
        PolygonFeature proto;
        if (props.contains("id")) proto.id = props["id"].is_string() ? props["id"].get<std::string>() : props["id"].dump();
        else proto.id = "tract-" + std::to_string(index - 1);
        for (const auto& [k, v] : props.items())
          if (v.is_number()) proto.attributes[k] = v.get<double>();
        auto add = [&](const nlohmann::json& rings) {
          PolygonFeature p = proto;
          for (const auto& r : rings) p.rings.push_back(detail::read_positions(r, where));
          layer.polygons.push_back(std::move(p));
        };
        if (type == "Polygon") add(coords);
        else if (type == "MultiPolygon")
          for (const auto& part : coords) add(part);
        else throw DataError(where + ": expected Polygon geometry, got " + type);
        break;
      }
    }
  }
  return layer;
}

inline nlohmann::json to_geojson(const GeoLayer& layer) {
  auto features = nlohmann::json::array();
  for (const auto& p : layer.points) {
    nlohmann::json props = nlohmann::json::object();
    if (layer.kind == LayerKind::poi) props["category"] = p.category;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", detail::write_position(p.pos)}}},
                        {"properties", props}});
  }
  for (const auto& l : layer.lines) {
    nlohmann::json props = nlohmann::json::object();
    if (layer.kind == LayerKind::road) props["level"] = l.level;
    if (l.open_month) props["open_date"] = l.open_month->to_string();
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", detail::write_positions(l.points)}}},
                        {"properties", props}});
  }
  for (const auto& poly : layer.polygons) {
    nlohmann::json props = {{"id", poly.id}};
    for (const auto& [k, v] : poly.attributes) props[k] = v;
    auto rings = nlohmann::json::array();
    for (const auto& r : poly.rings) rings.push_back(detail::write_positions(r));
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline GeoLayer load_geojson(const std::filesystem::path& path, LayerKind kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open layer file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return parse_geojson(doc, kind);
}

inline void save_geojson(const std::filesystem::path& path, const GeoLayer& layer) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write layer file " + path.string());
  out << to_geojson(layer).dump();
}

/// Builds a junction layer from road vertices incident to at least three
/// segment ends (interior vertices count twice, line ends once).
inline GeoLayer derive_junctions(const GeoLayer& roads) {
  std::map<LatLon, int> degree;
  for (const auto& line : roads.lines) {
    for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
      ++degree[line.points[i]];
      ++degree[line.points[i + 1]];
    }
  }
  GeoLayer out;
  out.kind = LayerKind::junction;
  for (const auto& [p, d] : degree)
    if (d >= 3) out.points.push_back({p, ""});
  return out;
}

/// The six layers keyed by kind.
class LayerSet {
 public:
  void set(GeoLayer layer) { layers_[layer.kind] = std::move(layer); }
  [[nodiscard]] bool has(LayerKind k) const { return layers_.contains(k); }
  [[nodiscard]] const GeoLayer& get(LayerKind k) const {
    auto it = layers_.find(k);
    if (it == layers_.end()) throw ConfigError("missing layer '" + to_string(k) + "'");
    return it->second;
  }

  /// Adds the derived junction layer when none was supplied.
  void derive_junctions_if_missing() {
    if (!has(LayerKind::junction)) set(derive_junctions(get(LayerKind::road)));
  }

  void require_all() const {
    for (auto k : kAllLayerKinds) (void)get(k);
  }

  /// Lat/lon bounding box over every geometry in every layer.
  [[nodiscard]] std::array<double, 4> bounding_box() const {
    std::array<double, 4> box{90, -90, 180, -180};  // lat_lo, lat_hi, lon_lo, lon_hi
    auto extend = [&](LatLon p) {
      box[0] = std::min(box[0], p.lat);
      box[1] = std::max(box[1], p.lat);
      box[2] = std::min(box[2], p.lon);
      box[3] = std::max(box[3], p.lon);
    };
    for (const auto& [k, layer] : layers_) {
      for (const auto& p : layer.points) extend(p.pos);
      for (const auto& l : layer.lines)
        for (auto p : l.points) extend(p);
      for (const auto& poly : layer.polygons)
        for (const auto& r : poly.rings)
          for (auto p : r) extend(p);
    }
    return box;
  }

  /// Reads <dir>/<kind>.geojson for every kind; junctions are derived when
  /// the file is absent.
  static LayerSet load_directory(const std::filesystem::path& dir) {
    LayerSet set;
    for (auto k : kAllLayerKinds) {
      const auto path = dir / (to_string(k) + ".geojson");
      if (std::filesystem::exists(path)) set.set(load_geojson(path, k));
      else if (k != LayerKind::junction) throw ConfigError("missing layer file " + path.string());
    }
    set.derive_junctions_if_missing();
    return set;
  }

  void save_directory(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [k, layer] : layers_) save_geojson(dir / (to_string(k) + ".geojson"), layer);
  }

 private:
  std::map<LayerKind, GeoLayer> layers_;
};

}  // namespace tripgen::geo
