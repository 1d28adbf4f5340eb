#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "tripgen/features.hpp"
#include "tripgen/geo.hpp"

using namespace tripgen;
using geo::LatLon;

namespace {

constexpr double kR = 6'371'000.0;
constexpr double kMetersPerDegree = kR * std::numbers::pi / 180.0;
const LatLon kCenter{40.0, -74.0};

// Spherical law of cosines via unit vectors; independent of haversine.
double chord_oracle(LatLon a, LatLon b) {
  auto v = [](LatLon p) {
    const double la = p.lat * std::numbers::pi / 180, lo = p.lon * std::numbers::pi / 180;
    return std::array<double, 3>{std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la)};
  };
  const auto x = v(a), y = v(b);
  const std::array<double, 3> c = {x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]};
  const double cross = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  const double dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
  return kR * std::atan2(cross, dot);
}

LatLon north(double m, LatLon from = kCenter) { return {from.lat + m / kMetersPerDegree, from.lon}; }

LatLon random_near(Rng& rng, LatLon c, double half_m) {
  return {c.lat + rng.uniform(-half_m, half_m) / kMetersPerDegree,
          c.lon + rng.uniform(-half_m, half_m) / (kMetersPerDegree * std::cos(c.lat * std::numbers::pi / 180))};
}

// Winding number; independent of the ray-casting implementation.
bool winding_contains(const std::vector<LatLon>& ring, LatLon p) {
  int wn = 0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const auto a = ring[i], b = ring[i + 1];
    const double side = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
    if (a.lat <= p.lat) {
      if (b.lat > p.lat && side > 0) ++wn;
    } else if (b.lat <= p.lat && side < 0) {
      --wn;
    }
  }
  return wn != 0;
}

geo::PolygonFeature square_tract(const std::string& id, LatLon sw, double side_deg, double base) {
  geo::PolygonFeature t;
  t.id = id;
  t.rings.push_back({sw, {sw.lat, sw.lon + side_deg}, {sw.lat + side_deg, sw.lon + side_deg},
                     {sw.lat + side_deg, sw.lon}, sw});
  const FeatureConfig cfg;
  for (std::size_t i = 0; i < kSocioCount; ++i) t.attributes[cfg.tract_attributes[i]] = base + static_cast<double>(i);
  return t;
}

StationRecord station(const std::string& id, LatLon p, YearMonth first = {2018, 1}) {
  return {id, p.lat, p.lon, first, std::nullopt};
}

}  // namespace

TEST(Haversine, IdentityAntipodesAndOracle) {
  EXPECT_EQ(geo::haversine(kCenter, kCenter), 0.0);
  EXPECT_NEAR(geo::haversine({0, 0}, {0, 180}), std::numbers::pi * kR, 1.0);
  const LatLon a{40.7128, -74.0060}, b{40.7580, -73.9855};
  const double d = geo::haversine(a, b);
  EXPECT_NEAR(d, chord_oracle(a, b), 1.0);
  EXPECT_NEAR(d, 5300, 100);
  EXPECT_EQ(d, geo::haversine(b, a));
}

TEST(Haversine, RandomPairsMatchOracle) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const LatLon a{rng.uniform(-80, 80), rng.uniform(-180, 180)}, b{rng.uniform(-80, 80), rng.uniform(-180, 180)};
    EXPECT_NEAR(geo::haversine(a, b), chord_oracle(a, b), 1e-3);
  }
}

TEST(RadiusCounts, EmptyLayerAndBoundary) {
  const FeatureConfig cfg;
  geo::GeoLayer poi;
  poi.kind = geo::LayerKind::poi;
  auto counts = extract_radius_counts(kCenter, poi, 500, cfg.poi_categories);
  EXPECT_EQ(counts, std::vector<double>(kPoiCount, 0.0));
  poi.points.push_back({north(499), "residential"});
  poi.points.push_back({north(501), "residential"});
  counts = extract_radius_counts(kCenter, poi, 500, cfg.poi_categories);
  EXPECT_EQ(counts[0], 1.0);
}

TEST(RadiusCounts, UnknownCategoryIsFatal) {
  const FeatureConfig cfg;
  geo::GeoLayer poi;
  poi.points.push_back({kCenter, "casino"});
  EXPECT_THROW(extract_radius_counts(kCenter, poi, 500, cfg.poi_categories), DataError);
}

TEST(RadiusCounts, MatchesBruteForceScan) {
  const FeatureConfig cfg;
  Rng rng(2);
  geo::GeoLayer poi;
  poi.kind = geo::LayerKind::poi;
  for (int i = 0; i < 200; ++i)
    poi.points.push_back({random_near(rng, kCenter, 1500), cfg.poi_categories[rng.below(kPoiCount)]});
  for (int q = 0; q < 20; ++q) {
    const auto c = random_near(rng, kCenter, 800);
    const auto got = extract_radius_counts(c, poi, 500, cfg.poi_categories);
    std::vector<double> want(kPoiCount, 0);
    for (const auto& p : poi.points)
      if (chord_oracle(c, p.pos) <= 500)
        for (std::size_t k = 0; k < kPoiCount; ++k)
          if (cfg.poi_categories[k] == p.category) want[k] += 1;
    EXPECT_EQ(got, want);
  }
}

TEST(Sociodemographics, InsideAndNearestFallback) {
  const FeatureConfig cfg;
  geo::GeoLayer tracts;
  tracts.kind = geo::LayerKind::census_tract;
  tracts.polygons.push_back(square_tract("A", {40.0, -74.0}, 0.01, 100));
  tracts.polygons.push_back(square_tract("B", {40.0, -73.95}, 0.01, 200));
  const auto inside = extract_sociodemographics({40.005, -73.995}, tracts, cfg.tract_attributes);
  EXPECT_EQ(inside[0], 100);
  EXPECT_EQ(inside[10], 110);
  // Between the tracts, closer to B's centroid.
  const auto outside = extract_sociodemographics({40.005, -73.96}, tracts, cfg.tract_attributes);
  EXPECT_EQ(outside[0], 200);
}

TEST(Sociodemographics, MissingAttributeNamesTract) {
  const FeatureConfig cfg;
  geo::GeoLayer tracts;
  auto t = square_tract("T9", {40.0, -74.0}, 0.01, 0);
  t.attributes.erase("pct_asian");
  tracts.polygons.push_back(t);
  try {
    extract_sociodemographics({40.005, -73.995}, tracts, cfg.tract_attributes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("T9"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("pct_asian"), std::string::npos);
  }
}

TEST(Sociodemographics, MatchesPointInPolygonOracle) {
  const FeatureConfig cfg;
  geo::GeoLayer tracts;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      auto t = square_tract("T" + std::to_string(r * 4 + c), {40.0 + 0.01 * r, -74.0 + 0.01 * c}, 0.01,
                            static_cast<double>(100 * (r * 4 + c)));
      // Skew the squares so edges are not axis-aligned.
      t.rings[0][2].lat += 0.002;
      tracts.polygons.push_back(t);
    }
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const LatLon p{40.0 + rng.uniform(0.0005, 0.0395), -74.0 + rng.uniform(0.0005, 0.0395)};
    const geo::PolygonFeature* want = nullptr;
    for (const auto& t : tracts.polygons)
      if (winding_contains(t.rings[0], p)) {
        want = &t;
        break;
      }
    if (!want) continue;
    EXPECT_EQ(extract_sociodemographics(p, tracts, cfg.tract_attributes)[0], want->attributes.at("population_density"));
  }
}

TEST(BssNetwork, WorkedExampleAndDegenerate) {
  const auto a = station("A", kCenter);
  const std::vector<StationRecord> active = {a, station("B", north(400)), station("C", north(-2000))};
  const auto f = extract_bss_network(a, active);
  EXPECT_EQ(f.band_counts, (std::array<double, 3>{1, 0, 1}));
  EXPECT_NEAR(f.mean_distance_m, 1200, 1e-6);
  EXPECT_FALSE(f.isolated);
  const std::vector<StationRecord> alone = {a};
  const auto g = extract_bss_network(a, alone);
  EXPECT_EQ(g.band_counts, (std::array<double, 3>{0, 0, 0}));
  EXPECT_EQ(g.mean_distance_m, 0);
  EXPECT_TRUE(g.isolated);
}

TEST(BssNetwork, MatchesBruteForceBands) {
  Rng rng(5);
  std::vector<StationRecord> active;
  for (int i = 0; i < 30; ++i) active.push_back(station("S" + std::to_string(i), random_near(rng, kCenter, 4000)));
  for (const auto& s : active) {
    std::array<double, 3> bands{};
    double sum = 0;
    for (const auto& o : active) {
      if (o.id == s.id) continue;
      const double d = chord_oracle({s.lat, s.lon}, {o.lat, o.lon});
      sum += d;
      if (d < 500) bands[0] += 1;
      else if (d < 1000) bands[1] += 1;
      else if (d < 5000) bands[2] += 1;
    }
    const auto f = extract_bss_network(s, active);
    EXPECT_EQ(f.band_counts, bands) << s.id;
    EXPECT_NEAR(f.mean_distance_m, sum / 29, 1e-6);
    EXPECT_EQ(bss_mean_distance(s, active), f.mean_distance_m);
  }
}

namespace {

// 5 POIs, 2 roads plus a spur forming one junction, 1 tract, 1 bike
// lane, 2 subway stations, all laid out around kCenter.
geo::LayerSet fixture_layers() {
  const FeatureConfig cfg;
  geo::LayerSet set;
  geo::GeoLayer poi;
  poi.kind = geo::LayerKind::poi;
  poi.points = {{north(100), "residential"}, {north(499), "residential"}, {north(-300), "commercial"},
                {north(501), "residential"}, {kCenter, "health"}};
  set.set(poi);
  geo::GeoLayer tracts;
  tracts.kind = geo::LayerKind::census_tract;
  tracts.polygons.push_back(square_tract("T", {39.99, -74.01}, 0.02, 10));
  set.set(tracts);
  geo::GeoLayer roads;
  roads.kind = geo::LayerKind::road;
  const LatLon j = north(200);
  const LatLon east{j.lat, j.lon + 300 / (kMetersPerDegree * std::cos(j.lat * std::numbers::pi / 180))};
  roads.lines.push_back({{north(-200), j, north(900)}, "primary", std::nullopt});
  roads.lines.push_back({{north(600), north(1000)}, "residential", std::nullopt});
  roads.lines.push_back({{j, east}, "tertiary", std::nullopt});
  set.set(roads);
  geo::GeoLayer lanes;
  lanes.kind = geo::LayerKind::bike_lane;
  lanes.lines.push_back({{north(-100), north(100)}, "", YearMonth{2019, 1}});
  set.set(lanes);
  geo::GeoLayer subway;
  subway.kind = geo::LayerKind::subway;
  subway.points = {{north(-700), ""}, {north(450), ""}};
  set.set(subway);
  set.derive_junctions_if_missing();
  return set;
}

}  // namespace

TEST(Assemble, HandComputedVector) {
  const auto layers = fixture_layers();
  const auto s = station("A", kCenter);
  const std::vector<StationRecord> active = {s, station("B", north(400)), station("C", north(-2000))};
  const auto x = assemble_features(s, {2019, 6}, layers, active);

  std::array<double, kFeatureCount> want{};
  want[0] = 2;  // residential
  want[4] = 1;  // commercial
  want[8] = 1;  // health
  for (std::size_t i = 0; i < kSocioCount; ++i) want[kSocioOffset + i] = 10 + static_cast<double>(i);
  want[kRoadOffset + 2] = 1;        // primary count: first segment only
  want[kRoadOffset + 4] = 1;        // tertiary count
  want[kRoadOffset + 7 + 2] = 400;  // primary length
  want[kRoadOffset + 7 + 4] = 300;  // tertiary length
  want[kRoadOffset + 14] = 200;     // bike lane
  want[kRoadOffset + 15] = 1;       // junction at the spur
  want[kTransitOffset] = 450;
  want[kTransitOffset + 1] = 1;
  want[kBssOffset] = 1;
  want[kBssOffset + 2] = 1;
  want[kBssOffset + 3] = 1200;
  for (std::size_t f = 0; f < kFeatureCount; ++f) EXPECT_NEAR(x[f], want[f], 0.01) << feature_names()[f];
}

TEST(Assemble, BikeLaneOpeningMonth) {
  const auto layers = fixture_layers();
  const auto s = station("A", kCenter);
  const std::vector<StationRecord> active = {s};
  EXPECT_EQ(assemble_features(s, {2018, 12}, layers, active)[kRoadOffset + 14], 0.0);
  EXPECT_NEAR(assemble_features(s, {2019, 1}, layers, active)[kRoadOffset + 14], 200, 1e-6);
}

TEST(Assemble, DeterministicAcrossMonthsAndCachedExtractor) {
  const auto layers = fixture_layers();
  const auto s = station("A", kCenter);
  const std::vector<StationRecord> active = {s, station("B", north(400))};
  const auto a = assemble_features(s, {2019, 6}, layers, active);
  EXPECT_EQ(a.values, assemble_features(s, {2019, 7}, layers, active).values);
  const FeatureExtractor ex(layers);
  EXPECT_EQ(a.values, ex(s, {2019, 6}, active).values);
  EXPECT_EQ(a.values, ex(s, {2019, 6}, active).values);
}

TEST(Assemble, NewStationChangesOnlyNetworkFeatures) {
  const auto layers = fixture_layers();
  const auto s = station("A", kCenter);
  std::vector<StationRecord> active = {s, station("B", north(-2000))};
  const auto before = assemble_features(s, {2019, 6}, layers, active);
  active.push_back(station("N", north(300)));
  const auto after = assemble_features(s, {2019, 7}, layers, active);
  for (std::size_t f = 0; f < kBssOffset; ++f) EXPECT_EQ(before[f], after[f]) << feature_names()[f];
  EXPECT_EQ(after[kBssOffset], before[kBssOffset] + 1);
}

TEST(Assemble, MissingLayerIsFatal) {
  geo::LayerSet partial;
  geo::GeoLayer poi;
  partial.set(poi);
  const auto s = station("A", kCenter);
  const std::vector<StationRecord> active = {s};
  EXPECT_THROW(assemble_features(s, {2019, 6}, partial, active), ConfigError);
}

TEST(Assemble, DimensionAndNamesAreStable) {
  EXPECT_EQ(feature_names().size(), kFeatureCount);
  EXPECT_EQ(feature_names()[kBssOffset], "bss_count_0_500");
  EXPECT_EQ(feature_names()[kTransitOffset], "subway_distance");
}

TEST(Temporal, AgeStartsAtZeroAndIsMonotone) {
  const auto s = station("A", kCenter, {2018, 5});
  EXPECT_EQ(temporal_features(s, {2018, 5}).station_age, 0);
  EXPECT_EQ(temporal_features(s, {2018, 5}).month_index, 4);
  int last = -1;
  for (int k = 0; k < 30; ++k) {
    const int age = temporal_features(s, YearMonth{2018, 5} + k).station_age;
    EXPECT_GE(age, last);
    last = age;
  }
  EXPECT_EQ(last, 29);
}

TEST(Junctions, DerivedFromSharedEndpoints) {
  const auto layers = fixture_layers();
  const auto& j = layers.get(geo::LayerKind::junction);
  ASSERT_EQ(j.points.size(), 1u);
  EXPECT_EQ(j.points[0].pos, north(200));
}

TEST(GeoJson, LayerDirectoryRoundTripIsExact) {
  const auto layers = fixture_layers();
  const auto dir = std::filesystem::temp_directory_path() / "tripgen_geojson_rt";
  std::filesystem::remove_all(dir);
  layers.save_directory(dir);
  const auto back = geo::LayerSet::load_directory(dir);
  const auto s = station("A", kCenter);
  const std::vector<StationRecord> active = {s, station("B", north(400))};
  EXPECT_EQ(assemble_features(s, {2019, 6}, layers, active).values,
            assemble_features(s, {2019, 6}, back, active).values);
  EXPECT_EQ(back.get(geo::LayerKind::bike_lane).lines[0].open_month, (YearMonth{2019, 1}));
  std::filesystem::remove_all(dir);
}

TEST(GeoJson, WrongGeometryRejected) {
  const nlohmann::json doc = {
      {"type", "FeatureCollection"},
      {"features", {{{"type", "Feature"}, {"geometry", {{"type", "LineString"}, {"coordinates", {{0, 0}, {1, 1}}}}}}}}};
  EXPECT_THROW(geo::parse_geojson(doc, geo::LayerKind::poi), DataError);
}
