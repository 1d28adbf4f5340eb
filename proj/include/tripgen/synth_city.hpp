#pragma once

// Deterministic synthetic city: geo layers, a station network that grows
// in expansion events, and monthly demand from a known linear ground truth
// with one-hop spatial spillover and seasonality.
//
//   y_d(i,m) = max(0, c_d + beta_d . x_im + lambda * sum_j wbar_ij beta_d . x_jm
//                     + gamma * age_im + level_d * amp * sin(2 pi (moy - 3) / 12) + eps)
//
// x are the pipeline's own raw features and wbar the normalized proximity
// kernel weights of the pipeline's k-NN graph, so the noiseless truth lies
// exactly in the SLX model class.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripgen/common.hpp"
#include "tripgen/dataset.hpp"
#include "tripgen/features.hpp"
#include "tripgen/geo.hpp"
#include "tripgen/spatial_graphs.hpp"

namespace tripgen::synth {

struct ExpansionEvent {
  int month_offset = 0;  // months after the first month
  std::size_t count = 0;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t n_stations = 200;  // total after all expansions
  int n_months = 36;
  YearMonth start{2016, 1};
  std::vector<ExpansionEvent> expansions = {{9, 40}, {18, 40}, {27, 40}};
  double spillover_strength = 0.5;
  double seasonal_amplitude = 0.3;
  double noise_sd = 1.0;
  double area_extent_km = 14.0;  // side of the square study area
  double level = 20.0;           // typical trips/day
  double signal_scale = 1.0;     // trips/day per standard deviation of each feature
  double age_effect = 0.05;      // trips/day per month of station age
  std::size_t k = 5;
  geo::LatLon downtown{40.72, -73.99};

  [[nodiscard]] std::size_t initial_stations() const {
    std::size_t added = 0;
    for (const auto& e : expansions) added += e.count;
    return n_stations > added ? n_stations - added : 0;
  }

  void validate() const {
    if (n_stations == 0) throw ConfigError("synth: zero stations");
    if (n_months < 12) throw ConfigError("synth: n_months must be >= 12");
    std::size_t added = 0;
    for (const auto& e : expansions) {
      if (e.month_offset <= 0 || e.month_offset >= n_months) throw ConfigError("synth: expansion month outside range");
      added += e.count;
    }
    if (added >= n_stations) throw ConfigError("synth: expansions must leave at least one initial station");
    if (spillover_strength < 0) throw ConfigError("synth: spillover_strength must be >= 0");
    if (noise_sd < 0) throw ConfigError("synth: noise_sd must be >= 0");
    if (!(area_extent_km > 1)) throw ConfigError("synth: area_extent_km must exceed 1");
  }

  [[nodiscard]] nlohmann::json to_json() const {
    auto ev = nlohmann::json::array();
    for (const auto& e : expansions) ev.push_back({{"month_offset", e.month_offset}, {"count", e.count}});
    return {{"seed", seed},
            {"n_stations", n_stations},
            {"n_months", n_months},
            {"start", start.to_string()},
            {"expansions", ev},
            {"spillover_strength", spillover_strength},
            {"seasonal_amplitude", seasonal_amplitude},
            {"noise_sd", noise_sd},
            {"area_extent_km", area_extent_km},
            {"level", level},
            {"signal_scale", signal_scale},
            {"age_effect", age_effect},
            {"k", k}};
  }

  /// Evenly spaced expansion events of equal size.
  static std::vector<ExpansionEvent> even_expansions(int n_months, std::size_t events, std::size_t per_event) {
    std::vector<ExpansionEvent> out;
    for (std::size_t e = 0; e < events; ++e)
      out.push_back({static_cast<int>(std::lround(static_cast<double>(n_months) * static_cast<double>(e + 1) /
                                                  static_cast<double>(events + 1))),
                     per_event});
    return out;
  }
};

struct GroundTruth {
  std::array<std::vector<double>, 2> beta;  // out, in; raw feature units
  std::array<double, 2> intercept{};
  std::array<double, 2> level{};
  double spillover = 0;
  double age_effect = 0;
  double seasonal_amplitude = 0;
  double noise_sd = 0;
  double truncation_rate = 0;
  std::size_t dominant_feature = 0;

  [[nodiscard]] double seasonal(int direction, int month_of_year) const {
    return level[direction] * seasonal_amplitude *
           std::sin(2.0 * std::numbers::pi * static_cast<double>(month_of_year - 3) / 12.0);
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"beta_out", beta[0]},
            {"beta_in", beta[1]},
            {"intercept", intercept},
            {"level", level},
            {"spillover", spillover},
            {"age_effect", age_effect},
            {"seasonal_amplitude", seasonal_amplitude},
            {"noise_sd", noise_sd},
            {"truncation_rate", truncation_rate},
            {"dominant_feature", dominant_feature},
            {"feature_names", feature_names()}};
  }
};

/// Noiseless, untruncated demand of every station in `active` for month m.
/// Age is taken from each record's first_active_month.
inline std::vector<std::array<double, 2>> expected_demand(const GroundTruth& truth, const FeatureExtractor& extractor,
                                                          YearMonth month, std::vector<StationRecord> active,
                                                          std::size_t k) {
  sort_by_id(active);
  const std::size_t n = active.size();
  std::vector<FeatureVector> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = extractor(active[i], month, active);
  std::array<std::vector<double>, 2> bx;
  for (int d = 0; d < 2; ++d) {
    bx[d].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t f = 0; f < kFeatureCount; ++f) s += truth.beta[d][f] * x[i][f];
      bx[d][i] = s;
    }
  }
  std::vector<GraphNode> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back({active[i].id, {active[i].lat, active[i].lon}, {}});
  GraphBuilderConfig gcfg;
  gcfg.k = k;
  const auto graphs = build_localized_graphs(nodes, gcfg, month);

  std::vector<std::array<double, 2>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nbs = graphs.get(GraphKind::proximity, active[i].id).neighbors;
    double wsum = 0;
    for (const auto& nb : nbs) wsum += nb.kernel_weight;
    const double age = temporal_features(active[i], month).station_age;
    for (int d = 0; d < 2; ++d) {
      double lag = 0;
      for (const auto& nb : nbs) {
        const auto j = static_cast<std::size_t>(
            std::lower_bound(active.begin(), active.end(), nb.id, [](const auto& s, const std::string& v) { return s.id < v; }) -
            active.begin());
        lag += nb.kernel_weight / wsum * bx[d][j];
      }
      out[i][d] = truth.intercept[d] + bx[d][i] + truth.spillover * lag + truth.age_effect * age +
                  truth.seasonal(d, month.month_of_year());
    }
  }
  return out;
}

struct City {
  SynthConfig config;
  Workspace workspace;
  GroundTruth truth;
  std::vector<std::array<double, 2>> expected;  // noiseless demand, aligned with workspace.samples

  /// Box in which candidate stations may be placed.
  [[nodiscard]] std::array<double, 4> station_box() const { return workspace.layers.bounding_box(); }
};

namespace detail {

/// Local tangent-plane offsets (meters east, north) to lat/lon.
struct Frame {
  geo::LatLon origin;
  [[nodiscard]] geo::LatLon at(double east_m, double north_m) const {
    const double m_per_deg = geo::kEarthRadiusM * std::numbers::pi / 180.0;
    return {origin.lat + north_m / m_per_deg,
            origin.lon + east_m / (m_per_deg * std::cos(geo::to_radians(origin.lat)))};
  }
};

inline geo::GeoLayer make_pois(Rng& rng, const Frame& f, double half, const FeatureConfig& fc) {
  geo::GeoLayer layer;
  layer.kind = geo::LayerKind::poi;
  for (const auto& cat : fc.poi_categories) {
    const double p_center = rng.uniform(0.2, 0.8);
    const double sd = rng.uniform(1200.0, 3500.0);
    const auto n = static_cast<std::size_t>(rng.uniform(250, 500));
    // A secondary hub per category so categories are not proportional.
    const double hx = rng.uniform(-half * 0.7, half * 0.7), hy = rng.uniform(-half * 0.7, half * 0.7);
    for (std::size_t i = 0; i < n; ++i) {
      double x, y;
      const double u = rng.uniform();
      if (u < p_center) {
        x = rng.normal(0, sd);
        y = rng.normal(0, sd);
      } else if (u < p_center + 0.15) {
        x = hx + rng.normal(0, 800);
        y = hy + rng.normal(0, 800);
      } else {
        x = rng.uniform(-half, half);
        y = rng.uniform(-half, half);
      }
      x = std::clamp(x, -half, half);
      y = std::clamp(y, -half, half);
      layer.points.push_back({f.at(x, y), cat});
    }
  }
  return layer;
}

inline geo::GeoLayer make_tracts(Rng& rng, const Frame& f, double half, const FeatureConfig& fc) {
  geo::GeoLayer layer;
  layer.kind = geo::LayerKind::census_tract;
  const int cells = 10;
  const double step = 2 * half / cells;
  // Per attribute: base, radial trend, east-west trend, noise.
  std::vector<std::array<double, 4>> shape;
  for (std::size_t a = 0; a < fc.tract_attributes.size(); ++a)
    shape.push_back({rng.uniform(20, 80), rng.uniform(-20, 20), rng.uniform(-10, 10), rng.uniform(3, 12)});
  for (int r = 0; r < cells; ++r)
    for (int c = 0; c < cells; ++c) {
      const double x0 = -half + c * step, y0 = -half + r * step;
      geo::PolygonFeature poly;
      poly.id = "T" + std::to_string(r * cells + c);
      poly.rings.push_back({f.at(x0, y0), f.at(x0 + step, y0), f.at(x0 + step, y0 + step), f.at(x0, y0 + step),
                            f.at(x0, y0)});
      const double cx = (x0 + step / 2) / half, cy = (y0 + step / 2) / half;
      const double radial = std::sqrt(cx * cx + cy * cy);
      for (std::size_t a = 0; a < fc.tract_attributes.size(); ++a) {
        const auto& s = shape[a];
        poly.attributes[fc.tract_attributes[a]] = std::max(0.0, s[0] + s[1] * radial + s[2] * cx + rng.normal(0, s[3]));
      }
      layer.polygons.push_back(std::move(poly));
    }
  return layer;
}

/// Jittered street lattice; each street is cut into pieces of random length
/// and level, and a few lattice edges are dropped.
inline geo::GeoLayer make_roads(Rng& rng, const Frame& f, double half, const FeatureConfig& fc) {
  geo::GeoLayer layer;
  layer.kind = geo::LayerKind::road;
  const double spacing = 300.0;
  const int n = static_cast<int>(2 * half / spacing) + 1;
  std::vector<geo::LatLon> node(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double x = std::clamp(-half + c * spacing + rng.uniform(-70, 70), -half, half);
      const double y = std::clamp(-half + r * spacing + rng.uniform(-70, 70), -half, half);
      node[static_cast<std::size_t>(r * n + c)] = f.at(x, y);
    }
  const std::array<double, kRoadLevelCount> level_p = {0.06, 0.08, 0.14, 0.16, 0.18, 0.13, 0.25};
  auto pick_level = [&] {
    double u = rng.uniform();
    for (std::size_t l = 0; l < level_p.size(); ++l) {
      if (u < level_p[l]) return fc.road_levels[l];
      u -= level_p[l];
    }
    return fc.road_levels.back();
  };
  auto emit_street = [&](auto node_at) {
    int i = 0;
    while (i < n - 1) {
      const int len = 2 + static_cast<int>(rng.below(6));
      geo::LineFeature line;
      line.level = pick_level();
      line.points.push_back(node_at(i));
      int j = i;
      while (j < n - 1 && j - i < len) {
        ++j;
        line.points.push_back(node_at(j));
      }
      if (rng.uniform() > 0.07) layer.lines.push_back(std::move(line));
      i = j;
    }
  };
  for (int r = 0; r < n; ++r) emit_street([&](int c) { return node[static_cast<std::size_t>(r * n + c)]; });
  for (int c = 0; c < n; ++c) emit_street([&](int r) { return node[static_cast<std::size_t>(r * n + c)]; });
  return layer;
}

inline geo::GeoLayer make_bike_lanes(Rng& rng, const Frame& f, double half, YearMonth start, int n_months) {
  geo::GeoLayer layer;
  layer.kind = geo::LayerKind::bike_lane;
  for (int i = 0; i < 90; ++i) {
    geo::LineFeature line;
    double x = rng.normal(0, half / 2.5), y = rng.normal(0, half / 2.5);
    double heading = rng.uniform(0, 2 * std::numbers::pi);
    const int steps = 4 + static_cast<int>(rng.below(10));
    for (int s = 0; s <= steps; ++s) {
      line.points.push_back(f.at(std::clamp(x, -half, half), std::clamp(y, -half, half)));
      heading += rng.normal(0, 0.3);
      const double len = rng.uniform(120, 320);
      x += len * std::cos(heading);
      y += len * std::sin(heading);
    }
    // A third of the lanes predate the data; the rest open during it.
    if (rng.uniform() > 0.33) line.open_month = start + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_months)));
    else line.open_month = start - 12;
    layer.lines.push_back(std::move(line));
  }
  return layer;
}

inline geo::GeoLayer make_subways(Rng& rng, const Frame& f, double half) {
  geo::GeoLayer layer;
  layer.kind = geo::LayerKind::subway;
  for (int line = 0; line < 4; ++line) {
    const double angle = rng.uniform(0, std::numbers::pi);
    const double offset = rng.uniform(-half * 0.3, half * 0.3);
    for (double t = -half * 0.9; t <= half * 0.9; t += rng.uniform(700, 1400)) {
      const double x = t * std::cos(angle) - offset * std::sin(angle);
      const double y = t * std::sin(angle) + offset * std::cos(angle);
      if (std::abs(x) < half && std::abs(y) < half) layer.points.push_back({f.at(x, y), ""});
    }
  }
  return layer;
}

/// Station positions with a downtown density gradient; expansion rings
/// move outward with each event.
inline std::vector<std::pair<double, double>> place_stations(Rng& rng, const SynthConfig& cfg, double half,
                                                             std::vector<int>& opening_offset) {
  std::vector<std::pair<double, double>> pos;
  const double min_gap = 150.0;
  auto far_enough = [&](double x, double y) {
    for (auto [px, py] : pos)
      if ((px - x) * (px - x) + (py - y) * (py - y) < min_gap * min_gap) return false;
    return true;
  };
  const double limit = half - 300.0;
  auto place = [&](auto draw, int offset) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      auto [x, y] = draw();
      if (std::abs(x) > limit || std::abs(y) > limit || !far_enough(x, y)) continue;
      pos.emplace_back(x, y);
      opening_offset.push_back(offset);
      return;
    }
    throw ConfigError("synth: cannot place stations; area too small for the station count");
  };
  const double core_sd = half * 0.33;
  for (std::size_t i = 0; i < cfg.initial_stations(); ++i)
    place([&] { return std::pair{rng.normal(0, core_sd), rng.normal(0, core_sd)}; }, 0);
  const double inner = half * 0.35, span = (limit - inner) / static_cast<double>(std::max<std::size_t>(1, cfg.expansions.size()));
  for (std::size_t e = 0; e < cfg.expansions.size(); ++e) {
    const double r0 = inner + span * static_cast<double>(e), r1 = r0 + span * 1.3;
    for (std::size_t i = 0; i < cfg.expansions[e].count; ++i)
      place(
          [&] {
            const double r = rng.uniform(r0, r1), a = rng.uniform(0, 2 * std::numbers::pi);
            return std::pair{r * std::cos(a), r * std::sin(a)};
          },
          cfg.expansions[e].month_offset);
  }
  return pos;
}

}  // namespace detail

inline std::string station_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%04zu", i);
  return buf;
}

inline City generate_city(const SynthConfig& cfg) {
  cfg.validate();
  City city;
  city.config = cfg;
  Rng rng(cfg.seed);
  const double half = cfg.area_extent_km * 500.0;
  const detail::Frame frame{cfg.downtown};
  auto& ws = city.workspace;
  const FeatureConfig fc;

  ws.layers.set(detail::make_pois(rng, frame, half, fc));
  ws.layers.set(detail::make_tracts(rng, frame, half, fc));
  ws.layers.set(detail::make_roads(rng, frame, half, fc));
  ws.layers.set(detail::make_bike_lanes(rng, frame, half, cfg.start, cfg.n_months));
  ws.layers.set(detail::make_subways(rng, frame, half));
  ws.layers.derive_junctions_if_missing();

  std::vector<int> opening;
  const auto pos = detail::place_stations(rng, cfg, half, opening);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const auto ll = frame.at(pos[i].first, pos[i].second);
    ws.stations.push_back({station_id(i), ll.lat, ll.lon, cfg.start + opening[i], std::nullopt});
  }

  // Pipeline settings: the last third of the months is the test period.
  const int train_months = cfg.n_months - cfg.n_months / 3;
  ws.config.train_end = cfg.start + (train_months - 1);
  ws.config.test_start = cfg.start + train_months;
  ws.config.split_seed = derive_seed(cfg.seed, 100);
  ws.config.graphs.k = cfg.k;

  // Features of every station-month, for coefficient scaling.
  const FeatureExtractor extractor(ws.layers, fc);
  std::vector<std::pair<YearMonth, std::vector<StationRecord>>> months;
  std::vector<double> mean(kFeatureCount, 0.0), sq(kFeatureCount, 0.0);
  std::size_t rows = 0;
  for (int t = 0; t < cfg.n_months; ++t) {
    const YearMonth m = cfg.start + t;
    std::vector<StationRecord> active;
    for (const auto& s : ws.stations)
      if (s.first_active_month <= m) active.push_back(s);
    for (const auto& s : active) {
      const auto x = extractor(s, m, active);
      for (std::size_t f = 0; f < kFeatureCount; ++f) {
        mean[f] += x[f];
        sq[f] += x[f] * x[f];
      }
      ++rows;
    }
    months.emplace_back(m, std::move(active));
  }
  std::vector<double> sd(kFeatureCount);
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    mean[f] /= static_cast<double>(rows);
    const double var = sq[f] / static_cast<double>(rows) - mean[f] * mean[f];
    sd[f] = var > 1e-12 * std::max(1.0, mean[f] * mean[f]) ? std::sqrt(var) : 0.0;
  }

  auto& truth = city.truth;
  truth.spillover = cfg.spillover_strength;
  truth.age_effect = cfg.age_effect;
  truth.seasonal_amplitude = cfg.seasonal_amplitude;
  truth.noise_sd = cfg.noise_sd;
  truth.level = {cfg.level, cfg.level * 0.95};
  const auto names = feature_names(fc);
  truth.dominant_feature = static_cast<std::size_t>(std::find(names.begin(), names.end(), "poi_commercial") - names.begin());
  std::vector<double> z(kFeatureCount);
  for (auto& v : z) v = rng.normal(0, 0.6);
  z[truth.dominant_feature] = 3.0;
  for (int d = 0; d < 2; ++d) {
    truth.beta[d].resize(kFeatureCount);
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      const double zf = d == 0 ? z[f] : z[f] + rng.normal(0, 0.2);
      // Features constant over the whole city carry no identifiable effect.
      truth.beta[d][f] = sd[f] > 0 ? cfg.signal_scale * zf / sd[f] : 0.0;
    }
  }

  // Intercepts keep the noiseless demand at least 1 trip/day.
  std::vector<std::vector<std::array<double, 2>>> raw;
  std::array<double, 2> lowest{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (const auto& [m, active] : months) {
    raw.push_back(expected_demand(truth, extractor, m, active, cfg.k));
    for (const auto& v : raw.back())
      for (int d = 0; d < 2; ++d) lowest[d] = std::min(lowest[d], v[d]);
  }
  for (int d = 0; d < 2; ++d) truth.intercept[d] = std::max(truth.level[d], 1.0 - lowest[d] + truth.level[d] * 0.1);

  Rng noise(derive_seed(cfg.seed, 200));
  std::size_t truncated = 0, values = 0;
  for (std::size_t t = 0; t < months.size(); ++t) {
    const auto& [m, active] = months[t];
    for (std::size_t i = 0; i < active.size(); ++i) {
      std::array<double, 2> mu{raw[t][i][0] + truth.intercept[0], raw[t][i][1] + truth.intercept[1]};
      std::array<double, 2> y{};
      for (int d = 0; d < 2; ++d) {
        const double v = mu[d] + (cfg.noise_sd > 0 ? noise.normal(0, cfg.noise_sd) : 0.0);
        ++values;
        if (v < 0) ++truncated;
        y[d] = std::max(0.0, v);
      }
      ws.samples.push_back({active[i].id, m, y[0], y[1], m.days()});
      city.expected.push_back(mu);
    }
  }
  truth.truncation_rate = static_cast<double>(truncated) / static_cast<double>(values);
  return city;
}

/// Noiseless demand at month m for the active stations plus extra
/// stations (candidates), using the city's ground truth.
inline std::vector<std::array<double, 2>> expected_with(const City& city, YearMonth month,
                                                        std::vector<StationRecord> active) {
  const FeatureExtractor extractor(city.workspace.layers);
  return expected_demand(city.truth, extractor, month, std::move(active), city.config.k);
}

/// Writes the city in the pipeline's input formats (pipeline.json,
/// stations.csv, samples.csv, layers/) plus truth.json and truth.csv.
inline void emit_fixtures(const City& city, const std::filesystem::path& dir) {
  city.workspace.save(dir);
  nlohmann::json t = city.truth.to_json();
  t["config"] = city.config.to_json();
  std::ofstream(dir / "truth.json") << t.dump(2) << '\n';
  std::ofstream out(dir / "truth.csv");
  csv::write_row(out, {"station_id", "month", "expected_out", "expected_in"});
  for (std::size_t i = 0; i < city.workspace.samples.size(); ++i) {
    const auto& s = city.workspace.samples[i];
    csv::write_row(out, {s.station_id, s.month.to_string(), csv::format_double(city.expected[i][0]),
                         csv::format_double(city.expected[i][1])});
  }
}

}  // namespace tripgen::synth
