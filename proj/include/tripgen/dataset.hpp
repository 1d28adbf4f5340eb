#pragma once

// From a data directory to model-ready tensors: the workspace (stations,
// layers, monthly samples, pipeline settings), per-month feature and graph
// construction, and the prepared dataset with training-fitted scalers.
//
// Data directory layout:
//   pipeline.json       split months, seeds, column names, graph settings
//   stations.csv        station registry
//   samples.csv         monthly samples (or trips.csv, aggregated on load)
//   layers/<kind>.geojson

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripgen/checkpoint.hpp"
#include "tripgen/data_pipeline.hpp"
#include "tripgen/features.hpp"
#include "tripgen/geo.hpp"
#include "tripgen/model_input.hpp"
#include "tripgen/nn/scaler.hpp"
#include "tripgen/spatial_graphs.hpp"

namespace tripgen {

struct PipelineConfig {
  YearMonth train_end{2017, 8};
  YearMonth test_start{2017, 9};
  double val_fraction = 0.2;
  std::uint64_t split_seed = 2021;
  IngestConfig ingest;
  FeatureConfig features;
  GraphBuilderConfig graphs;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json g = {{"k", graphs.k}, {"sigma_scope", to_string(graphs.sigma_scope)}};
    if (graphs.sigma_d) g["sigma_d"] = *graphs.sigma_d;
    if (graphs.sigma_b) g["sigma_b"] = *graphs.sigma_b;
    return {{"train_end", train_end.to_string()},
            {"test_start", test_start.to_string()},
            {"val_fraction", val_fraction},
            {"split_seed", split_seed},
            {"timezone", ingest.timezone},
            {"trip_columns",
             {{"start_station_id", ingest.columns.start_station_id},
              {"end_station_id", ingest.columns.end_station_id},
              {"started_at", ingest.columns.started_at},
              {"ended_at", ingest.columns.ended_at}}},
            {"radius_m", features.radius_m},
            {"band_edges_m", features.band_edges_m},
            {"graphs", g}};
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    if (j.contains("train_end")) c.train_end = YearMonth::parse(j["train_end"].get<std::string>());
    if (j.contains("test_start")) c.test_start = YearMonth::parse(j["test_start"].get<std::string>());
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.ingest.timezone = j.value("timezone", c.ingest.timezone);
    if (j.contains("trip_columns")) {
      const auto& t = j["trip_columns"];
      auto& cols = c.ingest.columns;
      cols.start_station_id = t.value("start_station_id", cols.start_station_id);
      cols.end_station_id = t.value("end_station_id", cols.end_station_id);
      cols.started_at = t.value("started_at", cols.started_at);
      cols.ended_at = t.value("ended_at", cols.ended_at);
    }
    c.features.radius_m = j.value("radius_m", c.features.radius_m);
    if (j.contains("band_edges_m")) c.features.band_edges_m = j["band_edges_m"].get<std::array<double, 3>>();
    if (j.contains("graphs")) {
      const auto& g = j["graphs"];
      c.graphs.k = g.value("k", c.graphs.k);
      if (g.contains("sigma_scope")) c.graphs.sigma_scope = parse_sigma_scope(g["sigma_scope"].get<std::string>());
      if (g.contains("sigma_d")) c.graphs.sigma_d = g["sigma_d"].get<double>();
      if (g.contains("sigma_b")) c.graphs.sigma_b = g["sigma_b"].get<double>();
    }
    if (!(c.train_end < c.test_start)) throw ConfigError("pipeline: train_end must precede test_start");
    c.graphs.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Workspace

struct Workspace {
  PipelineConfig config;
  std::vector<StationRecord> stations;  // id order
  geo::LayerSet layers;
  std::vector<MonthlySample> samples;
  std::vector<std::string> warnings;

  [[nodiscard]] const StationRecord& station(const std::string& id) const {
    auto it = std::lower_bound(stations.begin(), stations.end(), id,
                               [](const StationRecord& s, const std::string& v) { return s.id < v; });
    if (it == stations.end() || it->id != id) throw DataError("unknown station '" + id + "'");
    return *it;
  }
  [[nodiscard]] bool has_station(const std::string& id) const {
    auto it = std::lower_bound(stations.begin(), stations.end(), id,
                               [](const StationRecord& s, const std::string& v) { return s.id < v; });
    return it != stations.end() && it->id == id;
  }

  /// Active station records per month (samples define activity), id order.
  [[nodiscard]] std::map<YearMonth, std::vector<StationRecord>> active_by_month() const {
    std::map<YearMonth, std::vector<StationRecord>> out;
    for (const auto& [m, ids] : active_stations_by_month(samples)) {
      auto& v = out[m];
      for (const auto& id : ids) v.push_back(station(id));
    }
    return out;
  }

  static Workspace load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    Workspace w;
    if (fs::exists(dir / "pipeline.json")) {
      std::ifstream in(dir / "pipeline.json");
      w.config = PipelineConfig::from_json(nlohmann::json::parse(in));
    }
    if (fs::exists(dir / "samples.csv")) {
      std::ifstream in(dir / "samples.csv");
      w.samples = read_samples(in);
    } else if (fs::exists(dir / "trips.csv")) {
      std::ifstream in(dir / "trips.csv");
      auto result = ingest_trips(in, w.config.ingest);
      if (result.skipped)
        w.warnings.push_back("trips.csv: skipped " + std::to_string(result.skipped) + " malformed rows");
      w.samples = aggregate_all_months(result.trips);
    } else {
      throw ConfigError("data directory " + dir.string() + " has neither samples.csv nor trips.csv");
    }
    {
      std::ifstream in(dir / "stations.csv");
      if (!in) throw ConfigError("data directory " + dir.string() + " has no stations.csv");
      const auto registry = read_station_registry(in);
      w.stations = resolve_stations(registry, w.samples);
    }
    std::vector<MonthlySample> kept;
    std::size_t unknown = 0;
    for (auto& s : w.samples) {
      if (w.has_station(s.station_id)) kept.push_back(std::move(s));
      else ++unknown;
    }
    if (unknown) w.warnings.push_back(std::to_string(unknown) + " samples reference stations missing from the registry");
    w.samples = std::move(kept);
    w.layers = geo::LayerSet::load_directory(dir / "layers");
    return w;
  }

  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream(dir / "pipeline.json") << config.to_json().dump(2) << '\n';
    {
      std::ofstream out(dir / "stations.csv");
      write_station_registry(out, stations);
    }
    {
      std::ofstream out(dir / "samples.csv");
      write_samples(out, samples);
    }
    layers.save_directory(dir / "layers");
  }
};

// ---------------------------------------------------------------------------
// One month: features, normalization, graphs

struct MonthBuild {
  YearMonth month;
  std::vector<StationRecord> active;  // id order
  std::vector<FeatureVector> raw;     // aligned with active
  nn::Tensor normalized;              // active.size() x 43
  GraphSet graphs;

  [[nodiscard]] std::size_t index_of(const std::string& id) const {
    auto it = std::lower_bound(active.begin(), active.end(), id,
                               [](const StationRecord& s, const std::string& v) { return s.id < v; });
    if (it == active.end() || it->id != id)
      throw DataError("station " + id + " is not active in " + month.to_string());
    return static_cast<std::size_t>(it - active.begin());
  }
  [[nodiscard]] bool is_active(const std::string& id) const {
    auto it = std::lower_bound(active.begin(), active.end(), id,
                               [](const StationRecord& s, const std::string& v) { return s.id < v; });
    return it != active.end() && it->id == id;
  }

  [[nodiscard]] std::vector<GraphNode> graph_nodes() const {
    std::vector<GraphNode> nodes;
    nodes.reserve(active.size());
    for (std::size_t i = 0; i < active.size(); ++i)
      nodes.push_back({active[i].id, {active[i].lat, active[i].lon}, normalized.row_span(i)});
    return nodes;
  }
};

inline void sort_by_id(std::vector<StationRecord>& stations) {
  std::sort(stations.begin(), stations.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < stations.size(); ++i)
    if (stations[i].id == stations[i - 1].id) throw DataError("duplicate station id " + stations[i].id);
}

/// Raw 43-feature vectors for every active station of a month.
inline MonthBuild extract_month(const FeatureExtractor& extractor, YearMonth month, std::vector<StationRecord> active) {
  MonthBuild mb;
  mb.month = month;
  sort_by_id(active);
  mb.active = std::move(active);
  mb.raw.reserve(mb.active.size());
  for (const auto& s : mb.active) mb.raw.push_back(extractor(s, month, mb.active));
  return mb;
}

inline void normalize_month(MonthBuild& mb, const nn::MinMaxScaler& scaler) {
  mb.normalized = nn::Tensor(mb.active.size(), kFeatureCount);
  for (std::size_t i = 0; i < mb.active.size(); ++i) scaler.transform_row(mb.raw[i].values, mb.normalized.row_span(i));
}

inline void build_month_graphs(MonthBuild& mb, const GraphBuilderConfig& cfg) {
  const auto nodes = mb.graph_nodes();
  mb.graphs = build_localized_graphs(nodes, cfg, mb.month);
}

inline double normalized_age(const Scalers& scalers, double age_months) { return scalers.age.transform(0, age_months); }

/// Model input of station `i` of a month whose normalized rows start at
/// `row_offset` in the feature table handed to the model.
inline ModelInput make_input(const MonthBuild& mb, std::size_t i, std::size_t row_offset, double age_normalized) {
  ModelInput in;
  in.row = row_offset + i;
  in.age = age_normalized;
  in.month = mb.month.month_of_year();
  for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
    auto& g = kind == GraphKind::proximity ? in.proximity : in.similarity;
    for (const auto& nb : mb.graphs.get(kind, mb.active[i].id).neighbors) {
      g.rows.push_back(row_offset + mb.index_of(nb.id));
      g.kernel_weights.push_back(nb.kernel_weight);
    }
  }
  return in;
}

// ---------------------------------------------------------------------------
// Prepared dataset

struct PreparedSplit {
  std::vector<MonthlySample> samples;
  std::vector<ModelInput> inputs;
  nn::Tensor targets;  // normalized, n x 2

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] bool empty() const { return samples.empty(); }
};

struct PreparedData {
  PipelineConfig config;
  DatasetSplit split;
  Scalers scalers;
  std::map<YearMonth, MonthBuild> months;
  std::map<YearMonth, std::size_t> offsets;  // first row of each month in `features`
  nn::Tensor features;                       // every station-month, normalized
  PreparedSplit train, validation, test_existing, test_new;
  std::vector<std::string> warnings;
  std::optional<std::pair<double, double>> global_sigma;  // (sigma_d, sigma_b) under SigmaScope::global

  [[nodiscard]] const MonthBuild& month(YearMonth m) const {
    auto it = months.find(m);
    if (it == months.end()) throw DataError("no data for month " + m.to_string());
    return it->second;
  }

  [[nodiscard]] ModelInput input_for(const std::string& id, YearMonth m) const {
    const auto& mb = month(m);
    const auto i = mb.index_of(id);
    return make_input(mb, i, offsets.at(m), normalized_age(scalers, temporal_features(mb.active[i], m).station_age));
  }

  [[nodiscard]] GraphBuilderConfig graph_config() const {
    auto cfg = config.graphs;
    if (global_sigma) {
      cfg.sigma_d = global_sigma->first;
      cfg.sigma_b = global_sigma->second;
    }
    return cfg;
  }
};

/// Fits scalers on the training partition unless `fixed` is given, then
/// builds every month's normalized features and graphs.
inline PreparedData prepare(const Workspace& ws, const std::optional<Scalers>& fixed = std::nullopt) {
  PreparedData pd;
  pd.config = ws.config;
  pd.split = temporal_split(ws.samples, ws.config.train_end, ws.config.test_start, ws.config.val_fraction,
                            ws.config.split_seed);
  ws.layers.require_all();
  const FeatureExtractor extractor(ws.layers, ws.config.features);
  for (auto& [m, active] : ws.active_by_month()) pd.months.emplace(m, extract_month(extractor, m, active));

  if (fixed) {
    pd.scalers = *fixed;
  } else {
    nn::Tensor x(pd.split.train.size(), kFeatureCount), y(pd.split.train.size(), 2), age(pd.split.train.size(), 1);
    for (std::size_t i = 0; i < pd.split.train.size(); ++i) {
      const auto& s = pd.split.train[i];
      const auto& mb = pd.months.at(s.month);
      const auto j = mb.index_of(s.station_id);
      std::copy(mb.raw[j].values.begin(), mb.raw[j].values.end(), x.row_span(i).begin());
      y(i, 0) = s.y_out;
      y(i, 1) = s.y_in;
      age(i, 0) = temporal_features(mb.active[j], s.month).station_age;
    }
    pd.scalers = {nn::MinMaxScaler::fit(x), nn::MinMaxScaler::fit(y), nn::MinMaxScaler::fit(age)};
  }

  std::size_t rows = 0;
  for (auto& [m, mb] : pd.months) {
    normalize_month(mb, pd.scalers.features);
    pd.offsets[m] = rows;
    rows += mb.active.size();
  }

  if (ws.config.graphs.sigma_scope == SigmaScope::global && !(ws.config.graphs.sigma_d && ws.config.graphs.sigma_b)) {
    // Training-period months only, so no test information enters sigma.
    std::vector<std::vector<GraphNode>> train_months;
    for (const auto& [m, mb] : pd.months)
      if (m <= ws.config.train_end) train_months.push_back(mb.graph_nodes());
    auto [sd, sb] = global_sigmas(train_months);
    pd.global_sigma = {ws.config.graphs.sigma_d.value_or(sd), ws.config.graphs.sigma_b.value_or(sb)};
  }
  const auto graph_cfg = pd.graph_config();
  for (auto& [m, mb] : pd.months) {
    build_month_graphs(mb, graph_cfg);
    for (const auto& w : mb.graphs.warnings) pd.warnings.push_back(w);
  }

  pd.features = nn::Tensor(rows, kFeatureCount);
  for (const auto& [m, mb] : pd.months) {
    const auto off = pd.offsets.at(m);
    std::copy(mb.normalized.values().begin(), mb.normalized.values().end(),
              pd.features.values().begin() + static_cast<std::ptrdiff_t>(off * kFeatureCount));
  }

  auto fill = [&](const std::vector<MonthlySample>& samples, PreparedSplit& out) {
    out.samples = samples;
    out.targets = nn::Tensor(samples.size(), 2);
    out.inputs.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      out.inputs.push_back(pd.input_for(samples[i].station_id, samples[i].month));
      out.targets(i, 0) = pd.scalers.targets.transform(0, samples[i].y_out);
      out.targets(i, 1) = pd.scalers.targets.transform(1, samples[i].y_in);
    }
  };
  fill(pd.split.train, pd.train);
  fill(pd.split.validation, pd.validation);
  fill(pd.split.test_existing, pd.test_existing);
  fill(pd.split.test_new, pd.test_new);
  return pd;
}

}  // namespace tripgen
