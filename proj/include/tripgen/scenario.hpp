#pragma once

// What-if expansion engine: add candidate stations and remove existing
// ones in one month, recompute the network-dependent features and the
// localized graphs, and re-predict every station.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripgen/checkpoint.hpp"
#include "tripgen/dataset.hpp"
#include "tripgen/explain.hpp"
#include "tripgen/features.hpp"
#include "tripgen/models.hpp"

namespace tripgen::scenario {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Candidate {
  std::string id;
  double lat = 0;
  double lon = 0;
  std::optional<int> station_age;  // months; defaults to 0
};

struct Scenario {
  std::string id;
  YearMonth base_month;
  std::vector<Candidate> additions;
  std::vector<std::string> removals;

  [[nodiscard]] bool empty() const { return additions.empty() && removals.empty(); }

  [[nodiscard]] nlohmann::json to_json() const {
    auto add = nlohmann::json::array();
    for (const auto& c : additions) {
      nlohmann::json e = {{"id", c.id}, {"lat", c.lat}, {"lon", c.lon}};
      if (c.station_age) e["station_age"] = *c.station_age;
      add.push_back(std::move(e));
    }
    nlohmann::json j = {{"base_month", base_month.to_string()}, {"additions", add}, {"removals", removals}};
    if (!id.empty()) j["id"] = id;
    return j;
  }

  static Scenario from_json(const nlohmann::json& j) {
    Scenario s;
    try {
      s.id = j.value("id", std::string{});
      s.base_month = YearMonth::parse(j.at("base_month").get<std::string>());
      for (const auto& e : j.value("additions", nlohmann::json::array())) {
        Candidate c{e.at("id").get<std::string>(), e.at("lat").get<double>(), e.at("lon").get<double>(), std::nullopt};
        if (e.contains("station_age")) c.station_age = e.at("station_age").get<int>();
        s.additions.push_back(std::move(c));
      }
      s.removals = j.value("removals", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw ScenarioError(std::string("malformed scenario: ") + e.what());
    }
    return s;
  }
};

struct ScenarioOptions {
  bool freeze_sigma = false;         // reuse the baseline month's sigma_d/sigma_b
  double locality_radius_m = 5000.0;  // band counts can only change within this distance
};

/// Immutable serving state: the prepared dataset under the checkpoint's
/// scalers, the model, and baseline predictions for every month.
class Baseline {
 public:
  Baseline(const Workspace& ws, const Checkpoint& ckpt)
      : layers_(ws.layers),
        data_(prepare(ws, ckpt.scalers)),
        model_(ckpt.model()),
        extractor_(layers_, ws.config.features) {
    for (const auto& s : ws.stations) known_ids_.insert(s.id);
    for (const auto& [m, mb] : data_.months) predictions_.emplace(m, predict_month(mb));
    box_ = layers_.bounding_box();
  }
  Baseline(const Baseline&) = delete;
  Baseline& operator=(const Baseline&) = delete;

  [[nodiscard]] const PreparedData& data() const { return data_; }
  [[nodiscard]] const Model& model() const { return model_; }
  [[nodiscard]] const FeatureExtractor& extractor() const { return extractor_; }
  [[nodiscard]] const std::array<double, 4>& box() const { return box_; }
  [[nodiscard]] bool knows(const std::string& id) const { return known_ids_.contains(id); }

  /// Raw (unclipped) trips/day for each active station of month m, id order.
  [[nodiscard]] const std::vector<std::array<double, 2>>& predictions(YearMonth m) const {
    auto it = predictions_.find(m);
    if (it == predictions_.end()) throw ScenarioError("no baseline for month " + m.to_string());
    return it->second;
  }

  /// Predictions of a self-contained month build (rows start at 0).
  [[nodiscard]] std::vector<std::array<double, 2>> predict_month(const MonthBuild& mb) const {
    std::vector<std::array<double, 2>> out(mb.active.size());
    for (std::size_t i = 0; i < mb.active.size(); ++i) {
      const auto y = model_.predict(mb.normalized, input(mb, i));
      out[i] = {data_.scalers.targets.inverse(0, y[0]), data_.scalers.targets.inverse(1, y[1])};
    }
    return out;
  }

  [[nodiscard]] ModelInput input(const MonthBuild& mb, std::size_t i) const {
    return make_input(mb, i, 0,
                      normalized_age(data_.scalers, temporal_features(mb.active[i], mb.month).station_age));
  }

 private:
  geo::LayerSet layers_;
  PreparedData data_;
  Model model_;
  FeatureExtractor extractor_;
  std::set<std::string> known_ids_;
  std::map<YearMonth, std::vector<std::array<double, 2>>> predictions_;
  std::array<double, 4> box_{};
};

/// The modified month: features, normalized rows and graphs for the
/// scenario's station set.
struct ScenarioState {
  Scenario scenario;
  MonthBuild month;
  std::set<std::string> candidates;
  std::set<std::string> band_recomputed;  // existing stations within the locality radius of a change
  bool sigma_frozen = false;
  bool sigma_changed = false;
  std::vector<std::string> notes;
};

inline void validate(const Baseline& base, const Scenario& sc) {
  const auto& mb = base.data().month(sc.base_month);
  std::set<std::string> seen;
  const auto& box = base.box();
  for (const auto& c : sc.additions) {
    if (c.id.empty()) throw ScenarioError("candidate id must not be empty");
    if (base.knows(c.id)) throw ScenarioError("candidate id " + c.id + " collides with an existing station");
    if (!seen.insert(c.id).second) throw ScenarioError("duplicate candidate id " + c.id);
    if (!(c.lat >= box[0] && c.lat <= box[1] && c.lon >= box[2] && c.lon <= box[3]))
      throw ScenarioError("candidate " + c.id + " lies outside the geo layers' bounding box [" +
                          csv::format_double(box[0]) + ", " + csv::format_double(box[1]) + "] x [" +
                          csv::format_double(box[2]) + ", " + csv::format_double(box[3]) + "]");
    if (c.station_age && *c.station_age < 0) throw ScenarioError("candidate " + c.id + " has negative station_age");
  }
  std::set<std::string> removed;
  for (const auto& r : sc.removals) {
    if (!mb.is_active(r)) throw ScenarioError("removal " + r + " is not active in " + sc.base_month.to_string());
    if (!removed.insert(r).second) throw ScenarioError("station " + r + " removed twice");
  }
}

inline ScenarioState apply_scenario(const Baseline& base, const Scenario& sc, const ScenarioOptions& opt = {}) {
  validate(base, sc);
  const auto& data = base.data();
  const auto& old = data.month(sc.base_month);
  const auto& extractor = base.extractor();
  const auto& fcfg = extractor.config();

  ScenarioState st;
  st.scenario = sc;
  auto& mb = st.month;
  mb.month = sc.base_month;

  const std::set<std::string> removed(sc.removals.begin(), sc.removals.end());
  std::vector<geo::LatLon> changes;
  for (const auto& r : sc.removals) {
    const auto& s = old.active[old.index_of(r)];
    changes.push_back({s.lat, s.lon});
  }
  for (const auto& s : old.active)
    if (!removed.contains(s.id)) mb.active.push_back(s);
  for (const auto& c : sc.additions) {
    mb.active.push_back({c.id, c.lat, c.lon, sc.base_month - c.station_age.value_or(0), std::nullopt});
    st.candidates.insert(c.id);
    changes.push_back({c.lat, c.lon});
  }
  sort_by_id(mb.active);

  mb.raw.resize(mb.active.size());
  for (std::size_t i = 0; i < mb.active.size(); ++i) {
    const auto& s = mb.active[i];
    if (st.candidates.contains(s.id)) {
      mb.raw[i] = extractor(s, mb.month, mb.active);
      continue;
    }
    mb.raw[i] = old.raw[old.index_of(s.id)];
    const geo::LatLon c{s.lat, s.lon};
    const bool near = std::any_of(changes.begin(), changes.end(),
                                  [&](const geo::LatLon& p) { return geo::haversine(c, p) < opt.locality_radius_m; });
    if (near) {
      const auto v = extract_bss_network(s, mb.active, fcfg.band_edges_m).values();
      std::copy(v.begin(), v.end(), mb.raw[i].values.begin() + kBssOffset);
      st.band_recomputed.insert(s.id);
    } else if (!sc.empty()) {
      // Band counts cannot change beyond the locality radius; the mean
      // distance runs over every active station and always can.
      mb.raw[i][kBssOffset + 3] = bss_mean_distance(s, mb.active);
    }
  }
  normalize_month(mb, data.scalers.features);

  auto gcfg = data.graph_config();
  if (opt.freeze_sigma && gcfg.sigma_scope == SigmaScope::per_month) {
    gcfg.sigma_d = old.graphs.sigma_d;
    gcfg.sigma_b = old.graphs.sigma_b;
    st.sigma_frozen = true;
    st.notes.push_back("sigma_d and sigma_b frozen to the baseline month; graphs approximate a full rebuild");
  }
  build_month_graphs(mb, gcfg);
  st.sigma_changed = mb.graphs.sigma_d != old.graphs.sigma_d || mb.graphs.sigma_b != old.graphs.sigma_b;
  for (const auto& w : mb.graphs.warnings) st.notes.push_back(w);
  return st;
}

struct StationPrediction {
  std::string id;
  double lat = 0, lon = 0;
  bool candidate = false;
  std::array<double, 2> raw{};      // unclipped trips/day
  std::array<double, 2> served{};   // clipped at 0
  std::optional<std::array<double, 2>> delta;  // vs baseline, served values; pre-existing stations only
  bool features_changed = false;
  bool graphs_changed = false;
};

struct ScenarioResult {
  std::string scenario_id;
  YearMonth month;
  std::vector<StationPrediction> stations;  // id order
  std::vector<std::string> removed;
  std::map<std::string, std::vector<AttentionEdge>> candidate_attention;
  bool sigma_frozen = false;
  bool sigma_changed = false;
  bool only_sigma_or_similarity_changed = false;
  std::vector<std::string> notes;
  double recompute_ms = 0;

  [[nodiscard]] const StationPrediction& station(const std::string& id) const {
    for (const auto& s : stations)
      if (s.id == id) return s;
    throw ScenarioError("station " + id + " not in result");
  }
};

inline std::array<double, 2> clip(std::array<double, 2> y) { return {std::max(0.0, y[0]), std::max(0.0, y[1])}; }

namespace detail {
inline bool same_neighbors(const LocalizedGraph& a, const LocalizedGraph& b, bool compare_weights = true) {
  if (a.neighbors.size() != b.neighbors.size()) return false;
  for (std::size_t j = 0; j < a.neighbors.size(); ++j)
    if (a.neighbors[j].id != b.neighbors[j].id ||
        (compare_weights && a.neighbors[j].kernel_weight != b.neighbors[j].kernel_weight))
      return false;
  return true;
}
}  // namespace detail

inline ScenarioResult predict_scenario(const Baseline& base, const ScenarioState& st) {
  ScenarioResult r;
  r.scenario_id = st.scenario.id;
  r.month = st.month.month;
  r.removed = st.scenario.removals;
  r.sigma_frozen = st.sigma_frozen;
  r.sigma_changed = st.sigma_changed;
  r.notes = st.notes;
  const auto& mb = st.month;
  const auto& old = base.data().month(mb.month);
  const auto& old_pred = base.predictions(mb.month);
  const auto pred = base.predict_month(mb);

  bool feature_change = false, proximity_change = false;
  for (std::size_t i = 0; i < mb.active.size(); ++i) {
    const auto& s = mb.active[i];
    StationPrediction p{s.id, s.lat, s.lon, st.candidates.contains(s.id), pred[i], clip(pred[i]), std::nullopt};
    if (!p.candidate) {
      const auto j = old.index_of(s.id);
      const auto before = clip(old_pred[j]);
      p.delta = std::array<double, 2>{p.served[0] - before[0], p.served[1] - before[1]};
      p.features_changed = mb.raw[i].values != old.raw[j].values;
      // The mean distance spans the whole network, so it is left out here.
      const bool local = !std::equal(mb.raw[i].values.begin(), mb.raw[i].values.begin() + kBssOffset + 3,
                                     old.raw[j].values.begin());
      const auto& gp = mb.graphs.get(GraphKind::proximity, s.id);
      const auto& old_gp = old.graphs.get(GraphKind::proximity, s.id);
      const bool prox = !detail::same_neighbors(gp, old_gp);
      const bool sim = !detail::same_neighbors(mb.graphs.get(GraphKind::similarity, s.id),
                                               old.graphs.get(GraphKind::similarity, s.id));
      p.graphs_changed = prox || sim;
      feature_change = feature_change || local;
      // A sigma change alone reweights every edge; only new neighbor sets count here.
      proximity_change = proximity_change || !detail::same_neighbors(gp, old_gp, false);
    } else {
      const auto edges = export_attention(base.model(), mb, mb.normalized, 0, base.input(mb, i), s.id);
      if (!edges.empty()) r.candidate_attention.emplace(s.id, edges);
    }
    r.stations.push_back(std::move(p));
  }
  r.only_sigma_or_similarity_changed = !st.scenario.empty() && !feature_change && !proximity_change;
  if (r.only_sigma_or_similarity_changed)
    r.notes.push_back(
        "no existing station's local features or proximity graph changed; only the network mean distance, sigma and "
        "similarity graphs may differ");
  return r;
}

/// apply_scenario followed by predict_scenario, timed.
inline ScenarioResult evaluate(const Baseline& base, const Scenario& sc, const ScenarioOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto st = apply_scenario(base, sc, opt);
  auto r = predict_scenario(base, st);
  r.recompute_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline nlohmann::json to_json(const ScenarioResult& r) {
  auto stations = nlohmann::json::array();
  for (const auto& s : r.stations) {
    nlohmann::json e = {{"id", s.id},
                        {"lat", s.lat},
                        {"lon", s.lon},
                        {"candidate", s.candidate},
                        {"y_out", s.served[0]},
                        {"y_in", s.served[1]},
                        {"raw_y_out", s.raw[0]},
                        {"raw_y_in", s.raw[1]},
                        {"features_changed", s.features_changed},
                        {"graphs_changed", s.graphs_changed}};
    if (s.delta) {
      e["delta_out"] = (*s.delta)[0];
      e["delta_in"] = (*s.delta)[1];
    } else {
      e["delta_out"] = nullptr;
      e["delta_in"] = nullptr;
    }
    stations.push_back(std::move(e));
  }
  auto att = nlohmann::json::object();
  for (const auto& [id, edges] : r.candidate_attention) att[id] = to_json(std::span<const AttentionEdge>(edges));
  return {{"scenario_id", r.scenario_id},
          {"month", r.month.to_string()},
          {"stations", stations},
          {"removed", r.removed},
          {"candidate_attention", att},
          {"sigma_frozen", r.sigma_frozen},
          {"sigma_changed", r.sigma_changed},
          {"only_sigma_or_similarity_changed", r.only_sigma_or_similarity_changed},
          {"notes", r.notes},
          {"recompute_ms", r.recompute_ms}};
}

/// Scenarios and their results as JSON files in one directory. Writes are
/// serialized; each file is replaced atomically by rename.
class ScenarioStore {
 public:
  explicit ScenarioStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      const auto name = e.path().filename().string();
      if (name.size() > 14 && name.starts_with("sc") && name.ends_with(".scenario.json"))
        next_ = std::max(next_, std::strtoull(name.c_str() + 2, nullptr, 10) + 1);
    }
  }

  /// Assigns an id when the scenario has none and writes both documents.
  std::string put(Scenario sc, const nlohmann::json& result) {
    std::lock_guard lock(mutex_);
    if (sc.id.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "sc%06llu", static_cast<unsigned long long>(next_++));
      sc.id = buf;
    }
    check_id(sc.id);
    auto doc = result;
    doc["scenario_id"] = sc.id;
    write(dir_ / (sc.id + ".scenario.json"), sc.to_json());
    write(dir_ / (sc.id + ".result.json"), doc);
    return sc.id;
  }

  [[nodiscard]] std::optional<nlohmann::json> result(const std::string& id) const { return read(id, ".result.json"); }
  [[nodiscard]] std::optional<Scenario> scenario(const std::string& id) const {
    auto j = read(id, ".scenario.json");
    if (!j) return std::nullopt;
    return Scenario::from_json(*j);
  }

  static void check_id(const std::string& id) {
    if (id.empty() || id.size() > 64 ||
        !std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; }))
      throw ScenarioError("scenario id must be 1-64 characters of [A-Za-z0-9_-]");
  }

 private:
  std::optional<nlohmann::json> read(const std::string& id, const char* suffix) const {
    check_id(id);
    std::lock_guard lock(mutex_);
    std::ifstream in(dir_ / (id + suffix));
    if (!in) return std::nullopt;
    return nlohmann::json::parse(in);
  }

  static void write(const std::filesystem::path& path, const nlohmann::json& j) {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw DataError("cannot write " + tmp.string());
      out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  unsigned long long next_ = 1;
};

}  // namespace tripgen::scenario
