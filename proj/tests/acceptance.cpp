// Acceptance checks. Prints one PASS/FAIL/SKIPPED line per criterion and
// exits non-zero when any check fails.
//
//   acceptance [--only <substring>]
//
// The real-data check runs when TRIPGEN_CITIBIKE_DIR names a prepared data
// directory (pipeline.json, stations.csv, trips.csv or samples.csv, layers/).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tripgen/dataset.hpp"
#include "tripgen/explain.hpp"
#include "tripgen/linear_models.hpp"
#include "tripgen/models.hpp"
#include "tripgen/nn/gradient_check.hpp"
#include "tripgen/scenario.hpp"
#include "tripgen/synth_city.hpp"
#include "tripgen/train_eval.hpp"

using namespace tripgen;

namespace {

enum class Status { pass, fail, skipped };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

// Collects failures; the first few are reported.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (messages_.size() < 3) messages_.push_back(what);
  }
  [[nodiscard]] Outcome outcome(const std::string& summary) const {
    if (!failures_) return {Status::pass, summary};
    std::string d = std::to_string(failures_) + " failure(s): ";
    for (std::size_t i = 0; i < messages_.size(); ++i) d += (i ? "; " : "") + messages_[i];
    return {Status::fail, d};
  }

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> messages_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Random model instances

struct Batch {
  nn::Tensor features;
  std::vector<ModelInput> inputs;
  nn::Tensor targets;
};

Batch random_batch(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.features = nn::Tensor(n, kFeatureCount);
  for (auto& v : b.features.values()) v = rng.uniform();
  b.targets = nn::Tensor(n, 2);
  for (auto& v : b.targets.values()) v = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    ModelInput in;
    in.row = i;
    in.age = rng.uniform();
    in.month = static_cast<int>(rng.below(12));
    for (auto* g : {&in.proximity, &in.similarity}) {
      std::vector<std::size_t> others;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) others.push_back(j);
      rng.shuffle(others);
      for (std::size_t r = 0; r < std::min(k, others.size()); ++r) {
        g->rows.push_back(others[r]);
        g->kernel_weights.push_back(rng.uniform(0.05, 1.0));
      }
    }
    b.inputs.push_back(in);
  }
  return b;
}

ModelConfig config_for(Variant v) {
  ModelConfig c;
  c.variant = v;
  return c;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome gradient_correctness() {
  const auto b = random_batch(5, 2, 2024);
  Model m(config_for(Variant::mgat), 7);
  const auto loss = [&] {
    nn::Tape t;
    return nn::sum_squared_error(m.forward(t, b.features, b.inputs), b.targets).value()[0];
  };
  m.params().zero_grad();
  {
    nn::Tape t;
    t.backward(nn::sum_squared_error(m.forward(t, b.features, b.inputs), b.targets));
  }
  const auto rep = nn::gradient_check(m.params(), loss);
  Check c;
  c.expect(rep.checked == m.params().scalar_count(), "not every parameter was checked");
  c.expect(rep.max_relative_error < 1e-4, "max relative error " + fmt(rep.max_relative_error));
  return c.outcome(std::to_string(rep.checked) + " parameters, max relative error " + fmt(rep.max_relative_error));
}

Outcome attention_invariants() {
  Rng rng(11);
  Check c;
  double worst = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const auto k = 1 + rng.below(10);
    const auto b = random_batch(k + 1 + rng.below(5), k, 5000 + static_cast<std::uint64_t>(inst));
    const Variant v = inst % 3 == 0 ? Variant::mgat : inst % 3 == 1 ? Variant::pgat : Variant::bgat;
    const Model m(config_for(v), static_cast<std::uint64_t>(inst));
    const auto& in = b.inputs[0];
    for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
      const auto a = m.attention(b.features, in, kind);
      if (!a) continue;
      double total = 0;
      for (double w : a->weights) total += w;
      worst = std::max(worst, std::abs(total - 1.0));
      c.expect(std::abs(total - 1.0) <= 1e-6, "weights sum to " + fmt(total));
    }
    const auto base = m.predict(b.features, in);
    auto perm = in;
    for (auto* g : {&perm.proximity, &perm.similarity}) {
      std::vector<std::size_t> order(g->rows.size());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      GraphInput q;
      for (auto o : order) {
        q.rows.push_back(g->rows[o]);
        q.kernel_weights.push_back(g->kernel_weights[o]);
      }
      *g = q;
    }
    c.expect(m.predict(b.features, perm) == base, "permuted neighbors changed the output");
  }
  return c.outcome("1000 instances, worst |sum - 1| " + fmt(worst) + ", permutation bit-identical");
}

double beta_error(const Model& m, const PreparedData& d, const synth::GroundTruth& truth, std::size_t offset,
                  double factor) {
  const auto& W = m.params().at("W_lin").value;
  double worst = 0;
  for (int dir = 0; dir < 2; ++dir) {
    const double yr = d.scalers.targets.max()[dir] - d.scalers.targets.min()[dir];
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      if (d.scalers.features.constant_mask()[f]) continue;
      const double xr = d.scalers.features.max()[f] - d.scalers.features.min()[f];
      const double got = W(offset + f, static_cast<std::size_t>(dir)) * yr / xr;
      worst = std::max(worst, std::abs(got - factor * truth.beta[dir][f]) * xr / yr);
    }
  }
  return worst;
}

Outcome slx_equivalence() {
  synth::SynthConfig cfg;
  cfg.spillover_strength = 0.5;
  cfg.noise_sd = 0;
  const auto city = synth::generate_city(cfg);
  const auto d = prepare(city.workspace);
  const auto ols = slx_fit_ols(d.features, d.train.inputs, d.train.targets);
  const auto gd = slx_fit_gd(d.features, d.train.inputs, d.train.targets);
  std::vector<double> a, b;
  for (const auto* split : {&d.train, &d.validation, &d.test_existing, &d.test_new}) {
    const auto pa = predict_split(ols.model, d.scalers, d.features, *split);
    const auto pb = predict_split(gd.model, d.scalers, d.features, *split);
    a.insert(a.end(), pa.y_out.begin(), pa.y_out.end());
    a.insert(a.end(), pa.y_in.begin(), pa.y_in.end());
    b.insert(b.end(), pb.y_out.begin(), pb.y_out.end());
    b.insert(b.end(), pb.y_in.begin(), pb.y_in.end());
  }
  const double rmse = compute_metrics(b, a)->rmse;
  const double beta = std::max(beta_error(ols.model, d, city.truth, 0, 1.0),
                               beta_error(ols.model, d, city.truth, kFeatureCount, city.truth.spillover));
  Check c;
  c.expect(rmse < 1e-4, "GD vs OLS RMSE " + fmt(rmse));
  c.expect(beta < 1e-6, "beta error " + fmt(beta));
  return c.outcome("GD vs OLS RMSE " + fmt(rmse) + " trips/day, beta error " + fmt(beta));
}

// Great-circle distance via atan2, independent of the library's haversine.
double gc_distance(geo::LatLon a, geo::LatLon b) {
  const double r = std::numbers::pi / 180.0;
  const double p1 = a.lat * r, p2 = b.lat * r, dl = (b.lon - a.lon) * r;
  const double x = std::cos(p2) * std::sin(dl);
  const double y = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
  const double z = std::sin(p1) * std::sin(p2) + std::cos(p1) * std::cos(p2) * std::cos(dl);
  return geo::kEarthRadiusM * std::atan2(std::hypot(x, y), z);
}

Outcome oracle_equivalences() {
  Check c;
  Rng rng(77);
  const geo::LatLon centre{40.73, -73.99};
  auto random_point = [&](double half_km) {
    const double dlat = half_km / 111.2, dlon = half_km / (111.2 * std::cos(centre.lat * std::numbers::pi / 180));
    return geo::LatLon{centre.lat + rng.uniform(-dlat, dlat), centre.lon + rng.uniform(-dlon, dlon)};
  };

  // Radius counts.
  geo::GeoLayer poi;
  poi.kind = geo::LayerKind::poi;
  const std::vector<std::string> cats{"a", "b", "c"};
  for (int i = 0; i < 500; ++i) poi.points.push_back({random_point(2.0), cats[rng.below(3)]});
  for (int q = 0; q < 50; ++q) {
    const auto p = random_point(1.5);
    const double radius = rng.uniform(100, 900);
    const auto got = extract_radius_counts(p, poi, radius, cats);
    std::vector<double> want(3, 0.0);
    for (const auto& pt : poi.points)
      if (gc_distance(p, pt.pos) <= radius) want[static_cast<std::size_t>(pt.category[0] - 'a')] += 1;
    c.expect(got == want, "radius counts differ");
  }

  // Band features.
  std::vector<StationRecord> stations;
  for (int i = 0; i < 300; ++i) {
    const auto p = random_point(4.0);
    char id[16];
    std::snprintf(id, sizeof id, "S%04d", i);
    stations.push_back({id, p.lat, p.lon, {2016, 1}, std::nullopt});
  }
  for (std::size_t q = 0; q < stations.size(); q += 7) {
    const auto got = extract_bss_network(stations[q], stations);
    std::array<double, 3> bands{};
    long double sum = 0;
    for (const auto& o : stations) {
      if (o.id == stations[q].id) continue;
      const double dist = gc_distance({stations[q].lat, stations[q].lon}, {o.lat, o.lon});
      sum += dist;
      bands[dist < 500 ? 0 : dist < 1000 ? 1 : 2] += dist < 5000 ? 1 : 0;
    }
    c.expect(got.band_counts == bands, "band counts differ at " + stations[q].id);
    c.expect(std::abs(got.mean_distance_m - static_cast<double>(sum / (stations.size() - 1))) < 1e-9 * 5000,
             "mean distance differs");
  }

  // k-NN graphs and sigma.
  std::vector<std::vector<double>> feats(stations.size(), std::vector<double>(6));
  for (auto& f : feats)
    for (auto& v : f) v = rng.uniform();
  std::vector<GraphNode> nodes;
  for (std::size_t i = 0; i < stations.size(); ++i)
    nodes.push_back({stations[i].id, {stations[i].lat, stations[i].lon}, feats[i]});
  GraphBuilderConfig gcfg;
  gcfg.k = 5;
  const auto graphs = build_localized_graphs(nodes, gcfg, {2016, 1});
  for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
    auto dist = [&](std::size_t i, std::size_t j) {
      if (kind == GraphKind::proximity) return gc_distance(nodes[i].pos, nodes[j].pos);
      long double s = 0;
      for (std::size_t f = 0; f < 6; ++f) s += (feats[i][f] - feats[j][f]) * (feats[i][f] - feats[j][f]);
      return static_cast<double>(std::sqrt(s));
    };
    long double mean = 0, m2 = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (std::size_t j = i + 1; j < nodes.size(); ++j) {
        mean += dist(i, j);
        ++pairs;
      }
    mean /= pairs;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (std::size_t j = i + 1; j < nodes.size(); ++j) m2 += (dist(i, j) - mean) * (dist(i, j) - mean);
    const double sigma = static_cast<double>(std::sqrt(m2 / pairs));
    const double got_sigma = kind == GraphKind::proximity ? graphs.sigma_d : graphs.sigma_b;
    c.expect(std::abs(got_sigma - sigma) <= 1e-9 * sigma, to_string(kind) + " sigma differs");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      std::vector<std::pair<double, std::string>> all;
      for (std::size_t j = 0; j < nodes.size(); ++j)
        if (j != i) all.emplace_back(dist(i, j), nodes[j].id);
      std::sort(all.begin(), all.end());
      const auto& g = graphs.get(kind, nodes[i].id);
      c.expect(g.neighbors.size() == 5, "wrong neighbor count");
      for (std::size_t r = 0; r < g.neighbors.size(); ++r) {
        c.expect(g.neighbors[r].id == all[r].second, "neighbor order differs at " + nodes[i].id);
        const double w = std::exp(-(all[r].first / sigma) * (all[r].first / sigma));
        c.expect(std::abs(g.neighbors[r].kernel_weight - w) <= 1e-9, "kernel weight differs");
      }
    }
  }

  // Monthly aggregation.
  std::vector<TripRecord> trips;
  const auto day0 = std::chrono::sys_days{std::chrono::year{2017} / 1 / 1};
  for (int t = 0; t < 500; ++t) {
    TripRecord r;
    r.start_station_id = stations[rng.below(20)].id;
    r.end_station_id = stations[rng.below(20)].id;
    r.start_day = day0 + std::chrono::days{rng.below(90)};
    r.end_day = r.start_day + std::chrono::days{rng.below(10) == 0 ? 1 : 0};
    r.start_time = std::chrono::sys_seconds{r.start_day.time_since_epoch()} + std::chrono::hours{12};
    r.end_time = std::chrono::sys_seconds{r.end_day.time_since_epoch()} + std::chrono::hours{13};
    trips.push_back(r);
  }
  const auto samples = aggregate_all_months(trips);
  std::map<std::pair<std::string, YearMonth>, std::tuple<int, int, std::set<std::chrono::sys_days>>> oracle;
  for (const auto& t : trips) {
    auto& dep = oracle[{t.start_station_id, YearMonth::of(t.start_day)}];
    ++std::get<0>(dep);
    std::get<2>(dep).insert(t.start_day);
    auto& arr = oracle[{t.end_station_id, YearMonth::of(t.end_day)}];
    ++std::get<1>(arr);
    std::get<2>(arr).insert(t.end_day);
  }
  c.expect(samples.size() == oracle.size(), "sample count " + std::to_string(samples.size()) + " vs " +
                                                std::to_string(oracle.size()));
  for (const auto& s : samples) {
    auto it = oracle.find({s.station_id, s.month});
    if (it == oracle.end()) {
      c.expect(false, "unexpected sample " + s.station_id);
      continue;
    }
    const auto& [dep, arr, days] = it->second;
    const double n = static_cast<double>(days.size());
    c.expect(s.active_days == static_cast<int>(days.size()), "active days differ");
    c.expect(std::abs(s.y_out - dep / n) <= 1e-9 && std::abs(s.y_in - arr / n) <= 1e-9, "daily averages differ");
  }

  // Metrics.
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng.below(500);
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(0, 50);
      p[i] = y[i] + rng.normal(0, 3);
    }
    long double mean = 0, ss_res = 0, ss_tot = 0, abs_sum = 0;
    for (double v : y) mean += v;
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) {
      ss_res += (p[i] - y[i]) * static_cast<long double>(p[i] - y[i]);
      abs_sum += std::abs(p[i] - y[i]);
      ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    const auto m = compute_metrics(p, y);
    c.expect(std::abs(m->rmse - static_cast<double>(std::sqrt(ss_res / n))) <= 1e-9, "rmse differs");
    c.expect(std::abs(m->mae - static_cast<double>(abs_sum / n)) <= 1e-9, "mae differs");
    if (ss_tot > 0) c.expect(m->r2 && std::abs(*m->r2 - static_cast<double>(1 - ss_res / ss_tot)) <= 1e-9, "r2 differs");
  }
  return c.outcome("radius counts, band features, k-NN graphs, monthly aggregation and metrics match");
}

Outcome spillover_ordering() {
  const auto city = synth::generate_city({});
  const auto data = prepare(city.workspace);
  std::map<Variant, EvalReport> reports;
  for (Variant v : {Variant::fnn, Variant::mgat, Variant::pgat, Variant::bgat}) {
    TrainRunConfig cfg;
    cfg.model.variant = v;
    cfg.n_runs = 10;
    reports.emplace(v, run_experiment(cfg, data));
  }
  auto mean_new = [&](Variant v) {
    return *reports.at(v).mean([](const RunReport& r) -> std::optional<double> {
      return r.test_new.pooled ? std::optional(r.test_new.pooled->rmse) : std::nullopt;
    });
  };
  std::size_t pgat_wins = 0;
  for (std::size_t r = 0; r < 10; ++r)
    pgat_wins += reports.at(Variant::pgat).runs[r].test_new.pooled->rmse <
                 reports.at(Variant::bgat).runs[r].test_new.pooled->rmse;
  Check c;
  const double mgat = mean_new(Variant::mgat), fnn = mean_new(Variant::fnn);
  c.expect(mgat < fnn, "mgat " + fmt(mgat) + " >= fnn " + fmt(fnn));
  c.expect(pgat_wins >= 8, "pgat beat bgat in " + std::to_string(pgat_wins) + "/10 runs");
  return c.outcome("test-new RMSE mgat " + fmt(mgat) + " < fnn " + fmt(fnn) + "; pgat < bgat in " +
                   std::to_string(pgat_wins) + "/10 runs (pgat " + fmt(mean_new(Variant::pgat)) + ", bgat " +
                   fmt(mean_new(Variant::bgat)) + ")");
}

Outcome shap_properties() {
  synth::SynthConfig cfg;
  cfg.n_stations = 80;
  cfg.n_months = 24;
  cfg.expansions = synth::SynthConfig::even_expansions(24, 2, 15);
  const auto city = synth::generate_city(cfg);
  const auto d = prepare(city.workspace);
  const auto bg = draw_background(d.features, d.train, 50, 1);
  std::vector<const ModelInput*> samples;
  for (const auto* split : {&d.test_new, &d.test_existing})
    for (std::size_t i = 0; i < split->size() && samples.size() < (split == &d.test_new ? 25u : 50u); i += 3)
      samples.push_back(&split->inputs[i]);

  // A trained mgat with one feature cut out of every path.
  TrainRunConfig tc;
  tc.epochs = 20;
  auto model = train_model(tc, d.features, d.train, d.validation, 3).model;
  const std::size_t dummy = 12;
  for (const char* name : {"W_o1", "W_h.p", "W_h.b"}) {
    auto& W = model.params().at(name).value;
    for (std::size_t j = 0; j < W.cols(); ++j) W(dummy, j) = 0;
  }
  ModelConfig lin;
  lin.variant = Variant::linreg;
  const auto linreg = fit_linear_model(lin, d.features, d.train.inputs, d.train.targets, LinearEstimator::ols);
  const auto& W = linreg.model.params().at("W_lin").value;

  Check c;
  double worst_acc = 0, worst_dummy = 0, worst_linear = 0;
  for (const auto* in : samples) {
    const auto ex = explain_sample(model, d.scalers, d.features, *in, "x", {2020, 1}, bg, {});
    const auto y = model.predict(d.features, *in);
    for (int dir = 0; dir < 2; ++dir) {
      double total = ex.base[dir];
      for (std::size_t p = 0; p < 45; ++p) total += ex.attributions[dir * 45 + p].shap_value;
      const double pred = d.scalers.targets.inverse(dir, y[dir]);
      worst_acc = std::max(worst_acc, std::abs(total - pred));
      worst_dummy = std::max(worst_dummy, std::abs(ex.attributions[dir * 45 + dummy].shap_value));
    }
    const auto lx = explain_sample(linreg.model, d.scalers, d.features, *in, "x", {2020, 1}, bg, {});
    for (int dir = 0; dir < 2; ++dir) {
      const auto col = static_cast<std::size_t>(dir);
      const double range = d.scalers.targets.max()[dir] - d.scalers.targets.min()[dir];
      for (std::size_t f = 0; f < kFeatureCount; ++f) {
        double mean = 0;
        for (const auto& b : bg) mean += b.x[f];
        mean /= static_cast<double>(bg.size());
        const double want = W(f, col) * (d.features(in->row, f) - mean) * range;
        worst_linear = std::max(worst_linear, std::abs(lx.attributions[dir * 45 + f].shap_value - want));
      }
      double age_mean = 0, month_mean = 0;
      for (const auto& b : bg) {
        age_mean += b.age;
        month_mean += W(kFeatureCount + static_cast<std::size_t>(b.month), col);
      }
      age_mean /= static_cast<double>(bg.size());
      month_mean /= static_cast<double>(bg.size());
      worst_linear = std::max(worst_linear, std::abs(lx.attributions[dir * 45 + 43].shap_value -
                                                     W(kFeatureCount + 12, col) * (in->age - age_mean) * range));
      worst_linear = std::max(worst_linear,
                              std::abs(lx.attributions[dir * 45 + 44].shap_value -
                                       (W(kFeatureCount + static_cast<std::size_t>(in->month), col) - month_mean) * range));
    }
  }
  c.expect(samples.size() == 50, "only " + std::to_string(samples.size()) + " samples");
  c.expect(worst_acc < 1e-3, "local accuracy error " + fmt(worst_acc));
  c.expect(worst_dummy < 1e-6, "dummy attribution " + fmt(worst_dummy));
  c.expect(worst_linear < 1e-3, "linear closed-form error " + fmt(worst_linear));
  return c.outcome(std::to_string(samples.size()) + " samples: local accuracy " + fmt(worst_acc) + ", dummy " +
                   fmt(worst_dummy) + ", linear closed form " + fmt(worst_linear));
}

Outcome real_data() {
  const char* dir = std::getenv("TRIPGEN_CITIBIKE_DIR");
  if (!dir || !*dir) return {Status::skipped, "TRIPGEN_CITIBIKE_DIR not set"};
  const auto ws = Workspace::load(dir);
  const auto data = prepare(ws);
  Check c;
  auto near = [&](std::size_t got, double want, const std::string& what) {
    c.expect(std::abs(static_cast<double>(got) - want) <= 0.02 * want,
             what + " " + std::to_string(got) + " vs " + fmt(want));
  };
  near(data.train.size() + data.validation.size(), 21827, "train+val");
  near(data.train.size(), 17462, "train");
  near(data.validation.size(), 4365, "validation");
  near(data.test_new.size() + data.test_existing.size(), 21808, "test");
  near(data.test_new.size(), 5362, "test new");
  near(data.test_existing.size(), 16446, "test existing");
  TrainRunConfig cfg;
  cfg.n_runs = 1;
  const auto run = run_once(cfg, data, 0).report;
  const auto r2 = [](const SplitMetrics& m) {
    return m.pooled && m.pooled->r2 ? *m.pooled->r2 : std::numeric_limits<double>::quiet_NaN();
  };
  const double r2_new = r2(run.test_new), r2_old = r2(run.test_existing);
  c.expect(r2_new >= 0.65, "test-new R2 " + fmt(r2_new));
  c.expect(r2_old >= 0.78, "test-existing R2 " + fmt(r2_old));
  return c.outcome("split counts within 2%, R2 new " + fmt(r2_new) + ", existing " + fmt(r2_old));
}

Outcome scenario_consistency() {
  synth::SynthConfig cfg;
  cfg.n_stations = 120;
  cfg.n_months = 24;
  cfg.expansions = synth::SynthConfig::even_expansions(24, 2, 20);
  const auto city = synth::generate_city(cfg);
  const auto& ws = city.workspace;
  Checkpoint ckpt;
  ckpt.config = config_for(Variant::mgat);
  ckpt.params = Model(ckpt.config, 5).params();
  ckpt.scalers = prepare(ws).scalers;
  const scenario::Baseline base(ws, ckpt);
  const FeatureExtractor extractor(ws.layers, ws.config.features);

  Check c;
  Rng rng(31);
  double worst = 0;
  for (int n = 0; n < 20; ++n) {
    auto it = base.data().months.begin();
    std::advance(it, static_cast<long>(rng.below(base.data().months.size())));
    const auto& mb = it->second;
    scenario::Scenario sc;
    sc.base_month = it->first;
    const auto adds = 1 + rng.below(3), rems = rng.below(3);
    for (std::size_t a = 0; a < adds; ++a) {
      const auto& s = mb.active[rng.below(mb.active.size())];
      const double deg = 180.0 / (std::numbers::pi * geo::kEarthRadiusM);
      sc.additions.push_back({"cand" + std::to_string(a), s.lat + rng.uniform(-700, 700) * deg,
                              s.lon + rng.uniform(-700, 700) * deg / std::cos(s.lat * std::numbers::pi / 180), 0});
    }
    std::vector<std::string> ids;
    for (const auto& s : mb.active) ids.push_back(s.id);
    rng.shuffle(ids);
    sc.removals.assign(ids.begin(), ids.begin() + static_cast<long>(rems));

    const auto st = scenario::apply_scenario(base, sc);
    std::vector<StationRecord> active;
    for (const auto& s : mb.active)
      if (std::find(sc.removals.begin(), sc.removals.end(), s.id) == sc.removals.end()) active.push_back(s);
    for (const auto& a : sc.additions) active.push_back({a.id, a.lat, a.lon, sc.base_month, std::nullopt});
    auto ref = extract_month(extractor, sc.base_month, active);
    normalize_month(ref, base.data().scalers.features);
    build_month_graphs(ref, base.data().graph_config());

    c.expect(st.month.active.size() == ref.active.size(), "station count differs");
    if (st.month.active.size() != ref.active.size()) continue;
    for (std::size_t i = 0; i < ref.active.size(); ++i)
      for (std::size_t f = 0; f < kFeatureCount; ++f) {
        const double e = std::abs(st.month.raw[i][f] - ref.raw[i][f]);
        worst = std::max(worst, e);
        c.expect(e <= 1e-9, "feature " + std::to_string(f) + " of " + ref.active[i].id + " differs by " + fmt(e));
      }
    c.expect(st.month.graphs == ref.graphs, "graphs differ in scenario " + std::to_string(n));
  }
  for (const auto& [m, mb] : base.data().months) {
    const auto r = scenario::evaluate(base, {"", m, {}, {}});
    for (const auto& s : r.stations) c.expect(s.delta && (*s.delta)[0] == 0 && (*s.delta)[1] == 0, "nonzero delta");
  }
  return c.outcome("20 scenarios match the rebuild (worst feature error " + fmt(worst) +
                   ", graphs identical); empty scenario gives zero deltas");
}

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") only = argv[i + 1];

  const std::vector<Criterion> criteria = {
      {"gradient correctness", 10, gradient_correctness},
      {"attention invariants", 10, attention_invariants},
      {"SLX / linear network equivalence", 60, slx_equivalence},
      {"oracle equivalences", 60, oracle_equivalences},
      {"spillover ordering", 1800, spillover_ordering},
      {"SHAP properties", 300, shap_properties},
      {"real-data pipeline", 4 * 3600, real_data},
      {"scenario consistency", 120, scenario_consistency},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    if (!only.empty() && cr.name.find(only) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = cr.run();
    } catch (const std::exception& e) {
      out = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out.status == Status::pass && secs > cr.budget_s) {
      out.status = Status::fail;
      out.detail += "; took " + fmt(secs) + " s, budget " + fmt(cr.budget_s) + " s";
    }
    const char* tag = out.status == Status::pass ? "PASS" : out.status == Status::fail ? "FAIL" : "SKIPPED";
    if (out.status == Status::fail) ++failed;
    std::cout << tag << "  " << cr.name << ": " << out.detail << " [" << std::fixed << std::setprecision(1) << secs
              << " s]" << std::defaultfloat << std::endl;
  }
  return failed ? 1 : 0;
}
