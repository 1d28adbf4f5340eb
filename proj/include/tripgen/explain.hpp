#pragma once

// Model interpretation: KernelSHAP attributions over a station's own inputs
// (43 features, station age, month) with its neighbor graphs frozen, global
// feature ranking, and attention-edge export.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tripgen/checkpoint.hpp"
#include "tripgen/common.hpp"
#include "tripgen/csv.hpp"
#include "tripgen/dataset.hpp"
#include "tripgen/features.hpp"
#include "tripgen/models.hpp"

namespace tripgen {

// ---------------------------------------------------------------------------
// Generic KernelSHAP

/// A cooperative game over `n_players`. `value(present)` returns the
/// expected model outputs when only the players flagged in `present` take
/// the explained sample's values. Players marked null are known not to
/// affect the output and receive exactly zero.
struct ShapGame {
  std::size_t n_players = 0;
  std::size_t n_outputs = 1;
  std::vector<bool> null_players;
  std::function<std::vector<double>(const std::vector<char>& present)> value;
};

struct ShapValues {
  std::vector<double> base;                // value(empty), per output
  std::vector<double> prediction;          // value(all), per output
  std::vector<std::vector<double>> phi;    // [output][player]
  std::size_t coalitions = 0;              // coalitions evaluated, excluding empty and full
  bool exact = false;                      // every coalition enumerated
};

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  double r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

/// Calls f for every k-subset of {0..n-1} as a 0/1 mask.
inline void for_each_subset(std::size_t n, std::size_t k, const std::function<void(const std::vector<char>&)>& f) {
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  std::vector<char> mask(n);
  while (true) {
    std::fill(mask.begin(), mask.end(), 0);
    for (auto i : idx) mask[i] = 1;
    f(mask);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace detail

/// KernelSHAP: weighted least squares of coalition values on coalition
/// masks with the Shapley kernel, constrained so attributions sum to
/// value(all) - value(empty). Coalition sizes are enumerated completely
/// from the outside in while the budget allows; the remainder is sampled
/// in complementary pairs. With a large enough budget every coalition is
/// enumerated and the result is the exact Shapley value.
inline ShapValues kernel_shap(const ShapGame& game, std::size_t n_coalitions, std::uint64_t seed) {
  const std::size_t P = game.n_players;
  if (n_coalitions < P + 2)
    throw ConfigError("kernel_shap: n_coalitions (" + std::to_string(n_coalitions) + ") must be at least players + 2 (" +
                      std::to_string(P + 2) + ")");
  if (!game.null_players.empty() && game.null_players.size() != P)
    throw std::invalid_argument("kernel_shap: null_players has the wrong length");

  std::vector<std::size_t> active;
  for (std::size_t p = 0; p < P; ++p)
    if (game.null_players.empty() || !game.null_players[p]) active.push_back(p);
  const std::size_t M = active.size();
  const std::size_t K = game.n_outputs;

  auto expand = [&](const std::vector<char>& sub) {
    std::vector<char> full(P, 0);
    for (std::size_t i = 0; i < M; ++i) full[active[i]] = sub[i];
    return full;
  };

  ShapValues out;
  out.base = game.value(std::vector<char>(P, 0));
  out.prediction = game.value(std::vector<char>(P, 1));
  if (out.base.size() != K || out.prediction.size() != K) throw std::invalid_argument("kernel_shap: output count mismatch");
  out.phi.assign(K, std::vector<double>(P, 0.0));
  if (M == 0) {
    out.exact = true;
    return out;
  }
  if (M == 1) {
    for (std::size_t k = 0; k < K; ++k) out.phi[k][active[0]] = out.prediction[k] - out.base[k];
    out.exact = true;
    return out;
  }

  // Coalitions with their regression weights.
  std::map<std::vector<char>, double> coalitions;
  const std::size_t n_sizes = (M - 1 + 1) / 2;        // sizes 1..ceil((M-1)/2)
  const std::size_t n_paired = (M - 1) / 2;           // sizes whose complement size differs
  std::vector<double> size_weight(n_sizes + 1, 0.0);  // kernel mass per size (paired sizes doubled)
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    size_weight[s] = static_cast<double>(M - 1) / (static_cast<double>(s) * static_cast<double>(M - s));
    if (s <= n_paired) size_weight[s] *= 2;
  }
  double total = 0;
  for (std::size_t s = 1; s <= n_sizes; ++s) total += size_weight[s];
  for (auto& w : size_weight) w /= total;

  double budget = static_cast<double>(n_coalitions);
  double weight_left = 1.0;
  std::size_t full_sizes = 0;
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    const double count = detail::binomial(M, s) * (s <= n_paired ? 2 : 1);
    const double share = size_weight[s] / weight_left;
    if (budget * share + 1e-8 < count) break;
    const double w = size_weight[s] / count;
    detail::for_each_subset(M, s, [&](const std::vector<char>& mask) {
      coalitions[mask] += w;
      if (s <= n_paired) {
        std::vector<char> comp(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) comp[i] = !mask[i];
        coalitions[comp] += w;
      }
    });
    budget -= count;
    weight_left -= size_weight[s];
    full_sizes = s;
  }
  out.exact = full_sizes == n_sizes;

  if (!out.exact) {
    Rng rng(seed);
    std::vector<double> remaining(size_weight.begin() + static_cast<std::ptrdiff_t>(full_sizes + 1), size_weight.end());
    double rem_total = 0;
    for (double w : remaining) rem_total += w;
    const auto n_samples = static_cast<std::size_t>(budget);
    std::vector<std::size_t> perm(M);
    std::size_t drawn = 0;
    std::map<std::vector<char>, double> sampled;
    while (drawn < n_samples) {
      double u = rng.uniform() * rem_total;
      std::size_t pick = 0;
      while (pick + 1 < remaining.size() && u >= remaining[pick]) u -= remaining[pick++];
      const std::size_t s = full_sizes + 1 + pick;
      for (std::size_t i = 0; i < M; ++i) perm[i] = i;
      for (std::size_t i = 0; i < s; ++i) std::swap(perm[i], perm[i + rng.below(M - i)]);
      std::vector<char> mask(M, 0);
      for (std::size_t i = 0; i < s; ++i) mask[perm[i]] = 1;
      sampled[mask] += 1.0;
      ++drawn;
      if (s <= n_paired && drawn < n_samples) {
        std::vector<char> comp(M);
        for (std::size_t i = 0; i < M; ++i) comp[i] = !mask[i];
        sampled[comp] += 1.0;
        ++drawn;
      }
    }
    for (auto& [mask, count] : sampled) coalitions[mask] += weight_left * count / static_cast<double>(drawn);
  }
  out.coalitions = coalitions.size();

  // Constrained WLS: eliminate the last active player.
  const auto n = static_cast<Eigen::Index>(coalitions.size());
  const auto cols = static_cast<Eigen::Index>(M - 1);
  Eigen::MatrixXd A(n, cols);
  Eigen::MatrixXd b(n, static_cast<Eigen::Index>(K));
  Eigen::Index r = 0;
  for (const auto& [mask, w] : coalitions) {
    const double sw = std::sqrt(w);
    const auto v = game.value(expand(mask));
    const double last = mask[M - 1];
    for (Eigen::Index c = 0; c < cols; ++c) A(r, c) = sw * (mask[static_cast<std::size_t>(c)] - last);
    for (std::size_t k = 0; k < K; ++k) {
      const double delta = out.prediction[k] - out.base[k];
      b(r, static_cast<Eigen::Index>(k)) = sw * (v[k] - out.base[k] - last * delta);
    }
    ++r;
  }
  const Eigen::MatrixXd sol = A.colPivHouseholderQr().solve(b);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0;
    for (std::size_t i = 0; i + 1 < M; ++i) {
      const double phi = sol(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      out.phi[k][active[i]] = phi;
      sum += phi;
    }
    out.phi[k][active[M - 1]] = out.prediction[k] - out.base[k] - sum;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model adapter

/// One background row: a training station-month's own inputs.
struct BackgroundRow {
  std::vector<double> x;  // normalized features
  double age = 0;         // normalized
  int month = 0;
};

inline std::vector<BackgroundRow> draw_background(const nn::Tensor& features, const PreparedSplit& train,
                                                  std::size_t size, std::uint64_t seed) {
  if (train.empty()) throw DataError("background: empty training split");
  std::vector<std::size_t> idx(train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(std::min(size, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<BackgroundRow> out;
  for (auto i : idx) {
    const auto& in = train.inputs[i];
    const auto row = features.row_span(in.row);
    out.push_back({{row.begin(), row.end()}, in.age, in.month});
  }
  return out;
}

enum class FlowDirection { out, in };
inline std::string to_string(FlowDirection d) { return d == FlowDirection::out ? "out" : "in"; }

struct Attribution {
  std::string station_id;
  YearMonth month;
  std::string feature_name;
  double shap_value = 0;     // trips/day
  double base_value = 0;     // trips/day
  double feature_value = 0;  // raw units; month as 1..12
  FlowDirection direction = FlowDirection::out;
};

struct ShapOptions {
  std::size_t n_coalitions = 2048;
  std::size_t background_size = 100;
  std::uint64_t seed = 7;
};

/// Player names: the 43 feature names, then "station_age", then "month".
inline std::vector<std::string> shap_player_names(const FeatureConfig& cfg = {}) {
  auto names = feature_names(cfg);
  names.push_back("station_age");
  names.push_back("month");
  return names;
}

struct SampleExplanation {
  std::vector<Attribution> attributions;  // 45 per direction, out first
  std::array<double, 2> base{};           // trips/day
  std::array<double, 2> prediction{};     // trips/day
  ShapValues raw;                         // normalized scale
};

/// Attributions for one station-month. Absent players take background
/// values; neighbor rows and graphs stay as in `input`.
inline SampleExplanation explain_sample(const Model& model, const Scalers& scalers, const nn::Tensor& features,
                                        const ModelInput& input, const std::string& station_id, YearMonth month,
                                        std::span<const BackgroundRow> background, const ShapOptions& opt,
                                        const FeatureConfig& fcfg = {}) {
  if (background.empty()) throw DataError("explain: empty background");
  const std::size_t F = model.config().n_features;
  const std::size_t P = F + 2;
  const auto xs = features.row_span(input.row);
  const std::vector<double> x(xs.begin(), xs.end());

  ShapGame game;
  game.n_players = P;
  game.n_outputs = 2;
  game.null_players.assign(P, false);
  for (std::size_t f = 0; f < F; ++f) {
    const bool same = std::all_of(background.begin(), background.end(), [&](const auto& b) { return b.x[f] == x[f]; });
    game.null_players[f] = same || model.ignores_feature(f);
  }
  game.null_players[F] = model.ignores_age() ||
                         std::all_of(background.begin(), background.end(), [&](const auto& b) { return b.age == input.age; });
  game.null_players[F + 1] =
      std::all_of(background.begin(), background.end(), [&](const auto& b) { return b.month == input.month; });

  std::vector<double> mixed(F);
  game.value = [&](const std::vector<char>& present) {
    std::array<double, 2> acc{0, 0};
    for (const auto& b : background) {
      for (std::size_t f = 0; f < F; ++f) mixed[f] = present[f] ? x[f] : b.x[f];
      const double age = present[F] ? input.age : b.age;
      const int m = present[F + 1] ? input.month : b.month;
      const auto y = model.predict_with_center(features, input, mixed, age, m);
      acc[0] += y[0];
      acc[1] += y[1];
    }
    const double n = static_cast<double>(background.size());
    return std::vector<double>{acc[0] / n, acc[1] / n};
  };

  SampleExplanation ex;
  ex.raw = kernel_shap(game, opt.n_coalitions, opt.seed);
  const auto names = shap_player_names(fcfg);
  for (int d = 0; d < 2; ++d) {
    const double range = scalers.targets.constant_mask()[d] ? 0.0 : scalers.targets.max()[d] - scalers.targets.min()[d];
    ex.base[d] = scalers.targets.inverse(d, ex.raw.base[d]);
    ex.prediction[d] = scalers.targets.inverse(d, ex.raw.prediction[d]);
    for (std::size_t p = 0; p < P; ++p) {
      double value;
      if (p < F) value = scalers.features.inverse(p, x[p]);
      else if (p == F) value = scalers.age.inverse(0, input.age);
      else value = input.month + 1;
      ex.attributions.push_back({station_id, month, names[p], ex.raw.phi[d][p] * range, ex.base[d], value,
                                 d == 0 ? FlowDirection::out : FlowDirection::in});
    }
  }
  return ex;
}

inline void write_attributions_csv(std::ostream& out, std::span<const Attribution> rows) {
  csv::write_row(out, {"station_id", "month", "direction", "feature_name", "shap_value", "feature_value"});
  for (const auto& a : rows)
    csv::write_row(out, {a.station_id, a.month.to_string(), to_string(a.direction), a.feature_name,
                         csv::format_double(a.shap_value), csv::format_double(a.feature_value)});
}

inline nlohmann::json to_json(const SampleExplanation& ex) {
  nlohmann::json j = {{"base", {{"out", ex.base[0]}, {"in", ex.base[1]}}},
                      {"prediction", {{"out", ex.prediction[0]}, {"in", ex.prediction[1]}}},
                      {"exact", ex.raw.exact},
                      {"attributions", nlohmann::json::array()}};
  for (const auto& a : ex.attributions)
    j["attributions"].push_back({{"station_id", a.station_id},
                                 {"month", a.month.to_string()},
                                 {"direction", to_string(a.direction)},
                                 {"feature_name", a.feature_name},
                                 {"shap_value", a.shap_value},
                                 {"feature_value", a.feature_value}});
  return j;
}

// ---------------------------------------------------------------------------
// Global ranking

struct FeatureImportance {
  std::string feature_name;
  double mean_abs_shap = 0;
  double mean_shap = 0;
  std::size_t count = 0;
  std::vector<std::pair<double, double>> points;  // (feature_value, shap_value) for beeswarm plots
};

/// Features by mean |shap| descending; ties by name.
inline std::vector<FeatureImportance> rank_features(std::span<const Attribution> attributions) {
  std::map<std::string, FeatureImportance> by_name;
  for (const auto& a : attributions) {
    auto& f = by_name[a.feature_name];
    f.feature_name = a.feature_name;
    f.mean_abs_shap += std::abs(a.shap_value);
    f.mean_shap += a.shap_value;
    ++f.count;
    f.points.emplace_back(a.feature_value, a.shap_value);
  }
  std::vector<FeatureImportance> out;
  for (auto& [name, f] : by_name) {
    f.mean_abs_shap /= static_cast<double>(f.count);
    f.mean_shap /= static_cast<double>(f.count);
    out.push_back(std::move(f));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.mean_abs_shap > b.mean_abs_shap || (a.mean_abs_shap == b.mean_abs_shap && a.feature_name < b.feature_name);
  });
  return out;
}

inline nlohmann::json to_json(std::span<const FeatureImportance> table) {
  auto j = nlohmann::json::array();
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& f = table[r];
    auto pts = nlohmann::json::array();
    for (auto [v, s] : f.points) pts.push_back({{"feature_value", v}, {"shap_value", s}});
    j.push_back({{"rank", r + 1},
                 {"feature_name", f.feature_name},
                 {"mean_abs_shap", f.mean_abs_shap},
                 {"mean_shap", f.mean_shap},
                 {"count", f.count},
                 {"points", pts}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Attention edges

struct AttentionEdge {
  std::string center;
  std::string neighbor;
  GraphKind kind = GraphKind::proximity;
  double score = 0;   // s_ij for attention variants, raw kernel weight for mgcn
  double weight = 0;  // normalized over the center's neighbors
  YearMonth month;
};

/// Edges of one station in one month of a built month: k per graph kind
/// the model uses. Attention variants export learned scores and weights,
/// mgcn its normalized kernel weights; other variants have no edges.
inline std::vector<AttentionEdge> export_attention(const Model& model, const MonthBuild& mb, const nn::Tensor& features,
                                                   std::size_t row_offset, const ModelInput& input,
                                                   const std::string& station_id) {
  if (!mb.is_active(station_id))
    throw DataError("station " + station_id + " is not active in " + mb.month.to_string());
  std::vector<AttentionEdge> out;
  for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
    if (model.config().linear() || !model.uses(kind)) continue;
    const auto& g = kind == GraphKind::proximity ? input.proximity : input.similarity;
    std::vector<double> scores, weights;
    if (model.config().attention()) {
      auto att = model.attention(features, input, kind);
      scores = std::move(att->scores);
      weights = std::move(att->weights);
    } else {
      scores = g.kernel_weights;
      weights = g.rows.empty() ? std::vector<double>{} : ops::normalize_weights(g.kernel_weights);
    }
    for (std::size_t j = 0; j < g.rows.size(); ++j)
      out.push_back({station_id, mb.active[g.rows[j] - row_offset].id, kind, scores[j], weights[j], mb.month});
  }
  return out;
}

inline std::vector<AttentionEdge> export_attention(const Model& model, const PreparedData& data,
                                                   const std::string& station_id, YearMonth month) {
  auto it = data.months.find(month);
  if (it == data.months.end() || !it->second.is_active(station_id))
    throw DataError("station " + station_id + " is not active in " + month.to_string());
  return export_attention(model, it->second, data.features, data.offsets.at(month), data.input_for(station_id, month),
                          station_id);
}

inline void write_attention_csv(std::ostream& out, std::span<const AttentionEdge> edges) {
  csv::write_row(out, {"center_id", "neighbor_id", "kind", "score", "weight", "month"});
  for (const auto& e : edges)
    csv::write_row(out, {e.center, e.neighbor, to_string(e.kind), csv::format_double(e.score),
                         csv::format_double(e.weight), e.month.to_string()});
}

inline nlohmann::json to_json(std::span<const AttentionEdge> edges) {
  auto j = nlohmann::json::array();
  for (const auto& e : edges)
    j.push_back({{"center_id", e.center},
                 {"neighbor_id", e.neighbor},
                 {"kind", to_string(e.kind)},
                 {"score", e.score},
                 {"weight", e.weight},
                 {"month", e.month.to_string()}});
  return j;
}

}  // namespace tripgen
