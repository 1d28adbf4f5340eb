#pragma once

// Localized k-NN graphs per station and month: one by geographic proximity,
// one by built-environment similarity, each with Gaussian kernel weights.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tripgen/common.hpp"
#include "tripgen/csv.hpp"
#include "tripgen/geo.hpp"
#include "tripgen/year_month.hpp"

namespace tripgen {

enum class GraphKind { proximity, similarity };

inline std::string to_string(GraphKind k) { return k == GraphKind::proximity ? "proximity" : "similarity"; }
inline GraphKind parse_graph_kind(const std::string& s) {
  if (s == "proximity") return GraphKind::proximity;
  if (s == "similarity") return GraphKind::similarity;
  throw ConfigError("unknown graph kind '" + s + "'");
}

enum class SigmaScope { global, per_month };

inline std::string to_string(SigmaScope s) { return s == SigmaScope::global ? "global" : "per_month"; }
inline SigmaScope parse_sigma_scope(const std::string& s) {
  if (s == "global") return SigmaScope::global;
  if (s == "per_month") return SigmaScope::per_month;
  throw ConfigError("unknown sigma scope '" + s + "'");
}

struct GraphBuilderConfig {
  std::size_t k = 5;
  SigmaScope sigma_scope = SigmaScope::per_month;
  std::optional<double> sigma_d;  // meters; overrides the computed value
  std::optional<double> sigma_b;  // normalized-feature distance units

  void validate() const {
    if (k < 1) throw ConfigError("graph k must be >= 1");
    if (sigma_d && !(*sigma_d > 0)) throw ConfigError("sigma_d must be > 0");
    if (sigma_b && !(*sigma_b > 0)) throw ConfigError("sigma_b must be > 0");
  }
};

struct Neighbor {
  std::string id;
  double distance = 0;
  double kernel_weight = 0;
  bool operator==(const Neighbor&) const = default;
};

struct LocalizedGraph {
  std::string center;
  GraphKind kind = GraphKind::proximity;
  std::vector<Neighbor> neighbors;  // distance ascending, id tiebreak
  bool operator==(const LocalizedGraph&) const = default;
};

/// Gaussian kernel exp(-(d / sigma)^2).
inline double kernel_weight(double distance, double sigma) {
  if (!(sigma > 0)) throw ConfigError("kernel sigma must be > 0");
  if (distance < 0) throw std::invalid_argument("kernel distance must be >= 0");
  const double r = distance / sigma;
  return std::exp(-r * r);
}

inline double proximity_weight(double distance_m, double sigma_d) { return kernel_weight(distance_m, sigma_d); }

inline double feature_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("feature dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double similarity_weight(std::span<const double> xi, std::span<const double> xj, double sigma_b) {
  return kernel_weight(feature_distance(xi, xj), sigma_b);
}

/// One active station as seen by the graph builder.
struct GraphNode {
  std::string id;
  geo::LatLon pos;
  std::span<const double> features;  // normalized
};

inline double node_distance(const GraphNode& a, const GraphNode& b, GraphKind kind) {
  return kind == GraphKind::proximity ? geo::haversine(a.pos, b.pos) : feature_distance(a.features, b.features);
}

/// Streaming population variance (Welford) of pairwise distances.
class PairwiseSpread {
 public:
  void add(double d) {
    ++n_;
    const double delta = d - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (d - mean_);
  }
  void add_all_pairs(std::span<const GraphNode> nodes, GraphKind kind) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (std::size_t j = i + 1; j < nodes.size(); ++j) add(node_distance(nodes[i], nodes[j], kind));
  }
  [[nodiscard]] std::size_t count() const { return n_; }
  [[nodiscard]] double mean() const { return mean_; }
  [[nodiscard]] double stddev() const { return n_ ? std::sqrt(m2_ / static_cast<double>(n_)) : 0.0; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

struct GraphSet {
  YearMonth month;
  double sigma_d = 0;
  double sigma_b = 0;
  std::map<std::string, LocalizedGraph> proximity;
  std::map<std::string, LocalizedGraph> similarity;
  std::vector<std::string> warnings;

  [[nodiscard]] const LocalizedGraph& get(GraphKind kind, const std::string& center) const {
    const auto& m = kind == GraphKind::proximity ? proximity : similarity;
    auto it = m.find(center);
    if (it == m.end()) throw DataError("no " + to_string(kind) + " graph for station " + center + " in " + month.to_string());
    return it->second;
  }
  bool operator==(const GraphSet& o) const {
    return month == o.month && sigma_d == o.sigma_d && sigma_b == o.sigma_b && proximity == o.proximity &&
           similarity == o.similarity;
  }
};

namespace detail {

/// A usable kernel width from a spread estimate. A zero spread (two
/// stations, or identical distances) falls back to the mean distance, then 1.
inline double usable_sigma(const PairwiseSpread& spread, GraphKind kind, std::vector<std::string>& warnings) {
  const double sd = spread.stddev();
  if (sd > 0) return sd;
  warnings.push_back(to_string(kind) + " distance spread is zero; using fallback sigma");
  return spread.mean() > 0 ? spread.mean() : 1.0;
}

}  // namespace detail

/// Sigmas pooled over several months' active sets, for SigmaScope::global.
inline std::pair<double, double> global_sigmas(std::span<const std::vector<GraphNode>> months) {
  PairwiseSpread d, b;
  for (const auto& nodes : months) {
    d.add_all_pairs(nodes, GraphKind::proximity);
    b.add_all_pairs(nodes, GraphKind::similarity);
  }
  std::vector<std::string> ignored;
  return {detail::usable_sigma(d, GraphKind::proximity, ignored), detail::usable_sigma(b, GraphKind::similarity, ignored)};
}

/// Builds both localized graphs for every active station. Under
/// SigmaScope::global the sigmas must be supplied in the config.
inline GraphSet build_localized_graphs(std::span<const GraphNode> stations, const GraphBuilderConfig& config,
                                       YearMonth month) {
  config.validate();
  GraphSet out;
  out.month = month;
  std::vector<const GraphNode*> nodes;
  for (const auto& s : stations) nodes.push_back(&s);
  std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < nodes.size(); ++i)
    if (nodes[i]->id == nodes[i - 1]->id) throw DataError("duplicate station id " + nodes[i]->id + " in graph input");
  const std::size_t n = nodes.size();
  if (n > 1 && nodes[0]->features.size() != nodes[1]->features.size())
    throw std::invalid_argument("feature dimension mismatch among graph nodes");

  std::vector<double> dist_p(n * n, 0.0), dist_b(n * n, 0.0);
  PairwiseSpread spread_p, spread_b;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dp = node_distance(*nodes[i], *nodes[j], GraphKind::proximity);
      const double db = node_distance(*nodes[i], *nodes[j], GraphKind::similarity);
      dist_p[i * n + j] = dist_p[j * n + i] = dp;
      dist_b[i * n + j] = dist_b[j * n + i] = db;
      spread_p.add(dp);
      spread_b.add(db);
    }

  if (config.sigma_scope == SigmaScope::global && (!config.sigma_d || !config.sigma_b))
    throw ConfigError("global sigma scope requires sigma_d and sigma_b");
  if (n < 2) {
    out.warnings.push_back("fewer than two active stations in " + month.to_string() + "; neighbor lists are empty");
    out.sigma_d = config.sigma_d.value_or(1.0);
    out.sigma_b = config.sigma_b.value_or(1.0);
  } else {
    out.sigma_d = config.sigma_d ? *config.sigma_d : detail::usable_sigma(spread_p, GraphKind::proximity, out.warnings);
    out.sigma_b = config.sigma_b ? *config.sigma_b : detail::usable_sigma(spread_b, GraphKind::similarity, out.warnings);
  }

  const std::size_t k = std::min(config.k, n ? n - 1 : 0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
      const auto& dist = kind == GraphKind::proximity ? dist_p : dist_b;
      const double sigma = kind == GraphKind::proximity ? out.sigma_d : out.sigma_b;
      order.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
      // Node order is id order, so index order is the id tiebreak.
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          const double da = dist[i * n + a], db = dist[i * n + b];
                          return da < db || (da == db && a < b);
                        });
      LocalizedGraph g{nodes[i]->id, kind, {}};
      for (std::size_t r = 0; r < k; ++r) {
        const std::size_t j = order[r];
        const double d = dist[i * n + j];
        g.neighbors.push_back({nodes[j]->id, d, kernel_weight(d, sigma)});
      }
      (kind == GraphKind::proximity ? out.proximity : out.similarity).emplace(nodes[i]->id, std::move(g));
    }
  }
  return out;
}

inline void write_graph_header(std::ostream& out) {
  csv::write_row(out, {"center_id", "kind", "rank", "neighbor_id", "distance", "kernel_weight", "month"});
}

inline void write_graphs(std::ostream& out, const GraphSet& graphs) {
  for (const auto* m : {&graphs.proximity, &graphs.similarity})
    for (const auto& [center, g] : *m)
      for (std::size_t r = 0; r < g.neighbors.size(); ++r) {
        const auto& nb = g.neighbors[r];
        csv::write_row(out, {center, to_string(g.kind), std::to_string(r + 1), nb.id, csv::format_double(nb.distance),
                             csv::format_double(nb.kernel_weight), graphs.month.to_string()});
      }
}

}  // namespace tripgen
