#pragma once

// Spatial-MGAT and its comparison family.
//
//   mgat    two graph-attention branches (proximity + similarity)
//   mgcn    same branches with fixed, normalized kernel weights
//   pgat    proximity branch only
//   bgat    similarity branch only
//   fnn     prediction stack on the station's own features
//   linreg  linear map of [x; one-hot month; age]
//   slx     linear map of [x; kernel-weighted neighbor mean of x; one-hot month; age]
//
// All nonlinear variants share the prediction stack
//   z1 = ReLU([x; s_p; s_b; t] W_o1 + b_o1)
//   z2 = sigmoid(z1 W_o2 + b_o2)
//   y  = z2 W_o3 + b_o3
// where t = [month embedding row; normalized age]. Matrices are stored
// (in x out) and applied to row vectors.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripgen/common.hpp"
#include "tripgen/model_input.hpp"
#include "tripgen/nn/autodiff.hpp"
#include "tripgen/spatial_graphs.hpp"

namespace tripgen {

enum class Variant { mgat, mgcn, pgat, bgat, fnn, linreg, slx };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::mgat: return "mgat";
    case Variant::mgcn: return "mgcn";
    case Variant::pgat: return "pgat";
    case Variant::bgat: return "bgat";
    case Variant::fnn: return "fnn";
    case Variant::linreg: return "linreg";
    case Variant::slx: return "slx";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::mgat, Variant::mgcn, Variant::pgat, Variant::bgat, Variant::fnn, Variant::linreg, Variant::slx})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown model variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::mgat;
  std::size_t n_features = 43;
  std::size_t k = 5;
  std::size_t d_h = 8;
  std::size_t d_z = 16;
  std::size_t d_m = 12;
  std::size_t d_o1 = 32;
  std::size_t d_o2 = 16;
  bool share_graph_encoders = false;
  double leaky_slope = 0.2;

  [[nodiscard]] bool linear() const { return variant == Variant::linreg || variant == Variant::slx; }
  [[nodiscard]] bool uses_proximity() const {
    return variant == Variant::mgat || variant == Variant::mgcn || variant == Variant::pgat;
  }
  [[nodiscard]] bool uses_similarity() const {
    return variant == Variant::mgat || variant == Variant::mgcn || variant == Variant::bgat;
  }
  [[nodiscard]] bool attention() const {
    return variant == Variant::mgat || variant == Variant::pgat || variant == Variant::bgat;
  }
  [[nodiscard]] std::size_t graph_count() const { return (uses_proximity() ? 1 : 0) + (uses_similarity() ? 1 : 0); }

  /// Input width of the first prediction layer (or of the linear map).
  [[nodiscard]] std::size_t output_input_width() const {
    if (variant == Variant::linreg) return n_features + 12 + 1;
    if (variant == Variant::slx) return 2 * n_features + 12 + 1;
    return n_features + graph_count() * d_h + d_m + 1;
  }

  void validate() const {
    for (auto d : {n_features, k, d_h, d_z, d_m, d_o1, d_o2})
      if (d == 0) throw ConfigError("model dimensions must be positive");
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"variant", to_string(variant)}, {"n_features", n_features}, {"k", k},       {"d_h", d_h},
            {"d_z", d_z},                    {"d_m", d_m},               {"d_o1", d_o1}, {"d_o2", d_o2},
            {"share_graph_encoders", share_graph_encoders},              {"leaky_slope", leaky_slope}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    c.n_features = j.value("n_features", c.n_features);
    c.k = j.value("k", c.k);
    c.d_h = j.value("d_h", c.d_h);
    c.d_z = j.value("d_z", c.d_z);
    c.d_m = j.value("d_m", c.d_m);
    c.d_o1 = j.value("d_o1", c.d_o1);
    c.d_o2 = j.value("d_o2", c.d_o2);
    c.share_graph_encoders = j.value("share_graph_encoders", c.share_graph_encoders);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
  }
};

/// Role of each parameter name; every name the models create appears here.
inline std::string parameter_symbol(const std::string& name) {
  const auto base = name.substr(0, name.find('.'));
  if (base == "W_h") return "neighbor encoder weight W_h";
  if (base == "b_h") return "neighbor encoder bias b_h";
  if (base == "W_s1") return "attention hidden weight W_{s,1}";
  if (base == "b_s1") return "attention hidden bias b_{s,1}";
  if (base == "W_s2") return "attention score weight W_{s,2}";
  if (base == "b_s2") return "attention score bias b_{s,2}";
  if (base == "W_m") return "month embedding W_m";
  if (base == "W_o1") return "prediction layer 1 weight W_{o,1}";
  if (base == "b_o1") return "prediction layer 1 bias b_{o,1}";
  if (base == "W_o2") return "prediction layer 2 weight W_{o,2}";
  if (base == "b_o2") return "prediction layer 2 bias b_{o,2}";
  if (base == "W_o3") return "prediction layer 3 weight W_{o,3}";
  if (base == "b_o3") return "prediction layer 3 bias b_{o,3}";
  if (base == "W_lin") return "linear regression coefficients";
  if (base == "b_lin") return "linear regression intercept";
  return {};
}

// ---------------------------------------------------------------------------
// Tape-free building blocks (inference, attention export, explanation)

namespace ops {

/// True when a feature row is far outside the range the training scaler
/// produces, which usually means raw features were passed in.
inline bool looks_unnormalized(std::span<const double> x) {
  return std::any_of(x.begin(), x.end(), [](double v) { return v < -1.0 || v > 2.0; });
}

/// h = x W + b for each row of xs.
inline std::vector<std::vector<double>> encode_neighbors(std::span<const std::span<const double>> xs, const nn::Tensor& W,
                                                         const nn::Tensor& b,
                                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<std::vector<double>> out;
  out.reserve(xs.size());
  bool warned = false;
  for (auto x : xs) {
    if (x.size() != W.rows()) throw std::invalid_argument("encode_neighbors: feature width mismatch");
    if (warnings && !warned && looks_unnormalized(x)) {
      warnings->push_back("encode_neighbors: input values outside [-1, 2]; features may be unnormalized");
      warned = true;
    }
    std::vector<double> h(b.values().begin(), b.values().end());
    for (std::size_t p = 0; p < W.rows(); ++p) {
      const double xv = x[p];
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < W.cols(); ++j) h[j] += xv * W(p, j);
    }
    out.push_back(std::move(h));
  }
  return out;
}

struct AttentionScores {
  std::vector<double> scores;   // s_ij
  std::vector<double> weights;  // softmax over the center's neighbors
};

/// z = ReLU([h_i; h_j] W_s1 + b_s1), s = LeakyReLU(z W_s2 + b_s2), weights =
/// softmax(s). Empty neighbor list gives an empty result.
inline AttentionScores attention_weights(std::span<const double> h_center, std::span<const std::vector<double>> h_neighbors,
                                         const nn::Tensor& W_s1, const nn::Tensor& b_s1, const nn::Tensor& W_s2,
                                         const nn::Tensor& b_s2, double leaky_slope) {
  AttentionScores out;
  if (h_neighbors.empty()) return out;
  const std::size_t dh = h_center.size(), dz = W_s1.cols();
  if (W_s1.rows() != 2 * dh) throw std::invalid_argument("attention_weights: W_s1 does not match latent width");
  std::vector<double> z(dz);
  for (const auto& hj : h_neighbors) {
    for (std::size_t c = 0; c < dz; ++c) z[c] = b_s1[c];
    for (std::size_t p = 0; p < dh; ++p) {
      const double a = h_center[p], b = hj[p];
      for (std::size_t c = 0; c < dz; ++c) {
        z[c] += a * W_s1(p, c);
      }
      for (std::size_t c = 0; c < dz; ++c) z[c] += b * W_s1(dh + p, c);
    }
    double s = b_s2[0];
    for (std::size_t c = 0; c < dz; ++c) s += nn::relu_scalar(z[c]) * W_s2(c, 0);
    out.scores.push_back(s > 0 ? s : leaky_slope * s);
  }
  out.weights = nn::softmax(out.scores);
  return out;
}

/// sum_j weights[j] * h_j with an order-independent accumulation; the
/// center itself is not part of h_neighbors.
inline std::vector<double> aggregate_interaction(std::span<const double> weights,
                                                 std::span<const std::vector<double>> h_neighbors, std::size_t width) {
  if (weights.size() != h_neighbors.size()) throw std::invalid_argument("aggregate_interaction: length mismatch");
  std::vector<double> s(width, 0.0), terms(weights.size());
  for (std::size_t d = 0; d < width; ++d) {
    for (std::size_t j = 0; j < weights.size(); ++j) terms[j] = weights[j] * h_neighbors[j][d];
    s[d] = nn::order_independent_sum(terms);
  }
  return s;
}

/// Kernel weights rescaled to sum to one.
inline std::vector<double> normalize_weights(std::span<const double> kernel_weights) {
  std::vector<double> w(kernel_weights.begin(), kernel_weights.end()), scratch = w;
  const double total = nn::order_independent_sum(scratch);
  if (!w.empty() && !(total > 0)) throw std::invalid_argument("kernel weights sum to zero");
  for (auto& v : w) v /= total;
  return w;
}

/// Fixed-weight aggregation: kernel weights normalized over the neighbor set.
inline std::vector<double> mgcn_aggregate(std::span<const double> kernel_weights,
                                          std::span<const std::vector<double>> h_neighbors, std::size_t width) {
  return aggregate_interaction(normalize_weights(kernel_weights), h_neighbors, width);
}

/// The three-layer prediction stack on an already-concatenated input row.
inline std::array<double, 2> prediction_stack(std::span<const double> in, const nn::Tensor& W1, const nn::Tensor& b1,
                                              const nn::Tensor& W2, const nn::Tensor& b2, const nn::Tensor& W3,
                                              const nn::Tensor& b3) {
  if (in.size() != W1.rows()) throw std::invalid_argument("prediction input width mismatch");
  std::vector<double> z1(b1.values()), z2(b2.values());
  for (std::size_t p = 0; p < in.size(); ++p) {
    const double v = in[p];
    if (v == 0.0) continue;
    for (std::size_t j = 0; j < z1.size(); ++j) z1[j] += v * W1(p, j);
  }
  for (auto& v : z1) v = nn::relu_scalar(v);
  for (std::size_t p = 0; p < z1.size(); ++p) {
    const double v = z1[p];
    if (v == 0.0) continue;
    for (std::size_t j = 0; j < z2.size(); ++j) z2[j] += v * W2(p, j);
  }
  for (auto& v : z2) v = nn::sigmoid_scalar(v);
  std::array<double, 2> y{b3[0], b3[1]};
  for (std::size_t p = 0; p < z2.size(); ++p) {
    y[0] += z2[p] * W3(p, 0);
    y[1] += z2[p] * W3(p, 1);
  }
  return y;
}

/// Sum over samples and both flow components of squared error.
inline double loss(std::span<const std::array<double, 2>> predictions, std::span<const std::array<double, 2>> targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("loss: count mismatch");
  double s = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    for (int c = 0; c < 2; ++c) {
      const double e = predictions[i][c] - targets[i][c];
      s += e * e;
    }
  return s;
}

}  // namespace ops

/// Per-neighbor attention of one center in one graph.
struct GraphAttention {
  GraphKind kind = GraphKind::proximity;
  std::vector<std::size_t> rows;
  std::vector<double> scores;
  std::vector<double> weights;
};

// ---------------------------------------------------------------------------

class Model {
 public:
  /// Fresh model with seeded initialization: weights and biases uniform in
  /// +-sqrt(1/fan_in), month embeddings uniform in +-0.05.
  Model(ModelConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    auto dense = [&](const std::string& w, const std::string& b, std::size_t in, std::size_t out) {
      const double a = std::sqrt(1.0 / static_cast<double>(in));
      nn::Tensor W(in, out), B(1, out);
      for (auto& v : W.values()) v = rng.uniform(-a, a);
      for (auto& v : B.values()) v = rng.uniform(-a, a);
      params_.add(w, std::move(W));
      params_.add(b, std::move(B));
    };
    if (config_.linear()) {
      dense("W_lin", "b_lin", config_.output_input_width(), 2);
      return;
    }
    for (const auto& suffix : branch_suffixes()) {
      dense("W_h" + suffix, "b_h" + suffix, config_.n_features, config_.d_h);
      if (config_.attention()) {
        dense("W_s1" + suffix, "b_s1" + suffix, 2 * config_.d_h, config_.d_z);
        dense("W_s2" + suffix, "b_s2" + suffix, config_.d_z, 1);
      }
    }
    nn::Tensor emb(12, config_.d_m);
    for (auto& v : emb.values()) v = rng.uniform(-0.05, 0.05);
    params_.add("W_m", std::move(emb));
    dense("W_o1", "b_o1", config_.output_input_width(), config_.d_o1);
    dense("W_o2", "b_o2", config_.d_o1, config_.d_o2);
    dense("W_o3", "b_o3", config_.d_o2, 2);
  }

  /// Restores a model from stored parameters; names and shapes must match
  /// what the configuration creates.
  Model(ModelConfig config, const nn::ParameterSet& stored) : Model(config, 0) { params_.assign_values(stored); }

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  [[nodiscard]] const nn::ParameterSet& params() const { return params_; }

  /// Parameter-name suffix per graph branch in use.
  [[nodiscard]] std::vector<std::string> branch_suffixes() const {
    if (config_.share_graph_encoders && config_.graph_count() == 2) return {".shared"};
    std::vector<std::string> s;
    if (config_.uses_proximity()) s.push_back(".p");
    if (config_.uses_similarity()) s.push_back(".b");
    return s;
  }
  [[nodiscard]] std::string suffix_for(GraphKind kind) const {
    if (config_.share_graph_encoders && config_.graph_count() == 2) return ".shared";
    return kind == GraphKind::proximity ? ".p" : ".b";
  }

  // ------------------------------------------------------------------------
  // Differentiable batch forward

  /// Normalized predictions (B x 2) for a batch, recorded on the tape.
  nn::Var forward(nn::Tape& tape, const nn::Tensor& features, std::span<const ModelInput> batch) {
    const std::size_t B = batch.size(), F = config_.n_features;
    if (features.cols() != F) throw std::invalid_argument("feature table width != n_features");
    if (config_.linear()) {
      nn::Tensor design(B, config_.output_input_width());
      for (std::size_t i = 0; i < B; ++i) linear_design_row(features, batch[i], design.row_span(i));
      auto in = tape.constant(std::move(design), "linear_design");
      return nn::affine(in, tape.parameter(params_.at("W_lin")), tape.parameter(params_.at("b_lin")));
    }

    nn::Tensor centers(B, F);
    for (std::size_t i = 0; i < B; ++i) std::copy_n(features.row_span(batch[i].row).data(), F, centers.row_span(i).data());
    std::vector<nn::Var> parts{tape.constant(std::move(centers), "x_center")};

    for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
      if ((kind == GraphKind::proximity && !config_.uses_proximity()) ||
          (kind == GraphKind::similarity && !config_.uses_similarity()))
        continue;
      parts.push_back(graph_branch(tape, features, batch, kind));
    }

    std::vector<std::size_t> months(B);
    nn::Tensor ages(B, 1);
    for (std::size_t i = 0; i < B; ++i) {
      if (batch[i].month < 0 || batch[i].month > 11) throw std::invalid_argument("month index out of range");
      months[i] = static_cast<std::size_t>(batch[i].month);
      ages(i, 0) = batch[i].age;
    }
    parts.push_back(nn::gather_rows(tape.parameter(params_.at("W_m")), std::move(months)));
    parts.push_back(tape.constant(std::move(ages), "age"));

    auto in = nn::concat_cols(parts);
    auto z1 = nn::relu(nn::affine(in, tape.parameter(params_.at("W_o1")), tape.parameter(params_.at("b_o1"))));
    auto z2 = nn::sigmoid(nn::affine(z1, tape.parameter(params_.at("W_o2")), tape.parameter(params_.at("b_o2"))));
    return nn::affine(z2, tape.parameter(params_.at("W_o3")), tape.parameter(params_.at("b_o3")));
  }

  // ------------------------------------------------------------------------
  // Inference

  /// Normalized (out, in) prediction for one input.
  [[nodiscard]] std::array<double, 2> predict(const nn::Tensor& features, const ModelInput& input) const {
    return predict_with_center(features, input, features.row_span(input.row), input.age, input.month);
  }

  /// Prediction with the center's own features, age and month replaced.
  /// Neighbor rows still come from the table (used by the explainer).
  [[nodiscard]] std::array<double, 2> predict_with_center(const nn::Tensor& features, const ModelInput& input,
                                                          std::span<const double> x, double age, int month) const {
    if (config_.linear()) {
      std::vector<double> design(config_.output_input_width());
      ModelInput copy = input;
      linear_design_row_from(features, copy, x, age, month, design);
      const auto& W = params_.at("W_lin").value;
      const auto& b = params_.at("b_lin").value;
      std::array<double, 2> y{b[0], b[1]};
      for (std::size_t p = 0; p < design.size(); ++p) {
        y[0] += design[p] * W(p, 0);
        y[1] += design[p] * W(p, 1);
      }
      return y;
    }
    std::vector<double> in(x.begin(), x.end());
    for (GraphKind kind : {GraphKind::proximity, GraphKind::similarity}) {
      if ((kind == GraphKind::proximity && !config_.uses_proximity()) ||
          (kind == GraphKind::similarity && !config_.uses_similarity()))
        continue;
      const auto s = interaction_vector(features, input, kind, x);
      in.insert(in.end(), s.begin(), s.end());
    }
    if (month < 0 || month > 11) throw std::invalid_argument("month index out of range");
    const auto& emb = params_.at("W_m").value;
    const auto row = emb.row_span(static_cast<std::size_t>(month));
    in.insert(in.end(), row.begin(), row.end());
    in.push_back(age);
    return ops::prediction_stack(in, params_.at("W_o1").value, params_.at("b_o1").value, params_.at("W_o2").value,
                                 params_.at("b_o2").value, params_.at("W_o3").value, params_.at("b_o3").value);
  }

  /// Attention scores and weights of one graph; nullopt for variants
  /// without an attention branch for that graph.
  [[nodiscard]] std::optional<GraphAttention> attention(const nn::Tensor& features, const ModelInput& input,
                                                        GraphKind kind) const {
    if (!config_.attention() || !uses(kind)) return std::nullopt;
    const auto& g = kind == GraphKind::proximity ? input.proximity : input.similarity;
    GraphAttention out{kind, g.rows, {}, {}};
    const auto [hc, hn] = encode(features, g, kind, features.row_span(input.row));
    const auto sfx = suffix_for(kind);
    auto a = ops::attention_weights(hc, hn, params_.at("W_s1" + sfx).value, params_.at("b_s1" + sfx).value,
                                    params_.at("W_s2" + sfx).value, params_.at("b_s2" + sfx).value, config_.leaky_slope);
    out.scores = std::move(a.scores);
    out.weights = std::move(a.weights);
    return out;
  }

  [[nodiscard]] bool uses(GraphKind kind) const {
    return kind == GraphKind::proximity ? config_.uses_proximity() : config_.uses_similarity();
  }

  /// True when the center's feature `f` cannot influence the output: every
  /// weight row it feeds is exactly zero. Neighbor inputs are not considered.
  [[nodiscard]] bool ignores_feature(std::size_t f) const {
    if (config_.linear()) return row_is_zero(params_.at("W_lin").value, f);
    if (!row_is_zero(params_.at("W_o1").value, f)) return false;
    for (const auto& sfx : branch_suffixes())
      if (!row_is_zero(params_.at("W_h" + sfx).value, f)) return false;
    return true;
  }

  [[nodiscard]] bool ignores_age() const {
    const auto& W = config_.linear() ? params_.at("W_lin").value : params_.at("W_o1").value;
    return row_is_zero(W, W.rows() - 1);
  }

  /// Linear design row: [x; s_p (slx only); one-hot month; age].
  void linear_design_row(const nn::Tensor& features, const ModelInput& in, std::span<double> out) const {
    linear_design_row_from(features, in, features.row_span(in.row), in.age, in.month, out);
  }

 private:
  static bool row_is_zero(const nn::Tensor& W, std::size_t r) {
    for (std::size_t j = 0; j < W.cols(); ++j)
      if (W(r, j) != 0.0) return false;
    return true;
  }

  void linear_design_row_from(const nn::Tensor& features, const ModelInput& in, std::span<const double> x, double age,
                              int month, std::span<double> out) const {
    const std::size_t F = config_.n_features;
    if (out.size() != config_.output_input_width()) throw std::invalid_argument("design row width mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    std::copy_n(x.data(), F, out.data());
    std::size_t off = F;
    if (config_.variant == Variant::slx) {
      const auto lag = spatial_lag(features, in.proximity, F);
      std::copy(lag.begin(), lag.end(), out.data() + off);
      off += F;
    }
    if (month < 0 || month > 11) throw std::invalid_argument("month index out of range");
    out[off + static_cast<std::size_t>(month)] = 1.0;
    out[off + 12] = age;
  }

 public:
  /// Kernel-normalized mean of neighbor feature rows (zero without neighbors).
  static std::vector<double> spatial_lag(const nn::Tensor& features, const GraphInput& g, std::size_t width) {
    std::vector<double> lag(width, 0.0);
    if (g.rows.empty()) return lag;
    std::vector<std::vector<double>> xs;
    for (auto r : g.rows) {
      auto span = features.row_span(r);
      xs.emplace_back(span.begin(), span.end());
    }
    return ops::mgcn_aggregate(g.kernel_weights, xs, width);
  }

 private:
  std::pair<std::vector<double>, std::vector<std::vector<double>>> encode(const nn::Tensor& features, const GraphInput& g,
                                                                          GraphKind kind,
                                                                          std::span<const double> center_x) const {
    const auto sfx = suffix_for(kind);
    const auto& W = params_.at("W_h" + sfx).value;
    const auto& b = params_.at("b_h" + sfx).value;
    std::vector<std::span<const double>> xs{center_x};
    for (auto r : g.rows) xs.push_back(features.row_span(r));
    auto h = ops::encode_neighbors(xs, W, b);
    std::vector<double> hc = std::move(h.front());
    h.erase(h.begin());
    return {std::move(hc), std::move(h)};
  }

  std::vector<double> interaction_vector(const nn::Tensor& features, const ModelInput& input, GraphKind kind,
                                         std::span<const double> center_x) const {
    const auto& g = kind == GraphKind::proximity ? input.proximity : input.similarity;
    if (g.rows.empty()) return std::vector<double>(config_.d_h, 0.0);
    const auto [hc, hn] = encode(features, g, kind, center_x);
    if (!config_.attention()) return ops::mgcn_aggregate(g.kernel_weights, hn, config_.d_h);
    const auto sfx = suffix_for(kind);
    const auto a = ops::attention_weights(hc, hn, params_.at("W_s1" + sfx).value, params_.at("b_s1" + sfx).value,
                                          params_.at("W_s2" + sfx).value, params_.at("b_s2" + sfx).value,
                                          config_.leaky_slope);
    return ops::aggregate_interaction(a.weights, hn, config_.d_h);
  }

  nn::Var graph_branch(nn::Tape& tape, const nn::Tensor& features, std::span<const ModelInput> batch, GraphKind kind) {
    const std::size_t F = config_.n_features;
    std::size_t total = 0, pairs = 0;
    for (const auto& in : batch) {
      const auto& g = kind == GraphKind::proximity ? in.proximity : in.similarity;
      total += 1 + g.rows.size();
      pairs += g.rows.size();
    }
    nn::Tensor X(total, F);
    std::vector<std::size_t> center_idx, nbr_idx, offsets{0};
    nn::Tensor fixed(pairs, 1);
    center_idx.reserve(pairs);
    nbr_idx.reserve(pairs);
    std::size_t r = 0, pr = 0;
    for (const auto& in : batch) {
      const auto& g = kind == GraphKind::proximity ? in.proximity : in.similarity;
      const std::size_t c = r;
      std::copy_n(features.row_span(in.row).data(), F, X.row_span(r++).data());
      const auto w = config_.attention() ? std::vector<double>{} : ops::normalize_weights(g.kernel_weights);
      for (std::size_t j = 0; j < g.rows.size(); ++j) {
        std::copy_n(features.row_span(g.rows[j]).data(), F, X.row_span(r).data());
        center_idx.push_back(c);
        nbr_idx.push_back(r++);
        if (!config_.attention()) fixed(pr, 0) = w[j];
        ++pr;
      }
      offsets.push_back(pr);
    }
    const auto sfx = suffix_for(kind);
    auto xg = tape.constant(std::move(X), "x_" + to_string(kind));
    auto H = nn::affine(xg, tape.parameter(params_.at("W_h" + sfx)), tape.parameter(params_.at("b_h" + sfx)));
    auto Hn = nn::gather_rows(H, nbr_idx);
    nn::Var weights;
    if (config_.attention()) {
      auto Hc = nn::gather_rows(H, center_idx);
      auto pair = nn::concat_cols({Hc, Hn});
      auto Z = nn::relu(nn::affine(pair, tape.parameter(params_.at("W_s1" + sfx)), tape.parameter(params_.at("b_s1" + sfx))));
      auto S = nn::leaky_relu(
          nn::affine(Z, tape.parameter(params_.at("W_s2" + sfx)), tape.parameter(params_.at("b_s2" + sfx))),
          config_.leaky_slope);
      weights = nn::segment_softmax(S, offsets);
    } else {
      weights = tape.constant(std::move(fixed), "kernel_weights_" + to_string(kind));
    }
    return nn::segment_weighted_sum(weights, Hn, std::move(offsets));
  }

  ModelConfig config_;
  nn::ParameterSet params_;
};

}  // namespace tripgen
