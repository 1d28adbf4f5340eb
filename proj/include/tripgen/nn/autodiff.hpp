#pragma once

// Reverse-mode differentiation over a tape of 2-D tensor operations. The
// primitive set covers what the demand models need: affine maps, ReLU /
// LeakyReLU / sigmoid, row gathers (embedding lookup), column concatenation,
// per-segment softmax and weighted sums (attention over neighbor lists),
// and a sum-of-squared-errors loss.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tripgen/nn/tensor.hpp"

namespace tripgen::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
};

/// Ordered, named parameters of one model.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value) {
    if (find(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    params_.emplace_back(std::move(name), std::move(value));
    return params_.back();
  }

  [[nodiscard]] Parameter* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  [[nodiscard]] const Parameter* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }
  Parameter& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter '" + name + "'");
  }
  [[nodiscard]] const Parameter& at(const std::string& name) const { return const_cast<ParameterSet*>(this)->at(name); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Copies values from another set with identical names and shapes.
  void assign_values(const ParameterSet& other) {
    if (other.params_.size() != params_.size()) throw std::invalid_argument("parameter sets differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != other.params_[i].name || !params_[i].value.same_shape(other.params_[i].value))
        throw std::invalid_argument("parameter sets differ at '" + params_[i].name + "'");
      params_[i].value = other.params_[i].value;
    }
  }

  [[nodiscard]] std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

 private:
  std::vector<Parameter> params_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  [[nodiscard]] const Tensor& value() const;
};

class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    std::string label;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&)> backward;
  };

  Tape() { nodes_.reserve(64); }

  Var constant(Tensor value, std::string label = {}) {
    return push(std::move(value), label.empty() ? "const#" + std::to_string(nodes_.size()) : std::move(label), false);
  }

  Var parameter(Parameter& p) {
    Var v = push(p.value, p.name, true);
    nodes_[v.id].param = &p;
    return v;
  }

  /// Internal: appends an operation result. The backward closure reads
  /// this node's grad and accumulates into its inputs' grads.
  Var push(Tensor value, std::string label, bool requires_grad, std::function<void(Tape&)> backward = {}) {
    Node n;
    n.value = std::move(value);
    n.label = std::move(label);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  [[nodiscard]] const Node& node(std::size_t id) const { return nodes_[id]; }

  /// Gradient buffer of a node, allocated on first use.
  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Back-propagates from a 1x1 node and adds the results into each bound
  /// Parameter::grad.
  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: variable from another tape");
    if (nodes_[loss.id].value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    grad(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this);
      if (n.param) {
        auto& g = n.param->grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->node(id).value; }

namespace detail {

inline bool needs(const Var& v) { return v.tape->node(v.id).requires_grad; }
inline const std::string& label(const Var& v) { return v.tape->node(v.id).label; }

[[noreturn]] inline void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

}  // namespace detail

/// A (n x k) times B (k x m).
inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor &A = a.value(), &B = b.value();
  if (A.cols() != B.rows())
    detail::shape_error("matmul(" + detail::label(a) + ", " + detail::label(b) + ")",
                        "inner dimensions differ: " + A.shape_string() + " vs " + B.shape_string());
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * m;
    const double* ai = A.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * bp[j];
    }
  }
  const bool rg = detail::needs(a) || detail::needs(b);
  Var r = t.push(std::move(out), "matmul#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [a, b, r, n, k, m](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      if (detail::needs(a)) {
        Tensor& GA = tp.grad(a.id);
        const Tensor& B = tp.node(b.id).value;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0;
            for (std::size_t j = 0; j < m; ++j) s += G(i, j) * B(p, j);
            GA(i, p) += s;
          }
      }
      if (detail::needs(b)) {
        Tensor& GB = tp.grad(b.id);
        const Tensor& A = tp.node(a.id).value;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) GB(p, j) += av * G(i, j);
          }
      }
    };
  }
  return r;
}

/// Adds a 1 x m bias row to every row of A.
inline Var add_bias(Var a, Var bias) {
  Tape& t = *a.tape;
  const Tensor &A = a.value(), &b = bias.value();
  if (b.rows() != 1 || b.cols() != A.cols())
    detail::shape_error("add_bias(" + detail::label(a) + ", " + detail::label(bias) + ")",
                        "bias " + b.shape_string() + " does not fit " + A.shape_string());
  Tensor out = A;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b[j];
  const bool rg = detail::needs(a) || detail::needs(bias);
  Var r = t.push(std::move(out), "add_bias#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [a, bias, r](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      if (detail::needs(a)) {
        Tensor& GA = tp.grad(a.id);
        for (std::size_t k = 0; k < G.size(); ++k) GA[k] += G[k];
      }
      if (detail::needs(bias)) {
        Tensor& GB = tp.grad(bias.id);
        for (std::size_t i = 0; i < G.rows(); ++i)
          for (std::size_t j = 0; j < G.cols(); ++j) GB[j] += G(i, j);
      }
    };
  }
  return r;
}

/// x W + b: the affine map used throughout, with W stored (in x out).
inline Var affine(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

namespace detail {

template <class F, class DF>
Var elementwise(Var a, const char* name, F f, DF df) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  for (auto& v : out.values()) v = f(v);
  const bool rg = needs(a);
  Var r = t.push(std::move(out), std::string(name) + "#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [a, r, df](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      const Tensor& X = tp.node(a.id).value;
      const Tensor& Y = tp.node(r.id).value;
      Tensor& GA = tp.grad(a.id);
      for (std::size_t k = 0; k < G.size(); ++k) GA[k] += G[k] * df(X[k], Y[k]);
    };
  }
  return r;
}

}  // namespace detail

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// ReLU that propagates NaN, so bad inputs surface as a non-finite loss.
inline double relu_scalar(double x) { return x > 0 || std::isnan(x) ? x : 0.0; }

inline Var relu(Var a) {
  return detail::elementwise(
      a, "relu", [](double x) { return relu_scalar(x); }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope) {
  return detail::elementwise(
      a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

inline Var sigmoid(Var a) {
  return detail::elementwise(
      a, "sigmoid", [](double x) { return sigmoid_scalar(x); }, [](double, double y) { return y * (1.0 - y); });
}

/// Rows of A selected by index (repeats allowed). Embedding lookup is a
/// gather from the embedding parameter.
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  Tensor out(index.size(), A.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= A.rows())
      detail::shape_error("gather_rows(" + detail::label(a) + ")",
                          "row " + std::to_string(index[i]) + " out of range for " + A.shape_string());
    std::copy_n(A.data() + index[i] * A.cols(), A.cols(), out.data() + i * A.cols());
  }
  const bool rg = detail::needs(a);
  Var r = t.push(std::move(out), "gather_rows#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [a, r, index = std::move(index)](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      Tensor& GA = tp.grad(a.id);
      const std::size_t c = G.cols();
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) GA(index[i], j) += G(i, j);
    };
  }
  return r;
}

/// Horizontal concatenation; all parts need the same row count.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t n = parts.front().value().rows();
  std::size_t width = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != n)
      detail::shape_error("concat_cols(" + detail::label(p) + ")",
                          "row count " + std::to_string(p.value().rows()) + " != " + std::to_string(n));
    width += p.value().cols();
  }
  Tensor out(n, width);
  std::size_t off = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(P.data() + i * P.cols(), P.cols(), out.data() + i * width + off);
    off += P.cols();
    rg = rg || detail::needs(p);
  }
  Var r = t.push(std::move(out), "concat_cols#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [parts, r, n, width](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t c = tp.node(p.id).value.cols();
        if (detail::needs(p)) {
          Tensor& GP = tp.grad(p.id);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) GP(i, j) += G[i * width + off + j];
        }
        off += c;
      }
    };
  }
  return r;
}

/// Numerically stable softmax. The normalizer is an order-independent sum,
/// so permuting the input permutes the output bit for bit.
inline std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> e(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) e[i] = std::exp(scores[i] - mx);
  std::vector<double> scratch = e;
  const double z = order_independent_sum(scratch);
  for (auto& v : e) v /= z;
  return e;
}

/// Softmax over consecutive row segments of a P x 1 column. Segment s
/// spans rows [offsets[s], offsets[s+1]); empty segments are allowed.
inline Var segment_softmax(Var scores, std::vector<std::size_t> offsets) {
  Tape& t = *scores.tape;
  const Tensor& S = scores.value();
  if (S.cols() != 1 || offsets.empty() || offsets.back() != S.rows() || offsets.front() != 0)
    detail::shape_error("segment_softmax(" + detail::label(scores) + ")", "segments do not cover " + S.shape_string());
  Tensor out(S.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t lo = offsets[s], hi = offsets[s + 1];
    if (lo == hi) continue;
    const auto w = softmax(std::span<const double>(S.data() + lo, hi - lo));
    std::copy(w.begin(), w.end(), out.data() + lo);
  }
  const bool rg = detail::needs(scores);
  Var r = t.push(std::move(out), "segment_softmax#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [scores, r, offsets = std::move(offsets)](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      const Tensor& Y = tp.node(r.id).value;
      Tensor& GS = tp.grad(scores.id);
      for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        double dot = 0;
        for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) dot += G[i] * Y[i];
        for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) GS[i] += Y[i] * (G[i] - dot);
      }
    };
  }
  return r;
}

/// Per segment s: sum over its rows i of weights[i] * values[i, :].
/// Produces one row per segment; an empty segment yields a zero row.
inline Var segment_weighted_sum(Var weights, Var values, std::vector<std::size_t> offsets) {
  Tape& t = *weights.tape;
  const Tensor &W = weights.value(), &H = values.value();
  if (W.cols() != 1 || W.rows() != H.rows() || offsets.empty() || offsets.back() != H.rows() || offsets.front() != 0)
    detail::shape_error("segment_weighted_sum(" + detail::label(weights) + ", " + detail::label(values) + ")",
                        "weights " + W.shape_string() + " / values " + H.shape_string() + " / segments mismatch");
  const std::size_t segs = offsets.size() - 1, d = H.cols();
  Tensor out(segs, d);
  std::vector<double> terms;
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t lo = offsets[s], hi = offsets[s + 1];
    for (std::size_t j = 0; j < d; ++j) {
      terms.clear();
      for (std::size_t i = lo; i < hi; ++i) terms.push_back(W[i] * H(i, j));
      out(s, j) = order_independent_sum(terms);
    }
  }
  const bool rg = detail::needs(weights) || detail::needs(values);
  Var r = t.push(std::move(out), "segment_weighted_sum#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [weights, values, r, offsets = std::move(offsets), d](Tape& tp) {
      const Tensor& G = tp.node(r.id).grad;
      const Tensor& W = tp.node(weights.id).value;
      const Tensor& H = tp.node(values.id).value;
      const bool gw = detail::needs(weights), gh = detail::needs(values);
      Tensor* GW = gw ? &tp.grad(weights.id) : nullptr;
      Tensor* GH = gh ? &tp.grad(values.id) : nullptr;
      for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
        for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
          if (gw) {
            double acc = 0;
            for (std::size_t j = 0; j < d; ++j) acc += G(s, j) * H(i, j);
            (*GW)[i] += acc;
          }
          if (gh)
            for (std::size_t j = 0; j < d; ++j) (*GH)(i, j) += G(s, j) * W[i];
        }
    };
  }
  return r;
}

/// Sum over all entries of (pred - target)^2, as a 1x1 node.
inline Var sum_squared_error(Var pred, const Tensor& target) {
  Tape& t = *pred.tape;
  const Tensor& P = pred.value();
  if (!P.same_shape(target))
    detail::shape_error("sum_squared_error(" + detail::label(pred) + ")",
                        "prediction " + P.shape_string() + " vs target " + target.shape_string());
  double s = 0;
  for (std::size_t k = 0; k < P.size(); ++k) {
    const double e = P[k] - target[k];
    s += e * e;
  }
  const bool rg = detail::needs(pred);
  Var r = t.push(Tensor(1, 1, s), "sse#" + std::to_string(t.size()), rg);
  if (rg) {
    t.node(r.id).backward = [pred, r, target](Tape& tp) {
      const double g = tp.node(r.id).grad[0];
      const Tensor& P = tp.node(pred.id).value;
      Tensor& GP = tp.grad(pred.id);
      for (std::size_t k = 0; k < P.size(); ++k) GP[k] += 2.0 * g * (P[k] - target[k]);
    };
  }
  return r;
}

}  // namespace tripgen::nn
