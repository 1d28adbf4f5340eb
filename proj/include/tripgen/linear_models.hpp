#pragma once

// Estimation for the linear variants (linreg, slx). Both estimators work on
// the same design: the model's linear input row with month dummies in
// reference coding plus an intercept column. Months that never occur get no
// column, and the first observed month is the reference, so the design has
// full column rank whenever the features do.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tripgen/common.hpp"
#include "tripgen/models.hpp"

namespace tripgen {

inline constexpr std::size_t kInterceptColumn = std::numeric_limits<std::size_t>::max();

struct LinearDesign {
  Eigen::MatrixXd X;                 // n x p, last column is the intercept
  Eigen::MatrixXd Y;                 // n x 2 (out, in)
  std::vector<std::size_t> source;   // design column -> W_lin row, kInterceptColumn for the intercept
  std::size_t full_width = 0;        // W_lin row count
};

struct LinearFit {
  Eigen::MatrixXd coef;  // p x 2, rows follow LinearDesign columns
  std::vector<std::string> warnings;
  bool jittered = false;
  std::size_t iterations = 0;
  double gradient_norm = 0;
};

/// Builds the estimation design for a linear model over `inputs`.
/// `targets` is n x 2 in whatever scale the caller trains on.
inline LinearDesign build_linear_design(const Model& model, const nn::Tensor& features, std::span<const ModelInput> inputs,
                                        const nn::Tensor& targets) {
  const auto& cfg = model.config();
  if (!cfg.linear()) throw ConfigError("linear design requested for non-linear variant " + to_string(cfg.variant));
  if (inputs.empty()) throw DataError("linear design: no samples");
  if (targets.rows() != inputs.size() || targets.cols() != 2)
    throw std::invalid_argument("linear design: targets must be n x 2");
  const std::size_t width = cfg.output_input_width();
  const std::size_t month_offset = width - 13;

  std::array<bool, 12> seen{};
  for (const auto& in : inputs) seen.at(static_cast<std::size_t>(in.month)) = true;
  bool reference_taken = false;
  LinearDesign d;
  d.full_width = width;
  for (std::size_t c = 0; c < width; ++c) {
    if (c >= month_offset && c < month_offset + 12) {
      if (!seen[c - month_offset]) continue;
      if (!reference_taken) {
        reference_taken = true;
        continue;
      }
    }
    d.source.push_back(c);
  }
  d.source.push_back(kInterceptColumn);

  d.X.resize(static_cast<Eigen::Index>(inputs.size()), static_cast<Eigen::Index>(d.source.size()));
  d.Y.resize(static_cast<Eigen::Index>(inputs.size()), 2);
  std::vector<double> row(width);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    model.linear_design_row(features, inputs[i], row);
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t c = 0; c < d.source.size(); ++c)
      d.X(r, static_cast<Eigen::Index>(c)) = d.source[c] == kInterceptColumn ? 1.0 : row[d.source[c]];
    d.Y(r, 0) = targets(i, 0);
    d.Y(r, 1) = targets(i, 1);
  }
  return d;
}

namespace detail {

/// Column scale factors 1 / ||col|| (1 for zero columns).
inline Eigen::VectorXd column_equilibration(const Eigen::MatrixXd& X) {
  Eigen::VectorXd s(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double n = X.col(j).norm();
    s(j) = n > 0 ? 1.0 / n : 1.0;
  }
  return s;
}

}  // namespace detail

/// Least squares through the normal equations of the column-equilibrated
/// design. A numerically singular Gram matrix gets a 1e-8 ridge and a
/// warning.
inline LinearFit fit_ols(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() != Y.rows()) throw std::invalid_argument("fit_ols: row count mismatch");
  if (X.rows() == 0) throw DataError("fit_ols: no samples");
  const Eigen::VectorXd s = detail::column_equilibration(X);
  const Eigen::MatrixXd Xs = X * s.asDiagonal();
  Eigen::MatrixXd G = Xs.transpose() * Xs;
  const Eigen::MatrixXd c = Xs.transpose() * Y;

  LinearFit fit;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  const auto D = ldlt.vectorD();
  const double dmax = D.cwiseAbs().maxCoeff();
  const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() || D.minCoeff() <= 1e-12 * dmax ||
                        X.rows() < X.cols();
  if (singular) {
    G.diagonal().array() += 1e-8;
    ldlt.compute(G);
    fit.jittered = true;
    fit.warnings.push_back("fit_ols: design is rank-deficient; solved with ridge jitter 1e-8");
  }
  const Eigen::MatrixXd theta = ldlt.solve(c);
  fit.coef = s.asDiagonal() * theta;
  return fit;
}

struct GradientDescentOptions {
  double tolerance = 1e-8;       // on the gradient norm, equilibrated coordinates
  std::size_t max_iterations = 5'000'000;
  std::size_t divergence_window = 50;
};

/// Full-batch gradient descent on the summed squared error, in
/// equilibrated coordinates, from a zero start. Steps are 1/L with L the
/// largest eigenvalue of the loss Hessian, accelerated with Nesterov
/// momentum and restarted whenever the loss goes up.
inline LinearFit fit_gd(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const GradientDescentOptions& opt = {}) {
  if (X.rows() != Y.rows()) throw std::invalid_argument("fit_gd: row count mismatch");
  if (X.rows() == 0) throw DataError("fit_gd: no samples");
  const Eigen::VectorXd s = detail::column_equilibration(X);
  const Eigen::MatrixXd Xs = X * s.asDiagonal();
  const Eigen::MatrixXd G = Xs.transpose() * Xs;
  const Eigen::MatrixXd c = Xs.transpose() * Y;
  const double yy = Y.squaredNorm();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
  const double L = 2.0 * eig.eigenvalues().maxCoeff();
  if (!(L > 0)) throw DataError("fit_gd: design has no variation");
  const double step = 1.0 / L;

  // SSE(theta) = yy - 2 tr(theta' c) + tr(theta' G theta)
  auto loss = [&](const Eigen::MatrixXd& th) {
    return yy - 2.0 * (th.array() * c.array()).sum() + (th.array() * (G * th).array()).sum();
  };

  const Eigen::Index p = X.cols();
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(p, 2), prev = theta, look = theta;
  double t = 1.0, last = loss(theta);
  std::size_t rising = 0;
  LinearFit fit;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    const Eigen::MatrixXd grad_look = 2.0 * (G * look - c);
    prev = theta;
    theta = look - step * grad_look;
    const double cur = loss(theta);
    if (cur > last) {
      if (++rising >= opt.divergence_window)
        throw DataError("fit_gd: loss increased for " + std::to_string(rising) + " consecutive steps (iteration " +
                        std::to_string(it) + ", loss " + std::to_string(cur) + ", step " + std::to_string(step) + ")");
      t = 1.0;
      look = theta;
    } else {
      rising = 0;
      const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
      look = theta + ((t - 1.0) / t_next) * (theta - prev);
      t = t_next;
    }
    last = cur;
    const double gn = (2.0 * (G * theta - c)).norm();
    fit.iterations = it + 1;
    fit.gradient_norm = gn;
    if (!std::isfinite(gn)) throw DataError("fit_gd: non-finite gradient at iteration " + std::to_string(it));
    if (gn < opt.tolerance) break;
  }
  if (fit.gradient_norm >= opt.tolerance)
    fit.warnings.push_back("fit_gd: stopped at the iteration limit with gradient norm " +
                           std::to_string(fit.gradient_norm));
  fit.coef = s.asDiagonal() * theta;
  return fit;
}

/// Copies fitted coefficients into a linear model's W_lin / b_lin. Dropped
/// month columns get 0.
inline void load_linear_fit(Model& model, const LinearDesign& design, const LinearFit& fit) {
  auto& W = model.params().at("W_lin").value;
  auto& b = model.params().at("b_lin").value;
  if (W.rows() != design.full_width) throw std::invalid_argument("load_linear_fit: model width differs from design");
  W.fill(0.0);
  for (std::size_t c = 0; c < design.source.size(); ++c) {
    const auto r = static_cast<Eigen::Index>(c);
    if (design.source[c] == kInterceptColumn) {
      b[0] = fit.coef(r, 0);
      b[1] = fit.coef(r, 1);
    } else {
      W(design.source[c], 0) = fit.coef(r, 0);
      W(design.source[c], 1) = fit.coef(r, 1);
    }
  }
}

enum class LinearEstimator { ols, gradient_descent };

inline std::string to_string(LinearEstimator e) { return e == LinearEstimator::ols ? "ols" : "gd"; }

struct LinearTrainResult {
  Model model;
  LinearFit fit;
};

/// Fits a linreg or slx model on normalized features and targets.
inline LinearTrainResult fit_linear_model(const ModelConfig& config, const nn::Tensor& features,
                                          std::span<const ModelInput> inputs, const nn::Tensor& targets,
                                          LinearEstimator estimator, const GradientDescentOptions& gd = {}) {
  Model model(config, 0);
  const auto design = build_linear_design(model, features, inputs, targets);
  auto fit = estimator == LinearEstimator::ols ? fit_ols(design.X, design.Y) : fit_gd(design.X, design.Y, gd);
  load_linear_fit(model, design, fit);
  return {std::move(model), std::move(fit)};
}

inline LinearTrainResult slx_fit_ols(const nn::Tensor& features, std::span<const ModelInput> inputs,
                                     const nn::Tensor& targets) {
  ModelConfig cfg;
  cfg.variant = Variant::slx;
  cfg.n_features = features.cols();
  return fit_linear_model(cfg, features, inputs, targets, LinearEstimator::ols);
}

inline LinearTrainResult slx_fit_gd(const nn::Tensor& features, std::span<const ModelInput> inputs,
                                    const nn::Tensor& targets, const GradientDescentOptions& gd = {}) {
  ModelConfig cfg;
  cfg.variant = Variant::slx;
  cfg.n_features = features.cols();
  return fit_linear_model(cfg, features, inputs, targets, LinearEstimator::gradient_descent, gd);
}

}  // namespace tripgen
