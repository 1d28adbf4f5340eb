#pragma once

// Seeded training with early stopping, metrics by new/existing split, and
// the repeated-run experiment protocol.

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripgen/checkpoint.hpp"
#include "tripgen/common.hpp"
#include "tripgen/dataset.hpp"
#include "tripgen/linear_models.hpp"
#include "tripgen/models.hpp"
#include "tripgen/nn/optim.hpp"

namespace tripgen {

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainRunConfig {
  std::size_t epochs = 200;
  std::size_t patience = 10;
  double lr = 0.002;
  std::size_t batch_size = 32;
  double weight_decay = 1e-5;
  std::uint64_t seed = 1;
  std::size_t n_runs = 10;
  std::size_t threads = 1;  // concurrent runs in run_experiment
  LinearEstimator linear_estimator = LinearEstimator::ols;
  ModelConfig model;

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (patience >= epochs) throw ConfigError("patience must be < epochs");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (n_runs == 0) throw ConfigError("n_runs must be >= 1");
    model.validate();
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"patience", patience},
            {"lr", lr},
            {"batch_size", batch_size},
            {"weight_decay", weight_decay},
            {"weight_decay_mode", "l2_in_gradient"},
            {"seed", seed},
            {"n_runs", n_runs},
            {"linear_estimator", to_string(linear_estimator)},
            {"model", model.to_json()}};
  }

  static TrainRunConfig from_json(const nlohmann::json& j) {
    TrainRunConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.n_runs = j.value("n_runs", c.n_runs);
    c.threads = j.value("threads", c.threads);
    if (j.contains("linear_estimator")) {
      const auto e = j["linear_estimator"].get<std::string>();
      if (e == "ols") c.linear_estimator = LinearEstimator::ols;
      else if (e == "gd") c.linear_estimator = LinearEstimator::gradient_descent;
      else throw ConfigError("unknown linear_estimator '" + e + "'");
    }
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    if (j.contains("variant")) c.model.variant = parse_variant(j["variant"].get<std::string>());
    c.validate();
    return c;
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // summed squared error over the epoch's batches
  double val_loss = 0;    // summed squared error on the validation split
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
};

/// Summed squared error of a model on a split, normalized scale.
inline double split_loss(const Model& model, const nn::Tensor& features, const PreparedSplit& split) {
  double s = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto y = model.predict(features, split.inputs[i]);
    for (int c = 0; c < 2; ++c) {
      const double e = y[c] - split.targets(i, c);
      s += e * e;
    }
  }
  return s;
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains one model. Nonlinear variants run Adam over shuffled
/// mini-batches, keep the parameters of the best validation epoch and stop
/// after `patience` epochs without improvement. Linear variants are fitted
/// in closed form (or by full-batch gradient descent).
inline TrainResult train_model(const TrainRunConfig& cfg, const nn::Tensor& features, const PreparedSplit& train,
                               const PreparedSplit& validation, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw DataError("train: empty training split");
  if (cfg.model.linear()) {
    auto fitted = fit_linear_model(cfg.model, features, train.inputs, train.targets, cfg.linear_estimator);
    TrainResult r{std::move(fitted.model), {}, 0, false, std::move(fitted.fit.warnings)};
    r.log.push_back({1, split_loss(r.model, features, train),
                     validation.empty() ? 0.0 : split_loss(r.model, features, validation)});
    r.best_epoch = 1;
    return r;
  }

  Model model(cfg.model, derive_seed(seed, 0));
  Rng rng(derive_seed(seed, 1));
  auto adam = nn::make_adam(model.params(), cfg.lr, cfg.weight_decay);
  TrainResult result{model, {}, 0, false, {}};
  const PreparedSplit& monitor = validation.empty() ? train : validation;
  if (validation.empty()) result.warnings.push_back("validation split is empty; early stopping monitors training loss");

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<ModelInput> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      nn::Tensor target(end - start, 2);
      for (std::size_t b = start; b < end; ++b) {
        batch.push_back(train.inputs[order[b]]);
        target(b - start, 0) = train.targets(order[b], 0);
        target(b - start, 1) = train.targets(order[b], 1);
      }
      nn::Tape tape;
      auto pred = model.forward(tape, features, batch);
      auto loss = nn::sum_squared_error(pred, target);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        std::string ids;
        for (std::size_t b = start; b < end; ++b) {
          const auto& s = train.samples[order[b]];
          ids += (ids.empty() ? "" : ", ") + s.station_id + "@" + s.month.to_string();
        }
        throw TrainingAborted("non-finite loss in epoch " + std::to_string(epoch) + "; batch: " + ids);
      }
      model.params().zero_grad();
      tape.backward(loss);
      nn::adam_step(model.params(), adam);
      epoch_loss += lv;
    }
    const double val = split_loss(model, features, monitor);
    if (!std::isfinite(val)) throw TrainingAborted("non-finite validation loss in epoch " + std::to_string(epoch));
    EpochLog entry{epoch, epoch_loss, val};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (val < best) {
      best = val;
      since_best = 0;
      result.best_epoch = epoch;
      result.model.params().assign_values(model.params());
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double rmse = 0;
  double mae = 0;
  std::optional<double> r2;  // absent when the truth has zero variance
  std::size_t n = 0;
};

/// RMSE, MAE and R^2 = 1 - SS_res / SS_tot (around the truth's own mean).
/// Absent for empty input.
inline std::optional<Metrics> compute_metrics(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("compute_metrics: length mismatch");
  if (truth.empty()) return std::nullopt;
  const double n = static_cast<double>(truth.size());
  double mean = 0;
  for (double t : truth) mean += t;
  mean /= n;
  double ss_res = 0, ss_tot = 0, abs_sum = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = predicted[i] - truth[i];
    ss_res += e * e;
    abs_sum += std::abs(e);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  Metrics m;
  m.n = truth.size();
  m.rmse = std::sqrt(ss_res / n);
  m.mae = abs_sum / n;
  if (ss_tot > 0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

/// Pooled metrics (outflow and inflow values concatenated) plus one set per
/// direction.
struct SplitMetrics {
  std::optional<Metrics> pooled;
  std::optional<Metrics> out;
  std::optional<Metrics> in;
};

struct Predictions {
  std::vector<double> y_out, y_in;            // trips/day, unclipped
  std::vector<double> true_out, true_in;
};

inline Predictions predict_split(const Model& model, const Scalers& scalers, const nn::Tensor& features,
                                 const PreparedSplit& split) {
  Predictions p;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto y = model.predict(features, split.inputs[i]);
    p.y_out.push_back(scalers.targets.inverse(0, y[0]));
    p.y_in.push_back(scalers.targets.inverse(1, y[1]));
    p.true_out.push_back(split.samples[i].y_out);
    p.true_in.push_back(split.samples[i].y_in);
  }
  return p;
}

inline SplitMetrics metrics_of(const Predictions& p) {
  SplitMetrics m;
  std::vector<double> pred = p.y_out, truth = p.true_out;
  pred.insert(pred.end(), p.y_in.begin(), p.y_in.end());
  truth.insert(truth.end(), p.true_in.begin(), p.true_in.end());
  m.pooled = compute_metrics(pred, truth);
  m.out = compute_metrics(p.y_out, p.true_out);
  m.in = compute_metrics(p.y_in, p.true_in);
  return m;
}

inline SplitMetrics evaluate(const Model& model, const Scalers& scalers, const nn::Tensor& features,
                             const PreparedSplit& split) {
  return metrics_of(predict_split(model, scalers, features, split));
}

// ---------------------------------------------------------------------------
// Experiment

struct RunReport {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  SplitMetrics test_new;
  SplitMetrics test_existing;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double seconds = 0;
};

struct EvalReport {
  TrainRunConfig config;
  nlohmann::json pipeline = nlohmann::json::object();  // sigma scope and values, split sizes
  std::vector<RunReport> runs;
  std::vector<std::string> warnings;

  /// Mean of a per-run metric; absent when any run lacks it.
  [[nodiscard]] std::optional<double> mean(const std::function<std::optional<double>(const RunReport&)>& get) const {
    if (runs.empty()) return std::nullopt;
    double s = 0;
    for (const auto& r : runs) {
      const auto v = get(r);
      if (!v) return std::nullopt;
      s += *v;
    }
    return s / static_cast<double>(runs.size());
  }
};

inline nlohmann::json to_json(const std::optional<Metrics>& m) {
  if (!m) return nullptr;
  return {{"rmse", m->rmse}, {"mae", m->mae}, {"r2", m->r2 ? nlohmann::json(*m->r2) : nlohmann::json(nullptr)}, {"n", m->n}};
}

inline nlohmann::json to_json(const SplitMetrics& s) {
  return {{"pooled", to_json(s.pooled)}, {"out", to_json(s.out)}, {"in", to_json(s.in)}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"run", run.run},
                    {"seed", run.seed},
                    {"best_epoch", run.best_epoch},
                    {"epochs_run", run.epochs_run},
                    {"seconds", run.seconds},
                    {"test_new", to_json(run.test_new)},
                    {"test_existing", to_json(run.test_existing)}});
  nlohmann::json mean = nlohmann::json::object();
  for (const char* split : {"test_new", "test_existing"}) {
    nlohmann::json s = nlohmann::json::object();
    for (const char* metric : {"rmse", "mae", "r2"}) {
      const auto v = r.mean([&](const RunReport& run) -> std::optional<double> {
        const auto& m = std::string(split) == "test_new" ? run.test_new.pooled : run.test_existing.pooled;
        if (!m) return std::nullopt;
        if (std::string(metric) == "rmse") return m->rmse;
        if (std::string(metric) == "mae") return m->mae;
        return m->r2;
      });
      s[metric] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    }
    mean[split] = s;
  }
  return {{"config", r.config.to_json()},
          {"pipeline", r.pipeline},
          {"metric_pooling", "outflow and inflow pooled; per-direction metrics under out/in"},
          {"runs", runs},
          {"mean", mean},
          {"warnings", r.warnings}};
}

/// One row per run, split and metric scope, for box plots.
inline void write_runs_csv(std::ostream& out, const EvalReport& r) {
  csv::write_row(out, {"variant", "run", "seed", "split", "scope", "rmse", "mae", "r2", "n"});
  for (const auto& run : r.runs)
    for (const auto* split : {&run.test_new, &run.test_existing})
      for (const auto& [scope, m] : {std::pair{"pooled", split->pooled}, {"out", split->out}, {"in", split->in}}) {
        if (!m) continue;
        csv::write_row(out, {to_string(r.config.model.variant), std::to_string(run.run), std::to_string(run.seed),
                             split == &run.test_new ? "test_new" : "test_existing", scope,
                             csv::format_double(m->rmse), csv::format_double(m->mae),
                             m->r2 ? csv::format_double(*m->r2) : "", std::to_string(m->n)});
      }
}

inline nlohmann::json pipeline_summary(const PreparedData& data) {
  nlohmann::json j = {{"sigma_scope", to_string(data.config.graphs.sigma_scope)},
                      {"k", data.config.graphs.k},
                      {"train", data.train.size()},
                      {"validation", data.validation.size()},
                      {"test_existing", data.test_existing.size()},
                      {"test_new", data.test_new.size()}};
  if (data.global_sigma) {
    j["sigma_d"] = data.global_sigma->first;
    j["sigma_b"] = data.global_sigma->second;
  }
  return j;
}

struct RunOutput {
  RunReport report;
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

inline RunOutput run_once(const TrainRunConfig& cfg, const PreparedData& data, std::size_t run) {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = derive_seed(cfg.seed, run);
  auto trained = train_model(cfg, data.features, data.train, data.validation, seed);
  RunOutput out;
  out.report.run = run;
  out.report.seed = seed;
  out.report.best_epoch = trained.best_epoch;
  out.report.epochs_run = trained.log.size();
  out.report.test_new = evaluate(trained.model, data.scalers, data.features, data.test_new);
  out.report.test_existing = evaluate(trained.model, data.scalers, data.features, data.test_existing);
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.checkpoint.config = cfg.model;
  out.checkpoint.params = trained.model.params();
  out.checkpoint.scalers = data.scalers;
  out.checkpoint.metadata = {{"train", cfg.to_json()},
                             {"run", run},
                             {"seed", seed},
                             {"best_epoch", trained.best_epoch},
                             {"pipeline", pipeline_summary(data)},
                             {"warnings", trained.warnings}};
  out.log = std::move(trained.log);
  return out;
}

/// n_runs seeded runs (seed of run r = derive_seed(config.seed, r)). Any
/// failing run fails the experiment.
inline EvalReport run_experiment(const TrainRunConfig& cfg, const PreparedData& data,
                                 std::vector<Checkpoint>* checkpoints = nullptr) {
  cfg.validate();
  EvalReport report;
  report.config = cfg;
  report.pipeline = pipeline_summary(data);
  report.warnings = data.warnings;
  std::vector<std::optional<RunOutput>> outputs(cfg.n_runs);
  std::vector<std::exception_ptr> errors(cfg.n_runs);
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.n_runs));
  auto work = [&](std::size_t first) {
    for (std::size_t r = first; r < cfg.n_runs; r += threads) {
      try {
        outputs[r] = run_once(cfg, data, r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  for (std::size_t r = 0; r < cfg.n_runs; ++r) {
    if (errors[r]) {
      try {
        std::rethrow_exception(errors[r]);
      } catch (const std::exception& e) {
        throw TrainingAborted("run " + std::to_string(r) + " failed: " + e.what());
      }
    }
    report.runs.push_back(outputs[r]->report);
    if (checkpoints) checkpoints->push_back(std::move(outputs[r]->checkpoint));
  }
  return report;
}

}  // namespace tripgen
