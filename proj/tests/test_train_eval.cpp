#include <cmath>
#include <sstream>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "tripgen/synth_city.hpp"
#include "tripgen/train_eval.hpp"

using namespace tripgen;

namespace {

// A split over random feature rows with fabricated sample ids.
PreparedSplit random_split(nn::Tensor& features, std::size_t n, Rng& rng, std::size_t offset = 0) {
  PreparedSplit s;
  s.targets = nn::Tensor(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    ModelInput in;
    in.row = offset + i;
    in.age = rng.uniform();
    in.month = static_cast<int>(i % 12);
    for (auto* g : {&in.proximity, &in.similarity})
      for (int j = 0; j < 2; ++j) {
        g->rows.push_back(rng.below(features.rows()));
        g->kernel_weights.push_back(rng.uniform(0.1, 1));
      }
    s.inputs.push_back(in);
    s.samples.push_back({"S" + std::to_string(offset + i), YearMonth{2019, 1} + static_cast<int>(i % 12), 0, 0, 30});
  }
  return s;
}

nn::Tensor random_features(std::size_t n, std::size_t width, Rng& rng) {
  nn::Tensor f(n, width);
  for (auto& v : f.values()) v = rng.uniform();
  return f;
}

TrainRunConfig small_config(Variant v, std::size_t width) {
  TrainRunConfig c;
  c.model.variant = v;
  c.model.n_features = width;
  return c;
}

}  // namespace

TEST(Metrics, WorkedExample) {
  const std::vector<double> pred{2, 4, 6}, truth{1, 4, 7};
  const auto m = compute_metrics(pred, truth);
  ASSERT_TRUE(m);
  EXPECT_NEAR(m->rmse, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(m->mae, 2.0 / 3.0, 1e-15);
  // SS_tot around mean 4: 9 + 0 + 9.
  EXPECT_NEAR(*m->r2, 1.0 - 2.0 / 18.0, 1e-15);
  EXPECT_EQ(m->n, 3u);
}

TEST(Metrics, DegenerateCases) {
  const std::vector<double> t{1, 2, 3, 4};
  const auto perfect = compute_metrics(t, t);
  EXPECT_EQ(perfect->rmse, 0);
  EXPECT_EQ(perfect->mae, 0);
  EXPECT_EQ(*perfect->r2, 1);
  const std::vector<double> mean(4, 2.5);
  EXPECT_NEAR(*compute_metrics(mean, t)->r2, 0.0, 1e-15);
  const std::vector<double> constant(4, 3.0);
  EXPECT_FALSE(compute_metrics(t, constant)->r2);
  EXPECT_FALSE(compute_metrics(std::vector<double>{}, std::vector<double>{}));
  EXPECT_THROW(compute_metrics(t, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Metrics, MatchLongDoubleOracle) {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + rng.below(499);
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(0, 50);
      p[i] = y[i] + rng.normal(0, 5);
    }
    long double mean = 0, ss_res = 0, ss_tot = 0, abs_sum = 0;
    for (double v : y) mean += v;
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) {
      ss_res += (long double)(p[i] - y[i]) * (p[i] - y[i]);
      ss_tot += (y[i] - mean) * (y[i] - mean);
      abs_sum += std::fabs(p[i] - y[i]);
    }
    const auto m = compute_metrics(p, y);
    EXPECT_NEAR(m->rmse, (double)std::sqrt(ss_res / n), 1e-9);
    EXPECT_NEAR(m->mae, (double)(abs_sum / n), 1e-9);
    EXPECT_NEAR(*m->r2, (double)(1 - ss_res / ss_tot), 1e-9);
    EXPECT_LE(*m->r2, 1.0);
  }
}

TEST(Metrics, PoolOutflowAndInflow) {
  Predictions p;
  p.y_out = {1, 2};
  p.true_out = {1, 4};
  p.y_in = {5};
  p.true_in = {2};
  const auto m = metrics_of(p);
  EXPECT_NEAR(m.pooled->rmse, std::sqrt((0.0 + 4 + 9) / 3), 1e-15);
  EXPECT_NEAR(m.out->rmse, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(m.in->rmse, 3.0, 1e-15);
  EXPECT_FALSE(m.in->r2);
}

TEST(LinearModels, OlsMatchesQrOracle) {
  Rng rng(2);
  auto features = random_features(300, 6, rng);
  auto split = random_split(features, 300, rng);
  for (auto& v : split.targets.values()) v = rng.uniform();
  for (Variant v : {Variant::linreg, Variant::slx}) {
    auto cfg = small_config(v, 6);
    const auto fitted = fit_linear_model(cfg.model, features, split.inputs, split.targets, LinearEstimator::ols);
    const auto design = build_linear_design(fitted.model, features, split.inputs, split.targets);
    const Eigen::MatrixXd coef = design.X.colPivHouseholderQr().solve(design.Y);
    const Eigen::MatrixXd want = design.X * coef;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const auto y = fitted.model.predict(features, split.inputs[i]);
      EXPECT_NEAR(y[0], want(static_cast<Eigen::Index>(i), 0), 1e-9);
      EXPECT_NEAR(y[1], want(static_cast<Eigen::Index>(i), 1), 1e-9);
    }
  }
}

TEST(LinearModels, RecoverExactCoefficients) {
  Rng rng(3);
  auto features = random_features(200, 5, rng);
  auto split = random_split(features, 200, rng);
  const std::vector<double> beta{1.5, -2, 0.25, 0, 3};
  const std::array<double, 12> season{0, .1, .2, .3, .4, .5, .4, .3, .2, .1, 0, -.1};
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& in = split.inputs[i];
    double y = 0.7 + 0.4 * in.age + season[static_cast<std::size_t>(in.month)];
    for (std::size_t f = 0; f < 5; ++f) y += beta[f] * features(in.row, f);
    split.targets(i, 0) = y;
    split.targets(i, 1) = 2 * y;
  }
  const auto fitted =
      fit_linear_model(small_config(Variant::linreg, 5).model, features, split.inputs, split.targets, LinearEstimator::ols);
  const auto& W = fitted.model.params().at("W_lin").value;
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_NEAR(W(f, 0), beta[f], 1e-9);
    EXPECT_NEAR(W(f, 1), 2 * beta[f], 1e-9);
  }
  EXPECT_NEAR(W(5 + 12, 0), 0.4, 1e-9);
  // January is the reference month.
  EXPECT_EQ(W(5, 0), 0.0);
  EXPECT_NEAR(W(5 + 5, 0), 0.5, 1e-9);
  EXPECT_NEAR(fitted.model.params().at("b_lin").value[0], 0.7, 1e-9);
}

TEST(LinearModels, GradientDescentMatchesOls) {
  Rng rng(4);
  auto features = random_features(150, 4, rng);
  auto split = random_split(features, 150, rng);
  for (auto& v : split.targets.values()) v = rng.uniform();
  const auto ols = slx_fit_ols(features, split.inputs, split.targets);
  const auto gd = slx_fit_gd(features, split.inputs, split.targets);
  EXPECT_TRUE(gd.fit.warnings.empty());
  std::vector<double> a, b;
  for (const auto& in : split.inputs) {
    const auto ya = ols.model.predict(features, in), yb = gd.model.predict(features, in);
    a.insert(a.end(), ya.begin(), ya.end());
    b.insert(b.end(), yb.begin(), yb.end());
  }
  EXPECT_LT(compute_metrics(b, a)->rmse, 1e-4);
}

TEST(Training, EarlyStoppingOnWorseningValidation) {
  Rng rng(5);
  auto features = random_features(40, 6, rng);
  auto train = random_split(features, 32, rng);
  auto val = train;
  // Training pulls every prediction up; validation wants them far below.
  for (auto& v : train.targets.values()) v = 10;
  for (auto& v : val.targets.values()) v = -10;
  auto cfg = small_config(Variant::fnn, 6);
  cfg.epochs = 30;
  cfg.patience = 3;
  const auto r = train_model(cfg, features, train, val, 1);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.log.size(), 1u + cfg.patience);
  // The kept parameters are the best epoch's: their validation loss equals the logged value.
  EXPECT_NEAR(split_loss(r.model, features, val), r.log[0].val_loss, 1e-9 * r.log[0].val_loss);
}

TEST(Training, NonFiniteLossAbortsWithBatchIds) {
  Rng rng(6);
  auto features = random_features(20, 6, rng);
  auto train = random_split(features, 20, rng);
  features(7, 2) = std::nan("");
  auto cfg = small_config(Variant::fnn, 6);
  cfg.batch_size = 20;
  try {
    (void)train_model(cfg, features, train, {}, 1);
    FAIL();
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("S7@"), std::string::npos) << e.what();
  }
}

TEST(Training, SeededRunsAreReproducible) {
  Rng rng(7);
  auto features = random_features(60, 6, rng);
  auto train = random_split(features, 50, rng);
  auto val = random_split(features, 10, rng, 50);
  for (auto& v : train.targets.values()) v = rng.uniform();
  for (auto& v : val.targets.values()) v = rng.uniform();
  auto cfg = small_config(Variant::mgat, 6);
  cfg.epochs = 5;
  cfg.patience = 2;
  const auto a = train_model(cfg, features, train, val, 11);
  const auto b = train_model(cfg, features, train, val, 11);
  for (std::size_t i = 0; i < a.model.params().size(); ++i)
    EXPECT_EQ(a.model.params()[i].value, b.model.params()[i].value);
}

TEST(Training, ConfigValidation) {
  TrainRunConfig c;
  c.patience = c.epochs;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(TrainRunConfig::from_json({{"batch_size", 0}}), ConfigError);
  EXPECT_THROW(TrainRunConfig::from_json({{"variant", "cnn"}}), ConfigError);
  const auto j = TrainRunConfig::from_json({{"variant", "pgat"}, {"epochs", 50}});
  EXPECT_EQ(j.model.variant, Variant::pgat);
  EXPECT_EQ(j.epochs, 50u);
  EXPECT_EQ(j.batch_size, 32u);
  EXPECT_EQ(j.lr, 0.002);
}

namespace {

synth::City small_linear_city() {
  synth::SynthConfig cfg;
  cfg.n_stations = 60;
  cfg.n_months = 18;
  cfg.expansions = synth::SynthConfig::even_expansions(18, 2, 15);
  cfg.spillover_strength = 0;
  cfg.noise_sd = 0;
  return synth::generate_city(cfg);
}

}  // namespace

TEST(Training, FnnFitsNoiselessLinearCity) {
  const auto city = small_linear_city();
  const auto data = prepare(city.workspace);
  TrainRunConfig cfg;
  cfg.model.variant = Variant::fnn;
  const auto r = train_model(cfg, data.features, data.train, data.validation, 3);
  const auto m = evaluate(r.model, data.scalers, data.features, data.train);
  EXPECT_LT(m.pooled->rmse, 0.5);
}

TEST(Experiment, ThreadCountDoesNotChangeResults) {
  const auto city = small_linear_city();
  const auto data = prepare(city.workspace);
  TrainRunConfig cfg;
  cfg.model.variant = Variant::pgat;
  cfg.epochs = 3;
  cfg.patience = 1;
  cfg.n_runs = 2;
  std::vector<Checkpoint> ck;
  const auto serial = run_experiment(cfg, data, &ck);
  cfg.threads = 2;
  const auto parallel = run_experiment(cfg, data);
  ASSERT_EQ(serial.runs.size(), 2u);
  ASSERT_EQ(ck.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(serial.runs[r].seed, derive_seed(cfg.seed, r));
    EXPECT_EQ(serial.runs[r].test_new.pooled->rmse, parallel.runs[r].test_new.pooled->rmse);
  }
  const auto j = to_json(serial);
  EXPECT_TRUE(j["mean"]["test_new"]["rmse"].is_number());
  EXPECT_EQ(j["pipeline"]["test_new"], data.test_new.size());
  std::stringstream csv_out;
  write_runs_csv(csv_out, serial);
  std::size_t lines = 0;
  for (std::string line; std::getline(csv_out, line);) ++lines;
  EXPECT_EQ(lines, 1u + 2 * 2 * 3);
}
