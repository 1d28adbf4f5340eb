// Generates a synthetic city with spatial spillover and compares plain
// linear regression with SLX, both fitted in closed form.
//
//   demo_spillover [spillover] [noise_sd] [seed]

#include <cstdlib>
#include <iostream>

#include "tripgen/linear_models.hpp"
#include "tripgen/synth_city.hpp"
#include "tripgen/train_eval.hpp"

using namespace tripgen;

int main(int argc, char** argv) {
  synth::SynthConfig cfg;
  if (argc > 1) cfg.spillover_strength = std::atof(argv[1]);
  if (argc > 2) cfg.noise_sd = std::atof(argv[2]);
  if (argc > 3) cfg.seed = std::strtoull(argv[3], nullptr, 10);

  const auto city = synth::generate_city(cfg);
  const auto data = prepare(city.workspace);
  std::cout << "stations " << city.workspace.stations.size() << ", station-months " << city.workspace.samples.size()
            << ", truncation rate " << city.truth.truncation_rate << "\n"
            << "train " << data.train.size() << ", validation " << data.validation.size() << ", test existing "
            << data.test_existing.size() << ", test new " << data.test_new.size() << "\n\n";

  for (Variant v : {Variant::linreg, Variant::slx}) {
    ModelConfig mc;
    mc.variant = v;
    const auto fit = fit_linear_model(mc, data.features, data.train.inputs, data.train.targets, LinearEstimator::ols);
    const auto existing = evaluate(fit.model, data.scalers, data.features, data.test_existing);
    const auto fresh = evaluate(fit.model, data.scalers, data.features, data.test_new);
    std::cout << to_string(v) << "\ttest-existing RMSE " << existing.pooled->rmse << "\ttest-new RMSE "
              << (fresh.pooled ? std::to_string(fresh.pooled->rmse) : "n/a") << '\n';
  }
}
