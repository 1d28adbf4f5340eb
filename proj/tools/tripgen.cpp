// tripgen: command-line front end for the demand-prediction pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tripgen/checkpoint.hpp"
#include "tripgen/data_pipeline.hpp"
#include "tripgen/dataset.hpp"
#include "tripgen/explain.hpp"
#include "tripgen/http_api.hpp"
#include "tripgen/scenario.hpp"
#include "tripgen/synth_city.hpp"
#include "tripgen/train_eval.hpp"

namespace fs = std::filesystem;
using namespace tripgen;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

struct TrainArgs {
  std::string variant;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> threads;
  std::string data_dir = ".";
  std::string out;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a, bool runs) {
  cmd->add_option("--variant", a.variant, "mgat, mgcn, pgat, bgat, fnn, linreg or slx");
  cmd->add_option("--config", a.config, "training config JSON");
  cmd->add_option("--seed", a.seed, "base seed");
  if (runs) {
    cmd->add_option("--runs", a.runs, "number of seeded runs");
    cmd->add_option("--threads", a.threads, "concurrent runs");
  }
  cmd->add_option("--data-dir", a.data_dir, "workspace directory")->check(CLI::ExistingDirectory);
  cmd->add_option("--out", a.out, "output path")->required();
}

TrainRunConfig train_config(const TrainArgs& a) {
  TrainRunConfig cfg = a.config.empty() ? TrainRunConfig{} : TrainRunConfig::from_json(read_json(a.config));
  if (!a.variant.empty()) cfg.model.variant = parse_variant(a.variant);
  if (a.seed) cfg.seed = *a.seed;
  if (a.runs) cfg.n_runs = *a.runs;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();
  return cfg;
}

PreparedData load_prepared(const std::string& dir, const std::optional<Scalers>& scalers = std::nullopt) {
  const auto ws = Workspace::load(dir);
  print_warnings(ws.warnings);
  auto data = prepare(ws, scalers);
  print_warnings(data.warnings);
  return data;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto out = p;
  out.replace_extension();
  out += suffix;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Station-level bike-share demand prediction"};
  app.require_subcommand(1);

  // aggregate
  std::string trips_path, samples_out, pipeline_cfg;
  auto* aggregate = app.add_subcommand("aggregate", "trip CSV -> monthly station samples");
  aggregate->add_option("--trips", trips_path, "trip CSV")->required()->check(CLI::ExistingFile);
  aggregate->add_option("--config", pipeline_cfg, "pipeline JSON (column names, time zone)");
  aggregate->add_option("--out", samples_out, "samples CSV")->required();

  // features
  std::string data_dir = ".", out_path, month_text;
  auto* features = app.add_subcommand("features", "export the 43-feature matrix of every station-month");
  features->add_option("--data-dir", data_dir)->check(CLI::ExistingDirectory);
  features->add_option("--out", out_path, "feature CSV")->required();

  // graphs
  auto* graphs = app.add_subcommand("graphs", "export localized graphs");
  graphs->add_option("--data-dir", data_dir)->check(CLI::ExistingDirectory);
  graphs->add_option("--month", month_text, "YYYY-MM; all months when omitted");
  graphs->add_option("--out", out_path, "graph CSV")->required();

  // synth
  synth::SynthConfig sc;
  std::optional<std::size_t> events;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic city");
  synth_cmd->add_option("--seed", sc.seed);
  synth_cmd->add_option("--stations", sc.n_stations);
  synth_cmd->add_option("--months", sc.n_months);
  synth_cmd->add_option("--spillover", sc.spillover_strength);
  synth_cmd->add_option("--noise", sc.noise_sd);
  synth_cmd->add_option("--seasonal", sc.seasonal_amplitude);
  synth_cmd->add_option("--events", events, "number of evenly spaced expansion events");
  synth_cmd->add_option("--out", out_path, "output directory")->required();

  // train / evaluate / experiment
  TrainArgs train_args, exp_args;
  auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
  add_train_flags(train, train_args, false);

  std::string checkpoint_path;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "metrics of a checkpoint on the test splits");
  evaluate_cmd->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--data-dir", data_dir)->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--out", out_path, "report JSON")->required();

  auto* experiment = app.add_subcommand("experiment", "repeated seeded runs with a JSON report and per-run CSV");
  add_train_flags(experiment, exp_args, true);

  // explain
  std::vector<std::string> station_ids;
  std::size_t n_coalitions = 2048, background = 100;
  auto* explain = app.add_subcommand("explain", "SHAP attributions and attention edges");
  explain->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  explain->add_option("--data-dir", data_dir)->check(CLI::ExistingDirectory);
  explain->add_option("--month", month_text)->required();
  explain->add_option("--stations", station_ids, "station ids; all active stations when omitted");
  explain->add_option("--coalitions", n_coalitions);
  explain->add_option("--background", background);
  explain->add_option("--out", out_path, "attribution CSV; attention and ranking files are written beside it")
      ->required();

  // serve / predict
  int port = 8080;
  std::string store_dir, scenario_path, host = "127.0.0.1";
  bool freeze_sigma = false;
  auto* serve = app.add_subcommand("serve", "HTTP JSON API");
  serve->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  serve->add_option("--data-dir", data_dir)->check(CLI::ExistingDirectory);
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--store", store_dir, "scenario store directory (default <data-dir>/scenarios)");
  serve->add_flag("--freeze-sigma", freeze_sigma, "reuse baseline sigma in scenarios");

  auto* predict = app.add_subcommand("predict", "evaluate one scenario file");
  predict->add_option("--scenario", scenario_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--data-dir", data_dir)->check(CLI::ExistingDirectory);
  predict->add_option("--out", out_path, "result JSON (stdout when omitted)");
  predict->add_flag("--freeze-sigma", freeze_sigma);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*aggregate) {
      PipelineConfig pc = pipeline_cfg.empty() ? PipelineConfig{} : PipelineConfig::from_json(read_json(pipeline_cfg));
      std::ifstream in(trips_path);
      const auto result = ingest_trips(in, pc.ingest);
      for (const auto& d : result.diagnostics) std::cerr << "skipped: " << d << '\n';
      const auto samples = aggregate_all_months(result.trips);
      auto out = open_out(samples_out);
      write_samples(out, samples);
      std::cerr << result.trips.size() << " trips, " << result.skipped << " skipped, " << samples.size()
                << " station-months\n";
    } else if (*features) {
      const auto ws = Workspace::load(data_dir);
      print_warnings(ws.warnings);
      const FeatureExtractor extractor(ws.layers, ws.config.features);
      std::vector<FeatureRow> rows;
      for (const auto& [m, active] : ws.active_by_month()) {
        const auto mb = extract_month(extractor, m, active);
        for (std::size_t i = 0; i < mb.active.size(); ++i) rows.push_back({mb.active[i].id, m, mb.raw[i]});
      }
      auto out = open_out(out_path);
      write_feature_table(out, rows, ws.config.features);
    } else if (*graphs) {
      const auto data = load_prepared(data_dir);
      auto out = open_out(out_path);
      write_graph_header(out);
      for (const auto& [m, mb] : data.months)
        if (month_text.empty() || m == YearMonth::parse(month_text)) write_graphs(out, mb.graphs);
    } else if (*synth_cmd) {
      if (events) sc.expansions = synth::SynthConfig::even_expansions(sc.n_months, *events, sc.n_stations / 5);
      const auto city = synth::generate_city(sc);
      synth::emit_fixtures(city, out_path);
      std::cerr << city.workspace.stations.size() << " stations, " << city.workspace.samples.size()
                << " station-months, truncation rate " << city.truth.truncation_rate << '\n';
    } else if (*train) {
      const auto cfg = train_config(train_args);
      const auto data = load_prepared(train_args.data_dir);
      auto run = run_once(cfg, data, 0);
      print_warnings(run.checkpoint.metadata["warnings"].get<std::vector<std::string>>());
      save_checkpoint(train_args.out, run.checkpoint);
      auto log = open_out(sibling(train_args.out, ".log.csv"));
      csv::write_row(log, {"epoch", "train_loss", "val_loss"});
      for (const auto& e : run.log)
        csv::write_row(log, {std::to_string(e.epoch), csv::format_double(e.train_loss), csv::format_double(e.val_loss)});
      std::cout << to_json(run.report.test_new).dump(2) << '\n';
    } else if (*evaluate_cmd) {
      const auto ckpt = load_checkpoint(checkpoint_path);
      const auto data = load_prepared(data_dir, ckpt.scalers);
      const auto model = ckpt.model();
      const nlohmann::json report = {
          {"variant", to_string(ckpt.config.variant)},
          {"pipeline", pipeline_summary(data)},
          {"test_new", to_json(evaluate(model, data.scalers, data.features, data.test_new))},
          {"test_existing", to_json(evaluate(model, data.scalers, data.features, data.test_existing))},
          {"validation", to_json(evaluate(model, data.scalers, data.features, data.validation))}};
      open_out(out_path) << report.dump(2) << '\n';
    } else if (*experiment) {
      const auto cfg = train_config(exp_args);
      const auto data = load_prepared(exp_args.data_dir);
      const auto report = run_experiment(cfg, data);
      open_out(exp_args.out) << to_json(report).dump(2) << '\n';
      auto runs = open_out(sibling(exp_args.out, ".runs.csv"));
      write_runs_csv(runs, report);
    } else if (*explain) {
      const auto ckpt = load_checkpoint(checkpoint_path);
      const auto data = load_prepared(data_dir, ckpt.scalers);
      const auto model = ckpt.model();
      const auto month = YearMonth::parse(month_text);
      const auto& mb = data.month(month);
      if (station_ids.empty())
        for (const auto& s : mb.active) station_ids.push_back(s.id);
      ShapOptions opt;
      opt.n_coalitions = n_coalitions;
      opt.background_size = background;
      const auto bg = draw_background(data.features, data.train, opt.background_size, opt.seed);
      std::vector<Attribution> attributions;
      std::vector<AttentionEdge> edges;
      for (const auto& id : station_ids) {
        const auto ex = explain_sample(model, data.scalers, data.features, data.input_for(id, month), id, month, bg, opt,
                                       data.config.features);
        attributions.insert(attributions.end(), ex.attributions.begin(), ex.attributions.end());
        const auto e = export_attention(model, data, id, month);
        edges.insert(edges.end(), e.begin(), e.end());
      }
      {
        auto out = open_out(out_path);
        write_attributions_csv(out, attributions);
      }
      {
        auto out = open_out(sibling(out_path, ".attention.csv"));
        write_attention_csv(out, edges);
      }
      const auto ranking = rank_features(attributions);
      open_out(sibling(out_path, ".ranking.json")) << to_json(std::span<const FeatureImportance>(ranking)).dump(2)
                                                  << '\n';
    } else if (*serve) {
      const auto ws = Workspace::load(data_dir);
      print_warnings(ws.warnings);
      api::ServiceOptions opt;
      opt.scenario.freeze_sigma = freeze_sigma;
      api::ApiService svc(ws, load_checkpoint(checkpoint_path),
                          store_dir.empty() ? fs::path(data_dir) / "scenarios" : fs::path(store_dir), opt);
      httplib::Server server;
      api::mount(server, svc);
      std::cerr << "listening on http://" << host << ':' << port << '\n';
      if (!server.listen(host, port)) throw DataError("cannot listen on " + host + ":" + std::to_string(port));
    } else if (*predict) {
      const auto ws = Workspace::load(data_dir);
      print_warnings(ws.warnings);
      const auto ckpt = load_checkpoint(checkpoint_path);
      const scenario::Baseline base(ws, ckpt);
      scenario::ScenarioOptions opt;
      opt.freeze_sigma = freeze_sigma;
      const auto result = scenario::evaluate(base, scenario::Scenario::from_json(read_json(scenario_path)), opt);
      const auto text = scenario::to_json(result).dump(2);
      if (out_path.empty()) std::cout << text << '\n';
      else open_out(out_path) << text << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
