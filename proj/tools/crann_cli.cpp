// crann: command-line front end (synth, prepare, train, evaluate, predict, explain).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crann/error.hpp"
#include "crann/pipeline.hpp"

namespace fs = std::filesystem;
using namespace crann;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
      return 1;
    case ErrorKind::Data:
      return 2;
    case ErrorKind::Numeric:
      return 3;
  }
  return 3;
}

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;

  RunConfig load() const {
    auto overrides = set;
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (model) overrides.push_back("model.kind=\"" + *model + "\"");
    if (config.empty()) {
      nlohmann::json j = nlohmann::json::object();
      apply_overrides(j, overrides);
      return RunConfig::from_json(j, fs::current_path());
    }
    return RunConfig::load(config, overrides);
  }
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "run configuration JSON");
  if (config_required) opt->required();
  opt->check(CLI::ExistingFile);
  cmd->add_option("--set", c.set, "override a config value, e.g. --set train.max_epochs=20")->take_all();
  cmd->add_option("--seed", c.seed, "run seed (overrides the config)");
}

std::vector<std::size_t> fold_list(const Prepared& prep, const std::optional<std::size_t>& fold, bool all) {
  if (fold && all) throw ConfigError("--fold and --all-folds are exclusive");
  if (fold) {
    prep.fold(*fold);
    return {*fold};
  }
  if (!all) throw ConfigError("pick a fold with --fold N or use --all-folds");
  std::vector<std::size_t> v(prep.plan.folds.size());
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void print_metrics(const EvaluationSummary& s) {
  for (const auto& f : s.folds)
    std::cout << s.model << " fold " << f.fold << ": rmse " << f.metrics.rmse << " bias " << f.metrics.bias
              << " wmape " << f.metrics.wmape << "%\n";
  std::cout << s.model << " pooled: rmse " << s.pooled.rmse << " bias " << s.pooled.bias << " wmape "
            << s.pooled.wmape << "%\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CRANN spatio-temporal traffic forecasting toolkit"};
  app.require_subcommand(1);

  Common synth_c, prep_c, train_c, eval_c, pred_c, expl_c;

  auto* synth = app.add_subcommand("synth", "generate a synthetic panel as traffic/weather/sensor CSVs");
  add_common(synth, synth_c, false);
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "output directory")->required();

  auto* prep = app.add_subcommand("prepare", "clean the panel and write the fold plan and normalization");
  add_common(prep, prep_c, true);

  auto* train_cmd = app.add_subcommand("train", "train one model per fold and save checkpoints");
  add_common(train_cmd, train_c, true);
  train_cmd->add_option("-m,--model", train_c.model, "model kind (overrides the config)");
  std::optional<std::size_t> train_fold;
  bool train_all = false;
  std::size_t train_jobs = 1;
  train_cmd->add_option("--fold", train_fold, "fold index, from 0");
  train_cmd->add_flag("--all-folds", train_all, "train every fold");
  train_cmd->add_option("-j,--jobs", train_jobs, "folds trained in parallel")->check(CLI::PositiveNumber);

  auto* eval_cmd = app.add_subcommand("evaluate", "score models on the test blocks (per fold and pooled)");
  add_common(eval_cmd, eval_c, true);
  eval_cmd->add_option("-m,--model", eval_c.model, "model kind (overrides the config)");
  std::optional<std::size_t> eval_fold;
  bool eval_all = false, eval_reuse = false;
  std::size_t eval_jobs = 1;
  std::string eval_out;
  eval_cmd->add_option("--fold", eval_fold, "fold index, from 0");
  eval_cmd->add_flag("--all-folds", eval_all, "evaluate every fold");
  eval_cmd->add_option("-j,--jobs", eval_jobs, "folds run in parallel")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--reuse", eval_reuse, "load existing fold checkpoints instead of retraining");
  eval_cmd->add_option("-o,--out", eval_out, "directory for metrics.json and metrics.csv");

  auto* pred_cmd = app.add_subcommand("predict", "forecast the next horizon from a checkpoint");
  add_common(pred_cmd, pred_c, true);
  std::string pred_ckpt, pred_origin, pred_out;
  pred_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--origin", pred_origin, "first forecast hour, e.g. 2019-06-01T00:00")->required();
  pred_cmd->add_option("-o,--out", pred_out, "CSV file (default: standard output)");

  auto* expl_cmd = app.add_subcommand("explain", "export attention maps or dense-stage attributions");
  add_common(expl_cmd, expl_c, true);
  std::string expl_ckpt, expl_kind, expl_out;
  std::optional<std::size_t> expl_fold;
  expl_cmd->add_option("--checkpoint", expl_ckpt, "crann checkpoint file")->required()->check(CLI::ExistingFile);
  expl_cmd->add_option("--kind", expl_kind, "temporal, spatial or shapley")
      ->required()
      ->check(CLI::IsMember({"temporal", "spatial", "shapley"}));
  expl_cmd->add_option("--fold", expl_fold, "fold whose test block is explained (overrides explain.fold)");
  expl_cmd->add_option("-o,--out", expl_out, "output directory (default: next to the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      const auto cfg = synth_c.load();
      const auto files = write_panel(generate(cfg.synth), synth_out);
      std::cout << "wrote " << files.traffic.string() << ", " << files.weather.string() << ", "
                << files.sensors.string() << '\n';
    } else if (*prep) {
      const auto cfg = prep_c.load();
      const auto p = prepare(cfg.data);
      write_prepared(p, cfg.data, cfg.prepared_dir());
      std::cout << "prepared " << p.panel.n_times() << " hours x " << p.panel.n_sensors() << " sensors, "
                << p.plan.folds.size() << " folds (gap " << p.plan.gap << ") in " << cfg.prepared_dir().string()
                << '\n';
    } else if (*train_cmd) {
      const auto cfg = train_c.load();
      const auto p = load_or_prepare(cfg);
      const auto folds = fold_list(p, train_fold, train_all);
      const auto s = run_folds(cfg, p, folds, train_jobs);
      for (const auto& f : s.folds)
        std::cout << "fold " << f.fold << ": " << f.report.epochs.size() << " epochs, best validation loss "
                  << f.report.best_validation_loss << ", checkpoint "
                  << (cfg.fold_dir(cfg.model.kind, f.fold) / "model.ckpt").string() << '\n';
    } else if (*eval_cmd) {
      const auto cfg = eval_c.load();
      const auto p = load_or_prepare(cfg);
      const auto folds = fold_list(p, eval_fold, eval_all || !eval_fold);
      const auto s = run_folds(cfg, p, folds, eval_jobs, eval_reuse);
      const fs::path out = eval_out.empty() ? cfg.out_dir / cfg.model.kind : fs::path(eval_out);
      write_text(out / "metrics.json", s.to_json().dump(2));
      std::ostringstream csv;
      s.write_csv(csv);
      write_text(out / "metrics.csv", csv.str());
      print_metrics(s);
    } else if (*pred_cmd) {
      const auto cfg = pred_c.load();
      auto loaded = load_checkpoint(pred_ckpt);
      const auto minutes = parse_iso_minutes(pred_origin);
      if (!minutes) throw ConfigError("cannot parse --origin '" + pred_origin + "'");
      const auto origin = floor_hour(*minutes);
      const auto panel = load_clean_panel(cfg.data);
      const auto forecast = forecast_at(loaded, panel, origin);
      std::ostringstream csv;
      write_forecast_csv(csv, forecast, origin, panel.sensor_ids());
      if (pred_out.empty())
        std::cout << csv.str();
      else
        write_text(pred_out, csv.str());
    } else if (*expl_cmd) {
      if (expl_fold) expl_c.set.push_back("explain.fold=" + std::to_string(*expl_fold));
      const auto cfg = expl_c.load();
      auto loaded = load_checkpoint(expl_ckpt);
      const auto panel = load_clean_panel(cfg.data);
      const fs::path out = expl_out.empty() ? fs::path(expl_ckpt).parent_path() / "explain" : fs::path(expl_out);
      for (const auto& f : explain(cfg, loaded, panel, expl_kind, out)) std::cout << "wrote " << f.string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
