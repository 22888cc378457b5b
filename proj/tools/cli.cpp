#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "popusense/config.hpp"
#include "popusense/error.hpp"
#include "popusense/evalkit.hpp"
#include "popusense/synthdata.hpp"
#include "popusense/train.hpp"

namespace popusense::cli {

namespace fs = std::filesystem;

namespace {

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::InvalidConfig:
    case Errc::ConflictingMetadata:
      return kConfigError;
    case Errc::NonFiniteLoss:
      return kNumericDivergence;
    default:
      return kIoError;
  }
}

RunConfig load_config(const std::string& path, std::ostream& err) {
  RunConfig cfg = load_run_config(path);
  if (const auto seed = apply_seed_override(cfg))
    err << "POPUSENSE_SEED_OVERRIDE: train.seed = " << *seed << '\n';
  return cfg;
}

int cmd_gen_data(const std::string& config, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(config, err);
  const auto manifest = synth::build_dataset(cfg.dataset, out_dir);
  std::size_t counts[3] = {0, 0, 0};
  std::size_t contrast = 0, texture = 0;
  for (const auto& row : manifest) {
    counts[row.split == "train" ? 0 : row.split == "val" ? 1 : 2]++;
    contrast += row.anomaly_type == synth::AnomalyType::contrast;
    texture += row.anomaly_type == synth::AnomalyType::texture;
  }
  out << "wrote " << manifest.size() << " samples to " << out_dir << " (train " << counts[0] << ", val "
      << counts[1] << ", test " << counts[2] << ": " << contrast << " contrast, " << texture
      << " texture)\nconfig_hash " << config_hash(cfg) << '\n';
  return kOk;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& ckpt, std::string stats,
              bool quiet, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(config, err);
  train::FitOptions opts;
  opts.eval = cfg.eval;
  opts.config_hash = config_hash(cfg);
  opts.stats_csv = stats.empty() ? fs::path(ckpt + ".stats.csv") : fs::path(stats);
  if (!quiet)
    opts.on_epoch = [&out](int epoch, double train_loss, double val_loss, double seconds) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %3d  train %.6f  val %.6f  (%.1fs)\n", epoch, train_loss, val_loss,
                    seconds);
      out << buf << std::flush;
    };
  const auto result = train::fit(cfg.train, data, ckpt, opts);
  out << "checkpoint " << ckpt << "  configuration " << train::configuration_name(cfg.train.configuration)
      << "  epochs " << result.train_loss.size() << "  config_hash " << opts.config_hash << '\n';
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& report_path, std::ostream& out) {
  if (!fs::is_regular_file(ckpt)) throw Error(Errc::IoError, "checkpoint not found: " + ckpt);
  const auto report = eval::evaluate_checkpoint(ckpt, data);
  eval::write_report(report_path, report);
  out << eval::render_table({report});
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& table_path, const std::string& json_path,
               std::ostream& out) {
  std::vector<eval::MetricsReport> reports;
  for (const auto& in : inputs) reports.push_back(eval::read_report(in));
  const auto rows = eval::merge_reports(reports);
  const std::string table = eval::render_table(rows);
  std::ofstream t(table_path, std::ios::binary | std::ios::trunc);
  if (!t || !(t << table)) throw Error(Errc::IoError, "cannot write " + table_path);
  if (!json_path.empty()) {
    std::ofstream j(json_path, std::ios::binary | std::ios::trunc);
    if (!j || !(j << eval::merged_json(rows))) throw Error(Errc::IoError, "cannot write " + json_path);
  }
  out << table;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PopuSense: reconstruction-based anomaly detection with hypergraph latent refinement"};
  app.name("popusense");
  app.require_subcommand(1);
  app.get_formatter()->column_width(36);

  std::string config, out_path, data, ckpt, stats, json_path;
  std::vector<std::string> inputs;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic phantom benchmark");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out_path, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train one configuration on the normal training split");
  tr->add_option("--config", config, "Run config (JSON)")->required();
  tr->add_option("--data", data, "Dataset directory written by gen-data")->required();
  tr->add_option("--out", out_path, "Checkpoint path")->required();
  tr->add_option("--stats", stats, "Per-epoch stats CSV")->default_str("<out>.stats.csv");
  tr->add_flag("--quiet", quiet, "Do not print per-epoch progress");

  auto* ev = app.add_subcommand("eval", "Score the test split with a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint written by train")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--out", out_path, "Report JSON path")->required();

  auto* rep = app.add_subcommand("report", "Merge evaluation reports into the comparison table");
  rep->add_option("--in", inputs, "Report JSON files")->required()->expected(1, -1);
  rep->add_option("--out", out_path, "Text table path")->required();
  rep->add_option("--json", json_path, "Also write the merged rows as JSON");

  auto* defaults = app.add_subcommand("default-config", "Print the default run config");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out_path, out, err);
    if (tr->parsed()) return cmd_train(config, data, out_path, stats, quiet, out, err);
    if (ev->parsed()) return cmd_eval(ckpt, data, out_path, out);
    if (rep->parsed()) return cmd_report(inputs, out_path, json_path, out);
    if (defaults->parsed()) {
      out << default_config_json();
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kConfigError;
}

}  // namespace popusense::cli
