// Command-line front end: train, eval, predict, ablate, report.

#include <CLI11.hpp>

#include <iostream>

#include "misnet/app.hpp"

namespace {

using misnet::RunConfig;

struct CommonFlags {
  std::string config;
  std::string data_root;
  std::string out;
  int epochs = 0;
  int batch_size = 0;
  std::string backbone;
  long long seed = -1;
  std::string threshold_mode;
  bool resume = false;
  bool force = false;
  bool no_augment = false;
};

void add_train_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value run config");
  cmd->add_option("--data-root", f.data_root, "dataset root with images/ and masks/")->required();
  cmd->add_option("--out", f.out, "run directory")->required();
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "batch size");
  cmd->add_option("--backbone", f.backbone, "backbone id (res2net50, toy)");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--threshold-mode", f.threshold_mode, "validation binarization")
      ->check(CLI::IsMember({"fixed", "adaptive"}));
  cmd->add_flag("--resume", f.resume, "continue from <out>/latest.ckpt");
  cmd->add_flag("--force", f.force, "accept a checkpoint whose config hash differs");
  cmd->add_flag("--no-augment", f.no_augment, "disable data augmentation");
}

// Defaults, then the config file, then explicit flags.
RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : misnet::load_run_config(f.config);
  if (f.epochs > 0) cfg.train.epochs = f.epochs;
  if (f.batch_size > 0) cfg.train.batch_size = f.batch_size;
  if (!f.backbone.empty()) cfg.model.backbone_id = f.backbone;
  if (f.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.threshold_mode.empty()) cfg.train.threshold_mode = f.threshold_mode;
  if (f.no_augment) cfg.augment.enabled = false;
  misnet::backbone_descriptor(cfg.model.backbone_id);  // reject unknown ids early
  misnet::validate_run_config(cfg);
  return cfg;
}

misnet::TrainOptions train_options(const CommonFlags& f) {
  misnet::TrainOptions t;
  t.data_root = f.data_root;
  t.out_dir = f.out;
  t.resume = f.resume;
  t.force = f.force;
  t.log = [](const std::string& line) { std::cout << line << '\n'; };
  return t;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MISNet polyp segmentation: training, evaluation and reporting"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "train a model");
  add_train_flags(train, train_flags);

  CommonFlags ablate_flags;
  std::string variants;
  auto* ablate = app.add_subcommand("ablate", "train one run per ablation variant");
  add_train_flags(ablate, ablate_flags);
  ablate->add_option("--variants", variants,
                     "comma-separated subset of wo_lfm1,wo_lfm2,wo_hfm,wo_ssfm,wo_pam,pa_ra_only,pa_ba_only,wo_bwm");

  misnet::EvalOptions eval_opts;
  std::string eval_ckpt, eval_preds, eval_root, eval_out, eval_manifest, eval_config, eval_datasets;
  std::string eval_threshold = "fixed";
  std::string eval_emode = "max";
  auto* eval = app.add_subcommand("eval", "score a checkpoint or a directory of predictions");
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
  eval->add_option("--predictions", eval_preds, "precomputed 8-bit prediction maps (per-dataset subdirectories)");
  eval->add_option("--data-root", eval_root, "dataset root, or a directory of dataset roots")->required();
  eval->add_option("--out", eval_out, "report directory")->required();
  eval->add_option("--manifest", eval_manifest, "restrict to the test split of this manifest");
  eval->add_option("--datasets", eval_datasets, "comma-separated dataset names");
  eval->add_option("--config", eval_config, "run config that must match the checkpoint");
  eval->add_option("--threshold-mode", eval_threshold, "mDice/mIoU binarization")
      ->check(CLI::IsMember({"fixed", "adaptive"}));
  eval->add_option("--e-measure", eval_emode, "E-measure mode")->check(CLI::IsMember({"fixed", "max"}));
  eval->add_flag("--force", eval_opts.force, "accept a config hash mismatch");

  misnet::PredictOptions predict_opts;
  std::string pred_ckpt, pred_input, pred_out;
  auto* predict = app.add_subcommand("predict", "write probability maps for a directory of images");
  predict->add_option("--checkpoint", pred_ckpt, "model checkpoint")->required();
  predict->add_option("--data-root", pred_input, "image directory or dataset root")->required();
  predict->add_option("--out", pred_out, "output directory")->required();
  predict->add_flag("--dump-attention", predict_opts.dump_attention, "also write attention maps and selection weights");

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "collect MEAN rows of metric CSVs into one table");
  report->add_option("dirs", report_dirs, "directories to scan")->required();
  report->add_option("--out", report_out, "markdown file to write");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const auto cfg = resolve_config(train_flags);
      const auto r = misnet::train(cfg, train_options(train_flags));
      std::cout << "done epochs=" << r.epochs_completed << " final_loss=" << misnet::format_double(r.final_loss)
                << " best_val_mdice=" << misnet::format_double(r.best_val_mdice) << '\n';
    } else if (ablate->parsed()) {
      const auto cfg = resolve_config(ablate_flags);
      misnet::AblateOptions a;
      a.train = train_options(ablate_flags);
      a.variants = split_list(variants);
      const auto results = misnet::cmd_ablate(cfg, a);
      for (const auto& r : results) {
        std::cout << r.run_dir.string() << " best_val_mdice=" << misnet::format_double(r.best_val_mdice) << '\n';
      }
    } else if (eval->parsed()) {
      if (eval_ckpt.empty() == eval_preds.empty()) throw misnet::ConfigError("eval", "give exactly one of --checkpoint and --predictions");
      eval_opts.checkpoint = eval_ckpt;
      eval_opts.predictions = eval_preds;
      eval_opts.data_root = eval_root;
      eval_opts.out_dir = eval_out;
      eval_opts.manifest = eval_manifest;
      eval_opts.config = eval_config;
      eval_opts.datasets = split_list(eval_datasets);
      eval_opts.metric.threshold_mode = misnet::metrics::parse_threshold_mode(eval_threshold);
      eval_opts.metric.e_mode = eval_emode == "max" ? misnet::metrics::EMeasureMode::kMax : misnet::metrics::EMeasureMode::kFixed;
      const auto reports = misnet::cmd_eval(eval_opts);
      std::cout << misnet::metrics::summary_markdown(reports);
    } else if (predict->parsed()) {
      predict_opts.checkpoint = pred_ckpt;
      predict_opts.input = pred_input;
      predict_opts.out_dir = pred_out;
      const auto n = misnet::cmd_predict(predict_opts);
      std::cout << "wrote " << n << " predictions to " << pred_out << '\n';
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
      std::cout << misnet::cmd_report(dirs, report_out);
    }
  } catch (const misnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
