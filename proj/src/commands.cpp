#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "misnet/app.hpp"

namespace misnet {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool is_dataset_dir(const fs::path& p) { return fs::is_directory(p / "images") && fs::is_directory(p / "masks"); }

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

}  // namespace

std::vector<std::pair<std::string, fs::path>> discover_datasets(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("data root not found: " + root.string());
  if (is_dataset_dir(root)) {
    const auto canonical = fs::weakly_canonical(root);
    return {{canonical.filename().string(), root}};
  }
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && is_dataset_dir(entry.path())) out.emplace_back(entry.path().filename().string(), entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no dataset (images/ + masks/) under " + root.string());
  return out;
}

std::vector<metrics::MetricReport> cmd_eval(const EvalOptions& opts) {
  auto datasets = discover_datasets(opts.data_root);
  if (!opts.datasets.empty()) {
    std::vector<std::pair<std::string, fs::path>> chosen;
    for (const auto& name : opts.datasets) {
      auto it = std::find_if(datasets.begin(), datasets.end(), [&](const auto& d) { return d.first == name; });
      if (it == datasets.end()) throw DataError("dataset not found: " + name);
      chosen.push_back(*it);
    }
    datasets = std::move(chosen);
  }

  std::optional<MisNet> model;
  int train_size = 0;
  if (opts.predictions.empty()) {
    auto [net, meta] = model_from_checkpoint(opts.checkpoint);
    if (!opts.config.empty()) {
      const auto cfg = load_run_config(opts.config);
      if (model_config_hash(cfg.model) != meta.config_hash && !opts.force) {
        throw ConfigError("config", "does not match the checkpoint's config (use --force to evaluate anyway)");
      }
    }
    train_size = net->config().train_size;
    model = net;
  }

  fs::create_directories(opts.out_dir);
  std::vector<metrics::MetricReport> reports;
  for (const auto& [id, dir] : datasets) {
    metrics::MetricReport report;
    if (model) {
      auto pairs = opts.manifest.empty() ? data::scan_pairs(dir) : data::read_manifest(opts.manifest, dir).test;
      if (pairs.empty()) throw DataError("no test images for dataset " + id);
      report = evaluate_model(*model, pairs, id, train_size, opts.metric);
    } else {
      const fs::path nested = opts.predictions / id;
      const fs::path pred_dir = fs::is_directory(nested) ? nested : opts.predictions;
      report = metrics::evaluate_dataset(pred_dir, dir / "masks", id, opts.metric);
    }
    write_text(opts.out_dir / (id + ".csv"), metrics::report_csv(report));
    write_text(opts.out_dir / (id + ".md"), metrics::report_markdown(report));
    reports.push_back(std::move(report));
  }
  write_text(opts.out_dir / "summary.md", metrics::summary_markdown(reports));
  return reports;
}

std::size_t cmd_predict(const PredictOptions& opts) {
  auto [model, meta] = model_from_checkpoint(opts.checkpoint);
  const fs::path dir = fs::is_directory(opts.input / "images") ? opts.input / "images" : opts.input;
  if (!fs::is_directory(dir)) throw DataError("input directory not found: " + opts.input.string());
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image(entry.path())) images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  fs::create_directories(opts.out_dir);
  for (const auto& path : images) {
    const auto stem = path.stem().string();
    SideOutputs outputs;
    const auto prob = predict_image(model, data::load_image(path), model->config().train_size, &outputs);
    data::write_prob_png(prob, opts.out_dir / (stem + ".png"));
    if (opts.dump_attention) {
      for (int i = 0; i < 3; ++i) {
        export_attention_maps(outputs.attention[i], opts.out_dir, stem + "_l" + std::to_string(i + 3));
      }
      if (outputs.selection.g.defined()) dump_selection_weights(outputs.selection, opts.out_dir / (stem + "_selection.csv"));
    }
  }
  return images.size();
}

std::vector<TrainResult> cmd_ablate(const RunConfig& base, const AblateOptions& opts) {
  const auto& variants = opts.variants.empty() ? ablation_variants() : opts.variants;
  std::vector<RunConfig> configs;
  for (const auto& v : variants) {
    RunConfig cfg = base;
    cfg.model = apply_ablation(base.model, v);
    validate_run_config(cfg);
    configs.push_back(cfg);
  }
  std::vector<TrainResult> results;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    TrainOptions t = opts.train;
    t.out_dir = opts.train.out_dir / variants[i];
    results.push_back(train(configs[i], t));
  }
  return results;
}

std::string cmd_report(const std::vector<fs::path>& dirs, const fs::path& out_file) {
  std::vector<std::pair<std::string, metrics::MetricReport>> rows;
  for (const auto& dir : dirs) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
      const auto text = read_text(entry.path());
      if (text.rfind("image,mDice,", 0) != 0) continue;  // not a metric report
      auto report = metrics::parse_report_csv(text, entry.path().stem().string());
      rows.emplace_back(entry.path().parent_path().filename().string(), std::move(report));
    }
  }
  if (rows.empty()) throw DataError("no metric reports found");
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.second.dataset_id, a.first) < std::tie(b.second.dataset_id, b.first);
  });
  const auto table = metrics::summary_markdown(rows);
  if (!out_file.empty()) {
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    write_text(out_file, table);
  }
  return table;
}

}  // namespace misnet
