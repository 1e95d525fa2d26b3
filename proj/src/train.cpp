#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "misnet/app.hpp"
#include "misnet/objective.hpp"

namespace misnet {

torch::Tensor images_to_tensor(const std::vector<data::Sample>& samples, const BackboneDescriptor& desc) {
  if (samples.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = samples[0].image.rows, w = samples[0].image.cols;
  auto batch = torch::empty({static_cast<int64_t>(samples.size()), 3, h, w}, torch::kFloat);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = samples[i].image;
    if (img.type() != CV_8UC3 || img.rows != h || img.cols != w) throw ShapeError("images_to_tensor: mixed sizes");
    cv::Mat f;
    img.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto hwc = torch::from_blob(f.data, {h, w, 3}, torch::kFloat);
    batch[static_cast<int64_t>(i)].copy_(hwc.permute({2, 0, 1}));
  }
  auto mean = torch::tensor({desc.norm_mean[0], desc.norm_mean[1], desc.norm_mean[2]}, torch::kFloat).view({1, 3, 1, 1});
  auto std = torch::tensor({desc.norm_std[0], desc.norm_std[1], desc.norm_std[2]}, torch::kFloat).view({1, 3, 1, 1});
  return (batch - mean) / std;
}

torch::Tensor masks_to_tensor(const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw ShapeError("masks_to_tensor: empty batch");
  const int h = samples[0].mask.rows, w = samples[0].mask.cols;
  auto batch = torch::empty({static_cast<int64_t>(samples.size()), 1, h, w}, torch::kFloat);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& m = samples[i].mask;
    if (m.type() != CV_8U || m.rows != h || m.cols != w) throw ShapeError("masks_to_tensor: mixed sizes");
    cv::Mat f;
    m.convertTo(f, CV_32F);
    batch[static_cast<int64_t>(i)][0].copy_(torch::from_blob(f.data, {h, w}, torch::kFloat));
  }
  return batch;
}

ProbMap tensor_to_prob_map(const torch::Tensor& probs) {
  auto t = probs.detach().to(torch::kDouble).contiguous();
  while (t.dim() > 2) t = t[0];
  t = t.clamp(0.0, 1.0).contiguous();
  const auto* p = t.data_ptr<double>();
  return ProbMap(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), std::vector<double>(p, p + t.numel()));
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr const char* kFormat = "misnet-checkpoint";

template <typename T>
T read_value(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v)) throw DataError("checkpoint: missing field '" + key + "'");
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.isString()) throw DataError("checkpoint: field '" + key + "' is not a string");
    return v.toStringRef();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.isDouble()) throw DataError("checkpoint: field '" + key + "' is not a real");
    return v.toDouble();
  } else {
    if (!v.isInt()) throw DataError("checkpoint: field '" + key + "' is not an integer");
    return static_cast<T>(v.toInt());
  }
}

CheckpointMeta read_meta(torch::serialize::InputArchive& ar) {
  if (read_value<std::string>(ar, "format") != kFormat) throw DataError("checkpoint: unknown format");
  CheckpointMeta m;
  m.version = read_value<int>(ar, "version");
  if (m.version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(m.version));
  }
  m.config_hash = read_value<std::string>(ar, "config_hash");
  m.config_text = read_value<std::string>(ar, "config");
  m.epoch = read_value<int>(ar, "epoch");
  m.step = read_value<int>(ar, "step");
  m.best_val_mdice = read_value<double>(ar, "best_val_mdice");
  return m;
}

void open_archive(torch::serialize::InputArchive& ar, const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("checkpoint not found: " + path.string());
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("checkpoint is corrupt or unreadable: " + path.string());
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, MisNet& model,
                     torch::optim::Optimizer* optimizer) {
  torch::serialize::OutputArchive ar;
  ar.write("format", c10::IValue(std::string(kFormat)));
  ar.write("version", c10::IValue(static_cast<int64_t>(meta.version)));
  ar.write("config_hash", c10::IValue(meta.config_hash));
  ar.write("config", c10::IValue(meta.config_text));
  ar.write("epoch", c10::IValue(static_cast<int64_t>(meta.epoch)));
  ar.write("step", c10::IValue(static_cast<int64_t>(meta.step)));
  ar.write("best_val_mdice", c10::IValue(meta.best_val_mdice));
  torch::serialize::OutputArchive model_ar;
  model->save(model_ar);
  ar.write("model", model_ar);
  if (optimizer) {
    torch::serialize::OutputArchive opt_ar;
    optimizer->save(opt_ar);
    ar.write("optimizer", opt_ar);
  }
  const fs::path tmp = path.string() + ".tmp";
  try {
    ar.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot write checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  torch::serialize::InputArchive ar;
  open_archive(ar, path);
  return read_meta(ar);
}

CheckpointMeta load_checkpoint(const fs::path& path, MisNet& model, torch::optim::Optimizer* optimizer, bool force) {
  torch::serialize::InputArchive ar;
  open_archive(ar, path);
  const auto meta = read_meta(ar);
  const auto expected = model_config_hash(model->config());
  if (meta.config_hash != expected && !force) {
    throw ConfigError("checkpoint", "config hash " + meta.config_hash + " does not match " + expected +
                                        " (use --force to load anyway)");
  }
  try {
    torch::serialize::InputArchive model_ar;
    if (!ar.try_read("model", model_ar)) throw DataError("checkpoint: no model state");
    model->load(model_ar);
    if (optimizer) {
      torch::serialize::InputArchive opt_ar;
      if (ar.try_read("optimizer", opt_ar)) optimizer->load(opt_ar);
    }
  } catch (const c10::Error& e) {
    throw DataError("checkpoint state does not fit the model: " + std::string(e.what_without_backtrace()));
  }
  return meta;
}

std::pair<MisNet, CheckpointMeta> model_from_checkpoint(const fs::path& path) {
  const auto meta = read_checkpoint_meta(path);
  const auto cfg = parse_run_config(meta.config_text);
  MisNet model(cfg.model);
  load_checkpoint(path, model, nullptr, false);
  model->eval();
  return {model, meta};
}

// ---- training --------------------------------------------------------------

std::string format_step_log(const StepLog& s) {
  return "epoch=" + std::to_string(s.epoch) + " step=" + std::to_string(s.step) + " lr=" + format_double(s.lr) +
         " total=" + format_double(s.total) + " fuse=" + format_double(s.fuse) + " l3=" + format_double(s.l3) +
         " l4=" + format_double(s.l4) + " l5=" + format_double(s.l5);
}

ProbMap predict_image(MisNet& model, const cv::Mat& rgb, int train_size, SideOutputs* outputs) {
  torch::NoGradGuard no_grad;
  data::Sample s = data::resize_only(rgb, cv::Mat(), train_size);
  auto x = images_to_tensor({s}, model->backbone->descriptor());
  auto out = model->forward(x);
  auto probs = torch::sigmoid(resize_to(out.m3, {rgb.rows, rgb.cols}));
  if (outputs) *outputs = out;
  return tensor_to_prob_map(probs);
}

metrics::MetricReport evaluate_model(MisNet& model, const std::vector<data::SamplePair>& pairs,
                                     const std::string& dataset_id, int train_size,
                                     const metrics::MetricOptions& opts, bool mdice_only) {
  const bool was_training = model->is_training();
  model->eval();
  std::vector<metrics::ScoredPair> scored;
  scored.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto truth = data::to_binary_mask(data::load_mask(p.mask));
    const auto image = data::load_image(p.image);
    if (image.rows != truth.rows() || image.cols != truth.cols()) {
      throw DataError("image and mask sizes differ for '" + p.stem + "'");
    }
    scored.push_back({p.stem, predict_image(model, image, train_size), std::move(truth)});
  }
  model->train(was_training);
  if (!mdice_only) return metrics::evaluate_pairs(dataset_id, scored, opts);

  metrics::MetricReport report;
  report.dataset_id = dataset_id;
  for (const auto& s : scored) {
    metrics::ImageMetrics m;
    m.id = s.id;
    const auto o = metrics::mdice_miou(s.prediction, s.truth,
                                       metrics::binarization_threshold(s.prediction, opts.threshold_mode));
    m.mdice = o.dice;
    m.miou = o.iou;
    report.per_image.push_back(m);
  }
  metrics::finalize_report(report);
  return report;
}

namespace {

class RunLog {
 public:
  RunLog(const fs::path& path, bool append, std::function<void(const std::string&)> sink)
      : out_(path, append ? std::ios::app : std::ios::trunc), sink_(std::move(sink)) {
    if (!out_) throw DataError("cannot open log " + path.string());
  }
  void line(const std::string& s) {
    out_ << s << '\n';
    out_.flush();
    if (sink_) sink_(s);
  }

 private:
  std::ofstream out_;
  std::function<void(const std::string&)> sink_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::vector<data::Sample> load_batch(const std::vector<data::SamplePair>& pairs, const std::vector<std::size_t>& idx,
                                     const RunConfig& cfg, int epoch) {
  std::vector<data::Sample> batch(idx.size());
  // Each sample owns its random stream, so decoding and augmentation can run
  // in any order without changing the result.
  cv::parallel_for_(cv::Range(0, static_cast<int>(idx.size())), [&](const cv::Range& r) {
    for (int i = r.start; i < r.end; ++i) {
      const auto& p = pairs[idx[i]];
      auto rng = data::sample_rng(cfg.train.seed, static_cast<std::uint64_t>(epoch), idx[i]);
      batch[i] = data::augment(data::load_image(p.image), data::load_mask(p.mask), cfg.augment,
                               cfg.model.train_size, rng);
      batch[i].stem = p.stem;
    }
  });
  return batch;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  validate_run_config(cfg);
  fs::create_directories(opts.out_dir);
  const std::string config_text = serialize_run_config(cfg);
  write_text(opts.out_dir / "config.txt", config_text);

  const fs::path latest = opts.out_dir / "latest.ckpt";
  const fs::path best = opts.out_dir / "best.ckpt";
  const bool resuming = opts.resume && fs::exists(latest);
  RunLog log(opts.out_dir / "train.log", resuming, opts.log);

  const auto manifest = data::build_manifest(opts.data_root, cfg.train.seed);
  data::write_manifest(manifest, opts.out_dir / "manifest.tsv");
  if (manifest.train.empty()) throw DataError("training split is empty");
  const auto& val_pairs = manifest.val.empty() ? manifest.train : manifest.val;

  torch::manual_seed(cfg.train.seed);
  MisNet model(cfg.model);
  if (cfg.train.load_pretrained) {
    const auto used = load_pretrained_backbone(model);
    log.line("pretrained=" + (used ? used->string() : std::string("none")));
  }
  OptimizerOptions oo{cfg.train.base_lr, cfg.train.weight_decay, cfg.train.grad_clip};
  auto optimizer = make_optimizer(model, oo);

  CheckpointMeta meta;
  meta.config_hash = model_config_hash(cfg.model);
  meta.config_text = config_text;
  if (resuming) {
    const auto restored = load_checkpoint(latest, model, optimizer.get(), opts.force);
    meta.epoch = restored.epoch;
    meta.step = restored.step;
    meta.best_val_mdice = restored.best_val_mdice;
    log.line("resume=" + latest.string() + " epoch=" + std::to_string(meta.epoch));
  }
  log.line("train=" + std::to_string(manifest.train.size()) + " val=" + std::to_string(manifest.val.size()) +
           " test=" + std::to_string(manifest.test.size()));

  LossOptions lo{cfg.train.weight_window, cfg.train.weight_multiplier, cfg.train.iou_smooth};
  metrics::MetricOptions mo;
  mo.threshold_mode = metrics::parse_threshold_mode(cfg.train.threshold_mode);

  TrainResult result;
  result.run_dir = opts.out_dir;
  bool first = true;
  const std::size_t batch_size = static_cast<std::size_t>(cfg.train.batch_size);
  for (int epoch = meta.epoch; epoch < cfg.train.epochs; ++epoch) {
    const double lr = poly_lr(epoch, cfg.train.epochs, cfg.train.base_lr, cfg.train.lr_power);
    set_learning_rate(*optimizer, lr);
    model->train();

    std::vector<std::size_t> order(manifest.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.train.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    int steps_this_epoch = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      if (cfg.train.max_steps_per_epoch > 0 && steps_this_epoch >= cfg.train.max_steps_per_epoch) break;
      const std::vector<std::size_t> idx(order.begin() + begin, order.begin() + std::min(order.size(), begin + batch_size));
      const auto batch = load_batch(manifest.train, idx, cfg, epoch);
      auto x = images_to_tensor(batch, model->backbone->descriptor());
      auto y = masks_to_tensor(batch);

      auto out = model->forward(x);
      auto report = total_loss(out, y, lo);
      optimizer->zero_grad();
      report.total.backward();
      if (cfg.train.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.train.grad_clip);
      optimizer->step();

      ++meta.step;
      ++steps_this_epoch;
      const double total = report.total.item<double>();
      if (first) {
        result.initial_loss = total;
        first = false;
      }
      result.final_loss = total;
      log.line(format_step_log({epoch, meta.step, lr, total, report.fuse, report.l3, report.l4, report.l5}));
    }

    const double val = evaluate_model(model, val_pairs, "val", cfg.model.train_size, mo, true).mean.mdice;
    meta.epoch = epoch + 1;
    const bool improved = val > meta.best_val_mdice;
    if (improved) meta.best_val_mdice = val;
    log.line("epoch=" + std::to_string(epoch) + " val_mdice=" + format_double(val) +
             " best_val_mdice=" + format_double(meta.best_val_mdice));
    save_checkpoint(latest, meta, model, optimizer.get());
    if (improved) save_checkpoint(best, meta, model, optimizer.get());
  }
  result.epochs_completed = meta.epoch;
  result.steps = meta.step;
  result.best_val_mdice = meta.best_val_mdice;
  return result;
}

}  // namespace misnet
