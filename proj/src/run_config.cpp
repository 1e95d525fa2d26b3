#include "misnet/run_config.hpp"

#include <fstream>
#include <sstream>

#include "misnet/metrics.hpp"

namespace misnet {

void validate_run_config(const RunConfig& cfg) {
  validate_config(cfg.model);
  const auto& t = cfg.train;
  if (t.epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (t.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(t.base_lr > 0)) throw ConfigError("base_lr", "must be > 0");
  if (t.weight_decay < 0) throw ConfigError("weight_decay", "must be >= 0");
  if (t.lr_power < 0) throw ConfigError("lr_power", "must be >= 0");
  if (t.weight_window < 1 || t.weight_window % 2 == 0) throw ConfigError("weight_window", "must be a positive odd integer");
  if (t.max_steps_per_epoch < 0) throw ConfigError("max_steps_per_epoch", "must be >= 0");
  metrics::parse_threshold_mode(t.threshold_mode);
  data::validate_augmentation(cfg.augment);
}

std::string serialize_run_config(const RunConfig& cfg) {
  auto entries = model_config_entries(cfg.model);
  const auto& t = cfg.train;
  const std::vector<std::pair<std::string, std::string>> train{
      {"epochs", std::to_string(t.epochs)},
      {"batch_size", std::to_string(t.batch_size)},
      {"base_lr", format_double(t.base_lr)},
      {"weight_decay", format_double(t.weight_decay)},
      {"lr_power", format_double(t.lr_power)},
      {"grad_clip", format_double(t.grad_clip)},
      {"seed", std::to_string(t.seed)},
      {"weight_window", std::to_string(t.weight_window)},
      {"weight_multiplier", format_double(t.weight_multiplier)},
      {"iou_smooth", format_double(t.iou_smooth)},
      {"threshold_mode", t.threshold_mode},
      {"max_steps_per_epoch", std::to_string(t.max_steps_per_epoch)},
      {"load_pretrained", t.load_pretrained ? "true" : "false"},
  };
  entries.insert(entries.end(), train.begin(), train.end());
  const auto aug = data::augmentation_entries(cfg.augment);
  entries.insert(entries.end(), aug.begin(), aug.end());
  return format_key_values(entries);
}

RunConfig parse_run_config(const std::string& text) {
  KeyValues kv = parse_key_values(text);
  RunConfig cfg;
  cfg.model = model_config_from(kv);
  auto& t = cfg.train;
  t.epochs = take_int(kv, "epochs", t.epochs);
  t.batch_size = take_int(kv, "batch_size", t.batch_size);
  t.base_lr = take_double(kv, "base_lr", t.base_lr);
  t.weight_decay = take_double(kv, "weight_decay", t.weight_decay);
  t.lr_power = take_double(kv, "lr_power", t.lr_power);
  t.grad_clip = take_double(kv, "grad_clip", t.grad_clip);
  const std::string seed = take_string(kv, "seed", std::to_string(t.seed));
  try {
    std::size_t used = 0;
    t.seed = std::stoull(seed, &used);
    if (used != seed.size()) throw std::invalid_argument(seed);
  } catch (const std::exception&) {
    throw ConfigError("seed", "not an unsigned integer: '" + seed + "'");
  }
  t.weight_window = take_int(kv, "weight_window", t.weight_window);
  t.weight_multiplier = take_double(kv, "weight_multiplier", t.weight_multiplier);
  t.iou_smooth = take_double(kv, "iou_smooth", t.iou_smooth);
  t.threshold_mode = take_string(kv, "threshold_mode", t.threshold_mode);
  t.max_steps_per_epoch = take_int(kv, "max_steps_per_epoch", t.max_steps_per_epoch);
  t.load_pretrained = take_bool(kv, "load_pretrained", t.load_pretrained);
  cfg.augment = data::augmentation_from(kv);
  if (!kv.empty()) throw ConfigError(kv.begin()->first, "unknown key");
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"wo_lfm1", "wo_lfm2",    "wo_hfm",     "wo_ssfm",
                                              "wo_pam",  "pa_ra_only", "pa_ba_only", "wo_bwm"};
  return names;
}

ModelConfig apply_ablation(ModelConfig base, const std::string& variant) {
  auto& f = base.flags;
  if (variant == "wo_lfm1") {
    // The low-level branch no longer reaches the guidance map, which leaves
    // nothing for selective fusion to choose between.
    f.use_lfm_ssfm = false;
    f.use_ssfm = false;
  } else if (variant == "wo_lfm2") {
    f.use_lfm_bwm = false;
  } else if (variant == "wo_hfm") {
    f.use_hfm = false;
    f.use_ssfm = false;
  } else if (variant == "wo_ssfm") {
    f.use_ssfm = false;
  } else if (variant == "wo_pam") {
    f.use_pam = false;
  } else if (variant == "pa_ra_only") {
    f.use_pa_ba = false;
  } else if (variant == "pa_ba_only") {
    f.use_pa_ra = false;
  } else if (variant == "wo_bwm") {
    f.use_bwm = false;
  } else {
    throw ConfigError("variant", "unknown ablation variant '" + variant + "'");
  }
  return base;
}

}  // namespace misnet
