#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "misnet/core.hpp"
#include "misnet/datapipe.hpp"

namespace misnet {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  double base_lr = 1e-5;
  double weight_decay = 1e-5;
  double lr_power = 0.9;
  double grad_clip = 0.5;
  std::uint64_t seed = 3407;
  int weight_window = 31;
  double weight_multiplier = 5.0;
  double iou_smooth = 1.0;
  std::string threshold_mode = "fixed";
  int max_steps_per_epoch = 0;  // 0: the whole training split
  bool load_pretrained = true;

  bool operator==(const TrainConfig&) const = default;
};

/// Everything one training run depends on, as a flat key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  data::AugmentationConfig augment;

  bool operator==(const RunConfig&) const = default;
};

void validate_run_config(const RunConfig& cfg);

std::string serialize_run_config(const RunConfig& cfg);
/// Unknown keys are an error; missing keys keep their defaults.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Ablation variant names, in table order.
const std::vector<std::string>& ablation_variants();

/// Flags of the named variant applied on top of `base` (all modules on).
ModelConfig apply_ablation(ModelConfig base, const std::string& variant);

}  // namespace misnet
