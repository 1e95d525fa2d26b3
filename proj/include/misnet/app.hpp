#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "misnet/datapipe.hpp"
#include "misnet/decoder.hpp"
#include "misnet/metrics.hpp"
#include "misnet/run_config.hpp"

namespace misnet {

namespace fs = std::filesystem;

// ---- tensors ---------------------------------------------------------------

/// (B,3,H,W) float batch normalized with the backbone's mean/std.
torch::Tensor images_to_tensor(const std::vector<data::Sample>& samples, const BackboneDescriptor& desc);
/// (B,1,H,W) float batch of {0,1} masks.
torch::Tensor masks_to_tensor(const std::vector<data::Sample>& samples);
/// First channel of a (1,1,H,W) or (H,W) probability tensor.
ProbMap tensor_to_prob_map(const torch::Tensor& probs);

// ---- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int version = kCheckpointVersion;
  std::string config_hash;  // model_config_hash of the stored config
  std::string config_text;  // full run config
  int epoch = 0;            // completed epochs
  int step = 0;             // optimizer steps taken
  double best_val_mdice = -1;
};

/// Writes atomically (temporary file + rename).
void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, MisNet& model,
                     torch::optim::Optimizer* optimizer = nullptr);

/// Throws DataError when the file is missing, truncated or not a checkpoint.
CheckpointMeta read_checkpoint_meta(const fs::path& path);

/// Restores model (and optimizer) state. Refuses a checkpoint whose config
/// hash differs from the model's unless `force` is set.
CheckpointMeta load_checkpoint(const fs::path& path, MisNet& model, torch::optim::Optimizer* optimizer = nullptr,
                               bool force = false);

/// Builds a model from the config stored in a checkpoint and loads it.
std::pair<MisNet, CheckpointMeta> model_from_checkpoint(const fs::path& path);

// ---- training --------------------------------------------------------------

struct StepLog {
  int epoch = 0;
  int step = 0;  // global optimizer step
  double lr = 0;
  double total = 0, fuse = 0, l3 = 0, l4 = 0, l5 = 0;
};

std::string format_step_log(const StepLog& s);

struct TrainOptions {
  fs::path data_root;
  fs::path out_dir;
  bool resume = false;
  bool force = false;
  std::function<void(const std::string&)> log;  // extra sink for log lines
};

struct TrainResult {
  int epochs_completed = 0;
  int steps = 0;
  double initial_loss = 0;
  double final_loss = 0;
  double best_val_mdice = -1;
  fs::path run_dir;
};

/// Writes the resolved config, the manifest and the log, then trains with
/// validation every epoch. Keeps `latest.ckpt` and `best.ckpt`.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts);

/// Runs the model over `pairs` at the train size and scores predictions at
/// mask resolution.
metrics::MetricReport evaluate_model(MisNet& model, const std::vector<data::SamplePair>& pairs,
                                     const std::string& dataset_id, int train_size,
                                     const metrics::MetricOptions& opts, bool mdice_only = false);

/// Probability map at the source image's resolution.
ProbMap predict_image(MisNet& model, const cv::Mat& rgb, int train_size, SideOutputs* outputs = nullptr);

// ---- commands --------------------------------------------------------------

struct EvalOptions {
  fs::path checkpoint;       // ignored when `predictions` is set
  fs::path predictions;      // directory of precomputed 8-bit maps
  fs::path data_root;
  fs::path out_dir;
  fs::path manifest;         // optional: restrict to its test split
  std::vector<std::string> datasets;  // empty: every dataset under data_root
  fs::path config;           // optional: must match the checkpoint
  bool force = false;
  metrics::MetricOptions metric;
};

/// Datasets found under `root`: `root` itself when it holds images/ and
/// masks/, otherwise each such subdirectory, sorted by name.
std::vector<std::pair<std::string, fs::path>> discover_datasets(const fs::path& root);

/// Writes `<dataset>.csv` and `<dataset>.md` per dataset plus `summary.md`.
std::vector<metrics::MetricReport> cmd_eval(const EvalOptions& opts);

struct PredictOptions {
  fs::path checkpoint;
  fs::path input;  // image directory, or a dataset root with images/
  fs::path out_dir;
  bool dump_attention = false;
};

/// Writes `<stem>.png` 8-bit probability maps; with `dump_attention`,
/// `<stem>_l{3,4,5}_reverse.png`/`_boundary.png` and `<stem>_selection.csv`.
std::size_t cmd_predict(const PredictOptions& opts);

struct AblateOptions {
  TrainOptions train;
  std::vector<std::string> variants;  // empty: all
};

std::vector<TrainResult> cmd_ablate(const RunConfig& base, const AblateOptions& opts);

/// Collects the MEAN rows of every metric CSV below `dirs` into one markdown
/// table; the method column is the CSV's parent directory name.
std::string cmd_report(const std::vector<fs::path>& dirs, const fs::path& out_file);

}  // namespace misnet
