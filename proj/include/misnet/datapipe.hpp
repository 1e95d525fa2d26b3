#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "misnet/core.hpp"

namespace misnet::data {

namespace fs = std::filesystem;

enum class Split { kTrain, kVal, kTest };

Split parse_split(const std::string& s);
std::string to_string(Split split);

struct SamplePair {
  std::string stem;
  fs::path image;
  fs::path mask;
};

/// Pairs every `<root>/images/<stem>.{png,jpg,jpeg}` with `<root>/masks/<stem>.*`,
/// sorted by stem. Throws DataError on a missing partner or an empty dataset.
std::vector<SamplePair> scan_pairs(const fs::path& root);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// 80/10/10 split sizes: train = floor(0.8 n), val = floor(0.1 n), test gets
/// the remainder.
SplitCounts split_counts(std::size_t n);

struct DatasetManifest {
  fs::path root;
  std::string dataset_id = "custom";
  std::vector<SamplePair> train, val, test;

  const std::vector<SamplePair>& split(Split s) const;
  SplitCounts counts() const { return {train.size(), val.size(), test.size()}; }
  bool operator==(const DatasetManifest& o) const;
};

/// Deterministic shuffled split of `scan_pairs(root)`. Each split stays
/// sorted by stem.
DatasetManifest build_manifest(const fs::path& root, std::uint64_t split_seed, const std::string& dataset_id = "custom");

/// Every pair of `root` placed in one split (used for the benchmark test sets).
DatasetManifest single_split_manifest(const fs::path& root, Split split, const std::string& dataset_id);

/// `split<TAB>image<TAB>mask` lines, paths relative to the manifest root.
std::string format_manifest(const DatasetManifest& m);
void write_manifest(const DatasetManifest& m, const fs::path& path);
DatasetManifest read_manifest(const fs::path& path, const fs::path& root);

/// 8-bit RGB image (CV_8UC3).
cv::Mat load_image(const fs::path& path);
/// CV_8U mask with values {0,1}; source pixels >= 128 count as foreground.
cv::Mat load_mask(const fs::path& path);
/// Grayscale 8-bit prediction as probabilities, optionally resized
/// (bilinear) to `rows` x `cols`.
ProbMap load_prob_map(const fs::path& path, int rows = 0, int cols = 0);

BinaryMask to_binary_mask(const cv::Mat& mask01);
ProbMap to_prob_map(const cv::Mat& gray);
cv::Mat from_binary_mask(const BinaryMask& m);

/// Writes a probability map as an 8-bit grayscale PNG (rounded).
void write_prob_png(const ProbMap& p, const fs::path& path);

struct AugmentationConfig {
  bool enabled = true;
  bool scale_crop = true;
  double scale_min = 0.75, scale_max = 1.25;
  int crop_size = 0;  // 0: round(0.75 * train_size)
  bool flip = true;
  double flip_p = 0.5;  // horizontal and vertical, independently
  bool photometric = true;
  double noise_std_max = 0.05;  // fraction of the 8-bit range
  double brightness_min = 0.8, brightness_max = 1.2;
  double contrast_min = 0.8, contrast_max = 1.2;
  double sharpness_min = 0.8, sharpness_max = 1.2;
  bool morphology = true;
  double morph_p = 0.5;
  int morph_kernel_min = 2, morph_kernel_max = 5;

  bool operator==(const AugmentationConfig&) const = default;
};

void validate_augmentation(const AugmentationConfig& cfg);
std::vector<std::pair<std::string, std::string>> augmentation_entries(const AugmentationConfig& cfg);
/// Consumes the `augment.*` keys of `kv`.
AugmentationConfig augmentation_from(KeyValues& kv);

enum class Morph { kNone, kDilate, kErode };

/// Every random choice of one augmentation call, drawn before any pixel is
/// touched so the same plan can be replayed on another input.
struct AugmentPlan {
  int size = 0;  // output side (train size)
  bool crop = false;
  int scaled = 0;  // side after scaling
  int crop_side = 0;
  int crop_y = 0, crop_x = 0;
  bool hflip = false, vflip = false;
  bool photometric = false;
  double brightness = 1, contrast = 1, sharpness = 1, noise_std = 0;
  std::uint64_t noise_seed = 0;
  Morph morph = Morph::kNone;
  int morph_kernel = 0;
};

AugmentPlan sample_plan(const AugmentationConfig& cfg, int train_size, std::mt19937_64& rng);

/// Geometric part of the plan: resize to the train size, scale, crop, flip,
/// resize back. Bilinear for images, pixel-centred nearest for masks ({0,1} stays binary).
cv::Mat apply_geometry(const cv::Mat& src, const AugmentPlan& plan, bool is_mask);

/// Brightness, contrast, sharpness, then Gaussian noise, on an 8-bit RGB image.
cv::Mat apply_photometric(const cv::Mat& image, const AugmentPlan& plan);

/// Dilation or erosion with a k x k box. An erosion that would empty a
/// nonempty mask is skipped.
cv::Mat apply_morphology(const cv::Mat& mask01, Morph op, int kernel);

struct Sample {
  std::string stem;
  cv::Mat image;  // CV_8UC3 RGB, size x size
  cv::Mat mask;   // CV_8U {0,1}, size x size
};

/// Full training-time augmentation of one aligned pair.
Sample augment(const cv::Mat& image, const cv::Mat& mask, const AugmentationConfig& cfg, int train_size,
               std::mt19937_64& rng);

/// Resize-only preparation (evaluation path and disabled augmentation).
Sample resize_only(const cv::Mat& image, const cv::Mat& mask, int train_size);

/// Independent stream for one sample of one epoch.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

}  // namespace misnet::data
