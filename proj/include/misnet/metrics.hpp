#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "misnet/core.hpp"

namespace misnet::metrics {

enum class ThresholdMode { kFixed, kAdaptive };

ThresholdMode parse_threshold_mode(const std::string& s);
std::string to_string(ThresholdMode mode);

/// Threshold used to binarize S: 0.5 (fixed) or min(2 * mean(S), 1).
double binarization_threshold(const ProbMap& s, ThresholdMode mode);

struct Overlap {
  double dice = 0;
  double iou = 0;
};

/// Dice and IoU of S >= threshold against G. Both are 1 when the binarized
/// prediction and G are empty.
Overlap mdice_miou(const ProbMap& s, const BinaryMask& g, double threshold = 0.5);

struct WeightedFResult {
  double value = 0;
  bool undefined = false;  // G has no foreground; value is reported as 0
};

/// Weighted F-measure with Gaussian dependency (7x7, sigma 5) and
/// distance-based importance of background errors; beta^2 = 1.
WeightedFResult weighted_fmeasure(const ProbMap& s, const BinaryMask& g);

/// Structure measure alpha * S_object + (1 - alpha) * S_region, clamped to
/// [0, 1]. All-background / all-foreground G use 1 - mean(S) / mean(S).
double s_measure(const ProbMap& s, const BinaryMask& g, double alpha = 0.5);

/// Object-aware and region-aware terms of the structure measure for a G
/// with both classes present.
double s_object(const ProbMap& s, const BinaryMask& g);
double s_region(const ProbMap& s, const BinaryMask& g);

enum class EMeasureMode { kFixed, kMax };

/// Thresholds scanned in max mode: k / 256 for k = 1..255 (contains 0.5).
inline constexpr int kEMeasureThresholds = 255;

/// Mean enhanced-alignment value of S >= t against G. Fixed mode uses t = 0.5,
/// max mode the best of the 255 scanned thresholds.
double e_measure(const ProbMap& s, const BinaryMask& g, EMeasureMode mode = EMeasureMode::kMax);
double e_measure_at(const ProbMap& s, const BinaryMask& g, double threshold);

double mae(const ProbMap& s, const BinaryMask& g);

/// Euclidean distance transform to the nearest foreground pixel. `nearest`
/// receives the column-major linear index (col * rows + row) of that pixel;
/// ties go to the smallest such index. Foreground pixels map to themselves.
void distance_to_foreground(const BinaryMask& g, std::vector<double>& distance, std::vector<std::size_t>& nearest);

struct ImageMetrics {
  std::string id;
  double mdice = 0, miou = 0, wfm = 0, sm = 0, em = 0, mae = 0;
  std::string flags;  // e.g. "empty_gt" when a metric fell back to a convention
};

struct MetricOptions {
  ThresholdMode threshold_mode = ThresholdMode::kFixed;
  EMeasureMode e_mode = EMeasureMode::kMax;
  double alpha = 0.5;
};

ImageMetrics evaluate_image(const std::string& id, const ProbMap& s, const BinaryMask& g, const MetricOptions& opts = {});

struct MetricReport {
  std::string dataset_id;
  std::vector<ImageMetrics> per_image;
  ImageMetrics mean;  // id "MEAN"
};

struct ScoredPair {
  std::string id;
  ProbMap prediction;
  BinaryMask truth;
};

/// Scores the pairs in parallel and returns the rows in input order with
/// their means.
MetricReport evaluate_pairs(const std::string& dataset_id, const std::vector<ScoredPair>& pairs,
                            const MetricOptions& opts = {});

/// Scores every 8-bit prediction in `pred_dir` against the mask with the same
/// stem in `gt_dir`, at mask resolution (predictions are resized bilinearly).
/// Rows are ordered by stem. Throws DataError on unmatched stems or
/// unreadable files.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              const std::string& dataset_id, const MetricOptions& opts = {});

/// Fills `mean` with the arithmetic means of `per_image`.
void finalize_report(MetricReport& report);

/// Column headers in table order.
const std::vector<std::string>& metric_columns();

std::string report_csv(const MetricReport& report);
std::string report_markdown(const MetricReport& report);

/// Inverse of report_csv. The MEAN row becomes `mean`.
MetricReport parse_report_csv(const std::string& text, const std::string& dataset_id);

/// Summary table with one MEAN row per dataset.
std::string summary_markdown(const std::vector<MetricReport>& reports, const std::string& method = "MISNet");

/// Summary table over (method, report) rows.
std::string summary_markdown(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace misnet::metrics
