#include <opencv2/core.hpp>

#include <map>

#include "misnet/datapipe.hpp"
#include "misnet/metrics.hpp"

namespace misnet::metrics {

namespace fs = std::filesystem;

MetricReport evaluate_pairs(const std::string& dataset_id, const std::vector<ScoredPair>& pairs,
                            const MetricOptions& opts) {
  MetricReport report;
  report.dataset_id = dataset_id;
  report.per_image.resize(pairs.size());
  cv::parallel_for_(cv::Range(0, static_cast<int>(pairs.size())), [&](const cv::Range& range) {
    for (int i = range.start; i < range.end; ++i) {
      const auto& p = pairs[i];
      report.per_image[i] = evaluate_image(p.id, p.prediction, p.truth, opts);
    }
  });
  finalize_report(report);
  return report;
}

namespace {

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg" && ext != ".bmp" && ext != ".PNG" && ext != ".JPG") continue;
    if (!out.emplace(entry.path().stem().string(), entry.path()).second) {
      throw DataError("duplicate stem '" + entry.path().stem().string() + "' in " + dir.string());
    }
  }
  return out;
}

}  // namespace

MetricReport evaluate_dataset(const fs::path& pred_dir, const fs::path& gt_dir, const std::string& dataset_id,
                              const MetricOptions& opts) {
  const auto preds = images_by_stem(pred_dir);
  const auto gts = images_by_stem(gt_dir);
  for (const auto& [stem, path] : preds) {
    if (!gts.count(stem)) throw DataError("prediction '" + stem + "' has no ground truth in " + gt_dir.string());
  }
  for (const auto& [stem, path] : gts) {
    if (!preds.count(stem)) throw DataError("ground truth '" + stem + "' has no prediction in " + pred_dir.string());
  }
  if (gts.empty()) throw DataError("no images to evaluate in " + gt_dir.string());

  std::vector<ScoredPair> pairs;
  for (const auto& [stem, gt_path] : gts) {
    auto truth = data::to_binary_mask(data::load_mask(gt_path));
    auto pred = data::load_prob_map(preds.at(stem), truth.rows(), truth.cols());
    pairs.push_back({stem, std::move(pred), std::move(truth)});
  }
  return evaluate_pairs(dataset_id, pairs, opts);
}

}  // namespace misnet::metrics
