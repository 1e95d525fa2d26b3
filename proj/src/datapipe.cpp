#include "misnet/datapipe.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace misnet::data {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::map<std::string, fs::path> files_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const auto stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second) throw DataError("duplicate stem '" + stem + "' in " + dir.string());
  }
  return out;
}

}  // namespace

std::vector<SamplePair> scan_pairs(const fs::path& root) {
  const auto images = files_by_stem(root / "images");
  const auto masks = files_by_stem(root / "masks");
  std::vector<SamplePair> pairs;
  for (const auto& [stem, path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) throw DataError("image '" + stem + "' has no mask under " + (root / "masks").string());
    pairs.push_back({stem, path, it->second});
  }
  for (const auto& [stem, path] : masks) {
    if (!images.count(stem)) throw DataError("mask '" + stem + "' has no image under " + (root / "images").string());
  }
  if (pairs.empty()) throw DataError("no image/mask pairs under " + root.string());
  return pairs;
}

SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = n * 8 / 10;
  c.val = n / 10;
  c.test = n - c.train - c.val;
  return c;
}

const std::vector<SamplePair>& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train;
    case Split::kVal:
      return val;
    case Split::kTest:
      break;
  }
  return test;
}

namespace {

bool same_pairs(const std::vector<SamplePair>& a, const std::vector<SamplePair>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) {
           return x.stem == y.stem && x.image == y.image && x.mask == y.mask;
         });
}

void sort_by_stem(std::vector<SamplePair>& v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.stem < b.stem; });
}

}  // namespace

bool DatasetManifest::operator==(const DatasetManifest& o) const {
  return root == o.root && dataset_id == o.dataset_id && same_pairs(train, o.train) && same_pairs(val, o.val) &&
         same_pairs(test, o.test);
}

DatasetManifest build_manifest(const fs::path& root, std::uint64_t split_seed, const std::string& dataset_id) {
  auto pairs = scan_pairs(root);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto counts = split_counts(pairs.size());
  DatasetManifest m;
  m.root = root;
  m.dataset_id = dataset_id;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < counts.train ? m.train : (i < counts.train + counts.val ? m.val : m.test);
    dst.push_back(pairs[order[i]]);
  }
  sort_by_stem(m.train);
  sort_by_stem(m.val);
  sort_by_stem(m.test);
  return m;
}

DatasetManifest single_split_manifest(const fs::path& root, Split split, const std::string& dataset_id) {
  DatasetManifest m;
  m.root = root;
  m.dataset_id = dataset_id;
  auto pairs = scan_pairs(root);
  switch (split) {
    case Split::kTrain:
      m.train = std::move(pairs);
      break;
    case Split::kVal:
      m.val = std::move(pairs);
      break;
    case Split::kTest:
      m.test = std::move(pairs);
      break;
  }
  return m;
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& p : m.split(s)) {
      out += to_string(s) + "\t" + fs::relative(p.image, m.root).generic_string() + "\t" +
             fs::relative(p.mask, m.root).generic_string() + "\n";
    }
  }
  return out;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << format_manifest(m);
  if (!out) throw DataError("cannot write manifest " + path.string());
}

DatasetManifest read_manifest(const fs::path& path, const fs::path& root) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.root = root;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string split, image, mask, extra;
    if (!std::getline(fields, split, '\t') || !std::getline(fields, image, '\t') || !std::getline(fields, mask, '\t') ||
        std::getline(fields, extra, '\t')) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected split<TAB>image<TAB>mask");
    }
    const fs::path image_path = root / image;
    const auto s = parse_split(split);
    auto& dst = s == Split::kTrain ? m.train : (s == Split::kVal ? m.val : m.test);
    dst.push_back({image_path.stem().string(), image_path, root / mask});
  }
  return m;
}

cv::Mat load_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

cv::Mat load_mask(const fs::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw DataError("cannot read mask " + path.string());
  cv::Mat mask;
  cv::threshold(gray, mask, 127, 1, cv::THRESH_BINARY);
  return mask;
}

ProbMap load_prob_map(const fs::path& path, int rows, int cols) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw DataError("cannot read prediction " + path.string());
  cv::Mat f;
  gray.convertTo(f, CV_64F, 1.0 / 255.0);
  if (rows > 0 && cols > 0 && (f.rows != rows || f.cols != cols)) {
    cv::Mat resized;
    cv::resize(f, resized, cv::Size(cols, rows), 0, 0, cv::INTER_LINEAR);
    f = cv::min(cv::max(resized, 0.0), 1.0);
  }
  std::vector<double> values(f.begin<double>(), f.end<double>());
  return ProbMap(f.rows, f.cols, std::move(values));
}

BinaryMask to_binary_mask(const cv::Mat& mask01) {
  CV_Assert(mask01.type() == CV_8U);
  cv::Mat m = mask01.isContinuous() ? mask01 : mask01.clone();
  std::vector<std::uint8_t> values(m.datastart, m.dataend);
  return BinaryMask(m.rows, m.cols, std::move(values));
}

ProbMap to_prob_map(const cv::Mat& gray) {
  cv::Mat f;
  gray.convertTo(f, CV_64F, 1.0 / 255.0);
  std::vector<double> values(f.begin<double>(), f.end<double>());
  return ProbMap(f.rows, f.cols, std::move(values));
}

cv::Mat from_binary_mask(const BinaryMask& m) {
  cv::Mat out(m.rows(), m.cols(), CV_8U);
  std::copy(m.values().begin(), m.values().end(), out.data);
  return out;
}

void write_prob_png(const ProbMap& p, const fs::path& path) {
  cv::Mat out(p.rows(), p.cols(), CV_8U);
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(p.values()[i], 0.0, 1.0) * 255.0));
  }
  if (!cv::imwrite(path.string(), out)) throw DataError("cannot write " + path.string());
}

void validate_augmentation(const AugmentationConfig& c) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(name, "probability must lie in [0, 1]");
  };
  auto range = [](double lo, double hi, const char* name) {
    if (!(lo > 0 && lo <= hi)) throw ConfigError(name, "expected 0 < min <= max");
  };
  prob(c.flip_p, "augment.flip_p");
  prob(c.morph_p, "augment.morph_p");
  range(c.scale_min, c.scale_max, "augment.scale_min");
  range(c.brightness_min, c.brightness_max, "augment.brightness_min");
  range(c.contrast_min, c.contrast_max, "augment.contrast_min");
  range(c.sharpness_min, c.sharpness_max, "augment.sharpness_min");
  if (c.noise_std_max < 0) throw ConfigError("augment.noise_std_max", "must be >= 0");
  if (c.crop_size < 0) throw ConfigError("augment.crop_size", "must be >= 0");
  if (c.morph_kernel_min < 2 || c.morph_kernel_max > 5 || c.morph_kernel_min > c.morph_kernel_max) {
    throw ConfigError("augment.morph_kernel_min", "kernel range must lie within [2, 5]");
  }
}

std::vector<std::pair<std::string, std::string>> augmentation_entries(const AugmentationConfig& c) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"augment.enabled", b(c.enabled)},
      {"augment.scale_crop", b(c.scale_crop)},
      {"augment.scale_min", format_double(c.scale_min)},
      {"augment.scale_max", format_double(c.scale_max)},
      {"augment.crop_size", std::to_string(c.crop_size)},
      {"augment.flip", b(c.flip)},
      {"augment.flip_p", format_double(c.flip_p)},
      {"augment.photometric", b(c.photometric)},
      {"augment.noise_std_max", format_double(c.noise_std_max)},
      {"augment.brightness_min", format_double(c.brightness_min)},
      {"augment.brightness_max", format_double(c.brightness_max)},
      {"augment.contrast_min", format_double(c.contrast_min)},
      {"augment.contrast_max", format_double(c.contrast_max)},
      {"augment.sharpness_min", format_double(c.sharpness_min)},
      {"augment.sharpness_max", format_double(c.sharpness_max)},
      {"augment.morphology", b(c.morphology)},
      {"augment.morph_p", format_double(c.morph_p)},
      {"augment.morph_kernel_min", std::to_string(c.morph_kernel_min)},
      {"augment.morph_kernel_max", std::to_string(c.morph_kernel_max)},
  };
}

AugmentationConfig augmentation_from(KeyValues& kv) {
  AugmentationConfig c;
  c.enabled = take_bool(kv, "augment.enabled", c.enabled);
  c.scale_crop = take_bool(kv, "augment.scale_crop", c.scale_crop);
  c.scale_min = take_double(kv, "augment.scale_min", c.scale_min);
  c.scale_max = take_double(kv, "augment.scale_max", c.scale_max);
  c.crop_size = take_int(kv, "augment.crop_size", c.crop_size);
  c.flip = take_bool(kv, "augment.flip", c.flip);
  c.flip_p = take_double(kv, "augment.flip_p", c.flip_p);
  c.photometric = take_bool(kv, "augment.photometric", c.photometric);
  c.noise_std_max = take_double(kv, "augment.noise_std_max", c.noise_std_max);
  c.brightness_min = take_double(kv, "augment.brightness_min", c.brightness_min);
  c.brightness_max = take_double(kv, "augment.brightness_max", c.brightness_max);
  c.contrast_min = take_double(kv, "augment.contrast_min", c.contrast_min);
  c.contrast_max = take_double(kv, "augment.contrast_max", c.contrast_max);
  c.sharpness_min = take_double(kv, "augment.sharpness_min", c.sharpness_min);
  c.sharpness_max = take_double(kv, "augment.sharpness_max", c.sharpness_max);
  c.morphology = take_bool(kv, "augment.morphology", c.morphology);
  c.morph_p = take_double(kv, "augment.morph_p", c.morph_p);
  c.morph_kernel_min = take_int(kv, "augment.morph_kernel_min", c.morph_kernel_min);
  c.morph_kernel_max = take_int(kv, "augment.morph_kernel_max", c.morph_kernel_max);
  validate_augmentation(c);
  return c;
}

AugmentPlan sample_plan(const AugmentationConfig& cfg, int train_size, std::mt19937_64& rng) {
  if (train_size < 1) throw ConfigError("train_size", "must be >= 1");
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto coin = [&rng](double p) { return std::bernoulli_distribution(p)(rng); };

  // Every draw happens in a fixed order whatever the toggles, so switching
  // one op off leaves the others' choices unchanged.
  AugmentPlan plan;
  plan.size = train_size;
  plan.crop_side = cfg.crop_size > 0 ? cfg.crop_size : static_cast<int>(std::lround(0.75 * train_size));
  plan.scaled = static_cast<int>(std::lround(uniform(cfg.scale_min, cfg.scale_max) * train_size));
  for (int attempt = 0; attempt < 64 && plan.scaled < plan.crop_side; ++attempt) {
    plan.scaled = static_cast<int>(std::lround(uniform(cfg.scale_min, cfg.scale_max) * train_size));
  }
  plan.scaled = std::max(plan.scaled, plan.crop_side);
  const int slack = plan.scaled - plan.crop_side;
  plan.crop_y = std::uniform_int_distribution<int>(0, slack)(rng);
  plan.crop_x = std::uniform_int_distribution<int>(0, slack)(rng);
  plan.hflip = coin(cfg.flip_p);
  plan.vflip = coin(cfg.flip_p);
  plan.brightness = uniform(cfg.brightness_min, cfg.brightness_max);
  plan.contrast = uniform(cfg.contrast_min, cfg.contrast_max);
  plan.sharpness = uniform(cfg.sharpness_min, cfg.sharpness_max);
  plan.noise_std = uniform(0.0, cfg.noise_std_max);
  plan.noise_seed = rng();
  const bool morph = coin(cfg.morph_p);
  const bool dilate = coin(0.5);
  plan.morph_kernel = std::uniform_int_distribution<int>(cfg.morph_kernel_min, cfg.morph_kernel_max)(rng);

  plan.crop = cfg.enabled && cfg.scale_crop;
  if (!cfg.enabled || !cfg.flip) plan.hflip = plan.vflip = false;
  plan.photometric = cfg.enabled && cfg.photometric;
  plan.morph = (cfg.enabled && cfg.morphology && morph) ? (dilate ? Morph::kDilate : Morph::kErode) : Morph::kNone;
  return plan;
}

cv::Mat apply_geometry(const cv::Mat& src, const AugmentPlan& plan, bool is_mask) {
  const int interp = is_mask ? cv::INTER_NEAREST_EXACT : cv::INTER_LINEAR;
  const cv::Size square(plan.size, plan.size);
  cv::Mat out;
  cv::resize(src, out, square, 0, 0, interp);
  if (plan.crop) {
    cv::Mat scaled;
    cv::resize(out, scaled, cv::Size(plan.scaled, plan.scaled), 0, 0, interp);
    const cv::Rect roi(plan.crop_x, plan.crop_y, plan.crop_side, plan.crop_side);
    cv::resize(scaled(roi), out, square, 0, 0, interp);
  }
  if (plan.hflip && plan.vflip) {
    cv::flip(out, out, -1);
  } else if (plan.hflip) {
    cv::flip(out, out, 1);
  } else if (plan.vflip) {
    cv::flip(out, out, 0);
  }
  return out;
}

namespace {

cv::Mat to_u8(const cv::Mat& f) {
  cv::Mat out;
  f.convertTo(out, CV_8U);  // rounds and saturates
  return out;
}

cv::Mat blend(const cv::Mat& degenerate, const cv::Mat& image, double factor) {
  cv::Mat d, i;
  degenerate.convertTo(d, CV_32F);
  image.convertTo(i, CV_32F);
  return to_u8(d + (i - d) * factor);
}

}  // namespace

cv::Mat apply_photometric(const cv::Mat& image, const AugmentPlan& plan) {
  CV_Assert(image.type() == CV_8UC3);
  if (!plan.photometric) return image.clone();

  // Brightness: blend with black.
  cv::Mat out = blend(cv::Mat::zeros(image.size(), image.type()), image, plan.brightness);

  // Contrast: blend with the mean luminance.
  cv::Mat gray;
  cv::cvtColor(out, gray, cv::COLOR_RGB2GRAY);
  const double mean = std::floor(cv::mean(gray)[0] + 0.5);
  out = blend(cv::Mat(out.size(), out.type(), cv::Scalar::all(mean)), out, plan.contrast);

  // Sharpness: blend with a 3x3 smoothed copy; the one-pixel border keeps
  // the original values.
  cv::Mat kernel = (cv::Mat_<float>(3, 3) << 1, 1, 1, 1, 5, 1, 1, 1, 1) / 13.0f;
  cv::Mat smooth;
  cv::filter2D(out, smooth, -1, kernel, cv::Point(-1, -1), 0, cv::BORDER_REPLICATE);
  if (out.rows > 2 && out.cols > 2) {
    cv::Mat degenerate = out.clone();
    const cv::Rect inner(1, 1, out.cols - 2, out.rows - 2);
    smooth(inner).copyTo(degenerate(inner));
    out = blend(degenerate, out, plan.sharpness);
  }

  if (plan.noise_std > 0) {
    std::mt19937_64 rng(plan.noise_seed);
    std::normal_distribution<float> noise(0.0f, static_cast<float>(plan.noise_std * 255.0));
    cv::Mat f;
    out.convertTo(f, CV_32F);
    for (auto it = f.begin<cv::Vec3f>(); it != f.end<cv::Vec3f>(); ++it) {
      for (int c = 0; c < 3; ++c) (*it)[c] += noise(rng);
    }
    out = to_u8(f);
  }
  return out;
}

cv::Mat apply_morphology(const cv::Mat& mask01, Morph op, int kernel) {
  if (op == Morph::kNone) return mask01.clone();
  const cv::Mat k = cv::getStructuringElement(cv::MORPH_RECT, cv::Size(kernel, kernel));
  cv::Mat out;
  if (op == Morph::kDilate) {
    cv::dilate(mask01, out, k, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
  } else {
    cv::erode(mask01, out, k, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
    if (cv::countNonZero(out) == 0 && cv::countNonZero(mask01) > 0) return mask01.clone();
  }
  return out;
}

Sample augment(const cv::Mat& image, const cv::Mat& mask, const AugmentationConfig& cfg, int train_size,
               std::mt19937_64& rng) {
  const auto plan = sample_plan(cfg, train_size, rng);
  Sample s;
  s.image = apply_photometric(apply_geometry(image, plan, false), plan);
  s.mask = apply_morphology(apply_geometry(mask, plan, true), plan.morph, plan.morph_kernel);
  return s;
}

Sample resize_only(const cv::Mat& image, const cv::Mat& mask, int train_size) {
  Sample s;
  cv::resize(image, s.image, cv::Size(train_size, train_size), 0, 0, cv::INTER_LINEAR);
  if (!mask.empty()) cv::resize(mask, s.mask, cv::Size(train_size, train_size), 0, 0, cv::INTER_NEAREST_EXACT);
  return s;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace misnet::data
