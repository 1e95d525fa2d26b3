#include "misnet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace misnet::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_dims(const ProbMap& s, const BinaryMask& g) {
  if (s.rows() != g.rows() || s.cols() != g.cols()) throw ShapeError("metric: prediction and mask dims differ");
  if (s.size() == 0) throw ShapeError("metric: empty map");
}

}  // namespace

ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "fixed") return ThresholdMode::kFixed;
  if (s == "adaptive") return ThresholdMode::kAdaptive;
  throw ConfigError("threshold_mode", "expected fixed or adaptive, got '" + s + "'");
}

std::string to_string(ThresholdMode mode) { return mode == ThresholdMode::kFixed ? "fixed" : "adaptive"; }

double binarization_threshold(const ProbMap& s, ThresholdMode mode) {
  if (mode == ThresholdMode::kFixed) return 0.5;
  double sum = 0;
  for (double v : s.values()) sum += v;
  return std::min(2.0 * sum / static_cast<double>(s.size()), 1.0);
}

Overlap mdice_miou(const ProbMap& s, const BinaryMask& g, double threshold) {
  check_dims(s, g);
  std::size_t inter = 0, pred = 0, truth = 0;
  const auto& sv = s.values();
  const auto& gv = g.values();
  for (std::size_t i = 0; i < sv.size(); ++i) {
    const bool p = sv[i] >= threshold;
    pred += p;
    truth += gv[i];
    inter += p && gv[i];
  }
  if (pred + truth == 0) return {1.0, 1.0};
  const double i = static_cast<double>(inter);
  return {2.0 * i / static_cast<double>(pred + truth), i / static_cast<double>(pred + truth - inter)};
}

void distance_to_foreground(const BinaryMask& g, std::vector<double>& distance, std::vector<std::size_t>& nearest) {
  const int rows = g.rows();
  const int cols = g.cols();
  const std::size_t n = g.size();
  constexpr long long kNone = -1;
  const double inf = std::numeric_limits<double>::infinity();

  // Column pass: nearest foreground row in the same column, upper one on ties.
  std::vector<long long> col_row(n, kNone);  // row-major layout
  for (int c = 0; c < cols; ++c) {
    long long above = kNone;
    for (int r = 0; r < rows; ++r) {
      if (g(r, c)) above = r;
      col_row[static_cast<std::size_t>(r) * cols + c] = above;
    }
    long long below = kNone;
    for (int r = rows - 1; r >= 0; --r) {
      if (g(r, c)) below = r;
      auto& best = col_row[static_cast<std::size_t>(r) * cols + c];
      if (below != kNone && (best == kNone || (below - r) < (r - best))) best = below;
    }
  }

  // Row pass: lower envelope of parabolas (c - c')^2 + dv(c')^2. Equal
  // values resolve to the smaller column.
  distance.assign(n, inf);
  nearest.assign(n, 0);
  std::vector<int> v(cols);
  std::vector<double> z(cols + 1);
  std::vector<double> f(cols);
  for (int r = 0; r < rows; ++r) {
    int k = -1;
    for (int q = 0; q < cols; ++q) {
      const long long src = col_row[static_cast<std::size_t>(r) * cols + q];
      if (src == kNone) continue;
      const double dv = static_cast<double>(src - r);
      f[q] = dv * dv;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      auto meet = [&](int a, int b) {
        return ((f[a] + double(a) * a) - (f[b] + double(b) * b)) / (2.0 * (a - b));
      };
      double s = meet(q, v[k]);
      while (s <= z[k]) {
        --k;
        s = meet(q, v[k]);
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    if (k < 0) continue;
    int j = 0;
    for (int p = 0; p < cols; ++p) {
      while (z[j + 1] < p) ++j;
      const int q = v[j];
      const double dc = static_cast<double>(p - q);
      const std::size_t at = static_cast<std::size_t>(r) * cols + p;
      distance[at] = std::sqrt(dc * dc + f[q]);
      const long long src_row = col_row[static_cast<std::size_t>(r) * cols + q];
      nearest[at] = static_cast<std::size_t>(q) * rows + static_cast<std::size_t>(src_row);
    }
  }
}

WeightedFResult weighted_fmeasure(const ProbMap& s, const BinaryMask& g) {
  check_dims(s, g);
  const std::size_t fg_count = g.count();
  if (fg_count == 0) return {0.0, true};
  const int rows = g.rows();
  const int cols = g.cols();
  const std::size_t n = g.size();
  const auto& sv = s.values();
  const auto& gv = g.values();

  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(sv[i] - gv[i]);

  std::vector<double> dist;
  std::vector<std::size_t> nearest;
  distance_to_foreground(g, dist, nearest);

  // Background errors take the error of their nearest foreground pixel.
  std::vector<double> spread(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (gv[i]) {
      spread[i] = err[i];
    } else {
      const std::size_t cm = nearest[i];
      const std::size_t row = cm % static_cast<std::size_t>(rows);
      const std::size_t col = cm / static_cast<std::size_t>(rows);
      spread[i] = err[row * cols + col];
    }
  }

  // Separable 7x7 Gaussian (sigma 5), zero padding.
  constexpr int kRadius = 3;
  constexpr double kSigma = 5.0;
  std::array<double, 2 * kRadius + 1> kernel{};
  double ksum = 0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    kernel[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
    ksum += kernel[i + kRadius];
  }
  for (double& kv : kernel) kv /= ksum;

  std::vector<double> tmp(n, 0.0), smooth(n, 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int d = -kRadius; d <= kRadius; ++d) {
        const int cc = c + d;
        if (cc >= 0 && cc < cols) acc += kernel[d + kRadius] * spread[static_cast<std::size_t>(r) * cols + cc];
      }
      tmp[static_cast<std::size_t>(r) * cols + c] = acc;
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int d = -kRadius; d <= kRadius; ++d) {
        const int rr = r + d;
        if (rr >= 0 && rr < rows) acc += kernel[d + kRadius] * tmp[static_cast<std::size_t>(rr) * cols + c];
      }
      smooth[static_cast<std::size_t>(r) * cols + c] = acc;
    }
  }

  const double decay = std::log(0.5) / 5.0;
  double fg_weighted = 0, bg_weighted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gv[i]) {
      fg_weighted += std::min(err[i], smooth[i]);
    } else {
      bg_weighted += err[i] * (2.0 - std::exp(decay * dist[i]));
    }
  }
  const double fg = static_cast<double>(fg_count);
  const double tp = fg - fg_weighted;
  const double recall = 1.0 - fg_weighted / fg;
  const double precision = tp / (kEps + tp + bg_weighted);
  return {2.0 * recall * precision / (kEps + recall + precision), false};
}

namespace {

struct Moments {
  double n = 0;
  double sum_x = 0, sum_y = 0;
};

double std_unbiased(double sq_dev, double n) { return n > 1 ? std::sqrt(sq_dev / (n - 1)) : 0.0; }

double object_score(double mean, double stddev) { return 2.0 * mean / (mean * mean + 1.0 + stddev + kEps); }

}  // namespace

double s_object(const ProbMap& s, const BinaryMask& g) {
  check_dims(s, g);
  const auto& sv = s.values();
  const auto& gv = g.values();
  double fg_n = 0, fg_sum = 0, bg_n = 0, bg_sum = 0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    if (gv[i]) {
      fg_n += 1;
      fg_sum += sv[i];
    } else {
      bg_n += 1;
      bg_sum += 1.0 - sv[i];
    }
  }
  const double fg_mean = fg_n > 0 ? fg_sum / fg_n : 0.0;
  const double bg_mean = bg_n > 0 ? bg_sum / bg_n : 0.0;
  double fg_dev = 0, bg_dev = 0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    if (gv[i]) {
      fg_dev += (sv[i] - fg_mean) * (sv[i] - fg_mean);
    } else {
      const double b = 1.0 - sv[i];
      bg_dev += (b - bg_mean) * (b - bg_mean);
    }
  }
  const double u = fg_n / static_cast<double>(sv.size());
  const double fg_score = fg_n > 0 ? object_score(fg_mean, std_unbiased(fg_dev, fg_n)) : 0.0;
  const double bg_score = bg_n > 0 ? object_score(bg_mean, std_unbiased(bg_dev, bg_n)) : 0.0;
  return u * fg_score + (1.0 - u) * bg_score;
}

double s_region(const ProbMap& s, const BinaryMask& g) {
  check_dims(s, g);
  const int rows = g.rows();
  const int cols = g.cols();
  const auto& sv = s.values();
  const auto& gv = g.values();

  // Split point: rounded 1-based centroid of G; X and Y count the columns and
  // rows of the left/top parts.
  const std::size_t total = g.count();
  long long split_x, split_y;
  if (total == 0) {
    split_x = std::lround(cols / 2.0);
    split_y = std::lround(rows / 2.0);
  } else {
    double sx = 0, sy = 0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        if (g(r, c)) {
          sx += c + 1;
          sy += r + 1;
        }
      }
    }
    split_x = std::lround(sx / static_cast<double>(total));
    split_y = std::lround(sy / static_cast<double>(total));
  }

  auto quadrant = [&](int r, int c) { return (r < split_y ? 0 : 2) + (c < split_x ? 0 : 1); };

  std::array<Moments, 4> m{};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      auto& q = m[quadrant(r, c)];
      q.n += 1;
      q.sum_x += sv[i];
      q.sum_y += gv[i];
    }
  }
  std::array<double, 4> mean_x{}, mean_y{}, var_x{}, var_y{}, cov{};
  for (int k = 0; k < 4; ++k) {
    if (m[k].n > 0) {
      mean_x[k] = m[k].sum_x / m[k].n;
      mean_y[k] = m[k].sum_y / m[k].n;
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      const int k = quadrant(r, c);
      const double dx = sv[i] - mean_x[k];
      const double dy = gv[i] - mean_y[k];
      var_x[k] += dx * dx;
      var_y[k] += dy * dy;
      cov[k] += dx * dy;
    }
  }

  const double area = static_cast<double>(rows) * cols;
  double score = 0;
  for (int k = 0; k < 4; ++k) {
    if (m[k].n == 0) continue;
    const double denom = m[k].n > 1 ? m[k].n - 1 : 1.0;
    const double sx = var_x[k] / denom, sy = var_y[k] / denom, sxy = cov[k] / denom;
    const double a = 4.0 * mean_x[k] * mean_y[k] * sxy;
    const double b = (mean_x[k] * mean_x[k] + mean_y[k] * mean_y[k]) * (sx + sy);
    double ssim;
    if (a != 0) {
      ssim = a / (b + kEps);
    } else {
      ssim = b == 0 ? 1.0 : 0.0;
    }
    score += (m[k].n / area) * ssim;
  }
  return score;
}

double s_measure(const ProbMap& s, const BinaryMask& g, double alpha) {
  check_dims(s, g);
  const double fg_fraction = static_cast<double>(g.count()) / static_cast<double>(g.size());
  double sum = 0;
  for (double v : s.values()) sum += v;
  const double mean_s = sum / static_cast<double>(s.size());
  double q;
  if (fg_fraction == 0) {
    q = 1.0 - mean_s;
  } else if (fg_fraction == 1) {
    q = mean_s;
  } else {
    q = alpha * s_object(s, g) + (1.0 - alpha) * s_region(s, g);
  }
  return std::clamp(q, 0.0, 1.0);
}

namespace {

double enhanced(double g_centered, double p_centered) {
  const double align = 2.0 * g_centered * p_centered / (g_centered * g_centered + p_centered * p_centered + kEps);
  return (align + 1.0) * (align + 1.0) / 4.0;
}

// Score for a binarized prediction summarized by its class counts:
// counts[g][b] = number of pixels with mask value g and prediction b.
double e_measure_from_counts(const std::array<std::array<double, 2>, 2>& counts, double n) {
  const double n_g = counts[1][0] + counts[1][1];
  const double n_b = counts[0][1] + counts[1][1];
  if (n_g == 0) return (n - n_b) / n;
  if (n_g == n) return n_b / n;
  const double mg = n_g / n;
  const double mb = n_b / n;
  double total = 0;
  for (int gi = 0; gi < 2; ++gi) {
    for (int bi = 0; bi < 2; ++bi) {
      if (counts[gi][bi] > 0) total += counts[gi][bi] * enhanced(gi - mg, bi - mb);
    }
  }
  return total / n;
}

}  // namespace

double e_measure_at(const ProbMap& s, const BinaryMask& g, double threshold) {
  check_dims(s, g);
  std::array<std::array<double, 2>, 2> counts{};
  const auto& sv = s.values();
  const auto& gv = g.values();
  for (std::size_t i = 0; i < sv.size(); ++i) counts[gv[i]][sv[i] >= threshold ? 1 : 0] += 1;
  return e_measure_from_counts(counts, static_cast<double>(sv.size()));
}

double e_measure(const ProbMap& s, const BinaryMask& g, EMeasureMode mode) {
  if (mode == EMeasureMode::kFixed) return e_measure_at(s, g, 0.5);
  check_dims(s, g);
  // bins[g][k]: pixels whose prediction clears exactly thresholds 1..k.
  constexpr int kBins = 256;
  std::array<std::array<double, kBins>, 2> bins{};
  const auto& sv = s.values();
  const auto& gv = g.values();
  for (std::size_t i = 0; i < sv.size(); ++i) {
    const int k = std::clamp(static_cast<int>(std::floor(sv[i] * kBins)), 0, kBins - 1);
    bins[gv[i]][k] += 1;
  }
  const double n = static_cast<double>(sv.size());
  std::array<double, 2> above{0, 0};  // pixels with bin >= k, per mask value
  std::array<double, 2> class_total{0, 0};
  for (int gi = 0; gi < 2; ++gi) {
    for (double c : bins[gi]) class_total[gi] += c;
  }
  double best = -1;
  for (int k = kBins - 1; k >= 1; --k) {
    above[0] += bins[0][k];
    above[1] += bins[1][k];
    std::array<std::array<double, 2>, 2> counts{{{class_total[0] - above[0], above[0]},
                                                 {class_total[1] - above[1], above[1]}}};
    best = std::max(best, e_measure_from_counts(counts, n));
  }
  return best;
}

double mae(const ProbMap& s, const BinaryMask& g) {
  check_dims(s, g);
  double sum = 0;
  const auto& sv = s.values();
  const auto& gv = g.values();
  for (std::size_t i = 0; i < sv.size(); ++i) sum += std::abs(sv[i] - gv[i]);
  return sum / static_cast<double>(sv.size());
}

ImageMetrics evaluate_image(const std::string& id, const ProbMap& s, const BinaryMask& g, const MetricOptions& opts) {
  ImageMetrics m;
  m.id = id;
  const auto overlap = mdice_miou(s, g, binarization_threshold(s, opts.threshold_mode));
  m.mdice = overlap.dice;
  m.miou = overlap.iou;
  const auto wf = weighted_fmeasure(s, g);
  m.wfm = wf.value;
  m.sm = s_measure(s, g, opts.alpha);
  m.em = e_measure(s, g, opts.e_mode);
  m.mae = mae(s, g);
  if (wf.undefined) m.flags = "empty_gt";
  return m;
}

void finalize_report(MetricReport& report) {
  ImageMetrics mean;
  mean.id = "MEAN";
  const double n = static_cast<double>(report.per_image.size());
  if (n > 0) {
    for (const auto& m : report.per_image) {
      mean.mdice += m.mdice;
      mean.miou += m.miou;
      mean.wfm += m.wfm;
      mean.sm += m.sm;
      mean.em += m.em;
      mean.mae += m.mae;
    }
    mean.mdice /= n;
    mean.miou /= n;
    mean.wfm /= n;
    mean.sm /= n;
    mean.em /= n;
    mean.mae /= n;
  }
  report.mean = mean;
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{"mDice", "mIoU", "F_β^ω", "S_m", "E_φ^max", "MAE"};
  return cols;
}

namespace {

std::string fmt(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string csv_row(const ImageMetrics& m) {
  return m.id + "," + fmt(m.mdice, 6) + "," + fmt(m.miou, 6) + "," + fmt(m.wfm, 6) + "," + fmt(m.sm, 6) + "," +
         fmt(m.em, 6) + "," + fmt(m.mae, 6) + "," + m.flags + "\n";
}

std::string md_cells(const ImageMetrics& m) {
  return " " + fmt(m.mdice, 3) + " | " + fmt(m.miou, 3) + " | " + fmt(m.wfm, 3) + " | " + fmt(m.sm, 3) + " | " +
         fmt(m.em, 3) + " | " + fmt(m.mae, 3) + " |\n";
}

std::string md_header(const std::string& first, const std::string& second = {}) {
  std::string line = "| " + first + " |";
  std::string rule = "|---|";
  if (!second.empty()) {
    line += " " + second + " |";
    rule += "---|";
  }
  for (const auto& c : metric_columns()) {
    line += " " + c + " |";
    rule += "---|";
  }
  return line + "\n" + rule + "\n";
}

}  // namespace

std::string report_csv(const MetricReport& report) {
  std::string out = "image,mDice,mIoU,wFm,Sm,Em,MAE,flags\n";
  for (const auto& m : report.per_image) out += csv_row(m);
  out += csv_row(report.mean);
  return out;
}

std::string report_markdown(const MetricReport& report) {
  std::string out = "## " + report.dataset_id + "\n\n" + md_header("Image");
  for (const auto& m : report.per_image) out += "| " + m.id + " |" + md_cells(m);
  out += "| MEAN |" + md_cells(report.mean);
  return out;
}

std::string summary_markdown(const std::vector<MetricReport>& reports, const std::string& method) {
  std::vector<std::pair<std::string, MetricReport>> rows;
  for (const auto& r : reports) rows.emplace_back(method, r);
  return summary_markdown(rows);
}

std::string summary_markdown(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::string out = md_header("Dataset", "Method");
  for (const auto& [method, r] : rows) out += "| " + r.dataset_id + " | " + method + " |" + md_cells(r.mean);
  return out;
}

MetricReport parse_report_csv(const std::string& text, const std::string& dataset_id) {
  MetricReport report;
  report.dataset_id = dataset_id;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("image,mDice,mIoU,wFm,Sm,Em,MAE", 0) != 0) {
    throw DataError("not a metric report: missing header");
  }
  bool have_mean = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() < 7) throw DataError("metric report row has too few columns: " + line);
    ImageMetrics m;
    m.id = cells[0];
    try {
      m.mdice = std::stod(cells[1]);
      m.miou = std::stod(cells[2]);
      m.wfm = std::stod(cells[3]);
      m.sm = std::stod(cells[4]);
      m.em = std::stod(cells[5]);
      m.mae = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw DataError("metric report row is not numeric: " + line);
    }
    if (cells.size() > 7) m.flags = cells[7];
    if (m.id == "MEAN") {
      report.mean = m;
      have_mean = true;
    } else {
      report.per_image.push_back(m);
    }
  }
  if (!have_mean) throw DataError("metric report has no MEAN row");
  return report;
}

}  // namespace misnet::metrics
