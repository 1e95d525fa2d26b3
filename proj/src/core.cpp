#include "misnet/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace misnet {

int reduced_dim(int channels, int reduction, int floor_dim) {
  if (channels < 1) throw ConfigError("squeeze_channels", "must be >= 1");
  if (reduction < 1) throw ConfigError("reduction_ratio", "must be >= 1");
  if (floor_dim < 1) throw ConfigError("min_reduced_dim", "must be >= 1");
  const int reduced = (channels + reduction - 1) / reduction;
  return std::max(reduced, floor_dim);
}

const ModelConfig& validate_config(const ModelConfig& cfg) {
  if (cfg.backbone_id.empty()) throw ConfigError("backbone_id", "must not be empty");
  if (cfg.squeeze_channels < 1) throw ConfigError("squeeze_channels", "must be >= 1");
  if (cfg.reduction_ratio < 1) throw ConfigError("reduction_ratio", "must be >= 1");
  if (cfg.min_reduced_dim < 1) throw ConfigError("min_reduced_dim", "must be >= 1");
  if (cfg.train_size < 32 || cfg.train_size % 32 != 0) {
    throw ConfigError("train_size", "must be a positive multiple of 32, got " + std::to_string(cfg.train_size));
  }
  const auto& f = cfg.flags;
  if (f.use_pam && !f.use_pa_ra && !f.use_pa_ba) {
    throw ConfigError("use_pa_ra", "at least one of use_pa_ra/use_pa_ba must be set when use_pam is set");
  }
  if (f.use_pam && f.use_pa_ra && f.use_pa_ba && cfg.squeeze_channels % 2 != 0) {
    throw ConfigError("squeeze_channels", "must be even so both attention branches get C/2 channels");
  }
  if (!f.use_lfm_ssfm && !f.use_hfm) {
    throw ConfigError("use_hfm", "the guidance map needs at least one of use_lfm_ssfm/use_hfm");
  }
  if (f.use_ssfm && (!f.use_lfm_ssfm || !f.use_hfm)) {
    throw ConfigError("use_ssfm", "selective fusion needs both the low-level and high-level branches");
  }
  return cfg;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected `key = value`");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    if (!kv.emplace(key, value).second) throw ConfigError(key, "duplicate key");
  }
  return kv;
}

std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

int take_int(KeyValues& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  int value = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key, "not an integer: '" + s + "'");
  kv.erase(it);
  return value;
}

double take_double(KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto& s = it->second;
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(key, "not a number: '" + s + "'");
  kv.erase(it);
  return value;
}

bool take_bool(KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto& s = it->second;
  bool value;
  if (s == "true" || s == "1" || s == "yes") {
    value = true;
  } else if (s == "false" || s == "0" || s == "no") {
    value = false;
  } else {
    throw ConfigError(key, "not a boolean: '" + s + "'");
  }
  kv.erase(it);
  return value;
}

std::string take_string(KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::string value = it->second;
  kv.erase(it);
  return value;
}

std::string format_double(double v) {
  // Shortest representation that parses back to the same double.
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

namespace {
std::string b2s(bool b) { return b ? "true" : "false"; }
}  // namespace

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& cfg) {
  const auto& f = cfg.flags;
  return {
      {"backbone_id", cfg.backbone_id},
      {"squeeze_channels", std::to_string(cfg.squeeze_channels)},
      {"reduction_ratio", std::to_string(cfg.reduction_ratio)},
      {"min_reduced_dim", std::to_string(cfg.min_reduced_dim)},
      {"train_size", std::to_string(cfg.train_size)},
      {"use_lfm_ssfm", b2s(f.use_lfm_ssfm)},
      {"use_lfm_bwm", b2s(f.use_lfm_bwm)},
      {"use_hfm", b2s(f.use_hfm)},
      {"use_ssfm", b2s(f.use_ssfm)},
      {"use_pam", b2s(f.use_pam)},
      {"use_pa_ra", b2s(f.use_pa_ra)},
      {"use_pa_ba", b2s(f.use_pa_ba)},
      {"use_bwm", b2s(f.use_bwm)},
  };
}

ModelConfig model_config_from(KeyValues& kv) {
  ModelConfig cfg;
  cfg.backbone_id = take_string(kv, "backbone_id", cfg.backbone_id);
  cfg.squeeze_channels = take_int(kv, "squeeze_channels", cfg.squeeze_channels);
  cfg.reduction_ratio = take_int(kv, "reduction_ratio", cfg.reduction_ratio);
  cfg.min_reduced_dim = take_int(kv, "min_reduced_dim", cfg.min_reduced_dim);
  cfg.train_size = take_int(kv, "train_size", cfg.train_size);
  auto& f = cfg.flags;
  f.use_lfm_ssfm = take_bool(kv, "use_lfm_ssfm", f.use_lfm_ssfm);
  f.use_lfm_bwm = take_bool(kv, "use_lfm_bwm", f.use_lfm_bwm);
  f.use_hfm = take_bool(kv, "use_hfm", f.use_hfm);
  f.use_ssfm = take_bool(kv, "use_ssfm", f.use_ssfm);
  f.use_pam = take_bool(kv, "use_pam", f.use_pam);
  f.use_pa_ra = take_bool(kv, "use_pa_ra", f.use_pa_ra);
  f.use_pa_ba = take_bool(kv, "use_pa_ba", f.use_pa_ba);
  f.use_bwm = take_bool(kv, "use_bwm", f.use_bwm);
  return cfg;
}

std::string serialize_model_config(const ModelConfig& cfg) {
  return format_key_values(model_config_entries(cfg));
}

ModelConfig parse_model_config(const std::string& text) {
  KeyValues kv = parse_key_values(text);
  ModelConfig cfg = model_config_from(kv);
  if (!kv.empty()) throw ConfigError(kv.begin()->first, "unknown key");
  return cfg;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string model_config_hash(const ModelConfig& cfg) {
  // train_size does not affect any parameter shape, so it is left out.
  ModelConfig arch = cfg;
  arch.train_size = 0;
  return hex64(fnv1a64(serialize_model_config(arch)));
}

ProbMap::ProbMap(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (rows < 0 || cols < 0 || data_.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("ProbMap: value count does not match dims");
  }
  for (double v : data_) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("ProbMap: value outside [0,1]");
  }
}

ProbMap ProbMap::filled(int rows, int cols, double value) {
  return ProbMap(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, value));
}

BinaryMask::BinaryMask(int rows, int cols, std::vector<std::uint8_t> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (rows < 0 || cols < 0 || data_.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("BinaryMask: value count does not match dims");
  }
  for (auto v : data_) {
    if (v > 1) throw DataError("BinaryMask: value is not 0 or 1");
  }
}

BinaryMask BinaryMask::filled(int rows, int cols, bool value) {
  return BinaryMask(rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, value ? 1 : 0));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

ProbMap BinaryMask::as_prob() const {
  return ProbMap(rows_, cols_, std::vector<double>(data_.begin(), data_.end()));
}

}  // namespace misnet
