#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace misnet {

/// Raised when a configuration violates one of its invariants. The message
/// always names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Tensor shape or resolution mismatch between cooperating stages.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Switches for the ablation variants. All on reproduces the full network.
struct AblationFlags {
  bool use_lfm_ssfm = true;  // low-level branch feeds the guidance fusion
  bool use_lfm_bwm = true;   // low-level branch feeds every balancing module
  bool use_hfm = true;
  bool use_ssfm = true;
  bool use_pam = true;
  bool use_pa_ra = true;
  bool use_pa_ba = true;
  bool use_bwm = true;

  bool uses_low_level() const { return use_lfm_ssfm || use_lfm_bwm; }
  bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
  std::string backbone_id = "res2net50";
  int squeeze_channels = 32;  // C
  int reduction_ratio = 4;    // r
  int min_reduced_dim = 16;   // L
  AblationFlags flags;
  int train_size = 352;

  bool operator==(const ModelConfig&) const = default;
};

/// Channel width of the dense selection descriptor: max(ceil(C / r), L).
int reduced_dim(int channels, int reduction, int floor_dim);

/// Returns `cfg` unchanged when every invariant holds, throws ConfigError
/// otherwise.
const ModelConfig& validate_config(const ModelConfig& cfg);

// Flat `key = value` text, one entry per line, `#` starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries);

// Typed accessors for KeyValues. They erase the key they consume so callers
// can detect unknown leftovers.
int take_int(KeyValues& kv, const std::string& key, int fallback);
double take_double(KeyValues& kv, const std::string& key, double fallback);
bool take_bool(KeyValues& kv, const std::string& key, bool fallback);
std::string take_string(KeyValues& kv, const std::string& key, const std::string& fallback);

std::string format_double(double v);

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& cfg);
/// Consumes the model keys from `kv`; missing keys keep their defaults.
ModelConfig model_config_from(KeyValues& kv);

std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

/// Identity of the architecture: changes whenever a parameter shape could.
std::string model_config_hash(const ModelConfig& cfg);

/// Row-major 2-D map of probabilities in [0, 1].
class ProbMap {
 public:
  ProbMap() = default;
  ProbMap(int rows, int cols, std::vector<double> values);
  static ProbMap filled(int rows, int cols, double value);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const std::vector<double>& values() const { return data_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Row-major 2-D map with values exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int rows, int cols, std::vector<std::uint8_t> values);
  static BinaryMask filled(int rows, int cols, bool value);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::uint8_t operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const std::vector<std::uint8_t>& values() const { return data_; }
  std::size_t count() const;

  ProbMap as_prob() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> data_;
};

}  // namespace misnet
