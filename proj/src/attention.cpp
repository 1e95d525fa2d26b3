#include "misnet/attention.hpp"

#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace misnet {

AxialAttentionImpl::AxialAttentionImpl(int64_t channels, int64_t key_channels_) : key_channels(key_channels_) {
  query = register_module("query", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, key_channels, 1)));
  key = register_module("key", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, key_channels, 1)));
  value = register_module("value", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
}

namespace {

// Attention along the last axis of (B, C, R, L) projections: every one of
// the R lines attends over its own L positions.
torch::Tensor attend_last_axis(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                               int64_t key_channels) {
  auto ql = q.permute({0, 2, 3, 1});  // (B, R, L, dk)
  auto kl = k.permute({0, 2, 1, 3});  // (B, R, dk, L)
  auto vl = v.permute({0, 2, 3, 1});  // (B, R, L, C)
  auto scores = torch::matmul(ql, kl) / std::sqrt(static_cast<double>(key_channels));
  auto out = torch::matmul(torch::softmax(scores, -1), vl);  // (B, R, L, C)
  return out.permute({0, 3, 1, 2});
}

}  // namespace

torch::Tensor AxialAttentionImpl::horizontal(const torch::Tensor& x) {
  return attend_last_axis(query(x), key(x), value(x), key_channels);
}

torch::Tensor AxialAttentionImpl::vertical(const torch::Tensor& x) {
  auto xt = x.transpose(2, 3);
  return attend_last_axis(query(xt), key(xt), value(xt), key_channels).transpose(2, 3);
}

torch::Tensor AxialAttentionImpl::forward(const torch::Tensor& x) {
  const auto q = query(x);
  const auto k = key(x);
  const auto v = value(x);
  auto rows = attend_last_axis(q, k, v, key_channels);
  auto cols = attend_last_axis(q.transpose(2, 3), k.transpose(2, 3), v.transpose(2, 3), key_channels).transpose(2, 3);
  return rows + cols;
}

int64_t axial_key_channels(int64_t channels) { return std::max<int64_t>(1, channels / 8); }

torch::Tensor reverse_weight(const torch::Tensor& prior_logits, Hw target_hw) {
  return 1.0 - torch::sigmoid(resize_to(prior_logits, target_hw));
}

torch::Tensor boundary_weight(const torch::Tensor& prior_logits, Hw target_hw) {
  auto p = torch::sigmoid(resize_to(prior_logits, target_hw));
  return 1.0 - torch::abs(p - 0.5) / 0.5;
}

ParallelAttentionImpl::ParallelAttentionImpl(int64_t channels_, const AblationFlags& flags)
    : channels(channels_),
      enabled(flags.use_pam),
      use_reverse(flags.use_pam && flags.use_pa_ra),
      use_boundary(flags.use_pam && flags.use_pa_ba) {
  if (!enabled) return;
  if (!use_reverse && !use_boundary) throw ConfigError("use_pa_ra", "parallel attention needs at least one branch");
  if (use_reverse && use_boundary && channels % 2 != 0) {
    throw ConfigError("squeeze_channels", "must be even to split the attention branches");
  }
  axial = register_module("axial", AxialAttention(channels, axial_key_channels(channels)));
  const int64_t branch_out = (use_reverse && use_boundary) ? channels / 2 : channels;
  if (use_reverse) compress_reverse = register_module("compress_reverse", ConvBn(channels, branch_out, 3));
  if (use_boundary) compress_boundary = register_module("compress_boundary", ConvBn(channels, branch_out, 3));
}

AttentionBundle ParallelAttentionImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior_logits) {
  AttentionBundle out;
  if (!enabled) {
    out.fused = feature;
    return out;
  }
  const Hw hw = spatial_dims(feature);
  const auto aggregated = axial(feature);
  std::vector<torch::Tensor> parts;
  if (use_reverse) {
    out.reverse = reverse_weight(prior_logits, hw);
    out.reverse_features = aggregated * out.reverse + feature;
    parts.push_back(compress_reverse(out.reverse_features));
  }
  if (use_boundary) {
    out.boundary = boundary_weight(prior_logits, hw);
    out.boundary_features = aggregated * out.boundary + feature;
    parts.push_back(compress_boundary(out.boundary_features));
  }
  out.fused = parts.size() == 1 ? parts.front() : torch::cat(parts, 1);
  return out;
}

namespace {

void write_gray(const torch::Tensor& map, const std::filesystem::path& path) {
  auto m = map.detach().to(torch::kFloat).select(0, 0).select(0, 0).clamp(0, 1).mul(255).round().to(torch::kUInt8).contiguous();
  cv::Mat img(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1, m.data_ptr<uint8_t>());
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

}  // namespace

void export_attention_maps(const AttentionBundle& bundle, const std::filesystem::path& dir, const std::string& stem) {
  if (bundle.reverse.defined()) write_gray(bundle.reverse, dir / (stem + "_reverse.png"));
  if (bundle.boundary.defined()) write_gray(bundle.boundary, dir / (stem + "_boundary.png"));
}

}  // namespace misnet
