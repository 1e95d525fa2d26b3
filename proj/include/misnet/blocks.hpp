#pragma once

#include <torch/torch.h>

#include <array>

namespace misnet {

using Hw = std::array<int64_t, 2>;

inline Hw spatial_dims(const torch::Tensor& t) { return {t.size(-2), t.size(-1)}; }

/// Bilinear resize without corner alignment. Returns the input untouched
/// when it already has the requested size.
torch::Tensor resize_to(const torch::Tensor& x, Hw hw);

/// Batch norm that falls back to running statistics when a training batch
/// holds a single value per channel (batch 1 at 1x1 resolution).
template <typename BatchNorm>
torch::Tensor batch_norm_safe(BatchNorm& bn, const torch::Tensor& x) {
  if (bn->is_training() && x.numel() / x.size(1) <= 1) {
    namespace F = torch::nn::functional;
    return F::batch_norm(x, bn->running_mean, bn->running_var,
                         F::BatchNormFuncOptions().weight(bn->weight).bias(bn->bias).training(false).eps(bn->options.eps()));
  }
  return bn->forward(x);
}

/// Conv2d (no bias) followed by BatchNorm and, optionally, ReLU.
struct ConvBnImpl : torch::nn::Module {
  ConvBnImpl(int64_t in, int64_t out, Hw kernel, Hw padding = {0, 0}, Hw dilation = {1, 1},
             int64_t stride = 1, bool relu = true);
  ConvBnImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, bool relu = true)
      : ConvBnImpl(in, out, {kernel, kernel}, {kernel / 2, kernel / 2}, {1, 1}, stride, relu) {}

  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
  bool relu;
};
TORCH_MODULE(ConvBn);

/// 1x1 projection with bias, used for every logit head.
torch::nn::Conv2d make_head(int64_t in, int64_t out = 1);

/// Multi-branch dilated-convolution block (dilations 1,3,5,7) with a 1x1
/// shortcut. Branch outputs are concatenated, projected by a 1x1 conv and
/// added to the shortcut before the final rectification.
struct RfbImpl : torch::nn::Module {
  RfbImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential branch0{nullptr}, branch1{nullptr}, branch2{nullptr}, branch3{nullptr};
  ConvBn project{nullptr};
  ConvBn shortcut{nullptr};
};
TORCH_MODULE(Rfb);

}  // namespace misnet
