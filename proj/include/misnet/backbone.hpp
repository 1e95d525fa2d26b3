#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "misnet/blocks.hpp"

namespace misnet {

struct BackboneDescriptor {
  std::string id;
  std::array<int64_t, 5> strides{2, 4, 8, 16, 32};
  std::array<int64_t, 5> channels{};
  std::optional<std::filesystem::path> pretrained_weights_path;
  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};
};

/// Known ids: "res2net50" (64,256,512,1024,2048) and "toy" (8,16,32,64,128).
BackboneDescriptor backbone_descriptor(const std::string& id);

/// Five backbone levels, finest first.
struct MultiScaleFeatures {
  std::array<torch::Tensor, 5> levels;
  const torch::Tensor& operator[](std::size_t i) const { return levels.at(i); }
};

/// Rejects inputs that are not (B,3,H,W) with H and W divisible by 32.
void check_image_batch(const torch::Tensor& batch);

/// Res2Net bottleneck (v1b flavour, 26w x 4s).
struct Bottle2neckImpl : torch::nn::Module {
  static constexpr int64_t kExpansion = 4;
  Bottle2neckImpl(int64_t inplanes, int64_t planes, int64_t stride, bool first_in_stage,
                  int64_t base_width = 26, int64_t scale = 4);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t width, scale, stride;
  bool first_in_stage;
  ConvBn reduce{nullptr};
  torch::nn::ModuleList splits{nullptr};
  ConvBn expand{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottle2neck);

struct BackboneImpl : torch::nn::Module {
  explicit BackboneImpl(BackboneDescriptor desc);

  MultiScaleFeatures forward(const torch::Tensor& batch);

  const BackboneDescriptor& descriptor() const { return desc_; }

 private:
  BackboneDescriptor desc_;
  std::array<torch::nn::Sequential, 5> stages_;
};
TORCH_MODULE(Backbone);

/// Weight file lookup: the descriptor's explicit path, else
/// `$MISNET_WEIGHTS_DIR/<id>.pt`. Empty when neither exists.
std::optional<std::filesystem::path> resolve_pretrained_path(const BackboneDescriptor& desc);

/// Loads a weight archive after checking every parameter and buffer name and
/// shape against the module. Nothing is copied unless the whole manifest
/// matches. Throws DataError on any mismatch.
void load_backbone_weights(Backbone& backbone, const std::filesystem::path& path);
void save_backbone_weights(const Backbone& backbone, const std::filesystem::path& path);

}  // namespace misnet
