#pragma once

#include <torch/torch.h>

#include <array>
#include <optional>

#include "misnet/attention.hpp"
#include "misnet/backbone.hpp"
#include "misnet/blocks.hpp"
#include "misnet/core.hpp"
#include "misnet/fusion.hpp"

namespace misnet {

/// Channel attention (shared MLP over avg- and max-pooled descriptors)
/// followed by spatial attention (7x7 conv over channel-pooled maps).
struct CbamImpl : torch::nn::Module {
  explicit CbamImpl(int64_t channels, int64_t reduction = 16);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential mlp{nullptr};
  torch::nn::Conv2d spatial{nullptr};
};
TORCH_MODULE(Cbam);

struct BalancedOutput {
  torch::Tensor features;  // refined feature at the working resolution
  torch::Tensor logits;    // M_i at the level's own resolution
};

/// Balancing weight module for one decoder level.
struct BalancingWeightImpl : torch::nn::Module {
  BalancingWeightImpl(int64_t channels, const AblationFlags& flags);

  /// `low` is the CBAM-filtered low-level feature (undefined when that
  /// branch is ablated); `work_hw` is the resolution the inputs are merged at.
  BalancedOutput forward(const torch::Tensor& low, const torch::Tensor& attention, const torch::Tensor& level,
                         const torch::Tensor& prior_logits, Hw work_hw);

  bool use_low, use_fusion;
  ConvBn compress{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(BalancingWeight);

/// Deep-supervised logit maps and the final probability map.
struct SideOutputs {
  torch::Tensor m_fuse;  // stride 8
  torch::Tensor m5;      // stride 32
  torch::Tensor m4;      // stride 16
  torch::Tensor m3;      // stride 8
  torch::Tensor final;   // sigmoid(resize(m3)) at input resolution

  // Intermediate state kept for inspection.
  SelectionWeights selection;
  std::array<AttentionBundle, 3> attention;  // levels 3,4,5

  std::array<torch::Tensor, 4> supervised() const { return {m_fuse, m3, m4, m5}; }
};

/// The full segmentation network: backbone, low/high-level fusion,
/// selective guidance fusion, and the level 5 -> 3 attention/balancing chain.
struct MisNetImpl : torch::nn::Module {
  explicit MisNetImpl(const ModelConfig& cfg);
  MisNetImpl(const ModelConfig& cfg, BackboneDescriptor desc);

  SideOutputs forward(const torch::Tensor& batch);

  const ModelConfig& config() const { return cfg_; }

  Backbone backbone{nullptr};
  LowLevelFusion low{nullptr};
  HighLevelFusion high{nullptr};
  SelectiveFusion selective{nullptr};
  Cbam cbam{nullptr};
  std::array<ParallelAttention, 3> pam{nullptr, nullptr, nullptr};      // levels 3,4,5
  std::array<BalancingWeight, 3> balance{nullptr, nullptr, nullptr};  // levels 3,4,5

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(MisNet);

/// Builds the network for a validated config. Pretrained backbone weights are
/// loaded when available (see resolve_pretrained_path); returns the path used.
std::optional<std::filesystem::path> load_pretrained_backbone(MisNet& model);

}  // namespace misnet
