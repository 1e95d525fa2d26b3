#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>

#include "misnet/blocks.hpp"
#include "misnet/core.hpp"

namespace misnet {

/// Low-level fusion of backbone levels 1 and 2. Output is average-pooled to
/// the stride-8 working resolution.
struct LowLevelFusionImpl : torch::nn::Module {
  LowLevelFusionImpl(int64_t c1, int64_t c2, int64_t channels);

  /// `work_hw` is the stride-8 resolution the fused map is pooled to.
  torch::Tensor forward(const torch::Tensor& f1, const torch::Tensor& f2, Hw work_hw);

  Rfb rfb1{nullptr}, rfb2{nullptr};
  ConvBn adjust1{nullptr}, adjust2{nullptr};
  ConvBn conv1{nullptr}, conv2{nullptr};
  ConvBn fuse1{nullptr}, fuse2{nullptr};
};
TORCH_MODULE(LowLevelFusion);

/// Cascaded partial decoder over three RFB-conditioned levels
/// (shallowest first). Output has `channels` channels at the shallowest
/// level's resolution.
struct PartialDecoderImpl : torch::nn::Module {
  explicit PartialDecoderImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x3, const torch::Tensor& x4, const torch::Tensor& x5);

  ConvBn up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr}, up5{nullptr};
  ConvBn concat2{nullptr}, concat3{nullptr};
  ConvBn refine{nullptr};
  torch::nn::Conv2d project{nullptr};
};
TORCH_MODULE(PartialDecoder);

struct HighLevelOutput {
  torch::Tensor fused;                 // undefined when aggregation is disabled
  std::array<torch::Tensor, 3> levels;  // RFB-conditioned levels 3,4,5 (C channels)
};

/// RFB conditioning of levels 3-5 plus, when `aggregate` is set, the cascaded
/// partial decoder. The conditioned levels also feed the decoder.
struct HighLevelFusionImpl : torch::nn::Module {
  HighLevelFusionImpl(int64_t c3, int64_t c4, int64_t c5, int64_t channels, bool aggregate);
  HighLevelOutput forward(const torch::Tensor& f3, const torch::Tensor& f4, const torch::Tensor& f5);

  Rfb rfb3{nullptr}, rfb4{nullptr}, rfb5{nullptr};
  PartialDecoder decoder{nullptr};
};
TORCH_MODULE(HighLevelFusion);

/// Per-channel soft selection between the two branches; g + h = 1.
struct SelectionWeights {
  torch::Tensor g;  // (B, C)
  torch::Tensor h;  // (B, C)
};

struct GuidanceMap {
  torch::Tensor features;  // D, (B, C, H, W)
  torch::Tensor logits;    // (B, 1, H, W)
};

struct CrossFused {
  torch::Tensor lhf3;
  torch::Tensor lhf4;
};

/// D_c = g_c * S_lf_c + h_c * S_hf_c with (B,C) weights broadcast spatially.
torch::Tensor blend_by_selection(const torch::Tensor& s_lf, const torch::Tensor& s_hf, const SelectionWeights& w);

/// Two-way channel softmax of the logits G q and H q, stabilized by the max.
SelectionWeights two_way_softmax(const torch::Tensor& logits_g, const torch::Tensor& logits_h);

/// Selectively shared fusion of the low- and high-level branches.
///
/// Two rounds of asymmetric cross fusion (3x3 and 5x5 kernels over swapped
/// concatenation orders) feed a squeeze-style descriptor that picks, per
/// channel, how much of each squeezed branch enters the guidance map. With
/// the ablation flags the module degrades to plain addition, or to a single
/// branch passed through a 3x3 conv.
struct SelectiveFusionImpl : torch::nn::Module {
  SelectiveFusionImpl(const ModelConfig& cfg);

  struct Output {
    GuidanceMap guidance;
    SelectionWeights weights;  // undefined unless the selective path ran
  };

  /// Either input may be undefined when the corresponding branch is ablated.
  Output forward(const torch::Tensor& f_lf, const torch::Tensor& f_hf);

  CrossFused cross_fuse(const torch::Tensor& s_lf, const torch::Tensor& s_hf);
  std::pair<GuidanceMap, SelectionWeights> select(const torch::Tensor& s_lf, const torch::Tensor& s_hf,
                                                  const CrossFused& fused);

  torch::Tensor squeeze_low(const torch::Tensor& f_lf) { return squeeze_lf(f_lf); }
  torch::Tensor squeeze_high(const torch::Tensor& f_hf) { return squeeze_hf(f_hf); }

  int64_t channels, reduced;
  AblationFlags flags;
  ConvBn squeeze_lf{nullptr}, squeeze_hf{nullptr};
  ConvBn cross3_a{nullptr}, cross5_a{nullptr}, cross3_b{nullptr}, cross5_b{nullptr};
  torch::nn::Linear fc{nullptr};
  torch::nn::BatchNorm1d fc_bn{nullptr};
  torch::Tensor select_g, select_h;  // (C, d)
  ConvBn single_branch{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(SelectiveFusion);

/// Writes `channel,g,h` rows (batch mean) for inspection.
void dump_selection_weights(const SelectionWeights& w, const std::filesystem::path& path);

}  // namespace misnet
