#pragma once

#include <torch/torch.h>

#include <filesystem>

#include "misnet/blocks.hpp"
#include "misnet/core.hpp"

namespace misnet {

/// Single-head axial self-attention. Query, key and value projections are
/// shared by the row pass and the column pass; the two passes are summed.
struct AxialAttentionImpl : torch::nn::Module {
  AxialAttentionImpl(int64_t channels, int64_t key_channels);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor horizontal(const torch::Tensor& x);
  torch::Tensor vertical(const torch::Tensor& x);

  int64_t key_channels;
  torch::nn::Conv2d query{nullptr}, key{nullptr}, value{nullptr};
};
TORCH_MODULE(AxialAttention);

/// Default query/key width for `channels` feature channels.
int64_t axial_key_channels(int64_t channels);

/// 1 - sigmoid(resize(logits)). Values in (0,1).
torch::Tensor reverse_weight(const torch::Tensor& prior_logits, Hw target_hw);

/// 1 - |sigmoid(resize(logits)) - 0.5| / 0.5. Peaks at 1 where the prior is
/// undecided.
torch::Tensor boundary_weight(const torch::Tensor& prior_logits, Hw target_hw);

struct AttentionBundle {
  torch::Tensor reverse;    // r_i, (B,1,H,W); undefined when the branch is off
  torch::Tensor boundary;   // b_i
  torch::Tensor reverse_features;   // FF*r + F before compression
  torch::Tensor boundary_features;  // FF*b + F before compression
  torch::Tensor fused;      // f_rb, (B,C,H,W)
};

/// Parallel axial reverse/boundary attention for one decoder level.
struct ParallelAttentionImpl : torch::nn::Module {
  ParallelAttentionImpl(int64_t channels, const AblationFlags& flags);

  AttentionBundle forward(const torch::Tensor& feature, const torch::Tensor& prior_logits);

  int64_t channels;
  bool enabled, use_reverse, use_boundary;
  AxialAttention axial{nullptr};
  ConvBn compress_reverse{nullptr}, compress_boundary{nullptr};
};
TORCH_MODULE(ParallelAttention);

/// Writes r_i and b_i of the first batch element as 8-bit grayscale PNGs
/// (`<stem>_reverse.png`, `<stem>_boundary.png`).
void export_attention_maps(const AttentionBundle& bundle, const std::filesystem::path& dir, const std::string& stem);

}  // namespace misnet
