#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>

#include "misnet/decoder.hpp"

namespace misnet {

struct LossOptions {
  int weight_window = 31;
  double weight_multiplier = 5.0;
  double iou_smooth = 1.0;
};

/// Boundary-emphasis weight map: 1 + multiplier * |avgpool_k(G) - G|.
/// `mask` is (B,1,H,W) in {0,1}; the window is odd and zero-padded.
torch::Tensor pixel_weight(const torch::Tensor& mask, int window = 31, double multiplier = 5.0);

/// Per-image sum(w * bce) / sum(w), averaged over the batch. Uses the
/// log-sum-exp form of the logistic loss.
torch::Tensor weighted_bce(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weight);

/// Per-image 1 - (sum(w p G) + e) / (sum(w (p + G - p G)) + e) with p the
/// sigmoid of the logits, averaged over the batch. The weights are first
/// rescaled to unit mean per image, so the loss only depends on their
/// relative size.
torch::Tensor weighted_iou(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weight,
                           double smooth = 1.0);

struct LossReport {
  torch::Tensor total;  // differentiable scalar
  double fuse = 0, l3 = 0, l4 = 0, l5 = 0;
  double bce_part = 0, iou_part = 0;

  double total_value() const { return fuse + l3 + l4 + l5; }
};

/// Sum of weighted BCE + weighted IoU over m_fuse, M3, M4, M5, each
/// upsampled to the mask resolution.
LossReport total_loss(const SideOutputs& outputs, const torch::Tensor& mask, const LossOptions& opts = {});

/// base_lr * (1 - epoch / total_epochs)^power for 0 <= epoch < total_epochs.
double poly_lr(int epoch, int total_epochs, double base_lr, double power = 0.9);

struct OptimizerOptions {
  double base_lr = 1e-5;
  double weight_decay = 1e-5;
  double grad_clip = 0.5;  // global L2 norm; <= 0 disables clipping
};

std::unique_ptr<torch::optim::Adam> make_optimizer(MisNet& model, const OptimizerOptions& opts);
void set_learning_rate(torch::optim::Optimizer& opt, double lr);

}  // namespace misnet
