#include "misnet/objective.hpp"

#include <cmath>

namespace misnet {

namespace F = torch::nn::functional;

torch::Tensor pixel_weight(const torch::Tensor& mask, int window, double multiplier) {
  if (window < 1 || window % 2 == 0) throw ConfigError("weight_window", "must be a positive odd integer");
  auto pooled = F::avg_pool2d(mask, F::AvgPool2dFuncOptions(window).stride(1).padding(window / 2).count_include_pad(true));
  return 1.0 + multiplier * torch::abs(pooled - mask);
}

namespace {

void check_loss_inputs(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weight) {
  if (logits.sizes() != mask.sizes() || logits.sizes() != weight.sizes()) {
    throw ShapeError("loss: logits, mask and weight must share a shape");
  }
  if (!torch::isfinite(logits).all().item<bool>()) throw DataError("loss: non-finite logits");
}

std::vector<int64_t> spatial_axes(const torch::Tensor& t) {
  std::vector<int64_t> axes;
  for (int64_t d = 1; d < t.dim(); ++d) axes.push_back(d);
  return axes;
}

}  // namespace

torch::Tensor weighted_bce(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weight) {
  check_loss_inputs(logits, mask, weight);
  auto per_pixel = torch::clamp_min(logits, 0) - logits * mask + torch::log1p(torch::exp(-torch::abs(logits)));
  const auto axes = spatial_axes(logits);
  return ((weight * per_pixel).sum(axes) / weight.sum(axes)).mean();
}

torch::Tensor weighted_iou(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weight,
                           double smooth) {
  check_loss_inputs(logits, mask, weight);
  const auto axes = spatial_axes(logits);
  auto w = weight / weight.mean(axes, true);
  auto p = torch::sigmoid(logits);
  auto inter = (w * p * mask).sum(axes);
  auto uni = (w * (p + mask - p * mask)).sum(axes);
  return (1.0 - (inter + smooth) / (uni + smooth)).mean();
}

LossReport total_loss(const SideOutputs& outputs, const torch::Tensor& mask, const LossOptions& opts) {
  const Hw hw = spatial_dims(mask);
  const auto weight = pixel_weight(mask, opts.weight_window, opts.weight_multiplier);
  LossReport report;
  std::array<double*, 4> slots{&report.fuse, &report.l3, &report.l4, &report.l5};
  const auto maps = outputs.supervised();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    auto logits = resize_to(maps[i], hw);
    auto bce = weighted_bce(logits, mask, weight);
    auto iou = weighted_iou(logits, mask, weight, opts.iou_smooth);
    auto term = bce + iou;
    report.total = report.total.defined() ? report.total + term : term;
    *slots[i] = term.item<double>();
    report.bce_part += bce.item<double>();
    report.iou_part += iou.item<double>();
  }
  return report;
}

double poly_lr(int epoch, int total_epochs, double base_lr, double power) {
  if (total_epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (epoch < 0 || epoch >= total_epochs) {
    throw ConfigError("epoch", "must lie in [0, " + std::to_string(total_epochs) + "), got " + std::to_string(epoch));
  }
  return base_lr * std::pow(1.0 - static_cast<double>(epoch) / total_epochs, power);
}

std::unique_ptr<torch::optim::Adam> make_optimizer(MisNet& model, const OptimizerOptions& opts) {
  return std::make_unique<torch::optim::Adam>(model->parameters(),
                                              torch::optim::AdamOptions(opts.base_lr).weight_decay(opts.weight_decay));
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

}  // namespace misnet
