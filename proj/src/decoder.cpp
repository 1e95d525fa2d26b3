#include "misnet/decoder.hpp"

namespace misnet {

CbamImpl::CbamImpl(int64_t channels, int64_t reduction) {
  const int64_t hidden = std::max<int64_t>(1, channels / reduction);
  mlp = register_module("mlp", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, hidden, 1)),
                                                     torch::nn::ReLU(),
                                                     torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, channels, 1))));
  spatial = register_module("spatial", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, 7).padding(3)));
}

torch::Tensor CbamImpl::forward(const torch::Tensor& x) {
  auto avg = torch::adaptive_avg_pool2d(x, {1, 1});
  auto max = torch::adaptive_max_pool2d(x, {1, 1});
  auto y = x * torch::sigmoid(mlp->forward(avg) + mlp->forward(std::get<0>(max)));
  auto pooled = torch::cat({y.mean(1, true), std::get<0>(y.max(1, true))}, 1);
  return y * torch::sigmoid(spatial(pooled));
}

BalancingWeightImpl::BalancingWeightImpl(int64_t channels, const AblationFlags& flags)
    : use_low(flags.use_lfm_bwm), use_fusion(flags.use_bwm) {
  if (use_fusion) {
    const int64_t in = (use_low ? 3 : 2) * channels;
    compress = register_module("compress", ConvBn(in, channels, 3));
  }
  head = register_module("head", make_head(channels));
}

BalancedOutput BalancingWeightImpl::forward(const torch::Tensor& low, const torch::Tensor& attention,
                                            const torch::Tensor& level, const torch::Tensor& prior_logits,
                                            Hw work_hw) {
  auto att = resize_to(attention, work_hw);
  auto lev = resize_to(level, work_hw);
  if (use_low && spatial_dims(low) != work_hw) throw ShapeError("BalancingWeight: low-level feature is not at the working resolution");

  torch::Tensor x;
  if (use_fusion) {
    x = use_low ? torch::cat({low, att, lev}, 1) : torch::cat({att, lev}, 1);
    x = compress(x);
    x = x * x.mean({2, 3}, true);
  } else {
    x = use_low ? low + att + lev : att + lev;
  }
  const Hw level_hw = spatial_dims(level);
  auto logits = resize_to(head(x), level_hw) + resize_to(prior_logits, level_hw);
  return {x, logits};
}

MisNetImpl::MisNetImpl(const ModelConfig& cfg) : MisNetImpl(cfg, backbone_descriptor(cfg.backbone_id)) {}

MisNetImpl::MisNetImpl(const ModelConfig& cfg, BackboneDescriptor desc) : cfg_(validate_config(cfg)) {
  const auto& f = cfg_.flags;
  const int64_t c = cfg_.squeeze_channels;
  const auto& ch = desc.channels;
  backbone = register_module("backbone", Backbone(std::move(desc)));
  if (f.uses_low_level()) low = register_module("low", LowLevelFusion(ch[0], ch[1], c));
  high = register_module("high", HighLevelFusion(ch[2], ch[3], ch[4], c, f.use_hfm));
  selective = register_module("selective", SelectiveFusion(cfg_));
  if (f.use_lfm_bwm) cbam = register_module("cbam", Cbam(c));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string level = std::to_string(i + 3);
    pam[i] = register_module("pam" + level, ParallelAttention(c, f));
    balance[i] = register_module("balance" + level, BalancingWeight(c, f));
  }
}

SideOutputs MisNetImpl::forward(const torch::Tensor& batch) {
  check_image_batch(batch);
  const auto& f = cfg_.flags;
  const Hw input_hw = spatial_dims(batch);
  const Hw work_hw{input_hw[0] / 8, input_hw[1] / 8};

  const auto feats = backbone(batch);
  torch::Tensor f_lf;
  if (low) f_lf = low(feats[0], feats[1], work_hw);
  const auto hf = high(feats[2], feats[3], feats[4]);

  SideOutputs out;
  auto guidance = selective(f.use_lfm_ssfm ? f_lf : torch::Tensor(), hf.fused);
  out.m_fuse = guidance.guidance.logits;
  out.selection = guidance.weights;

  torch::Tensor f_clf;
  if (cbam) f_clf = cbam(f_lf);

  torch::Tensor prior = out.m_fuse;
  std::array<torch::Tensor, 3> maps;
  for (int i = 2; i >= 0; --i) {
    const auto& level = hf.levels[i];
    out.attention[i] = pam[i](level, prior);
    maps[i] = balance[i](f_clf, out.attention[i].fused, level, prior, work_hw).logits;
    prior = maps[i];
  }
  out.m3 = maps[0];
  out.m4 = maps[1];
  out.m5 = maps[2];
  out.final = torch::sigmoid(resize_to(out.m3, input_hw));
  return out;
}

std::optional<std::filesystem::path> load_pretrained_backbone(MisNet& model) {
  auto path = resolve_pretrained_path(model->backbone->descriptor());
  if (path) load_backbone_weights(model->backbone, *path);
  return path;
}

}  // namespace misnet
