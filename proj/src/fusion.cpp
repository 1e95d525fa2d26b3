#include "misnet/fusion.hpp"

#include <fstream>

namespace misnet {

LowLevelFusionImpl::LowLevelFusionImpl(int64_t c1, int64_t c2, int64_t channels) {
  rfb1 = register_module("rfb1", Rfb(c1, channels));
  rfb2 = register_module("rfb2", Rfb(c2, channels));
  adjust1 = register_module("adjust1", ConvBn(channels, channels, 1, 1, false));
  adjust2 = register_module("adjust2", ConvBn(channels, channels, 1, 1, false));
  conv1 = register_module("conv1", ConvBn(channels, channels, 3));
  conv2 = register_module("conv2", ConvBn(channels, channels, 3));
  fuse1 = register_module("fuse1", ConvBn(2 * channels, channels, 3));
  fuse2 = register_module("fuse2", ConvBn(channels, channels, 3));
}

torch::Tensor LowLevelFusionImpl::forward(const torch::Tensor& f1, const torch::Tensor& f2, Hw work_hw) {
  auto a = adjust1(rfb1(f1));
  auto b = adjust2(rfb2(f2));
  b = resize_to(b, spatial_dims(a));
  if (spatial_dims(a) != spatial_dims(b)) throw ShapeError("LowLevelFusion: level 2 does not match level 1 after upsampling");
  auto x = torch::cat({conv1(a), conv2(b)}, 1);
  x = fuse2(fuse1(x));
  return torch::adaptive_avg_pool2d(x, {work_hw[0], work_hw[1]});
}

PartialDecoderImpl::PartialDecoderImpl(int64_t c) {
  up1 = register_module("up1", ConvBn(c, c, 3, 1, false));
  up2 = register_module("up2", ConvBn(c, c, 3, 1, false));
  up3 = register_module("up3", ConvBn(c, c, 3, 1, false));
  up4 = register_module("up4", ConvBn(c, c, 3, 1, false));
  up5 = register_module("up5", ConvBn(2 * c, 2 * c, 3, 1, false));
  concat2 = register_module("concat2", ConvBn(2 * c, 2 * c, 3, 1, false));
  concat3 = register_module("concat3", ConvBn(3 * c, 3 * c, 3, 1, false));
  refine = register_module("refine", ConvBn(3 * c, 3 * c, 3, 1, false));
  project = register_module("project", torch::nn::Conv2d(torch::nn::Conv2dOptions(3 * c, c, 1)));
}

torch::Tensor PartialDecoderImpl::forward(const torch::Tensor& x3, const torch::Tensor& x4, const torch::Tensor& x5) {
  const Hw hw4 = spatial_dims(x4);
  const Hw hw3 = spatial_dims(x3);
  auto x5_up4 = resize_to(x5, hw4);
  auto x5_up3 = resize_to(x5, hw3);
  auto x4_up3 = resize_to(x4, hw3);

  auto x4_1 = up1(x5_up4) * x4;
  auto x3_1 = up2(x5_up3) * up3(x4_up3) * x3;
  auto x4_2 = concat2(torch::cat({x4_1, up4(x5_up4)}, 1));
  auto x3_2 = concat3(torch::cat({x3_1, up5(resize_to(x4_2, hw3))}, 1));
  return project(refine(x3_2));
}

HighLevelFusionImpl::HighLevelFusionImpl(int64_t c3, int64_t c4, int64_t c5, int64_t channels, bool aggregate) {
  rfb3 = register_module("rfb3", Rfb(c3, channels));
  rfb4 = register_module("rfb4", Rfb(c4, channels));
  rfb5 = register_module("rfb5", Rfb(c5, channels));
  if (aggregate) decoder = register_module("decoder", PartialDecoder(channels));
}

HighLevelOutput HighLevelFusionImpl::forward(const torch::Tensor& f3, const torch::Tensor& f4, const torch::Tensor& f5) {
  HighLevelOutput out;
  out.levels = {rfb3(f3), rfb4(f4), rfb5(f5)};
  if (decoder) out.fused = decoder(out.levels[0], out.levels[1], out.levels[2]);
  return out;
}

torch::Tensor blend_by_selection(const torch::Tensor& s_lf, const torch::Tensor& s_hf, const SelectionWeights& w) {
  auto g = w.g.unsqueeze(-1).unsqueeze(-1);
  auto h = w.h.unsqueeze(-1).unsqueeze(-1);
  return g * s_lf + h * s_hf;
}

SelectionWeights two_way_softmax(const torch::Tensor& logits_g, const torch::Tensor& logits_h) {
  auto top = torch::maximum(logits_g, logits_h);
  auto eg = torch::exp(logits_g - top);
  auto eh = torch::exp(logits_h - top);
  auto denom = eg + eh;
  return {eg / denom, eh / denom};
}

SelectiveFusionImpl::SelectiveFusionImpl(const ModelConfig& cfg)
    : channels(cfg.squeeze_channels),
      reduced(reduced_dim(cfg.squeeze_channels, cfg.reduction_ratio, cfg.min_reduced_dim)),
      flags(cfg.flags) {
  const int64_t c = channels;
  if (flags.use_lfm_ssfm) squeeze_lf = register_module("squeeze_lf", ConvBn(c, c, 1, 1, false));
  if (flags.use_hfm) squeeze_hf = register_module("squeeze_hf", ConvBn(c, c, 1, 1, false));
  if (flags.use_ssfm) {
    cross3_a = register_module("cross3_a", ConvBn(2 * c, c, 3));
    cross5_a = register_module("cross5_a", ConvBn(2 * c, c, 5));
    cross3_b = register_module("cross3_b", ConvBn(2 * c, c, 3));
    cross5_b = register_module("cross5_b", ConvBn(2 * c, c, 5));
    fc = register_module("fc", torch::nn::Linear(torch::nn::LinearOptions(c, reduced).bias(false)));
    fc_bn = register_module("fc_bn", torch::nn::BatchNorm1d(reduced));
    const double bound = 1.0 / std::sqrt(static_cast<double>(reduced));
    select_g = register_parameter("select_g", torch::empty({c, reduced}).uniform_(-bound, bound));
    select_h = register_parameter("select_h", torch::empty({c, reduced}).uniform_(-bound, bound));
  } else if (flags.use_lfm_ssfm != flags.use_hfm) {
    single_branch = register_module("single_branch", ConvBn(c, c, 3));
  }
  head = register_module("head", make_head(c));
}

CrossFused SelectiveFusionImpl::cross_fuse(const torch::Tensor& s_lf, const torch::Tensor& s_hf) {
  if (s_lf.sizes() != s_hf.sizes() || s_lf.size(1) != channels) {
    throw ShapeError("SelectiveFusion: squeezed branches must both be (B,C,H,W)");
  }
  auto lhf1 = cross3_a(torch::cat({s_lf, s_hf}, 1));
  auto lhf2 = cross5_a(torch::cat({s_hf, s_lf}, 1));
  auto lhf3 = cross3_b(torch::cat({lhf1, lhf2}, 1));
  auto lhf4 = cross5_b(torch::cat({lhf2, lhf1}, 1));
  return {lhf3, lhf4};
}

std::pair<GuidanceMap, SelectionWeights> SelectiveFusionImpl::select(const torch::Tensor& s_lf,
                                                                     const torch::Tensor& s_hf,
                                                                     const CrossFused& fused) {
  auto lhf = fused.lhf3 + fused.lhf4;
  auto k = lhf.mean({2, 3});                    // (B, C)
  auto q = torch::sigmoid(batch_norm_safe(fc_bn, fc(k)));  // (B, d)
  if (q.size(1) != select_g.size(1)) throw ShapeError("SelectiveFusion: descriptor width does not match G/H");
  auto logits_g = torch::matmul(q, select_g.t());  // (B, C)
  auto logits_h = torch::matmul(q, select_h.t());
  SelectionWeights w = two_way_softmax(logits_g, logits_h);
  auto d = blend_by_selection(s_lf, s_hf, w);
  return {GuidanceMap{d, head(d)}, w};
}

SelectiveFusionImpl::Output SelectiveFusionImpl::forward(const torch::Tensor& f_lf, const torch::Tensor& f_hf) {
  Output out;
  torch::Tensor s_lf = (flags.use_lfm_ssfm && f_lf.defined()) ? squeeze_lf(f_lf) : torch::Tensor();
  torch::Tensor s_hf = (flags.use_hfm && f_hf.defined()) ? squeeze_hf(f_hf) : torch::Tensor();
  if (flags.use_ssfm) {
    auto [guidance, weights] = select(s_lf, s_hf, cross_fuse(s_lf, s_hf));
    out.guidance = guidance;
    out.weights = weights;
    return out;
  }
  torch::Tensor d;
  if (s_lf.defined() && s_hf.defined()) {
    if (s_lf.sizes() != s_hf.sizes()) throw ShapeError("SelectiveFusion: branch shapes differ");
    d = s_lf + s_hf;
  } else {
    d = single_branch(s_lf.defined() ? s_lf : s_hf);
  }
  out.guidance = GuidanceMap{d, head(d)};
  return out;
}

void dump_selection_weights(const SelectionWeights& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto g = w.g.detach().to(torch::kDouble).mean(0).contiguous();
  auto h = w.h.detach().to(torch::kDouble).mean(0).contiguous();
  out << "channel,g,h\n";
  for (int64_t c = 0; c < g.size(0); ++c) {
    out << c << ',' << format_double(g[c].item<double>()) << ',' << format_double(h[c].item<double>()) << '\n';
  }
}

}  // namespace misnet
