#include "misnet/blocks.hpp"

#include "misnet/core.hpp"

namespace misnet {

namespace F = torch::nn::functional;

torch::Tensor resize_to(const torch::Tensor& x, Hw hw) {
  if (x.size(-2) == hw[0] && x.size(-1) == hw[1]) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{hw[0], hw[1]})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

ConvBnImpl::ConvBnImpl(int64_t in, int64_t out, Hw kernel, Hw padding, Hw dilation, int64_t stride,
                       bool relu_)
    : relu(relu_) {
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, {kernel[0], kernel[1]})
                                                       .padding({padding[0], padding[1]})
                                                       .dilation({dilation[0], dilation[1]})
                                                       .stride(stride)
                                                       .bias(false)));
  bn = register_module("bn", torch::nn::BatchNorm2d(out));
}

torch::Tensor ConvBnImpl::forward(const torch::Tensor& x) {
  auto y = batch_norm_safe(bn, conv(x));
  return relu ? torch::relu(y) : y;
}

torch::nn::Conv2d make_head(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(true));
}

namespace {

torch::nn::Sequential dilated_branch(int64_t in, int64_t out, int64_t k) {
  const int64_t p = k / 2;
  return torch::nn::Sequential(ConvBn(in, out, Hw{1, 1}, Hw{0, 0}, Hw{1, 1}, 1, false),
                               ConvBn(out, out, Hw{1, k}, Hw{0, p}, Hw{1, 1}, 1, false),
                               ConvBn(out, out, Hw{k, 1}, Hw{p, 0}, Hw{1, 1}, 1, false),
                               ConvBn(out, out, Hw{3, 3}, Hw{k, k}, Hw{k, k}, 1, false));
}

}  // namespace

RfbImpl::RfbImpl(int64_t in_channels, int64_t out_channels) {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("Rfb: channel counts must be >= 1");
  branch0 = register_module(
      "branch0", torch::nn::Sequential(ConvBn(in_channels, out_channels, Hw{1, 1}, Hw{0, 0}, Hw{1, 1}, 1, false)));
  branch1 = register_module("branch1", dilated_branch(in_channels, out_channels, 3));
  branch2 = register_module("branch2", dilated_branch(in_channels, out_channels, 5));
  branch3 = register_module("branch3", dilated_branch(in_channels, out_channels, 7));
  project = register_module("project", ConvBn(4 * out_channels, out_channels, Hw{1, 1}, Hw{0, 0}, Hw{1, 1}, 1, false));
  shortcut = register_module("shortcut", ConvBn(in_channels, out_channels, Hw{1, 1}, Hw{0, 0}, Hw{1, 1}, 1, false));
}

torch::Tensor RfbImpl::forward(const torch::Tensor& x) {
  auto cat = torch::cat({branch0->forward(x), branch1->forward(x), branch2->forward(x), branch3->forward(x)}, 1);
  return torch::relu(project(cat) + shortcut(x));
}

}  // namespace misnet
