#include "misnet/backbone.hpp"

#include <cstdlib>
#include <sstream>

#include "misnet/core.hpp"

namespace misnet {

BackboneDescriptor backbone_descriptor(const std::string& id) {
  BackboneDescriptor d;
  d.id = id;
  if (id == "res2net50") {
    d.channels = {64, 256, 512, 1024, 2048};
  } else if (id == "toy") {
    d.channels = {8, 16, 32, 64, 128};
  } else {
    throw ConfigError("backbone_id", "unknown backbone '" + id + "'");
  }
  return d;
}

void check_image_batch(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 3) {
    throw ShapeError("image batch must be (B,3,H,W), got " + std::to_string(batch.dim()) + " axes");
  }
  if (batch.size(2) % 32 != 0 || batch.size(3) % 32 != 0) {
    std::ostringstream msg;
    msg << "image height/width must be divisible by 32, got " << batch.size(2) << "x" << batch.size(3);
    throw ShapeError(msg.str());
  }
}

Bottle2neckImpl::Bottle2neckImpl(int64_t inplanes, int64_t planes, int64_t stride_, bool first, int64_t base_width,
                                 int64_t scale_)
    : width(planes * base_width / 64), scale(scale_), stride(stride_), first_in_stage(first) {
  reduce = register_module("reduce", ConvBn(inplanes, width * scale, 1));
  splits = register_module("splits", torch::nn::ModuleList());
  for (int64_t i = 0; i < scale - 1; ++i) splits->push_back(ConvBn(width, width, 3, stride, true));
  expand = register_module("expand", ConvBn(width * scale, planes * kExpansion, 1, 1, false));
  if (first && (stride != 1 || inplanes != planes * kExpansion)) {
    downsample = register_module(
        "downsample",
        torch::nn::Sequential(torch::nn::AvgPool2d(torch::nn::AvgPool2dOptions(stride).stride(stride).ceil_mode(true).count_include_pad(false)),
                              ConvBn(inplanes, planes * kExpansion, 1, 1, false)));
  }
}

torch::Tensor Bottle2neckImpl::forward(const torch::Tensor& x) {
  auto out = reduce(x);
  auto parts = torch::split(out, width, 1);
  std::vector<torch::Tensor> pieces;
  torch::Tensor sp;
  for (int64_t i = 0; i < scale - 1; ++i) {
    sp = (i == 0 || first_in_stage) ? parts[i] : sp + parts[i];
    sp = splits[i]->as<ConvBnImpl>()->forward(sp);
    pieces.push_back(sp);
  }
  auto last = parts[scale - 1];
  if (first_in_stage) {
    last = torch::avg_pool2d(last, 3, stride, 1);
  }
  pieces.push_back(last);
  out = expand(torch::cat(pieces, 1));
  auto residual = downsample ? downsample->forward(x) : x;
  return torch::relu(out + residual);
}

namespace {

torch::nn::Sequential res2net_layer(int64_t& inplanes, int64_t planes, int64_t blocks, int64_t stride) {
  torch::nn::Sequential layer;
  layer->push_back(Bottle2neck(inplanes, planes, stride, true));
  inplanes = planes * Bottle2neckImpl::kExpansion;
  for (int64_t i = 1; i < blocks; ++i) layer->push_back(Bottle2neck(inplanes, planes, 1, false));
  return layer;
}

}  // namespace

BackboneImpl::BackboneImpl(BackboneDescriptor desc) : desc_(std::move(desc)) {
  if (desc_.id == "res2net50") {
    stages_[0] = torch::nn::Sequential(ConvBn(3, 32, 3, 2), ConvBn(32, 32, 3), ConvBn(32, 64, 3));
    int64_t inplanes = 64;
    stages_[1] = torch::nn::Sequential(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1)));
    const auto layer1 = res2net_layer(inplanes, 64, 3, 1);
    for (const auto& m : *layer1) stages_[1]->push_back(m);
    stages_[2] = res2net_layer(inplanes, 128, 4, 2);
    stages_[3] = res2net_layer(inplanes, 256, 6, 2);
    stages_[4] = res2net_layer(inplanes, 512, 3, 2);
  } else {
    int64_t in = 3;
    for (std::size_t i = 0; i < 5; ++i) {
      const int64_t c = desc_.channels[i];
      stages_[i] = torch::nn::Sequential(ConvBn(in, c, 3, 2), ConvBn(c, c, 3));
      in = c;
    }
  }
  for (std::size_t i = 0; i < 5; ++i) register_module("stage" + std::to_string(i + 1), stages_[i]);
}

MultiScaleFeatures BackboneImpl::forward(const torch::Tensor& batch) {
  check_image_batch(batch);
  MultiScaleFeatures out;
  auto x = batch;
  for (std::size_t i = 0; i < 5; ++i) {
    x = stages_[i]->forward(x);
    out.levels[i] = x;
  }
  return out;
}

std::optional<std::filesystem::path> resolve_pretrained_path(const BackboneDescriptor& desc) {
  if (desc.pretrained_weights_path) {
    if (std::filesystem::exists(*desc.pretrained_weights_path)) return desc.pretrained_weights_path;
    return std::nullopt;
  }
  if (const char* dir = std::getenv("MISNET_WEIGHTS_DIR"); dir && *dir) {
    auto p = std::filesystem::path(dir) / (desc.id + ".pt");
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

void load_backbone_weights(Backbone& backbone, const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot read backbone weights '" + path.string() + "'");
  }
  std::string id;
  {
    c10::IValue v;
    if (!archive.try_read("backbone_id", v) || !v.isString()) {
      throw DataError("weight file '" + path.string() + "' has no backbone_id entry");
    }
    id = v.toStringRef();
  }
  if (id != backbone->descriptor().id) {
    throw DataError("weight file is for backbone '" + id + "', model uses '" + backbone->descriptor().id + "'");
  }

  std::vector<std::pair<torch::Tensor, torch::Tensor>> staged;
  std::ostringstream problems;
  auto check = [&](const std::string& name, const torch::Tensor& dst, bool is_buffer) {
    torch::Tensor src;
    if (!archive.try_read(name, src, is_buffer)) {
      problems << " missing '" << name << "';";
      return;
    }
    if (src.sizes() != dst.sizes()) {
      problems << " shape mismatch for '" << name << "' (file " << src.sizes() << ", model " << dst.sizes() << ");";
      return;
    }
    staged.emplace_back(dst, src);
  };
  for (const auto& p : backbone->named_parameters()) check(p.key(), p.value(), false);
  for (const auto& b : backbone->named_buffers()) check(b.key(), b.value(), true);
  if (!problems.str().empty()) {
    throw DataError("weight manifest does not match backbone '" + id + "':" + problems.str());
  }
  torch::NoGradGuard guard;
  for (auto& [dst, src] : staged) dst.copy_(src);
}

void save_backbone_weights(const Backbone& backbone, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  archive.write("backbone_id", c10::IValue(backbone->descriptor().id));
  for (const auto& p : backbone->named_parameters()) archive.write(p.key(), p.value().detach(), false);
  for (const auto& b : backbone->named_buffers()) archive.write(b.key(), b.value(), true);
  archive.save_to(path.string());
}

}  // namespace misnet
