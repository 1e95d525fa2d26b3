#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "misnet/app.hpp"
#include "misnet/objective.hpp"
#include "torch_support.hpp"

using namespace misnet;

namespace {

ModelConfig toy_config(int size = 32) {
  ModelConfig cfg;
  cfg.backbone_id = "toy";
  cfg.train_size = size;
  return cfg;
}

std::vector<int64_t> shape(const torch::Tensor& t) { return t.sizes().vec(); }

void zero_biases(torch::nn::Module& m) {
  torch::NoGradGuard g;
  for (auto& p : m.named_parameters()) {
    const auto& name = p.key();
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) p.value().zero_();
  }
}

}  // namespace

TEST(Backbone, DefaultPyramidAt352) {
  const auto desc = backbone_descriptor("res2net50");
  EXPECT_EQ(desc.strides, (std::array<int64_t, 5>{2, 4, 8, 16, 32}));
  EXPECT_EQ(desc.channels, (std::array<int64_t, 5>{64, 256, 512, 1024, 2048}));
  Backbone net(desc);
  net->eval();
  torch::NoGradGuard g;
  const auto f = net(torch::randn({1, 3, 352, 352}));
  const int64_t sides[] = {176, 88, 44, 22, 11};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(shape(f[i]), (std::vector<int64_t>{1, desc.channels[i], sides[i], sides[i]})) << "level " << i + 1;
  }
}

TEST(Backbone, ToyStridesOnRectangularInput) {
  Backbone net(backbone_descriptor("toy"));
  net->eval();
  torch::NoGradGuard g;
  const auto x = torch::randn({2, 3, 96, 160});
  const auto f = net(x);
  for (int i = 0; i < 5; ++i) {
    const int64_t s = net->descriptor().strides[i];
    EXPECT_EQ(f[i].size(2), (96 + s - 1) / s);
    EXPECT_EQ(f[i].size(3), (160 + s - 1) / s);
    EXPECT_EQ(f[i].size(1), net->descriptor().channels[i]);
  }
  // Eval mode is bitwise repeatable.
  const auto again = net(x);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(torch::equal(f[i], again[i]));
}

TEST(Backbone, RejectsBadInput) {
  Backbone net(backbone_descriptor("toy"));
  EXPECT_THROW(net(torch::randn({1, 3, 100, 96})), ShapeError);
  EXPECT_THROW(net(torch::randn({3, 64, 64})), ShapeError);
  EXPECT_THROW(net(torch::randn({1, 1, 64, 64})), ShapeError);
  EXPECT_THROW(backbone_descriptor("vgg"), ConfigError);
}

TEST(Backbone, WeightFilesRoundTripAndEnvLookup) {
  const auto dir = testing_support::scratch_dir("model_weights");
  Backbone a(backbone_descriptor("toy"));
  save_backbone_weights(a, dir / "toy.pt");
  ::setenv("MISNET_WEIGHTS_DIR", dir.c_str(), 1);
  const auto found = resolve_pretrained_path(backbone_descriptor("toy"));
  ::unsetenv("MISNET_WEIGHTS_DIR");
  ASSERT_TRUE(found.has_value());
  EXPECT_EQ(*found, dir / "toy.pt");
  EXPECT_FALSE(resolve_pretrained_path(backbone_descriptor("toy")).has_value());

  Backbone b(backbone_descriptor("toy"));
  load_backbone_weights(b, *found);
  const auto pa = a->named_parameters(), pb = b->named_parameters();
  for (const auto& item : pa) EXPECT_TRUE(torch::equal(item.value(), pb[item.key()])) << item.key();

  Backbone big(backbone_descriptor("res2net50"));
  EXPECT_THROW(load_backbone_weights(big, *found), DataError);
  std::ofstream(dir / "junk.pt") << "not an archive";
  EXPECT_THROW(load_backbone_weights(b, dir / "junk.pt"), DataError);
}

TEST(Rfb, PreservesSpatialDims) {
  Rfb rfb(5, 8);
  rfb->eval();
  torch::NoGradGuard g;
  for (auto hw : {std::pair{7, 9}, std::pair{1, 1}, std::pair{16, 16}}) {
    const auto y = rfb(torch::randn({2, 5, hw.first, hw.second}));
    EXPECT_EQ(shape(y), (std::vector<int64_t>{2, 8, hw.first, hw.second}));
  }
}

TEST(Fusion, LowAndHighLevelShapes) {
  torch::NoGradGuard g;
  LowLevelFusion low(8, 16, 32);
  low->eval();
  EXPECT_EQ(shape(low(torch::randn({2, 8, 16, 16}), torch::randn({2, 16, 8, 8}), Hw{4, 4})),
            (std::vector<int64_t>{2, 32, 4, 4}));
  HighLevelFusion high(32, 64, 128, 32, true);
  high->eval();
  const auto out = high(torch::randn({2, 32, 4, 4}), torch::randn({2, 64, 2, 2}), torch::randn({2, 128, 1, 1}));
  EXPECT_EQ(shape(out.fused), (std::vector<int64_t>{2, 32, 4, 4}));
  EXPECT_EQ(shape(out.levels[2]), (std::vector<int64_t>{2, 32, 1, 1}));
  HighLevelFusion plain(32, 64, 128, 32, false);
  EXPECT_FALSE(plain(torch::randn({1, 32, 4, 4}), torch::randn({1, 64, 2, 2}), torch::randn({1, 128, 1, 1})).fused.defined());
}

TEST(SelectiveFusion, CrossFusionIsAsymmetricAndShapePreserving) {
  torch::manual_seed(2);
  SelectiveFusion m(ModelConfig{});
  m->eval();
  torch::NoGradGuard g;
  const auto a = torch::randn({2, 32, 4, 4}), b = torch::randn({2, 32, 4, 4});
  const auto ab = m->cross_fuse(a, b), ba = m->cross_fuse(b, a);
  EXPECT_EQ(shape(ab.lhf3), shape(a));
  EXPECT_EQ(shape(ab.lhf4), shape(a));
  EXPECT_FALSE(torch::allclose(ab.lhf3, ba.lhf3));
  EXPECT_THROW(m->cross_fuse(a, torch::randn({2, 16, 4, 4})), ShapeError);

  zero_biases(*m);
  const auto z = torch::zeros({1, 32, 4, 4});
  const auto zz = m->cross_fuse(z, z);
  EXPECT_EQ(zz.lhf3.abs().max().item<float>(), 0.0f);
  EXPECT_EQ(zz.lhf4.abs().max().item<float>(), 0.0f);
}

TEST(SelectiveFusion, TiedSelectionMatricesAverageTheBranches) {
  SelectiveFusion m(ModelConfig{});
  m->eval();
  torch::NoGradGuard g;
  m->select_h.copy_(m->select_g);
  const auto s_lf = torch::randn({2, 32, 4, 4}), s_hf = torch::randn({2, 32, 4, 4});
  const auto [guidance, w] = m->select(s_lf, s_hf, m->cross_fuse(s_lf, s_hf));
  EXPECT_TRUE(torch::allclose(w.g, torch::full_like(w.g, 0.5)));
  EXPECT_TRUE(torch::allclose(guidance.features, (s_lf + s_hf) / 2, 1e-6, 1e-6));
  EXPECT_EQ(shape(guidance.logits), (std::vector<int64_t>{2, 1, 4, 4}));
}

TEST(SelectiveFusion, BlendScalesWithInputs) {
  const auto s_lf = torch::randn({2, 4, 3, 3}, torch::kDouble), s_hf = torch::randn({2, 4, 3, 3}, torch::kDouble);
  const auto w = two_way_softmax(torch::randn({2, 4}, torch::kDouble), torch::randn({2, 4}, torch::kDouble));
  for (double lambda : {-2.0, 0.5, 3.0}) {
    EXPECT_TRUE(torch::allclose(blend_by_selection(lambda * s_lf, lambda * s_hf, w), lambda * blend_by_selection(s_lf, s_hf, w)));
  }
}

TEST(SelectiveFusion, AblationPaths) {
  torch::NoGradGuard g;
  const auto f_lf = torch::randn({1, 32, 4, 4}), f_hf = torch::randn({1, 32, 4, 4});
  ModelConfig add;
  add.flags.use_ssfm = false;
  SelectiveFusion plain(add);
  plain->eval();
  const auto out = plain(f_lf, f_hf);
  EXPECT_TRUE(torch::allclose(out.guidance.features, plain->squeeze_low(f_lf) + plain->squeeze_high(f_hf)));
  EXPECT_FALSE(out.weights.g.defined());

  SelectiveFusion high_only(apply_ablation(ModelConfig{}, "wo_lfm1"));
  high_only->eval();
  EXPECT_EQ(shape(high_only(torch::Tensor(), f_hf).guidance.logits), (std::vector<int64_t>{1, 1, 4, 4}));
  SelectiveFusion low_only(apply_ablation(ModelConfig{}, "wo_hfm"));
  low_only->eval();
  EXPECT_EQ(shape(low_only(f_lf, torch::Tensor()).guidance.features), (std::vector<int64_t>{1, 32, 4, 4}));
}

TEST(SelectiveFusion, DumpsSelectionWeights) {
  const auto dir = testing_support::scratch_dir("model_selection");
  const auto w = two_way_softmax(torch::zeros({2, 3}), torch::zeros({2, 3}));
  dump_selection_weights(w, dir / "sel.csv");
  std::ifstream in(dir / "sel.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "channel,g,h");
  EXPECT_EQ(first, "0,0.5,0.5");
}

TEST(AxialAttention, SingletonIsTwiceTheValueProjection) {
  AxialAttention m(8, 2);
  torch::NoGradGuard g;
  const auto x = torch::randn({2, 8, 1, 1});
  EXPECT_TRUE(torch::allclose(m(x), 2 * m->value(x), 1e-6, 1e-6));
}

TEST(AxialAttention, ConstantRowsStayConstant) {
  AxialAttention m(8, 2);
  torch::NoGradGuard g;
  const auto x = torch::randn({1, 8, 5, 1}).expand({1, 8, 5, 7}).contiguous();
  const auto y = m->horizontal(x);
  EXPECT_TRUE(torch::allclose(y, y.select(3, 0).unsqueeze(3).expand_as(y), 1e-6, 1e-6));
  EXPECT_EQ(shape(m(x)), shape(x));
}

TEST(AttentionWeights, IdentitiesAndMonotonicity) {
  const auto logits = (torch::arange(-80, 81, torch::kDouble) / 10).view({1, 1, 1, 161});
  const Hw hw{1, 161};
  const auto r = reverse_weight(logits, hw);
  const auto b = boundary_weight(logits, hw);
  EXPECT_TRUE(torch::equal(r + torch::sigmoid(logits), torch::ones_like(r)));
  EXPECT_TRUE((r.diff(1, -1) < 0).all().item<bool>());
  EXPECT_TRUE((r > 0).all().item<bool>() && (r < 1).all().item<bool>());
  EXPECT_TRUE((b >= 0).all().item<bool>() && (b <= 1).all().item<bool>());
  const auto left = b.narrow(-1, 0, 81), right = b.narrow(-1, 80, 81);
  EXPECT_TRUE((left.diff(1, -1) > 0).all().item<bool>());
  EXPECT_TRUE((right.diff(1, -1) < 0).all().item<bool>());
  EXPECT_EQ(b.flatten()[80].item<double>(), 1.0);
  // Upsampling to the feature resolution.
  EXPECT_EQ(shape(reverse_weight(torch::zeros({2, 1, 2, 2}), Hw{8, 8})), (std::vector<int64_t>{2, 1, 8, 8}));
}

TEST(ParallelAttention, SaturatedPriorPassesFeaturesThrough) {
  ParallelAttention pam(8, AblationFlags{});
  pam->eval();
  torch::NoGradGuard g;
  const auto x = torch::randn({1, 8, 6, 6}, torch::kDouble);
  pam->to(torch::kDouble);
  const auto out = pam(x, torch::full({1, 1, 3, 3}, 100.0, torch::kDouble));
  EXPECT_TRUE(torch::equal(out.reverse_features, x));
  EXPECT_TRUE(torch::equal(out.boundary_features, x));
  EXPECT_EQ(shape(out.fused), shape(x));
}

TEST(ParallelAttention, SharedAggregationMatchesSingleBranchModules) {
  torch::NoGradGuard g;
  AblationFlags ra_only, ba_only;
  ra_only.use_pa_ba = false;
  ba_only.use_pa_ra = false;
  ParallelAttention both(8, AblationFlags{}), ra(8, ra_only), ba(8, ba_only);
  for (auto* m : {&ra, &ba}) {
    auto src = both->axial->named_parameters();
    for (auto& p : (*m)->axial->named_parameters()) p.value().copy_(src[p.key()]);
  }
  const auto x = torch::randn({1, 8, 5, 6}), prior = torch::randn({1, 1, 3, 3});
  const auto joint = both(x, prior);
  EXPECT_TRUE(torch::equal(joint.reverse_features, ra(x, prior).reverse_features));
  EXPECT_TRUE(torch::equal(joint.boundary_features, ba(x, prior).boundary_features));
  EXPECT_EQ(ra(x, prior).fused.size(1), 8);
  EXPECT_FALSE(ra(x, prior).boundary.defined());
}

TEST(ParallelAttention, DisabledAndOddChannels) {
  AblationFlags off;
  off.use_pam = false;
  ParallelAttention none(8, off);
  const auto x = torch::randn({1, 8, 4, 4});
  EXPECT_TRUE(torch::equal(none(x, torch::zeros({1, 1, 2, 2})).fused, x));
  EXPECT_THROW(ParallelAttention(7, AblationFlags{}), ConfigError);
}

TEST(ParallelAttention, ExportsMaps) {
  const auto dir = testing_support::scratch_dir("model_attention");
  ParallelAttention pam(8, AblationFlags{});
  torch::NoGradGuard g;
  const auto out = pam(torch::randn({1, 8, 4, 4}), torch::zeros({1, 1, 2, 2}));
  export_attention_maps(out, dir, "x_l3");
  EXPECT_TRUE(std::filesystem::exists(dir / "x_l3_reverse.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "x_l3_boundary.png"));
}

TEST(BalancingWeight, ShapesAndPlainAddition) {
  torch::NoGradGuard g;
  BalancingWeight bwm(8, AblationFlags{});
  bwm->eval();
  const auto low = torch::randn({1, 8, 8, 8}), att = torch::randn({1, 8, 2, 2}), level = torch::randn({1, 8, 2, 2});
  const auto prior = torch::randn({1, 1, 4, 4});
  const auto out = bwm(low, att, level, prior, Hw{8, 8});
  EXPECT_EQ(shape(out.logits), (std::vector<int64_t>{1, 1, 2, 2}));
  EXPECT_EQ(shape(out.features), (std::vector<int64_t>{1, 8, 8, 8}));
  EXPECT_THROW(bwm(torch::randn({1, 8, 4, 4}), att, level, prior, Hw{8, 8}), ShapeError);

  AblationFlags off;
  off.use_bwm = false;
  BalancingWeight plain(8, off);
  const auto sum = plain(low, att, level, prior, Hw{8, 8});
  EXPECT_TRUE(torch::allclose(sum.features, low + resize_to(att, Hw{8, 8}) + resize_to(level, Hw{8, 8})));
}

TEST(MisNet, ToyShapesAndFinalMap) {
  MisNet net(toy_config());
  net->eval();
  torch::NoGradGuard g;
  const auto out = net(torch::randn({2, 3, 32, 32}));
  EXPECT_EQ(shape(out.m_fuse), (std::vector<int64_t>{2, 1, 4, 4}));
  EXPECT_EQ(shape(out.m5), (std::vector<int64_t>{2, 1, 1, 1}));
  EXPECT_EQ(shape(out.m4), (std::vector<int64_t>{2, 1, 2, 2}));
  EXPECT_EQ(shape(out.m3), (std::vector<int64_t>{2, 1, 4, 4}));
  EXPECT_TRUE(torch::equal(out.final, torch::sigmoid(resize_to(out.m3, Hw{32, 32}))));
  for (const auto& m : out.supervised()) EXPECT_TRUE(torch::isfinite(m).all().item<bool>());
  EXPECT_EQ(out.selection.g.size(1), 32);
}

TEST(MisNet, EveryParameterReceivesGradient) {
  // At 64x64 the deepest level is 2x2. At 1x1 a softmax over one position
  // and a bias ahead of batch norm both have provably zero gradient.
  torch::manual_seed(12);
  MisNet net(toy_config(64));
  net->to(torch::kDouble);
  net->train();
  std::map<std::string, double> reached;
  for (int trial = 0; trial < 3; ++trial) {
    net->zero_grad();
    const auto x = torch::randn({2, 3, 64, 64}, torch::kDouble);
    const auto y = (torch::rand({2, 1, 64, 64}, torch::kDouble) > 0.5).to(torch::kDouble);
    total_loss(net(x), y).total.backward();
    for (const auto& p : net->named_parameters()) {
      reached[p.key()] += p.value().grad().defined() ? p.value().grad().abs().sum().item<double>() : 0.0;
    }
  }
  for (const auto& [name, g] : reached) EXPECT_GT(g, 0.0) << name;
}

TEST(MisNet, PriorsChainFromGuidanceToLevelThree) {
  MisNet net(toy_config());
  net->eval();
  const auto out = net(torch::randn({1, 3, 32, 32}));
  auto depends = [](const torch::Tensor& y, const torch::Tensor& x) {
    const auto g = torch::autograd::grad({y.sum()}, {x}, {}, true, false, true)[0];
    return g.defined() && g.abs().sum().item<double>() > 0;
  };
  EXPECT_TRUE(depends(out.m5, out.m_fuse));
  EXPECT_TRUE(depends(out.m4, out.m5));
  EXPECT_TRUE(depends(out.m3, out.m4));
}

TEST(MisNet, AllAblationVariantsBuild) {
  for (const auto& v : ablation_variants()) {
    MisNet net(apply_ablation(toy_config(), v));
    const auto out = net(torch::randn({2, 3, 32, 32}));
    total_loss(out, torch::ones({2, 1, 32, 32})).total.backward();
    EXPECT_EQ(out.m3.size(2), 4) << v;
  }
}
