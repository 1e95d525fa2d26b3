// Acceptance suite: one PASS/FAIL line per criterion, with wall time.
// Usage: misnet_acceptance [name-substring ...]

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "misnet/app.hpp"
#include "misnet/objective.hpp"
#include "oracles.hpp"
#include "torch_support.hpp"

namespace fs = std::filesystem;
using namespace misnet;
using testing_support::gradcheck;

namespace {

// Collects failed checks; a criterion passes when none failed.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void near(double actual, double expected, double tol, const std::string& what) {
    std::ostringstream s;
    s.precision(12);
    s << what << ": got " << actual << ", want " << expected << " +- " << tol;
    expect(std::abs(actual - expected) <= tol, s.str());
  }
  std::string summary() const {
    if (failed_ == 0) return {};
    std::string out = std::to_string(failed_) + " check(s) failed";
    for (const auto& f : failures_) out += "\n    - " + f;
    return out;
  }

 private:
  int failed_ = 0;
  std::vector<std::string> failures_;
};

torch::Tensor rand_double(std::vector<int64_t> shape, bool grad = true) {
  return torch::randn(shape, torch::kDouble).requires_grad_(grad);
}

// ---- 1. equation fidelity --------------------------------------------------

std::string equation_fidelity() {
  Checks c;
  c.expect(reduced_dim(64, 4, 16) == 16, "reduced_dim(64,4,16) == 16");
  c.expect(reduced_dim(16, 4, 16) == 16, "reduced_dim(16,4,16) == 16");
  c.expect(reduced_dim(256, 4, 16) == 64, "reduced_dim(256,4,16) == 64");
  c.expect(reduced_dim(32, 4, 16) == 16, "reduced_dim(32,4,16) == 16");
  c.expect(reduced_dim(66, 4, 1) == 17, "reduced_dim rounds up: (66,4,1) == 17");

  torch::manual_seed(1);
  // Selection weights over random logits, including large magnitudes.
  for (double scale : {1.0, 10.0, 500.0}) {
    auto w = two_way_softmax(torch::randn({4, 32}) * scale, torch::randn({4, 32}) * scale);
    const double err = (w.g + w.h - 1).abs().max().item<double>();
    c.near(err, 0.0, 1e-6, "g + h = 1 (logit scale " + std::to_string(scale) + ")");
    c.expect(torch::isfinite(w.g).all().item<bool>(), "selection weights finite");
  }
  auto equal = two_way_softmax(torch::full({2, 8}, 3.7), torch::full({2, 8}, 3.7));
  c.near((equal.g - 0.5).abs().max().item<double>(), 0.0, 1e-12, "G == H gives g = 0.5");
  c.near((equal.h - 0.5).abs().max().item<double>(), 0.0, 1e-12, "G == H gives h = 0.5");

  for (int trial = 0; trial < 20; ++trial) {
    auto s_lf = torch::randn({2, 8, 5, 5}, torch::kDouble);
    auto s_hf = torch::randn({2, 8, 5, 5}, torch::kDouble);
    auto w = two_way_softmax(torch::randn({2, 8}, torch::kDouble) * 3, torch::randn({2, 8}, torch::kDouble) * 3);
    auto d = blend_by_selection(s_lf, s_hf, w);
    auto lo = torch::minimum(s_lf, s_hf) - 1e-12;
    auto hi = torch::maximum(s_lf, s_hf) + 1e-12;
    c.expect((d >= lo).all().item<bool>() && (d <= hi).all().item<bool>(), "D within [min, max] of the branches");
  }
  {
    auto s_lf = torch::randn({1, 4, 3, 3}, torch::kDouble);
    auto s_hf = torch::randn({1, 4, 3, 3}, torch::kDouble);
    auto w = two_way_softmax(torch::zeros({1, 4}, torch::kDouble), torch::zeros({1, 4}, torch::kDouble));
    c.near((blend_by_selection(s_lf, s_hf, w) - (s_lf + s_hf) / 2).abs().max().item<double>(), 0.0, 1e-12,
           "equal weights average the branches");
  }

  // Weights produced by the module itself.
  ModelConfig cfg;
  cfg.squeeze_channels = 8;
  SelectiveFusion ssfm(cfg);
  ssfm->eval();
  auto out = ssfm(torch::randn({2, 8, 6, 6}), torch::randn({2, 8, 6, 6}));
  c.near((out.weights.g + out.weights.h - 1).abs().max().item<double>(), 0.0, 1e-6, "module g + h = 1");

  const Hw hw{3, 3};
  auto at = [&](double logit) { return torch::full({1, 1, 3, 3}, logit, torch::kDouble); };
  c.near(reverse_weight(at(0), hw).mean().item<double>(), 0.5, 1e-12, "r = 0.5 at logit 0");
  c.near(reverse_weight(at(-3), hw).mean().item<double>(), 0.9525741268224333, 1e-9, "r at logit -3");
  c.near(reverse_weight(at(100), hw).max().item<double>(), 0.0, 1e-12, "r -> 0 at logit 100");
  c.near(boundary_weight(at(0), hw).mean().item<double>(), 1.0, 1e-12, "b = 1 at logit 0");
  c.near(boundary_weight(at(std::log(3.0)), hw).mean().item<double>(), 0.5, 1e-9, "b = 0.5 at sigma 0.75");
  c.near(boundary_weight(at(100), hw).max().item<double>(), 0.0, 1e-12, "b -> 0 at logit 100");
  c.near(boundary_weight(at(-100), hw).max().item<double>(), 0.0, 1e-12, "b -> 0 at logit -100");
  return c.summary();
}

// ---- 2. gradients ----------------------------------------------------------

std::string gradient_suite() {
  Checks c;
  auto check = [&](const std::string& name, torch::nn::Module& m, const std::function<torch::Tensor()>& f,
                   std::vector<torch::Tensor> inputs, double tol) {
    auto tensors = inputs;
    for (auto& p : m.parameters()) tensors.push_back(p);
    const auto r = gradcheck(f, tensors, 48);
    std::ostringstream s;
    s << name << " max rel err " << r.max_rel_error << " over " << r.checked << " coords (" << r.worst << ")";
    std::cout << "    " << s.str() << "\n";
    c.expect(r.max_rel_error <= tol && r.checked > 0, s.str());
  };
  AblationFlags all;

  {
    Rfb m(4, 8);
    testing_support::prepare_for_gradcheck(*m);
    auto x = rand_double({1, 4, 8, 8});
    check("RFB", *m, [&] { return m(x); }, {x}, 1e-3);
  }
  {
    LowLevelFusion m(4, 6, 8);
    testing_support::prepare_for_gradcheck(*m);
    auto f1 = rand_double({1, 4, 16, 16});
    auto f2 = rand_double({1, 6, 8, 8});
    check("LFM", *m, [&] { return m(f1, f2, Hw{4, 4}); }, {f1, f2}, 1e-3);
  }
  {
    HighLevelFusion m(4, 6, 8, 8, true);
    testing_support::prepare_for_gradcheck(*m);
    auto f3 = rand_double({1, 4, 8, 8});
    auto f4 = rand_double({1, 6, 4, 4});
    auto f5 = rand_double({1, 8, 2, 2});
    check("HFM", *m, [&] {
      auto o = m(f3, f4, f5);
      return torch::cat({o.fused.flatten(), o.levels[0].flatten(), o.levels[1].flatten(), o.levels[2].flatten()});
    }, {f3, f4, f5}, 1e-3);
  }
  {
    ModelConfig cfg;
    cfg.squeeze_channels = 8;
    cfg.min_reduced_dim = 4;
    SelectiveFusion m(cfg);
    testing_support::prepare_for_gradcheck(*m);
    auto lf = rand_double({2, 8, 4, 4});
    auto hf = rand_double({2, 8, 4, 4});
    check("SSFM", *m, [&] {
      auto o = m(lf, hf);
      return torch::cat({o.guidance.logits.flatten(), o.guidance.features.flatten()});
    }, {lf, hf}, 1e-3);
  }
  {
    AxialAttention m(8, axial_key_channels(8));
    testing_support::prepare_for_gradcheck(*m);
    auto x = rand_double({1, 8, 6, 5});
    check("axial attention", *m, [&] { return m(x); }, {x}, 1e-3);
  }
  {
    ParallelAttention m(8, all);
    testing_support::prepare_for_gradcheck(*m);
    auto x = rand_double({1, 8, 8, 8});
    auto prior = rand_double({1, 1, 4, 4});
    check("PAM", *m, [&] { return m(x, prior).fused; }, {x, prior}, 1e-3);
  }
  {
    Cbam m(8, 4);
    testing_support::prepare_for_gradcheck(*m);
    auto x = rand_double({1, 8, 6, 6});
    check("CBAM", *m, [&] { return m(x); }, {x}, 1e-3);
  }
  {
    BalancingWeight m(8, all);
    testing_support::prepare_for_gradcheck(*m);
    auto low = rand_double({1, 8, 4, 4});
    auto att = rand_double({1, 8, 2, 2});
    auto level = rand_double({1, 8, 2, 2});
    auto prior = rand_double({1, 1, 4, 4});
    check("BWM", *m, [&] {
      auto o = m(low, att, level, prior, Hw{4, 4});
      return torch::cat({o.logits.flatten(), o.features.flatten()});
    }, {low, att, level, prior}, 1e-3);
  }
  {
    torch::manual_seed(5);
    auto logits = rand_double({2, 1, 8, 8});
    auto mask = (torch::rand({2, 1, 8, 8}, torch::kDouble) > 0.5).to(torch::kDouble);
    auto weight = pixel_weight(mask, 5, 5.0);
    torch::nn::Module none;
    check("weighted BCE", none, [&] { return weighted_bce(logits, mask, weight); }, {logits}, 1e-4);
    check("weighted IoU", none, [&] { return weighted_iou(logits, mask, weight); }, {logits}, 1e-4);
  }
  return c.summary();
}

// ---- 3. loss oracle --------------------------------------------------------

std::vector<double> to_vec(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kDouble).contiguous().view(-1);
  return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

std::string loss_oracle() {
  Checks c;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_real_distribution<double> u(0, 1);
  const int windows[] = {1, 3, 5, 7, 31};
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int rows = dim(rng), cols = dim(rng), batch = 1 + trial % 3;
    const int window = windows[trial % 5];
    const double p = u(rng);
    auto logits = (torch::rand({batch, 1, rows, cols}, torch::kDouble) * 12 - 6);
    auto mask = (torch::rand({batch, 1, rows, cols}, torch::kDouble) < p).to(torch::kDouble);
    auto w = pixel_weight(mask, window, 5.0);
    const double bce = weighted_bce(logits, mask, w).item<double>();
    const double iou = weighted_iou(logits, mask, w, 1.0).item<double>();

    double bce_o = 0, iou_o = 0, w_err = 0;
    for (int b = 0; b < batch; ++b) {
      const auto lv = to_vec(logits[b]);
      const auto mv = to_vec(mask[b]);
      const auto wo = oracle::pixel_weight(mv, rows, cols, window, 5.0);
      const auto wv = to_vec(w[b]);
      for (std::size_t i = 0; i < wo.size(); ++i) w_err = std::max(w_err, std::abs(wo[i] - wv[i]));
      bce_o += oracle::weighted_bce(lv, mv, wo) / batch;
      iou_o += oracle::weighted_iou(lv, mv, wo, 1.0) / batch;
    }
    worst = std::max({worst, std::abs(bce - bce_o), std::abs(iou - iou_o), w_err});
    c.expect(std::abs(bce - bce_o) <= 1e-9, "weighted BCE vs oracle, trial " + std::to_string(trial));
    c.expect(std::abs(iou - iou_o) <= 1e-9, "weighted IoU vs oracle, trial " + std::to_string(trial));
    c.expect(w_err <= 1e-12, "pixel weight vs oracle, trial " + std::to_string(trial));

    // Uniform scaling of the weights.
    for (double s : {2.0, 0.5, 4.0, 1024.0}) {
      c.expect(weighted_bce(logits, mask, w * s).item<double>() == bce, "BCE changes under weight scale");
      c.expect(weighted_iou(logits, mask, w * s, 1.0).item<double>() == iou, "IoU changes under weight scale");
    }
    const double s = 0.1 + 9.9 * u(rng);
    c.near(weighted_bce(logits, mask, w * s).item<double>(), bce, 1e-12, "BCE under arbitrary weight scale");
    c.near(weighted_iou(logits, mask, w * s, 1.0).item<double>(), iou, 1e-12, "IoU under arbitrary weight scale");
  }

  // The total is the sum of the four per-map terms.
  SideOutputs side;
  side.m_fuse = torch::randn({2, 1, 4, 4}, torch::kDouble);
  side.m3 = torch::randn({2, 1, 4, 4}, torch::kDouble);
  side.m4 = torch::randn({2, 1, 2, 2}, torch::kDouble);
  side.m5 = torch::randn({2, 1, 1, 1}, torch::kDouble);
  auto mask = (torch::rand({2, 1, 32, 32}, torch::kDouble) > 0.6).to(torch::kDouble);
  const auto rep = total_loss(side, mask);
  double sum = 0;
  const auto w = pixel_weight(mask);
  for (const auto& m : side.supervised()) {
    auto l = resize_to(m, {32, 32});
    sum += (weighted_bce(l, mask, w) + weighted_iou(l, mask, w)).item<double>();
  }
  c.near(rep.total.item<double>(), sum, 1e-12, "total = sum of map losses");
  c.expect(rep.total.item<double>() >= 0, "total >= 0");
  std::cout << "    worst loss-oracle deviation " << worst << "\n";
  return c.summary();
}

// ---- 4. metrics oracle -----------------------------------------------------

std::string metrics_oracle() {
  Checks c;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  auto cmp = [&](double a, double b, const std::string& what, int trial) {
    worst = std::max(worst, std::abs(a - b));
    c.expect(std::abs(a - b) <= 1e-9, what + " differs from oracle on trial " + std::to_string(trial) + ": " +
                                          std::to_string(a) + " vs " + std::to_string(b));
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const double p = trial % 50 == 0 ? 0.0 : (trial % 50 == 1 ? 1.0 : u(rng));
    const auto g = oracle::random_mask(8, 8, rng, p);
    misnet::ProbMap s;
    switch (trial % 3) {
      case 0:
        s = oracle::random_prob(8, 8, rng);
        break;
      case 1:
        s = oracle::random_prob_8bit(8, 8, rng);
        break;
      default:
        s = oracle::random_mask(8, 8, rng, u(rng)).as_prob();
    }
    const auto sg = oracle::to_grid(s);
    const auto gg = oracle::to_grid(g);
    for (auto mode : {metrics::ThresholdMode::kFixed, metrics::ThresholdMode::kAdaptive}) {
      const double t = metrics::binarization_threshold(s, mode);
      const auto o = metrics::mdice_miou(s, g, t);
      const auto oo = oracle::dice_iou(sg, gg, t);
      cmp(o.dice, oo.dice, "dice", trial);
      cmp(o.iou, oo.iou, "iou", trial);
    }
    cmp(metrics::weighted_fmeasure(s, g).value, oracle::weighted_f(sg, gg), "wFm", trial);
    cmp(metrics::s_measure(s, g), oracle::s_measure(sg, gg, 0.5), "Sm", trial);
    cmp(metrics::e_measure(s, g, metrics::EMeasureMode::kMax), oracle::e_measure_max(sg, gg), "Em(max)", trial);
    cmp(metrics::e_measure(s, g, metrics::EMeasureMode::kFixed), oracle::e_measure_fixed(sg, gg, 0.5), "Em(fixed)",
        trial);
    cmp(metrics::mae(s, g), oracle::mae(sg, gg), "MAE", trial);
  }

  // Identity vector on S = G.
  for (int trial = 0; trial < 50; ++trial) {
    auto g = oracle::random_mask(8, 8, rng, 0.2 + 0.6 * u(rng));
    if (g.count() == 0 || g.count() == g.size()) continue;
    const auto m = metrics::evaluate_image("id", g.as_prob(), g);
    c.expect(m.mdice == 1 && m.miou == 1, "identity dice/iou");
    c.near(m.wfm, 1.0, 1e-12, "identity wFm");
    c.expect(m.sm >= 0.95, "identity Sm >= 0.95, got " + std::to_string(m.sm));
    c.near(m.em, 1.0, 1e-9, "identity Em");
    c.expect(m.mae == 0, "identity MAE");
  }

  // Hand-counted cases.
  const misnet::BinaryMask g2(2, 2, {1, 1, 0, 0});
  const auto o = metrics::mdice_miou(misnet::ProbMap(2, 2, {1, 0, 0, 0}), g2);
  c.near(o.dice, 2.0 / 3.0, 1e-15, "dice hand case");
  c.near(o.iou, 0.5, 1e-15, "iou hand case");
  const auto disjoint = metrics::mdice_miou(misnet::ProbMap(2, 2, {0, 0, 1, 1}), g2);
  c.expect(disjoint.dice == 0 && disjoint.iou == 0, "disjoint masks give (0, 0)");
  const auto empty = metrics::mdice_miou(misnet::ProbMap::filled(2, 2, 0), misnet::BinaryMask::filled(2, 2, false));
  c.expect(empty.dice == 1 && empty.iou == 1, "both empty give (1, 1)");
  c.expect(metrics::mae(misnet::ProbMap(2, 2, {1, 1, 0, 0}), misnet::BinaryMask(2, 2, {1, 0, 0, 1})) == 0.5,
           "MAE hand case 0.5");
  c.expect(metrics::mae(misnet::ProbMap(2, 2, {0, 1, 1, 0}), misnet::BinaryMask(2, 2, {1, 0, 0, 1})) == 1.0,
           "MAE of the complement is 1");
  c.expect(metrics::s_measure(misnet::ProbMap::filled(4, 4, 0), misnet::BinaryMask::filled(4, 4, false)) == 1.0,
           "Sm of empty G and empty S is 1");
  std::cout << "    worst metric-oracle deviation " << worst << "\n";
  return c.summary();
}

// ---- 5. shape / assembly ---------------------------------------------------

std::string shape_assembly() {
  Checks c;
  torch::manual_seed(3);
  ModelConfig base;
  base.backbone_id = "toy";
  for (int size : {32, 352}) {
    base.train_size = size;
    MisNet net(base);
    net->eval();
    torch::NoGradGuard g;
    auto out = net(torch::randn({1, 3, size, size}));
    auto expect_hw = [&](const torch::Tensor& t, int stride, const char* name) {
      c.expect(t.size(2) == size / stride && t.size(3) == size / stride && t.size(1) == 1,
               std::string(name) + " at stride " + std::to_string(stride) + " for input " + std::to_string(size));
    };
    expect_hw(out.m_fuse, 8, "m_fuse");
    expect_hw(out.m5, 32, "M5");
    expect_hw(out.m4, 16, "M4");
    expect_hw(out.m3, 8, "M3");
    expect_hw(out.final, 1, "final");
    c.expect(out.final.min().item<double>() >= 0 && out.final.max().item<double>() <= 1, "final in [0,1]");
  }

  std::vector<std::string> variants{"full"};
  for (const auto& v : ablation_variants()) variants.push_back(v);
  for (const auto& v : variants) {
    ModelConfig cfg = v == "full" ? base : apply_ablation(base, v);
    cfg.train_size = 32;
    MisNet net(cfg);
    net->train();
    auto opt = make_optimizer(net, {1e-4, 1e-5, 0.5});
    auto x = torch::randn({2, 3, 32, 32});
    auto y = (torch::rand({2, 1, 32, 32}) > 0.5).to(torch::kFloat);
    auto out = net(x);
    auto rep = total_loss(out, y);
    opt->zero_grad();
    rep.total.backward();
    bool grads = false;
    for (auto& p : net->parameters()) grads = grads || (p.grad().defined() && p.grad().abs().sum().item<double>() > 0);
    opt->step();
    c.expect(std::isfinite(rep.total.item<double>()), v + ": finite loss");
    c.expect(grads, v + ": parameters received gradients");
    c.expect(out.m3.size(2) == 4 && out.m5.size(2) == 1 && out.m4.size(2) == 2, v + ": side-map strides");
  }
  return c.summary();
}

// ---- 6. overfit smoke ------------------------------------------------------

RunConfig toy_run_config(int size) {
  RunConfig cfg;
  cfg.model.backbone_id = "toy";
  cfg.model.train_size = size;
  cfg.train.batch_size = 4;
  cfg.train.load_pretrained = false;
  return cfg;
}

std::string overfit_smoke() {
  Checks c;
  const auto dir = testing_support::scratch_dir("acceptance_overfit");
  // Five pairs split 4/0/1, so training sees exactly four images and the
  // empty validation split falls back to the training split.
  testing_support::write_blob_dataset(dir / "data", 5, 64, 64, 17);
  auto cfg = toy_run_config(64);
  cfg.train.epochs = 200;
  cfg.train.base_lr = 3e-3;
  cfg.augment.enabled = false;
  TrainOptions opts;
  opts.data_root = dir / "data";
  opts.out_dir = dir / "run";
  const auto result = train(cfg, opts);
  c.expect(result.steps == 200, "200 optimizer steps, got " + std::to_string(result.steps));

  const auto manifest = data::read_manifest(opts.out_dir / "manifest.tsv", opts.data_root);
  c.expect(manifest.train.size() == 4, "four training images");
  auto [model, meta] = model_from_checkpoint(opts.out_dir / "latest.ckpt");
  const auto report = evaluate_model(model, manifest.train, "train", 64, {});
  std::cout << "    train mDice " << report.mean.mdice << ", loss " << result.initial_loss << " -> "
            << result.final_loss << "\n";
  c.expect(report.mean.mdice > 0.85, "train mDice > 0.85, got " + std::to_string(report.mean.mdice));
  c.expect(result.final_loss < result.initial_loss, "final loss below initial loss");
  return c.summary();
}

// ---- 7. schedule -----------------------------------------------------------

std::string schedule_check() {
  Checks c;
  auto sig6 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  const std::pair<int, const char*> expected[] = {{0, "1e-05"}, {150, "5.35887e-06"}, {299, "5.89645e-08"}};
  for (const auto& [epoch, want] : expected) {
    const auto got = sig6(poly_lr(epoch, 300, 1e-5, 0.9));
    c.expect(got == want, "poly_lr(" + std::to_string(epoch) + ") = " + got + ", want " + want);
  }
  return c.summary();
}

// ---- 8. determinism --------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string pipeline_determinism() {
  Checks c;
  const auto dir = testing_support::scratch_dir("acceptance_determinism");
  testing_support::write_blob_dataset(dir / "data", 10, 72, 88, 5);
  auto cfg = toy_run_config(64);
  cfg.train.epochs = 2;
  cfg.train.base_lr = 1e-3;

  TrainResult results[2];
  for (int run = 0; run < 2; ++run) {
    TrainOptions opts;
    opts.data_root = dir / "data";
    opts.out_dir = dir / ("run" + std::to_string(run));
    results[run] = train(cfg, opts);
  }
  c.expect(read_file(dir / "run0" / "manifest.tsv") == read_file(dir / "run1" / "manifest.tsv"), "identical manifests");
  c.expect(results[0].final_loss == results[1].final_loss,
           "identical final loss: " + format_double(results[0].final_loss) + " vs " + format_double(results[1].final_loss));
  c.expect(read_file(dir / "run0" / "train.log") == read_file(dir / "run1" / "train.log"), "identical training logs");

  const auto m1 = data::build_manifest(dir / "data", cfg.train.seed);
  const auto m2 = data::build_manifest(dir / "data", cfg.train.seed);
  c.expect(m1 == m2, "manifest rebuilt identically");
  for (std::size_t i = 0; i < m1.train.size(); ++i) {
    const auto image = data::load_image(m1.train[i].image);
    const auto mask = data::load_mask(m1.train[i].mask);
    auto r1 = data::sample_rng(cfg.train.seed, 1, i);
    auto r2 = data::sample_rng(cfg.train.seed, 1, i);
    const auto a = data::augment(image, mask, cfg.augment, 64, r1);
    const auto b = data::augment(image, mask, cfg.augment, 64, r2);
    c.expect(cv::countNonZero(a.mask != b.mask) == 0, "identical augmented masks");
    cv::Mat diff;
    cv::absdiff(a.image, b.image, diff);
    c.expect(cv::countNonZero(diff.reshape(1)) == 0, "identical augmented images");
    const auto ta = images_to_tensor({a}, backbone_descriptor("toy"));
    const auto tb = images_to_tensor({b}, backbone_descriptor("toy"));
    c.expect(torch::equal(ta, tb), "identical batch tensors");
  }
  return c.summary();
}

// ---- 9. augmentation consistency -------------------------------------------

// The plan's geometric steps spelled out with plain OpenCV calls.
cv::Mat replay_geometry(const cv::Mat& src, const data::AugmentPlan& plan, int interp) {
  cv::Mat x;
  cv::resize(src, x, cv::Size(plan.size, plan.size), 0, 0, interp);
  if (plan.crop) {
    cv::Mat big;
    cv::resize(x, big, cv::Size(plan.scaled, plan.scaled), 0, 0, interp);
    cv::Mat cropped = big(cv::Rect(plan.crop_x, plan.crop_y, plan.crop_side, plan.crop_side)).clone();
    cv::resize(cropped, x, cv::Size(plan.size, plan.size), 0, 0, interp);
  }
  if (plan.hflip) cv::flip(x, x, 1);
  if (plan.vflip) cv::flip(x, x, 0);
  return x;
}

std::string augmentation_consistency() {
  Checks c;
  const auto dir = testing_support::scratch_dir("acceptance_augment");
  testing_support::write_blob_dataset(dir, 1, 90, 120, 3);
  const auto image = data::load_image(dir / "images" / "case100.png");
  const auto mask = data::load_mask(dir / "masks" / "case100.png");
  data::AugmentationConfig cfg;
  cfg.morph_p = 0.5;
  double min_iou = 1.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const auto out = data::augment(image, mask, cfg, 64, rng);
    std::mt19937_64 replay_rng(seed);
    const auto plan = data::sample_plan(cfg, 64, replay_rng);

    const cv::Mat expected_mask = data::apply_morphology(replay_geometry(mask, plan, cv::INTER_NEAREST_EXACT), plan.morph,
                                                         plan.morph_kernel);
    const auto iou = metrics::mdice_miou(data::to_binary_mask(out.mask).as_prob(), data::to_binary_mask(expected_mask)).iou;
    min_iou = std::min(min_iou, iou);
    c.expect(iou == 1.0, "mask IoU vs replayed geometry = " + std::to_string(iou) + " (seed " + std::to_string(seed) + ")");

    data::AugmentPlan geometric_only = plan;
    geometric_only.photometric = false;
    const cv::Mat expected_image = replay_geometry(image, plan, cv::INTER_LINEAR);
    cv::Mat diff;
    cv::absdiff(data::apply_geometry(image, geometric_only, false), expected_image, diff);
    c.expect(cv::countNonZero(diff.reshape(1)) == 0, "image geometry matches replay (seed " + std::to_string(seed) + ")");

    double lo, hi;
    cv::minMaxLoc(out.mask, &lo, &hi);
    c.expect(lo >= 0 && hi <= 1, "mask stays binary");
    c.expect(out.mask.type() == CV_8U && out.mask.rows == 64 && out.mask.cols == 64, "mask is 64x64 8-bit");

    // The coloured blob in the image lands where the mask does: compare
    // centroids, which a mismatched flip or crop would move by many pixels.
    {
      cv::Mat channels[3];
      cv::split(data::apply_geometry(image, geometric_only, false), channels);
      cv::Mat blob;
      cv::threshold(channels[1], blob, 110, 1, cv::THRESH_BINARY);
      const cv::Mat geo_mask = replay_geometry(mask, plan, cv::INTER_NEAREST_EXACT);
      const auto mb = cv::moments(blob, true);
      const auto mm = cv::moments(geo_mask, true);
      if (mm.m00 > 0) {
        const double dist = std::hypot(mb.m10 / mb.m00 - mm.m10 / mm.m00, mb.m01 / mb.m00 - mm.m01 / mm.m00);
        c.expect(dist < 1.5, "image blob centroid within 1.5 px of mask centroid, got " + std::to_string(dist));
      }
    }
  }

  cv::Mat dot = cv::Mat::zeros(9, 9, CV_8U);
  dot.at<std::uint8_t>(4, 4) = 1;
  const cv::Mat grown = data::apply_morphology(dot, data::Morph::kDilate, 3);
  cv::Mat block = cv::Mat::zeros(9, 9, CV_8U);
  block(cv::Rect(3, 3, 3, 3)).setTo(1);
  c.expect(cv::countNonZero(grown != block) == 0, "kernel-3 dilation of a single pixel is a 3x3 block");
  std::cout << "    min mask IoU over 100 seeds " << min_iou << "\n";
  return c.summary();
}

// ---- 10. benchmark pipeline ------------------------------------------------

std::string benchmark_pipeline() {
  Checks c;
  const auto dir = testing_support::scratch_dir("acceptance_benchmark");
  testing_support::write_blob_dataset(dir / "data" / "Kvasir", 3, 60, 70, 1);
  testing_support::write_blob_dataset(dir / "data" / "ETIS", 2, 64, 64, 2);
  for (const char* id : {"Kvasir", "ETIS"}) {
    fs::create_directories(dir / "preds" / id);
    for (const auto& e : fs::directory_iterator(dir / "data" / id / "masks")) {
      fs::copy_file(e.path(), dir / "preds" / id / e.path().filename());
    }
  }
  EvalOptions opts;
  opts.predictions = dir / "preds";
  opts.data_root = dir / "data";
  opts.out_dir = dir / "eval";
  const auto reports = cmd_eval(opts);
  c.expect(reports.size() == 2, "two dataset reports");
  const std::string header = "| Image | mDice | mIoU | F_β^ω | S_m | E_φ^max | MAE |";
  for (const char* id : {"Kvasir", "ETIS"}) {
    const auto md = read_file(dir / "eval" / (std::string(id) + ".md"));
    c.expect(md.find(header) != std::string::npos, std::string(id) + ".md has the table header in order");
    c.expect(md.find("| MEAN | 1.000 | 1.000 | 1.000 |") != std::string::npos, std::string(id) + ".md MEAN row");
    c.expect(fs::exists(dir / "eval" / (std::string(id) + ".csv")), std::string(id) + ".csv written");
  }
  const auto summary = read_file(dir / "eval" / "summary.md");
  c.expect(summary.find("| Dataset | Method | mDice | mIoU | F_β^ω | S_m | E_φ^max | MAE |") != std::string::npos,
           "summary header in order");
  for (const auto& r : reports) {
    const auto& m = r.mean;
    c.expect(m.mdice == 1 && m.miou == 1 && m.mae == 0, r.dataset_id + ": identity mDice/mIoU/MAE");
    c.near(m.wfm, 1.0, 1e-12, r.dataset_id + ": identity wFm");
    c.expect(m.sm >= 0.95, r.dataset_id + ": identity Sm >= 0.95");
    c.near(m.em, 1.0, 1e-9, r.dataset_id + ": identity Em");
  }

  // The same layout through a checkpoint.
  auto cfg = toy_run_config(64);
  cfg.train.epochs = 1;
  TrainOptions t;
  t.data_root = dir / "data" / "Kvasir";
  t.out_dir = dir / "run";
  train(cfg, t);
  EvalOptions ck;
  ck.checkpoint = dir / "run" / "best.ckpt";
  ck.data_root = dir / "data";
  ck.out_dir = dir / "eval_ckpt";
  const auto ck_reports = cmd_eval(ck);
  c.expect(ck_reports.size() == 2, "checkpoint evaluation covers both datasets");
  const auto md = read_file(dir / "eval_ckpt" / "ETIS.md");
  c.expect(md.find(header) != std::string::npos && md.find("| MEAN |") != std::string::npos,
           "checkpoint evaluation table structure");
  return c.summary();
}

struct Criterion {
  std::string name;
  double budget_s;
  std::function<std::string()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"equation-fidelity", 10, equation_fidelity},
      {"gradients", 300, gradient_suite},
      {"loss-oracle", 30, loss_oracle},
      {"metrics-oracle", 120, metrics_oracle},
      {"shape-assembly", 60, shape_assembly},
      {"overfit-smoke", 300, overfit_smoke},
      {"schedule", 10, schedule_check},
      {"pipeline-determinism", 120, pipeline_determinism},
      {"augmentation-consistency", 60, augmentation_consistency},
      {"benchmark-pipeline", 120, benchmark_pipeline},
  };
  int failed = 0, ran = 0;
  for (const auto& cr : criteria) {
    bool selected = argc < 2;
    for (int i = 1; i < argc; ++i) selected = selected || cr.name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    std::string problem;
    try {
      problem = cr.run();
    } catch (const std::exception& e) {
      problem = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (problem.empty() && secs > cr.budget_s) {
      problem = "runtime " + std::to_string(secs) + " s exceeds budget " + std::to_string(cr.budget_s) + " s";
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%s %-26s %8.2fs (budget %.0fs)", problem.empty() ? "PASS" : "FAIL",
                  cr.name.c_str(), secs, cr.budget_s);
    std::cout << line << (problem.empty() ? "" : "\n    " + problem) << std::endl;
    if (!problem.empty()) ++failed;
  }
  std::cout << (ran - failed) << "/" << ran << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
