#include "bunet/gradcheck.hpp"

#include "bunet/losses.hpp"
#include "bunet/network.hpp"

namespace bunet {

namespace {

using T = Tensor<double>;

// Values on a shuffled even grid: pairwise gaps ~2/n, so a finite-difference
// step can never flip a maxpool argmax or cross a relu/clamp kink.
T distinct_grid(GradChecker& gc, const Shape& s, double lo, double hi) {
  T t(s);
  const std::int64_t n = t.numel();
  std::vector<std::int64_t> perm(n);
  for (std::int64_t i = 0; i < n; ++i) perm[i] = i;
  for (std::int64_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<std::int64_t>(gc.rng().next_u64() % i)]);
  for (std::int64_t i = 0; i < n; ++i)
    t.data()[i] = lo + (hi - lo) * (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(n);
  return t;
}

void op_cases(GradChecker& gc, std::vector<GradCheckResult>& out) {
  const Shape s4{2, 3, 4, 4};

  {
    T a = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T b = gc.uniform(s4, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("add", {a, b}, [=] { return add(a, b); }));
  }
  {
    T a = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T b = T::scalar(0.7).set_requires_grad(true);
    out.push_back(gc.check("add_scalar", {a, b}, [=] { return add(a, b); }));
  }
  {
    T a = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T b = gc.uniform(s4, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("mul", {a, b}, [=] { return mul(a, b); }));
  }
  {
    T a = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T b = T::scalar(-1.3).set_requires_grad(true);
    out.push_back(gc.check("mul_scalar", {a, b}, [=] { return mul(b, a); }));
  }
  {
    T a = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T b = gc.uniform_away_from_zero(s4, 0.5, 1.0).set_requires_grad(true);
    out.push_back(gc.check("div", {a, b}, [=] { return div(a, b); }));
  }
  {
    T a = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T b = T::scalar(0.8).set_requires_grad(true);
    out.push_back(gc.check("div_scalar", {a, b}, [=] { return div(a, b); }));
  }
  {
    T x = gc.uniform(s4, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("affine", {x}, [=] { return affine(x, 1.7, -0.3); }));
  }
  {
    T x = gc.uniform_away_from_zero(s4, 0.25, 1.0).set_requires_grad(true);
    out.push_back(gc.check("relu", {x}, [=] { return relu(x); }));
  }
  {
    T x = gc.uniform(s4, -3, 3).set_requires_grad(true);
    out.push_back(gc.check("sigmoid", {x}, [=] { return sigmoid(x); }));
  }
  {
    T x = gc.uniform(s4, 0.5, 2.0).set_requires_grad(true);
    out.push_back(gc.check("log", {x}, [=] { return log(x); }));
  }
  {
    // Values stay clear of the clamp bounds at -1 and 1 so the finite
    // difference never straddles a kink.
    T x = distinct_grid(gc, s4, -1.9, 1.9);
    for (std::int64_t i = 0; i < x.numel(); ++i)
      if (std::abs(std::abs(x.data()[i]) - 1.0) < 0.02) x.data()[i] += 0.05;
    x.set_requires_grad(true);
    out.push_back(gc.check("clamp", {x}, [=] { return clamp(x, -1.0, 1.0); }));
  }
  {
    T x = gc.uniform(s4, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("sum", {x}, [=] { return sum(x); }));
  }
  {
    T x = gc.uniform(s4, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("mean", {x}, [=] { return mean(x); }));
  }
  {
    T x = gc.uniform(s4, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("reshape", {x}, [=] { return reshape(x, Shape{1, 6, 4, 4}); }));
  }
  {
    T a = gc.uniform(Shape{2, 1, 3, 3}, -1, 1).set_requires_grad(true);
    T b = gc.uniform(Shape{2, 2, 3, 3}, -1, 1).set_requires_grad(true);
    T c = gc.uniform(Shape{2, 3, 3, 3}, -1, 1).set_requires_grad(true);
    out.push_back(
        gc.check("concat_channels", {a, b, c}, [=] { return concat_channels<double>({a, b, c}); }));
  }
  {
    T x = gc.uniform(Shape{1, 4, 3, 3}, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("split_channels", {x}, [=] {
      std::vector<T> parts = split_channels(x, {1, 2, 1});
      return concat_channels<double>({parts[2], parts[0], parts[1]});
    }));
  }
  {
    T x = gc.uniform(Shape{2, 1, 3, 3}, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("broadcast_channels", {x}, [=] { return broadcast_channels(x, 5); }));
  }
  {
    T x = gc.uniform(s4, -1, 1).set_requires_grad(true);
    T s = gc.uniform(Shape{2, 3}, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("scale_channels", {x, s}, [=] { return scale_channels(x, s); }));
  }
}

void conv_cases(GradChecker& gc, std::vector<GradCheckResult>& out) {
  struct Case {
    const char* name;
    Shape xs, ws;
    bool bias;
    int stride, pad, dilation, groups;
  };
  const Case cases[] = {
      {"conv_3x3_pad1", {2, 3, 6, 6}, {4, 3, 3, 3}, true, 1, 1, 1, 1},
      {"conv_3x3_stride2", {1, 2, 7, 7}, {3, 2, 3, 3}, false, 2, 1, 1, 1},
      {"conv_3x3_dilated2", {1, 2, 8, 8}, {2, 2, 3, 3}, true, 1, 2, 2, 1},
      {"conv_3x3_grouped", {1, 4, 5, 5}, {6, 2, 3, 3}, true, 1, 1, 1, 2},
      {"conv_depthwise", {1, 4, 6, 6}, {4, 1, 3, 3}, true, 1, 1, 1, 4},
      {"conv_depthwise_dilated", {1, 3, 8, 8}, {3, 1, 3, 3}, true, 1, 2, 2, 3},
      {"conv_1x1", {2, 3, 4, 4}, {5, 3, 1, 1}, true, 1, 0, 1, 1},
  };
  for (const Case& c : cases) {
    T x = gc.uniform(c.xs, -1, 1).set_requires_grad(true);
    T w = gc.uniform(c.ws, -0.5, 0.5).set_requires_grad(true);
    std::vector<T> inputs{x, w};
    T b;
    if (c.bias) {
      b = gc.uniform(Shape{c.ws[0]}, -0.5, 0.5).set_requires_grad(true);
      inputs.push_back(b);
    }
    const int st = c.stride, pd = c.pad, dl = c.dilation, gr = c.groups;
    out.push_back(gc.check(c.name, inputs, [=] { return conv2d(x, w, b, st, pd, dl, gr); }));
  }
  {
    T x = gc.uniform(Shape{3, 8}, -1, 1).set_requires_grad(true);
    T w = gc.uniform(Shape{3}, -0.5, 0.5).set_requires_grad(true);
    out.push_back(gc.check("conv1d_channels", {x, w}, [=] { return conv1d_channels(x, w); }));
  }
}

void spatial_cases(GradChecker& gc, std::vector<GradCheckResult>& out) {
  {
    T x = gc.uniform(Shape{2, 3, 4, 4}, -1, 1).set_requires_grad(true);
    T gamma = gc.uniform(Shape{3}, 0.5, 1.5).set_requires_grad(true);
    T beta = gc.uniform(Shape{3}, -0.5, 0.5).set_requires_grad(true);
    T rm = T::zeros(Shape{3}), rv = T::ones(Shape{3});
    out.push_back(gc.check("batchnorm_train", {x, gamma, beta}, [=]() mutable {
      return batchnorm2d(x, gamma, beta, rm, rv, /*training=*/true);
    }));
  }
  {
    T x = gc.uniform(Shape{2, 3, 4, 4}, -1, 1).set_requires_grad(true);
    T gamma = gc.uniform(Shape{3}, 0.5, 1.5).set_requires_grad(true);
    T beta = gc.uniform(Shape{3}, -0.5, 0.5).set_requires_grad(true);
    T rm = gc.uniform(Shape{3}, -0.5, 0.5);
    T rv = gc.uniform(Shape{3}, 0.5, 1.5);
    out.push_back(gc.check("batchnorm_eval", {x, gamma, beta}, [=]() mutable {
      return batchnorm2d(x, gamma, beta, rm, rv, /*training=*/false);
    }));
  }
  {
    T x = distinct_grid(gc, Shape{2, 3, 6, 6}, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("maxpool2x2", {x}, [=] { return maxpool2x2(x); }));
  }
  {
    T x = gc.uniform(Shape{1, 2, 3, 4}, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("upsample_bilinear_up", {x}, [=] { return upsample_bilinear(x, 6, 8); }));
  }
  {
    T x = gc.uniform(Shape{1, 2, 6, 6}, -1, 1).set_requires_grad(true);
    out.push_back(
        gc.check("upsample_bilinear_down", {x}, [=] { return upsample_bilinear(x, 3, 3); }));
  }
  {
    T x = gc.uniform(Shape{2, 3, 4, 4}, -1, 1).set_requires_grad(true);
    out.push_back(gc.check("global_avg_pool", {x}, [=] { return global_avg_pool(x); }));
  }
}

void block_cases(GradChecker& gc, std::vector<GradCheckResult>& out) {
  {
    auto reg = std::make_shared<ModuleParams<double>>();
    auto cbr = std::make_shared<CbrLayer<double>>();
    cbr->configure(3, 5, 3);
    cbr->init(*reg, "cbr", 11);
    T x = gc.uniform(Shape{2, 3, 5, 5}, -1, 1).set_requires_grad(true);
    std::vector<T> inputs = learnable_inputs(*reg);
    inputs.push_back(x);
    out.push_back(gc.check("block_cbr", inputs, [=] { return cbr->forward(x, true); }));
  }
  {
    auto reg = std::make_shared<ModuleParams<double>>();
    auto eca = std::make_shared<EcaLayer<double>>();
    eca->ch = 8;
    eca->init(*reg, "eca", 12);
    T x = gc.uniform(Shape{2, 8, 3, 3}, -1, 1).set_requires_grad(true);
    std::vector<T> inputs = learnable_inputs(*reg);
    inputs.push_back(x);
    out.push_back(gc.check("block_eca", inputs, [=] { return eca->forward(x); }));
  }
  {
    auto reg = std::make_shared<ModuleParams<double>>();
    auto head = std::make_shared<BoundaryHead<double>>();
    head->configure(4);
    head->init(*reg, "bd", 13);
    T x = gc.uniform(Shape{2, 4, 4, 4}, -1, 1).set_requires_grad(true);
    std::vector<T> inputs = learnable_inputs(*reg);
    inputs.push_back(x);
    out.push_back(gc.check("block_boundary_head", inputs, [=] { return head->forward(x, true); }));
  }
  for (FusionMode mode :
       {FusionMode::Bgfe, FusionMode::Add, FusionMode::Multiply, FusionMode::Concat}) {
    auto reg = std::make_shared<ModuleParams<double>>();
    auto fusion = std::make_shared<FusionBlock<double>>();
    fusion->configure(4, mode);
    fusion->init(*reg, "fusion", 14);
    T f = gc.uniform(Shape{2, 4, 4, 4}, -1, 1).set_requires_grad(true);
    T b = gc.uniform(Shape{2, 1, 4, 4}, 0.05, 0.95).set_requires_grad(true);
    std::vector<T> inputs = learnable_inputs(*reg);
    inputs.push_back(f);
    inputs.push_back(b);
    out.push_back(gc.check(std::string("block_fusion_") + fusion_mode_name(mode), inputs,
                           [=] { return fusion->forward(f, b, true); }));
  }
  {
    auto reg = std::make_shared<ModuleParams<double>>();
    auto saam = std::make_shared<SaamBlock<double>>();
    saam->configure(8, 0.5, {1, 2, 3, 4}, "gradcheck");
    saam->init(*reg, "saam", 15);
    T x = gc.uniform(Shape{2, 8, 6, 6}, -1, 1).set_requires_grad(true);
    std::vector<T> inputs = learnable_inputs(*reg);
    inputs.push_back(x);
    out.push_back(gc.check("block_saam", inputs, [=] { return saam->forward(x, true); }));
  }
}

void loss_cases(GradChecker& gc, std::vector<GradCheckResult>& out) {
  const Shape map{2, 1, 4, 4};
  {
    T p = gc.uniform(map, 0.05, 0.95).set_requires_grad(true);
    T y = gc.bernoulli(map);
    out.push_back(gc.check("dice_loss", {p}, [=] { return dice_loss(p, y); }));
  }
  {
    T p = gc.uniform(map, 0.05, 0.95).set_requires_grad(true);
    T y = gc.bernoulli(map);
    out.push_back(gc.check("bce_loss", {p}, [=] { return bce_loss(p, y); }));
  }
  {
    std::vector<T> maps;
    for (int hw : {2, 4, 8, 16})
      maps.push_back(gc.uniform(Shape{1, 1, hw, hw}, 0.1, 0.9).set_requires_grad(true));
    T b_gt = gc.bernoulli(Shape{1, 1, 16, 16});
    out.push_back(gc.check("boundary_loss", maps, [=] { return boundary_loss(maps, b_gt); }));
  }
  {
    NetOutput<double> no;
    no.mask_prob = gc.uniform(Shape{2, 1, 8, 8}, 0.1, 0.9).set_requires_grad(true);
    no.mask_logits = no.mask_prob;
    std::vector<T> inputs{no.mask_prob};
    for (int hw : {1, 2, 4, 8}) {
      T m = gc.uniform(Shape{2, 1, hw, hw}, 0.1, 0.9).set_requires_grad(true);
      no.boundary_probs.push_back(m);
      inputs.push_back(m);
    }
    T y = gc.bernoulli(Shape{2, 1, 8, 8});
    T b_gt = gc.bernoulli(Shape{2, 1, 8, 8});
    out.push_back(gc.check("total_loss", inputs, [=] { return total_loss(no, y, b_gt); }));
  }
}

// The complete model at a 32x32 input, probed through the training objective.
// Every parameter tensor is sampled at a couple of coordinates to keep the
// finite-difference pass tractable.
void network_case(GradChecker& gc, std::vector<GradCheckResult>& out) {
  NetConfig cfg;
  cfg.base_channels = 8;
  auto net = std::make_shared<Network<double>>(cfg, /*seed=*/5);
  T x = gc.uniform(Shape{1, 1, 32, 32}, 0.0, 1.0).set_requires_grad(true);
  T y = gc.bernoulli(Shape{1, 1, 32, 32});
  T b_gt = gc.bernoulli(Shape{1, 1, 32, 32});
  std::vector<T> inputs = learnable_inputs(net->params());
  inputs.push_back(x);
  out.push_back(gc.check(
      "network_full_32x32", inputs,
      [=] { return total_loss(net->forward(x, true), y, b_gt); }, /*coord_budget=*/2));
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite() {
  GradChecker gc;
  std::vector<GradCheckResult> out;
  op_cases(gc, out);
  conv_cases(gc, out);
  spatial_cases(gc, out);
  block_cases(gc, out);
  loss_cases(gc, out);
  network_case(gc, out);
  return out;
}

}  // namespace bunet
