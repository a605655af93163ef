#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bunet/batchnorm.hpp"
#include "bunet/conv.hpp"
#include "bunet/ops.hpp"
#include "bunet/spatial.hpp"
#include "bunet/tape.hpp"

using namespace bunet;
using doctest::Approx;

namespace {

using T = Tensor<double>;

// Each autograd test starts from an empty tape so node ids and epochs from
// earlier tests cannot leak in.
void fresh_tape() {
  Tape<double>::active().reset();
  Tape<float>::active().reset();
}

std::vector<double> grad_of(const T& t) { return t.grad_or_fail(); }

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape construction and validation") {
  Shape s{2, 3, 4, 5};
  CHECK(s.rank == 4);
  CHECK(s.n() == 2);
  CHECK(s.c() == 3);
  CHECK(s.h() == 4);
  CHECK(s.w() == 5);
  CHECK(s.numel() == 120);
  CHECK(s.str() == "(2,3,4,5)");
  CHECK(Shape{2, 3, 4, 5} == s);
  CHECK(Shape{2, 3, 4, 6} != s);
  CHECK(Shape::scalar().numel() == 1);

  CHECK_THROWS_AS((Shape{0, 1}), Error);
  CHECK_THROWS_AS((Shape{-2}), Error);
  CHECK_THROWS_AS((Shape{1, 2, 3, 4, 5}), Error);
}

TEST_CASE("tensor storage is shared by copies and detached by clone") {
  T a(Shape{2, 2}, 1.0);
  T b = a;  // shallow
  b.data()[0] = 7.0;
  CHECK(a.data()[0] == 7.0);

  T c = a.clone();
  c.data()[1] = 9.0;
  CHECK(a.data()[1] == 1.0);

  T empty;
  CHECK_FALSE(empty.valid());
  CHECK(empty.numel() == 0);

  CHECK_THROWS_AS(T::of(Shape{3}, {1.0, 2.0}), Error);
  CHECK_THROWS_AS(T(Shape{2, 2}).item(), Error);
  CHECK(T::scalar(4.5).item() == 4.5);
}

TEST_CASE("fan-out accumulates gradients from every consumer") {
  fresh_tape();
  T x = T::scalar(2.0).set_requires_grad(true);
  // y = x*x + x  ->  dy/dx = 2x + 1 = 5
  T y = add(mul(x, x), x);
  CHECK(y.item() == 6.0);
  backward(y);
  CHECK(grad_of(x)[0] == Approx(5.0).epsilon(1e-12));

  // Same leaf feeding two separate subexpressions that merge later.
  fresh_tape();
  T u = T::scalar(3.0).set_requires_grad(true);
  T left = mul(u, T::scalar(2.0));   // 2u
  T right = mul(u, u);               // u^2
  T z = add(left, right);            // dz/du = 2 + 2u = 8
  backward(z);
  CHECK(grad_of(u)[0] == Approx(8.0).epsilon(1e-12));
}

TEST_CASE("backward rejects misuse") {
  fresh_tape();
  T x = T(Shape{2, 2}, 1.0).set_requires_grad(true);
  T y = mul(x, x);
  CHECK_THROWS_AS(backward(y), Error);  // non-scalar root

  T s = sum(y);
  backward(s);
  CHECK_THROWS_AS(backward(s), Error);  // tape already consumed

  fresh_tape();
  T a = T::scalar(1.0).set_requires_grad(true);
  T b;
  {
    NoGradGuard ng;
    b = mul(a, a);
  }
  CHECK_THROWS_AS(backward(b), Error);  // computed off the tape

  fresh_tape();
  T c = T::scalar(1.0).set_requires_grad(true);
  T d = mul(c, c);
  fresh_tape();  // invalidates d's node id
  CHECK_THROWS_AS(backward(d), Error);
}

TEST_CASE("nograd guard suppresses recording and nests") {
  fresh_tape();
  T x = T::scalar(2.0).set_requires_grad(true);
  {
    NoGradGuard outer;
    {
      NoGradGuard inner;
      T y = mul(x, x);
      CHECK_FALSE(on_tape(y));
    }
    T y2 = mul(x, x);
    CHECK_FALSE(on_tape(y2));  // still guarded by `outer`
  }
  T y3 = mul(x, x);
  CHECK(on_tape(y3));
}

TEST_CASE("conv2d all-ones 3x3 fixture with gradients") {
  fresh_tape();
  T x = T::ones(Shape{1, 1, 4, 4}).set_requires_grad(true);
  T w = T::ones(Shape{1, 1, 3, 3}).set_requires_grad(true);
  T b = T::zeros(Shape{1}).set_requires_grad(true);
  T y = conv2d(x, w, b, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4});

  // Each output counts the in-bounds taps of its window.
  const double expect[16] = {4, 6, 6, 4, 6, 9, 9, 6, 6, 9, 9, 6, 4, 6, 6, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == Approx(expect[i]).epsilon(1e-12));

  T loss = sum(y);
  CHECK(loss.item() == Approx(100.0).epsilon(1e-12));
  backward(loss);
  // d(sum)/dx mirrors the tap-count pattern; d/dw counts valid window
  // placements per tap; d/db is the output element count.
  for (int i = 0; i < 16; ++i) CHECK(grad_of(x)[i] == Approx(expect[i]).epsilon(1e-12));
  const double expect_w[9] = {9, 12, 9, 12, 16, 12, 9, 12, 9};
  for (int i = 0; i < 9; ++i) CHECK(grad_of(w)[i] == Approx(expect_w[i]).epsilon(1e-12));
  CHECK(grad_of(b)[0] == Approx(16.0).epsilon(1e-12));
}

TEST_CASE("conv2d dilation fixture") {
  fresh_tape();
  T x = T::ones(Shape{1, 1, 5, 5});
  T w = T::ones(Shape{1, 1, 3, 3});
  T y = conv2d(x, w, T(), /*stride=*/1, /*pad=*/2, /*dilation=*/2);
  CHECK(y.shape() == Shape{1, 1, 5, 5});
  // Taps sit at offsets {-2, 0, +2}: valid counts per axis are {2,2,3,2,2}.
  CHECK(y.data()[0] == 4.0);       // corner: 2*2
  CHECK(y.data()[2] == 6.0);       // (0,2): 2*3
  CHECK(y.data()[12] == 9.0);      // center: 3*3
  CHECK(y.data()[24] == 4.0);
}

TEST_CASE("conv2d stride and groups shapes and validation") {
  T x(Shape{1, 2, 7, 7}, 0.5);
  T w(Shape{3, 2, 3, 3}, 0.1);
  CHECK(conv2d(x, w, T(), 2, 1).shape() == Shape{1, 3, 4, 4});

  T xg(Shape{1, 4, 5, 5}, 1.0);
  T wg(Shape{6, 2, 3, 3}, 1.0);
  CHECK(conv2d(xg, wg, T(), 1, 1, 1, 2).shape() == Shape{1, 6, 5, 5});

  CHECK_THROWS_AS(conv2d(x, T(Shape{3, 5, 3, 3}, 0.1), T(), 1, 1), Error);  // Cin mismatch
  CHECK_THROWS_AS(conv2d(xg, wg, T(), 1, 1, 1, 3), Error);                  // bad groups
  CHECK_THROWS_AS(conv2d(x, w, T(Shape{4}, 0.0), 1, 1), Error);             // bias length
}

TEST_CASE("conv1d_channels fixture with gradients") {
  fresh_tape();
  T x = T::of(Shape{1, 4}, {1, 2, 3, 4}).set_requires_grad(true);
  T w = T::ones(Shape{3}).set_requires_grad(true);
  T y = conv1d_channels(x, w);
  const double expect[4] = {3, 6, 9, 7};  // zero-padded cross-channel window sums
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == Approx(expect[i]).epsilon(1e-12));

  T loss = sum(y);
  backward(loss);
  const double gx[4] = {2, 3, 3, 2};
  const double gw[3] = {6, 10, 9};
  for (int i = 0; i < 4; ++i) CHECK(grad_of(x)[i] == Approx(gx[i]).epsilon(1e-12));
  for (int i = 0; i < 3; ++i) CHECK(grad_of(w)[i] == Approx(gw[i]).epsilon(1e-12));
}

TEST_CASE("activation fixtures") {
  fresh_tape();
  T x = T::of(Shape{4}, {std::log(3.0), 0.0, -2.0, 5.0});
  T s = sigmoid(x);
  CHECK(s.data()[0] == Approx(0.75).epsilon(1e-12));
  CHECK(s.data()[1] == Approx(0.5).epsilon(1e-12));

  T r = T::of(Shape{4}, {-1.0, 2.0, -0.5, 3.0}).set_requires_grad(true);
  T y = sum(relu(r));
  CHECK(y.item() == Approx(5.0).epsilon(1e-12));
  backward(y);
  const double gr[4] = {0, 1, 0, 1};
  for (int i = 0; i < 4; ++i) CHECK(grad_of(r)[i] == gr[i]);

  fresh_tape();
  T c = T::of(Shape{3}, {-2.0, 0.3, 2.0}).set_requires_grad(true);
  T cl = clamp(c, -1.0, 1.0);
  CHECK(cl.data()[0] == -1.0);
  CHECK(cl.data()[1] == 0.3);
  CHECK(cl.data()[2] == 1.0);
  T closs = sum(cl);
  backward(closs);
  CHECK(grad_of(c)[0] == 0.0);  // saturated low
  CHECK(grad_of(c)[1] == 1.0);
  CHECK(grad_of(c)[2] == 0.0);  // saturated high

  fresh_tape();
  T lx = T::of(Shape{2}, {2.0, 0.5}).set_requires_grad(true);
  T ll = sum(log(lx));
  backward(ll);
  CHECK(grad_of(lx)[0] == Approx(0.5).epsilon(1e-12));
  CHECK(grad_of(lx)[1] == Approx(2.0).epsilon(1e-12));
}

TEST_CASE("binary op broadcasting accepts scalars only") {
  T a(Shape{2, 2}, 3.0);
  T s = T::scalar(2.0);
  CHECK(add(a, s).data()[0] == 5.0);
  CHECK(mul(s, a).data()[3] == 6.0);
  CHECK(div(a, s).data()[0] == 1.5);
  CHECK_THROWS_AS(add(a, T(Shape{2, 3}, 1.0)), Error);
  CHECK_THROWS_AS(mul(a, T(Shape{4}, 1.0)), Error);
}

TEST_CASE("batchnorm training fixture and running statistics") {
  fresh_tape();
  T x = T::of(Shape{1, 1, 1, 2}, {1.0, 3.0});
  T gamma = T::ones(Shape{1});
  T beta = T::zeros(Shape{1});
  T rm = T::zeros(Shape{1});
  T rv = T::ones(Shape{1});

  T y = batchnorm2d(x, gamma, beta, rm, rv, /*training=*/true);
  const double e = 1.0 / std::sqrt(1.0 + 1e-5);  // unit batch variance + eps
  CHECK(y.data()[0] == Approx(-e).epsilon(1e-12));
  CHECK(y.data()[1] == Approx(e).epsilon(1e-12));
  CHECK(rm.data()[0] == Approx(0.2).epsilon(1e-12));  // 0.9*0 + 0.1*2
  CHECK(rv.data()[0] == Approx(1.0).epsilon(1e-12));  // 0.9*1 + 0.1*1

  // Eval mode normalizes by the running estimates instead.
  T ye = batchnorm2d(x, gamma, beta, rm, rv, /*training=*/false);
  CHECK(ye.data()[0] == Approx((1.0 - 0.2) * e).epsilon(1e-9));
  CHECK(ye.data()[1] == Approx((3.0 - 0.2) * e).epsilon(1e-9));

  // A single element per channel has no batch variance to estimate.
  T one = T::ones(Shape{1, 1, 1, 1});
  CHECK_THROWS_AS(batchnorm2d(one, gamma, beta, rm, rv, true), Error);
}

TEST_CASE("bilinear resize fixtures") {
  T x = T::of(Shape{1, 1, 2, 2}, {0.0, 2.0, 4.0, 6.0});
  T up = upsample_bilinear(x, 4, 4);
  CHECK(up.shape() == Shape{1, 1, 4, 4});
  // Half-pixel alignment replicates the input values at the output corners.
  CHECK(up.data()[0] == Approx(0.0).epsilon(1e-12));
  CHECK(up.data()[3] == Approx(2.0).epsilon(1e-12));
  CHECK(up.data()[12] == Approx(4.0).epsilon(1e-12));
  CHECK(up.data()[15] == Approx(6.0).epsilon(1e-12));
  CHECK(up.data()[5] == Approx(1.5).epsilon(1e-12));  // (1,1): blend at lam 0.25

  // Resizing to the same extent is the identity.
  T same = upsample_bilinear(x, 2, 2);
  for (int i = 0; i < 4; ++i) CHECK(same.data()[i] == x.data()[i]);
}

TEST_CASE("maxpool routes gradients to window maxima") {
  fresh_tape();
  T x = T::of(Shape{1, 1, 4, 4}, {1, 2, 0.5, 0.4,
                                  3, 8, 0.6, 0.7,
                                  9, 10, 13, 12,
                                  11, 14, 15, 16}).set_requires_grad(true);
  T y = maxpool2x2(x);
  const double expect[4] = {8, 0.7, 14, 16};
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == expect[i]);

  T loss = sum(y);
  backward(loss);
  std::vector<double> g = grad_of(x);
  double total = 0;
  for (double v : g) total += v;
  CHECK(total == 4.0);
  CHECK(g[5] == 1.0);   // 8
  CHECK(g[7] == 1.0);   // 0.7
  CHECK(g[13] == 1.0);  // 14
  CHECK(g[15] == 1.0);  // 16

  CHECK_THROWS_AS(maxpool2x2(T(Shape{1, 1, 3, 4}, 0.0)), Error);  // odd extent
}

TEST_CASE("reshape, split and concat round trips") {
  fresh_tape();
  T x = T::of(Shape{1, 4, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8}).set_requires_grad(true);
  CHECK_THROWS_AS(reshape(x, Shape{3, 3}), Error);

  std::vector<T> parts = split_channels(x, {1, 2, 1});
  CHECK(parts[0].shape() == Shape{1, 1, 1, 2});
  CHECK(parts[1].shape() == Shape{1, 2, 1, 2});
  T back = concat_channels<double>({parts[0], parts[1], parts[2]});
  for (int i = 0; i < 8; ++i) CHECK(back.data()[i] == x.data()[i]);

  CHECK_THROWS_AS(split_channels(x, {1, 2}), Error);  // sizes must sum to C
  CHECK_THROWS_AS(concat_channels<double>({parts[0], T(Shape{1, 1, 2, 2}, 0.0)}), Error);

  T loss = sum(back);
  backward(loss);
  for (int i = 0; i < 8; ++i) CHECK(grad_of(x)[i] == 1.0);
}

TEST_CASE("channel broadcast and scale fixtures") {
  fresh_tape();
  T x = T::of(Shape{1, 1, 2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
  T b = broadcast_channels(x, 3);
  CHECK(b.shape() == Shape{1, 3, 2, 2});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i) CHECK(b.data()[c * 4 + i] == x.data()[i]);
  T loss = sum(b);
  backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(grad_of(x)[i] == 3.0);

  fresh_tape();
  T f = T::of(Shape{1, 2, 1, 2}, {1, 2, 3, 4}).set_requires_grad(true);
  T s = T::of(Shape{1, 2}, {2.0, -1.0}).set_requires_grad(true);
  T scaled = scale_channels(f, s);
  CHECK(scaled.data()[0] == 2.0);
  CHECK(scaled.data()[1] == 4.0);
  CHECK(scaled.data()[2] == -3.0);
  CHECK(scaled.data()[3] == -4.0);
  T sl = sum(scaled);
  backward(sl);
  CHECK(grad_of(f)[0] == 2.0);
  CHECK(grad_of(f)[2] == -1.0);
  CHECK(grad_of(s)[0] == 3.0);  // sum of plane 0
  CHECK(grad_of(s)[1] == 7.0);  // sum of plane 1
}

TEST_CASE("repeated evaluation is bit-identical") {
  Tensor<float> x(Shape{1, 2, 6, 6});
  for (int i = 0; i < x.numel(); ++i) x.data()[i] = 0.01f * static_cast<float>(i % 17) - 0.05f;
  Tensor<float> w(Shape{3, 2, 3, 3});
  for (int i = 0; i < w.numel(); ++i) w.data()[i] = 0.02f * static_cast<float>(i % 7) - 0.03f;

  NoGradGuard ng;
  Tensor<float> y1 = conv2d(x, w, Tensor<float>(), 1, 1);
  Tensor<float> y2 = conv2d(x, w, Tensor<float>(), 1, 1);
  CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * y1.numel()) == 0);
}

TEST_SUITE_END();
