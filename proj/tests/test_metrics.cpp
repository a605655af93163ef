#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "bunet/metrics.hpp"
#include "oracles.hpp"

using namespace bunet;
using doctest::Approx;

namespace {

BinaryMap from_rows(const std::vector<std::vector<int>>& rows) {
  BinaryMap m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) m.at(y, x) = rows[y][x] ? 1 : 0;
  return m;
}

// A horizontal run of pixels in row `y`.
BinaryMap line_map(int h, int w, int y, int x0, int x1) {
  BinaryMap m(h, w);
  for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("confusion counts and ratios fixture") {
  BinaryMap gt = from_rows({{1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1, 0, 0}, {0, 0, 0, 0}});
  BinaryMap pred = from_rows({{1, 1, 1, 1}, {1, 1, 1, 1}, {0, 0, 1, 1}, {0, 0, 0, 0}});
  ConfusionCounts c = confusion(pred, gt);
  CHECK(c.tp == 8);
  CHECK(c.fp == 2);
  CHECK(c.fn == 2);
  CHECK(c.tn == 4);
  CHECK(c.total() == 16);

  MetricReport r;
  ratios(c, r);
  CHECK(r.dice == Approx(0.8).epsilon(1e-15));
  CHECK(r.iou == Approx(8.0 / 12.0).epsilon(1e-15));
  CHECK(r.recall == Approx(0.8).epsilon(1e-15));
  CHECK(r.accuracy == Approx(0.75).epsilon(1e-15));
  CHECK(r.counts.tp == 8);

  CHECK_THROWS_AS(confusion(BinaryMap(4, 4), BinaryMap(4, 5)), Error);
}

TEST_CASE("ratio conventions for degenerate denominators") {
  // Both maps empty: perfect agreement.
  MetricReport r;
  ratios(confusion(BinaryMap(3, 3), BinaryMap(3, 3)), r);
  CHECK(r.dice == 1.0);
  CHECK(r.iou == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.accuracy == 1.0);

  // Empty ground truth, nonempty prediction: recall collapses to 0.
  BinaryMap pred(3, 3);
  pred.at(1, 1) = 1;
  ratios(confusion(pred, BinaryMap(3, 3)), r);
  CHECK(r.dice == 0.0);
  CHECK(r.iou == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.accuracy == Approx(8.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("boundary extraction is the inner rim") {
  // Solid 4x4 block inside an 8x8 map: 16 pixels minus the 2x2 interior.
  BinaryMap block(8, 8);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) block.at(y, x) = 1;
  BinaryMap b = extract_boundary(block);
  CHECK(b.count() == 12);
  CHECK(b.at(2, 2) == 1);
  CHECK(b.at(3, 3) == 0);  // interior
  CHECK(b.at(4, 4) == 0);

  // A fully set map keeps its border ring: image-edge pixels never survive.
  BinaryMap full(6, 6);
  for (auto& v : full.v) v = 1;
  CHECK(extract_boundary(full).count() == 20);

  // Single pixels and empty maps are their own boundary.
  BinaryMap dot(5, 5);
  dot.at(2, 3) = 1;
  BinaryMap bd = extract_boundary(dot);
  CHECK(bd.count() == 1);
  CHECK(bd.at(2, 3) == 1);
  CHECK(extract_boundary(BinaryMap(4, 4)).count() == 0);
}

TEST_CASE("threshold is strictly greater than one half") {
  Tensor<float> prob = Tensor<float>::of(Shape{1, 1, 1, 3}, {0.49f, 0.5f, 0.51f});
  BinaryMap m = threshold_map(prob);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(0, 1) == 0);
  CHECK(m.at(0, 2) == 1);

  CHECK_THROWS_AS(threshold_map(Tensor<float>(Shape{1, 2, 1, 3}, 0.5f)), Error);

  // Map <-> tensor round trip.
  BinaryMap back = tensor_to_map(map_to_tensor(m));
  CHECK(back.v == m.v);
}

TEST_CASE("hd95 point fixtures") {
  // Two single pixels: a 3-4-5 triangle.
  BinaryMap a(6, 6), b(6, 6);
  a.at(0, 0) = 1;
  b.at(3, 4) = 1;
  Hd95Result r = hd95(a, b);
  CHECK(r.defined);
  CHECK(r.value == Approx(5.0).epsilon(1e-15));

  // Identical maps: zero.
  r = hd95(b, b);
  CHECK(r.defined);
  CHECK(r.value == 0.0);

  // Both empty: zero by convention. One empty: undefined (+infinity).
  r = hd95(BinaryMap(4, 4), BinaryMap(4, 4));
  CHECK(r.defined);
  CHECK(r.value == 0.0);
  r = hd95(a, BinaryMap(6, 6));
  CHECK_FALSE(r.defined);
  CHECK(std::isinf(r.value));

  CHECK_THROWS_AS(hd95(BinaryMap(4, 4), BinaryMap(5, 4)), Error);
}

TEST_CASE("hd95 trims outliers beyond the 95th percentile") {
  // 20 coincident boundary pixels plus one stray: rank ceil(0.95*21)=20 of 21
  // sorted distances is still 0, so the stray is ignored...
  BinaryMap gt = line_map(16, 40, 0, 0, 19);
  BinaryMap pred = line_map(16, 40, 0, 0, 19);
  pred.at(10, 30) = 1;
  Hd95Result r = hd95(pred, gt);
  CHECK(r.defined);
  CHECK(r.value == 0.0);

  // ...but with only 10 base pixels, rank ceil(0.95*11)=11 of 11 is the
  // maximum, so the same stray dominates.
  BinaryMap gt2 = line_map(16, 40, 0, 0, 9);
  BinaryMap pred2 = line_map(16, 40, 0, 0, 9);
  pred2.at(5, 20) = 1;
  Hd95Result r2 = hd95(pred2, gt2);
  CHECK(r2.defined);
  CHECK(r2.value == Approx(std::sqrt(146.0)).epsilon(1e-12));  // (5,20) -> (0,9)
}

TEST_CASE("exact distance transform matches brute force") {
  SplitMix64 rng(123);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 1 + static_cast<int>(rng.uniform_int(0, 15));
    const int w = 1 + static_cast<int>(rng.uniform_int(0, 15));
    const double density = trial % 4 == 0 ? 0.0 : rng.uniform(0.02, 0.9);
    BinaryMap m = oracle::random_map(rng, h, w, density);
    const std::vector<double> fast = squared_edt(m);
    const std::vector<double> slow = oracle::brute_squared_edt(m);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      if (std::isinf(slow[i])) {
        CHECK(std::isinf(fast[i]));
      } else {
        CHECK(fast[i] == slow[i]);  // exact: both are integer-valued
      }
    }
  }
}

TEST_CASE("hd95 matches the all-pairs reference on random maps") {
  SplitMix64 rng(321);
  int defined_seen = 0, undefined_seen = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(0, 10));
    const int w = 2 + static_cast<int>(rng.uniform_int(0, 10));
    const double dp = trial % 5 == 0 ? 0.0 : rng.uniform(0.05, 0.6);
    const double dg = trial % 7 == 0 ? 0.0 : rng.uniform(0.05, 0.6);
    BinaryMap pred = oracle::random_map(rng, h, w, dp);
    BinaryMap gt = oracle::random_map(rng, h, w, dg);
    const Hd95Result fast = hd95(pred, gt);
    const Hd95Result slow = oracle::brute_hd95(pred, gt);
    CHECK(fast.defined == slow.defined);
    if (fast.defined && slow.defined) {
      CHECK(fast.value == Approx(slow.value).epsilon(1e-12));
      ++defined_seen;
    } else {
      ++undefined_seen;
    }
  }
  CHECK(defined_seen > 20);  // the sweep must actually exercise the main path
  CHECK(undefined_seen > 2);
}

TEST_CASE("report aggregation averages and pools counts") {
  BinaryMap gt = from_rows({{1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1, 0, 0}, {0, 0, 0, 0}});
  BinaryMap pred = from_rows({{1, 1, 1, 1}, {1, 1, 1, 1}, {0, 0, 1, 1}, {0, 0, 0, 0}});
  MetricReport r1 = compute_report(pred, gt);
  CHECK(r1.dice == Approx(0.8).epsilon(1e-15));
  CHECK(r1.hd95_defined);

  MetricReport r2 = compute_report(gt, gt);  // perfect
  CHECK(r2.dice == 1.0);
  CHECK(r2.hd95 == 0.0);

  // A sample with an undefined distance contributes to the overlap means but
  // not to the hd95 mean.
  BinaryMap empty(4, 4);
  MetricReport r3 = compute_report(empty, gt);
  CHECK_FALSE(r3.hd95_defined);

  MetricReport agg = aggregate_reports({r1, r2, r3});
  CHECK(agg.dice == Approx((r1.dice + r2.dice + r3.dice) / 3.0).epsilon(1e-15));
  CHECK(agg.recall == Approx((r1.recall + r2.recall + r3.recall) / 3.0).epsilon(1e-15));
  CHECK(agg.hd95_defined);
  CHECK(agg.hd95 == Approx((r1.hd95 + r2.hd95) / 2.0).epsilon(1e-15));
  CHECK(agg.counts.tp == r1.counts.tp + r2.counts.tp + r3.counts.tp);

  // No defined distances at all -> undefined aggregate.
  MetricReport none = aggregate_reports({r3, r3});
  CHECK_FALSE(none.hd95_defined);

  // Empty input: zero-initialized report.
  MetricReport zero = aggregate_reports({});
  CHECK(zero.dice == 0.0);
}

TEST_SUITE_END();
