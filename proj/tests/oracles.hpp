#pragma once

// Brute-force reference implementations shared by the metric unit tests and
// the acceptance gate. Deliberately the dumbest possible code: all-pairs
// scans with no shared logic with the production metric path beyond the
// boundary extraction itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bunet/metrics.hpp"
#include "bunet/rng.hpp"

namespace oracle {

struct Point {
  int y, x;
};

inline std::vector<Point> points_of(const bunet::BinaryMap& m) {
  std::vector<Point> pts;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(y, x)) pts.push_back({y, x});
  return pts;
}

// Squared distance transform by scanning every site for every pixel.
inline std::vector<double> brute_squared_edt(const bunet::BinaryMap& sites) {
  const std::vector<Point> pts = points_of(sites);
  std::vector<double> out(static_cast<std::size_t>(sites.h) * sites.w,
                          std::numeric_limits<double>::infinity());
  for (int y = 0; y < sites.h; ++y)
    for (int x = 0; x < sites.w; ++x) {
      std::int64_t best = -1;
      for (const Point& p : pts) {
        const std::int64_t dy = p.y - y, dx = p.x - x;
        const std::int64_t d2 = dy * dy + dx * dx;
        if (best < 0 || d2 < best) best = d2;
      }
      if (best >= 0) out[static_cast<std::size_t>(y) * sites.w + x] = static_cast<double>(best);
    }
  return out;
}

// Nearest-rank 95th percentile of the directed boundary distances.
inline double brute_directed_p95(const std::vector<Point>& from, const std::vector<Point>& to) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const Point& a : from) {
    std::int64_t best = -1;
    for (const Point& b : to) {
      const std::int64_t dy = a.y - b.y, dx = a.x - b.x;
      const std::int64_t d2 = dy * dy + dx * dx;
      if (best < 0 || d2 < best) best = d2;
    }
    dists.push_back(std::sqrt(static_cast<double>(best)));
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t idx =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(dists.size()))) - 1;
  return dists[idx];
}

inline bunet::Hd95Result brute_hd95(const bunet::BinaryMap& pred, const bunet::BinaryMap& gt) {
  const std::vector<Point> bp = points_of(bunet::extract_boundary(pred));
  const std::vector<Point> bg = points_of(bunet::extract_boundary(gt));
  if (bp.empty() && bg.empty()) return {0.0, true};
  if (bp.empty() || bg.empty()) return {std::numeric_limits<double>::infinity(), false};
  return {std::max(brute_directed_p95(bp, bg), brute_directed_p95(bg, bp)), true};
}

inline bunet::BinaryMap random_map(bunet::SplitMix64& rng, int h, int w, double p) {
  bunet::BinaryMap m(h, w);
  for (auto& v : m.v) v = rng.next_double() < p ? 1 : 0;
  return m;
}

}  // namespace oracle
