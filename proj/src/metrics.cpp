#include "bunet/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace bunet {

ConfusionCounts confusion(const BinaryMap& pred, const BinaryMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    fail("confusion: map sizes differ (" + std::to_string(pred.h) + "x" + std::to_string(pred.w) +
         " vs " + std::to_string(gt.h) + "x" + std::to_string(gt.w) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i], g = gt.v[i];
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

void ratios(const ConfusionCounts& c, MetricReport& out) {
  const double tp = static_cast<double>(c.tp);
  out.dice = (2 * c.tp + c.fp + c.fn) == 0 ? 1.0 : 2 * tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  out.iou = (c.tp + c.fp + c.fn) == 0 ? 1.0 : tp / static_cast<double>(c.tp + c.fp + c.fn);
  out.recall = (c.tp + c.fn) == 0 ? (c.fp == 0 ? 1.0 : 0.0) : tp / static_cast<double>(c.tp + c.fn);
  out.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  out.counts = c;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-dimensional squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z, int n) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (f[v[0]] == kInf && k == 0) {  // first finite parabola
      v[0] = q;
      continue;
    }
    double s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
               (2.0 * (q - v[k]));
    while (s <= z[k]) {
      --k;
      s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
          (2.0 * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (f[v[0]] == kInf) {  // no finite sites on this line
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_edt(const BinaryMap& sites) {
  const int h = sites.h, w = sites.w;
  std::vector<double> dist(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = sites.v[i] ? 0.0 : kInf;

  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  // Columns first, then rows.
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = dist[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, d, v, z, h);
    for (int y = 0; y < h; ++y) dist[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = dist[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, d, v, z, w);
    for (int x = 0; x < w; ++x) dist[static_cast<std::size_t>(y) * w + x] = d[x];
  }
  return dist;
}

namespace {

// Directed 95th-percentile distance: for each boundary point of `from`, the
// distance to the nearest boundary point of `to` (via the EDT of `to`), then
// the nearest-rank 95th percentile of the sorted multiset.
double directed_p95(const BinaryMap& from, const std::vector<double>& edt_to, int w) {
  std::vector<double> dists;
  for (int y = 0; y < from.h; ++y)
    for (int x = 0; x < from.w; ++x)
      if (from.at(y, x)) dists.push_back(std::sqrt(edt_to[static_cast<std::size_t>(y) * w + x]));
  std::sort(dists.begin(), dists.end());
  const std::size_t n = dists.size();
  const std::size_t idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1;
  return dists[idx];
}

}  // namespace

Hd95Result hd95(const BinaryMap& pred, const BinaryMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    fail("hd95: map sizes differ (" + std::to_string(pred.h) + "x" + std::to_string(pred.w) +
         " vs " + std::to_string(gt.h) + "x" + std::to_string(gt.w) + ")");
  const BinaryMap bp = extract_boundary(pred);
  const BinaryMap bg = extract_boundary(gt);
  const bool pe = bp.count() == 0, ge = bg.count() == 0;
  if (pe && ge) return {0.0, true};
  if (pe || ge) return {kInf, false};
  const std::vector<double> edt_p = squared_edt(bp);
  const std::vector<double> edt_g = squared_edt(bg);
  const double a = directed_p95(bp, edt_g, gt.w);
  const double b = directed_p95(bg, edt_p, pred.w);
  return {std::max(a, b), true};
}

MetricReport compute_report(const BinaryMap& pred, const BinaryMap& gt) {
  MetricReport r;
  ratios(confusion(pred, gt), r);
  const Hd95Result h = hd95(pred, gt);
  r.hd95 = h.value;
  r.hd95_defined = h.defined;
  return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
  MetricReport agg;
  if (reports.empty()) return agg;
  double hd_sum = 0;
  int hd_n = 0;
  for (const MetricReport& r : reports) {
    agg.dice += r.dice;
    agg.iou += r.iou;
    agg.recall += r.recall;
    agg.accuracy += r.accuracy;
    agg.counts.tp += r.counts.tp;
    agg.counts.fp += r.counts.fp;
    agg.counts.tn += r.counts.tn;
    agg.counts.fn += r.counts.fn;
    if (r.hd95_defined) {
      hd_sum += r.hd95;
      ++hd_n;
    }
  }
  const double n = static_cast<double>(reports.size());
  agg.dice /= n;
  agg.iou /= n;
  agg.recall /= n;
  agg.accuracy /= n;
  if (hd_n > 0) {
    agg.hd95 = hd_sum / hd_n;
    agg.hd95_defined = true;
  } else {
    agg.hd95 = std::numeric_limits<double>::infinity();
    agg.hd95_defined = false;
  }
  return agg;
}

}  // namespace bunet
