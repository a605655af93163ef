#pragma once

// Segmentation evaluation: confusion counts, overlap ratios and the 95th
// percentile Hausdorff distance between boundary point sets. HD95 uses an
// exact Euclidean distance transform, so it matches a brute-force all-pairs
// computation exactly on integer grids.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bunet/mask.hpp"

namespace bunet {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
};

struct MetricReport {
  double dice = 0, iou = 0, recall = 0, accuracy = 0;
  double hd95 = 0;           // +infinity when exactly one boundary set is empty
  bool hd95_defined = true;  // false exactly in the +infinity case
  ConfusionCounts counts;
};

ConfusionCounts confusion(const BinaryMap& pred, const BinaryMap& gt);

// dice = 2tp/(2tp+fp+fn), iou = tp/(tp+fp+fn), recall = tp/(tp+fn),
// accuracy = (tp+tn)/total. Degenerate denominators: both maps empty -> 1.0
// by convention; empty ground truth with nonempty prediction -> recall 0.
void ratios(const ConfusionCounts& c, MetricReport& out);

// Max of the two directed 95th-percentile boundary distances (nearest-rank
// percentile: sorted[ceil(0.95 n) - 1]). Boundary sets come from
// extract_boundary of each map. Both sets empty -> 0; exactly one empty ->
// +infinity with hd95_defined = false.
struct Hd95Result {
  double value = 0;
  bool defined = true;
};
Hd95Result hd95(const BinaryMap& pred, const BinaryMap& gt);

// Full report for one sample.
MetricReport compute_report(const BinaryMap& pred, const BinaryMap& gt);

// Mean over samples; hd95 averages the defined values only (aggregate
// hd95_defined is false when no sample had a defined distance).
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

// Exact squared Euclidean distance transform of a binary site map: for every
// pixel, the squared distance to the nearest set pixel (+infinity when the
// map has no set pixels). Exposed for testing against brute force.
std::vector<double> squared_edt(const BinaryMap& sites);

}  // namespace bunet
