#pragma once

#include "apc/image.hpp"

#include <stdexcept>
#include <vector>

namespace apc {

struct IoUReport {
  std::vector<double> per_class_iou;   // -1 where the class is absent from both
  std::vector<bool> class_present;
  double miou = 0.0;                   // mean over present classes
};

// Per-class IoU from the global confusion matrix over all mask pairs.
// Classes absent from both ground truth and prediction are excluded from the
// mean. Ignore-id pixels in the ground truth are skipped.
inline IoUReport evaluate_miou(const std::vector<SegMask>& pred_masks,
                               const std::vector<SegMask>& gt_masks, int n_classes) {
  if (pred_masks.size() != gt_masks.size())
    throw std::invalid_argument("evaluate_miou: mask list lengths differ");
  std::vector<long> inter(static_cast<size_t>(n_classes), 0);
  std::vector<long> pred_count(static_cast<size_t>(n_classes), 0);
  std::vector<long> gt_count(static_cast<size_t>(n_classes), 0);
  for (size_t i = 0; i < pred_masks.size(); ++i) {
    const auto& p = pred_masks[i].classes;
    const auto& g = gt_masks[i].classes;
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw std::invalid_argument("evaluate_miou: mask shape mismatch");
    for (int y = 0; y < p.rows(); ++y)
      for (int x = 0; x < p.cols(); ++x) {
        int gv = g(y, x), pv = p(y, x);
        if (gv == kIgnoreId) continue;
        if (gv < 0 || gv >= n_classes || pv < 0 || pv >= n_classes)
          throw std::invalid_argument("evaluate_miou: class id out of range");
        ++gt_count[static_cast<size_t>(gv)];
        ++pred_count[static_cast<size_t>(pv)];
        if (gv == pv) ++inter[static_cast<size_t>(gv)];
      }
  }
  IoUReport rep;
  rep.per_class_iou.assign(static_cast<size_t>(n_classes), -1.0);
  rep.class_present.assign(static_cast<size_t>(n_classes), false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    long uni = gt_count[static_cast<size_t>(c)] + pred_count[static_cast<size_t>(c)] -
               inter[static_cast<size_t>(c)];
    if (uni == 0) continue;
    rep.class_present[static_cast<size_t>(c)] = true;
    rep.per_class_iou[static_cast<size_t>(c)] =
        static_cast<double>(inter[static_cast<size_t>(c)]) / static_cast<double>(uni);
    sum += rep.per_class_iou[static_cast<size_t>(c)];
    ++present;
  }
  rep.miou = present > 0 ? sum / present : 0.0;
  return rep;
}

}  // namespace apc
