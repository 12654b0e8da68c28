#pragma once

#include "apc/autodiff.hpp"
#include "apc/image.hpp"

#include <stdexcept>
#include <vector>

namespace apc {

inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
  double lambda1 = 0.02;  // segmentation loss weight
  double lambda2 = 0.01;  // contrastive loss weight
};

// Mean per-class binary cross-entropy between pooled predictions y (1, C)
// and binary image labels t.
inline ad::Var mce_loss(const ad::Var& y, const std::vector<int>& t) {
  int n_classes = static_cast<int>(y->val.cols());
  if (static_cast<int>(t.size()) != n_classes)
    throw std::invalid_argument("mce_loss: label/prediction length mismatch");
  ad::Var p = ad::clamp(y, kProbClamp, 1.0 - kProbClamp);
  ad::Mat tm(1, n_classes), om(1, n_classes);
  for (int c = 0; c < n_classes; ++c) {
    tm(0, c) = static_cast<double>(t[static_cast<size_t>(c)]);
    om(0, c) = 1.0 - tm(0, c);
  }
  ad::Var pos = ad::mul(ad::constant(tm), ad::log_(p));
  ad::Var neg = ad::mul(ad::constant(om), ad::log_(ad::add_scalar(ad::neg(p), 1.0)));
  return ad::neg(ad::mean(ad::add(pos, neg)));
}

// Mean per-pixel cross-entropy between decoder logits (h*w rows, row-major)
// and the pseudo mask; ignore-id pixels are excluded from the mean.
// all_ignored is set when every pixel carries the ignore id (loss is 0 then).
inline ad::Var seg_loss(const ad::Var& pixel_logits, const SegMask& pseudo_mask,
                        bool* all_ignored = nullptr) {
  int h = pseudo_mask.height(), w = pseudo_mask.width();
  if (pixel_logits->val.rows() != static_cast<long>(h) * w)
    throw std::invalid_argument("seg_loss: logit rows do not match mask pixels");
  std::vector<int> targets(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      targets[static_cast<size_t>(y) * w + x] = pseudo_mask.classes(y, x);
  return ad::cross_entropy_rows(pixel_logits, targets, kIgnoreId, all_ignored);
}

inline ad::Var total_loss(const ad::Var& mce, const ad::Var& seg,
                          const std::vector<ad::Var>& pce_per_class,
                          const LossWeights& weights) {
  ad::Var total = ad::add(mce, ad::scale(seg, weights.lambda1));
  for (const auto& pce : pce_per_class)
    total = ad::add(total, ad::scale(pce, weights.lambda2));
  return total;
}

// Patch pseudo labels from patch scores: background (0) when the best
// foreground score is below beta, otherwise argmax class + 1. With the
// ignore band enabled, best scores in [beta, eps) are marked ignore.
inline std::vector<int> pseudo_patch_labels(const ad::Mat& z, double beta,
                                            double eps, bool ignore_band) {
  int s = static_cast<int>(z.rows());
  std::vector<int> labels(static_cast<size_t>(s));
  for (int i = 0; i < s; ++i) {
    int best = 0;
    double best_score = z(i, 0);
    for (int c = 1; c < z.cols(); ++c)
      if (z(i, c) > best_score) { best_score = z(i, c); best = c; }
    if (best_score < beta)
      labels[static_cast<size_t>(i)] = 0;
    else if (ignore_band && best_score < eps)
      labels[static_cast<size_t>(i)] = kIgnoreId;
    else
      labels[static_cast<size_t>(i)] = best + 1;
  }
  return labels;
}

}  // namespace apc
