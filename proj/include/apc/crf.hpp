#pragma once

#include "apc/image.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace apc {

struct CrfConfig {
  int iters = 5;
  double pairwise_weight = 3.0;
  double color_sigma = 0.1;
  double pos_sigma = 3.0;  // pixels
  int radius = 5;          // truncated neighborhood window
};

// Mean-field inference on a grid-structured pairwise model with a Potts
// potential weighted by a Gaussian kernel over (position, color).
// pixel_probs: (h*w, n_classes), pixels row-major; rows must sum to 1 +- 1e-5.
inline SegMask crf_refine(const Eigen::MatrixXd& pixel_probs, const ImageTensor& image,
                          const CrfConfig& cfg) {
  int h = image.height(), w = image.width();
  int n_classes = static_cast<int>(pixel_probs.cols());
  if (pixel_probs.rows() != static_cast<long>(h) * w)
    throw std::invalid_argument("crf_refine: prob rows do not match image pixels");
  for (long i = 0; i < pixel_probs.rows(); ++i)
    if (std::abs(pixel_probs.row(i).sum() - 1.0) > 1e-5)
      throw std::invalid_argument("crf_refine: probability rows must sum to 1");

  Eigen::MatrixXd unary =
      -pixel_probs.array().max(1e-12).log();  // (h*w, C)
  Eigen::MatrixXd q = pixel_probs;

  double inv_pos = 1.0 / (2.0 * cfg.pos_sigma * cfg.pos_sigma);
  double inv_col = 1.0 / (2.0 * cfg.color_sigma * cfg.color_sigma);

  for (int it = 0; it < cfg.iters && cfg.pairwise_weight != 0.0; ++it) {
    Eigen::MatrixXd qn(q.rows(), q.cols());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        long i = static_cast<long>(y) * w + x;
        Eigen::RowVectorXd msg = Eigen::RowVectorXd::Zero(n_classes);
        for (int dy = -cfg.radius; dy <= cfg.radius; ++dy)
          for (int dx = -cfg.radius; dx <= cfg.radius; ++dx) {
            if (dy == 0 && dx == 0) continue;
            int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            long j = static_cast<long>(ny) * w + nx;
            double dr = image.r(y, x) - image.r(ny, nx);
            double dg = image.g(y, x) - image.g(ny, nx);
            double db = image.b(y, x) - image.b(ny, nx);
            double k = std::exp(-(dy * dy + dx * dx) * inv_pos -
                                (dr * dr + dg * dg + db * db) * inv_col);
            msg += k * q.row(j);
          }
        Eigen::RowVectorXd logits = -unary.row(i) + cfg.pairwise_weight * msg;
        Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
        qn.row(i) = e / e.sum();
      }
    q = std::move(qn);
  }

  SegMask mask;
  mask.classes.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long i = static_cast<long>(y) * w + x;
      int best;
      q.row(i).maxCoeff(&best);
      mask.classes(y, x) = best;
    }
  return mask;
}

}  // namespace apc
