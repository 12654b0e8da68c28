#pragma once

#include "apc/autodiff.hpp"

#include <stdexcept>
#include <vector>

namespace apc {

inline constexpr double kNormFloor = 1e-12;

inline double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  double nu = u.norm(), nv = v.norm();
  if (nu < kNormFloor || nv < kNormFloor)
    throw std::invalid_argument("cosine_similarity: degenerate (near-zero) embedding");
  return u.dot(v) / (nu * nv);
}

// Affine map of cosine similarity onto [0,1].
inline double normalized_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  return (1.0 + cosine_similarity(u, v)) / 2.0;
}

// Per-class high/low confidence patch index sets under threshold eps.
struct ConfidencePartition {
  std::vector<std::vector<int>> high;  // per class: indices with Z > eps
  std::vector<std::vector<int>> low;   // per class: indices with Z < 1 - eps
  double eps = 0.0;

  long n_pos_pairs(int c) const {
    long n = static_cast<long>(high[static_cast<size_t>(c)].size());
    return n * (n - 1);
  }
  long n_neg_pairs(int c) const {
    return static_cast<long>(high[static_cast<size_t>(c)].size()) *
           static_cast<long>(low[static_cast<size_t>(c)].size());
  }
};

inline ConfidencePartition partition_confidence(const ad::Mat& z, double eps) {
  if (!(eps > 0.5 && eps < 1.0))
    throw std::invalid_argument("confidence threshold eps must lie in (0.5, 1)");
  ConfidencePartition part;
  part.eps = eps;
  int s = static_cast<int>(z.rows());
  int n_classes = static_cast<int>(z.cols());
  part.high.resize(static_cast<size_t>(n_classes));
  part.low.resize(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < s; ++i) {
      if (z(i, c) > eps) part.high[static_cast<size_t>(c)].push_back(i);
      if (z(i, c) < 1.0 - eps) part.low[static_cast<size_t>(c)].push_back(i);
    }
  return part;
}

namespace detail {

inline double cos_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                       Eigen::VectorXd& du, Eigen::VectorXd& dv) {
  double nu = u.norm(), nv = v.norm();
  if (nu < kNormFloor || nv < kNormFloor)
    throw std::invalid_argument("pce_loss: degenerate (near-zero) embedding");
  double s = u.dot(v) / (nu * nv);
  du = v / (nu * nv) - s * u / (nu * nu);
  dv = u / (nu * nv) - s * v / (nv * nv);
  return s;
}

}  // namespace detail

// Contrastive error for one class: mean (1 - Sbar) over ordered high-high
// pairs plus mean Sbar over high-low pairs; an empty pair set contributes 0.
// Fused op with an analytic gradient in the embeddings.
inline ad::Var pce_loss(const ad::Var& f_out, const ConfidencePartition& part, int c) {
  const auto& high = part.high.at(static_cast<size_t>(c));
  const auto& low = part.low.at(static_cast<size_t>(c));
  long npos = part.n_pos_pairs(c);
  long nneg = part.n_neg_pairs(c);

  const ad::Mat& f = f_out->val;
  ad::Mat grad = ad::Mat::Zero(f.rows(), f.cols());
  double loss = 0.0;
  Eigen::VectorXd du, dv;

  if (npos > 0) {
    double wp = 1.0 / static_cast<double>(npos);
    for (size_t a = 0; a < high.size(); ++a)
      for (size_t b = 0; b < high.size(); ++b) {
        if (a == b) continue;
        double s = detail::cos_grad(f.row(high[a]), f.row(high[b]), du, dv);
        loss += wp * (1.0 - (1.0 + s) / 2.0);
        grad.row(high[a]) -= wp * 0.5 * du.transpose();
        grad.row(high[b]) -= wp * 0.5 * dv.transpose();
      }
  }
  if (nneg > 0) {
    double wn = 1.0 / static_cast<double>(nneg);
    for (int m : high)
      for (int n : low) {
        double s = detail::cos_grad(f.row(m), f.row(n), du, dv);
        loss += wn * (1.0 + s) / 2.0;
        grad.row(m) += wn * 0.5 * du.transpose();
        grad.row(n) += wn * 0.5 * dv.transpose();
      }
  }

  ad::Mat out(1, 1);
  out(0, 0) = loss;
  return ad::make_op(out, {f_out}, [f_out, grad](ad::Node& n) {
    f_out->ensure_grad();
    f_out->grad += n.grad(0, 0) * grad;
  });
}

}  // namespace apc
