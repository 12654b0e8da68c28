#pragma once

#include "apc/autodiff.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace apc {

enum class PoolingMode { GAP, GMP, TOPK_FIXED, AKP };

inline const char* pooling_mode_name(PoolingMode m) {
  switch (m) {
    case PoolingMode::GAP: return "gap";
    case PoolingMode::GMP: return "gmp";
    case PoolingMode::TOPK_FIXED: return "topk";
    case PoolingMode::AKP: return "akp";
  }
  return "?";
}

inline PoolingMode parse_pooling_mode(const std::string& s) {
  if (s == "gap") return PoolingMode::GAP;
  if (s == "gmp") return PoolingMode::GMP;
  if (s == "topk") return PoolingMode::TOPK_FIXED;
  if (s == "akp") return PoolingMode::AKP;
  throw std::invalid_argument("unknown pooling mode: " + s +
                              " (expected gap|gmp|topk|akp)");
}

// Per-class result of adaptive K selection: the chosen patch indices ordered
// by descending score (ties broken by ascending index) and their scores.
struct AkpSelection {
  std::vector<int> indices;
  std::vector<double> scores;

  int k() const { return static_cast<int>(indices.size()); }
  double mean_score() const {
    return std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
  }
};

namespace detail {
inline std::vector<int> descending_order(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}
}  // namespace detail

// Selection loop: start from the top-1 score; for each i up to K replace the
// selection by the top-i prefix whenever mean(top-i)/mean(selected) exceeds
// theta. Later steps are still evaluated after a rejection.
inline AkpSelection adaptive_k_select(const std::vector<double>& column_scores,
                                      int K, double theta) {
  if (column_scores.empty())
    throw std::invalid_argument("adaptive_k_select: empty score column");
  if (K < 1) throw std::invalid_argument("adaptive_k_select: K must be >= 1");
  if (theta < 0) throw std::invalid_argument("adaptive_k_select: theta must be >= 0");
  auto order = detail::descending_order(column_scores);
  int s = static_cast<int>(column_scores.size());
  int limit = std::min(K, s);

  auto prefix_mean = [&](int count) {
    double sum = 0.0;
    for (int j = 0; j < count; ++j) sum += column_scores[order[static_cast<size_t>(j)]];
    return sum / count;
  };

  int selected = 1;
  for (int i = 2; i <= limit; ++i) {
    if (prefix_mean(i) / prefix_mean(selected) > theta) selected = i;
  }

  AkpSelection sel;
  sel.indices.assign(order.begin(), order.begin() + selected);
  sel.scores.reserve(static_cast<size_t>(selected));
  for (int idx : sel.indices) sel.scores.push_back(column_scores[static_cast<size_t>(idx)]);
  return sel;
}

// Indices pooled for one class column under the given mode. AKP with theta>=1
// coincides with GMP and with theta=0 with fixed top-K, by the same float path.
inline std::vector<int> pooled_indices(const std::vector<double>& column_scores,
                                       PoolingMode mode, int K, double theta) {
  auto order = detail::descending_order(column_scores);
  int s = static_cast<int>(column_scores.size());
  switch (mode) {
    case PoolingMode::GAP:
      return order;  // every patch, descending for a stable summation order
    case PoolingMode::GMP:
      return {order[0]};
    case PoolingMode::TOPK_FIXED:
      return {order.begin(), order.begin() + std::min(K, s)};
    case PoolingMode::AKP:
      return adaptive_k_select(column_scores, K, theta).indices;
  }
  throw std::logic_error("unreachable");
}

// Eq-style patch scoring: softmax over the class axis of F_out W.
inline ad::Var patch_scores(const ad::Var& f_out, const ad::Var& w) {
  if (f_out->val.cols() != w->val.rows())
    throw std::invalid_argument("patch_scores: embedding/classifier width mismatch");
  return ad::softmax_rows(ad::matmul(f_out, w));
}

// Image-level prediction y (1, C): per class, the mean of the pooled score
// entries. Selection is computed on detached values; gradients flow only
// through the averaged entries (1/k each).
inline ad::Var pool(const ad::Var& z, PoolingMode mode, int K, double theta) {
  int n_classes = static_cast<int>(z->val.cols());
  int s = static_cast<int>(z->val.rows());
  std::vector<ad::Var> ys;
  ys.reserve(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> col(static_cast<size_t>(s));
    for (int i = 0; i < s; ++i) col[static_cast<size_t>(i)] = z->val(i, c);
    auto idx = pooled_indices(col, mode, K, theta);
    ys.push_back(ad::mean(ad::slice_cols(ad::gather_rows(z, idx), c, 1)));
  }
  return ad::concat_cols(ys);
}

}  // namespace apc
