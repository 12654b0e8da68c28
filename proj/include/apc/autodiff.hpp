#pragma once

// Reverse-mode automatic differentiation over Eigen matrices.
// Graphs are built per forward pass and freed when the last Var goes away.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

namespace apc::ad {

using Mat = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat val;
  Mat grad;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;

  explicit Node(Mat v) : val(std::move(v)) {}

  void ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(val.rows(), val.cols());
  }
};

inline Var constant(Mat v) { return std::make_shared<Node>(std::move(v)); }

inline Var param(Mat v) {
  auto n = std::make_shared<Node>(std::move(v));
  n->requires_grad = true;
  return n;
}

inline Var make_op(Mat val, std::vector<Var> parents,
                   std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>(std::move(val));
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
  return make_op(a->val + b->val, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
    if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad; }
  });
}

inline Var sub(const Var& a, const Var& b) {
  return make_op(a->val - b->val, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
    if (b->requires_grad) { b->ensure_grad(); b->grad -= n.grad; }
  });
}

inline Var mul(const Var& a, const Var& b) {
  return make_op(a->val.cwiseProduct(b->val), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad.cwiseProduct(b->val); }
    if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad.cwiseProduct(a->val); }
  });
}

inline Var div(const Var& a, const Var& b) {
  return make_op(a->val.cwiseQuotient(b->val), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad.cwiseQuotient(b->val); }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad -= n.grad.cwiseProduct(a->val).cwiseQuotient(b->val.cwiseProduct(b->val));
    }
  });
}

inline Var scale(const Var& a, double s) {
  return make_op(a->val * s, {a}, [a, s](Node& n) {
    a->ensure_grad(); a->grad += n.grad * s;
  });
}

inline Var add_scalar(const Var& a, double s) {
  return make_op(a->val.array() + s, {a}, [a](Node& n) {
    a->ensure_grad(); a->grad += n.grad;
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var log_(const Var& a) {
  return make_op(a->val.array().log(), {a}, [a](Node& n) {
    a->ensure_grad(); a->grad += n.grad.cwiseQuotient(a->val);
  });
}

inline Var sqrt_(const Var& a) {
  Mat out = a->val.array().sqrt();
  return make_op(out, {a}, [a, out](Node& n) {
    a->ensure_grad();
    a->grad.array() += n.grad.array() / (2.0 * out.array());
  });
}

inline Var sigmoid(const Var& a) {
  Mat out = 1.0 / (1.0 + (-a->val.array()).exp());
  return make_op(out, {a}, [a, out](Node& n) {
    a->ensure_grad();
    a->grad.array() += n.grad.array() * out.array() * (1.0 - out.array());
  });
}

inline Var tanh_(const Var& a) {
  Mat out = a->val.array().tanh();
  return make_op(out, {a}, [a, out](Node& n) {
    a->ensure_grad();
    a->grad.array() += n.grad.array() * (1.0 - out.array().square());
  });
}

inline Var relu(const Var& a) {
  return make_op(a->val.cwiseMax(0.0), {a}, [a](Node& n) {
    a->ensure_grad();
    a->grad.array() += n.grad.array() * (a->val.array() > 0.0).cast<double>();
  });
}

inline Var gelu(const Var& a) {
  // tanh approximation
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  Eigen::ArrayXXd x = a->val.array();
  Eigen::ArrayXXd inner = k * (x + 0.044715 * x.cube());
  Eigen::ArrayXXd t = inner.tanh();
  Mat out = 0.5 * x * (1.0 + t);
  return make_op(out, {a}, [a, t](Node& n) {
    Eigen::ArrayXXd x = a->val.array();
    Eigen::ArrayXXd dinner = 0.7978845608028654 * (1.0 + 3 * 0.044715 * x.square());
    Eigen::ArrayXXd d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * dinner;
    a->ensure_grad();
    a->grad.array() += n.grad.array() * d;
  });
}

// Clamp values; gradient passes only through the unclamped region.
inline Var clamp(const Var& a, double lo, double hi) {
  return make_op(a->val.cwiseMax(lo).cwiseMin(hi), {a, }, [a, lo, hi](Node& n) {
    a->ensure_grad();
    auto inside = (a->val.array() > lo && a->val.array() < hi).cast<double>();
    a->grad.array() += n.grad.array() * inside;
  });
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  if (a->val.cols() != b->val.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree");
  return make_op(a->val * b->val, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad * b->val.transpose(); }
    if (b->requires_grad) { b->ensure_grad(); b->grad += a->val.transpose() * n.grad; }
  });
}

inline Var transpose(const Var& a) {
  return make_op(a->val.transpose(), {a}, [a](Node& n) {
    a->ensure_grad(); a->grad += n.grad.transpose();
  });
}

// Add a 1xC row vector to every row.
inline Var add_rowvec(const Var& a, const Var& b) {
  return make_op(a->val.rowwise() + b->val.row(0), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
    if (b->requires_grad) { b->ensure_grad(); b->grad.row(0) += n.grad.colwise().sum(); }
  });
}

inline Var mul_rowvec(const Var& a, const Var& b) {
  Mat out = a->val.array().rowwise() * b->val.row(0).array();
  return make_op(out, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad.array() += n.grad.array().rowwise() * b->val.row(0).array();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad.row(0) += n.grad.cwiseProduct(a->val).colwise().sum();
    }
  });
}

inline Var slice_cols(const Var& a, int start, int count) {
  return make_op(a->val.middleCols(start, count), {a}, [a, start, count](Node& n) {
    a->ensure_grad(); a->grad.middleCols(start, count) += n.grad;
  });
}

inline Var slice_rows(const Var& a, int start, int count) {
  return make_op(a->val.middleRows(start, count), {a, }, [a, start, count](Node& n) {
    a->ensure_grad(); a->grad.middleRows(start, count) += n.grad;
  });
}

inline Var concat_cols(const std::vector<Var>& xs) {
  int rows = static_cast<int>(xs.front()->val.rows());
  int cols = 0;
  for (const auto& x : xs) cols += static_cast<int>(x->val.cols());
  Mat out(rows, cols);
  int at = 0;
  for (const auto& x : xs) {
    out.middleCols(at, x->val.cols()) = x->val;
    at += static_cast<int>(x->val.cols());
  }
  return make_op(out, xs, [xs](Node& n) {
    int at = 0;
    for (const auto& x : xs) {
      int c = static_cast<int>(x->val.cols());
      if (x->requires_grad) { x->ensure_grad(); x->grad += n.grad.middleCols(at, c); }
      at += c;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& xs) {
  int cols = static_cast<int>(xs.front()->val.cols());
  int rows = 0;
  for (const auto& x : xs) rows += static_cast<int>(x->val.rows());
  Mat out(rows, cols);
  int at = 0;
  for (const auto& x : xs) {
    out.middleRows(at, x->val.rows()) = x->val;
    at += static_cast<int>(x->val.rows());
  }
  return make_op(out, xs, [xs](Node& n) {
    int at = 0;
    for (const auto& x : xs) {
      int r = static_cast<int>(x->val.rows());
      if (x->requires_grad) { x->ensure_grad(); x->grad += n.grad.middleRows(at, r); }
      at += r;
    }
  });
}

inline Var gather_rows(const Var& a, const std::vector<int>& idx) {
  Mat out(static_cast<int>(idx.size()), a->val.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<int>(i)) = a->val.row(idx[i]);
  return make_op(out, {a}, [a, idx](Node& n) {
    a->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i)
      a->grad.row(idx[i]) += n.grad.row(static_cast<int>(i));
  });
}

// ---- reductions ----

inline Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a->val.sum();
  return make_op(out, {a}, [a](Node& n) {
    a->ensure_grad(); a->grad.array() += n.grad(0, 0);
  });
}

inline Var mean(const Var& a) {
  double inv = 1.0 / static_cast<double>(a->val.size());
  Mat out(1, 1);
  out(0, 0) = a->val.sum() * inv;
  return make_op(out, {a}, [a, inv](Node& n) {
    a->ensure_grad(); a->grad.array() += n.grad(0, 0) * inv;
  });
}

// ---- fused ops ----

inline Var softmax_rows(const Var& a) {
  Mat out = a->val;
  for (int i = 0; i < out.rows(); ++i) {
    Eigen::RowVectorXd r = out.row(i);
    double m = r.maxCoeff();
    Eigen::RowVectorXd e = (r.array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return make_op(out, {a}, [a, out](Node& n) {
    a->ensure_grad();
    for (int i = 0; i < out.rows(); ++i) {
      Eigen::RowVectorXd s = out.row(i);
      Eigen::RowVectorXd g = n.grad.row(i);
      double dot = g.cwiseProduct(s).sum();
      a->grad.row(i) += (g.array() - dot).matrix().cwiseProduct(s);
    }
  });
}

inline Var layernorm_rows(const Var& a, const Var& gamma, const Var& beta,
                          double eps = 1e-5) {
  int rows = static_cast<int>(a->val.rows());
  int cols = static_cast<int>(a->val.cols());
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    double mu = a->val.row(i).mean();
    double var = (a->val.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (a->val.row(i).array() - mu) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gamma->val.row(0).array()).rowwise() +
            beta->val.row(0).array();
  return make_op(out, {a, gamma, beta}, [a, gamma, beta, xhat, inv_std](Node& n) {
    int rows = static_cast<int>(xhat.rows());
    int cols = static_cast<int>(xhat.cols());
    if (gamma->requires_grad) {
      gamma->ensure_grad();
      gamma->grad.row(0) += n.grad.cwiseProduct(xhat).colwise().sum();
    }
    if (beta->requires_grad) {
      beta->ensure_grad();
      beta->grad.row(0) += n.grad.colwise().sum();
    }
    if (a->requires_grad) {
      a->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        Eigen::RowVectorXd dy = n.grad.row(i).cwiseProduct(gamma->val.row(0));
        Eigen::RowVectorXd xh = xhat.row(i);
        double m1 = dy.mean();
        double m2 = dy.cwiseProduct(xh).mean();
        a->grad.row(i) +=
            inv_std(i) * (dy.array() - m1 - xh.array() * m2).matrix() *
            1.0;
        (void)cols;
      }
    }
  });
}

// Mean cross-entropy against integer targets, with an ignore id.
// logits: (n, C); targets: length n. Returns 1x1. If every pixel is ignored,
// returns 0 and sets *all_ignored when provided.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets,
                              int ignore_id = -1, bool* all_ignored = nullptr) {
  int n = static_cast<int>(logits->val.rows());
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy_rows: target length mismatch");
  Mat probs = logits->val;
  int kept = 0;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd r = probs.row(i);
    double m = r.maxCoeff();
    Eigen::RowVectorXd e = (r.array() - m).exp();
    probs.row(i) = e / e.sum();
    if (targets[i] == ignore_id) continue;
    ++kept;
    loss -= std::log(std::max(probs(i, targets[i]), 1e-300));
  }
  if (all_ignored) *all_ignored = (kept == 0);
  Mat out(1, 1);
  out(0, 0) = kept > 0 ? loss / kept : 0.0;
  return make_op(out, {logits}, [logits, probs, targets, ignore_id, kept](Node& nd) {
    if (kept == 0) return;
    logits->ensure_grad();
    double g = nd.grad(0, 0) / kept;
    for (int i = 0; i < static_cast<int>(targets.size()); ++i) {
      if (targets[i] == ignore_id) continue;
      logits->grad.row(i) += g * probs.row(i);
      logits->grad(i, targets[i]) -= g;
    }
  });
}

// ---- backward ----

inline void topo_sort(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

// Backpropagate from a scalar root; accumulates into each param's grad.
inline void backward(const Var& root) {
  if (root->val.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_sort(root, order);
  root->ensure_grad();
  root->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

}  // namespace apc::ad
