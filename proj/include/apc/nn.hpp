#pragma once

#include "apc/autodiff.hpp"

#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace apc {

// Named parameter tensors. Ordered map so iteration (init, optimizer step,
// serialization) is deterministic.
struct ParamStore {
  std::map<std::string, ad::Var> params;

  ad::Var make(const std::string& name, int rows, int cols, double stddev,
               std::mt19937_64& rng) {
    ad::Mat m(rows, cols);
    if (stddev == 0.0) {
      m.setZero();
    } else {
      std::normal_distribution<double> dist(0.0, stddev);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    auto v = ad::param(std::move(m));
    params[name] = v;
    return v;
  }

  ad::Var at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::runtime_error("missing parameter: " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, p] : params) p->grad.resize(0, 0);
  }
};

// x (n, in) -> x W + b with W named `name + ".w"`, b `.b`.
inline ad::Var linear(const ad::Var& x, const ParamStore& ps, const std::string& name) {
  return ad::add_rowvec(ad::matmul(x, ps.at(name + ".w")), ps.at(name + ".b"));
}

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int step_count = 0;
  std::map<std::string, ad::Mat> m, v;

  void step(ParamStore& ps, double lr) {
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, step_count);
    double bc2 = 1.0 - std::pow(beta2, step_count);
    for (auto& [name, p] : ps.params) {
      if (p->grad.size() == 0) continue;
      auto& mi = m[name];
      auto& vi = v[name];
      if (mi.size() == 0) mi = ad::Mat::Zero(p->val.rows(), p->val.cols());
      if (vi.size() == 0) vi = ad::Mat::Zero(p->val.rows(), p->val.cols());
      mi = beta1 * mi + (1.0 - beta1) * p->grad;
      vi = beta2 * vi.array() + (1.0 - beta2) * p->grad.array().square();
      p->val.array() -=
          lr * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + eps);
    }
  }
};

}  // namespace apc
