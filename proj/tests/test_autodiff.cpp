#include "apc/autodiff.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace apc;
using apc::testutil::gradcheck;
using apc::testutil::random_mat;

TEST_CASE("elementwise and matmul gradients match finite differences") {
  std::mt19937_64 rng(1);
  auto a = ad::param(random_mat(3, 4, rng));
  auto b = ad::param(random_mat(4, 2, rng));
  auto c = ad::param(random_mat(3, 2, rng));
  auto fwd = [&] {
    auto y = ad::matmul(a, b);
    y = ad::add(y, c);
    y = ad::mul(y, ad::sigmoid(c));
    return ad::mean(ad::tanh_(y));
  };
  CHECK(gradcheck({a, b, c}, fwd, rng) < 1e-6);
}

TEST_CASE("softmax, layernorm, gelu gradients") {
  std::mt19937_64 rng(2);
  auto x = ad::param(random_mat(5, 7, rng));
  auto g = ad::param(random_mat(1, 7, rng, 0.3));
  auto be = ad::param(random_mat(1, 7, rng, 0.3));
  auto fwd = [&] {
    auto y = ad::layernorm_rows(x, g, be);
    y = ad::gelu(y);
    y = ad::softmax_rows(y);
    return ad::mean(ad::mul(y, y));
  };
  CHECK(gradcheck({x, g, be}, fwd, rng) < 1e-5);
}

TEST_CASE("slicing, concat, gather gradients") {
  std::mt19937_64 rng(3);
  auto x = ad::param(random_mat(6, 4, rng));
  auto fwd = [&] {
    auto top = ad::slice_rows(x, 0, 3);
    auto bot = ad::slice_rows(x, 3, 3);
    auto cat = ad::concat_cols({top, bot});
    auto picked = ad::gather_rows(cat, {2, 0, 2});
    return ad::mean(ad::mul(picked, picked));
  };
  CHECK(gradcheck({x}, fwd, rng) < 1e-6);
}

TEST_CASE("cross entropy with ignore index") {
  std::mt19937_64 rng(4);
  auto logits = ad::param(random_mat(6, 3, rng));
  std::vector<int> targets = {0, 1, 2, 255, 1, 255};
  auto fwd = [&] { return ad::cross_entropy_rows(logits, targets, 255); };
  CHECK(gradcheck({logits}, fwd, rng) < 1e-6);

  bool all_ignored = false;
  std::vector<int> ignored(6, 255);
  auto z = ad::cross_entropy_rows(logits, ignored, 255, &all_ignored);
  CHECK(all_ignored);
  CHECK(z->val(0, 0) == 0.0);
}

TEST_CASE("clamp passes gradient only inside the clamp range") {
  auto x = ad::param((ad::Mat(1, 3) << 0.5, 2.0, -1.0).finished());
  auto y = ad::sum(ad::clamp(x, 0.0, 1.0));
  ad::backward(y);
  CHECK(x->grad(0, 0) == 1.0);
  CHECK(x->grad(0, 1) == 0.0);
  CHECK(x->grad(0, 2) == 0.0);
}

TEST_CASE("gradient accumulates over reused subexpressions") {
  auto x = ad::param((ad::Mat(1, 1) << 3.0).finished());
  auto y = ad::mul(x, x);  // x^2, dy/dx = 6
  ad::backward(ad::sum(y));
  CHECK(x->grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar root") {
  auto x = ad::param(ad::Mat::Ones(2, 2));
  CHECK_THROWS_AS(ad::backward(ad::mul(x, x)), std::invalid_argument);
}
