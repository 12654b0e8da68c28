#include "apc/patchify.hpp"

#include <doctest.h>

#include <map>
#include <random>

using namespace apc;

namespace {
ImageTensor random_image(int h, int w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img = ImageTensor::zeros(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.r(y, x) = u(rng);
      img.g(y, x) = u(rng);
      img.b(y, x) = u(rng);
    }
  return img;
}
}  // namespace

TEST_CASE("partition grid arithmetic") {
  auto img = random_image(384, 384, 1);
  auto grid = partition(img, 16);
  CHECK(grid.grid_h == 24);
  CHECK(grid.grid_w == 24);
  CHECK(grid.count() == 576);

  auto small = partition(random_image(32, 32, 2), 16);
  CHECK(small.grid_h == 2);
  CHECK(small.grid_w == 2);
  CHECK(small.count() == 4);
}

TEST_CASE("partition rejects non-divisible dimensions, naming h, w, d") {
  auto img = random_image(33, 32, 3);
  try {
    partition(img, 16);
    FAIL("expected dimension-mismatch error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("33") != std::string::npos);
    CHECK(msg.find("32") != std::string::npos);
    CHECK(msg.find("16") != std::string::npos);
  }
}

TEST_CASE("partition then reassemble is the identity, bit-exact") {
  for (int d : {4, 8, 16}) {
    auto img = random_image(48, 32, 100 + static_cast<uint64_t>(d));
    auto back = reassemble(partition(img, d));
    CHECK(back.r == img.r);
    CHECK(back.g == img.g);
    CHECK(back.b == img.b);
  }
}

TEST_CASE("single patch mask replication") {
  auto mask = patch_labels_to_pixel_mask({3}, 1, 1, 4);
  CHECK(mask.classes.rows() == 4);
  CHECK(mask.classes.cols() == 4);
  CHECK((mask.classes.array() == 3).all());
}

TEST_CASE("2x2 block checkerboard") {
  auto mask = patch_labels_to_pixel_mask({0, 1, 1, 0}, 2, 2, 2);
  Eigen::MatrixXi expect(4, 4);
  expect << 0, 0, 1, 1,
            0, 0, 1, 1,
            1, 1, 0, 0,
            1, 1, 0, 0;
  CHECK(mask.classes == expect);
}

TEST_CASE("mask mapping matches a per-pixel brute-force oracle") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cls(0, 3);
  int gh = 6, gw = 6, d = 8;
  std::vector<int> labels(static_cast<size_t>(gh * gw));
  for (auto& l : labels) l = cls(rng);
  auto mask = patch_labels_to_pixel_mask(labels, gh, gw, d);
  // oracle: every pixel looks up its containing patch independently
  for (int y = 0; y < gh * d; ++y)
    for (int x = 0; x < gw * d; ++x) {
      int patch = (y / d) * gw + (x / d);
      REQUIRE(mask.classes(y, x) == labels[static_cast<size_t>(patch)]);
    }
}

TEST_CASE("each labeled patch contributes exactly d^2 pixels of its class") {
  std::vector<int> labels = {1, 2, 2, 1, 0, 2};
  int d = 3;
  auto mask = patch_labels_to_pixel_mask(labels, 2, 3, d);
  std::map<int, int> counts;
  for (int y = 0; y < mask.classes.rows(); ++y)
    for (int x = 0; x < mask.classes.cols(); ++x) ++counts[mask.classes(y, x)];
  CHECK(counts[0] == d * d);
  CHECK(counts[1] == 2 * d * d);
  CHECK(counts[2] == 3 * d * d);
}

TEST_CASE("label length mismatch") {
  CHECK_THROWS_AS(patch_labels_to_pixel_mask({1, 2}, 2, 2, 4), std::invalid_argument);
}

TEST_CASE("fit_to_patch_grid resizes to the nearest multiple of d") {
  auto img = random_image(33, 32, 9);
  bool resized = false;
  auto fitted = fit_to_patch_grid(img, 16, &resized);
  CHECK(resized);
  CHECK(fitted.height() == 32);
  CHECK(fitted.width() == 32);
  bool untouched = true;
  auto same = fit_to_patch_grid(fitted, 16, &untouched);
  CHECK_FALSE(untouched);
}
