#pragma once

#include "apc/image.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace apc {

// Row-major grid of non-overlapping d x d patches.
struct PatchGrid {
  std::vector<ImageTensor> patches;  // each (d, d, 3)
  int grid_h = 0, grid_w = 0, d = 0;

  int count() const { return grid_h * grid_w; }
};

inline PatchGrid partition(const ImageTensor& image, int d) {
  int h = image.height(), w = image.width();
  if (d <= 0 || h % d != 0 || w % d != 0)
    throw std::invalid_argument("partition: image " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by patch side " +
                                std::to_string(d));
  PatchGrid grid;
  grid.grid_h = h / d;
  grid.grid_w = w / d;
  grid.d = d;
  grid.patches.reserve(static_cast<size_t>(grid.count()));
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx) {
      ImageTensor p;
      p.r = image.r.block(gy * d, gx * d, d, d);
      p.g = image.g.block(gy * d, gx * d, d, d);
      p.b = image.b.block(gy * d, gx * d, d, d);
      grid.patches.push_back(std::move(p));
    }
  return grid;
}

// Inverse of partition; bit-exact.
inline ImageTensor reassemble(const PatchGrid& grid) {
  int d = grid.d;
  ImageTensor img = ImageTensor::zeros(grid.grid_h * d, grid.grid_w * d);
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx) {
      const ImageTensor& p = grid.patches[static_cast<size_t>(gy) * grid.grid_w + gx];
      img.r.block(gy * d, gx * d, d, d) = p.r;
      img.g.block(gy * d, gx * d, d, d) = p.g;
      img.b.block(gy * d, gx * d, d, d) = p.b;
    }
  return img;
}

inline SegMask patch_labels_to_pixel_mask(const std::vector<int>& patch_classes,
                                          int grid_h, int grid_w, int d) {
  if (static_cast<int>(patch_classes.size()) != grid_h * grid_w)
    throw std::invalid_argument(
        "patch_labels_to_pixel_mask: expected " + std::to_string(grid_h * grid_w) +
        " patch labels, got " + std::to_string(patch_classes.size()));
  SegMask mask;
  mask.classes.resize(grid_h * d, grid_w * d);
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx)
      mask.classes.block(gy * d, gx * d, d, d)
          .setConstant(patch_classes[static_cast<size_t>(gy) * grid_w + gx]);
  return mask;
}

// Resize to the nearest multiple of d (bilinear) when needed; used at
// inference for inputs the patch grid cannot cover exactly.
inline ImageTensor fit_to_patch_grid(const ImageTensor& image, int d, bool* resized = nullptr) {
  int h = image.height(), w = image.width();
  auto round_to = [d](int v) { return std::max(d, ((v + d / 2) / d) * d); };
  int nh = round_to(h), nw = round_to(w);
  if (resized) *resized = (nh != h || nw != w);
  if (nh == h && nw == w) return image;
  return resize_bilinear(image, nh, nw);
}

}  // namespace apc
