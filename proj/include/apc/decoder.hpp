#pragma once

#include "apc/autodiff.hpp"
#include "apc/nn.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace apc {

struct DecoderConfig {
  // Which feature levels feed the decoder. Levels are indices into the
  // sequence handed to decode(); by convention the model passes the last two
  // transformer blocks plus the refined embeddings.
  int n_levels = 3;
  int proj_dim = 64;
  bool nearest_upsample = false;

  void validate() const {
    if (n_levels < 1) throw std::invalid_argument("decoder needs at least one level");
    if (proj_dim < 1) throw std::invalid_argument("decoder proj_dim must be >= 1");
  }
};

inline void init_decoder_params(const DecoderConfig& cfg, int e, int n_out_classes,
                                ParamStore& ps, std::mt19937_64& rng) {
  cfg.validate();
  const double w0 = 0.02;
  for (int i = 0; i < cfg.n_levels; ++i) {
    ps.make("dec.proj" + std::to_string(i) + ".w", e, cfg.proj_dim, w0, rng);
    ps.make("dec.proj" + std::to_string(i) + ".b", 1, cfg.proj_dim, 0.0, rng);
  }
  ps.make("dec.fuse1.w", cfg.n_levels * cfg.proj_dim, cfg.proj_dim, w0, rng);
  ps.make("dec.fuse1.b", 1, cfg.proj_dim, 0.0, rng);
  ps.make("dec.fuse2.w", cfg.proj_dim, n_out_classes, w0, rng);
  ps.make("dec.fuse2.b", 1, n_out_classes, 0.0, rng);
}

namespace detail {

// Upsampling as a fixed linear map: (grid_h*d * grid_w*d, s) interpolation
// weights applied to per-patch logits. Cached per geometry.
inline ad::Var upsample_matrix(int grid_h, int grid_w, int d, bool nearest) {
  static std::map<std::tuple<int, int, int, bool>, ad::Var> cache;
  auto key = std::make_tuple(grid_h, grid_w, d, nearest);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  int h = grid_h * d, w = grid_w * d, s = grid_h * grid_w;
  ad::Mat u = ad::Mat::Zero(static_cast<long>(h) * w, s);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long row = static_cast<long>(y) * w + x;
      if (nearest) {
        u(row, (y / d) * grid_w + (x / d)) = 1.0;
        continue;
      }
      double gy = (y + 0.5) / d - 0.5;
      double gx = (x + 0.5) / d - 0.5;
      gy = std::min(std::max(gy, 0.0), static_cast<double>(grid_h - 1));
      gx = std::min(std::max(gx, 0.0), static_cast<double>(grid_w - 1));
      int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
      int y1 = std::min(y0 + 1, grid_h - 1), x1 = std::min(x0 + 1, grid_w - 1);
      double fy = gy - y0, fx = gx - x0;
      u(row, y0 * grid_w + x0) += (1 - fy) * (1 - fx);
      u(row, y0 * grid_w + x1) += (1 - fy) * fx;
      u(row, y1 * grid_w + x0) += fy * (1 - fx);
      u(row, y1 * grid_w + x1) += fy * fx;
    }
  // Constant nodes carry no gradient state, so one shared instance can appear
  // in many graphs.
  return cache.emplace(key, ad::constant(std::move(u))).first->second;
}

}  // namespace detail

// Multi-level MLP decoder: per-level projection, concat, fusion MLP to
// per-patch logits, then spatial upsampling to pixel logits
// (grid_h*d * grid_w*d rows, row-major; n_out_classes columns).
inline ad::Var decode(const std::vector<ad::Var>& levels, int grid_h, int grid_w,
                      int d, const DecoderConfig& cfg, const ParamStore& ps) {
  cfg.validate();
  if (static_cast<int>(levels.size()) != cfg.n_levels)
    throw std::invalid_argument("decode: expected " + std::to_string(cfg.n_levels) +
                                " feature levels, got " + std::to_string(levels.size()));
  int s = grid_h * grid_w;
  std::vector<ad::Var> projected;
  projected.reserve(levels.size());
  for (size_t i = 0; i < levels.size(); ++i) {
    if (levels[i]->val.rows() != s)
      throw std::invalid_argument("decode: level row count does not match grid");
    projected.push_back(
        ad::relu(linear(levels[i], ps, "dec.proj" + std::to_string(i))));
  }
  ad::Var fused = ad::relu(linear(ad::concat_cols(projected), ps, "dec.fuse1"));
  ad::Var patch_logits = linear(fused, ps, "dec.fuse2");
  return ad::matmul(detail::upsample_matrix(grid_h, grid_w, d, cfg.nearest_upsample),
                    patch_logits);
}

}  // namespace apc
