#pragma once

#include "apc/decoder.hpp"
#include "apc/encoder.hpp"
#include "apc/head_akp.hpp"
#include "apc/nn.hpp"
#include "apc/patchify.hpp"

#include <algorithm>
#include <random>

namespace apc {

struct ModelConfig {
  EncoderConfig enc;
  DecoderConfig dec;
  int n_fg_classes = 3;

  void validate() const {
    enc.validate();
    dec.validate();
    if (n_fg_classes < 1) throw std::invalid_argument("need at least one class");
  }

  // Decoder taps: the last two transformer blocks plus the refined embeddings.
  int n_tap_blocks() const { return std::min(2, enc.depth); }
};

inline void init_model_params(const ModelConfig& cfg, ParamStore& ps,
                              std::mt19937_64& rng) {
  cfg.validate();
  init_encoder_params(cfg.enc, ps, rng);
  DecoderConfig dec = cfg.dec;
  dec.n_levels = cfg.n_tap_blocks() + 1;
  init_decoder_params(dec, cfg.enc.e, cfg.n_fg_classes + 1, ps, rng);
  ps.make("head.w", cfg.enc.e, cfg.n_fg_classes, 0.02, rng);
}

struct ForwardResult {
  EncodeResult enc;
  ad::Var f_out;         // (s, e)
  ad::Var z;             // (s, n_fg_classes), rows are probability vectors
  ad::Var pixel_logits;  // (h*w, n_fg_classes + 1), row-major pixels
};

inline ForwardResult model_forward(const PatchGrid& grid, const ModelConfig& cfg,
                                   const ParamStore& ps,
                                   std::mt19937_64* train_rng = nullptr) {
  ForwardResult out;
  out.enc = encode(grid, cfg.enc, ps, train_rng);
  out.f_out = refine_hv_bilstm(out.enc.f_in, grid.grid_h, grid.grid_w, ps);
  out.z = patch_scores(out.f_out, ps.at("head.w"));
  std::vector<ad::Var> levels;
  for (int i = cfg.enc.depth - cfg.n_tap_blocks(); i < cfg.enc.depth; ++i)
    levels.push_back(out.enc.block_feats[static_cast<size_t>(i)]);
  levels.push_back(out.f_out);
  DecoderConfig dec = cfg.dec;
  dec.n_levels = static_cast<int>(levels.size());
  out.pixel_logits = decode(levels, grid.grid_h, grid.grid_w, grid.d, dec, ps);
  return out;
}

}  // namespace apc
