#pragma once

#include "apc/autodiff.hpp"
#include "apc/nn.hpp"
#include "apc/patchify.hpp"

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace apc {

struct EncoderConfig {
  int depth = 4;
  int heads = 4;
  int e = 192;   // embedding width
  int d = 16;    // patch side
  int grid_h = 6;
  int grid_w = 6;
  double dropout = 0.0;
  bool pos_embeddings = true;
  uint64_t seed = 0;

  int tokens() const { return grid_h * grid_w; }

  void validate() const {
    if (depth < 1) throw std::invalid_argument("encoder depth must be >= 1");
    if (heads < 1 || e % heads != 0)
      throw std::invalid_argument("encoder heads must divide embedding width");
    if (e % 2 != 0) throw std::invalid_argument("embedding width must be even");
  }
};

inline void init_encoder_params(const EncoderConfig& cfg, ParamStore& ps,
                                std::mt19937_64& rng) {
  cfg.validate();
  const double w0 = 0.02;
  ps.make("embed.w", 3 * cfg.d * cfg.d, cfg.e, w0, rng);
  ps.make("embed.b", 1, cfg.e, 0.0, rng);
  ps.make("pos", cfg.tokens(), cfg.e, w0, rng);
  for (int i = 0; i < cfg.depth; ++i) {
    std::string b = "blk" + std::to_string(i) + ".";
    ps.make(b + "ln1.g", 1, cfg.e, 0.0, rng)->val.setConstant(1.0);
    ps.make(b + "ln1.b", 1, cfg.e, 0.0, rng);
    for (const char* p : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      ps.make(b + p + ".w", cfg.e, cfg.e, w0, rng);
      ps.make(b + p + ".b", 1, cfg.e, 0.0, rng);
    }
    ps.make(b + "ln2.g", 1, cfg.e, 0.0, rng)->val.setConstant(1.0);
    ps.make(b + "ln2.b", 1, cfg.e, 0.0, rng);
    ps.make(b + "mlp.fc1.w", cfg.e, 4 * cfg.e, w0, rng);
    ps.make(b + "mlp.fc1.b", 1, 4 * cfg.e, 0.0, rng);
    ps.make(b + "mlp.fc2.w", 4 * cfg.e, cfg.e, w0, rng);
    ps.make(b + "mlp.fc2.b", 1, cfg.e, 0.0, rng);
  }
  int hdim = cfg.e / 2;
  for (const char* dir : {"hf", "hb", "vf", "vb"}) {
    std::string b = std::string("lstm.") + dir + ".";
    ps.make(b + "wx", cfg.e, 4 * hdim, w0, rng);
    ps.make(b + "wh", hdim, 4 * hdim, w0, rng);
    ps.make(b + "b", 1, 4 * hdim, 0.0, rng);
  }
  ps.make("hv.proj.w", cfg.e, cfg.e, w0, rng);
  ps.make("hv.proj.b", 1, cfg.e, 0.0, rng);
}

// Flatten a patch to a row vector: pixel-major, rgb interleaved.
inline Eigen::RowVectorXd flatten_patch(const ImageTensor& p) {
  int d = p.height();
  Eigen::RowVectorXd v(3 * d * d);
  int at = 0;
  for (int y = 0; y < d; ++y)
    for (int x = 0; x < d; ++x) {
      v(at++) = p.r(y, x);
      v(at++) = p.g(y, x);
      v(at++) = p.b(y, x);
    }
  return v;
}

inline ad::Var patch_matrix(const PatchGrid& grid) {
  int s = grid.count();
  ad::Mat m(s, 3 * grid.d * grid.d);
  for (int i = 0; i < s; ++i) m.row(i) = flatten_patch(grid.patches[static_cast<size_t>(i)]);
  return ad::constant(std::move(m));
}

namespace detail {

inline ad::Var dropout(const ad::Var& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  ad::Mat mask(x->val.rows(), x->val.cols());
  std::bernoulli_distribution keep(1.0 - rate);
  for (int i = 0; i < mask.rows(); ++i)
    for (int j = 0; j < mask.cols(); ++j)
      mask(i, j) = keep(*rng) ? 1.0 / (1.0 - rate) : 0.0;
  return ad::mul(x, ad::constant(std::move(mask)));
}

inline ad::Var attention(const ad::Var& x, const EncoderConfig& cfg,
                         const ParamStore& ps, const std::string& b) {
  ad::Var q = linear(x, ps, b + "attn.q");
  ad::Var k = linear(x, ps, b + "attn.k");
  ad::Var v = linear(x, ps, b + "attn.v");
  int dh = cfg.e / cfg.heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, dh);
    ad::Var kh = ad::slice_cols(k, h * dh, dh);
    ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    heads.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  return linear(ad::concat_cols(heads), ps, b + "attn.o");
}

// One bidirectional LSTM sweep. xs[t] is the (batch, e) input at step t;
// returns per-step (batch, e) outputs, forward and backward halves concatenated.
inline std::vector<ad::Var> bilstm_sweep(const std::vector<ad::Var>& xs,
                                         const ParamStore& ps,
                                         const std::string& fwd_name,
                                         const std::string& bwd_name) {
  int steps = static_cast<int>(xs.size());
  int batch = static_cast<int>(xs[0]->val.rows());
  int hdim = static_cast<int>(ps.at(fwd_name + ".wh")->val.rows());
  auto run = [&](const std::string& nm, bool reverse) {
    ad::Var wx = ps.at(nm + ".wx");
    ad::Var wh = ps.at(nm + ".wh");
    ad::Var bias = ps.at(nm + ".b");
    ad::Var h = ad::constant(ad::Mat::Zero(batch, hdim));
    ad::Var c = ad::constant(ad::Mat::Zero(batch, hdim));
    std::vector<ad::Var> out(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
      int t = reverse ? steps - 1 - i : i;
      ad::Var gates = ad::add_rowvec(
          ad::add(ad::matmul(xs[static_cast<size_t>(t)], wx), ad::matmul(h, wh)), bias);
      ad::Var ig = ad::sigmoid(ad::slice_cols(gates, 0, hdim));
      ad::Var fg = ad::sigmoid(ad::slice_cols(gates, hdim, hdim));
      ad::Var gg = ad::tanh_(ad::slice_cols(gates, 2 * hdim, hdim));
      ad::Var og = ad::sigmoid(ad::slice_cols(gates, 3 * hdim, hdim));
      c = ad::add(ad::mul(fg, c), ad::mul(ig, gg));
      h = ad::mul(og, ad::tanh_(c));
      out[static_cast<size_t>(t)] = h;
    }
    return out;
  };
  auto f = run(fwd_name, false);
  auto b = run(bwd_name, true);
  std::vector<ad::Var> out;
  out.reserve(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t)
    out.push_back(ad::concat_cols({f[static_cast<size_t>(t)], b[static_cast<size_t>(t)]}));
  return out;
}

}  // namespace detail

struct EncodeResult {
  ad::Var f_in;                       // (s, e)
  std::vector<ad::Var> block_feats;   // per transformer block, each (s, e)
};

// ViT-style encoder over the patch grid. Deterministic in eval mode
// (train_rng == nullptr disables dropout).
inline EncodeResult encode(const PatchGrid& grid, const EncoderConfig& cfg,
                           const ParamStore& ps, std::mt19937_64* train_rng = nullptr) {
  cfg.validate();
  if (!grid.patches.empty() && grid.d != cfg.d)
    throw std::invalid_argument("encode: patch side does not match config");
  ad::Var x = patch_matrix(grid);
  if (x->val.cols() != ps.at("embed.w")->val.rows())
    throw std::invalid_argument("encode: params shaped for a different patch side");
  ad::Var tok = linear(x, ps, "embed");
  if (cfg.pos_embeddings) {
    if (ps.at("pos")->val.rows() != tok->val.rows())
      throw std::invalid_argument("encode: positional embedding sized for a different grid");
    tok = ad::add(tok, ps.at("pos"));
  }
  EncodeResult res;
  for (int i = 0; i < cfg.depth; ++i) {
    std::string b = "blk" + std::to_string(i) + ".";
    ad::Var a = detail::attention(
        ad::layernorm_rows(tok, ps.at(b + "ln1.g"), ps.at(b + "ln1.b")), cfg, ps, b);
    tok = ad::add(tok, detail::dropout(a, cfg.dropout, train_rng));
    ad::Var m = linear(
        ad::gelu(linear(ad::layernorm_rows(tok, ps.at(b + "ln2.g"), ps.at(b + "ln2.b")),
                        ps, b + "mlp.fc1")),
        ps, b + "mlp.fc2");
    tok = ad::add(tok, detail::dropout(m, cfg.dropout, train_rng));
    res.block_feats.push_back(tok);
  }
  res.f_in = tok;
  return res;
}

// Horizontal then vertical bidirectional recurrent refinement over the patch
// grid; outputs are summed, projected, and added residually to the input.
inline ad::Var refine_hv_bilstm(const ad::Var& f_in, int grid_h, int grid_w,
                                const ParamStore& ps) {
  int s = static_cast<int>(f_in->val.rows());
  if (s != grid_h * grid_w)
    throw std::invalid_argument("refine_hv_bilstm: grid dims do not match row count");

  // Horizontal: sequence index = grid column, batch = grid rows.
  std::vector<ad::Var> hx(static_cast<size_t>(grid_w));
  for (int t = 0; t < grid_w; ++t) {
    std::vector<int> idx(static_cast<size_t>(grid_h));
    for (int gy = 0; gy < grid_h; ++gy) idx[static_cast<size_t>(gy)] = gy * grid_w + t;
    hx[static_cast<size_t>(t)] = ad::gather_rows(f_in, idx);
  }
  auto hout = detail::bilstm_sweep(hx, ps, "lstm.hf", "lstm.hb");
  // Rows of concat(hout) are ordered (t, gy); permute back to row-major (gy, t).
  ad::Var hcat = ad::concat_rows(hout);
  std::vector<int> perm(static_cast<size_t>(s));
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx)
      perm[static_cast<size_t>(gy) * grid_w + gx] = gx * grid_h + gy;
  ad::Var horiz = ad::gather_rows(hcat, perm);

  // Vertical: sequence index = grid row, batch = grid columns.
  std::vector<ad::Var> vx(static_cast<size_t>(grid_h));
  for (int t = 0; t < grid_h; ++t)
    vx[static_cast<size_t>(t)] = ad::slice_rows(f_in, t * grid_w, grid_w);
  auto vout = detail::bilstm_sweep(vx, ps, "lstm.vf", "lstm.vb");
  ad::Var vert = ad::concat_rows(vout);

  ad::Var fused = linear(ad::add(horiz, vert), ps, "hv.proj");
  return ad::add(f_in, fused);
}

}  // namespace apc
