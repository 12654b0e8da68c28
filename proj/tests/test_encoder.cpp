#include "apc/encoder.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace apc;

namespace {

PatchGrid random_grid(int gh, int gw, int d, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img = ImageTensor::zeros(gh * d, gw * d);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      img.r(y, x) = u(rng);
      img.g(y, x) = u(rng);
      img.b(y, x) = u(rng);
    }
  return partition(img, d);
}

}  // namespace

TEST_CASE("encode shape contract") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.e = 8;
  cfg.d = 4;
  cfg.grid_h = cfg.grid_w = 2;
  ParamStore ps;
  std::mt19937_64 rng(1);
  init_encoder_params(cfg, ps, rng);
  auto res = encode(random_grid(2, 2, 4, 2), cfg, ps);
  CHECK(res.f_in->val.rows() == 4);
  CHECK(res.f_in->val.cols() == 8);
  CHECK(res.block_feats.size() == 1);
}

TEST_CASE("attention is permutation equivariant with positional encoding off") {
  EncoderConfig cfg;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.e = 12;
  cfg.d = 4;
  cfg.grid_h = cfg.grid_w = 2;
  cfg.pos_embeddings = false;
  ParamStore ps;
  std::mt19937_64 rng(3);
  init_encoder_params(cfg, ps, rng);

  PatchGrid grid = random_grid(2, 2, 4, 4);
  auto base = encode(grid, cfg, ps);

  PatchGrid permuted = grid;
  std::vector<int> perm = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    permuted.patches[static_cast<size_t>(i)] =
        grid.patches[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  auto out = encode(permuted, cfg, ps);
  for (int i = 0; i < 4; ++i) {
    auto diff = (out.f_in->val.row(i) -
                 base.f_in->val.row(perm[static_cast<size_t>(i)]))
                    .cwiseAbs()
                    .maxCoeff();
    CHECK(diff < 1e-10);
  }
}

TEST_CASE("encode is deterministic in eval mode") {
  EncoderConfig cfg;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.e = 8;
  cfg.d = 4;
  cfg.grid_h = cfg.grid_w = 3;
  cfg.dropout = 0.25;  // must not fire in eval mode
  ParamStore ps;
  std::mt19937_64 rng(5);
  init_encoder_params(cfg, ps, rng);
  PatchGrid grid = random_grid(3, 3, 4, 6);
  auto a = encode(grid, cfg, ps, nullptr);
  auto b = encode(grid, cfg, ps, nullptr);
  CHECK(a.f_in->val == b.f_in->val);
}

TEST_CASE("shape mismatch between params and config raises") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.e = 8;
  cfg.d = 4;
  cfg.grid_h = cfg.grid_w = 2;
  ParamStore ps;
  std::mt19937_64 rng(7);
  init_encoder_params(cfg, ps, rng);
  CHECK_THROWS_AS(encode(random_grid(2, 2, 8, 8), cfg, ps), std::invalid_argument);
  EncoderConfig other = cfg;
  other.d = 8;
  CHECK_THROWS_AS(encode(random_grid(2, 2, 8, 8), other, ps), std::invalid_argument);
}

TEST_CASE("refine preserves shape across grid dims") {
  for (auto [gh, gw] : {std::pair{1, 1}, {2, 5}, {4, 4}}) {
    EncoderConfig cfg;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.e = 8;
    cfg.d = 2;
    cfg.grid_h = gh;
    cfg.grid_w = gw;
    ParamStore ps;
    std::mt19937_64 rng(9);
    init_encoder_params(cfg, ps, rng);
    auto f_in = ad::constant(testutil::random_mat(gh * gw, 8, rng));
    auto f_out = refine_hv_bilstm(f_in, gh, gw, ps);
    CHECK(f_out->val.rows() == gh * gw);
    CHECK(f_out->val.cols() == 8);
  }
}

TEST_CASE("full-scale shape: 576x192 with a 24x24 grid") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 4;
  cfg.e = 192;
  cfg.d = 16;
  cfg.grid_h = cfg.grid_w = 24;
  ParamStore ps;
  std::mt19937_64 rng(10);
  init_encoder_params(cfg, ps, rng);
  auto f_in = ad::constant(testutil::random_mat(576, 192, rng, 0.1));
  auto f_out = refine_hv_bilstm(f_in, 24, 24, ps);
  CHECK(f_out->val.rows() == 576);
  CHECK(f_out->val.cols() == 192);
}

TEST_CASE("grid mismatch raises") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.e = 8;
  cfg.d = 2;
  cfg.grid_h = cfg.grid_w = 2;
  ParamStore ps;
  std::mt19937_64 rng(11);
  init_encoder_params(cfg, ps, rng);
  auto f_in = ad::constant(testutil::random_mat(4, 8, rng));
  CHECK_THROWS_AS(refine_hv_bilstm(f_in, 3, 2, ps), std::invalid_argument);
}

TEST_CASE("zero recurrent weights with identity projection give F_out = F_in") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.e = 8;
  cfg.d = 2;
  cfg.grid_h = cfg.grid_w = 3;
  ParamStore ps;
  std::mt19937_64 rng(12);
  init_encoder_params(cfg, ps, rng);
  for (const char* dir : {"hf", "hb", "vf", "vb"}) {
    ps.at(std::string("lstm.") + dir + ".wx")->val.setZero();
    ps.at(std::string("lstm.") + dir + ".wh")->val.setZero();
    ps.at(std::string("lstm.") + dir + ".b")->val.setZero();
  }
  ps.at("hv.proj.w")->val = ad::Mat::Identity(8, 8);
  ps.at("hv.proj.b")->val.setZero();
  auto f_in = ad::constant(testutil::random_mat(9, 8, rng));
  auto f_out = refine_hv_bilstm(f_in, 3, 3, ps);
  CHECK(f_out->val == f_in->val);
}

TEST_CASE("1x1 grid equals a single recurrent step") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.e = 4;
  cfg.d = 2;
  cfg.grid_h = cfg.grid_w = 1;
  ParamStore ps;
  std::mt19937_64 rng(13);
  init_encoder_params(cfg, ps, rng);
  auto f_in = ad::constant(testutil::random_mat(1, 4, rng));
  auto f_out = refine_hv_bilstm(f_in, 1, 1, ps);
  CHECK(f_out->val.rows() == 1);
  CHECK(f_out->val.cols() == 4);

  // manual single LSTM step per direction, summed, projected, residual
  int hdim = 2;
  auto cell = [&](const std::string& dir) {
    Eigen::RowVectorXd gates =
        f_in->val.row(0) * ps.at("lstm." + dir + ".wx")->val +
        ps.at("lstm." + dir + ".b")->val.row(0);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    Eigen::RowVectorXd h(hdim);
    for (int j = 0; j < hdim; ++j) {
      double i = sig(gates(j)), g = std::tanh(gates(2 * hdim + j)),
             o = sig(gates(3 * hdim + j));
      h(j) = o * std::tanh(i * g);
    }
    return h;
  };
  Eigen::RowVectorXd horiz(4), vert(4);
  horiz << cell("hf"), cell("hb");
  vert << cell("vf"), cell("vb");
  Eigen::RowVectorXd expect =
      f_in->val.row(0) +
      (horiz + vert) * ps.at("hv.proj.w")->val + ps.at("hv.proj.b")->val.row(0);
  CHECK((f_out->val.row(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode-refine gradient matches finite differences") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.e = 6;
  cfg.d = 2;
  cfg.grid_h = cfg.grid_w = 2;
  ParamStore ps;
  std::mt19937_64 rng(14);
  init_encoder_params(cfg, ps, rng);
  PatchGrid grid = random_grid(2, 2, 2, 15);
  auto probe = ad::constant(testutil::random_mat(4, 6, rng, 0.5));
  auto fwd = [&] {
    auto res = encode(grid, cfg, ps);
    auto f_out = refine_hv_bilstm(res.f_in, 2, 2, ps);
    return ad::mean(ad::mul(f_out, probe));
  };
  std::vector<ad::Var> all;
  for (auto& [name, p] : ps.params) all.push_back(p);
  CHECK(testutil::gradcheck(all, fwd, rng, 1e-6, 8) < 1e-4);
}
