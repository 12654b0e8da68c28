#include "apc/checkpoint.hpp"
#include "apc/train_eval.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <unistd.h>

using namespace apc;

namespace {

// small model + data so each training run takes a couple of seconds
ModelConfig tiny_model(int n_classes = 3) {
  ModelConfig mc;
  mc.enc.depth = 1;
  mc.enc.heads = 2;
  mc.enc.e = 16;
  mc.enc.d = 16;
  mc.enc.grid_h = mc.enc.grid_w = 3;
  mc.dec.proj_dim = 8;
  mc.n_fg_classes = n_classes;
  return mc;
}

Dataset tiny_data(int n, uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n_images = n;
  cfg.image_size = 48;
  cfg.seed = seed;
  return gen_synthetic(cfg);
}

SegMask make_mask(std::initializer_list<std::initializer_list<int>> rows) {
  SegMask m;
  int h = static_cast<int>(rows.size());
  int w = static_cast<int>(rows.begin()->size());
  m.classes.resize(h, w);
  int y = 0;
  for (auto& r : rows) {
    int x = 0;
    for (int v : r) m.classes(y, x++) = v;
    ++y;
  }
  return m;
}

}  // namespace

TEST_CASE("miou worked examples") {
  auto gt = make_mask({{1, 1}, {1, 1}});
  CHECK(evaluate_miou({gt}, {gt}, 2).miou == doctest::Approx(1.0));

  // disjoint single-class masks: IoU 0 for that class
  auto a = make_mask({{1, 0}, {0, 0}});
  auto b = make_mask({{0, 0}, {0, 1}});
  auto rep = evaluate_miou({a}, {b}, 2);
  CHECK(rep.per_class_iou[1] == doctest::Approx(0.0));

  // class 1 covers left half in GT, top half in prediction: IoU = 4/12
  SegMask gt2, pred2;
  gt2.classes = Eigen::MatrixXi::Zero(4, 4);
  gt2.classes.leftCols(2).setConstant(1);
  pred2.classes = Eigen::MatrixXi::Zero(4, 4);
  pred2.classes.topRows(2).setConstant(1);
  auto rep2 = evaluate_miou({pred2}, {gt2}, 2);
  CHECK(rep2.per_class_iou[1] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("miou matches the per-pixel confusion-matrix oracle") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 16), cls(0, 3);
  for (int t = 0; t < 1000; ++t) {
    int h = dim(rng), w = dim(rng);
    SegMask pred, gt;
    pred.classes.resize(h, w);
    gt.classes.resize(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        pred.classes(y, x) = cls(rng);
        gt.classes(y, x) = cls(rng);
      }
    auto rep = evaluate_miou({pred}, {gt}, 4);

    // oracle: literal per-pixel counting per class
    double sum = 0;
    int present = 0;
    for (int c = 0; c < 4; ++c) {
      long inter = 0, uni = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool in_p = pred.classes(y, x) == c, in_g = gt.classes(y, x) == c;
          if (in_p && in_g) ++inter;
          if (in_p || in_g) ++uni;
        }
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++present;
    }
    double oracle = present ? sum / present : 0.0;
    REQUIRE(rep.miou == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("miou shape mismatch raises") {
  auto a = make_mask({{0, 0}});
  auto b = make_mask({{0}, {0}});
  CHECK_THROWS_AS(evaluate_miou({a}, {b}, 2), std::invalid_argument);
}

TEST_CASE("a few epochs reduce the training loss in most seeds") {
  int improved = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Dataset ds = tiny_data(12, seed);
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.batch_size = 4;
    tc.seed = seed;
    tc.eval_every = 0;
    TrainResult res = train(ds, Dataset{}, tiny_model(), tc);
    if (res.report.epochs.back().mean_loss < res.report.epochs.front().mean_loss)
      ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("training is deterministic under a fixed seed") {
  Dataset ds = tiny_data(8, 11);
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 4;
  tc.seed = 42;
  tc.eval_every = 0;
  auto a = train(ds, Dataset{}, tiny_model(), tc);
  auto b = train(ds, Dataset{}, tiny_model(), tc);
  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (size_t i = 0; i < a.report.epochs.size(); ++i)
    CHECK(a.report.epochs[i].mean_loss == b.report.epochs[i].mean_loss);
  for (const auto& [name, p] : a.params.params)
    CHECK(p->val == b.params.at(name)->val);
}

TEST_CASE("pcl disabled equals lambda2 = 0 trajectories") {
  Dataset ds = tiny_data(6, 13);
  TrainConfig off;
  off.max_epochs = 1;
  off.batch_size = 3;
  off.eval_every = 0;
  off.pcl_enabled = false;
  TrainConfig zero = off;
  zero.pcl_enabled = true;
  zero.weights.lambda2 = 0.0;
  auto a = train(ds, Dataset{}, tiny_model(), off);
  auto b = train(ds, Dataset{}, tiny_model(), zero);
  // identical losses: with lambda2 = 0 the PCE terms contribute exactly 0
  CHECK(a.report.epochs[0].mean_loss ==
        doctest::Approx(b.report.epochs[0].mean_loss).epsilon(1e-12));
}

TEST_CASE("training never reads the ground-truth masks") {
  Dataset ds = tiny_data(6, 17);
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 3;
  tc.eval_every = 0;  // no eval: nothing may touch gt
  train(ds, Dataset{}, tiny_model(), tc);
  for (const auto& s : ds.samples) CHECK_FALSE(s.gt_accessed);
}

TEST_CASE("range invariants hold during a short run") {
  Dataset ds = tiny_data(8, 19);
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 4;
  tc.eval_every = 0;
  auto res = train(ds, Dataset{}, tiny_model(), tc);
  CHECK(res.report.z_rowsum_violations == 0);
  CHECK(res.report.y_range_violations == 0);
}

TEST_CASE("checkpoint save/load round-trips parameters and config") {
  Dataset ds = tiny_data(4, 23);
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 2;
  tc.eval_every = 0;
  auto res = train(ds, Dataset{}, tiny_model(), tc);

  auto path = std::filesystem::temp_directory_path() /
              ("apc_ckpt_" + std::to_string(::getpid()) + ".apc");
  save_checkpoint(path.string(), res.model_cfg, res.params);
  ParamStore loaded;
  ModelConfig mc = load_checkpoint(path.string(), loaded);
  std::filesystem::remove(path);
  CHECK(mc.enc.e == res.model_cfg.enc.e);
  CHECK(mc.n_fg_classes == res.model_cfg.n_fg_classes);
  REQUIRE(loaded.params.size() == res.params.params.size());
  for (const auto& [name, p] : res.params.params)
    CHECK(loaded.at(name)->val == p->val);

  // loaded model evaluates identically
  TrainConfig ec;
  auto a = evaluate_model(ds, res.model_cfg, res.params, ec);
  auto b = evaluate_model(ds, mc, loaded, ec);
  CHECK(a.miou == b.miou);
}

TEST_CASE("heatmap interpolates the Z column of the requested class") {
  Dataset ds = tiny_data(1, 29);
  ModelConfig mc = tiny_model();
  ParamStore ps;
  std::mt19937_64 rng(1);
  init_model_params(mc, ps, rng);
  const Sample& s = ds.samples[0];

  Eigen::MatrixXd map = heatmap(s, mc, ps, 1);
  CHECK(map.rows() == s.image.height());
  CHECK(map.cols() == s.image.width());

  PatchGrid grid = partition(s.image, mc.enc.d);
  ForwardResult fwd = model_forward(grid, mc, ps);
  Eigen::VectorXd col(grid.grid_h * grid.grid_w);
  for (int p = 0; p < col.size(); ++p) col(p) = fwd.z->val(p, 1);
  // bilinear output is a convex combination of the patch values
  CHECK(map.minCoeff() >= col.minCoeff() - 1e-12);
  CHECK(map.maxCoeff() <= col.maxCoeff() + 1e-12);
  // near each patch center, interpolation weight on neighbors is ~6%
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx) {
      double v = map(gy * mc.enc.d + mc.enc.d / 2, gx * mc.enc.d + mc.enc.d / 2);
      double z = col(gy * grid.grid_w + gx);
      CHECK(std::abs(v - z) < 0.07 * (col.maxCoeff() - col.minCoeff()) + 1e-12);
    }
  CHECK_THROWS_AS(heatmap(s, mc, ps, 7), std::invalid_argument);
}

TEST_CASE("invalid train configs are rejected") {
  TrainConfig tc;
  tc.theta = -1;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.eps = 0.4;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("cosine stats on constructed embeddings") {
  // all identical embeddings -> intra distance 0
  // use the analytic pieces directly: two classes, two identical members each,
  // cross-class orthogonal -> intra 0, inter 1
  // (exercised through cosine_similarity; cosine_distance_stats needs a model,
  // covered by the acceptance suite)
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  CHECK(1.0 - cosine_similarity(a, a) == doctest::Approx(0.0));
  CHECK(1.0 - cosine_similarity(a, b) == doctest::Approx(1.0));
}
