#pragma once

#include "apc/crf.hpp"
#include "apc/data.hpp"
#include "apc/losses.hpp"
#include "apc/metrics.hpp"
#include "apc/model.hpp"
#include "apc/pcl.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace apc {

enum class EvalRoute { DECODER, PATCH };

struct TrainConfig {
  int batch_size = 16;
  int max_epochs = 15;
  double lr_initial = 1e-3;  // epochs 1..lr_drop_after
  double lr_later = 1e-4;
  int lr_drop_after = 2;
  int K = 6;
  double theta = 0.9;
  double eps = 0.85;   // confidence threshold
  double beta = 0.5;   // background threshold for pseudo labels
  LossWeights weights; // lambda1 = 0.02, lambda2 = 0.01
  uint64_t seed = 0;
  PoolingMode pooling = PoolingMode::AKP;
  bool pcl_enabled = true;
  bool ignore_band = false;
  EvalRoute eval_route = EvalRoute::DECODER;
  bool crf_at_eval = false;
  CrfConfig crf;
  int eval_every = 1;  // epochs between eval passes; 0 disables

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max epochs must be >= 1");
    if (K < 1) throw std::invalid_argument("K must be >= 1");
    if (theta < 0) throw std::invalid_argument("theta must be >= 0");
    if (!(eps > 0.5 && eps < 1.0))
      throw std::invalid_argument("eps must lie in (0.5, 1)");
    if (beta < 0.0 || beta > 1.0)
      throw std::invalid_argument("beta must lie in [0, 1]");
    if (weights.lambda1 < 0 || weights.lambda2 < 0)
      throw std::invalid_argument("loss weights must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double miou = -1.0;  // -1 when no eval ran this epoch
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double final_miou = -1.0;
  long z_rowsum_violations = 0;
  long y_range_violations = 0;
  double wall_seconds = 0.0;
  std::vector<std::string> notes;
};

struct TrainingDiverged : std::runtime_error {
  nlohmann::json diagnostic;
  TrainingDiverged(const std::string& msg, nlohmann::json diag)
      : std::runtime_error(msg), diagnostic(std::move(diag)) {}
};

namespace detail {

inline std::vector<int> present_classes(const std::vector<int>& labels) {
  std::vector<int> out;
  for (size_t c = 0; c < labels.size(); ++c)
    if (labels[c]) out.push_back(static_cast<int>(c));
  return out;
}

}  // namespace detail

// Predicted segmentation mask for one image from a frozen model.
inline SegMask predict_mask(const Sample& sample, const ModelConfig& mcfg,
                            const ParamStore& ps, const TrainConfig& tcfg) {
  PatchGrid grid = partition(sample.image, mcfg.enc.d);
  ForwardResult fwd = model_forward(grid, mcfg, ps);
  if (tcfg.eval_route == EvalRoute::PATCH && !tcfg.crf_at_eval) {
    auto labels = pseudo_patch_labels(fwd.z->val, tcfg.beta, tcfg.eps, false);
    return patch_labels_to_pixel_mask(labels, grid.grid_h, grid.grid_w, grid.d);
  }
  // per-pixel probabilities for the decoder route / CRF unary
  ad::Mat probs;
  if (tcfg.eval_route == EvalRoute::DECODER) {
    probs = fwd.pixel_logits->val;
    for (long i = 0; i < probs.rows(); ++i) {
      Eigen::RowVectorXd e = (probs.row(i).array() - probs.row(i).maxCoeff()).exp();
      probs.row(i) = e / e.sum();
    }
  } else {
    // patch route with CRF: expand patch probabilities to pixels
    int n_out = mcfg.n_fg_classes + 1;
    probs.resize(static_cast<long>(sample.image.height()) * sample.image.width(), n_out);
    for (int gy = 0; gy < grid.grid_h; ++gy)
      for (int gx = 0; gx < grid.grid_w; ++gx) {
        int p = gy * grid.grid_w + gx;
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n_out);
        double best = fwd.z->val.row(p).maxCoeff();
        // background mass grows as the best foreground score falls
        row(0) = std::max(1.0 - best, 1e-6);
        for (int c = 0; c < mcfg.n_fg_classes; ++c) row(c + 1) = fwd.z->val(p, c);
        row /= row.sum();
        for (int y = gy * grid.d; y < (gy + 1) * grid.d; ++y)
          for (int x = gx * grid.d; x < (gx + 1) * grid.d; ++x)
            probs.row(static_cast<long>(y) * sample.image.width() + x) = row;
      }
  }
  if (tcfg.crf_at_eval) return crf_refine(probs, sample.image, tcfg.crf);
  SegMask mask;
  mask.classes.resize(sample.image.height(), sample.image.width());
  for (int y = 0; y < sample.image.height(); ++y)
    for (int x = 0; x < sample.image.width(); ++x) {
      int best;
      probs.row(static_cast<long>(y) * sample.image.width() + x).maxCoeff(&best);
      mask.classes(y, x) = best;
    }
  return mask;
}

inline IoUReport evaluate_model(const Dataset& ds, const ModelConfig& mcfg,
                                const ParamStore& ps, const TrainConfig& tcfg) {
  std::vector<SegMask> preds, gts;
  for (const auto& s : ds.samples) {
    if (!s.has_gt()) continue;
    preds.push_back(predict_mask(s, mcfg, ps, tcfg));
    gts.push_back(s.gt());
  }
  if (preds.empty())
    throw std::runtime_error("evaluate_model: no samples carry ground-truth masks");
  return evaluate_miou(preds, gts, mcfg.n_fg_classes + 1);
}

struct TrainResult {
  ModelConfig model_cfg;
  ParamStore params;
  TrainReport report;
};

// Full training loop: Adam on the weighted objective, LR 1e-3 for the first
// two epochs then 1e-4, deterministic under a fixed seed.
inline TrainResult train(const Dataset& train_ds, const Dataset& eval_ds,
                         const ModelConfig& mcfg_in, const TrainConfig& tcfg,
                         std::ostream* log = nullptr) {
  tcfg.validate();
  if (train_ds.samples.empty()) throw std::invalid_argument("train: empty dataset");
  TrainResult res;
  res.model_cfg = mcfg_in;
  res.model_cfg.validate();

  std::mt19937_64 init_rng(tcfg.seed);
  init_model_params(res.model_cfg, res.params, init_rng);
  std::mt19937_64 order_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 dropout_rng(tcfg.seed ^ 0x5851f42d4c957f2dULL);

  AdamState adam;
  auto t0 = std::chrono::steady_clock::now();

  std::vector<int> order(train_ds.samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    double lr = epoch <= tcfg.lr_drop_after ? tcfg.lr_initial : tcfg.lr_later;
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    int n_batches = 0;

    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(tcfg.batch_size)) {
      size_t end = std::min(order.size(), at + static_cast<size_t>(tcfg.batch_size));
      std::vector<ad::Var> losses;
      std::vector<int> batch_ids(order.begin() + static_cast<long>(at),
                                 order.begin() + static_cast<long>(end));
      for (size_t b = at; b < end; ++b) {
        const Sample& s = train_ds.samples[static_cast<size_t>(order[b])];
        PatchGrid grid = partition(s.image, res.model_cfg.enc.d);
        std::mt19937_64* drng =
            res.model_cfg.enc.dropout > 0 ? &dropout_rng : nullptr;
        ForwardResult fwd = model_forward(grid, res.model_cfg, res.params, drng);

        // in-loop range invariants
        for (long i = 0; i < fwd.z->val.rows(); ++i)
          if (std::abs(fwd.z->val.row(i).sum() - 1.0) > 1e-6)
            ++res.report.z_rowsum_violations;

        ad::Var y = pool(fwd.z, tcfg.pooling, tcfg.K, tcfg.theta);
        for (long c = 0; c < y->val.cols(); ++c)
          if (y->val(0, c) < 0.0 || y->val(0, c) > 1.0)
            ++res.report.y_range_violations;

        ad::Var mce = mce_loss(y, s.labels);
        auto patch_labels = pseudo_patch_labels(fwd.z->val, tcfg.beta, tcfg.eps,
                                                tcfg.ignore_band);
        SegMask pseudo =
            patch_labels_to_pixel_mask(patch_labels, grid.grid_h, grid.grid_w, grid.d);
        ad::Var seg = seg_loss(fwd.pixel_logits, pseudo);

        std::vector<ad::Var> pces;
        if (tcfg.pcl_enabled) {
          ConfidencePartition part = partition_confidence(fwd.z->val, tcfg.eps);
          for (int c : detail::present_classes(s.labels))
            pces.push_back(pce_loss(fwd.f_out, part, c));
        }
        losses.push_back(total_loss(mce, seg, pces, tcfg.weights));
      }
      ad::Var batch_sum = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) batch_sum = ad::add(batch_sum, losses[i]);
      ad::Var batch_loss = ad::scale(batch_sum, 1.0 / static_cast<double>(losses.size()));
      double lv = batch_loss->val(0, 0);
      if (!std::isfinite(lv)) {
        nlohmann::json diag = {{"epoch", epoch}, {"batch_samples", batch_ids},
                               {"loss", lv}};
        throw TrainingDiverged("non-finite training loss at epoch " +
                                   std::to_string(epoch),
                               diag);
      }
      res.params.zero_grad();
      ad::backward(batch_loss);
      adam.step(res.params, lr);
      loss_sum += lv;
      ++n_batches;
    }

    EpochStats es;
    es.epoch = epoch;
    es.mean_loss = loss_sum / n_batches;
    if (tcfg.eval_every > 0 && epoch % tcfg.eval_every == 0 &&
        !eval_ds.samples.empty()) {
      es.miou = evaluate_model(eval_ds, res.model_cfg, res.params, tcfg).miou;
      res.report.final_miou = es.miou;
    }
    res.report.epochs.push_back(es);
    if (log) {
      (*log) << "epoch=" << epoch << " lr=" << lr << " loss=" << es.mean_loss;
      if (es.miou >= 0) (*log) << " miou=" << es.miou;
      (*log) << "\n" << std::flush;
    }
  }
  if (res.report.final_miou < 0 && !eval_ds.samples.empty() && tcfg.eval_every > 0)
    res.report.final_miou =
        evaluate_model(eval_ds, res.model_cfg, res.params, tcfg).miou;
  res.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---- embedding cosine-distance statistics ----

struct CosineStats {
  double intra = -1.0;  // mean 1 - S over same-class confident pairs
  double inter = -1.0;  // mean 1 - S over cross-class confident pairs
  std::vector<double> intra_per_class;  // -1 where < 2 confident patches
  std::vector<int> skipped_classes;
};

inline CosineStats cosine_distance_stats(const Dataset& ds, const ModelConfig& mcfg,
                                         const ParamStore& ps, double eps) {
  int n_cls = mcfg.n_fg_classes;
  std::vector<double> intra_sum(static_cast<size_t>(n_cls), 0.0);
  std::vector<long> intra_cnt(static_cast<size_t>(n_cls), 0);
  double inter_sum = 0.0;
  long inter_cnt = 0;
  std::vector<long> per_class_members(static_cast<size_t>(n_cls), 0);

  for (const auto& s : ds.samples) {
    PatchGrid grid = partition(s.image, mcfg.enc.d);
    ForwardResult fwd = model_forward(grid, mcfg, ps);
    std::vector<std::pair<int, int>> confident;  // (patch index, class)
    for (long i = 0; i < fwd.z->val.rows(); ++i) {
      int best;
      double score = fwd.z->val.row(i).maxCoeff(&best);
      if (score > eps) confident.emplace_back(static_cast<int>(i), best);
    }
    for (const auto& [pi, ci] : confident) {
      ++per_class_members[static_cast<size_t>(ci)];
      (void)pi;
    }
    for (size_t a = 0; a < confident.size(); ++a)
      for (size_t b = a + 1; b < confident.size(); ++b) {
        double dist = 1.0 - cosine_similarity(fwd.f_out->val.row(confident[a].first),
                                              fwd.f_out->val.row(confident[b].first));
        if (confident[a].second == confident[b].second) {
          intra_sum[static_cast<size_t>(confident[a].second)] += dist;
          ++intra_cnt[static_cast<size_t>(confident[a].second)];
        } else {
          inter_sum += dist;
          ++inter_cnt;
        }
      }
  }

  CosineStats st;
  st.intra_per_class.assign(static_cast<size_t>(n_cls), -1.0);
  double isum = 0.0;
  long icnt = 0;
  for (int c = 0; c < n_cls; ++c) {
    if (intra_cnt[static_cast<size_t>(c)] > 0) {
      st.intra_per_class[static_cast<size_t>(c)] =
          intra_sum[static_cast<size_t>(c)] / intra_cnt[static_cast<size_t>(c)];
      isum += intra_sum[static_cast<size_t>(c)];
      icnt += intra_cnt[static_cast<size_t>(c)];
    }
    if (per_class_members[static_cast<size_t>(c)] < 2)
      st.skipped_classes.push_back(c);
  }
  if (icnt > 0) st.intra = isum / icnt;
  if (inter_cnt > 0) st.inter = inter_sum / inter_cnt;
  return st;
}

// ---- heatmap ----

// Per-patch probability of one class, upsampled to pixel resolution.
inline Eigen::MatrixXd heatmap(const Sample& sample, const ModelConfig& mcfg,
                               const ParamStore& ps, int class_id) {
  if (class_id < 0 || class_id >= mcfg.n_fg_classes)
    throw std::invalid_argument("heatmap: invalid class id " + std::to_string(class_id));
  PatchGrid grid = partition(sample.image, mcfg.enc.d);
  ForwardResult fwd = model_forward(grid, mcfg, ps);
  Eigen::MatrixXd patch_map(grid.grid_h, grid.grid_w);
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx)
      patch_map(gy, gx) = fwd.z->val(gy * grid.grid_w + gx, class_id);
  return resize_bilinear(patch_map, grid.grid_h * grid.d, grid.grid_w * grid.d);
}

// ---- ablation harness ----

struct AblationRow {
  PoolingMode mode;
  bool pcl = false;
  uint64_t seed = 0;
  double miou = 0.0;
  double intra = -1.0;
  double inter = -1.0;
};

struct AblationVariant {
  PoolingMode mode;
  bool pcl = true;
};

// Trains every variant with identical seeds and data order.
inline std::vector<AblationRow> ablate_pooling(
    const Dataset& train_ds, const Dataset& eval_ds, const ModelConfig& mcfg,
    const TrainConfig& base, const std::vector<AblationVariant>& variants,
    const std::vector<uint64_t>& seeds, std::ostream* log = nullptr) {
  std::vector<AblationRow> rows;
  for (uint64_t seed : seeds)
    for (const auto& v : variants) {
      TrainConfig tc = base;
      tc.seed = seed;
      tc.pooling = v.mode;
      tc.pcl_enabled = v.pcl;
      if (log)
        (*log) << "ablate: pooling=" << pooling_mode_name(v.mode)
               << " pcl=" << (v.pcl ? "on" : "off") << " seed=" << seed << "\n";
      TrainResult tr = train(train_ds, eval_ds, mcfg, tc, nullptr);
      AblationRow row;
      row.mode = v.mode;
      row.pcl = v.pcl;
      row.seed = seed;
      row.miou = tr.report.final_miou;
      CosineStats cs = cosine_distance_stats(eval_ds, tr.model_cfg, tr.params, tc.eps);
      row.intra = cs.intra;
      row.inter = cs.inter;
      rows.push_back(row);
      if (log)
        (*log) << "  miou=" << row.miou << " intra=" << row.intra
               << " inter=" << row.inter << "\n" << std::flush;
    }
  return rows;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- report serialization ----

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"lr_initial", c.lr_initial}, {"lr_later", c.lr_later},
          {"lr_drop_after", c.lr_drop_after}, {"K", c.K}, {"theta", c.theta},
          {"eps", c.eps}, {"beta", c.beta}, {"lambda1", c.weights.lambda1},
          {"lambda2", c.weights.lambda2}, {"seed", c.seed},
          {"pooling", pooling_mode_name(c.pooling)}, {"pcl", c.pcl_enabled},
          {"ignore_band", c.ignore_band},
          {"eval_route", c.eval_route == EvalRoute::DECODER ? "decoder" : "patch"},
          {"crf_at_eval", c.crf_at_eval}};
}

inline nlohmann::json report_to_json(const TrainReport& r, const TrainConfig& cfg) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"miou", e.miou}});
  return {{"config", train_config_to_json(cfg)},
          {"epochs", epochs},
          {"final_miou", r.final_miou},
          {"z_rowsum_violations", r.z_rowsum_violations},
          {"y_range_violations", r.y_range_violations},
          {"wall_seconds", r.wall_seconds},
          {"notes", r.notes}};
}

}  // namespace apc
