// apc: synthetic-benchmark training and evaluation for patch-level weakly
// supervised segmentation. See README.md for the dataset layout and the
// report/checkpoint formats.

#include "apc/checkpoint.hpp"
#include "apc/data.hpp"
#include "apc/train_eval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct CommonTrainFlags {
  std::string data;
  std::string eval_data;
  std::string out = "run";
  int image_size = 96;
  int patch_side = 16;
  int depth = 4;
  int heads = 4;
  int embed = 192;
  int proj_dim = 64;
  apc::TrainConfig tcfg;
  std::string pooling = "akp";
  std::string eval_route = "decoder";
  bool no_pcl = false;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f) {
  cmd->add_option("--data", f.data, "training dataset folder")->required();
  cmd->add_option("--eval-data", f.eval_data,
                  "eval dataset folder (default: 10% holdout of --data)");
  cmd->add_option("--out", f.out, "output folder for checkpoint and report");
  cmd->add_option("--size", f.image_size, "square image size images are resized to");
  cmd->add_option("--patch", f.patch_side, "patch side d");
  cmd->add_option("--depth", f.depth, "transformer blocks");
  cmd->add_option("--heads", f.heads, "attention heads");
  cmd->add_option("--embed", f.embed, "embedding width");
  cmd->add_option("--proj-dim", f.proj_dim, "decoder projection width");
  cmd->add_option("--k", f.tcfg.K, "max pooled patches per class");
  cmd->add_option("--theta", f.tcfg.theta, "adaptive-K mean-ratio threshold (>= 0)");
  cmd->add_option("--eps", f.tcfg.eps, "confidence threshold, in (0.5, 1)");
  cmd->add_option("--beta", f.tcfg.beta, "background threshold, in [0, 1]");
  cmd->add_option("--lambda1", f.tcfg.weights.lambda1, "segmentation loss weight");
  cmd->add_option("--lambda2", f.tcfg.weights.lambda2, "contrastive loss weight");
  cmd->add_option("--epochs", f.tcfg.max_epochs, "max training epochs");
  cmd->add_option("--batch", f.tcfg.batch_size, "batch size");
  cmd->add_option("--seed", f.tcfg.seed, "RNG seed");
  cmd->add_option("--pooling", f.pooling, "pooling mode: gap|gmp|topk|akp");
  cmd->add_flag("--no-pcl", f.no_pcl, "disable patch contrastive learning");
  cmd->add_option("--eval-route", f.eval_route,
                  "mask source at eval: decoder|patch");
  cmd->add_flag("--crf", f.tcfg.crf_at_eval, "apply CRF refinement at eval");
  cmd->add_option("--ignore-band", f.tcfg.ignore_band,
                  "mark patches scored in [beta, eps) as ignore in the seg loss");
}

apc::ModelConfig make_model_config(const CommonTrainFlags& f, int n_fg_classes) {
  apc::ModelConfig m;
  m.enc.depth = f.depth;
  m.enc.heads = f.heads;
  m.enc.e = f.embed;
  m.enc.d = f.patch_side;
  if (f.image_size % f.patch_side != 0)
    throw std::invalid_argument("--size must be divisible by --patch");
  m.enc.grid_h = m.enc.grid_w = f.image_size / f.patch_side;
  m.enc.seed = f.tcfg.seed;
  m.dec.proj_dim = f.proj_dim;
  m.n_fg_classes = n_fg_classes;
  m.validate();
  return m;
}

// Splits off a deterministic eval set when no --eval-data was given.
void load_splits(const CommonTrainFlags& f, apc::Dataset& train_ds,
                 apc::Dataset& eval_ds) {
  train_ds = apc::load_voc_format(f.data, f.image_size);
  if (!f.eval_data.empty()) {
    eval_ds = apc::load_voc_format(f.eval_data, f.image_size);
    eval_ds.n_fg_classes = std::max(eval_ds.n_fg_classes, train_ds.n_fg_classes);
    return;
  }
  size_t n_eval = std::max<size_t>(1, train_ds.size() / 10);
  eval_ds.n_fg_classes = train_ds.n_fg_classes;
  for (size_t i = train_ds.size() - n_eval; i < train_ds.size(); ++i)
    eval_ds.samples.push_back(std::move(train_ds.samples[i]));
  train_ds.samples.resize(train_ds.size() - n_eval);
}

int cmd_gen_data(uint64_t seed, int n, int size, int classes, int max_objects,
                 const std::string& out, bool force) {
  apc::SyntheticConfig cfg;
  cfg.seed = seed;
  cfg.n_images = n;
  cfg.image_size = size;
  cfg.n_classes = classes;
  cfg.max_objects = max_objects;
  apc::Dataset ds = apc::gen_synthetic(cfg);
  apc::save_dataset(out, ds, force);
  std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const CommonTrainFlags& f) {
  apc::Dataset train_ds, eval_ds;
  load_splits(f, train_ds, eval_ds);
  apc::TrainConfig tc = f.tcfg;
  tc.pooling = apc::parse_pooling_mode(f.pooling);
  tc.pcl_enabled = !f.no_pcl;
  tc.eval_route = f.eval_route == "patch" ? apc::EvalRoute::PATCH
                                          : apc::EvalRoute::DECODER;
  if (f.eval_route != "patch" && f.eval_route != "decoder")
    throw std::invalid_argument("--eval-route must be decoder or patch");
  tc.validate();
  apc::ModelConfig mc = make_model_config(f, train_ds.n_fg_classes);

  fs::create_directories(f.out);
  apc::TrainResult res;
  try {
    res = apc::train(train_ds, eval_ds, mc, tc, &std::cout);
  } catch (const apc::TrainingDiverged& e) {
    fs::path diag = fs::path(f.out) / "divergence.json";
    std::ofstream(diag) << e.diagnostic.dump(2) << "\n";
    std::cerr << "error: " << e.what() << " (diagnostic: " << diag.string() << ")\n";
    return kExitRuntime;
  }
  apc::save_checkpoint((fs::path(f.out) / "ckpt.apc").string(), res.model_cfg,
                       res.params);
  std::ofstream(fs::path(f.out) / "report.json")
      << apc::report_to_json(res.report, tc).dump(2) << "\n";
  std::cout << "final_miou=" << res.report.final_miou << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, int image_size,
             bool crf, const std::string& route) {
  apc::ParamStore ps;
  apc::ModelConfig mc = apc::load_checkpoint(ckpt, ps);
  apc::Dataset ds = apc::load_voc_format(data, image_size);
  apc::TrainConfig tc;
  tc.crf_at_eval = crf;
  tc.eval_route = route == "patch" ? apc::EvalRoute::PATCH : apc::EvalRoute::DECODER;
  apc::IoUReport rep = apc::evaluate_model(ds, mc, ps, tc);
  for (size_t c = 0; c < rep.per_class_iou.size(); ++c)
    if (rep.class_present[c])
      std::cout << "iou[" << c << "]=" << rep.per_class_iou[c] << "\n";
  std::cout << "miou=" << rep.miou << "\n";
  return 0;
}

int cmd_ablate(const CommonTrainFlags& f, int n_seeds, const std::string& table_out) {
  apc::Dataset train_ds, eval_ds;
  load_splits(f, train_ds, eval_ds);
  apc::TrainConfig tc = f.tcfg;
  tc.eval_route = f.eval_route == "patch" ? apc::EvalRoute::PATCH
                                          : apc::EvalRoute::DECODER;
  tc.validate();
  apc::ModelConfig mc = make_model_config(f, train_ds.n_fg_classes);

  std::vector<apc::AblationVariant> variants;
  for (apc::PoolingMode m : {apc::PoolingMode::GAP, apc::PoolingMode::GMP,
                             apc::PoolingMode::TOPK_FIXED, apc::PoolingMode::AKP})
    for (bool pcl : {false, true}) variants.push_back({m, pcl});
  std::vector<uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(f.tcfg.seed + static_cast<uint64_t>(i));

  auto rows = apc::ablate_pooling(train_ds, eval_ds, mc, tc, variants, seeds,
                                  &std::cout);

  // median mIoU per variant, ranked
  nlohmann::json jrows = nlohmann::json::array();
  std::vector<std::tuple<double, std::string>> ranked;
  for (const auto& v : variants) {
    std::vector<double> mious;
    for (const auto& r : rows)
      if (r.mode == v.mode && r.pcl == v.pcl) mious.push_back(r.miou);
    std::string name = std::string(apc::pooling_mode_name(v.mode)) +
                       (v.pcl ? "+pcl" : "");
    ranked.emplace_back(apc::median(mious), name);
  }
  std::sort(ranked.begin(), ranked.end());
  std::cout << "\nranked by median mIoU over " << n_seeds << " seed(s):\n";
  for (const auto& [miou, name] : ranked)
    std::cout << "  " << name << "  " << miou << "\n";
  for (const auto& r : rows)
    jrows.push_back({{"pooling", apc::pooling_mode_name(r.mode)}, {"pcl", r.pcl},
                     {"seed", r.seed}, {"miou", r.miou}, {"intra", r.intra},
                     {"inter", r.inter}});
  if (!table_out.empty()) std::ofstream(table_out) << jrows.dump(2) << "\n";
  return 0;
}

int cmd_heatmap(const std::string& ckpt, const std::string& data,
                const std::string& image_id, int class_id, int image_size,
                std::string out) {
  apc::ParamStore ps;
  apc::ModelConfig mc = apc::load_checkpoint(ckpt, ps);
  apc::Dataset ds = apc::load_voc_format(data, image_size);
  const apc::Sample* sample = nullptr;
  for (const auto& s : ds.samples)
    if (s.id == image_id) { sample = &s; break; }
  if (!sample) throw std::invalid_argument("no image with id " + image_id);
  Eigen::MatrixXd map = apc::heatmap(*sample, mc, ps, class_id);
  if (out.empty()) out = image_id + "_class" + std::to_string(class_id) + ".pgm";
  Eigen::MatrixXi q(map.rows(), map.cols());
  for (int y = 0; y < map.rows(); ++y)
    for (int x = 0; x < map.cols(); ++x)
      q(y, x) = static_cast<int>(std::min(std::max(map(y, x), 0.0), 1.0) * 255.0 + 0.5);
  apc::write_pgm(out, q);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive patch contrast segmentation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config")->description("key = value config file, overridden by flags");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic shapes dataset");
  uint64_t g_seed = 0;
  int g_n = 500, g_size = 96, g_classes = 3, g_max_obj = 3;
  std::string g_out;
  bool g_force = false;
  gen->add_option("--seed", g_seed, "RNG seed");
  gen->add_option("--n", g_n, "number of images");
  gen->add_option("--size", g_size, "square image size in pixels");
  gen->add_option("--classes", g_classes, "number of shape classes (1..3)");
  gen->add_option("--max-objects", g_max_obj, "max objects per image");
  gen->add_option("--out", g_out, "output folder")->required();
  gen->add_flag("--force", g_force, "overwrite a non-empty output folder");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  CommonTrainFlags tf;
  add_train_flags(train, tf);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_route = "decoder";
  int e_size = 96;
  bool e_crf = false;
  eval->add_option("--ckpt", e_ckpt, "checkpoint file")->required();
  eval->add_option("--data", e_data, "dataset folder with masks")->required();
  eval->add_option("--size", e_size, "square image size");
  eval->add_option("--eval-route", e_route, "decoder|patch");
  eval->add_flag("--crf", e_crf, "apply CRF refinement");

  // ablate
  auto* ablate = app.add_subcommand("ablate",
                                    "pooling-strategy x PCL ablation grid");
  CommonTrainFlags af;
  add_train_flags(ablate, af);
  int a_seeds = 5;
  std::string a_table;
  ablate->add_option("--seeds", a_seeds, "number of seeds per variant");
  ablate->add_option("--table", a_table, "write the row table as JSON here");

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "export a class probability heatmap");
  std::string h_ckpt, h_data, h_image, h_out;
  int h_class = 0, h_size = 96;
  heat->add_option("--ckpt", h_ckpt, "checkpoint file")->required();
  heat->add_option("--data", h_data, "dataset folder")->required();
  heat->add_option("--image", h_image, "image id")->required();
  heat->add_option("--class", h_class, "foreground class index (0-based)");
  heat->add_option("--size", h_size, "square image size");
  heat->add_option("--out", h_out, "output PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(g_seed, g_n, g_size, g_classes, g_max_obj, g_out, g_force);
    if (train->parsed()) return cmd_train(tf);
    if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_size, e_crf, e_route);
    if (ablate->parsed()) return cmd_ablate(af, a_seeds, a_table);
    if (heat->parsed())
      return cmd_heatmap(h_ckpt, h_data, h_image, h_class, h_size, h_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
