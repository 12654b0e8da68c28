#pragma once

#include "apc/image.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace apc {

// One training/eval sample. The ground-truth mask is evaluation-only; access
// goes through gt() so tests can assert the training path never touches it.
struct Sample {
  std::string id;
  ImageTensor image;
  std::vector<int> labels;  // binary, one entry per foreground class

  std::optional<SegMask> gt_mask;
  mutable bool gt_accessed = false;

  bool has_gt() const { return gt_mask.has_value(); }
  const SegMask& gt() const {
    if (!gt_mask) throw std::runtime_error("sample " + id + " has no ground-truth mask");
    gt_accessed = true;
    return *gt_mask;
  }
};

struct Dataset {
  std::vector<Sample> samples;
  int n_fg_classes = 0;

  size_t size() const { return samples.size(); }
};

// ---- synthetic shapes benchmark ----

struct SyntheticConfig {
  uint64_t seed = 0;
  int n_images = 500;
  int image_size = 96;
  int n_classes = 3;  // circle, square, triangle (class ids 1..3)
  int max_objects = 3;
};

namespace detail {

inline void draw_shape(ImageTensor& img, Eigen::MatrixXi& mask, int cls, int x0,
                       int y0, int size, double cr, double cg, double cb) {
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) {
      bool inside = false;
      double fx = x - x0 + 0.5, fy = y - y0 + 0.5;
      switch (cls) {
        case 1: {  // circle
          double r = size / 2.0;
          inside = (fx - r) * (fx - r) + (fy - r) * (fy - r) <= r * r;
          break;
        }
        case 2:  // square
          inside = true;
          break;
        case 3: {  // upward triangle
          double t = fy / size;  // 0 at apex row, 1 at base
          double half = t * size / 2.0;
          inside = std::abs(fx - size / 2.0) <= half;
          break;
        }
        default:
          throw std::invalid_argument("unknown shape class");
      }
      if (!inside) continue;
      img.r(y, x) = cr;
      img.g(y, x) = cg;
      img.b(y, x) = cb;
      mask(y, x) = cls;
    }
}

}  // namespace detail

inline Dataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_classes < 1 || cfg.n_classes > 3)
    throw std::invalid_argument("gen_synthetic supports 1..3 shape classes");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset ds;
  ds.n_fg_classes = cfg.n_classes;
  ds.samples.reserve(static_cast<size_t>(cfg.n_images));
  int n = cfg.image_size;

  for (int i = 0; i < cfg.n_images; ++i) {
    Sample s;
    std::ostringstream id;
    id << "img" << std::setw(5) << std::setfill('0') << i;
    s.id = id.str();
    s.image = ImageTensor::zeros(n, n);
    // textured background: mid gray with low-amplitude noise
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double base = 0.45 + 0.1 * unit(rng);
        s.image.r(y, x) = base;
        s.image.g(y, x) = base;
        s.image.b(y, x) = base + 0.04 * (unit(rng) - 0.5);
      }
    Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(n, n);

    std::uniform_int_distribution<int> n_obj_dist(1, cfg.max_objects);
    std::uniform_int_distribution<int> cls_dist(1, cfg.n_classes);
    int n_obj = n_obj_dist(rng);
    for (int o = 0; o < n_obj; ++o) {
      int cls = cls_dist(rng);
      int size = 0, x0 = 0, y0 = 0;
      bool placed = false;
      for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
        // large enough to span several patches so adaptive pooling sees k > 1
        size = n / 4 + static_cast<int>(unit(rng) * (n / 2 - n / 4));
        if (size < 4) continue;
        x0 = static_cast<int>(unit(rng) * (n - size));
        y0 = static_cast<int>(unit(rng) * (n - size));
        placed = true;
      }
      if (!placed) continue;  // skip-and-regenerate path for infeasible placement
      // random saturated color from the class's palette (warm / green / cool),
      // well away from the gray background; the within-class spread keeps
      // color a cue rather than a constant label
      double hi = 0.65 + 0.35 * unit(rng);
      double lo1 = 0.35 * unit(rng), lo2 = 0.35 * unit(rng);
      double cr = lo1, cg = lo1, cb = lo2;
      switch (cls) {
        case 1: cr = hi; cg = lo1; cb = lo2; break;
        case 2: cr = lo1; cg = hi; cb = lo2; break;
        case 3: cr = lo1; cg = lo2; cb = hi; break;
      }
      detail::draw_shape(s.image, mask, cls, x0, y0, size, cr, cg, cb);
    }

    s.labels.assign(static_cast<size_t>(cfg.n_classes), 0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (mask(y, x) > 0) s.labels[static_cast<size_t>(mask(y, x) - 1)] = 1;
    // occlusion can erase every object; such an image would violate the
    // at-least-one-label training invariant, so redraw it
    if (std::none_of(s.labels.begin(), s.labels.end(), [](int v) { return v != 0; })) {
      --i;
      continue;
    }
    s.gt_mask = SegMask{mask};
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---- folder layout ----
//
//   root/
//     labels.txt          one line per image: "<id>,<cls>,<cls>..." with
//                         foreground class ids 1..C as used in the masks
//     images/<id>.ppm     binary PPM, values 0..255
//     masks/<id>.pgm      optional single-channel class-id masks (eval only)

inline void save_dataset(const std::string& root, const Dataset& ds, bool force = false) {
  namespace fs = std::filesystem;
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw std::invalid_argument("output directory " + root +
                                " is not empty (use --force to overwrite)");
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  std::ofstream labels(fs::path(root) / "labels.txt");
  for (const auto& s : ds.samples) {
    labels << s.id;
    for (size_t c = 0; c < s.labels.size(); ++c)
      if (s.labels[c]) labels << "," << (c + 1);
    labels << "\n";
    write_ppm((fs::path(root) / "images" / (s.id + ".ppm")).string(), s.image);
    if (s.has_gt())
      write_pgm((fs::path(root) / "masks" / (s.id + ".pgm")).string(),
                s.gt_mask->classes);
  }
}

inline Dataset load_voc_format(const std::string& root, int resize_to = 0) {
  namespace fs = std::filesystem;
  fs::path labels_path = fs::path(root) / "labels.txt";
  std::ifstream labels(labels_path);
  if (!labels) throw std::runtime_error("missing labels file: " + labels_path.string());
  Dataset ds;
  std::string line;
  int line_no = 0;
  std::vector<std::string> missing;
  while (std::getline(labels, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    if (!std::getline(ss, id, ',') || id.empty())
      throw std::runtime_error("malformed label line " + std::to_string(line_no) +
                               " in " + labels_path.string());
    Sample s;
    s.id = id;
    std::string tok;
    std::vector<int> ids;
    while (std::getline(ss, tok, ',')) {
      try {
        size_t pos = 0;
        int c = std::stoi(tok, &pos);
        if (pos != tok.size() || c < 1) throw std::invalid_argument(tok);
        ids.push_back(c);
      } catch (const std::exception&) {
        throw std::runtime_error("malformed class id '" + tok + "' on line " +
                                 std::to_string(line_no) + " in " + labels_path.string());
      }
    }
    for (int c : ids) ds.n_fg_classes = std::max(ds.n_fg_classes, c);
    fs::path img_path = fs::path(root) / "images" / (id + ".ppm");
    if (!fs::exists(img_path)) {
      missing.push_back(id);
      continue;
    }
    s.image = read_ppm(img_path.string());
    if (resize_to > 0 &&
        (s.image.height() != resize_to || s.image.width() != resize_to))
      s.image = resize_bilinear(s.image, resize_to, resize_to);
    s.labels = std::move(ids);  // class-id list for now; expanded below
    fs::path mask_path = fs::path(root) / "masks" / (id + ".pgm");
    if (fs::exists(mask_path)) s.gt_mask = SegMask{read_pgm(mask_path.string())};
    ds.samples.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string msg = "labels reference missing images:";
    for (const auto& id : missing) msg += " " + id;
    throw std::runtime_error(msg);
  }
  // second pass: expand class-id lists into binary label vectors
  for (auto& s : ds.samples) {
    std::vector<int> ids = std::move(s.labels);
    s.labels.assign(static_cast<size_t>(ds.n_fg_classes), 0);
    for (int c : ids) s.labels[static_cast<size_t>(c - 1)] = 1;
  }
  return ds;
}

}  // namespace apc
