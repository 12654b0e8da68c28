#pragma once

#include "apc/model.hpp"
#include "apc/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace apc {

// Checkpoint file layout (stable; version bumps on change):
//   8-byte magic "APCCKPT1"
//   uint64 header length, then that many bytes of JSON: model config plus an
//   ordered tensor manifest (name, rows, cols)
//   raw little-endian float64 tensor data, row-major, in manifest order

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {
      {"enc",
       {{"depth", cfg.enc.depth}, {"heads", cfg.enc.heads}, {"e", cfg.enc.e},
        {"d", cfg.enc.d}, {"grid_h", cfg.enc.grid_h}, {"grid_w", cfg.enc.grid_w},
        {"dropout", cfg.enc.dropout}, {"pos_embeddings", cfg.enc.pos_embeddings},
        {"seed", cfg.enc.seed}}},
      {"dec",
       {{"n_levels", cfg.dec.n_levels}, {"proj_dim", cfg.dec.proj_dim},
        {"nearest_upsample", cfg.dec.nearest_upsample}}},
      {"n_fg_classes", cfg.n_fg_classes},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  const auto& e = j.at("enc");
  cfg.enc.depth = e.at("depth");
  cfg.enc.heads = e.at("heads");
  cfg.enc.e = e.at("e");
  cfg.enc.d = e.at("d");
  cfg.enc.grid_h = e.at("grid_h");
  cfg.enc.grid_w = e.at("grid_w");
  cfg.enc.dropout = e.at("dropout");
  cfg.enc.pos_embeddings = e.at("pos_embeddings");
  cfg.enc.seed = e.at("seed");
  const auto& d = j.at("dec");
  cfg.dec.n_levels = d.at("n_levels");
  cfg.dec.proj_dim = d.at("proj_dim");
  cfg.dec.nearest_upsample = d.at("nearest_upsample");
  cfg.n_fg_classes = j.at("n_fg_classes");
  return cfg;
}

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ParamStore& ps) {
  nlohmann::json header = {{"config", model_config_to_json(cfg)},
                           {"tensors", nlohmann::json::array()}};
  for (const auto& [name, p] : ps.params)
    header["tensors"].push_back(
        {{"name", name}, {"rows", p->val.rows()}, {"cols", p->val.cols()}});
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write("APCCKPT1", 8);
  uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, p] : ps.params) {
    // row-major on disk regardless of Eigen's in-memory layout
    for (long r = 0; r < p->val.rows(); ++r)
      for (long c = 0; c < p->val.cols(); ++c) {
        double v = p->val(r, c);
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  if (!f) throw std::runtime_error("short write to checkpoint: " + path);
}

inline ModelConfig load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "APCCKPT1")
    throw std::runtime_error("not an APC checkpoint: " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  nlohmann::json header = nlohmann::json::parse(hs);
  ModelConfig cfg = model_config_from_json(header.at("config"));
  ps.params.clear();
  for (const auto& t : header.at("tensors")) {
    long rows = t.at("rows"), cols = t.at("cols");
    ad::Mat m(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) {
        double v;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(r, c) = v;
      }
    ps.params[t.at("name").get<std::string>()] = ad::param(std::move(m));
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return cfg;
}

}  // namespace apc
