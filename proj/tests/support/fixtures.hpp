#pragma once

#include <filesystem>
#include <string>

#include "ppnet/config.hpp"

namespace fixture {

// Small network and grids so end-to-end runs finish in seconds.
inline ppnet::RunConfig tiny_run(const std::filesystem::path& out) {
  ppnet::RunConfig cfg;
  cfg.seed = 11;
  cfg.precision = ppnet::Precision::F64;
  cfg.output_dir = out;
  cfg.data.source = ppnet::DataSource::Synthetic;
  cfg.data.synthetic_train_scenes = 2;
  cfg.data.synthetic_val_scenes = 1;
  cfg.data.synthetic_points = 600;
  auto& n = cfg.network;
  n.layers = 5;
  n.channels = 8;
  n.k_neighbors = 4;
  n.mlp_hidden = 8;
  n.conv_hidden = 8;
  n.num_classes = cfg.data.num_classes;
  n.planes.bounds = cfg.preprocess.bounds;
  n.planes.cell_size = 4.0;
  n.planes.polar = {.rho_min = 2.0, .rho_max = 50.0, .rings = 12, .sectors = 32};
  n.planes.range.height = 16;
  n.planes.range.width = 64;
  cfg.optimizer.total_epochs = 2;
  cfg.optimizer.warmup_epochs = 1;
  cfg.optimizer.batch_size = 2;
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / ("ppnet_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace fixture
