#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ppnet/augmentation.hpp"
#include "ppnet/cloud.hpp"
#include "ppnet/dataio.hpp"
#include "ppnet/loss.hpp"
#include "ppnet/network.hpp"
#include "ppnet/optim.hpp"

namespace ppnet {

enum class Precision { F32, F64 };
enum class DataSource { Kitti, Synthetic };

/// Concat: one forward pass over the concatenated batch (shared batch-norm
/// statistics). Accumulate: one pass per cloud, gradients summed.
enum class BatchMode { Concat, Accumulate };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::filesystem::path root;
  std::vector<std::string> train_sequences{"00", "01", "02", "03", "04", "05", "06", "07", "09", "10"};
  std::vector<std::string> val_sequences{"08"};
  std::string class_map = "semantic_kitti";  // semantic_kitti | identity | "raw:train,..."
  int ignore_index = 0;
  std::size_t num_classes = 20;
  std::size_t max_scans = 0;  // per split, 0 = all

  std::size_t synthetic_train_scenes = 4;
  std::size_t synthetic_val_scenes = 1;
  std::size_t synthetic_points = 2000;

  ClassMap make_class_map() const;
};

struct PreprocessConfig {
  double voxel_size = 0.1;
  CropBounds bounds;
};

struct AugmentConfig {
  bool global = true;
  GlobalAugmentConfig global_cfg;
  bool cutmix = false;
  CutMixConfig cutmix_cfg{.rare_classes = {2, 3, 4, 5, 6, 7, 8}, .ground_classes = {9, 10, 11, 12, 17}};
  std::filesystem::path bank_dir;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  std::filesystem::path output_dir = "runs/default";

  DataConfig data;
  PreprocessConfig preprocess;
  NetworkConfig network;
  LossConfig loss;
  OptimizerConfig optimizer;
  BatchMode batch_mode = BatchMode::Concat;
  AugmentConfig augment;

  /// Cross-field checks. With `check_paths`, referenced directories must exist.
  void validate(bool check_paths) const;
};

/// INI-style file: [section] headers and key = value lines, '#' or ';'
/// comments. Unknown sections or keys are errors. Relative paths are
/// resolved against `base_dir`.
RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path, bool check_paths = true);

/// Every accepted "section.key", in schema order.
std::vector<std::string> config_keys();

}  // namespace ppnet
