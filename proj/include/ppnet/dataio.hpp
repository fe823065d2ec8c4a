#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ppnet/augmentation.hpp"
#include "ppnet/cloud.hpp"

namespace ppnet {

/// Raw dataset label id -> training class id. Unknown raw ids map to the
/// ignore id, so lookup never fails.
class ClassMap {
 public:
  ClassMap() = default;
  ClassMap(std::map<std::uint32_t, int> raw_to_train, int ignore_id, std::map<int, std::uint32_t> train_to_raw = {});

  /// The 19-class SemanticKITTI learning map (ignore id 0).
  static ClassMap semantic_kitti();
  /// Raw id == training id for 0..num_classes-1.
  static ClassMap identity(int num_classes, int ignore_id);
  /// Parses "raw:train,raw:train,...".
  static ClassMap parse(const std::string& text, int ignore_id);

  int to_train(std::uint32_t raw) const;
  /// Throws ErrorKind::Argument for an id without a raw counterpart.
  std::uint32_t to_raw(int train) const;
  int ignore_id() const { return ignore_; }
  int num_classes() const;
  std::string to_string() const;

 private:
  std::map<std::uint32_t, int> forward_;
  std::map<int, std::uint32_t> inverse_;
  int ignore_ = 0;
};

/// SemanticKITTI velodyne layout: consecutive little-endian float32
/// records (x, y, z, remission).
PointCloud read_scan(const std::filesystem::path& path);
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);

struct LabelData {
  std::vector<int> semantic;          // mapped through the class map
  std::vector<std::uint32_t> raw;     // low 16 bits as stored
  std::vector<std::uint32_t> instance;  // high 16 bits
};

/// uint32 little-endian records: low 16 bits semantic id, high 16 bits instance.
LabelData read_labels(const std::filesystem::path& path, const ClassMap& class_map);
/// Reads labels and checks the count against the paired scan.
LabelData read_labels(const std::filesystem::path& path, const ClassMap& class_map, std::size_t expected_points);
void write_raw_labels(const std::filesystem::path& path, std::span<const std::uint32_t> semantic_raw,
                      std::span<const std::uint32_t> instance);
void write_predictions(const std::filesystem::path& path, std::span<const int> predictions, const ClassMap& class_map);

/// Scan plus labels; `labels_path` may be empty for unlabeled data.
PointCloud load_labeled_scan(const std::filesystem::path& scan_path, const std::filesystem::path& labels_path,
                             const ClassMap& class_map);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct GroundSpec {
  std::size_t points = 0;
  double inner_radius = 2.0;
  double outer_radius = 20.0;
  double z = -1.7;
  int class_id = 9;
};

struct BoxSpec {
  Vec3 center{0, 0, 0};  // bottom face center
  Vec3 size{4.0, 1.8, 1.5};
  double yaw = 0.0;
  std::size_t points = 0;
  int class_id = 1;
};

struct CylinderSpec {
  Vec3 base{0, 0, 0};  // bottom center
  double radius = 0.3;
  double height = 1.8;
  std::size_t points = 0;
  int class_id = 6;
};

/// Primitive scene description; objects get instance ids 1, 2, ... in the
/// order boxes then cylinders; ground points carry instance 0.
struct SceneSpec {
  std::vector<GroundSpec> grounds;
  std::vector<BoxSpec> boxes;
  std::vector<CylinderSpec> cylinders;
  double noise = 0.01;

  void validate() const;
};

PointCloud synth_scene(const SceneSpec& spec, std::uint64_t seed);

/// A small urban-like scene: ground disk, a few cars, people and poles,
/// with positions drawn from `seed`. Uses SemanticKITTI training ids.
SceneSpec random_scene_spec(std::uint64_t seed, std::size_t total_points);

// ---------------------------------------------------------------------------
// Instance bank: <dir>/manifest.csv plus <dir>/instance_NNNNNN.bin (scan layout).

void save_instance_bank(const std::filesystem::path& dir, const std::vector<InstanceRecord>& bank);
std::vector<InstanceRecord> load_instance_bank(const std::filesystem::path& dir);

}  // namespace ppnet
