#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ppnet/cloud.hpp"

namespace ppnet {

using Rng = std::mt19937_64;

struct GlobalAugmentConfig {
  double rotate_prob = 1.0;
  double flip_x_prob = 0.5;
  double flip_y_prob = 0.5;
  double scale_prob = 1.0;
  double scale_min = 0.95;
  double scale_max = 1.05;

  void validate() const;
};

/// One concrete draw of the global transform.
struct GlobalTransform {
  double theta = 0.0;  // rotation about z, radians
  bool flip_x = false; // x -> -x
  bool flip_y = false; // y -> -y
  double scale = 1.0;
};

GlobalTransform draw_global_transform(Rng& rng, const GlobalAugmentConfig& cfg);
/// Rotate, then flip, then scale. Labels are untouched.
PointCloud apply_global_transform(const PointCloud& cloud, const GlobalTransform& t);
PointCloud global_augment(const PointCloud& cloud, Rng& rng, const GlobalAugmentConfig& cfg);

struct CutMixConfig {
  std::vector<int> rare_classes;
  std::vector<int> ground_classes;
  std::size_t max_paste = 10;
  double vertical_fov_step = 0.0073;  // radians between adjacent beams
  double rate_min = 0.5;
  double rate_max = 2.0;
  std::size_t min_instance_points = 10;
  std::size_t max_retries = 10;

  void validate() const;
  bool is_rare(int c) const;
  bool is_ground(int c) const;
};

/// An object cut out of a scan: x,y centered on the centroid, z relative to
/// the lowest point.
struct InstanceRecord {
  std::vector<Vec3> points;
  std::vector<double> remission;
  int class_id = 0;
  double source_distance = 0.0;  // centroid range in the source scan
  std::string source_id;

  std::size_t size() const { return points.size(); }
  bool operator==(const InstanceRecord&) const = default;
};

/// Instance points grouped into z slices of height `bin_height`.
struct BeamGroups {
  double bin_height = 0.0;
  std::vector<std::int64_t> bins;                 // ascending z-bin index per group
  std::vector<std::vector<std::size_t>> groups;   // point indices per group
};

/// One record per (rare class, instance id) group; instance id 0 means
/// "no instance" and is skipped. Throws if the cloud lacks instance ids.
std::vector<InstanceRecord> extract_instances(const PointCloud& cloud, const CutMixConfig& cfg,
                                              const std::string& source_id = {});

/// Bins points by floor(z / (distance * tan(vertical_fov_step))), with 1e-9
/// slack for points on a bin edge.
BeamGroups beam_quantize(const InstanceRecord& instance, double distance, const CutMixConfig& cfg);

/// Density change for placing the instance at `target_distance`:
/// rate = clamp(source_distance / target_distance). Beam groups (taken at
/// the source distance, where the recorded beams are) are duplicated with a
/// half-bin z shift when rate > 1 and dropped when rate < 1. Groups are
/// picked in a random order drawn from `rng`, so for one RNG state the
/// chosen sets are nested across target distances.
InstanceRecord resample_instance(const InstanceRecord& instance, double target_distance, const CutMixConfig& cfg,
                                 Rng& rng, std::optional<double> rate_override = std::nullopt);

struct PasteResult {
  PointCloud cloud;
  std::size_t pasted = 0;
  bool no_ground = false;  // scene had no ground-class anchor; returned unchanged
};

/// Pastes up to cfg.max_paste bank instances onto ground-class anchors.
/// Existing scene points are never modified; new points are appended.
PasteResult paste_instances(const PointCloud& scene, const std::vector<InstanceRecord>& bank, const CutMixConfig& cfg,
                            Rng& rng);

}  // namespace ppnet
