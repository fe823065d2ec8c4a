#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ppnet/matrix.hpp"

namespace ppnet {

using Vec3 = std::array<double, 3>;

/// A LiDAR scan in the sensor frame. `labels` and `instance_ids` are either
/// empty (not available) or hold one entry per point.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<double> remission;
  std::vector<int> labels;
  std::vector<std::uint32_t> instance_ids;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  bool has_labels() const { return !labels.empty() && labels.size() == coords.size(); }
  bool has_instances() const { return !instance_ids.empty() && instance_ids.size() == coords.size(); }

  /// Throws ErrorKind::Argument on non-finite coordinates, mismatched
  /// array lengths or labels outside [0, num_classes) other than `ignore_id`.
  void validate(int num_classes, int ignore_id) const;

  void push_back(const Vec3& p, double remission_value, int label = -1, std::uint32_t instance = 0);
};

/// Copies the given points (in the given order) into a new cloud.
PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices);

struct CropBounds {
  double x_min = -50.0, x_max = 50.0;
  double y_min = -50.0, y_max = 50.0;
  double z_min = -3.0, z_max = 2.0;

  void validate() const;
  bool contains(const Vec3& p) const {
    return p[0] >= x_min && p[0] <= x_max && p[1] >= y_min && p[1] <= y_max && p[2] >= z_min && p[2] <= z_max;
  }
};

/// Row i lists K point indices; entry 0 is always i itself.
struct NeighborTable {
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;  // N*K, row-major

  std::size_t point_count() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::uint32_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
};

/// Columns: x, y, z, remission, range.
FeatureMatrix build_features(const PointCloud& cloud);

struct DownsampleResult {
  PointCloud cloud;
  std::vector<std::size_t> index_map;  // original point -> kept point index
};

/// Keeps the first point (input order) of every occupied voxel of edge
/// `resolution`. Voxel index per axis is floor(coord / resolution).
DownsampleResult voxel_downsample(const PointCloud& cloud, double resolution);

struct CropResult {
  PointCloud cloud;
  std::vector<bool> keep;
};

/// Inclusive box crop.
CropResult crop(const PointCloud& cloud, const CropBounds& bounds);

/// Exact k-d tree over 3D points. Queries order candidates by
/// (squared distance, point index).
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// The k nearest points to `query`. When `self` is a valid index that point
  /// sorts before every other candidate regardless of distance.
  std::vector<std::uint32_t> nearest(const Vec3& query, std::size_t k, std::int64_t self = -1) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t point;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint8_t axis = 0;
  };

  std::int32_t build(std::span<std::uint32_t> ids, int depth);

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

/// Self-inclusive k-NN table. Ties are broken by lower point index; when the
/// cloud has fewer than k points each row repeats its last neighbor.
NeighborTable knn(const PointCloud& cloud, std::size_t k);

/// Assigns to every point of `full` the prediction of its nearest point in
/// `processed` (ties to the lower processed index).
std::vector<int> propagate_labels(const PointCloud& full, const PointCloud& processed,
                                  std::span<const int> predictions);

}  // namespace ppnet
