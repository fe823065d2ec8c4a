#include "ppnet/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <unordered_map>

namespace ppnet {

void PointCloud::validate(int num_classes, int ignore_id) const {
  if (remission.size() != coords.size()) fail(ErrorKind::Argument, "remission length differs from point count");
  if (!labels.empty() && labels.size() != coords.size())
    fail(ErrorKind::Argument, "label count differs from point count");
  if (!instance_ids.empty() && instance_ids.size() != coords.size())
    fail(ErrorKind::Argument, "instance id count differs from point count");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (double c : coords[i]) {
      if (!std::isfinite(c)) fail(ErrorKind::Argument, "non-finite coordinate at point " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l != ignore_id && (l < 0 || l >= num_classes))
      fail(ErrorKind::Argument, "label " + std::to_string(l) + " out of range at point " + std::to_string(i));
  }
}

void PointCloud::push_back(const Vec3& p, double remission_value, int label, std::uint32_t instance) {
  const bool labelled = has_labels() || empty();
  const bool instanced = has_instances() || empty();
  coords.push_back(p);
  remission.push_back(remission_value);
  if (label >= 0 && labelled) labels.push_back(label);
  if (label >= 0 && instanced) instance_ids.push_back(instance);
}

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.coords.reserve(indices.size());
  out.remission.reserve(indices.size());
  const bool labels = cloud.has_labels();
  const bool instances = cloud.has_instances();
  for (std::size_t i : indices) {
    out.coords.push_back(cloud.coords[i]);
    out.remission.push_back(cloud.remission[i]);
    if (labels) out.labels.push_back(cloud.labels[i]);
    if (instances) out.instance_ids.push_back(cloud.instance_ids[i]);
  }
  return out;
}

void CropBounds::validate() const {
  if (!(x_min < x_max && y_min < y_max && z_min < z_max)) fail(ErrorKind::Argument, "crop bounds need min < max on every axis");
}

FeatureMatrix build_features(const PointCloud& cloud) {
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "build_features: empty cloud");
  FeatureMatrix f(cloud.size(), 5);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      fail(ErrorKind::Argument, "build_features: non-finite coordinate at point " + std::to_string(i));
    f(i, 0) = p[0];
    f(i, 1) = p[1];
    f(i, 2) = p[2];
    f(i, 3) = cloud.remission[i];
    f(i, 4) = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  }
  return f;
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

DownsampleResult voxel_downsample(const PointCloud& cloud, double resolution) {
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    fail(ErrorKind::Argument, "voxel_downsample: resolution must be positive");
  DownsampleResult result;
  result.index_map.resize(cloud.size());
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> voxels;
  voxels.reserve(cloud.size());
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p[0] / resolution)),
                       static_cast<std::int64_t>(std::floor(p[1] / resolution)),
                       static_cast<std::int64_t>(std::floor(p[2] / resolution))};
    auto [it, inserted] = voxels.try_emplace(key, kept.size());
    if (inserted) kept.push_back(i);
    result.index_map[i] = it->second;
  }
  result.cloud = select(cloud, kept);
  return result;
}

CropResult crop(const PointCloud& cloud, const CropBounds& bounds) {
  bounds.validate();
  CropResult result;
  result.keep.resize(cloud.size());
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    result.keep[i] = bounds.contains(cloud.coords[i]);
    if (result.keep[i]) kept.push_back(i);
  }
  result.cloud = select(cloud, kept);
  return result;
}

// ---------------------------------------------------------------------------
// k-d tree

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  std::vector<std::uint32_t> ids(points_.size());
  std::iota(ids.begin(), ids.end(), 0u);
  nodes_.reserve(points_.size());
  root_ = build(ids, 0);
}

std::int32_t KdTree::build(std::span<std::uint32_t> ids, int depth) {
  if (ids.empty()) return -1;
  // split on the axis of largest spread
  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  Vec3 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  for (auto id : ids) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], points_[id][a]);
      hi[a] = std::max(hi[a], points_[id][a]);
    }
  }
  std::uint8_t axis = 0;
  for (std::uint8_t a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  const std::size_t mid = ids.size() / 2;
  std::nth_element(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(mid), ids.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{ids[mid], -1, -1, axis});
  const std::int32_t left = build(ids.subspan(0, mid), depth + 1);
  const std::int32_t right = build(ids.subspan(mid + 1), depth + 1);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

namespace {

struct Candidate {
  double dist;
  std::uint32_t index;
  bool operator<(const Candidate& o) const { return dist < o.dist || (dist == o.dist && index < o.index); }
};

}  // namespace

std::vector<std::uint32_t> KdTree::nearest(const Vec3& query, std::size_t k, std::int64_t self) const {
  std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top
  if (k == 0 || root_ < 0) return {};

  auto visit = [&](auto&& rec, std::int32_t node_id) -> void {
    if (node_id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    const Vec3& p = points_[node.point];
    const double dx = p[0] - query[0], dy = p[1] - query[1], dz = p[2] - query[2];
    const double d = static_cast<std::int64_t>(node.point) == self ? -1.0 : dx * dx + dy * dy + dz * dz;
    const Candidate c{d, node.point};
    if (heap.size() < k) {
      heap.push(c);
    } else if (c < heap.top()) {
      heap.pop();
      heap.push(c);
    }
    const double diff = query[node.axis] - p[node.axis];
    const std::int32_t near_side = diff < 0 ? node.left : node.right;
    const std::int32_t far_side = diff < 0 ? node.right : node.left;
    rec(rec, near_side);
    // `<=` keeps equal-distance candidates with lower indices reachable
    if (heap.size() < k || diff * diff <= heap.top().dist) rec(rec, far_side);
  };
  visit(visit, root_);

  std::vector<std::uint32_t> out(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

NeighborTable knn(const PointCloud& cloud, std::size_t k) {
  if (k < 1) fail(ErrorKind::Argument, "knn: k must be >= 1");
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "knn: empty cloud");
  const KdTree tree(cloud.coords);
  NeighborTable table;
  table.k = k;
  table.indices.resize(cloud.size() * k);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto found = tree.nearest(cloud.coords[i], k, static_cast<std::int64_t>(i));
    for (std::size_t j = 0; j < k; ++j) {
      table.indices[i * k + j] = found[std::min(j, found.size() - 1)];
    }
  }
  return table;
}

std::vector<int> propagate_labels(const PointCloud& full, const PointCloud& processed,
                                  std::span<const int> predictions) {
  if (processed.empty()) fail(ErrorKind::EmptyInput, "propagate_labels: processed cloud is empty");
  if (predictions.size() != processed.size())
    fail(ErrorKind::Argument, "propagate_labels: prediction count differs from processed point count");
  const KdTree tree(processed.coords);
  std::vector<int> out(full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    out[i] = predictions[tree.nearest(full.coords[i], 1).front()];
  }
  return out;
}

}  // namespace ppnet
