#include "ppnet/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace ppnet {

void GlobalAugmentConfig::validate() const {
  for (double p : {rotate_prob, flip_x_prob, flip_y_prob, scale_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Config, "augment: probabilities must lie in [0,1]");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max)) fail(ErrorKind::Config, "augment: need 0 < scale_min <= scale_max");
}

GlobalTransform draw_global_transform(Rng& rng, const GlobalAugmentConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GlobalTransform t;
  // every draw is consumed whether or not it is applied, so one RNG state
  // always advances by the same amount
  const double r_rot = unit(rng), theta = unit(rng) * 2.0 * std::numbers::pi;
  const double r_fx = unit(rng), r_fy = unit(rng);
  const double r_scale = unit(rng), s = cfg.scale_min + unit(rng) * (cfg.scale_max - cfg.scale_min);
  if (r_rot < cfg.rotate_prob) t.theta = theta;
  t.flip_x = r_fx < cfg.flip_x_prob;
  t.flip_y = r_fy < cfg.flip_y_prob;
  if (r_scale < cfg.scale_prob) t.scale = s;
  return t;
}

PointCloud apply_global_transform(const PointCloud& cloud, const GlobalTransform& t) {
  PointCloud out = cloud;
  const double c = std::cos(t.theta), s = std::sin(t.theta);
  for (auto& p : out.coords) {
    const double x = c * p[0] - s * p[1];
    const double y = s * p[0] + c * p[1];
    p[0] = (t.flip_x ? -x : x) * t.scale;
    p[1] = (t.flip_y ? -y : y) * t.scale;
    p[2] *= t.scale;
  }
  return out;
}

PointCloud global_augment(const PointCloud& cloud, Rng& rng, const GlobalAugmentConfig& cfg) {
  return apply_global_transform(cloud, draw_global_transform(rng, cfg));
}

void CutMixConfig::validate() const {
  if (!(rate_min <= 1.0 && 1.0 <= rate_max && rate_min > 0.0)) fail(ErrorKind::Config, "cutmix: need 0 < rate_min <= 1 <= rate_max");
  if (!(vertical_fov_step > 0.0)) fail(ErrorKind::Config, "cutmix: vertical_fov_step must be positive");
  if (min_instance_points == 0) fail(ErrorKind::Config, "cutmix: min_instance_points must be >= 1");
}

bool CutMixConfig::is_rare(int c) const { return std::find(rare_classes.begin(), rare_classes.end(), c) != rare_classes.end(); }

bool CutMixConfig::is_ground(int c) const {
  return std::find(ground_classes.begin(), ground_classes.end(), c) != ground_classes.end();
}

std::vector<InstanceRecord> extract_instances(const PointCloud& cloud, const CutMixConfig& cfg, const std::string& source_id) {
  if (!cloud.has_labels()) fail(ErrorKind::Argument, "extract_instances: cloud has no labels");
  if (!cloud.has_instances() && !cloud.empty())
    fail(ErrorKind::Argument, "extract_instances: cloud has no instance ids (instance-level labels unavailable)");

  std::map<std::pair<int, std::uint32_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.instance_ids[i] == 0 || !cfg.is_rare(cloud.labels[i])) continue;
    groups[{cloud.labels[i], cloud.instance_ids[i]}].push_back(i);
  }

  std::vector<InstanceRecord> out;
  for (const auto& [key, idx] : groups) {
    if (idx.size() < cfg.min_instance_points) continue;
    InstanceRecord rec;
    rec.class_id = key.first;
    rec.source_id = source_id.empty() ? std::string() : source_id + "#" + std::to_string(key.second);
    Vec3 centroid{0, 0, 0};
    double z_min = std::numeric_limits<double>::max();
    for (auto i : idx) {
      for (int a = 0; a < 3; ++a) centroid[a] += cloud.coords[i][a];
      z_min = std::min(z_min, cloud.coords[i][2]);
    }
    for (auto& c : centroid) c /= static_cast<double>(idx.size());
    rec.source_distance = std::sqrt(centroid[0] * centroid[0] + centroid[1] * centroid[1] + centroid[2] * centroid[2]);
    for (auto i : idx) {
      const auto& p = cloud.coords[i];
      rec.points.push_back({p[0] - centroid[0], p[1] - centroid[1], p[2] - z_min});
      rec.remission.push_back(cloud.remission[i]);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

BeamGroups beam_quantize(const InstanceRecord& instance, double distance, const CutMixConfig& cfg) {
  if (!(distance > 0.0)) fail(ErrorKind::Argument, "beam_quantize: distance must be positive");
  BeamGroups g;
  g.bin_height = distance * std::tan(cfg.vertical_fov_step);
  std::map<std::int64_t, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < instance.points.size(); ++i) {
    // slack so a point sitting on a bin edge (0.3 / 0.1) lands in the upper bin
    bins[static_cast<std::int64_t>(std::floor(instance.points[i][2] / g.bin_height + 1e-9))].push_back(i);
  }
  for (auto& [bin, idx] : bins) {
    g.bins.push_back(bin);
    g.groups.push_back(std::move(idx));
  }
  return g;
}

namespace {

std::size_t ceil_count(double x) {
  // absorbs representation error such as (2.0 - 1.0) * 3 landing at 3.0000000000000004
  return static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9)));
}

}  // namespace

InstanceRecord resample_instance(const InstanceRecord& instance, double target_distance, const CutMixConfig& cfg,
                                 Rng& rng, std::optional<double> rate_override) {
  if (instance.points.empty()) fail(ErrorKind::EmptyInput, "resample_instance: empty instance");
  if (!(target_distance > 0.0)) fail(ErrorKind::Argument, "resample_instance: target distance must be positive");
  if (!(instance.source_distance > 0.0)) fail(ErrorKind::Argument, "resample_instance: instance has no source distance");

  const double rate =
      rate_override ? *rate_override : std::clamp(instance.source_distance / target_distance, cfg.rate_min, cfg.rate_max);
  InstanceRecord out = instance;
  out.source_distance = target_distance;
  if (rate == 1.0) return out;

  const BeamGroups beams = beam_quantize(instance, instance.source_distance, cfg);
  const std::size_t g = beams.groups.size();
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  if (rate > 1.0) {
    const std::size_t n = std::min(g, ceil_count((rate - 1.0) * static_cast<double>(g)));
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(chosen.begin(), chosen.end());
    const double shift = 0.5 * beams.bin_height;
    for (auto gi : chosen) {
      for (auto i : beams.groups[gi]) {
        const auto& p = instance.points[i];
        out.points.push_back({p[0], p[1], p[2] + shift});
        out.remission.push_back(instance.remission[i]);
      }
    }
    return out;
  }

  const std::size_t n = std::min(g - 1, ceil_count((1.0 - rate) * static_cast<double>(g)));
  std::vector<std::uint8_t> drop(instance.points.size(), 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (auto i : beams.groups[order[r]]) drop[i] = 1;
  }
  out.points.clear();
  out.remission.clear();
  for (std::size_t i = 0; i < instance.points.size(); ++i) {
    if (drop[i]) continue;
    out.points.push_back(instance.points[i]);
    out.remission.push_back(instance.remission[i]);
  }
  return out;
}

PasteResult paste_instances(const PointCloud& scene, const std::vector<InstanceRecord>& bank, const CutMixConfig& cfg,
                            Rng& rng) {
  PasteResult result;
  result.cloud = scene;
  if (cfg.max_paste == 0) return result;
  if (!scene.has_labels() && !scene.empty()) fail(ErrorKind::Argument, "paste_instances: scene has no labels");
  if (bank.empty()) fail(ErrorKind::Argument, "paste_instances: instance bank is empty");

  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (cfg.is_ground(scene.labels[i])) anchors.push_back(i);
  }
  if (anchors.empty()) {
    result.no_ground = true;
    return result;
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (cfg.rare_classes.empty() || cfg.is_rare(bank[i].class_id)) by_class[bank[i].class_id].push_back(i);
  }
  if (by_class.empty()) return result;
  std::vector<int> classes;
  for (const auto& [c, _] : by_class) classes.push_back(c);

  std::uint32_t next_instance = 1;
  if (scene.has_instances()) {
    for (auto id : scene.instance_ids) next_instance = std::max(next_instance, id + 1);
  }
  const bool with_instances = scene.has_instances() || scene.empty();

  struct Footprint {
    double x, y, radius;
  };
  std::vector<Footprint> placed;
  std::uniform_real_distribution<double> yaw_dist(0.0, 2.0 * std::numbers::pi);

  for (std::size_t k = 0; k < cfg.max_paste; ++k) {
    const int cls = classes[std::uniform_int_distribution<std::size_t>(0, classes.size() - 1)(rng)];
    const auto& members = by_class[cls];
    const InstanceRecord& inst = bank[members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)]];

    for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
      const Vec3& anchor = scene.coords[anchors[std::uniform_int_distribution<std::size_t>(0, anchors.size() - 1)(rng)]];
      const double yaw = yaw_dist(rng);
      const double range = std::sqrt(anchor[0] * anchor[0] + anchor[1] * anchor[1] + anchor[2] * anchor[2]);
      if (!(range > 0.0)) continue;
      InstanceRecord res = resample_instance(inst, range, cfg, rng);

      const double c = std::cos(yaw), s = std::sin(yaw);
      double cx = 0, cy = 0, z_min = std::numeric_limits<double>::max();
      for (auto& p : res.points) {
        const double x = c * p[0] - s * p[1], y = s * p[0] + c * p[1];
        p[0] = x, p[1] = y;
        cx += x, cy += y;
        z_min = std::min(z_min, p[2]);
      }
      cx /= static_cast<double>(res.points.size());
      cy /= static_cast<double>(res.points.size());
      double radius = 0.0;
      for (auto& p : res.points) {
        p[0] -= cx, p[1] -= cy;
        radius = std::max(radius, std::hypot(p[0], p[1]));
      }
      const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const Footprint& f) {
        return std::hypot(f.x - anchor[0], f.y - anchor[1]) < f.radius + radius;
      });
      if (overlaps) continue;

      placed.push_back({anchor[0], anchor[1], radius});
      for (std::size_t i = 0; i < res.points.size(); ++i) {
        const auto& p = res.points[i];
        result.cloud.coords.push_back({p[0] + anchor[0], p[1] + anchor[1], p[2] - z_min + anchor[2]});
        result.cloud.remission.push_back(res.remission[i]);
        result.cloud.labels.push_back(inst.class_id);
        if (with_instances) result.cloud.instance_ids.push_back(next_instance);
      }
      ++next_instance;
      ++result.pasted;
      break;
    }
  }
  return result;
}

}  // namespace ppnet
