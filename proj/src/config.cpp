#include "ppnet/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>

#include "ppnet/error.hpp"

namespace ppnet {

namespace fs = std::filesystem;

ClassMap DataConfig::make_class_map() const {
  if (class_map == "semantic_kitti") return ClassMap::semantic_kitti();
  if (class_map == "identity") return ClassMap::identity(static_cast<int>(num_classes), ignore_index);
  return ClassMap::parse(class_map, ignore_index);
}

void RunConfig::validate(bool check_paths) const {
  try {
    network.validate();
    preprocess.bounds.validate();
  } catch (const Error& e) {
    // grid and crop checks are shared with library callers; here the values came from a config
    if (e.kind() != ErrorKind::Argument) throw;
    fail(ErrorKind::Config, e.what());
  }
  loss.validate();
  optimizer.validate();
  if (!(preprocess.voxel_size > 0.0)) fail(ErrorKind::Config, "preprocess.voxel_size must be positive");
  if (data.num_classes < 2) fail(ErrorKind::Config, "data.num_classes must be at least 2");
  if (network.num_classes != data.num_classes) fail(ErrorKind::Config, "network.num_classes differs from data.num_classes");
  if (data.ignore_index >= static_cast<int>(data.num_classes))
    fail(ErrorKind::Config, "data.ignore_index outside [0, num_classes)");
  if (data.source == DataSource::Synthetic && (data.synthetic_train_scenes == 0 || data.synthetic_points == 0))
    fail(ErrorKind::Config, "synthetic data needs at least one scene and one point");
  if (data.make_class_map().num_classes() > static_cast<int>(data.num_classes))
    fail(ErrorKind::Config, "class map produces ids beyond data.num_classes");
  if (augment.global) augment.global_cfg.validate();
  if (augment.cutmix) {
    augment.cutmix_cfg.validate();
    if (augment.bank_dir.empty()) fail(ErrorKind::Config, "augment.cutmix requires augment.bank_dir");
  }
  if (check_paths) {
    if (data.source == DataSource::Kitti && !fs::is_directory(data.root))
      fail(ErrorKind::Config, "data.root does not exist: " + data.root.string());
    if (augment.cutmix && !fs::is_directory(augment.bank_dir))
      fail(ErrorKind::Config, "augment.bank_dir does not exist: " + augment.bank_dir.string());
  }
}

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&, const fs::path&)> set;
};

[[noreturn]] void bad_value(const std::string& value, const char* expected) {
  fail(ErrorKind::Config, "expected " + std::string(expected) + ", got '" + value + "'");
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) bad_value(s, "a finite number");
  return v;
}

std::size_t to_size(const std::string& s) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) bad_value(s, "a non-negative integer");
  return v;
}

int to_int(const std::string& s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) bad_value(s, "an integer");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) bad_value(s, "a non-negative integer");
  return v;
}

bool to_bool(const std::string& s) {
  const auto v = boost::algorithm::to_lower_copy(s);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(s, "a boolean");
}

std::vector<std::string> to_list(const std::string& s) {
  std::vector<std::string> parts;
  if (boost::algorithm::trim_copy(s).empty()) return parts;
  boost::algorithm::split(parts, s, boost::is_any_of(","));
  for (auto& p : parts) boost::algorithm::trim(p);
  return parts;
}

std::vector<int> to_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& p : to_list(s)) out.push_back(to_int(p));
  return out;
}

fs::path to_path(const std::string& s, const fs::path& base) {
  fs::path p(s);
  return p.is_absolute() || base.empty() ? p : base / p;
}

double deg(const std::string& s) { return to_double(s) * std::numbers::pi / 180.0; }

#define PP_FIELD(sec, name, expr) \
  Field { sec, name, [](RunConfig& c, const std::string& v, [[maybe_unused]] const fs::path& base) { expr; } }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      PP_FIELD("run", "seed", c.seed = to_u64(v)),
      PP_FIELD("run", "precision",
               if (v == "f32") c.precision = Precision::F32; else if (v == "f64") c.precision = Precision::F64;
               else bad_value(v, "f32 or f64")),
      PP_FIELD("run", "output_dir", c.output_dir = to_path(v, base)),

      PP_FIELD("data", "source",
               if (v == "kitti") c.data.source = DataSource::Kitti;
               else if (v == "synthetic") c.data.source = DataSource::Synthetic; else bad_value(v, "kitti or synthetic")),
      PP_FIELD("data", "root", c.data.root = to_path(v, base)),
      PP_FIELD("data", "train_sequences", c.data.train_sequences = to_list(v)),
      PP_FIELD("data", "val_sequences", c.data.val_sequences = to_list(v)),
      PP_FIELD("data", "class_map", c.data.class_map = v),
      PP_FIELD("data", "ignore_index", c.data.ignore_index = to_int(v)),
      PP_FIELD("data", "num_classes", c.data.num_classes = to_size(v)),
      PP_FIELD("data", "max_scans", c.data.max_scans = to_size(v)),
      PP_FIELD("data", "synthetic_train_scenes", c.data.synthetic_train_scenes = to_size(v)),
      PP_FIELD("data", "synthetic_val_scenes", c.data.synthetic_val_scenes = to_size(v)),
      PP_FIELD("data", "synthetic_points", c.data.synthetic_points = to_size(v)),

      PP_FIELD("preprocess", "voxel_size", c.preprocess.voxel_size = to_double(v)),
      PP_FIELD("preprocess", "x_min", c.preprocess.bounds.x_min = to_double(v)),
      PP_FIELD("preprocess", "x_max", c.preprocess.bounds.x_max = to_double(v)),
      PP_FIELD("preprocess", "y_min", c.preprocess.bounds.y_min = to_double(v)),
      PP_FIELD("preprocess", "y_max", c.preprocess.bounds.y_max = to_double(v)),
      PP_FIELD("preprocess", "z_min", c.preprocess.bounds.z_min = to_double(v)),
      PP_FIELD("preprocess", "z_max", c.preprocess.bounds.z_max = to_double(v)),

      PP_FIELD("grids", "cell_size", c.network.planes.cell_size = to_double(v)),
      PP_FIELD("grids", "polar_rho_min", c.network.planes.polar.rho_min = to_double(v)),
      PP_FIELD("grids", "polar_rho_max", c.network.planes.polar.rho_max = to_double(v)),
      PP_FIELD("grids", "polar_rings", c.network.planes.polar.rings = to_size(v)),
      PP_FIELD("grids", "polar_sectors", c.network.planes.polar.sectors = to_size(v)),
      PP_FIELD("grids", "range_height", c.network.planes.range.height = to_size(v)),
      PP_FIELD("grids", "range_width", c.network.planes.range.width = to_size(v)),
      PP_FIELD("grids", "range_fov_up_deg", c.network.planes.range.fov_up = deg(v)),
      PP_FIELD("grids", "range_fov_down_deg", c.network.planes.range.fov_down = deg(v)),

      PP_FIELD("network", "layers", c.network.layers = to_size(v)),
      PP_FIELD("network", "channels", c.network.channels = to_size(v)),
      PP_FIELD("network", "k_neighbors", c.network.k_neighbors = to_size(v)),
      PP_FIELD("network", "mlp_hidden", c.network.mlp_hidden = to_size(v)),
      PP_FIELD("network", "conv_hidden", c.network.conv_hidden = to_size(v)),
      PP_FIELD("network", "plane_order",
               const auto names = to_list(v);
               if (names.size() != kPlaneCount) bad_value(v, "five plane names");
               for (std::size_t i = 0; i < kPlaneCount; ++i) c.network.plane_order[i] = parse_plane_kind(names[i])),
      PP_FIELD("network", "bn_momentum", c.network.bn_momentum = to_double(v)),
      PP_FIELD("network", "bn_eps", c.network.bn_eps = to_double(v)),

      PP_FIELD("loss", "lambda", c.loss.lambda = to_double(v)),

      PP_FIELD("optimizer", "peak_lr", c.optimizer.peak_lr = to_double(v)),
      PP_FIELD("optimizer", "final_lr", c.optimizer.final_lr = to_double(v)),
      PP_FIELD("optimizer", "warmup_epochs", c.optimizer.warmup_epochs = to_size(v)),
      PP_FIELD("optimizer", "total_epochs", c.optimizer.total_epochs = to_size(v)),
      PP_FIELD("optimizer", "beta1", c.optimizer.beta1 = to_double(v)),
      PP_FIELD("optimizer", "beta2", c.optimizer.beta2 = to_double(v)),
      PP_FIELD("optimizer", "eps", c.optimizer.eps = to_double(v)),
      PP_FIELD("optimizer", "weight_decay", c.optimizer.weight_decay = to_double(v)),
      PP_FIELD("optimizer", "batch_size", c.optimizer.batch_size = to_size(v)),
      PP_FIELD("optimizer", "batch_mode",
               if (v == "concat") c.batch_mode = BatchMode::Concat;
               else if (v == "accumulate") c.batch_mode = BatchMode::Accumulate; else bad_value(v, "concat or accumulate")),

      PP_FIELD("augment", "global", c.augment.global = to_bool(v)),
      PP_FIELD("augment", "rotate_prob", c.augment.global_cfg.rotate_prob = to_double(v)),
      PP_FIELD("augment", "flip_x_prob", c.augment.global_cfg.flip_x_prob = to_double(v)),
      PP_FIELD("augment", "flip_y_prob", c.augment.global_cfg.flip_y_prob = to_double(v)),
      PP_FIELD("augment", "scale_prob", c.augment.global_cfg.scale_prob = to_double(v)),
      PP_FIELD("augment", "scale_min", c.augment.global_cfg.scale_min = to_double(v)),
      PP_FIELD("augment", "scale_max", c.augment.global_cfg.scale_max = to_double(v)),
      PP_FIELD("augment", "cutmix", c.augment.cutmix = to_bool(v)),
      PP_FIELD("augment", "bank_dir", c.augment.bank_dir = to_path(v, base)),
      PP_FIELD("augment", "rare_classes", c.augment.cutmix_cfg.rare_classes = to_int_list(v)),
      PP_FIELD("augment", "ground_classes", c.augment.cutmix_cfg.ground_classes = to_int_list(v)),
      PP_FIELD("augment", "max_paste", c.augment.cutmix_cfg.max_paste = to_size(v)),
      PP_FIELD("augment", "vertical_fov_step", c.augment.cutmix_cfg.vertical_fov_step = to_double(v)),
      PP_FIELD("augment", "rate_min", c.augment.cutmix_cfg.rate_min = to_double(v)),
      PP_FIELD("augment", "rate_max", c.augment.cutmix_cfg.rate_max = to_double(v)),
      PP_FIELD("augment", "min_instance_points", c.augment.cutmix_cfg.min_instance_points = to_size(v)),
      PP_FIELD("augment", "max_retries", c.augment.cutmix_cfg.max_retries = to_size(v)),
  };
  return fields;
}

#undef PP_FIELD

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : schema()) keys.push_back(std::string(f.section) + "." + f.key);
  return keys;
}

RunConfig parse_run_config(std::istream& in, const fs::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::Config, std::string("config syntax: ") + e.what());
  }

  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(ErrorKind::Config, "key '" + section + "' outside any section");
    for (const auto& [key, node] : body) {
      const Field* field = nullptr;
      for (const auto& f : schema())
        if (section == f.section && key == f.key) field = &f;
      if (field == nullptr) fail(ErrorKind::Config, "unknown config key '" + section + "." + key + "'");
      const auto value = boost::algorithm::trim_copy(node.get_value<std::string>());
      try {
        field->set(cfg, value, base_dir);
      } catch (const Error& e) {
        fail(ErrorKind::Config, section + "." + key + ": " + e.what());
      }
    }
  }

  cfg.network.num_classes = cfg.data.num_classes;
  cfg.network.planes.bounds = cfg.preprocess.bounds;
  cfg.loss.ignore_index = cfg.data.ignore_index >= 0 ? std::optional<int>(cfg.data.ignore_index) : std::nullopt;
  return cfg;
}

RunConfig load_run_config(const fs::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  auto cfg = parse_run_config(in, path.parent_path());
  cfg.validate(check_paths);
  return cfg;
}

}  // namespace ppnet
