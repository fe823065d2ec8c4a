#include "ppnet/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace ppnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Class map

ClassMap::ClassMap(std::map<std::uint32_t, int> raw_to_train, int ignore_id, std::map<int, std::uint32_t> train_to_raw)
    : forward_(std::move(raw_to_train)), inverse_(std::move(train_to_raw)), ignore_(ignore_id) {
  if (inverse_.empty()) {
    // first raw id (ascending) mapping to each training id
    for (const auto& [raw, train] : forward_) inverse_.try_emplace(train, raw);
  }
}

ClassMap ClassMap::semantic_kitti() {
  std::map<std::uint32_t, int> fwd{
      {0, 0},    {1, 0},    {10, 1},   {11, 2},   {13, 5},   {15, 3},   {16, 5},   {18, 4},   {20, 5},
      {30, 6},   {31, 7},   {32, 8},   {40, 9},   {44, 10},  {48, 11},  {49, 12},  {50, 13},  {51, 14},
      {52, 0},   {60, 9},   {70, 15},  {71, 16},  {72, 17},  {80, 18},  {81, 19},  {99, 0},   {252, 1},
      {253, 7},  {254, 6},  {255, 8},  {256, 5},  {257, 5},  {258, 4},  {259, 5}};
  std::map<int, std::uint32_t> inv{{0, 0},   {1, 10},  {2, 11},  {3, 15},  {4, 18},  {5, 20},  {6, 30},
                                   {7, 31},  {8, 32},  {9, 40},  {10, 44}, {11, 48}, {12, 49}, {13, 50},
                                   {14, 51}, {15, 70}, {16, 71}, {17, 72}, {18, 80}, {19, 81}};
  return ClassMap(std::move(fwd), 0, std::move(inv));
}

ClassMap ClassMap::identity(int num_classes, int ignore_id) {
  std::map<std::uint32_t, int> fwd;
  for (int c = 0; c < num_classes; ++c) fwd[static_cast<std::uint32_t>(c)] = c;
  return ClassMap(std::move(fwd), ignore_id);
}

ClassMap ClassMap::parse(const std::string& text, int ignore_id) {
  std::map<std::uint32_t, int> fwd;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorKind::Config, "class map entry '" + item + "' is not raw:train");
    try {
      const auto raw = static_cast<std::uint32_t>(std::stoul(item.substr(0, colon)));
      const int train = std::stoi(item.substr(colon + 1));
      if (!fwd.emplace(raw, train).second) fail(ErrorKind::Config, "class map lists raw id " + std::to_string(raw) + " twice");
    } catch (const std::logic_error&) {
      fail(ErrorKind::Config, "class map entry '" + item + "' is not numeric");
    }
  }
  if (fwd.empty()) fail(ErrorKind::Config, "class map is empty");
  return ClassMap(std::move(fwd), ignore_id);
}

int ClassMap::to_train(std::uint32_t raw) const {
  const auto it = forward_.find(raw);
  return it == forward_.end() ? ignore_ : it->second;
}

std::uint32_t ClassMap::to_raw(int train) const {
  const auto it = inverse_.find(train);
  if (it == inverse_.end()) fail(ErrorKind::Argument, "no raw label id for training class " + std::to_string(train));
  return it->second;
}

int ClassMap::num_classes() const {
  int n = ignore_ + 1;
  for (const auto& [raw, train] : forward_) n = std::max(n, train + 1);
  return n;
}

std::string ClassMap::to_string() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [raw, train] : forward_) {
    os << (first ? "" : ",") << raw << ':' << train;
    first = false;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Binary records

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

std::vector<std::uint32_t> read_words(const fs::path& path, std::size_t record_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % record_bytes != 0) {
    fail(ErrorKind::Format, path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                                std::to_string(record_bytes) + " bytes; trailing record starts at byte offset " +
                                std::to_string(bytes.size() - bytes.size() % record_bytes));
  }
  std::vector<std::uint32_t> words(bytes.size() / 4);
  std::memcpy(words.data(), bytes.data(), bytes.size());
  for (auto& w : words) w = to_le(w);
  return words;
}

void write_words(const fs::path& path, const std::vector<std::uint32_t>& words) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (auto w : words) {
    const std::uint32_t le = to_le(w);
    out.write(reinterpret_cast<const char*>(&le), sizeof le);
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

PointCloud read_scan(const fs::path& path) {
  const auto words = read_words(path, 16);
  PointCloud cloud;
  const std::size_t n = words.size() / 4;
  cloud.coords.resize(n);
  cloud.remission.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) cloud.coords[i][a] = std::bit_cast<float>(words[i * 4 + a]);
    cloud.remission[i] = std::bit_cast<float>(words[i * 4 + 3]);
  }
  return cloud;
}

void write_scan(const fs::path& path, const PointCloud& cloud) {
  std::vector<std::uint32_t> words;
  words.reserve(cloud.size() * 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) words.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(cloud.coords[i][a])));
    words.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(cloud.remission[i])));
  }
  write_words(path, words);
}

LabelData read_labels(const fs::path& path, const ClassMap& class_map) {
  const auto words = read_words(path, 4);
  LabelData out;
  out.semantic.reserve(words.size());
  for (auto w : words) {
    const std::uint32_t raw = w & 0xffffu;
    out.raw.push_back(raw);
    out.semantic.push_back(class_map.to_train(raw));
    out.instance.push_back(w >> 16);
  }
  return out;
}

LabelData read_labels(const fs::path& path, const ClassMap& class_map, std::size_t expected_points) {
  auto out = read_labels(path, class_map);
  if (out.semantic.size() != expected_points)
    fail(ErrorKind::Format, path.string() + ": " + std::to_string(out.semantic.size()) + " labels for " +
                                std::to_string(expected_points) + " points");
  return out;
}

void write_raw_labels(const fs::path& path, std::span<const std::uint32_t> semantic_raw, std::span<const std::uint32_t> instance) {
  if (!instance.empty() && instance.size() != semantic_raw.size())
    fail(ErrorKind::Argument, "write_raw_labels: instance count differs from label count");
  std::vector<std::uint32_t> words(semantic_raw.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (semantic_raw[i] > 0xffffu || (!instance.empty() && instance[i] > 0xffffu))
      fail(ErrorKind::Argument, "write_raw_labels: id does not fit in 16 bits");
    words[i] = (semantic_raw[i] & 0xffffu) | ((instance.empty() ? 0u : instance[i]) << 16);
  }
  write_words(path, words);
}

void write_predictions(const fs::path& path, std::span<const int> predictions, const ClassMap& class_map) {
  std::vector<std::uint32_t> raw(predictions.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = class_map.to_raw(predictions[i]);
  write_raw_labels(path, raw, {});
}

PointCloud load_labeled_scan(const fs::path& scan_path, const fs::path& labels_path, const ClassMap& class_map) {
  PointCloud cloud = read_scan(scan_path);
  if (!labels_path.empty()) {
    auto labels = read_labels(labels_path, class_map, cloud.size());
    cloud.labels = std::move(labels.semantic);
    cloud.instance_ids = std::move(labels.instance);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SceneSpec::validate() const {
  for (const auto& g : grounds) {
    if (!(g.inner_radius >= 0.0 && g.inner_radius < g.outer_radius)) fail(ErrorKind::Argument, "scene: bad ground radii");
  }
  for (const auto& b : boxes) {
    if (!(b.size[0] > 0 && b.size[1] > 0 && b.size[2] > 0)) fail(ErrorKind::Argument, "scene: box sizes must be positive");
  }
  for (const auto& c : cylinders) {
    if (!(c.radius > 0 && c.height > 0)) fail(ErrorKind::Argument, "scene: cylinder radius/height must be positive");
  }
  if (!(noise >= 0.0)) fail(ErrorKind::Argument, "scene: noise must be >= 0");
}

PointCloud synth_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  auto noisy = [&](double v) { return v + spec.noise * jitter(rng); };

  PointCloud cloud;
  for (const auto& g : spec.grounds) {
    const double r0 = g.inner_radius * g.inner_radius, r1 = g.outer_radius * g.outer_radius;
    for (std::size_t i = 0; i < g.points; ++i) {
      const double r = std::sqrt(r0 + unit(rng) * (r1 - r0));
      const double a = unit(rng) * 2.0 * std::numbers::pi;
      cloud.coords.push_back({r * std::cos(a), r * std::sin(a), noisy(g.z)});
      cloud.remission.push_back(0.1 + 0.2 * unit(rng));
      cloud.labels.push_back(g.class_id);
      cloud.instance_ids.push_back(0);
    }
  }
  std::uint32_t instance = 1;
  for (const auto& b : spec.boxes) {
    const double sx = b.size[0], sy = b.size[1], sz = b.size[2];
    // side faces and roof, sampled by area
    const double areas[5] = {sy * sz, sy * sz, sx * sz, sx * sz, sx * sy};
    const double total = areas[0] + areas[1] + areas[2] + areas[3] + areas[4];
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    for (std::size_t i = 0; i < b.points; ++i) {
      double pick = unit(rng) * total;
      int face = 0;
      while (face < 4 && pick > areas[face]) pick -= areas[face++];
      const double u = unit(rng) - 0.5, v = unit(rng) - 0.5, w = unit(rng);
      double lx = 0, ly = 0, lz = 0;
      switch (face) {
        case 0: lx = -0.5 * sx, ly = u * sy, lz = w * sz; break;
        case 1: lx = 0.5 * sx, ly = u * sy, lz = w * sz; break;
        case 2: lx = u * sx, ly = -0.5 * sy, lz = w * sz; break;
        case 3: lx = u * sx, ly = 0.5 * sy, lz = w * sz; break;
        default: lx = u * sx, ly = v * sy, lz = sz; break;
      }
      cloud.coords.push_back({noisy(b.center[0] + c * lx - s * ly), noisy(b.center[1] + s * lx + c * ly), noisy(b.center[2] + lz)});
      cloud.remission.push_back(0.5 + 0.3 * unit(rng));
      cloud.labels.push_back(b.class_id);
      cloud.instance_ids.push_back(instance);
    }
    ++instance;
  }
  for (const auto& cyl : spec.cylinders) {
    for (std::size_t i = 0; i < cyl.points; ++i) {
      const double a = unit(rng) * 2.0 * std::numbers::pi;
      const double h = unit(rng) * cyl.height;
      cloud.coords.push_back({noisy(cyl.base[0] + cyl.radius * std::cos(a)), noisy(cyl.base[1] + cyl.radius * std::sin(a)),
                              noisy(cyl.base[2] + h)});
      cloud.remission.push_back(0.3 + 0.2 * unit(rng));
      cloud.labels.push_back(cyl.class_id);
      cloud.instance_ids.push_back(instance);
    }
    ++instance;
  }
  return cloud;
}

SceneSpec random_scene_spec(std::uint64_t seed, std::size_t total_points) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneSpec spec;
  const double ground_z = -1.7;
  const std::size_t ground = total_points / 2;
  spec.grounds.push_back({ground, 2.0, 25.0, ground_z, 9});
  const std::size_t cars = 3, people = 2, poles = 2;
  const std::size_t objects = cars + people + poles;
  const std::size_t per_object = (total_points - ground) / objects;
  auto place = [&](double min_r, double max_r) {
    const double r = min_r + unit(rng) * (max_r - min_r);
    const double a = unit(rng) * 2.0 * std::numbers::pi;
    return Vec3{r * std::cos(a), r * std::sin(a), ground_z};
  };
  for (std::size_t i = 0; i < cars; ++i) {
    spec.boxes.push_back({place(5.0, 20.0), {4.2, 1.8, 1.5}, unit(rng) * std::numbers::pi, per_object, 1});
  }
  for (std::size_t i = 0; i < people; ++i) spec.cylinders.push_back({place(4.0, 15.0), 0.3, 1.75, per_object, 6});
  for (std::size_t i = 0; i < poles; ++i) spec.cylinders.push_back({place(4.0, 20.0), 0.12, 3.2, per_object, 18});
  // remainder goes to the ground so the budget is met exactly
  spec.grounds.front().points += total_points - ground - per_object * objects;
  return spec;
}

// ---------------------------------------------------------------------------
// Instance bank

void save_instance_bank(const fs::path& dir, const std::vector<InstanceRecord>& bank) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) fail(ErrorKind::Io, "cannot write " + (dir / "manifest.csv").string());
  manifest << "file,class_id,points,source_distance,source_id\n";
  for (std::size_t i = 0; i < bank.size(); ++i) {
    std::ostringstream name;
    name << "instance_" << std::setw(6) << std::setfill('0') << i << ".bin";
    PointCloud cloud;
    cloud.coords = bank[i].points;
    cloud.remission = bank[i].remission;
    write_scan(dir / name.str(), cloud);
    manifest << name.str() << ',' << bank[i].class_id << ',' << bank[i].size() << ',' << std::setprecision(17)
             << bank[i].source_distance << ',' << bank[i].source_id << '\n';
  }
}

std::vector<InstanceRecord> load_instance_bank(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) fail(ErrorKind::Io, "cannot open " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(manifest, line);
  if (line != "file,class_id,points,source_distance,source_id") fail(ErrorKind::Format, "instance bank manifest has an unexpected header");
  std::vector<InstanceRecord> bank;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (fields.size() < 4 && std::getline(ss, f, ',')) fields.push_back(f);
    std::getline(ss, f);
    fields.push_back(f);
    if (fields.size() != 5) fail(ErrorKind::Format, "instance bank manifest line malformed: " + line);
    InstanceRecord rec;
    try {
      rec.class_id = std::stoi(fields[1]);
      rec.source_distance = std::stod(fields[3]);
      const auto cloud = read_scan(dir / fields[0]);
      if (cloud.size() != std::stoul(fields[2])) fail(ErrorKind::Format, fields[0] + ": point count differs from manifest");
      rec.points = cloud.coords;
      rec.remission = cloud.remission;
    } catch (const std::logic_error&) {
      fail(ErrorKind::Format, "instance bank manifest line malformed: " + line);
    }
    rec.source_id = fields[4];
    bank.push_back(std::move(rec));
  }
  return bank;
}

}  // namespace ppnet
