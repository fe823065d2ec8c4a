#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ppnet/augmentation.hpp"
#include "ppnet/config.hpp"
#include "ppnet/dataio.hpp"
#include "ppnet/error.hpp"
#include "ppnet/gradcheck_suite.hpp"
#include "ppnet/projection.hpp"
#include "ppnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace ppnet;

namespace {

// Exit codes; 1 is reserved for unexpected failures.
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;
constexpr int kExitFormat = 5;
constexpr int kExitNumeric = 6;
constexpr int kExitEmpty = 7;
constexpr int kExitCheckFailed = 8;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return kExitUsage;
    case ErrorKind::Config: return kExitConfig;
    case ErrorKind::Io: return kExitIo;
    case ErrorKind::Format: return kExitFormat;
    case ErrorKind::Numeric: return kExitNumeric;
    case ErrorKind::EmptyInput: return kExitEmpty;
  }
  return 1;
}

void setup_logging() {
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  if (const char* level = std::getenv("PPNET_LOG_LEVEL")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only honor an explicit "off"
    if (parsed != spdlog::level::off || std::string(level) == "off") spdlog::set_level(parsed);
    else spdlog::warn("ignoring unknown PPNET_LOG_LEVEL '{}'", level);
  }
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path, false);
}

void write_pgm(const fs::path& path, const PlaneGrid& grid, std::size_t channel) {
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t c = 0; c < grid.dims.cells(); ++c) {
    if (!grid.occupancy[c]) continue;
    const double v = grid.cell(c)[channel];
    lo = any ? std::min(lo, v) : v;
    hi = any ? std::max(hi, v) : v;
    any = true;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "P5\n" << grid.dims.cols << ' ' << grid.dims.rows << "\n255\n";
  for (std::size_t c = 0; c < grid.dims.cells(); ++c) {
    unsigned char px = 0;  // empty cells stay black
    if (grid.occupancy[c]) {
      const double t = hi > lo ? (grid.cell(c)[channel] - lo) / (hi - lo) : 1.0;
      px = static_cast<unsigned char>(1 + std::lround(t * 254.0));
    }
    out.put(static_cast<char>(px));
  }
}

void write_grid_csv(const fs::path& path, const PlaneGrid& grid) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "row,col,count,x,y,z,remission,range\n";
  for (std::size_t c = 0; c < grid.dims.cells(); ++c) {
    if (!grid.occupancy[c]) continue;
    out << c / grid.dims.cols << ',' << c % grid.dims.cols << ',' << grid.occupancy[c];
    for (double v : grid.cell(c)) out << ',' << v;
    out << '\n';
  }
}

int cmd_project(const std::string& scan, const std::string& plane, const std::string& out_path,
                const std::string& config_path, std::size_t channel) {
  const auto cfg = config_or_default(config_path);
  const auto kind = parse_plane_kind(plane);
  if (channel >= 5) fail(ErrorKind::Argument, "--channel must be in [0, 5)");
  auto cloud = crop(read_scan(scan), cfg.preprocess.bounds).cloud;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.coords[i] != Vec3{0, 0, 0}) keep.push_back(i);
  cloud = select(cloud, keep);
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "no points inside the crop bounds");
  const auto grid = project(build_features(cloud), cloud, kind, cfg.network.planes);

  const fs::path out(out_path);
  if (out.extension() == ".pgm") write_pgm(out, grid, channel);
  else if (out.extension() == ".csv") write_grid_csv(out, grid);
  else fail(ErrorKind::Argument, "--out must end in .csv or .pgm");
  std::size_t occupied = 0;
  for (auto o : grid.occupancy) occupied += o > 0;
  spdlog::info("{} grid {}x{}: {} points in {} cells -> {}", to_string(kind), grid.dims.rows, grid.dims.cols,
               cloud.size(), occupied, out.string());
  return 0;
}

std::vector<fs::path> sequence_scans(const fs::path& seq) {
  std::vector<fs::path> scans;
  const fs::path dir = seq / "velodyne";
  if (!fs::is_directory(dir)) fail(ErrorKind::Io, "missing " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".bin") scans.push_back(e.path());
  std::sort(scans.begin(), scans.end());
  return scans;
}

fs::path labels_for(const fs::path& seq, const fs::path& scan) {
  return seq / "labels" / (scan.stem().string() + ".label");
}

int cmd_augment(const fs::path& seq, const fs::path& bank_dir, const std::string& out_dir, const std::string& config_path,
                std::uint64_t seed, bool extract) {
  const auto cfg = config_or_default(config_path);
  const auto class_map = cfg.data.make_class_map();
  const auto scans = sequence_scans(seq);

  if (extract) {
    std::vector<InstanceRecord> bank;
    for (const auto& scan : scans) {
      const auto cloud = load_labeled_scan(scan, labels_for(seq, scan), class_map);
      auto found = extract_instances(cloud, cfg.augment.cutmix_cfg, seq.filename().string() + "/" + scan.stem().string());
      bank.insert(bank.end(), std::make_move_iterator(found.begin()), std::make_move_iterator(found.end()));
    }
    save_instance_bank(bank_dir, bank);
    spdlog::info("extracted {} instances from {} scans into {}", bank.size(), scans.size(), bank_dir.string());
    return 0;
  }

  if (out_dir.empty()) fail(ErrorKind::Argument, "--out is required unless --extract is given");
  const auto bank = load_instance_bank(bank_dir);
  const fs::path out(out_dir);
  fs::create_directories(out / "velodyne");
  fs::create_directories(out / "labels");
  Rng rng(seed);
  std::size_t pasted = 0;
  for (const auto& scan : scans) {
    const auto cloud = load_labeled_scan(scan, labels_for(seq, scan), class_map);
    auto aug = cfg.augment.global ? global_augment(cloud, rng, cfg.augment.global_cfg) : cloud;
    const auto result = paste_instances(aug, bank, cfg.augment.cutmix_cfg, rng);
    if (result.no_ground) spdlog::warn("{}: no ground points, nothing pasted", scan.filename().string());
    pasted += result.pasted;
    write_scan(out / "velodyne" / scan.filename(), result.cloud);
    std::vector<std::uint32_t> raw(result.cloud.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = class_map.to_raw(result.cloud.labels[i]);
    write_raw_labels(out / "labels" / (scan.stem().string() + ".label"), raw, result.cloud.instance_ids);
  }
  spdlog::info("augmented {} scans, {} instances pasted -> {}", scans.size(), pasted, out.string());
  return 0;
}

int cmd_synth(const fs::path& out, std::size_t scenes, std::size_t points, std::uint64_t seed) {
  const auto class_map = ClassMap::semantic_kitti();
  fs::create_directories(out / "velodyne");
  fs::create_directories(out / "labels");
  for (std::size_t i = 0; i < scenes; ++i) {
    const auto cloud = synth_scene(random_scene_spec(seed + i, points), seed + i);
    const std::string name = fmt::format("{:06}", i);
    write_scan(out / "velodyne" / (name + ".bin"), cloud);
    std::vector<std::uint32_t> raw(cloud.size());
    for (std::size_t p = 0; p < raw.size(); ++p) raw[p] = class_map.to_raw(cloud.labels[p]);
    write_raw_labels(out / "labels" / (name + ".label"), raw, cloud.instance_ids);
  }
  spdlog::info("wrote {} synthetic scans to {}", scenes, out.string());
  return 0;
}

int cmd_train(const std::string& config_path) {
  const auto cfg = load_run_config(config_path);
  const auto summary = train(cfg);
  std::cout << "best mIoU " << summary.best_miou << "\ncheckpoint " << summary.checkpoint.string() << "\nlog "
            << summary.log.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& write_labels) {
  const auto cfg = load_run_config(config_path);
  EvalOptions options;
  if (!write_labels.empty()) options.write_labels = write_labels;
  const auto report = evaluate_checkpoint(cfg, checkpoint, options);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.network.num_classes; ++c) names.push_back(std::to_string(c));
  write_report_table(std::cout, report, names);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  auto cases = op_gradcheck_suite(seed);
  for (auto& c : network_gradcheck(seed)) cases.push_back(std::move(c));
  bool ok = true;
  for (const auto& c : cases) {
    std::printf("%-22s %.3e  (tol %.0e, %zu probes, %zu kinks redrawn)  %s\n", c.name.c_str(), c.error, c.tolerance,
                c.probes, c.kinks_skipped, c.passed() ? "ok" : "FAIL");
    ok = ok && c.passed();
  }
  return ok ? 0 : kExitCheckFailed;
}

int cmd_check_config(const std::string& config_path, bool check_paths) {
  const auto cfg = load_run_config(config_path, check_paths);
  std::cout << "config ok: " << (cfg.data.source == DataSource::Kitti ? "kitti" : "synthetic") << " data, "
            << cfg.network.layers << " layers x " << cfg.network.channels << " channels, " << cfg.network.num_classes
            << " classes, " << cfg.optimizer.total_epochs << " epochs, "
            << (cfg.precision == Precision::F64 ? "f64" : "f32") << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Point-plane projection network for LiDAR semantic segmentation"};
  app.require_subcommand(1);

  std::string scan, plane = "xy", out, config, checkpoint, write_labels, bank;
  std::size_t channel = 4, scenes = 4, points = 5000;
  std::uint64_t seed = 0;
  bool extract = false, no_paths = false;

  auto* project_cmd = app.add_subcommand("project", "Export one plane grid of a scan as CSV or PGM");
  project_cmd->add_option("scan", scan, "scan file (.bin)")->required()->check(CLI::ExistingFile);
  project_cmd->add_option("--plane", plane, "polar | xy | xz | yz | range");
  project_cmd->add_option("--out", out, "output .csv or .pgm")->required();
  project_cmd->add_option("--config", config, "run config for grid geometry");
  project_cmd->add_option("--channel", channel, "feature shown in the PGM (0..4: x y z remission range)");

  auto* augment_cmd = app.add_subcommand("augment", "Apply global augmentation and instance pasting to a sequence");
  augment_cmd->add_option("sequence", scan, "sequence directory with velodyne/ and labels/")->required()->check(CLI::ExistingDirectory);
  augment_cmd->add_option("--bank", bank, "instance bank directory")->required();
  augment_cmd->add_option("--out", out, "output sequence directory");
  augment_cmd->add_option("--config", config, "run config ([augment] section)");
  augment_cmd->add_option("--seed", seed, "random seed");
  augment_cmd->add_flag("--extract", extract, "build the bank from the sequence instead of augmenting");

  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic scans in the SemanticKITTI layout");
  synth_cmd->add_option("--out", out, "output sequence directory")->required();
  synth_cmd->add_option("--scenes", scenes, "number of scans");
  synth_cmd->add_option("--points", points, "points per scan");
  synth_cmd->add_option("--seed", seed, "random seed");

  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  train_cmd->add_option("config", config, "run config")->required()->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  eval_cmd->add_option("config", config, "run config")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--write-labels", write_labels, "directory for per-scan .label predictions");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of all ops and the network");
  grad_cmd->add_option("--seed", seed, "random seed");

  auto* check_cmd = app.add_subcommand("check-config", "Validate a run config");
  check_cmd->add_option("config", config, "run config")->required();
  check_cmd->add_flag("--no-paths", no_paths, "skip checks that referenced paths exist");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*project_cmd) return cmd_project(scan, plane, out, config, channel);
    if (*augment_cmd) return cmd_augment(scan, bank, out, config, seed, extract);
    if (*synth_cmd) return cmd_synth(out, scenes, points, seed);
    if (*train_cmd) return cmd_train(config);
    if (*eval_cmd) return cmd_eval(config, checkpoint, write_labels);
    if (*grad_cmd) return cmd_gradcheck(seed);
    if (*check_cmd) return cmd_check_config(config, !no_paths);
  } catch (const Error& e) {
    spdlog::error("{} error: {}", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("unexpected error: {}", e.what());
    return 1;
  }
  return 0;
}
