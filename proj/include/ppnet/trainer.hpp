#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppnet/config.hpp"
#include "ppnet/metrics.hpp"
#include "ppnet/network.hpp"
#include "ppnet/optim.hpp"

namespace ppnet {

/// One scan of a split: either files on disk or an in-memory cloud.
struct ScanSource {
  std::string id;
  std::filesystem::path scan;
  std::filesystem::path labels;  // may be empty
  std::optional<PointCloud> cloud;
};

enum class Split { Train, Val };

/// SemanticKITTI layout (<root>/sequences/<seq>/velodyne/*.bin with
/// labels/*.label) or generated scenes, depending on cfg.data.source.
std::vector<ScanSource> list_split(const RunConfig& cfg, Split split);
PointCloud load_source(const ScanSource& source, const ClassMap& class_map);

/// A cloud after preprocessing, with the geometry-only network inputs.
struct ProcessedSample {
  std::string id;
  PointCloud cloud;
  PreparedCloud prepared;
};

/// Voxel downsampling, FOV crop, then removal of zero-range points.
PointCloud preprocess(const PointCloud& raw, const PreprocessConfig& cfg);
ProcessedSample make_sample(std::string id, const PointCloud& raw, const RunConfig& cfg);

/// Parameters plus optimizer state; performs one AdamW step per call.
template <typename T>
class TrainSession {
 public:
  TrainSession(const RunConfig& cfg, NetworkParams<T> params);

  /// Forward, loss, backward and AdamW update over `batch` at learning rate
  /// `lr`. Returns the loss (mean over clouds in accumulate mode). Throws
  /// ErrorKind::Numeric naming the scans when the loss is not finite.
  double step(std::span<const ProcessedSample* const> batch, double lr);

  NetworkParams<T>& params() { return params_; }
  const NetworkParams<T>& params() const { return params_; }
  const AdamState& adam() const { return adam_; }

 private:
  double accumulate(std::span<const ProcessedSample* const> batch, std::vector<std::vector<T>>& grads);

  RunConfig cfg_;
  NetworkParams<T> params_;
  AdamState adam_;
};

/// Eval-mode predictions for the processed points.
template <typename T>
std::vector<int> predict(const ProcessedSample& sample, NetworkParams<T>& params, const RunConfig& cfg);

struct EvalOptions {
  std::optional<std::filesystem::path> write_labels;  // one .label file per scan
};

/// Evaluates on full clouds: points removed by preprocessing take the
/// prediction of their nearest processed point.
template <typename T>
ConfusionMatrix evaluate(std::span<const ScanSource> sources, NetworkParams<T>& params, const RunConfig& cfg,
                         const EvalOptions& options = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean over steps
  double lr = 0.0;    // at the last step
  double miou = 0.0;  // validation
};

struct TrainSummary {
  std::vector<EpochRecord> epochs;
  double best_miou = -1.0;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
};

/// Full training run; writes <output_dir>/best.ckpt, last.ckpt and log.csv.
TrainSummary train(const RunConfig& cfg);

/// Loads the checkpoint into a freshly laid-out network and evaluates the
/// validation split.
IoUReport evaluate_checkpoint(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                              const EvalOptions& options = {});

}  // namespace ppnet
