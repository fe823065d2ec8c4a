#include "ppnet/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ppnet/augmentation.hpp"
#include "ppnet/checkpoint.hpp"
#include "ppnet/dataio.hpp"
#include "ppnet/error.hpp"
#include "ppnet/loss.hpp"

namespace ppnet {

namespace fs = std::filesystem;

std::vector<ScanSource> list_split(const RunConfig& cfg, Split split) {
  std::vector<ScanSource> out;
  const auto& d = cfg.data;
  if (d.source == DataSource::Synthetic) {
    const std::size_t n = split == Split::Train ? d.synthetic_train_scenes : d.synthetic_val_scenes;
    // Validation scenes use a disjoint seed range.
    const std::uint64_t base = cfg.seed * 1000003ULL + (split == Split::Train ? 0 : 500000);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t s = base + i;
      ScanSource src;
      src.id = (split == Split::Train ? "train_" : "val_") + std::to_string(i);
      src.cloud = synth_scene(random_scene_spec(s, d.synthetic_points), s);
      out.push_back(std::move(src));
    }
    return out;
  }

  const auto& seqs = split == Split::Train ? d.train_sequences : d.val_sequences;
  for (const auto& seq : seqs) {
    const fs::path dir = d.root / "sequences" / seq;
    if (!fs::is_directory(dir / "velodyne")) fail(ErrorKind::Io, "missing scan directory " + (dir / "velodyne").string());
    std::vector<fs::path> scans;
    for (const auto& e : fs::directory_iterator(dir / "velodyne"))
      if (e.path().extension() == ".bin") scans.push_back(e.path());
    std::sort(scans.begin(), scans.end());
    for (const auto& scan : scans) {
      ScanSource src;
      src.id = seq + "_" + scan.stem().string();
      src.scan = scan;
      const fs::path labels = dir / "labels" / (scan.stem().string() + ".label");
      if (fs::exists(labels)) src.labels = labels;
      out.push_back(std::move(src));
      if (d.max_scans > 0 && out.size() >= d.max_scans) return out;
    }
  }
  return out;
}

PointCloud load_source(const ScanSource& source, const ClassMap& class_map) {
  if (source.cloud) return *source.cloud;
  return load_labeled_scan(source.scan, source.labels, class_map);
}

PointCloud preprocess(const PointCloud& raw, const PreprocessConfig& cfg) {
  const auto down = voxel_downsample(raw, cfg.voxel_size);
  const auto cropped = crop(down.cloud, cfg.bounds);
  std::vector<std::size_t> keep;
  keep.reserve(cropped.cloud.size());
  for (std::size_t i = 0; i < cropped.cloud.size(); ++i) {
    const auto& p = cropped.cloud.coords[i];
    if (p[0] != 0.0 || p[1] != 0.0 || p[2] != 0.0) keep.push_back(i);
  }
  if (keep.size() == cropped.cloud.size()) return cropped.cloud;
  return select(cropped.cloud, keep);
}

ProcessedSample make_sample(std::string id, const PointCloud& raw, const RunConfig& cfg) {
  ProcessedSample s;
  s.id = std::move(id);
  s.cloud = preprocess(raw, cfg.preprocess);
  if (s.cloud.empty()) fail(ErrorKind::EmptyInput, "scan " + s.id + " has no points left after preprocessing");
  s.prepared = prepare_cloud(s.cloud, cfg.network);
  return s;
}

namespace {

std::string join_ids(std::span<const ProcessedSample* const> batch) {
  std::string ids;
  for (const auto* s : batch) ids += (ids.empty() ? "" : ", ") + s->id;
  return ids;
}

std::vector<int> concat_labels(std::span<const ProcessedSample* const> batch) {
  std::vector<int> labels;
  for (const auto* s : batch) {
    if (!s->cloud.has_labels()) fail(ErrorKind::Argument, "scan " + s->id + " has no labels");
    labels.insert(labels.end(), s->cloud.labels.begin(), s->cloud.labels.end());
  }
  return labels;
}

}  // namespace

template <typename T>
TrainSession<T>::TrainSession(const RunConfig& cfg, NetworkParams<T> params) : cfg_(cfg), params_(std::move(params)) {}

template <typename T>
double TrainSession<T>::accumulate(std::span<const ProcessedSample* const> batch, std::vector<std::vector<T>>& grads) {
  const auto labels = concat_labels(batch);
  std::vector<const PreparedCloud*> prepared;
  for (const auto* s : batch) prepared.push_back(&s->prepared);
  const auto input = make_batch<T>(std::span<const PreparedCloud* const>(prepared), cfg_.network);
  ad::Tape<T> tape;
  ForwardContext<T> ctx(tape, params_, cfg_.network, input, ad::Mode::Train, true);
  const auto result = forward(ctx);
  const auto loss = total_loss(result.logits, std::span<const int>(labels), cfg_.loss);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) fail(ErrorKind::Numeric, "non-finite loss on scan(s) " + join_ids(batch));
  tape.backward(loss);
  for (std::size_t i = 0; i < ctx.vars.size(); ++i) {
    if (!tape.has_grad(ctx.vars[i])) continue;
    const auto g = tape.grad(ctx.vars[i]);
    auto& dst = grads[i];
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }
  return value;
}

template <typename T>
double TrainSession<T>::step(std::span<const ProcessedSample* const> batch, double lr) {
  if (batch.empty()) fail(ErrorKind::EmptyInput, "empty training batch");
  std::vector<std::vector<T>> grads(params_.tensors.size());
  for (std::size_t i = 0; i < grads.size(); ++i) grads[i].assign(params_.tensors[i].values.size(), T(0));

  double loss = 0.0;
  if (cfg_.batch_mode == BatchMode::Concat || batch.size() == 1) {
    loss = accumulate(batch, grads);
  } else {
    for (const auto* s : batch) loss += accumulate(std::span<const ProcessedSample* const>(&s, 1), grads);
    const T inv = T(1) / static_cast<T>(batch.size());
    for (auto& g : grads)
      for (auto& v : g) v *= inv;
    loss /= static_cast<double>(batch.size());
  }

  std::vector<ParamSlot<T>> slots;
  slots.reserve(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i)
    slots.push_back({params_.tensors[i].name, std::span<T>(params_.tensors[i].values), std::span<const T>(grads[i])});
  adamw_step<T>(std::span<ParamSlot<T>>(slots), adam_, lr, cfg_.optimizer);
  return loss;
}

template <typename T>
std::vector<int> predict(const ProcessedSample& sample, NetworkParams<T>& params, const RunConfig& cfg) {
  const auto logits = infer_logits(sample.prepared, params, cfg.network, ad::Mode::Eval);
  return argmax_rows<T>(std::span<const T>(logits.data), cfg.network.num_classes, cfg.loss.ignore_index);
}

template <typename T>
ConfusionMatrix evaluate(std::span<const ScanSource> sources, NetworkParams<T>& params, const RunConfig& cfg,
                         const EvalOptions& options) {
  const auto class_map = cfg.data.make_class_map();
  ConfusionMatrix cm(cfg.network.num_classes, cfg.loss.ignore_index);
  for (const auto& src : sources) {
    const auto raw = load_source(src, class_map);
    const auto sample = make_sample(src.id, raw, cfg);
    const auto preds = predict(sample, params, cfg);
    const auto full = propagate_labels(raw, sample.cloud, preds);
    if (raw.has_labels()) cm.update(full, raw.labels);
    if (options.write_labels) write_predictions(*options.write_labels / (src.id + ".label"), full, class_map);
  }
  return cm;
}

namespace {

double miou_or_zero(const ConfusionMatrix& cm) {
  if (cm.total() == 0) return 0.0;
  return cm.miou().miou;
}

template <typename T>
TrainSummary train_impl(const RunConfig& cfg) {
  const auto class_map = cfg.data.make_class_map();
  const auto train_sources = list_split(cfg, Split::Train);
  auto val_sources = list_split(cfg, Split::Val);
  if (train_sources.empty()) fail(ErrorKind::EmptyInput, "training split is empty");
  if (val_sources.empty()) {
    spdlog::warn("validation split is empty; selecting checkpoints on the training split");
    val_sources = train_sources;
  }

  std::vector<InstanceRecord> bank;
  if (cfg.augment.cutmix) {
    bank = load_instance_bank(cfg.augment.bank_dir);
    spdlog::info("instance bank: {} records", bank.size());
  }

  fs::create_directories(cfg.output_dir);
  TrainSummary summary;
  summary.checkpoint = cfg.output_dir / "best.ckpt";
  summary.log = cfg.output_dir / "log.csv";
  std::ofstream log(summary.log);
  if (!log) fail(ErrorKind::Io, "cannot write " + summary.log.string());
  log << "epoch,loss,lr,miou\n";

  TrainSession<T> session(cfg, init_params<T>(cfg.network, cfg.seed));
  spdlog::info("network: {} parameters, {} layers, {} channels", session.params().parameter_count(), cfg.network.layers,
               cfg.network.channels);

  Rng rng(cfg.seed);
  const std::size_t batch_size = cfg.optimizer.batch_size;
  const std::size_t steps_per_epoch = (train_sources.size() + batch_size - 1) / batch_size;
  std::vector<std::size_t> order(train_sources.size());
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.optimizer.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<ProcessedSample> samples;
      for (std::size_t i = b * batch_size; i < std::min(order.size(), (b + 1) * batch_size); ++i) {
        const auto& src = train_sources[order[i]];
        auto cloud = load_source(src, class_map);
        if (cfg.augment.global) cloud = global_augment(cloud, rng, cfg.augment.global_cfg);
        if (cfg.augment.cutmix && !bank.empty()) cloud = paste_instances(cloud, bank, cfg.augment.cutmix_cfg, rng).cloud;
        samples.push_back(make_sample(src.id, cloud, cfg));
      }
      std::vector<const ProcessedSample*> ptrs;
      for (const auto& s : samples) ptrs.push_back(&s);
      lr = lr_at(global_step, steps_per_epoch, cfg.optimizer);
      const double loss = session.step(std::span<const ProcessedSample* const>(ptrs), lr);
      loss_sum += loss;
      spdlog::debug("epoch {} step {} lr {:.3g} loss {:.5f}", epoch + 1, global_step, lr, loss);
      ++global_step;
    }

    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(steps_per_epoch), lr, 0.0};
    rec.miou = miou_or_zero(evaluate<T>(val_sources, session.params(), cfg));
    summary.epochs.push_back(rec);
    log << rec.epoch << ',' << rec.loss << ',' << rec.lr << ',' << rec.miou << '\n' << std::flush;
    spdlog::info("epoch {}/{}: loss {:.5f} lr {:.3g} val mIoU {:.4f}", rec.epoch, cfg.optimizer.total_epochs, rec.loss,
                 rec.lr, rec.miou);

    save_checkpoint(cfg.output_dir / "last.ckpt", session.params());
    if (rec.miou > summary.best_miou) {
      summary.best_miou = rec.miou;
      save_checkpoint(summary.checkpoint, session.params());
    }
  }
  return summary;
}

template <typename T>
IoUReport evaluate_checkpoint_impl(const RunConfig& cfg, const fs::path& checkpoint, const EvalOptions& options) {
  auto params = init_params<T>(cfg.network, cfg.seed);
  load_checkpoint(checkpoint, params);
  const auto sources = list_split(cfg, Split::Val);
  if (sources.empty()) fail(ErrorKind::EmptyInput, "validation split is empty");
  if (options.write_labels) fs::create_directories(*options.write_labels);
  return evaluate<T>(sources, params, cfg, options).miou();
}

}  // namespace

TrainSummary train(const RunConfig& cfg) {
  return cfg.precision == Precision::F64 ? train_impl<double>(cfg) : train_impl<float>(cfg);
}

IoUReport evaluate_checkpoint(const RunConfig& cfg, const fs::path& checkpoint, const EvalOptions& options) {
  return cfg.precision == Precision::F64 ? evaluate_checkpoint_impl<double>(cfg, checkpoint, options)
                                         : evaluate_checkpoint_impl<float>(cfg, checkpoint, options);
}

template class TrainSession<float>;
template class TrainSession<double>;
template std::vector<int> predict<float>(const ProcessedSample&, NetworkParams<float>&, const RunConfig&);
template std::vector<int> predict<double>(const ProcessedSample&, NetworkParams<double>&, const RunConfig&);
template ConfusionMatrix evaluate<float>(std::span<const ScanSource>, NetworkParams<float>&, const RunConfig&,
                                         const EvalOptions&);
template ConfusionMatrix evaluate<double>(std::span<const ScanSource>, NetworkParams<double>&, const RunConfig&,
                                          const EvalOptions&);

}  // namespace ppnet
