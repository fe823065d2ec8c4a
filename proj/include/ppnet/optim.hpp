#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ppnet {

struct OptimizerConfig {
  double peak_lr = 0.002;
  std::size_t warmup_epochs = 4;
  std::size_t total_epochs = 45;
  double final_lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 4;

  void validate() const;
};

/// Linear warm-up from 0 to peak_lr, per-step cosine decay to final_lr at
/// the last step, constant afterwards.
double lr_at(std::size_t step, std::size_t steps_per_epoch, const OptimizerConfig& cfg);

/// AdamW moments for a list of parameter blocks.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One parameter block as seen by the optimizer.
template <typename T>
struct ParamSlot {
  std::string name;
  std::span<T> values;
  std::span<const T> grads;
};

/// Bias-corrected Adam update with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
/// Throws ErrorKind::Numeric naming the block on a non-finite gradient.
template <typename T>
void adamw_step(std::span<ParamSlot<T>> params, AdamState& state, double lr, const OptimizerConfig& cfg);

}  // namespace ppnet
