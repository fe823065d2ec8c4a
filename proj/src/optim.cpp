#include "ppnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "ppnet/error.hpp"

namespace ppnet {

void OptimizerConfig::validate() const {
  if (!(final_lr > 0.0 && final_lr < peak_lr)) fail(ErrorKind::Config, "optimizer: need 0 < final_lr < peak_lr");
  if (!(warmup_epochs < total_epochs)) fail(ErrorKind::Config, "optimizer: warmup_epochs must be < total_epochs");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail(ErrorKind::Config, "optimizer: betas must lie in [0,1)");
  if (!(eps > 0.0) || !(weight_decay >= 0.0)) fail(ErrorKind::Config, "optimizer: eps must be > 0 and weight_decay >= 0");
  if (batch_size == 0) fail(ErrorKind::Config, "optimizer: batch_size must be >= 1");
}

double lr_at(std::size_t step, std::size_t steps_per_epoch, const OptimizerConfig& cfg) {
  const double warmup = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(cfg.total_epochs * steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s >= total) return cfg.final_lr;
  if (s < warmup) return cfg.peak_lr * s / warmup;
  const double t = (s - warmup) / (total - warmup);
  return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void adamw_step(std::span<ParamSlot<T>> params, AdamState& state, double lr, const OptimizerConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) fail(ErrorKind::Argument, "adamw: optimizer state does not match parameter list");
  for (const auto& p : params) {
    if (p.grads.size() != p.values.size()) fail(ErrorKind::Argument, "adamw: gradient shape differs for " + p.name);
    for (T g : p.grads) {
      if (!std::isfinite(static_cast<double>(g))) fail(ErrorKind::Numeric, "adamw: non-finite gradient in parameter block " + p.name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.m[b];
    auto& v = state.v[b];
    if (m.size() != params[b].values.size()) fail(ErrorKind::Argument, "adamw: moment shape differs for " + params[b].name);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = static_cast<double>(params[b].grads[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double p = static_cast<double>(params[b].values[i]);
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps) + cfg.weight_decay * p;
      params[b].values[i] = static_cast<T>(p - lr * update);
    }
  }
}

template void adamw_step<float>(std::span<ParamSlot<float>>, AdamState&, double, const OptimizerConfig&);
template void adamw_step<double>(std::span<ParamSlot<double>>, AdamState&, double, const OptimizerConfig&);

}  // namespace ppnet
