#include "ppnet/loss.hpp"

#include <cmath>

namespace ppnet {

void LossConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) fail(ErrorKind::Config, "loss: lambda must be finite and >= 0");
}

template <typename T>
ad::Var<T> total_loss(ad::Var<T> logits, std::span<const int> labels, const LossConfig& cfg) {
  const auto ce = ad::cross_entropy(logits, labels, cfg.ignore_index);
  if (cfg.lambda == 0.0) return ce;
  const auto lovasz = ad::lovasz_softmax(ad::softmax_rows(logits), labels, cfg.ignore_index);
  return ad::add(ce, ad::scale(lovasz, static_cast<T>(cfg.lambda)));
}

template ad::Var<float> total_loss<float>(ad::Var<float>, std::span<const int>, const LossConfig&);
template ad::Var<double> total_loss<double>(ad::Var<double>, std::span<const int>, const LossConfig&);

}  // namespace ppnet
