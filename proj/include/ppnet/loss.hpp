#pragma once

#include <optional>
#include <span>

#include "ppnet/autodiff/ops.hpp"

namespace ppnet {

struct LossConfig {
  double lambda = 1.0;            // weight of the Lovasz term
  std::optional<int> ignore_index = 0;

  void validate() const;
};

/// Cross-entropy on logits plus lambda * Lovasz-Softmax on softmax(logits).
template <typename T>
ad::Var<T> total_loss(ad::Var<T> logits, std::span<const int> labels, const LossConfig& cfg);

}  // namespace ppnet
