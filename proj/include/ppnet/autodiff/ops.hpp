#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ppnet/autodiff/tape.hpp"

namespace ppnet::ad {

enum class Mode { Train, Eval };

/// Running statistics of one batch-norm layer. gamma/beta are ordinary
/// parameters passed to batch_norm() alongside.
template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0, double momentum_ = 0.1, double eps_ = 1e-5)
      : running_mean(channels, T(0)), running_var(channels, T(1)), momentum(momentum_), eps(eps_) {}
};

// Elementwise, equal shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> square(Var<T> x);

/// Row-wise softmax of an N x C matrix with max subtraction.
template <typename T> Var<T> softmax_rows(Var<T> x);

/// out[i] = weight * x[i] + bias. x: N x Cin, weight: Cout x Cin, bias: Cout.
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias);

/// 3x3 cross-correlation with zero padding 1 over `images` stacked images.
/// x: (images*height*width) x Cin, kernels: Cout x 3 x 3 x Cin, bias: Cout.
template <typename T>
Var<T> conv2d_same(Var<T> x, std::size_t images, std::size_t height, std::size_t width, Var<T> kernels,
                   std::optional<Var<T>> bias);

/// out[i,c] = weight[c] * x[i,c] + bias[c].
template <typename T> Var<T> depthwise(Var<T> x, Var<T> weight, Var<T> bias);

/// Normalizes each column. Train mode uses biased batch statistics and
/// updates the running ones; eval mode uses the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode);

/// x: (K*N) x C with neighbor j of point i at row j*N + i. Returns the
/// per-channel max over j; the gradient goes to the first argmax.
template <typename T> Var<T> max_over_neighbors(Var<T> x, std::size_t k);

/// out[r] = x[rows[r]]; backward scatter-adds.
template <typename T> Var<T> gather(Var<T> x, std::span<const std::uint32_t> rows);

/// Mean of the rows of x falling into each of `num_cells` cells.
template <typename T> Var<T> scatter_mean(Var<T> x, std::span<const std::uint32_t> cells, std::size_t num_cells);

/// [a | b] along columns.
template <typename T> Var<T> concat_cols(Var<T> a, Var<T> b);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);

/// Mean of -log softmax(logits)[label] over points whose label != ignore.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, std::optional<int> ignore_index);

/// Lovasz-Softmax over classes present in the scored labels. `probs` rows
/// must be row-stochastic. The error ordering is fixed at forward time
/// (ties broken by point index) and treated as constant in backward.
template <typename T>
Var<T> lovasz_softmax(Var<T> probs, std::span<const int> labels, std::optional<int> ignore_index);

/// Gradient of the Lovasz extension of the Jaccard loss w.r.t. sorted errors,
/// given the ground-truth indicator in that sorted order.
std::vector<double> lovasz_grad(std::span<const std::uint8_t> sorted_foreground);

}  // namespace ppnet::ad
