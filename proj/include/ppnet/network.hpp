#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppnet/autodiff/ops.hpp"
#include "ppnet/autodiff/tape.hpp"
#include "ppnet/cloud.hpp"
#include "ppnet/projection.hpp"

namespace ppnet {

inline constexpr std::size_t kInputFeatures = 5;

struct NetworkConfig {
  std::size_t layers = 50;
  std::size_t channels = 256;
  std::size_t k_neighbors = 16;
  std::size_t num_classes = 20;
  std::size_t mlp_hidden = 256;
  std::size_t conv_hidden = 256;
  PlaneConfigs planes;
  PlaneOrder plane_order = kDefaultPlaneOrder;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
};

// Parameter layout. Every index refers into NetworkParams::tensors, except
// BatchNormBlock::stats which indexes NetworkParams::bn.
struct LinearBlock {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;  // absent when a batch norm follows
};

struct BatchNormBlock {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  std::size_t stats = 0;
};

struct EmbeddingBlock {
  BatchNormBlock point_bn;
  LinearBlock point_linear;
  BatchNormBlock neighbor_bn_in;
  LinearBlock neighbor_fc1;
  LinearBlock neighbor_fc2;  // no bias
  BatchNormBlock neighbor_bn_out;
  LinearBlock merge;
};

struct SpatialMixBlock {
  PlaneKind plane = PlaneKind::PolarGrid;
  BatchNormBlock bn;
  LinearBlock conv1;  // weight: hidden x 3 x 3 x C
  LinearBlock conv2;  // weight: C x 3 x 3 x hidden
  LinearBlock gate;  // no bias
  BatchNormBlock gate_bn;
};

struct ChannelMixBlock {
  BatchNormBlock bn;
  LinearBlock fc1;
  LinearBlock fc2;
  LinearBlock depthwise;
};

template <typename T>
struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<T> values;
};

template <typename T>
struct NetworkParams {
  std::vector<NamedTensor<T>> tensors;
  std::vector<ad::BatchNormStats<T>> bn;
  std::vector<std::string> bn_names;

  EmbeddingBlock embedding;
  std::vector<SpatialMixBlock> spatial;
  std::vector<ChannelMixBlock> channel;
  LinearBlock head;

  std::size_t parameter_count() const;
  std::optional<std::size_t> find(const std::string& name) const;
};

/// Kaiming-uniform (fan-in) weights, zero biases, unit gamma, zero beta.
template <typename T>
NetworkParams<T> init_params(const NetworkConfig& config, std::uint64_t seed);

template <typename To, typename From>
NetworkParams<To> convert_params(const NetworkParams<From>& params);

/// Per-cloud network inputs that depend only on geometry.
struct PreparedCloud {
  FeatureMatrix features;  // N x 5
  NeighborTable neighbors;
  std::array<std::vector<std::uint32_t>, kPlaneCount> cells;  // indexed by PlaneKind

  std::size_t size() const { return features.rows; }
};

PreparedCloud prepare_cloud(const PointCloud& cloud, const NetworkConfig& config);

/// Several prepared clouds concatenated along the point axis. Grids of
/// different clouds are stacked as separate images.
template <typename T>
struct BatchInput {
  std::size_t clouds = 0;
  std::size_t points = 0;
  std::size_t k = 0;
  std::vector<T> features;                     // points x 5
  std::vector<std::uint32_t> neighbor_rows;    // row j*points + i -> neighbor j of point i
  std::vector<std::uint32_t> self_rows;        // row j*points + i -> i
  std::array<std::vector<std::uint32_t>, kPlaneCount> cells;
  std::vector<std::size_t> offsets;            // first point of each cloud
};

template <typename T>
BatchInput<T> make_batch(std::span<const PreparedCloud* const> clouds, const NetworkConfig& config);

template <typename T>
BatchInput<T> make_batch(const PreparedCloud& cloud, const NetworkConfig& config) {
  const PreparedCloud* one[] = {&cloud};
  return make_batch<T>(std::span<const PreparedCloud* const>(one), config);
}

/// Parameters bound as leaves of one tape.
template <typename T>
struct ForwardContext {
  ad::Tape<T>& tape;
  NetworkParams<T>& params;
  const NetworkConfig& config;
  const BatchInput<T>& batch;
  ad::Mode mode;
  std::vector<ad::Var<T>> vars;

  ForwardContext(ad::Tape<T>& tape_, NetworkParams<T>& params_, const NetworkConfig& config_,
                 const BatchInput<T>& batch_, ad::Mode mode_, bool params_require_grad = true);
  /// Uses caller-provided leaves (one per tensor, same order) as parameters.
  ForwardContext(ad::Tape<T>& tape_, NetworkParams<T>& params_, const NetworkConfig& config_,
                 const BatchInput<T>& batch_, ad::Mode mode_, std::vector<ad::Var<T>> bound);

  ad::Var<T> var(std::size_t tensor) const { return vars[tensor]; }
  ad::Var<T> bn(ad::Var<T> x, const BatchNormBlock& b);
  ad::Var<T> linear(ad::Var<T> x, const LinearBlock& b);
};

/// Grid memory carried between layers for the l-5 skip.
template <typename T>
struct BackboneState {
  ad::Var<T> features;
  std::array<std::optional<ad::Var<T>>, kPlaneCount> memory;
};

template <typename T>
ad::Var<T> embed(ForwardContext<T>& ctx, ad::Var<T> features5);

/// One SpatialMix block for backbone layer `layer` (1-based). Reads and
/// updates the grid memory of the layer's plane.
template <typename T>
ad::Var<T> spatial_mix(ForwardContext<T>& ctx, ad::Var<T> input, std::size_t layer, BackboneState<T>& state,
                       const SpatialMixBlock& block);

template <typename T>
ad::Var<T> channel_mix(ForwardContext<T>& ctx, ad::Var<T> input, const ChannelMixBlock& block);

template <typename T>
struct ForwardResult {
  ad::Var<T> input;   // N x 5 features leaf
  ad::Var<T> p0;      // embedding output
  ad::Var<T> logits;  // N x num_classes
  BackboneState<T> state;
  std::array<std::size_t, kPlaneCount> spatial_calls{};
  std::size_t channel_calls = 0;
};

template <typename T>
ForwardResult<T> forward(ForwardContext<T>& ctx, bool input_requires_grad = false);

/// Same, with the N x 5 input features given as an existing tape value.
template <typename T>
ForwardResult<T> forward(ForwardContext<T>& ctx, ad::Var<T> input);

/// Convenience wrapper: logits for one prepared cloud.
template <typename T>
Matrix<T> infer_logits(const PreparedCloud& cloud, NetworkParams<T>& params, const NetworkConfig& config, ad::Mode mode);

/// Argmax over classes, skipping `ignore_index` when set.
template <typename T>
std::vector<int> argmax_rows(std::span<const T> logits, std::size_t classes, std::optional<int> ignore_index);

}  // namespace ppnet
