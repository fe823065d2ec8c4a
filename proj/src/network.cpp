#include "ppnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace ppnet {

using ad::Mode;
using ad::Shape;
using ad::Var;

void NetworkConfig::validate() const {
  if (layers < kPlaneCount || layers % kPlaneCount != 0) fail(ErrorKind::Config, "network: layers must be a positive multiple of 5");
  if (channels < 1 || k_neighbors < 1 || mlp_hidden < 1 || conv_hidden < 1)
    fail(ErrorKind::Config, "network: channels, k_neighbors and hidden sizes must be >= 1");
  if (num_classes < 2) fail(ErrorKind::Config, "network: need at least 2 classes");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0))
    fail(ErrorKind::Config, "network: batch-norm momentum must be in (0,1) and eps > 0");
  planes.validate();
}

template <typename T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

template <typename T>
std::optional<std::size_t> NetworkParams<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return i;
  }
  return std::nullopt;
}

namespace {

template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(NetworkParams<T>& params, const NetworkConfig& config, std::uint64_t seed)
      : params_(params), config_(config), rng_(seed) {}

  std::size_t tensor(const std::string& name, Shape shape, std::size_t fan_in) {
    std::vector<T> values(ad::numel(shape), T(0));
    if (fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : values) v = static_cast<T>(dist(rng_));
    }
    params_.tensors.push_back({name, std::move(shape), std::move(values)});
    return params_.tensors.size() - 1;
  }

  std::size_t filled(const std::string& name, std::size_t n, T value) {
    params_.tensors.push_back({name, Shape{n}, std::vector<T>(n, value)});
    return params_.tensors.size() - 1;
  }

  LinearBlock linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true) {
    LinearBlock b;
    b.weight = tensor(name + ".weight", Shape{out, in}, in);
    if (bias) b.bias = filled(name + ".bias", out, T(0));
    return b;
  }

  LinearBlock conv(const std::string& name, std::size_t in, std::size_t out) {
    LinearBlock b;
    b.weight = tensor(name + ".weight", Shape{out, 3, 3, in}, 9 * in);
    b.bias = filled(name + ".bias", out, T(0));
    return b;
  }

  BatchNormBlock bn(const std::string& name, std::size_t channels) {
    BatchNormBlock b;
    b.gamma = filled(name + ".gamma", channels, T(1));
    b.beta = filled(name + ".beta", channels, T(0));
    params_.bn.emplace_back(channels, config_.bn_momentum, config_.bn_eps);
    params_.bn_names.push_back(name);
    b.stats = params_.bn.size() - 1;
    return b;
  }

 private:
  NetworkParams<T>& params_;
  const NetworkConfig& config_;
  std::mt19937_64 rng_;
};

}  // namespace

template <typename T>
NetworkParams<T> init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkParams<T> p;
  ParamBuilder<T> b(p, config, seed);
  const std::size_t c = config.channels;

  auto& e = p.embedding;
  e.point_bn = b.bn("embedding.point_bn", kInputFeatures);
  e.point_linear = b.linear("embedding.point_linear", kInputFeatures, c);
  e.neighbor_bn_in = b.bn("embedding.neighbor_bn_in", kInputFeatures);
  e.neighbor_fc1 = b.linear("embedding.neighbor_fc1", kInputFeatures, config.mlp_hidden);
  e.neighbor_fc2 = b.linear("embedding.neighbor_fc2", config.mlp_hidden, c, false);
  e.neighbor_bn_out = b.bn("embedding.neighbor_bn_out", c);
  e.merge = b.linear("embedding.merge", 2 * c, c);

  for (std::size_t l = 1; l <= config.layers; ++l) {
    const std::string s = "spatial." + std::to_string(l);
    SpatialMixBlock sm;
    sm.plane = plane_for_layer(l, config.layers, config.plane_order);
    sm.bn = b.bn(s + ".bn", c);
    sm.conv1 = b.conv(s + ".conv1", c, config.conv_hidden);
    sm.conv2 = b.conv(s + ".conv2", config.conv_hidden, c);
    sm.gate = b.linear(s + ".gate", c, c, false);
    sm.gate_bn = b.bn(s + ".gate_bn", c);
    p.spatial.push_back(sm);

    const std::string m = "channel." + std::to_string(l);
    ChannelMixBlock cm;
    cm.bn = b.bn(m + ".bn", c);
    cm.fc1 = b.linear(m + ".fc1", c, config.mlp_hidden);
    cm.fc2 = b.linear(m + ".fc2", config.mlp_hidden, c);
    cm.depthwise.weight = b.tensor(m + ".depthwise.weight", Shape{c}, 1);
    cm.depthwise.bias = b.filled(m + ".depthwise.bias", c, T(0));
    p.channel.push_back(cm);
  }
  p.head = b.linear("head", c, config.num_classes);
  return p;
}

template <typename To, typename From>
NetworkParams<To> convert_params(const NetworkParams<From>& src) {
  NetworkParams<To> dst;
  for (const auto& t : src.tensors) dst.tensors.push_back({t.name, t.shape, std::vector<To>(t.values.begin(), t.values.end())});
  for (const auto& s : src.bn) {
    ad::BatchNormStats<To> d(s.running_mean.size(), s.momentum, s.eps);
    d.running_mean.assign(s.running_mean.begin(), s.running_mean.end());
    d.running_var.assign(s.running_var.begin(), s.running_var.end());
    dst.bn.push_back(std::move(d));
  }
  dst.bn_names = src.bn_names;
  dst.embedding = src.embedding;
  dst.spatial = src.spatial;
  dst.channel = src.channel;
  dst.head = src.head;
  return dst;
}

PreparedCloud prepare_cloud(const PointCloud& cloud, const NetworkConfig& config) {
  PreparedCloud p;
  p.features = build_features(cloud);
  p.neighbors = knn(cloud, config.k_neighbors);
  for (std::size_t k = 0; k < kPlaneCount; ++k) p.cells[k] = assign_cells(cloud, static_cast<PlaneKind>(k), config.planes);
  return p;
}

template <typename T>
BatchInput<T> make_batch(std::span<const PreparedCloud* const> clouds, const NetworkConfig& config) {
  BatchInput<T> b;
  b.clouds = clouds.size();
  b.k = config.k_neighbors;
  for (const auto* c : clouds) {
    if (c->neighbors.k != b.k) fail(ErrorKind::Argument, "make_batch: neighbor table k differs from config");
    b.offsets.push_back(b.points);
    b.points += c->size();
  }
  if (b.points == 0) fail(ErrorKind::EmptyInput, "make_batch: no points");
  b.features.reserve(b.points * kInputFeatures);
  for (const auto* c : clouds) {
    if (c->features.cols != kInputFeatures) fail(ErrorKind::Argument, "make_batch: expected 5 input features");
    for (double v : c->features.data) b.features.push_back(static_cast<T>(v));
  }
  b.neighbor_rows.resize(b.k * b.points);
  b.self_rows.resize(b.k * b.points);
  for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
    const auto& table = clouds[ci]->neighbors;
    const std::size_t off = b.offsets[ci];
    for (std::size_t i = 0; i < clouds[ci]->size(); ++i) {
      for (std::size_t j = 0; j < b.k; ++j) {
        b.neighbor_rows[j * b.points + off + i] = static_cast<std::uint32_t>(off + table.indices[i * b.k + j]);
        b.self_rows[j * b.points + off + i] = static_cast<std::uint32_t>(off + i);
      }
    }
  }
  for (std::size_t k = 0; k < kPlaneCount; ++k) {
    const std::size_t cells = config.planes.dims(static_cast<PlaneKind>(k)).cells();
    auto& out = b.cells[k];
    out.reserve(b.points);
    for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
      const auto& src = clouds[ci]->cells[k];
      if (src.size() != clouds[ci]->size()) fail(ErrorKind::Argument, "make_batch: missing plane cells");
      for (auto c : src) out.push_back(static_cast<std::uint32_t>(ci * cells + c));
    }
  }
  return b;
}

template <typename T>
ForwardContext<T>::ForwardContext(ad::Tape<T>& tape_, NetworkParams<T>& params_, const NetworkConfig& config_,
                                  const BatchInput<T>& batch_, ad::Mode mode_, bool params_require_grad)
    : tape(tape_), params(params_), config(config_), batch(batch_), mode(mode_) {
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    vars.push_back(params_require_grad ? tape.parameter(t.shape, t.values) : tape.constant(t.shape, t.values));
  }
}

template <typename T>
ForwardContext<T>::ForwardContext(ad::Tape<T>& tape_, NetworkParams<T>& params_, const NetworkConfig& config_,
                                  const BatchInput<T>& batch_, ad::Mode mode_, std::vector<Var<T>> bound)
    : tape(tape_), params(params_), config(config_), batch(batch_), mode(mode_), vars(std::move(bound)) {
  if (vars.size() != params.tensors.size()) fail(ErrorKind::Argument, "ForwardContext: one bound leaf per tensor expected");
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].shape() != params.tensors[i].shape)
      fail(ErrorKind::Argument, "ForwardContext: bound leaf for " + params.tensors[i].name + " has the wrong shape");
}

template <typename T>
Var<T> ForwardContext<T>::bn(Var<T> x, const BatchNormBlock& b) {
  return ad::batch_norm(x, var(b.gamma), var(b.beta), params.bn[b.stats], mode);
}

template <typename T>
Var<T> ForwardContext<T>::linear(Var<T> x, const LinearBlock& b) {
  return ad::linear(x, var(b.weight), b.bias ? std::optional<Var<T>>(var(*b.bias)) : std::nullopt);
}

template <typename T>
Var<T> embed(ForwardContext<T>& ctx, Var<T> features5) {
  const auto& e = ctx.params.embedding;
  // per-point branch
  const Var<T> point = ctx.linear(ctx.bn(features5, e.point_bn), e.point_linear);
  // neighborhood branch: rows j*N + i hold f_{i,j} - f_i
  const Var<T> diffs = ad::sub(ad::gather(features5, std::span<const std::uint32_t>(ctx.batch.neighbor_rows)),
                               ad::gather(features5, std::span<const std::uint32_t>(ctx.batch.self_rows)));
  Var<T> h = ctx.linear(ctx.bn(diffs, e.neighbor_bn_in), e.neighbor_fc1);
  h = ctx.bn(ctx.linear(ad::relu(h), e.neighbor_fc2), e.neighbor_bn_out);
  const Var<T> pooled = ad::max_over_neighbors(h, ctx.batch.k);
  return ctx.linear(ad::concat_cols(point, pooled), e.merge);
}

template <typename T>
Var<T> spatial_mix(ForwardContext<T>& ctx, Var<T> input, std::size_t layer, BackboneState<T>& state,
                   const SpatialMixBlock& block) {
  const PlaneKind plane = plane_for_layer(layer, ctx.config.layers, ctx.config.plane_order);
  if (plane != block.plane)
    fail(ErrorKind::Argument, "spatial_mix: layer " + std::to_string(layer) + " uses plane " + to_string(plane) +
                                  " but the block was built for " + to_string(block.plane));
  const auto k = static_cast<std::size_t>(plane);
  const GridDims dims = ctx.config.planes.dims(plane);
  const std::size_t num_cells = ctx.batch.clouds * dims.cells();
  const std::span<const std::uint32_t> cells(ctx.batch.cells[k]);

  Var<T> grid = ad::scatter_mean(ctx.bn(input, block.bn), cells, num_cells);
  if (layer > kPlaneCount) {
    if (!state.memory[k]) fail(ErrorKind::Argument, "spatial_mix: no stored grid for the layer skip of plane " + to_string(plane));
    grid = ad::add(grid, *state.memory[k]);
  }
  const std::optional<Var<T>> b1(ctx.var(*block.conv1.bias)), b2(ctx.var(*block.conv2.bias));
  Var<T> hidden = ad::relu(ad::conv2d_same(grid, ctx.batch.clouds, dims.rows, dims.cols, ctx.var(block.conv1.weight), b1));
  const Var<T> conv = ad::conv2d_same(hidden, ctx.batch.clouds, dims.rows, dims.cols, ctx.var(block.conv2.weight), b2);
  state.memory[k] = conv;

  const Var<T> back = ad::gather(conv, cells);
  const Var<T> gate = ad::sigmoid(ctx.bn(ctx.linear(back, block.gate), block.gate_bn));
  return ad::add(ad::mul(back, gate), input);
}

template <typename T>
Var<T> channel_mix(ForwardContext<T>& ctx, Var<T> input, const ChannelMixBlock& block) {
  Var<T> h = ctx.linear(ctx.bn(input, block.bn), block.fc1);
  h = ctx.linear(ad::relu(h), block.fc2);
  h = ad::depthwise(h, ctx.var(block.depthwise.weight), ctx.var(*block.depthwise.bias));
  return ad::add(h, input);
}

template <typename T>
ForwardResult<T> forward(ForwardContext<T>& ctx, bool input_requires_grad) {
  const auto& b = ctx.batch;
  const Shape in_shape{b.points, kInputFeatures};
  return forward(ctx, input_requires_grad ? ctx.tape.parameter(in_shape, b.features) : ctx.tape.constant(in_shape, b.features));
}

template <typename T>
ForwardResult<T> forward(ForwardContext<T>& ctx, Var<T> input) {
  if (input.shape() != Shape{ctx.batch.points, kInputFeatures})
    fail(ErrorKind::Argument, "forward: input must be " + std::to_string(ctx.batch.points) + " x 5");
  ForwardResult<T> r;
  r.input = input;
  r.p0 = embed(ctx, r.input);
  r.state.features = r.p0;
  if (ctx.params.spatial.size() != ctx.config.layers || ctx.params.channel.size() != ctx.config.layers)
    fail(ErrorKind::Argument, "forward: parameter blocks do not match the configured layer count");
  for (std::size_t l = 1; l <= ctx.config.layers; ++l) {
    const auto& sm = ctx.params.spatial[l - 1];
    Var<T> f = spatial_mix(ctx, r.state.features, l, r.state, sm);
    ++r.spatial_calls[static_cast<std::size_t>(sm.plane)];
    f = channel_mix(ctx, f, ctx.params.channel[l - 1]);
    ++r.channel_calls;
    r.state.features = f;
  }
  r.logits = ctx.linear(ad::add(r.state.features, r.p0), ctx.params.head);
  return r;
}

template <typename T>
Matrix<T> infer_logits(const PreparedCloud& cloud, NetworkParams<T>& params, const NetworkConfig& config, ad::Mode mode) {
  const auto batch = make_batch<T>(cloud, config);
  ad::Tape<T> tape;
  ForwardContext<T> ctx(tape, params, config, batch, mode, false);
  const auto result = forward(ctx);
  const auto v = result.logits.value();
  return Matrix<T>(batch.points, config.num_classes, std::vector<T>(v.begin(), v.end()));
}

template <typename T>
std::vector<int> argmax_rows(std::span<const T> logits, std::size_t classes, std::optional<int> ignore_index) {
  const std::size_t n = logits.size() / classes;
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int best = -1;
    for (std::size_t c = 0; c < classes; ++c) {
      if (ignore_index && static_cast<int>(c) == *ignore_index) continue;
      if (best < 0 || logits[i * classes + c] > logits[i * classes + static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    out[i] = best;
  }
  return out;
}

#define PPNET_INSTANTIATE_NETWORK(T)                                                                          \
  template struct NetworkParams<T>;                                                                           \
  template NetworkParams<T> init_params<T>(const NetworkConfig&, std::uint64_t);                              \
  template BatchInput<T> make_batch<T>(std::span<const PreparedCloud* const>, const NetworkConfig&);          \
  template struct ForwardContext<T>;                                                                          \
  template Var<T> embed<T>(ForwardContext<T>&, Var<T>);                                                       \
  template Var<T> spatial_mix<T>(ForwardContext<T>&, Var<T>, std::size_t, BackboneState<T>&,                 \
                                 const SpatialMixBlock&);                                                     \
  template Var<T> channel_mix<T>(ForwardContext<T>&, Var<T>, const ChannelMixBlock&);                         \
  template ForwardResult<T> forward<T>(ForwardContext<T>&, bool);                                             \
  template ForwardResult<T> forward<T>(ForwardContext<T>&, Var<T>);                                           \
  template Matrix<T> infer_logits<T>(const PreparedCloud&, NetworkParams<T>&, const NetworkConfig&, ad::Mode); \
  template std::vector<int> argmax_rows<T>(std::span<const T>, std::size_t, std::optional<int>);

PPNET_INSTANTIATE_NETWORK(float)
PPNET_INSTANTIATE_NETWORK(double)

template NetworkParams<float> convert_params<float, double>(const NetworkParams<double>&);
template NetworkParams<double> convert_params<double, float>(const NetworkParams<float>&);
template NetworkParams<float> convert_params<float, float>(const NetworkParams<float>&);
template NetworkParams<double> convert_params<double, double>(const NetworkParams<double>&);

}  // namespace ppnet
