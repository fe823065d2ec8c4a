#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "ppnet/checkpoint.hpp"
#include "ppnet/error.hpp"
#include "ppnet/network.hpp"

using namespace ppnet;
using ad::Mode;
using ad::Tape;

namespace {

NetworkConfig small_config(std::size_t layers = 5, std::size_t channels = 4) {
  NetworkConfig cfg;
  cfg.layers = layers;
  cfg.channels = channels;
  cfg.k_neighbors = 4;
  cfg.num_classes = 4;
  cfg.mlp_hidden = channels;
  cfg.conv_hidden = channels;
  cfg.planes.cell_size = 4.0;
  cfg.planes.polar = {.rho_min = 1.0, .rho_max = 40.0, .rings = 8, .sectors = 16};
  cfg.planes.range.height = 8;
  cfg.planes.range.width = 32;
  return cfg;
}

// With eps = 2^-17 and running_var = 1 - 2^-17 the eval-mode normalization
// divides by exactly 1.
constexpr double kExactEps = 1.0 / 131072.0;

template <typename T>
void make_bn_identity(NetworkParams<T>& p) {
  for (auto& s : p.bn) {
    s.eps = kExactEps;
    std::fill(s.running_mean.begin(), s.running_mean.end(), T(0));
    std::fill(s.running_var.begin(), s.running_var.end(), T(1.0 - kExactEps));
  }
}

template <typename T>
void set_identity(NetworkParams<T>& p, const LinearBlock& b) {
  auto& w = p.tensors[b.weight];
  std::fill(w.values.begin(), w.values.end(), T(0));
  if (w.shape.size() == 2) {
    for (std::size_t i = 0; i < w.shape[0]; ++i) w.values[i * w.shape[1] + i] = T(1);
  } else {  // conv: center tap delta
    const std::size_t cin = w.shape[3];
    for (std::size_t o = 0; o < w.shape[0]; ++o) w.values[o * 9 * cin + 4 * cin + o] = T(1);
  }
  if (b.bias) std::fill(p.tensors[*b.bias].values.begin(), p.tensors[*b.bias].values.end(), T(0));
}

template <typename T>
void fill(NetworkParams<T>& p, std::size_t tensor, T v) {
  std::fill(p.tensors[tensor].values.begin(), p.tensors[tensor].values.end(), v);
}

}  // namespace

TEST_CASE("init_params structure and determinism") {
  auto cfg = small_config(10, 8);
  const auto a = init_params<double>(cfg, 1), b = init_params<double>(cfg, 1), c = init_params<double>(cfg, 2);
  CHECK(a.spatial.size() == 10);
  CHECK(a.channel.size() == 10);
  bool same = true, differ = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    same = same && a.tensors[i].values == b.tensors[i].values;
    differ = differ || a.tensors[i].values != c.tensors[i].values;
  }
  CHECK(same);
  CHECK(differ);
  for (std::size_t l = 1; l <= 10; ++l) CHECK(a.spatial[l - 1].plane == plane_for_layer(l, 10));
  CHECK(a.find("spatial.3.conv1.weight").has_value());
  CHECK(a.tensors[*a.find("spatial.3.conv1.weight")].shape == ad::Shape{8, 3, 3, 8});
  CHECK_FALSE(a.find("spatial.3.gate.bias").has_value());
  cfg.layers = 7;
  CHECK_THROWS_AS(init_params<double>(cfg, 1), Error);
}

TEST_CASE("forward shapes and call counts") {
  const auto cfg = small_config(10, 8);
  std::mt19937_64 rng(1);
  const auto cloud = oracle::random_cloud(rng, 10, 20.0);
  auto params = init_params<double>(cfg, 3);
  const auto prepared = prepare_cloud(cloud, cfg);
  const auto batch = make_batch<double>(prepared, cfg);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Train);
  const auto r = forward(ctx);
  CHECK(r.logits.shape() == ad::Shape{10, 4});
  CHECK(r.p0.shape() == ad::Shape{10, 8});
  CHECK(r.channel_calls == 10);
  for (auto n : r.spatial_calls) CHECK(n == 2);
  for (std::size_t k = 0; k < kPlaneCount; ++k) {
    REQUIRE(r.state.memory[k].has_value());
    CHECK(r.state.memory[k]->rows() == cfg.planes.dims(static_cast<PlaneKind>(k)).cells());
  }
}

TEST_CASE("forward is deterministic") {
  const auto cfg = small_config();
  std::mt19937_64 rng(2);
  const auto prepared = prepare_cloud(oracle::random_cloud(rng, 30, 20.0), cfg);
  auto p1 = init_params<float>(cfg, 5), p2 = init_params<float>(cfg, 5);
  const auto a = infer_logits(prepared, p1, cfg, Mode::Train);
  const auto b = infer_logits(prepared, p2, cfg, Mode::Train);
  CHECK(a.data == b.data);
}

TEST_CASE("embedding edge cases") {
  const auto cfg = small_config();
  auto params = init_params<double>(cfg, 7);
  PointCloud one;
  one.push_back({3, 4, 0}, 0.2);
  const auto l1 = infer_logits(prepare_cloud(one, cfg), params, cfg, Mode::Eval);
  for (double v : l1.data) CHECK(std::isfinite(v));

  PointCloud dup;
  dup.push_back({3, 4, 0}, 0.2);
  dup.push_back({-5, 1, 0.5}, 0.9);
  dup.push_back({3, 4, 0}, 0.2);
  dup.push_back({8, -2, -1}, 0.1);
  const auto prepared = prepare_cloud(dup, cfg);
  const auto batch = make_batch<double>(prepared, cfg);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Train);
  const auto p0 = embed(ctx, tape.constant({4, 5}, batch.features)).value();
  for (std::size_t c = 0; c < cfg.channels; ++c) CHECK(p0[c] == p0[2 * cfg.channels + c]);
}

TEST_CASE("spatial_mix identity composition doubles the input") {
  auto cfg = small_config();
  cfg.bn_eps = kExactEps;
  // one point per polar cell: distinct sectors at one radius
  PointCloud c;
  for (int i = 0; i < 6; ++i) {
    const double phi = -2.8 + 1.0 * i;
    c.push_back({10 * std::cos(phi), 10 * std::sin(phi), 0.1 * i}, 0.5);
  }
  auto params = init_params<double>(cfg, 1);
  make_bn_identity(params);
  auto& sm = params.spatial[0];
  set_identity(params, sm.conv1);
  set_identity(params, sm.conv2);
  fill(params, sm.gate_bn.gamma, 0.0);
  fill(params, sm.gate_bn.beta, 1000.0);  // sigmoid(1000) == 1 in double

  const auto prepared = prepare_cloud(c, cfg);
  std::vector<std::uint32_t> seen = prepared.cells[0];
  std::sort(seen.begin(), seen.end());
  REQUIRE(std::adjacent_find(seen.begin(), seen.end()) == seen.end());

  const auto batch = make_batch<double>(prepared, cfg);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Eval);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 2.0);  // non-negative so relu passes through
  std::vector<double> f(6 * cfg.channels);
  for (auto& v : f) v = u(rng);
  BackboneState<double> state;
  const auto out = spatial_mix(ctx, tape.constant({6, cfg.channels}, f), 1, state, sm);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out.value()[i] == 2.0 * f[i]);

  // layer 6 reuses the polar grid; a zero stored grid changes nothing
  auto cfg10 = cfg;
  cfg10.layers = 10;
  auto p10 = init_params<double>(cfg10, 4);
  const auto b10 = make_batch<double>(prepare_cloud(c, cfg10), cfg10);
  Tape<double> t2;
  ForwardContext<double> ctx2(t2, p10, cfg10, b10, Mode::Eval);
  const auto x = t2.constant({6, cfg.channels}, f);
  const std::size_t polar_cells = cfg10.planes.dims(PlaneKind::PolarGrid).cells();
  BackboneState<double> s1, s6;
  s6.memory[0] = t2.constant({polar_cells, cfg.channels}, std::vector<double>(polar_cells * cfg.channels, 0.0));
  auto block6 = p10.spatial[0];  // same weights, compared at layer 6
  const auto a = spatial_mix(ctx2, x, 1, s1, p10.spatial[0]);
  const auto b = spatial_mix(ctx2, x, 6, s6, block6);
  const std::vector<double> av(a.value().begin(), a.value().end()), bv(b.value().begin(), b.value().end());
  CHECK(av == bv);
  const auto stored = s6.memory[0]->value();
  CHECK(std::any_of(stored.begin(), stored.end(), [](double v) { return v != 0.0; }));

  BackboneState<double> empty;
  CHECK_THROWS_AS(spatial_mix(ctx2, x, 6, empty, p10.spatial[5]), Error);
  CHECK_THROWS_AS(spatial_mix(ctx2, x, 2, empty, p10.spatial[0]), Error);
}

TEST_CASE("spatial_mix of zero features with zero biases is zero") {
  const auto cfg = small_config();
  std::mt19937_64 rng(5);
  const auto c = oracle::random_cloud(rng, 12, 20.0);
  auto params = init_params<double>(cfg, 2);
  const auto batch = make_batch<double>(prepare_cloud(c, cfg), cfg);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Train);
  BackboneState<double> state;
  const auto out = spatial_mix(ctx, tape.constant({12, cfg.channels}, std::vector<double>(12 * cfg.channels, 0.0)), 1,
                               state, params.spatial[0]);
  for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("channel_mix residual and identity") {
  auto cfg = small_config();
  cfg.bn_eps = kExactEps;
  std::mt19937_64 rng(6);
  const auto c = oracle::random_cloud(rng, 8, 20.0);
  auto params = init_params<double>(cfg, 3);
  make_bn_identity(params);
  const auto batch = make_batch<double>(prepare_cloud(c, cfg), cfg);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> f(8 * cfg.channels);
  for (auto& v : f) v = u(rng);

  auto& cm = params.channel[0];
  auto zeroed = params;
  fill(zeroed, cm.fc1.weight, 0.0);
  fill(zeroed, cm.fc2.weight, 0.0);
  fill(zeroed, cm.depthwise.weight, 0.0);
  {
    Tape<double> tape;
    ForwardContext<double> ctx(tape, zeroed, cfg, batch, Mode::Eval);
    const auto out = channel_mix(ctx, tape.constant({8, cfg.channels}, f), zeroed.channel[0]);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(out.value()[i] == f[i]);
  }
  set_identity(params, cm.fc1);
  set_identity(params, cm.fc2);
  fill(params, cm.depthwise.weight, 1.0);
  fill(params, *cm.depthwise.bias, 0.0);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Eval);
  const auto out = channel_mix(ctx, tape.constant({8, cfg.channels}, f), cm);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out.value()[i] == 2.0 * f[i]);
}

TEST_CASE("zeroed backbone leaves only the residual path") {
  const auto cfg = small_config(10, 4);
  std::mt19937_64 rng(7);
  const auto c = oracle::random_cloud(rng, 25, 20.0);
  auto params = init_params<double>(cfg, 9);
  for (auto& s : params.spatial) {
    fill(params, s.conv1.weight, 0.0);
    fill(params, s.conv2.weight, 0.0);
  }
  for (auto& m : params.channel) {
    fill(params, m.fc2.weight, 0.0);
    fill(params, m.depthwise.weight, 0.0);
  }
  const auto batch = make_batch<double>(prepare_cloud(c, cfg), cfg);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Train);
  const auto r = forward(ctx);
  const auto p0 = r.p0.value();
  const auto& w = params.tensors[params.head.weight].values;
  const auto& b = params.tensors[*params.head.bias].values;
  for (std::size_t i = 0; i < 25; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = b[k];
      for (std::size_t ch = 0; ch < 4; ++ch) expect += w[k * 4 + ch] * 2.0 * p0[i * 4 + ch];
      CHECK(r.logits.value()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("permutation equivariance") {
  const auto cfg = small_config(5, 8);
  std::mt19937_64 rng(8);
  const auto c = oracle::random_cloud(rng, 60, 20.0);
  auto params = init_params<float>(cfg, 4);
  const auto base = infer_logits(prepare_cloud(c, cfg), params, cfg, Mode::Train);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<std::size_t> perm(c.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto out = infer_logits(prepare_cloud(select(c, perm), cfg), params, cfg, Mode::Train);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(out(i, k) - base(perm[i], k)) <= 1e-5);
  }
}

TEST_CASE("batched eval equals per-cloud eval") {
  const auto cfg = small_config();
  std::mt19937_64 rng(9);
  const auto a = prepare_cloud(oracle::random_cloud(rng, 15, 20.0), cfg);
  const auto b = prepare_cloud(oracle::random_cloud(rng, 9, 20.0), cfg);
  auto params = init_params<double>(cfg, 5);
  const PreparedCloud* both[] = {&a, &b};
  const auto batch = make_batch<double>(std::span<const PreparedCloud* const>(both), cfg);
  Tape<double> tape;
  ForwardContext<double> ctx(tape, params, cfg, batch, Mode::Eval, false);
  const auto joint = forward(ctx).logits.value();
  const auto la = infer_logits(a, params, cfg, Mode::Eval), lb = infer_logits(b, params, cfg, Mode::Eval);
  CHECK(std::equal(la.data.begin(), la.data.end(), joint.begin()));
  CHECK(std::equal(lb.data.begin(), lb.data.end(), joint.begin() + static_cast<std::ptrdiff_t>(la.data.size())));
}

TEST_CASE("argmax skips the ignore class") {
  const std::vector<double> logits{9, 1, 2, 5, 3, 3};
  CHECK(argmax_rows<double>(logits, 3, 0) == std::vector<int>{2, 1});
  CHECK(argmax_rows<double>(logits, 3, std::nullopt) == std::vector<int>{0, 0});
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = small_config();
  auto params = init_params<double>(cfg, 11);
  params.bn[2].running_mean[1] = 0.25;
  const auto path = std::filesystem::temp_directory_path() / "ppnet_test_ckpt.bin";
  save_checkpoint(path, params);
  auto loaded = init_params<double>(cfg, 12);
  load_checkpoint(path, loaded);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& a = params.tensors[i].values;
    const auto& b = loaded.tensors[i].values;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(b[j] == static_cast<double>(static_cast<float>(a[j])));
  }
  CHECK(loaded.bn[2].running_mean[1] == 0.25);

  auto wider = init_params<double>(small_config(5, 8), 1);
  CHECK_THROWS_AS(load_checkpoint(path, wider), Error);
  auto deeper = init_params<double>(small_config(10, 4), 1);
  CHECK_THROWS_AS(load_checkpoint(path, deeper), Error);
  std::filesystem::remove(path);
}
