#include "ppnet/gradcheck_suite.hpp"

#include <random>

#include "ppnet/autodiff/gradcheck.hpp"
#include "ppnet/autodiff/ops.hpp"
#include "ppnet/loss.hpp"
#include "ppnet/network.hpp"

namespace ppnet {

using ad::GradCheckInput;
using ad::Tape;
using V = ad::Var<double>;
using Leaves = std::vector<V>;

namespace {

GradCheckInput random_input(std::mt19937_64& rng, ad::Shape shape, double min_abs = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GradCheckInput in{std::move(shape), {}};
  in.values.resize(ad::numel(in.shape));
  for (auto& v : in.values) {
    do v = u(rng);
    while (std::abs(v) < min_abs);
  }
  return in;
}

}  // namespace

std::vector<GradCheckCase> op_gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> out;
  auto check = [&](const std::string& name, const ad::TapeFn& fn, const std::vector<GradCheckInput>& inputs) {
    const auto r = ad::grad_check_detailed(fn, inputs, rng());
    out.push_back({name, r.max_error, kOpGradTolerance, r.probes, r.kinks_skipped});
  };
  auto in = [&](ad::Shape s, double min_abs = 0.0) { return random_input(rng, std::move(s), min_abs); };

  check("add", [](Tape<double>&, const Leaves& x) { return ad::add(x[0], x[1]); }, {in({4, 3}), in({4, 3})});
  check("sub", [](Tape<double>&, const Leaves& x) { return ad::sub(x[0], x[1]); }, {in({4, 3}), in({4, 3})});
  check("mul", [](Tape<double>&, const Leaves& x) { return ad::mul(x[0], x[1]); }, {in({4, 3}), in({4, 3})});
  check("scale", [](Tape<double>&, const Leaves& x) { return ad::scale(x[0], 1.7); }, {in({4, 3})});
  check("relu", [](Tape<double>&, const Leaves& x) { return ad::relu(x[0]); }, {in({4, 3}, 0.05)});
  check("sigmoid", [](Tape<double>&, const Leaves& x) { return ad::sigmoid(x[0]); }, {in({4, 3})});
  check("square", [](Tape<double>&, const Leaves& x) { return ad::square(x[0]); }, {in({4, 3})});
  check("softmax_rows", [](Tape<double>&, const Leaves& x) { return ad::softmax_rows(x[0]); }, {in({5, 4})});
  check("linear", [](Tape<double>&, const Leaves& x) { return ad::linear(x[0], x[1], std::optional<V>(x[2])); },
        {in({5, 3}), in({4, 3}), in({4})});
  check("linear_nobias", [](Tape<double>&, const Leaves& x) { return ad::linear(x[0], x[1], std::optional<V>()); },
        {in({5, 3}), in({4, 3})});
  {
    // Two 3x4 images with two channels; some input pixels are empty.
    auto x = in({24, 2});
    for (std::size_t r : {0u, 5u, 13u, 23u}) x.values[r * 2] = x.values[r * 2 + 1] = 0.0;
    check("conv2d_same",
          [](Tape<double>&, const Leaves& v) { return ad::conv2d_same(v[0], 2, 3, 4, v[1], std::optional<V>(v[2])); },
          {x, in({3, 3, 3, 2}), in({3})});
  }
  check("depthwise", [](Tape<double>&, const Leaves& x) { return ad::depthwise(x[0], x[1], x[2]); },
        {in({5, 3}), in({3}), in({3})});
  check("batch_norm_train",
        [](Tape<double>&, const Leaves& x) {
          ad::BatchNormStats<double> stats(3);
          return ad::batch_norm(x[0], x[1], x[2], stats, ad::Mode::Train);
        },
        {in({6, 3}), in({3}), in({3})});
  check("batch_norm_eval",
        [](Tape<double>&, const Leaves& x) {
          ad::BatchNormStats<double> stats(3);
          stats.running_mean = {0.1, -0.2, 0.3};
          stats.running_var = {0.5, 1.5, 2.0};
          return ad::batch_norm(x[0], x[1], x[2], stats, ad::Mode::Eval);
        },
        {in({6, 3}), in({3}), in({3})});
  check("max_over_neighbors", [](Tape<double>&, const Leaves& x) { return ad::max_over_neighbors(x[0], 3); },
        {in({12, 2})});
  {
    static const std::vector<std::uint32_t> rows{0, 2, 2, 4, 1, 0};
    check("gather", [](Tape<double>&, const Leaves& x) { return ad::gather(x[0], std::span<const std::uint32_t>(rows)); },
          {in({5, 3})});
    static const std::vector<std::uint32_t> cells{0, 3, 3, 1, 0, 3};  // cell 2 stays empty
    check("scatter_mean",
          [](Tape<double>&, const Leaves& x) { return ad::scatter_mean(x[0], std::span<const std::uint32_t>(cells), 4); },
          {in({6, 3})});
  }
  check("concat_cols", [](Tape<double>&, const Leaves& x) { return ad::concat_cols(x[0], x[1]); },
        {in({4, 2}), in({4, 3})});
  check("sum", [](Tape<double>&, const Leaves& x) { return ad::sum(x[0]); }, {in({4, 3})});
  check("mean", [](Tape<double>&, const Leaves& x) { return ad::mean(x[0]); }, {in({4, 3})});
  {
    static const std::vector<int> labels{1, 2, 0, 3, 1, 2, 3, 1};
    check("cross_entropy",
          [](Tape<double>&, const Leaves& x) { return ad::cross_entropy(x[0], std::span<const int>(labels), 0); },
          {in({8, 4})});
    check("lovasz_softmax",
          [](Tape<double>&, const Leaves& x) {
            return ad::lovasz_softmax(ad::softmax_rows(x[0]), std::span<const int>(labels), 0);
          },
          {in({8, 4})});
    check("total_loss",
          [](Tape<double>&, const Leaves& x) {
            return total_loss(x[0], std::span<const int>(labels), LossConfig{.lambda = 1.0, .ignore_index = 0});
          },
          {in({8, 4})});
  }
  return out;
}

std::vector<GradCheckCase> network_gradcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uxy(-10.0, 10.0), uz(-2.0, 1.0), ur(0.0, 1.0);
  std::uniform_int_distribution<int> ulabel(0, 3);

  NetworkConfig cfg;
  cfg.layers = 5;
  cfg.channels = 4;
  cfg.k_neighbors = 4;
  cfg.num_classes = 4;
  cfg.mlp_hidden = 4;
  cfg.conv_hidden = 4;
  cfg.planes.cell_size = 4.0;
  cfg.planes.polar = {.rho_min = 1.0, .rho_max = 20.0, .rings = 8, .sectors = 16};
  cfg.planes.range.height = 8;
  cfg.planes.range.width = 16;

  PointCloud cloud;
  for (int i = 0; i < 20; ++i) cloud.push_back({uxy(rng), uxy(rng), uz(rng)}, ur(rng), ulabel(rng));
  cloud.labels[0] = 1;  // at least one scored point

  const auto prepared = prepare_cloud(cloud, cfg);
  const auto batch = make_batch<double>(prepared, cfg);
  auto params = init_params<double>(cfg, rng());

  std::vector<GradCheckInput> inputs;
  inputs.push_back({ad::Shape{batch.points, kInputFeatures}, batch.features});
  for (const auto& t : params.tensors) inputs.push_back({t.shape, t.values});
  // Nonzero biases and beta so every term of the network is exercised.
  std::uniform_real_distribution<double> small(-0.2, 0.2);
  for (std::size_t i = 1; i < inputs.size(); ++i)
    if (inputs[i].shape.size() == 1)
      for (auto& v : inputs[i].values) v += small(rng);

  const std::vector<int> labels = cloud.labels;
  const LossConfig loss_cfg{.lambda = 1.0, .ignore_index = 0};
  auto logits = [&](Tape<double>& tape, const Leaves& leaves) {
    ForwardContext<double> ctx(tape, params, cfg, batch, ad::Mode::Train, Leaves(leaves.begin() + 1, leaves.end()));
    return forward(ctx, leaves[0]).logits;
  };
  auto loss = [&](Tape<double>& tape, const Leaves& leaves) {
    return total_loss(logits(tape, leaves), std::span<const int>(labels), loss_cfg);
  };
  const auto a = ad::grad_check_detailed(logits, inputs, rng(), 2);
  const auto b = ad::grad_check_detailed(loss, inputs, rng(), 2);
  return {{"network_logits", a.max_error, kNetworkGradTolerance, a.probes, a.kinks_skipped},
          {"network_loss", b.max_error, kNetworkGradTolerance, b.probes, b.kinks_skipped}};
}

}  // namespace ppnet
