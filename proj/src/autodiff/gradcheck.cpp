#include "ppnet/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ppnet/autodiff/ops.hpp"

namespace ppnet::ad {

namespace {

double weighted_output(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::span<const double> weights,
                       std::vector<double>* grad_of, std::size_t grad_index) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.parameter(in.shape, in.values));
  const Var<double> out = op(tape, leaves);
  const std::size_t n = numel(out.shape());
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) {
    if (weights.size() != n) fail(ErrorKind::Argument, "grad_check: weight count differs from output size");
    std::copy(weights.begin(), weights.end(), w.begin());
  }
  const Var<double> objective = sum(mul(out, tape.constant(out.shape(), w)));
  const double value = objective.value()[0];
  if (grad_of) {
    tape.backward(objective);
    const auto g = tape.grad(leaves[grad_index]);
    grad_of->assign(g.begin(), g.end());
  }
  return value;
}

}  // namespace

double DirectionalProbe::relative_error() const {
  const double scale = std::max({std::abs(analytic), std::abs(central), 1e-7});
  return std::abs(analytic - central) / scale;
}

bool DirectionalProbe::straddles_kink() const {
  const double scale = std::max({std::abs(forward), std::abs(backward), 1e-7});
  return std::abs(forward - backward) > 1e-2 * scale;
}

DirectionalProbe probe_direction(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::size_t input_index,
                                 std::span<const double> direction, std::span<const double> weights, double step) {
  if (input_index >= inputs.size() || direction.size() != inputs[input_index].values.size())
    fail(ErrorKind::Argument, "grad_check: direction does not match the selected input");
  DirectionalProbe p;
  std::vector<double> grad;
  const double center = weighted_output(op, inputs, weights, &grad, input_index);
  for (std::size_t i = 0; i < grad.size(); ++i) p.analytic += grad[i] * direction[i];

  auto shifted = inputs;
  auto& x = shifted[input_index].values;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = inputs[input_index].values[i] + step * direction[i];
  const double plus = weighted_output(op, shifted, weights, nullptr, 0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = inputs[input_index].values[i] - step * direction[i];
  const double minus = weighted_output(op, shifted, weights, nullptr, 0);
  p.central = (plus - minus) / (2.0 * step);
  p.forward = (plus - center) / step;
  p.backward = (center - minus) / step;
  return p;
}

double directional_error(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::size_t input_index,
                         std::span<const double> direction, std::span<const double> weights, double step) {
  return probe_direction(op, inputs, input_index, direction, weights, step).relative_error();
}

GradCheckResult grad_check_detailed(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::uint64_t seed,
                                    std::size_t directions, double step) {
  constexpr int kMaxRedraws = 4;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::size_t out_size = 0;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.constant(in.shape, in.values));
    out_size = numel(op(tape, leaves).shape());
  }
  std::vector<double> weights(out_size);
  for (auto& w : weights) w = normal(rng);

  GradCheckResult result;
  for (std::size_t input = 0; input < inputs.size(); ++input) {
    for (std::size_t d = 0; d < directions; ++d) {
      std::vector<double> dir(inputs[input].values.size());
      DirectionalProbe p;
      for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
        for (auto& v : dir) v = normal(rng);
        p = probe_direction(op, inputs, input, dir, weights, step);
        if (!p.straddles_kink()) break;
        if (attempt < kMaxRedraws) ++result.kinks_skipped;
      }
      ++result.probes;
      result.max_error = std::max(result.max_error, p.relative_error());
    }
  }
  return result;
}

}  // namespace ppnet::ad
