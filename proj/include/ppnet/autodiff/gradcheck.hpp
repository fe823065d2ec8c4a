#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ppnet/autodiff/tape.hpp"

namespace ppnet::ad {

struct GradCheckInput {
  Shape shape;
  std::vector<double> values;
};

/// Builds the op under test on a fresh tape from the given input leaves.
using TapeFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Directional derivative estimates for one direction.
struct DirectionalProbe {
  double analytic = 0.0;
  double central = 0.0;
  double forward = 0.0;   // (f(x+h d) - f(x)) / h
  double backward = 0.0;  // (f(x) - f(x-h d)) / h

  double relative_error() const;
  /// One-sided slopes disagree by more than smooth curvature allows: the
  /// stencil straddles a kink (relu, max, sort order change).
  bool straddles_kink() const;
};

DirectionalProbe probe_direction(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::size_t input_index,
                                 std::span<const double> direction, std::span<const double> weights,
                                 double step = 1e-5);

/// Relative error between the analytic directional derivative of
/// sum(weights * op(inputs)) along `direction` (applied to input
/// `input_index`) and its central finite difference with step `step`.
/// Empty `weights` means all ones.
double directional_error(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::size_t input_index,
                         std::span<const double> direction, std::span<const double> weights, double step = 1e-5);

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t probes = 0;
  std::size_t kinks_skipped = 0;  // directions redrawn because they crossed a kink
};

/// Max relative error over `directions` random unit-variance directions per
/// input, with random output weights. A direction whose stencil straddles a
/// kink is redrawn (at most 4 times, after which it counts as is).
/// Deterministic in `seed`.
GradCheckResult grad_check_detailed(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::uint64_t seed,
                                    std::size_t directions = 3, double step = 1e-5);

inline double grad_check(const TapeFn& op, const std::vector<GradCheckInput>& inputs, std::uint64_t seed,
                         std::size_t directions = 3, double step = 1e-5) {
  return grad_check_detailed(op, inputs, seed, directions, step).max_error;
}

}  // namespace ppnet::ad
