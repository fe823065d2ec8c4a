#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ppnet {

struct GradCheckCase {
  std::string name;
  double error = 0.0;      // worst relative directional error
  double tolerance = 0.0;
  std::size_t probes = 0;
  std::size_t kinks_skipped = 0;
  bool passed() const { return error <= tolerance; }
};

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kNetworkGradTolerance = 1e-3;

/// Finite-difference checks of every differentiable op in f64.
std::vector<GradCheckCase> op_gradcheck_suite(std::uint64_t seed);

/// Whole network on a 20-point cloud, 5 layers, 4 channels, checked with
/// respect to the input features and every parameter tensor. Two objectives:
/// weighted logits, and logits followed by the training loss.
std::vector<GradCheckCase> network_gradcheck(std::uint64_t seed);

}  // namespace ppnet
