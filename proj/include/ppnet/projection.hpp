#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppnet/cloud.hpp"
#include "ppnet/matrix.hpp"

namespace ppnet {

enum class PlaneKind { PolarGrid = 0, XY = 1, XZ = 2, YZ = 3, RangeImage = 4 };

inline constexpr std::size_t kPlaneCount = 5;
using PlaneOrder = std::array<PlaneKind, kPlaneCount>;
inline constexpr PlaneOrder kDefaultPlaneOrder{PlaneKind::PolarGrid, PlaneKind::XY, PlaneKind::XZ, PlaneKind::YZ,
                                               PlaneKind::RangeImage};

std::string to_string(PlaneKind kind);
/// Accepts "polar", "xy", "xz", "yz", "range" (case-insensitive).
PlaneKind parse_plane_kind(const std::string& name);

struct GridDims {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t cells() const { return rows * cols; }
};

struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const CellIndex&) const = default;
};

/// Axis-aligned plane grid. The first axis of the plane maps to columns and
/// the second to rows: XY -> (x, y), XZ -> (x, z), YZ -> (y, z).
struct CartesianGridConfig {
  PlaneKind plane = PlaneKind::XY;
  double col_min = 0, col_max = 0;
  double row_min = 0, row_max = 0;
  double cell_size = 0.4;
  std::size_t width = 0;
  std::size_t height = 0;

  static CartesianGridConfig make(PlaneKind plane, const CropBounds& bounds, double cell_size);
  void validate() const;
};

/// Log-radial polar grid; rows are rings, columns are sectors.
struct PolarGridConfig {
  double rho_min = 2.0;
  double rho_max = 50.0;
  std::size_t rings = 64;
  std::size_t sectors = 512;

  void validate() const;
};

/// Spherical range image. `fov_down` is the magnitude of the downward
/// field of view; the total vertical FOV is fov_up + fov_down.
struct RangeImageConfig {
  std::size_t height = 64;
  std::size_t width = 2048;
  double fov_up = 3.0 * 3.14159265358979323846 / 180.0;
  double fov_down = 25.0 * 3.14159265358979323846 / 180.0;

  double fov() const { return fov_up + fov_down; }
  void validate() const;
};

/// Grid geometry for all five planes.
struct PlaneConfigs {
  CropBounds bounds;
  double cell_size = 0.4;
  PolarGridConfig polar;
  RangeImageConfig range;

  CartesianGridConfig cartesian(PlaneKind plane) const;
  GridDims dims(PlaneKind kind) const;
  void validate() const;
};

CellIndex cartesian_bin(const Vec3& p, const CartesianGridConfig& cfg);
/// row = ring, col = sector.
CellIndex polar_bin(const Vec3& p, const PolarGridConfig& cfg);
/// row = beam (v), col = azimuth (u). Throws ErrorKind::Argument at r = 0.
CellIndex spherical_bin(const Vec3& p, const RangeImageConfig& cfg);

/// Flattened cell index (row * cols + col) of every point on the given plane.
std::vector<std::uint32_t> assign_cells(const PointCloud& cloud, PlaneKind kind, const PlaneConfigs& cfg);

struct PlaneGrid {
  PlaneKind kind = PlaneKind::XY;
  GridDims dims;
  std::size_t channels = 0;
  std::vector<double> cells;               // rows * cols * channels
  std::vector<std::uint32_t> occupancy;    // rows * cols
  std::vector<std::uint32_t> cell_of_point;

  std::span<const double> cell(std::size_t index) const { return {cells.data() + index * channels, channels}; }
};

/// Scatter-mean of per-point features into the plane grid.
PlaneGrid project(const FeatureMatrix& features, const PointCloud& cloud, PlaneKind kind, const PlaneConfigs& cfg);

/// Gathers each point's feature back from its cell.
FeatureMatrix unproject(const PlaneGrid& grid);

/// Plane used by backbone layer `layer` (1-based) of `total_layers`.
PlaneKind plane_for_layer(std::size_t layer, std::size_t total_layers, const PlaneOrder& order = kDefaultPlaneOrder);

// ---------------------------------------------------------------------------
// Kernels shared with the differentiable ops.

/// out[c] = mean of rows i with cells[i] == c. Sums run in ascending row
/// order with double accumulation; empty cells are zero.
template <typename T>
void scatter_mean(std::span<const T> values, std::size_t channels, std::span<const std::uint32_t> cells,
                  std::size_t num_cells, std::span<T> out, std::span<std::uint32_t> occupancy) {
  std::vector<double> acc(num_cells * channels, 0.0);
  std::fill(occupancy.begin(), occupancy.end(), 0u);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::size_t c = cells[i];
    if (c >= num_cells) fail(ErrorKind::Argument, "scatter_mean: cell index out of range");
    ++occupancy[c];
    const T* src = values.data() + i * channels;
    double* dst = acc.data() + c * channels;
    for (std::size_t k = 0; k < channels; ++k) dst[k] += static_cast<double>(src[k]);
  }
  for (std::size_t c = 0; c < num_cells; ++c) {
    const double inv = occupancy[c] ? 1.0 / occupancy[c] : 0.0;
    for (std::size_t k = 0; k < channels; ++k) out[c * channels + k] = static_cast<T>(acc[c * channels + k] * inv);
  }
}

template <typename T>
void gather_rows(std::span<const T> source, std::size_t channels, std::span<const std::uint32_t> rows,
                 std::span<T> out) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const T* src = source.data() + static_cast<std::size_t>(rows[i]) * channels;
    std::copy(src, src + channels, out.data() + i * channels);
  }
}

}  // namespace ppnet
