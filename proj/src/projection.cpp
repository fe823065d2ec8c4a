#include "ppnet/projection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

namespace ppnet {

std::string to_string(PlaneKind kind) {
  switch (kind) {
    case PlaneKind::PolarGrid: return "polar";
    case PlaneKind::XY: return "xy";
    case PlaneKind::XZ: return "xz";
    case PlaneKind::YZ: return "yz";
    case PlaneKind::RangeImage: return "range";
  }
  return "?";
}

PlaneKind parse_plane_kind(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "polar" || s == "polargrid") return PlaneKind::PolarGrid;
  if (s == "xy" || s == "bev") return PlaneKind::XY;
  if (s == "xz") return PlaneKind::XZ;
  if (s == "yz") return PlaneKind::YZ;
  if (s == "range" || s == "rangeimage") return PlaneKind::RangeImage;
  fail(ErrorKind::Argument, "unknown plane kind '" + name + "'");
}

namespace {

std::size_t cells_along(double extent, double cell_size) {
  // tolerance keeps e.g. 100 / 0.4 from rounding up to 251
  return static_cast<std::size_t>(std::ceil(extent / cell_size - 1e-9));
}

std::size_t clamp_index(double value, std::size_t count) {
  if (!(value > 0.0)) return 0;  // also catches NaN
  const double hi = static_cast<double>(count - 1);
  return value >= hi ? count - 1 : static_cast<std::size_t>(value);
}

}  // namespace

CartesianGridConfig CartesianGridConfig::make(PlaneKind plane, const CropBounds& b, double cell_size) {
  CartesianGridConfig cfg;
  cfg.plane = plane;
  cfg.cell_size = cell_size;
  switch (plane) {
    case PlaneKind::XY:
      cfg.col_min = b.x_min, cfg.col_max = b.x_max, cfg.row_min = b.y_min, cfg.row_max = b.y_max;
      break;
    case PlaneKind::XZ:
      cfg.col_min = b.x_min, cfg.col_max = b.x_max, cfg.row_min = b.z_min, cfg.row_max = b.z_max;
      break;
    case PlaneKind::YZ:
      cfg.col_min = b.y_min, cfg.col_max = b.y_max, cfg.row_min = b.z_min, cfg.row_max = b.z_max;
      break;
    default:
      fail(ErrorKind::Argument, "cartesian grid requires an XY, XZ or YZ plane");
  }
  if (!(cell_size > 0.0)) fail(ErrorKind::Argument, "cartesian grid: cell_size must be positive");
  cfg.width = cells_along(cfg.col_max - cfg.col_min, cell_size);
  cfg.height = cells_along(cfg.row_max - cfg.row_min, cell_size);
  cfg.validate();
  return cfg;
}

void CartesianGridConfig::validate() const {
  if (!(cell_size > 0.0) || !(col_max > col_min) || !(row_max > row_min) || width == 0 || height == 0)
    fail(ErrorKind::Argument, "degenerate cartesian grid config");
}

void PolarGridConfig::validate() const {
  if (!(rho_min > 0.0 && rho_min < rho_max) || rings < 2 || sectors < 2)
    fail(ErrorKind::Argument, "polar grid needs 0 < rho_min < rho_max, rings >= 2, sectors >= 2");
}

void RangeImageConfig::validate() const {
  if (height < 2 || width < 2 || !(fov_up >= 0.0) || !(fov_down > 0.0))
    fail(ErrorKind::Argument, "range image needs H, W >= 2, fov_up >= 0, fov_down > 0");
}

CartesianGridConfig PlaneConfigs::cartesian(PlaneKind plane) const {
  return CartesianGridConfig::make(plane, bounds, cell_size);
}

GridDims PlaneConfigs::dims(PlaneKind kind) const {
  switch (kind) {
    case PlaneKind::PolarGrid: return {polar.rings, polar.sectors};
    case PlaneKind::RangeImage: return {range.height, range.width};
    default: {
      const auto c = cartesian(kind);
      return {c.height, c.width};
    }
  }
}

void PlaneConfigs::validate() const {
  bounds.validate();
  for (auto kind : {PlaneKind::XY, PlaneKind::XZ, PlaneKind::YZ}) cartesian(kind);
  polar.validate();
  range.validate();
}

CellIndex cartesian_bin(const Vec3& p, const CartesianGridConfig& cfg) {
  cfg.validate();
  double a = 0, b = 0;
  switch (cfg.plane) {
    case PlaneKind::XY: a = p[0], b = p[1]; break;
    case PlaneKind::XZ: a = p[0], b = p[2]; break;
    case PlaneKind::YZ: a = p[1], b = p[2]; break;
    default: fail(ErrorKind::Argument, "cartesian_bin: not a cartesian plane");
  }
  return {clamp_index(std::floor((b - cfg.row_min) / cfg.cell_size), cfg.height),
          clamp_index(std::floor((a - cfg.col_min) / cfg.cell_size), cfg.width)};
}

CellIndex polar_bin(const Vec3& p, const PolarGridConfig& cfg) {
  cfg.validate();
  const double rho = std::clamp(std::hypot(p[0], p[1]), cfg.rho_min, cfg.rho_max);
  const double phi = std::atan2(p[1], p[0]);
  const double log_min = std::log(cfg.rho_min);
  const double ring = (std::log(rho) - log_min) / (std::log(cfg.rho_max) - log_min) * static_cast<double>(cfg.rings - 1);
  const double sector = 0.5 * (phi + std::numbers::pi) * static_cast<double>(cfg.sectors) / std::numbers::pi - 1.0;
  return {clamp_index(std::round(ring), cfg.rings), clamp_index(std::round(sector), cfg.sectors)};
}

CellIndex spherical_bin(const Vec3& p, const RangeImageConfig& cfg) {
  cfg.validate();
  const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  if (!(r > 0.0)) fail(ErrorKind::Argument, "spherical_bin: degenerate point at the sensor origin");
  const double u = 0.5 * (1.0 - std::atan2(p[1], p[0]) / std::numbers::pi) * static_cast<double>(cfg.width);
  const double v = (1.0 - (std::asin(p[2] / r) + cfg.fov_down) / cfg.fov()) * static_cast<double>(cfg.height);
  return {clamp_index(std::floor(v), cfg.height), clamp_index(std::floor(u), cfg.width)};
}

std::vector<std::uint32_t> assign_cells(const PointCloud& cloud, PlaneKind kind, const PlaneConfigs& cfg) {
  const GridDims dims = cfg.dims(kind);
  std::vector<std::uint32_t> cells(cloud.size());
  auto flatten = [&](CellIndex c) { return static_cast<std::uint32_t>(c.row * dims.cols + c.col); };
  switch (kind) {
    case PlaneKind::PolarGrid:
      for (std::size_t i = 0; i < cloud.size(); ++i) cells[i] = flatten(polar_bin(cloud.coords[i], cfg.polar));
      break;
    case PlaneKind::RangeImage:
      for (std::size_t i = 0; i < cloud.size(); ++i) cells[i] = flatten(spherical_bin(cloud.coords[i], cfg.range));
      break;
    default: {
      const auto grid = cfg.cartesian(kind);
      for (std::size_t i = 0; i < cloud.size(); ++i) cells[i] = flatten(cartesian_bin(cloud.coords[i], grid));
    }
  }
  return cells;
}

PlaneGrid project(const FeatureMatrix& features, const PointCloud& cloud, PlaneKind kind, const PlaneConfigs& cfg) {
  if (features.rows != cloud.size()) fail(ErrorKind::Argument, "project: feature rows differ from point count");
  PlaneGrid grid;
  grid.kind = kind;
  grid.dims = cfg.dims(kind);
  grid.channels = features.cols;
  grid.cell_of_point = assign_cells(cloud, kind, cfg);
  grid.cells.assign(grid.dims.cells() * grid.channels, 0.0);
  grid.occupancy.assign(grid.dims.cells(), 0u);
  scatter_mean<double>(features.data, features.cols, grid.cell_of_point, grid.dims.cells(), grid.cells, grid.occupancy);
  return grid;
}

FeatureMatrix unproject(const PlaneGrid& grid) {
  FeatureMatrix out(grid.cell_of_point.size(), grid.channels);
  for (auto c : grid.cell_of_point) {
    if (c >= grid.dims.cells()) fail(ErrorKind::Argument, "unproject: cell index out of range");
  }
  gather_rows<double>(grid.cells, grid.channels, grid.cell_of_point, out.data);
  return out;
}

PlaneKind plane_for_layer(std::size_t layer, std::size_t total_layers, const PlaneOrder& order) {
  if (total_layers < kPlaneCount || total_layers % kPlaneCount != 0)
    fail(ErrorKind::Config, "layer count must be a positive multiple of 5");
  if (layer < 1 || layer > total_layers) fail(ErrorKind::Argument, "layer index out of range");
  return order[(layer - 1) % kPlaneCount];
}

}  // namespace ppnet
