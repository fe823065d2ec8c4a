#include <doctest.h>

#include <numbers>
#include <random>

#include "oracles.hpp"
#include "ppnet/error.hpp"
#include "ppnet/projection.hpp"

using namespace ppnet;

namespace {

constexpr PlaneKind kAll[] = {PlaneKind::PolarGrid, PlaneKind::XY, PlaneKind::XZ, PlaneKind::YZ, PlaneKind::RangeImage};

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_CASE("cartesian_bin boundaries") {
  const auto cfg = CartesianGridConfig::make(PlaneKind::XY, CropBounds{}, 0.4);
  CHECK(cfg.width == 250);
  CHECK(cfg.height == 250);
  CHECK(cartesian_bin({0, 0, 0}, cfg).col == 125);
  CHECK(cartesian_bin({-50, 0, 0}, cfg).col == 0);
  CHECK(cartesian_bin({50, 0, 0}, cfg).col == 249);
  CHECK(cartesian_bin({0, -50, 0}, cfg).row == 0);

  const auto xz = CartesianGridConfig::make(PlaneKind::XZ, CropBounds{}, 0.4);
  CHECK(xz.height == 13);  // 5 m / 0.4 m, rounded up
  CHECK(cartesian_bin({0, 0, -3}, xz).row == 0);
  CHECK(cartesian_bin({0, 0, 2}, xz).row == 12);
  const auto yz = CartesianGridConfig::make(PlaneKind::YZ, CropBounds{}, 0.4);
  CHECK(cartesian_bin({7, -49.9, 0}, yz).col == 0);
}

TEST_CASE("polar_bin hand values") {
  const PolarGridConfig cfg;
  CHECK(polar_bin({2, 0, 0}, cfg).row == 0);
  CHECK(polar_bin({50, 0, 0}, cfg).row == 63);
  CHECK(polar_bin({0.5, 0, 0}, cfg).row == 0);
  CHECK(polar_bin({0, 0, 0}, cfg).row == 0);
  CHECK(polar_bin({90, 0, 0}, cfg).row == 63);
  CHECK(polar_bin({10, 0, 0}, cfg).col == 255);
  // phi = -pi lands at -1 before clamping
  CHECK(polar_bin({-10, -0.0, 0}, cfg).col == 0);
  // phi = pi/2 -> 0.5 * 1.5 * 512 - 1 = 383
  CHECK(polar_bin({0, 10, 0}, cfg).col == 383);
}

TEST_CASE("spherical_bin hand values") {
  const RangeImageConfig cfg;
  CHECK(spherical_bin({10, 0, 0}, cfg).col == 1024);
  CHECK(spherical_bin({10, 0, 0}, cfg).row == 6);
  const double up = cfg.fov_up;
  CHECK(spherical_bin({std::cos(up) * 10, 0, std::sin(up) * 10}, cfg).row == 0);
  CHECK(spherical_bin({10, 0, 20}, cfg).row == 0);
  CHECK(spherical_bin({10, 0, -20}, cfg).row == 63);
  CHECK_THROWS_AS(spherical_bin({0, 0, 0}, cfg), Error);
}

TEST_CASE("binning monotonicity") {
  const PolarGridConfig pc;
  const RangeImageConfig rc;
  std::size_t prev_ring = 0, prev_row = rc.height;
  for (int i = 0; i <= 600; ++i) {
    const double rho = 0.1 * i;
    const auto ring = polar_bin({rho * 0.6, rho * 0.8, 0}, pc).row;
    CHECK(ring >= prev_ring);
    prev_ring = ring;
    const double elev = -0.6 + 0.002 * i;
    const auto row = spherical_bin({std::cos(elev), 0.3, std::sin(elev)}, rc).row;
    CHECK(row <= prev_row);
    prev_row = row;
  }
}

TEST_CASE("project: means, empty cells, occupancy") {
  PlaneConfigs cfg;
  PointCloud c;
  c.push_back({1.01, 1.01, 0}, 1.0);
  c.push_back({1.02, 1.03, 0}, 3.0);
  c.push_back({-20, 5, 0}, 7.0);
  const auto f = build_features(c);
  const auto g = project(f, c, PlaneKind::XY, cfg);
  REQUIRE(g.cell_of_point[0] == g.cell_of_point[1]);
  CHECK(g.cell(g.cell_of_point[0])[3] == 2.0);
  CHECK(g.cell(g.cell_of_point[2])[3] == 7.0);
  std::uint64_t occ = 0;
  for (std::size_t i = 0; i < g.dims.cells(); ++i) {
    occ += g.occupancy[i];
    if (!g.occupancy[i])
      for (double v : g.cell(i)) CHECK(v == 0.0);
  }
  CHECK(occ == 3);

  const auto back = unproject(g);
  for (std::size_t k = 0; k < 5; ++k) CHECK(back(0, k) == back(1, k));
  for (std::size_t k = 0; k < 5; ++k) CHECK(back(2, k) == f(2, k));

  auto zero = g;
  std::fill(zero.cells.begin(), zero.cells.end(), 0.0);
  for (double v : unproject(zero).data) CHECK(v == 0.0);
}

TEST_CASE("project matches per-cell grouping, is permutation invariant and conserves mass") {
  std::mt19937_64 rng(11);
  PlaneConfigs cfg;
  cfg.cell_size = 2.0;
  cfg.polar.rings = 16;
  cfg.polar.sectors = 32;
  cfg.range.height = 16;
  cfg.range.width = 64;
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = oracle::random_cloud(rng, 50 + rng() % 300);
    const auto f = build_features(c);
    std::vector<std::size_t> perm(c.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pc = select(c, perm);
    const auto pf = build_features(pc);
    for (auto kind : kAll) {
      const auto g = project(f, c, kind, cfg);
      const auto expect = oracle::grouped_means(c, f, kind, cfg);
      std::size_t occupied = 0;
      for (std::size_t i = 0; i < g.dims.cells(); ++i) occupied += g.occupancy[i] > 0;
      CHECK(occupied == expect.size());
      for (const auto& [cell, mean] : expect) {
        const auto idx = cell.first * g.dims.cols + cell.second;
        for (std::size_t k = 0; k < 5; ++k) CHECK(rel(g.cell(idx)[k], mean[k]) <= 1e-9);
      }
      const auto gp = project(pf, pc, kind, cfg);
      for (std::size_t i = 0; i < g.cells.size(); ++i) CHECK(rel(g.cells[i], gp.cells[i]) <= 1e-9);
      for (std::size_t k = 0; k < 5; ++k) {
        double col = 0.0, mass = 0.0;
        for (std::size_t i = 0; i < f.rows; ++i) col += f(i, k);
        for (std::size_t i = 0; i < g.dims.cells(); ++i) mass += g.cell(i)[k] * g.occupancy[i];
        CHECK(std::abs(col - mass) <= 1e-9 * std::max(1.0, std::abs(col)));
      }
    }
  }
}

TEST_CASE("round trip is exact with one point per cell") {
  PlaneConfigs cfg;
  PointCloud c;
  for (int i = 0; i < 40; ++i) c.push_back({-45.0 + 2.1 * i, -30.0 + 1.3 * i, -2.5 + 0.1 * i}, 0.01 * i);
  const auto f = build_features(c);
  for (auto kind : {PlaneKind::XY, PlaneKind::XZ}) {
    const auto g = project(f, c, kind, cfg);
    for (auto o : g.occupancy) REQUIRE(o <= 1);
    CHECK(unproject(g).data == f.data);
  }
}

TEST_CASE("plane_for_layer cycle") {
  CHECK(plane_for_layer(1, 10) == PlaneKind::PolarGrid);
  CHECK(plane_for_layer(5, 10) == PlaneKind::RangeImage);
  CHECK(plane_for_layer(6, 10) == PlaneKind::PolarGrid);
  CHECK(plane_for_layer(7, 10) == PlaneKind::XY);
  CHECK_THROWS_AS(plane_for_layer(1, 12), Error);
  CHECK_THROWS_AS(plane_for_layer(11, 10), Error);
  for (const char* name : {"polar", "xy", "xz", "yz", "range"}) CHECK(to_string(parse_plane_kind(name)) == name);
  CHECK_THROWS_AS(parse_plane_kind("zz"), Error);
}
