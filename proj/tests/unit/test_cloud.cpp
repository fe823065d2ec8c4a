#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "ppnet/cloud.hpp"
#include "ppnet/error.hpp"

using namespace ppnet;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3> pts) {
  PointCloud c;
  for (const auto& p : pts) c.push_back(p, 0.0);
  return c;
}

}  // namespace

TEST_CASE("build_features rows") {
  PointCloud c;
  c.push_back({3, 4, 0}, 0.5);
  c.push_back({0, 0, 0}, 0.0);
  c.push_back({1, 2, 2}, 0.1);
  const auto f = build_features(c);
  REQUIRE(f.rows == 3);
  REQUIRE(f.cols == 5);
  CHECK(f(0, 4) == 5.0);
  CHECK(f(0, 3) == 0.5);
  CHECK(f(1, 4) == 0.0);
  CHECK(f(2, 4) == 3.0);
  CHECK(f(2, 3) == 0.1);
  CHECK_THROWS_AS(build_features(PointCloud{}), Error);
}

TEST_CASE("validate rejects bad clouds") {
  auto c = cloud_of({{0, 0, 0}});
  c.labels = {5};
  CHECK_THROWS_AS(c.validate(4, 0), Error);
  c.labels = {0};
  CHECK_NOTHROW(c.validate(4, 0));
  c.coords[0][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(c.validate(4, 0), Error);
}

TEST_CASE("voxel_downsample examples") {
  CHECK(voxel_downsample(cloud_of({{0.01, 0.02, 0.03}, {0.04, 0.05, 0.06}}), 0.1).cloud.size() == 1);
  CHECK(voxel_downsample(cloud_of({{0, 0, 0}, {0.15, 0, 0}}), 0.1).cloud.size() == 2);
  const auto empty = voxel_downsample(PointCloud{}, 0.1);
  CHECK(empty.cloud.empty());
  CHECK(empty.index_map.empty());

  // negative coordinates fall in their own voxel
  const auto neg = voxel_downsample(cloud_of({{-0.05, 0, 0}, {0.05, 0, 0}}), 0.1);
  CHECK(neg.cloud.size() == 2);
}

TEST_CASE("voxel_downsample keeps the first point and is idempotent") {
  std::mt19937_64 rng(1);
  const auto c = oracle::random_cloud(rng, 2000, 3.0, -1.0, 1.0, 5);
  const auto d = voxel_downsample(c, 0.5);
  REQUIRE(d.index_map.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto k = d.index_map[i];
    REQUIRE(k < d.cloud.size());
    for (int a = 0; a < 3; ++a)
      CHECK(std::floor(c.coords[i][a] / 0.5) == std::floor(d.cloud.coords[k][a] / 0.5));
  }
  // representative = first occurrence
  std::vector<bool> seen(d.cloud.size(), false);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (seen[d.index_map[i]]) continue;
    seen[d.index_map[i]] = true;
    CHECK(d.cloud.coords[d.index_map[i]] == c.coords[i]);
    CHECK(d.cloud.labels[d.index_map[i]] == c.labels[i]);
  }
  const auto again = voxel_downsample(d.cloud, 0.5);
  CHECK(again.cloud.coords == d.cloud.coords);
}

TEST_CASE("crop examples and idempotence") {
  const CropBounds b;
  const auto r = crop(cloud_of({{60, 0, 0}, {10, 10, 0}, {50, -50, 2}, {0, 0, -3.01}}), b);
  REQUIRE(r.cloud.size() == 2);
  CHECK(r.keep == std::vector<bool>{false, true, true, false});
  CHECK(r.cloud.coords[0] == Vec3{10, 10, 0});

  std::mt19937_64 rng(2);
  const auto c = oracle::random_cloud(rng, 500, 60.0, -4.0, 3.0);
  const auto once = crop(c, b);
  const auto twice = crop(once.cloud, b);
  CHECK(twice.cloud.coords == once.cloud.coords);
  CHECK(std::count(once.keep.begin(), once.keep.end(), true) == static_cast<long>(once.cloud.size()));
  const auto inside = crop(once.cloud, b);
  CHECK(std::all_of(inside.keep.begin(), inside.keep.end(), [](bool k) { return k; }));
}

TEST_CASE("knn examples") {
  const auto one = knn(cloud_of({{1, 2, 3}}), 4);
  CHECK(one.indices == std::vector<std::uint32_t>{0, 0, 0, 0});

  const auto line = knn(cloud_of({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}}), 2);
  CHECK(line.row(1)[0] == 1);
  CHECK(line.row(1)[1] == 0);

  const auto k1 = knn(cloud_of({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}}), 1);
  CHECK(k1.indices == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("knn ties go to the lower index, duplicates still list self first") {
  // equidistant neighbors at +-1 on each axis
  const auto c = cloud_of({{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  const auto t = knn(c, 4);
  CHECK(t.row(0)[0] == 0);
  CHECK(t.row(0)[1] == 4);  // distance 0
  CHECK(t.row(0)[2] == 1);
  CHECK(t.row(0)[3] == 2);
  CHECK(t.row(4)[0] == 4);
  CHECK(t.row(4)[1] == 0);
}

TEST_CASE("knn matches exhaustive sort on random clouds") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const std::size_t k = 1 + rng() % 20;
    // coarse grid coordinates create many exact ties
    PointCloud c;
    std::uniform_int_distribution<int> g(-4, 4);
    for (std::size_t i = 0; i < n; ++i) c.push_back({g(rng) * 0.5, g(rng) * 0.5, g(rng) * 0.25}, 0.0);
    const auto table = knn(c, k);
    CHECK(table.indices == oracle::brute_knn(c.coords, k));
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = table.row(i);
      for (std::size_t j = 1; j < k; ++j)
        CHECK(oracle::dist2(c.coords[i], c.coords[row[j - 1]]) <= oracle::dist2(c.coords[i], c.coords[row[j]]) );
    }
  }
}

TEST_CASE("propagate_labels") {
  const auto full = cloud_of({{100, 0, 0}});
  const auto processed = cloud_of({{1, 0, 0}, {50, 0, 0}});
  CHECK(propagate_labels(full, processed, std::vector<int>{3, 7}) == std::vector<int>{7});

  std::mt19937_64 rng(4);
  const auto c = oracle::random_cloud(rng, 300, 10.0);
  std::vector<int> preds(c.size());
  for (auto& p : preds) p = static_cast<int>(rng() % 5);
  CHECK(propagate_labels(c, c, preds) == preds);

  const auto d = voxel_downsample(c, 1.0);
  std::vector<int> dp(d.cloud.size());
  for (auto& p : dp) p = static_cast<int>(rng() % 5);
  const auto full_preds = propagate_labels(c, d.cloud, dp);
  // kept points map to themselves
  for (std::size_t i = 0; i < c.size(); ++i)
    if (d.cloud.coords[d.index_map[i]] == c.coords[i]) CHECK(full_preds[i] == dp[d.index_map[i]]);

  CHECK_THROWS_AS(propagate_labels(c, PointCloud{}, std::vector<int>{}), Error);
}
