#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "objdb/geometry.hpp"
#include "objdb/kdtree.hpp"

using namespace objdb;

namespace {

std::vector<Vec3> random_points(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Vec3> points;
  points.reserve(n);
  for (int i = 0; i < n; ++i) points.emplace_back(dist(rng), dist(rng), dist(rng));
  return points;
}

// Brute-force k nearest neighbors with the same tie rule as the tree.
std::vector<std::pair<int, double>> brute_knn(const std::vector<Vec3>& points, const Vec3& q,
                                              int k) {
  std::vector<std::pair<int, double>> all;
  for (int i = 0; i < static_cast<int>(points.size()); ++i)
    all.emplace_back(i, (points[i] - q).norm());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  return all;
}

}  // namespace

TEST_CASE("knn matches brute force", "[kdtree]") {
  const auto points = random_points(500, 42);
  const KdTree3 tree(points);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> dist(-1.2, 1.2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 q(dist(rng), dist(rng), dist(rng));
    for (int k : {1, 3, 8}) {
      const auto got = tree.knn(q, k);
      const auto want = brute_knn(points, q, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].first == want[i].first);
        CHECK(got[i].second == Catch::Approx(want[i].second).margin(1e-12));
      }
    }
  }
}

TEST_CASE("radius search matches brute force", "[kdtree]") {
  const auto points = random_points(400, 11);
  const KdTree3 tree(points);
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Vec3 q(dist(rng), dist(rng), dist(rng));
    const double radius = 0.1 + 0.2 * trial / 30.0;
    const auto got = tree.radius_search(q, radius);
    std::vector<int> want;
    for (int i = 0; i < static_cast<int>(points.size()); ++i)
      if ((points[i] - q).norm() <= radius) want.push_back(i);
    REQUIRE(got == want);
  }
}

TEST_CASE("empty and single-point trees", "[kdtree]") {
  const KdTree3 empty;
  REQUIRE(empty.nearest(Vec3(0, 0, 0)) == -1);
  REQUIRE(empty.knn(Vec3(0, 0, 0), 3).empty());

  const KdTree3 one(std::vector<Vec3>{Vec3(1, 2, 3)});
  REQUIRE(one.nearest(Vec3(0, 0, 0)) == 0);
  REQUIRE(one.knn(Vec3(0, 0, 0), 5).size() == 1);
  REQUIRE(one.radius_search(Vec3(1, 2, 3), 0.1) == std::vector<int>{0});
}

TEST_CASE("duplicate points tie-break by index", "[kdtree]") {
  std::vector<Vec3> points(4, Vec3(0.5, 0.5, 0.5));
  points.push_back(Vec3(2, 2, 2));
  const KdTree3 tree(points);
  const auto got = tree.knn(Vec3(0.5, 0.5, 0.5), 3);
  REQUIRE(got.size() == 3);
  CHECK(got[0].first == 0);
  CHECK(got[1].first == 1);
  CHECK(got[2].first == 2);
}

TEST_CASE("rebuilding from the same input gives the same answers", "[kdtree]") {
  const auto points = random_points(200, 3);
  const KdTree3 a(points);
  const KdTree3 b(points);
  const Vec3 q(0.1, -0.2, 0.05);
  REQUIRE(a.knn(q, 10) == b.knn(q, 10));
  REQUIRE(a.radius_search(q, 0.4) == b.radius_search(q, 0.4));
}

TEST_CASE("high-dimensional tree works for descriptor sizes", "[kdtree]") {
  constexpr int kDim = 33;
  using Tree = KdTree<kDim>;
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<Tree::Point> points(100);
  for (auto& p : points)
    for (int d = 0; d < kDim; ++d) p[d] = dist(rng);
  const Tree tree(points);

  Tree::Point q;
  for (int d = 0; d < kDim; ++d) q[d] = dist(rng);
  const auto got = tree.knn(q, 4);
  REQUIRE(got.size() == 4);
  // Oracle: brute force.
  std::vector<std::pair<int, double>> want;
  for (int i = 0; i < 100; ++i) want.emplace_back(i, (points[i] - q).norm());
  std::sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  for (int i = 0; i < 4; ++i) CHECK(got[i].first == want[i].first);
}
