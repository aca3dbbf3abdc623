#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>

#include "doctest.h"
#include "patchseg/error.hpp"
#include "patchseg/geodesics.hpp"
#include "patchseg/shapes.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace patchseg;

namespace {

TriMesh bumpy_grid(int n, uint64_t seed) {
  TriMesh g = shapes::grid(n, n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.03, 0.03);
  std::vector<Vec3> v = g.vertices();
  for (auto& p : v) p.z() = u(rng) + 0.2 * std::sin(3 * p.x()) * std::cos(2 * p.y());
  return TriMesh(v, g.faces());
}

std::vector<TriMesh> varied_meshes() {
  std::vector<TriMesh> meshes;
  meshes.push_back(shapes::icosphere(2));
  meshes.push_back(shapes::capsule(0.4, 1.5, 20, 6, 10));
  meshes.push_back(shapes::torus(1.0, 0.35, 30, 14));
  meshes.push_back(bumpy_grid(14, 3));
  meshes.push_back(shapes::cube(4));
  return meshes;
}

}  // namespace

TEST_CASE("flat grid distances are Euclidean") {
  TriMesh g = shapes::grid(20, 20);
  for (int center : {21 * 10 + 10, 21 * 5 + 7, 0}) {
    GeodesicBall ball = geodesic_ball(g, center, 0.45);
    CHECK(ball.distance(center) == 0.0);
    double worst = 0.0;
    for (int i = 0; i < ball.size(); ++i) {
      const int v = ball.vertices()[i];
      worst = std::max(worst, std::abs(ball.distances()[i] - (g.position(v) - g.position(center)).norm()));
      CHECK(ball.distances()[i] < 0.45);
    }
    CHECK(worst < 1e-9);
    // Every vertex strictly inside the radius is reached.
    int inside = 0;
    for (int v = 0; v < g.num_vertices(); ++v) inside += (g.position(v) - g.position(center)).norm() < 0.45 - 1e-9;
    CHECK(ball.size() >= inside);
  }
}

TEST_CASE("cube distances match the unfolding oracle") {
  TriMesh c = shapes::cube(4);
  double worst = 0.0;
  for (int center = 0; center < c.num_vertices(); center += 7) {
    GeodesicBall ball = geodesic_ball(c, center, std::numeric_limits<double>::infinity());
    REQUIRE(ball.size() == c.num_vertices());
    for (int v = 0; v < c.num_vertices(); ++v) {
      const double expected = oracle::cube_distance(c.position(center), c.position(v));
      worst = std::max(worst, std::abs(ball.distance(v) - expected));
    }
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("Euclid <= geodesic <= edge graph on varied meshes") {
  for (const TriMesh& m : varied_meshes()) {
    const int center = m.num_vertices() / 3;
    const std::vector<double> graph = edge_graph_distances(m, center);
    for (auto backend : {GeodesicBackend::kExact, GeodesicBackend::kSubdividedDijkstra}) {
      GeodesicBall ball = geodesic_ball(m, center, 0.8, {.backend = backend});
      int violations = 0;
      for (int i = 0; i < ball.size(); ++i) {
        const int v = ball.vertices()[i];
        const double d = ball.distances()[i];
        const double eu = (m.position(v) - m.position(center)).norm();
        violations += d < eu - 1e-12 || d > graph[v] + 1e-12;
      }
      CHECK(violations == 0);
      CHECK(ball.backend() == backend);
    }
  }
}

TEST_CASE("exact backend beats or matches the Steiner graph") {
  for (const TriMesh& m : varied_meshes()) {
    const int center = 1;
    GeodesicBall exact = geodesic_ball(m, center, 0.7);
    GeodesicBall graph = geodesic_ball(m, center, 0.7, {.backend = GeodesicBackend::kSubdividedDijkstra});
    for (int i = 0; i < graph.size(); ++i) {
      const int v = graph.vertices()[i];
      REQUIRE(exact.contains(v));
      CHECK(exact.distance(v) <= graph.distances()[i] + 1e-12);
    }
  }
}

TEST_CASE("distance is symmetric") {
  std::mt19937_64 rng(11);
  const double inf = std::numeric_limits<double>::infinity();
  for (const TriMesh& m : varied_meshes()) {
    std::uniform_int_distribution<int> pick(0, m.num_vertices() - 1);
    for (int t = 0; t < 4; ++t) {
      const int a = pick(rng), b = pick(rng);
      const double ab = geodesic_ball(m, a, inf).distance(b);
      const double ba = geodesic_ball(m, b, inf).distance(a);
      CHECK(std::abs(ab - ba) <= 1e-7 * std::max(ab, 1e-12));
    }
  }
}

TEST_CASE("enlarging the radius keeps reached distances") {
  for (const TriMesh& m : varied_meshes()) {
    GeodesicBall small = geodesic_ball(m, 5, 0.3);
    GeodesicBall large = geodesic_ball(m, 5, 0.9);
    for (int i = 0; i < small.size(); ++i) {
      CHECK(large.distance(small.vertices()[i]) == small.distances()[i]);
    }
  }
}

TEST_CASE("trace length equals distance") {
  for (const TriMesh& m : varied_meshes()) {
    GeodesicBall ball = geodesic_ball(m, 2, 0.9);
    for (int i = 0; i < ball.size(); ++i) {
      const int v = ball.vertices()[i];
      GeodesicPath path = trace_path(ball, v);
      CHECK(path.points.front() == m.position(v));
      CHECK(path.points.back() == m.position(2));
      CHECK(std::abs(path.length() - ball.distances()[i]) <= 1e-9 * std::max(1.0, ball.distances()[i]));
      CHECK(path.departure_angle >= 0.0);
      CHECK(path.departure_angle < 2 * M_PI);
    }
  }
}

TEST_CASE("flat grid path is one segment with the polar angle") {
  TriMesh g = shapes::grid(10, 10);
  const int center = 11 * 5 + 5;
  GeodesicBall ball = geodesic_ball(g, center, 0.4);
  // First ring edge of an interior grid vertex points to its lowest neighbor,
  // which is the diagonal neighbor at (-1, -1).
  const double base = std::atan2(-1.0, -1.0);
  for (int v : ball.vertices()) {
    GeodesicPath path = trace_path(ball, v);
    if (v == center) {
      CHECK(path.points.size() == 1);
      CHECK(path.departure_angle == 0.0);
      continue;
    }
    CHECK(path.points.size() == 2);
    const Vec3 d = g.position(v) - g.position(center);
    double expected = std::atan2(d.y(), d.x()) - base;
    while (expected < 0) expected += 2 * M_PI;
    CHECK(std::abs(std::remainder(path.departure_angle - expected, 2 * M_PI)) < 1e-9);
  }
}

TEST_CASE("cube path across one edge has two straight segments") {
  TriMesh c = shapes::cube(4);
  // Center on the z = 1 face; target on the x = 1 face.
  int center = kNone, target = kNone;
  for (int v = 0; v < c.num_vertices(); ++v) {
    const Vec3& p = c.position(v);
    if (p.isApprox(Vec3(0.5, 0.5, 1.0))) center = v;
    if (p.isApprox(Vec3(1.0, 0.5, 0.5))) target = v;
  }
  REQUIRE(center != kNone);
  REQUIRE(target != kNone);
  GeodesicBall ball = geodesic_ball(c, center, 2.0);
  GeodesicPath path = trace_path(ball, target);
  CHECK(path.points.size() == 3);
  CHECK(path.length() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(ball.distance(target) - oracle::cube_distance(c.position(center), c.position(target))) < 1e-12);
}

TEST_CASE("lookup errors") {
  TriMesh g = shapes::grid(6, 6);
  GeodesicBall ball = geodesic_ball(g, 0, 0.2);
  CHECK_THROWS_AS(ball.distance(48), LookupError);
  CHECK_THROWS_AS(trace_path(ball, 48), LookupError);
  CHECK_THROWS_AS(geodesic_ball(g, 0, -1.0), ConfigError);
  std::vector<Vec3> v = g.vertices();
  v.emplace_back(5, 5, 5);
  TriMesh with_isolated(v, g.faces());
  CHECK_THROWS_AS(geodesic_ball(with_isolated, with_isolated.num_vertices() - 1, 1.0), TopologyError);
}

TEST_CASE("patch radius formula") {
  TriMesh g = shapes::grid(2, 2, 10.0, 100.0);
  CHECK(patch_radius(g) == doctest::Approx(1.0).epsilon(1e-15));
  TriMesh s = shapes::grid(2, 2, 2.0, 2.0);
  CHECK(patch_radius(s) == doctest::Approx(std::sqrt(0.004)));
  Eigen::Matrix3d scale = 2.5 * Eigen::Matrix3d::Identity();
  CHECK(patch_radius(transformed(s, scale, Vec3::Zero())) == doctest::Approx(2.5 * patch_radius(s)));
}

TEST_CASE("AGD") {
  SUBCASE("tetrahedron all-pairs is constant") {
    TriMesh t = shapes::tetrahedron();
    auto agd = avg_geodesic_distance(t, 100);
    for (double a : agd) CHECK(std::abs(a - agd[0]) < 1e-12);
  }
  SUBCASE("icosphere is nearly constant") {
    TriMesh s = shapes::icosphere(2);
    auto agd = avg_geodesic_distance(s, s.num_vertices());
    auto [lo, hi] = std::minmax_element(agd.begin(), agd.end());
    CHECK(*hi / *lo < 1.05);
  }
  SUBCASE("capsule peaks at the tips") {
    TriMesh c = shapes::capsule(0.3, 2.0, 12, 4, 10);
    auto agd = avg_geodesic_distance(c, c.num_vertices());
    const int top = static_cast<int>(std::max_element(agd.begin(), agd.end()) - agd.begin());
    double zmin = 1e9, zmax = -1e9;
    for (const Vec3& p : c.vertices()) zmin = std::min(zmin, p.z()), zmax = std::max(zmax, p.z());
    const double z = c.position(top).z();
    CHECK((std::abs(z - zmin) < 1e-9 || std::abs(z - zmax) < 1e-9));
    // Dijkstra all-pairs oracle agrees on the location of the extremes.
    std::vector<double> graph(c.num_vertices(), 0.0);
    for (int s = 0; s < c.num_vertices(); ++s) {
      auto d = edge_graph_distances(c, s);
      for (int v = 0; v < c.num_vertices(); ++v) graph[v] += d[v];
    }
    const int gtop = static_cast<int>(std::max_element(graph.begin(), graph.end()) - graph.begin());
    const double gz = c.position(gtop).z();
    CHECK((std::abs(gz - zmin) < 1e-9 || std::abs(gz - zmax) < 1e-9));
  }
  SUBCASE("sampled AGD stays close to all-pairs") {
    TriMesh c = shapes::capsule(0.3, 2.0, 12, 4, 10);
    auto full = avg_geodesic_distance(c, c.num_vertices());
    auto sampled = avg_geodesic_distance(c, 40);
    double worst = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) worst = std::max(worst, std::abs(full[i] - sampled[i]) / full[i]);
    CHECK(worst < 0.1);
  }
  SUBCASE("disconnected mesh is rejected") {
    TriMesh a = shapes::tetrahedron();
    std::vector<Vec3> v = a.vertices();
    std::vector<Face> f = a.faces();
    for (const Vec3& p : a.vertices()) v.push_back(p + Vec3(5, 0, 0));
    for (Face face : a.faces()) f.push_back({face[0] + 4, face[1] + 4, face[2] + 4});
    try {
      avg_geodesic_distance(TriMesh(v, f), 10);
      FAIL("expected TopologyError");
    } catch (const TopologyError& e) {
      CHECK(std::string(e.what()).find("2 components") != std::string::npos);
    }
  }
}

TEST_CASE("ball dump lists id and distance") {
  auto dir = testutil::temp_dir("geo_dump");
  TriMesh g = shapes::grid(4, 4);
  GeodesicBall ball = geodesic_ball(g, 0, 0.3);
  ball.dump(dir / "ball.txt");
  std::ifstream in(dir / "ball.txt");
  int id;
  double d;
  int rows = 0;
  while (in >> id >> d) {
    CHECK(d == ball.distance(id));
    ++rows;
  }
  CHECK(rows == ball.size());
}
