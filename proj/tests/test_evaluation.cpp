#include <fstream>
#include <random>

#include "doctest.h"
#include "patchseg/error.hpp"
#include "patchseg/evaluation.hpp"
#include "patchseg/shapes.hpp"
#include "test_util.hpp"

using namespace patchseg;

namespace {

// Straight loop: mean over meshes of correct area / total area.
double naive_accuracy(const std::vector<ScoredMesh>& meshes) {
  double sum = 0.0;
  for (const auto& m : meshes) {
    double total = 0.0;
    double good = 0.0;
    for (std::size_t j = 0; j < m.face_areas.size(); ++j) {
      total = total + m.face_areas[j];
      if (m.predicted[j] == m.truth[j]) good = good + m.face_areas[j];
    }
    sum = sum + good / total;
  }
  return sum / static_cast<double>(meshes.size());
}

ScoredMesh random_scored(const TriMesh& mesh, std::mt19937_64& rng, const std::string& id) {
  std::uniform_int_distribution<int> label(0, kLabelCount - 1);
  ScoredMesh s;
  s.mesh_id = id;
  s.face_areas = mesh.face_areas();
  for (int f = 0; f < mesh.num_faces(); ++f) {
    s.truth.push_back(label(rng));
    s.predicted.push_back(rng() % 3 == 0 ? s.truth.back() : label(rng));
  }
  return s;
}

}  // namespace

TEST_CASE("majority vote") {
  CHECK(vote(2, 2, 5, 0) == 2);
  CHECK(vote(2, 5, 2, 1) == 2);
  CHECK(vote(5, 2, 2, 2) == 2);
  CHECK(vote(4, 4, 4, 7) == 4);
  CHECK(vote(1, 2, 3, 0) == 1);
  CHECK(vote(1, 2, 3, 1) == 2);
  CHECK(vote(1, 2, 3, 5) == 3);
}

TEST_CASE("three-way ties are broken uniformly") {
  std::array<int, 3> hist{};
  const int trials = 30000;
  for (int s = 0; s < trials; ++s) ++hist[vote(0, 1, 2, tie_break_key(static_cast<uint64_t>(s), "mesh", 17)) ];
  for (int k = 0; k < 3; ++k) CHECK(std::abs(hist[k] / static_cast<double>(trials) - 1.0 / 3.0) < 0.01);

  std::array<int, 3> by_face{};
  for (int f = 0; f < trials; ++f) ++by_face[vote(0, 1, 2, tie_break_key(9, "mesh", f))];
  for (int k = 0; k < 3; ++k) CHECK(std::abs(by_face[k] / static_cast<double>(trials) - 1.0 / 3.0) < 0.01);

  CHECK(tie_break_key(1, "a", 3) == tie_break_key(1, "a", 3));
  CHECK(tie_break_key(1, "a", 3) != tie_break_key(1, "b", 3));
  CHECK(tie_break_key(1, "a", 3) != tie_break_key(2, "a", 3));
}

TEST_CASE("vertex to face labels") {
  const TriMesh m = shapes::grid(3, 3);
  std::vector<int> labels(m.num_vertices());
  for (int v = 0; v < m.num_vertices(); ++v) labels[v] = v % kLabelCount;
  const auto a = vertex_to_face_labels(m, labels, 5, "g");
  REQUIRE(static_cast<int>(a.size()) == m.num_faces());
  for (int f = 0; f < m.num_faces(); ++f) {
    const Face& t = m.face(f);
    CHECK(a[f] == vote(labels[t[0]], labels[t[1]], labels[t[2]], tie_break_key(5, "g", f)));
  }
  CHECK(vertex_to_face_labels(m, labels, 5, "g") == a);

  std::vector<int> same(m.num_vertices(), 3);
  for (int l : vertex_to_face_labels(m, same, 1, "g")) CHECK(l == 3);

  labels[4] = 9;
  try {
    vertex_to_face_labels(m, labels, 5, "g");
    FAIL("expected an error");
  } catch (const LookupError& e) {
    CHECK(std::string(e.what()).find("vertex 4") != std::string::npos);
  }
  labels[4] = kNone;
  CHECK_THROWS_AS(vertex_to_face_labels(m, labels, 5, "g"), LookupError);
  labels.pop_back();
  CHECK_THROWS_AS(vertex_to_face_labels(m, labels, 5, "g"), ConfigError);
}

TEST_CASE("area-weighted accuracy worked example") {
  const ScoredMesh m{"m", {2.0, 1.0, 1.0}, {3, 1, 1}, {3, 2, 2}};
  CHECK(mesh_accuracy(m.face_areas, m.predicted, m.truth) == 0.5);
  const auto report = accuracy({m});
  CHECK(report.accuracy == 0.5);
  CHECK(report.meshes[0].correct_faces == 1);

  const ScoredMesh perfect{"p", {2.0, 1.0, 1.0}, {3, 2, 2}, {3, 2, 2}};
  CHECK(accuracy({perfect}).accuracy == 1.0);
  CHECK(accuracy({m, perfect}).accuracy == 0.75);

  ScoredMesh bad = m;
  bad.truth.pop_back();
  CHECK_THROWS_AS(accuracy({bad}), ConfigError);
  CHECK_THROWS_AS(accuracy({}), ConfigError);
}

TEST_CASE("accuracy matches the naive loop bit for bit") {
  const TriMesh mesh = shapes::grid(10, 10);  // 200 faces
  REQUIRE(mesh.num_faces() == 200);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoredMesh> set;
    const int meshes = 1 + trial % 4;
    for (int k = 0; k < meshes; ++k) {
      ScoredMesh s = random_scored(mesh, rng, "m" + std::to_string(k));
      for (double& a : s.face_areas) a *= jitter(rng);
      set.push_back(s);
    }
    const double acc = accuracy(set).accuracy;
    CHECK(acc == naive_accuracy(set));
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}

TEST_CASE("accuracy invariants") {
  const TriMesh mesh = shapes::icosphere(1);
  std::mt19937_64 rng(3);
  const ScoredMesh a = random_scored(mesh, rng, "a");
  const ScoredMesh b = random_scored(mesh, rng, "b");
  const double base = accuracy({a, b}).accuracy;
  CHECK(base < 1.0);

  // A duplicated mesh scoring the same as the rest leaves the mean unchanged.
  const double single = accuracy({a}).accuracy;
  CHECK(accuracy({a, a}).accuracy == single);

  // Relabeling classes on both sides.
  std::array<int, kLabelCount> perm = {3, 7, 0, 5, 1, 6, 2, 4};
  ScoredMesh pa = a, pb = b;
  for (auto* s : {&pa, &pb}) {
    for (int& l : s->predicted) l = perm[l];
    for (int& l : s->truth) l = perm[l];
  }
  CHECK(accuracy({pa, pb}).accuracy == base);

  ScoredMesh all = a;
  all.predicted = all.truth;
  CHECK(accuracy({all}).accuracy == 1.0);
}

TEST_CASE("missing vertex labels come from the nearest labeled vertex") {
  const TriMesh m = shapes::grid(5, 1, 4.0, 0.25);
  std::vector<int> labels(m.num_vertices(), kNone);
  // Bottom row is vertices 0..5; label the two ends.
  labels[0] = 1;
  labels[5] = 6;
  labels[6] = 1;
  labels[11] = 6;
  const int filled = fill_missing_labels(m, labels);
  CHECK(filled == 8);
  CHECK(labels[1] == 1);
  CHECK(labels[2] == 1);
  CHECK(labels[3] == 6);
  CHECK(labels[4] == 6);
  CHECK(labels[7] == 1);
  CHECK(labels[10] == 6);

  std::vector<int> none(m.num_vertices(), kNone);
  CHECK_THROWS_AS(fill_missing_labels(m, none), LookupError);
}

TEST_CASE("report and colored mesh") {
  const ScoredMesh m{"figure_3", {2.0, 1.0, 1.0}, {3, 1, 1}, {3, 2, 2}};
  const std::string text = format_report({{"patch grids (ours)", 31, accuracy({m})}});
  CHECK(text.find("#features") != std::string::npos);
  CHECK(text.find("50.00%") != std::string::npos);
  CHECK(text.find("figure_3") != std::string::npos);

  const auto dir = testutil::temp_dir("colored");
  const TriMesh g = shapes::grid(2, 2);
  std::vector<int> labels(g.num_vertices());
  for (int v = 0; v < g.num_vertices(); ++v) labels[v] = v % kLabelCount;
  labels[8] = kNone;
  save_colored_mesh(g, labels, dir / "g.ply");
  std::ifstream in(dir / "g.ply");
  std::string content((std::istreambuf_iterator<char>(in)), {});
  CHECK(content.find("property uchar red") != std::string::npos);
  CHECK(content.find("230 25 75") != std::string::npos);
  CHECK(load_mesh(dir / "g.ply").num_vertices() == 9);
}
