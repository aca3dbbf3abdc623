#pragma once

// Brute-force references shared by the unit tests and the acceptance run.

#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "patchseg/classifier.hpp"
#include "patchseg/param.hpp"

namespace oracle {

using patchseg::Vec2;
using patchseg::Vec3;
using patchseg::Patch;
using patchseg::TriMesh;
using patchseg::DiskParam;
using patchseg::cotangent_weight;
using patchseg::Batch;
using patchseg::Shape;
using patchseg::TrainingData;
using patchseg::kLabelCount;

// Brute-force cube surface distance: unfold every simple sequence of cube
// faces into the plane and keep the straight segments that cross each shared
// edge in order.
struct CubeFace {
  int axis;
  int side;
  Vec3 normal() const {
    Vec3 n = Vec3::Zero();
    n[axis] = side ? 1.0 : -1.0;
    return n;
  }
  // Orthonormal frame (f1, f2) with f1 x f2 = outward normal.
  void frame(Vec3& f1, Vec3& f2) const {
    f1 = Vec3::Zero();
    f1[(axis + 1) % 3] = 1.0;
    f2 = normal().cross(f1);
  }
  bool contains(const Vec3& p) const { return p[axis] == double(side); }
};

struct Placement {
  Eigen::Matrix2d rot = Eigen::Matrix2d::Identity();
  Vec2 shift = Vec2::Zero();
};

inline Vec2 local(const CubeFace& f, const Vec3& p) {
  Vec3 f1, f2;
  f.frame(f1, f2);
  return {p.dot(f1), p.dot(f2)};
}

inline Vec2 place(const CubeFace& f, const Placement& pl, const Vec3& p) { return pl.rot * local(f, p) + pl.shift; }

inline void shared_edge(const CubeFace& a, const CubeFace& b, Vec3& e0, Vec3& e1) {
  const int third = 3 - a.axis - b.axis;
  e0 = Vec3::Zero();
  e0[a.axis] = a.side;
  e0[b.axis] = b.side;
  e1 = e0;
  e1[third] = 1.0;
}

inline bool crosses(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b) {
  const Vec2 d = q - p;
  const Vec2 e = b - a;
  const double den = d.x() * e.y() - d.y() * e.x();
  if (std::abs(den) < 1e-15) return false;
  const Vec2 w = a - p;
  const double s = (w.x() * e.y() - w.y() * e.x()) / den;
  const double t = (w.x() * d.y() - w.y() * d.x()) / den;
  const double eps = 1e-12;
  return s >= -eps && s <= 1 + eps && t >= -eps && t <= 1 + eps;
}

inline double cube_distance(const Vec3& p, const Vec3& q) {
  std::vector<CubeFace> faces;
  for (int a = 0; a < 3; ++a)
    for (int s = 0; s < 2; ++s) faces.push_back({a, s});
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> seq;
  std::vector<Placement> placements;
  std::function<void()> dfs = [&]() {
    const int k = seq.back();
    const CubeFace& fk = faces[k];
    if (fk.contains(q)) {
      const Vec2 p2 = place(faces[seq[0]], placements[0], p);
      const Vec2 q2 = place(fk, placements.back(), q);
      bool ok = true;
      for (std::size_t i = 0; i + 1 < seq.size() && ok; ++i) {
        Vec3 e0, e1;
        shared_edge(faces[seq[i]], faces[seq[i + 1]], e0, e1);
        ok = crosses(p2, q2, place(faces[seq[i]], placements[i], e0), place(faces[seq[i]], placements[i], e1));
      }
      if (ok) best = std::min(best, (q2 - p2).norm());
    }
    if (seq.size() >= 6) return;
    for (int n = 0; n < 6; ++n) {
      if (faces[n].axis == fk.axis) continue;
      if (std::find(seq.begin(), seq.end(), n) != seq.end()) continue;
      Vec3 e0, e1;
      shared_edge(fk, faces[n], e0, e1);
      const Vec2 a2 = place(fk, placements.back(), e0);
      const Vec2 b2 = place(fk, placements.back(), e1);
      const Vec2 la = local(faces[n], e0);
      const Vec2 lb = local(faces[n], e1);
      const double ang = std::atan2((b2 - a2).y(), (b2 - a2).x()) - std::atan2((lb - la).y(), (lb - la).x());
      Placement pl;
      pl.rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
      pl.shift = a2 - pl.rot * la;
      seq.push_back(n);
      placements.push_back(pl);
      dfs();
      seq.pop_back();
      placements.pop_back();
    }
  };
  for (int s = 0; s < 6; ++s) {
    if (!faces[s].contains(p)) continue;
    seq = {s};
    placements = {Placement{}};
    dfs();
  }
  return best;
}

// Largest cotangent-Laplacian residual of the chart over interior vertices.
inline double laplace_residual(const Patch& p, const DiskParam& d) {
  const TriMesh& m = p.sub.local;
  const auto uv = d.coords();
  double worst = 0.0;
  for (int v = 0; v < m.num_vertices(); ++v) {
    if (m.is_boundary_vertex(v)) continue;
    Vec2 s = Vec2::Zero();
    for (int n : m.one_ring(v)) s += cotangent_weight(m, v, n) * (uv[n] - uv[v]);
    worst = std::max(worst, s.norm());
  }
  return worst;
}

// Channel 0 lights up the image row matching the label; the other channel
// is noise.
struct Toy {
  std::vector<std::vector<float>> samples;
  std::vector<int> labels;
  Shape shape{2, 8, 8};
};

inline Toy separable_toy(int per_label) {
  Toy t;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> noise(0.0f, 1.0f);
  const int cells = t.shape.height * t.shape.width;
  for (int l = 0; l < kLabelCount; ++l) {
    for (int k = 0; k < per_label; ++k) {
      std::vector<float> s(t.shape.size(), 0.0f);
      for (int x = 0; x < t.shape.width; ++x) s[l * t.shape.width + x] = 1.0f;
      for (int i = cells; i < 2 * cells; ++i) s[i] = noise(rng);
      t.samples.push_back(std::move(s));
      t.labels.push_back(l);
    }
  }
  return t;
}

inline TrainingData toy_data(const Toy& t) {
  TrainingData d;
  d.labels = t.labels;
  d.shape = t.shape;
  d.fill = [&t](const std::vector<long>& ids, Batch<float>& out) {
    out.resize(static_cast<Eigen::Index>(ids.size()), t.shape.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(t.samples[ids[i]].data(), t.shape.size());
    }
  };
  return d;
}

}  // namespace oracle
