#include "patchseg/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <unordered_map>

#include <Eigen/Geometry>

#include "patchseg/error.hpp"

namespace patchseg::shapes {
namespace {

constexpr double kPi = std::numbers::pi;

// Closed or open surface of revolution about z. `profile` holds (radius, z)
// samples; zero-radius samples at the ends become single pole vertices.
TriMesh revolve(const std::vector<Vec2>& profile, int around) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<int> ring_start;
  const int n = static_cast<int>(profile.size());
  const bool bottom_pole = profile.front().x() == 0.0;
  const bool top_pole = profile.back().x() == 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = profile[i].x();
    const double z = profile[i].y();
    ring_start.push_back(static_cast<int>(vertices.size()));
    if ((i == 0 && bottom_pole) || (i == n - 1 && top_pole)) {
      vertices.emplace_back(0.0, 0.0, z);
      continue;
    }
    // Staggered rings give better-shaped triangles.
    const double offset = (i % 2) * 0.5;
    for (int j = 0; j < around; ++j) {
      const double t = 2.0 * kPi * (j + offset) / around;
      vertices.emplace_back(r * std::cos(t), r * std::sin(t), z);
    }
  }
  for (int i = 0; i + 1 < n; ++i) {
    const int a0 = ring_start[i];
    const int b0 = ring_start[i + 1];
    const bool a_pole = i == 0 && bottom_pole;
    const bool b_pole = i + 1 == n - 1 && top_pole;
    for (int j = 0; j < around; ++j) {
      const int j1 = (j + 1) % around;
      if (a_pole) {
        faces.push_back({a0, b0 + j1, b0 + j});
      } else if (b_pole) {
        faces.push_back({a0 + j, a0 + j1, b0});
      } else if (i % 2 == 0) {
        // Ring i+1 is shifted by half a step ahead of ring i.
        faces.push_back({a0 + j, a0 + j1, b0 + j});
        faces.push_back({a0 + j1, b0 + j1, b0 + j});
      } else {
        faces.push_back({a0 + j, b0 + j1, b0 + j});
        faces.push_back({a0 + j, a0 + j1, b0 + j1});
      }
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

}  // namespace

TriMesh grid(int nx, int ny, double width, double height) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      vertices.emplace_back(width * i / nx, height * j / ny, 0.0);
    }
  }
  auto id = [&](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

TriMesh annulus_grid(int n, int hole, double size) {
  const TriMesh full = grid(n, n, size, size);
  const int lo = (n - hole) / 2;
  const int hi = lo + hole;
  std::vector<Face> faces;
  for (int f = 0; f < full.num_faces(); ++f) {
    const int cell = f / 2;
    const int i = cell % n;
    const int j = cell / n;
    if (i >= lo && i < hi && j >= lo && j < hi) continue;
    faces.push_back(full.face(f));
  }
  return TriMesh(full.vertices(), std::move(faces));
}

TriMesh hexagon(double radius) {
  std::vector<Vec3> vertices{Vec3::Zero()};
  std::vector<Face> faces;
  for (int k = 0; k < 6; ++k) {
    const double t = kPi / 3.0 * k;
    vertices.emplace_back(radius * std::cos(t), radius * std::sin(t), 0.0);
  }
  for (int k = 0; k < 6; ++k) faces.push_back({0, 1 + k, 1 + (k + 1) % 6});
  return TriMesh(std::move(vertices), std::move(faces));
}

TriMesh single_triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
  return TriMesh({a, b, c}, {Face{0, 1, 2}});
}

TriMesh tetrahedron(double edge) {
  const double s = edge / (2.0 * std::sqrt(2.0));
  std::vector<Vec3> v{{s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}};
  std::vector<Face> f{{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return TriMesh(std::move(v), std::move(f));
}

TriMesh icosphere(int subdivisions, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = mid(tri[0], tri[1]);
      const int b = mid(tri[1], tri[2]);
      const int c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  for (auto& p : v) p *= radius;
  return TriMesh(std::move(v), std::move(f));
}

TriMesh cube(int n) {
  std::map<std::array<int, 3>, int> index;
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  auto vid = [&](const std::array<int, 3>& c) {
    auto [it, inserted] = index.emplace(c, static_cast<int>(vertices.size()));
    if (inserted) vertices.emplace_back(double(c[0]) / n, double(c[1]) / n, double(c[2]) / n);
    return it->second;
  };
  // For each axis and side, lay out a grid whose (u, v) frame has u x v
  // pointing outward.
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      int ua = (axis + 1) % 3;
      int va = (axis + 2) % 3;
      if (side == 0) std::swap(ua, va);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          auto corner = [&](int di, int dj) {
            std::array<int, 3> c{};
            c[axis] = side * n;
            c[ua] = i + di;
            c[va] = j + dj;
            return vid(c);
          };
          const int a = corner(0, 0), b = corner(1, 0), c = corner(1, 1), d = corner(0, 1);
          faces.push_back({a, b, c});
          faces.push_back({a, c, d});
        }
      }
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

TriMesh cylinder(double radius, double height, int around, int rings) {
  std::vector<Vec2> profile;
  for (int i = 0; i <= rings; ++i) profile.emplace_back(radius, height * i / rings);
  return revolve(profile, around);
}

TriMesh torus(double major_radius, double minor_radius, int around, int tube) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  for (int i = 0; i < around; ++i) {
    const double u = 2.0 * kPi * i / around;
    for (int j = 0; j < tube; ++j) {
      const double w = 2.0 * kPi * j / tube;
      const double r = major_radius + minor_radius * std::cos(w);
      vertices.emplace_back(r * std::cos(u), r * std::sin(u), minor_radius * std::sin(w));
    }
  }
  auto id = [&](int i, int j) { return (i % around) * tube + (j % tube); };
  for (int i = 0; i < around; ++i) {
    for (int j = 0; j < tube; ++j) {
      faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

TriMesh capsule(double radius, double length, int around, int cap_rings, int body_rings) {
  std::vector<Vec2> profile;
  for (int i = 0; i <= cap_rings; ++i) {
    const double phi = -kPi / 2.0 + (kPi / 2.0) * i / cap_rings;
    profile.emplace_back(i == 0 ? 0.0 : radius * std::cos(phi), radius * std::sin(phi));
  }
  for (int i = 1; i < body_rings; ++i) profile.emplace_back(radius, length * i / body_rings);
  for (int i = 0; i <= cap_rings; ++i) {
    const double phi = (kPi / 2.0) * i / cap_rings;
    profile.emplace_back(i == cap_rings ? 0.0 : radius * std::cos(phi), length + radius * std::sin(phi));
  }
  return revolve(profile, around);
}

// ---------------------------------------------------------------------------
// Capsule figures

namespace {

struct Bone {
  Vec3 a;
  Vec3 b;
  double radius;
  BodyPart part;
};

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

Eigen::Matrix3d rot(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

std::vector<Bone> skeleton(const FigurePose& pose) {
  const double s = pose.scale;
  const double th = pose.limb_thickness;
  std::vector<Bone> bones;
  const Vec3 pelvis(0, 0, 0.95 * s);
  const Eigen::Matrix3d lean = rot(Vec3::UnitX(), pose.torso_lean);
  const Vec3 chest = pelvis + lean * Vec3(0, 0, 0.5 * s);
  const Vec3 neck = chest + lean * Vec3(0, 0, 0.14 * s);
  const Vec3 head = neck + lean * rot(Vec3::UnitY(), pose.head_tilt) * Vec3(0, 0, 0.16 * s);
  bones.push_back({pelvis + lean * Vec3(0, 0, 0.05 * s), chest, 0.19 * s, BodyPart::kTorso});
  bones.push_back({chest, neck, 0.075 * s * th, BodyPart::kHead});
  bones.push_back({head, head + Vec3(0, 0, 0.02 * s), 0.13 * s, BodyPart::kHead});

  for (int side : {-1, 1}) {
    const double sd = side;
    // Arms hang along -z, abducted about the body's forward axis (y).
    const Vec3 shoulder = chest + lean * Vec3(sd * 0.25 * s, 0, -0.02 * s);
    const Eigen::Matrix3d arm_rot =
        lean * rot(Vec3::UnitY(), sd * -pose.shoulder_abduction) * rot(Vec3::UnitX(), pose.arm_swing);
    const Vec3 elbow = shoulder + arm_rot * Vec3(0, 0, -0.32 * s);
    const Eigen::Matrix3d fore_rot = arm_rot * rot(Vec3::UnitX(), -pose.elbow_flex);
    const Vec3 wrist = elbow + fore_rot * Vec3(0, 0, -0.28 * s);
    const Vec3 fingertip = wrist + fore_rot * Vec3(0, 0, -0.16 * s);
    bones.push_back({shoulder, elbow, 0.07 * s * th, BodyPart::kUpperArm});
    bones.push_back({elbow, wrist, 0.06 * s * th, BodyPart::kForearm});
    bones.push_back({wrist + fore_rot * Vec3(0, 0, -0.05 * s), fingertip, 0.055 * s * th, BodyPart::kHand});

    const Vec3 hip = pelvis + Vec3(sd * 0.11 * s, 0, 0);
    const Eigen::Matrix3d leg_rot =
        rot(Vec3::UnitY(), sd * -pose.hip_abduction) * rot(Vec3::UnitX(), pose.leg_swing);
    const Vec3 knee = hip + leg_rot * Vec3(0, 0, -0.42 * s);
    const Eigen::Matrix3d shin_rot = leg_rot * rot(Vec3::UnitX(), pose.knee_flex);
    const Vec3 ankle = knee + shin_rot * Vec3(0, 0, -0.40 * s);
    const Vec3 toe = ankle + shin_rot * Vec3(0, -0.17 * s, -0.06 * s);
    bones.push_back({hip, knee, 0.095 * s * th, BodyPart::kThigh});
    bones.push_back({knee, ankle, 0.075 * s * th, BodyPart::kShin});
    bones.push_back({ankle + shin_rot * Vec3(0, -0.03 * s, -0.03 * s), toe, 0.06 * s * th, BodyPart::kFoot});
  }
  return bones;
}

class FigureField {
 public:
  FigureField(std::vector<Bone> bones, double blend) : bones_(std::move(bones)), blend_(blend) {}

  // Smooth minimum of capsule distances; negative inside.
  double value(const Vec3& p) const {
    double m = std::numeric_limits<double>::infinity();
    std::array<double, 32> d{};
    for (std::size_t i = 0; i < bones_.size(); ++i) {
      d[i] = segment_distance(p, bones_[i].a, bones_[i].b) - bones_[i].radius;
      m = std::min(m, d[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < bones_.size(); ++i) sum += std::exp(-(d[i] - m) / blend_);
    return m - blend_ * std::log(sum);
  }

  Vec3 gradient(const Vec3& p, double h) const {
    Vec3 g;
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = h;
      g[k] = (value(p + e) - value(p - e)) / (2 * h);
    }
    return g;
  }

  Vec3 project(Vec3 p, double h) const {
    for (int it = 0; it < 6; ++it) {
      const double f = value(p);
      const Vec3 g = gradient(p, h);
      const double g2 = g.squaredNorm();
      if (g2 < 1e-20) break;
      p -= f * g / g2;
      if (std::abs(f) < 1e-12) break;
    }
    return p;
  }

  BodyPart part(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    BodyPart part = BodyPart::kTorso;
    for (const auto& b : bones_) {
      const double d = segment_distance(p, b.a, b.b) - b.radius;
      if (d < best) {
        best = d;
        part = b.part;
      }
    }
    return part;
  }

  const std::vector<Bone>& bones() const { return bones_; }

 private:
  std::vector<Bone> bones_;
  double blend_;
};

// Marching tetrahedra over a Kuhn-subdivided grid; the result is a closed
// 2-manifold because the six-tet split is consistent across shared faces.
TriMesh polygonize(const FigureField& field, double cell) {
  Eigen::AlignedBox3d box;
  for (const auto& b : field.bones()) {
    box.extend(b.a - Vec3::Constant(b.radius + 2 * cell));
    box.extend(b.a + Vec3::Constant(b.radius + 2 * cell));
    box.extend(b.b - Vec3::Constant(b.radius + 2 * cell));
    box.extend(b.b + Vec3::Constant(b.radius + 2 * cell));
  }
  const Vec3 origin = box.min();
  const Eigen::Vector3i n = ((box.max() - box.min()) / cell).array().ceil().cast<int>() + 1;
  auto gid = [&](int i, int j, int k) { return (static_cast<long>(k) * n.y() + j) * n.x() + i; };
  auto gpos = [&](int i, int j, int k) { return Vec3(origin + cell * Vec3(double(i), double(j), double(k))); };

  std::vector<double> values(static_cast<std::size_t>(n.x()) * n.y() * n.z());
  for (int k = 0; k < n.z(); ++k) {
    for (int j = 0; j < n.y(); ++j) {
      for (int i = 0; i < n.x(); ++i) {
        double v = field.value(gpos(i, j, k));
        // Keep the level set off grid nodes.
        if (std::abs(v) < 1e-9 * cell) v = 1e-9 * cell;
        values[gid(i, j, k)] = v;
      }
    }
  }

  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::unordered_map<uint64_t, int> edge_vertex;
  auto crossing = [&](long a, long b, const Vec3& pa, const Vec3& pb) {
    const uint64_t key = static_cast<uint64_t>(std::min(a, b)) * 0x100000000ULL +
                         static_cast<uint64_t>(std::max(a, b));
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double fa = values[a];
    const double fb = values[b];
    const double t = std::clamp(fa / (fa - fb), 0.05, 0.95);
    vertices.push_back(pa + t * (pb - pa));
    const int id = static_cast<int>(vertices.size()) - 1;
    edge_vertex.emplace(key, id);
    return id;
  };

  static constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                                      {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
  for (int k = 0; k + 1 < n.z(); ++k) {
    for (int j = 0; j + 1 < n.y(); ++j) {
      for (int i = 0; i + 1 < n.x(); ++i) {
        long ids[8];
        Vec3 pos[8];
        for (int c = 0; c < 8; ++c) {
          const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
          ids[c] = gid(i + di, j + dj, k + dk);
          pos[c] = gpos(i + di, j + dj, k + dk);
        }
        for (const auto& tet : kTets) {
          int in[4], out[4];
          int ni = 0, no = 0;
          for (int c : tet) {
            if (values[ids[c]] < 0) in[ni++] = c;
            else out[no++] = c;
          }
          if (ni == 0 || no == 0) continue;
          auto emit = [&](int a, int b, int c, int inside, int outside) {
            const Vec3 normal = (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]);
            if (normal.dot(pos[outside] - pos[inside]) < 0) std::swap(b, c);
            faces.push_back({a, b, c});
          };
          auto x = [&](int a, int b) { return crossing(ids[a], ids[b], pos[a], pos[b]); };
          if (ni == 1 || no == 1) {
            const bool single_in = ni == 1;
            const int apex = single_in ? in[0] : out[0];
            const int* others = single_in ? out : in;
            const int p0 = x(apex, others[0]);
            const int p1 = x(apex, others[1]);
            const int p2 = x(apex, others[2]);
            emit(p0, p1, p2, single_in ? apex : others[0], single_in ? others[0] : apex);
          } else {
            const int ac = x(in[0], out[0]);
            const int ad = x(in[0], out[1]);
            const int bd = x(in[1], out[1]);
            const int bc = x(in[1], out[0]);
            emit(ac, ad, bd, in[0], out[0]);
            emit(ac, bd, bc, in[0], out[0]);
          }
        }
      }
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

}  // namespace

Figure capsule_figure(const FigurePose& pose, double cell, int smoothing_iterations) {
  const FigureField field(skeleton(pose), 0.025 * pose.scale);
  TriMesh mesh = polygonize(field, cell);

  // Tangential relaxation with re-projection onto the level set evens out the
  // slivers marching tetrahedra produce.
  std::vector<Vec3> p = mesh.vertices();
  for (int it = 0; it < smoothing_iterations; ++it) {
    std::vector<Vec3> normals(p.size(), Vec3::Zero());
    for (const auto& f : mesh.faces()) {
      const Vec3 n = (p[f[1]] - p[f[0]]).cross(p[f[2]] - p[f[0]]);
      for (int v : f) normals[v] += n;
    }
    std::vector<Vec3> next(p.size());
    for (int v = 0; v < mesh.num_vertices(); ++v) {
      Vec3 avg = Vec3::Zero();
      double wsum = 0.0;
      for (int h : mesh.outgoing(v)) {
        // Area-weighted centroid of incident faces.
        const Face& f = mesh.face(TriMesh::face_of(h));
        const double a = (p[f[1]] - p[f[0]]).cross(p[f[2]] - p[f[0]]).norm();
        avg += a * (p[f[0]] + p[f[1]] + p[f[2]]) / 3.0;
        wsum += a;
      }
      avg /= wsum;
      const Vec3 n = normals[v].normalized();
      Vec3 delta = avg - p[v];
      delta -= delta.dot(n) * n;
      next[v] = field.project(p[v] + delta, 1e-4 * cell);
    }
    p = std::move(next);
  }

  Figure fig;
  std::vector<int> labels(p.size());
  for (std::size_t v = 0; v < p.size(); ++v) labels[v] = static_cast<int>(field.part(p[v]));
  fig.mesh = TriMesh(p, mesh.faces());
  fig.mesh.set_labels(std::move(labels));

  int top = 0;
  int left_low = kNone, right_low = kNone;
  for (int v = 0; v < fig.mesh.num_vertices(); ++v) {
    const Vec3& q = p[v];
    if (q.z() > p[top].z()) top = v;
    int& slot = q.x() < 0 ? left_low : right_low;
    if (slot == kNone || q.z() < p[slot].z()) slot = v;
  }
  fig.sources = {top};
  fig.sinks = {std::min(left_low, right_low), std::max(left_low, right_low)};
  return fig;
}

FigurePose random_pose(uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  FigurePose pose;
  pose.shoulder_abduction = uniform(0.25, 1.3);
  pose.arm_swing = uniform(-0.5, 0.5);
  pose.elbow_flex = uniform(0.0, 1.2);
  pose.hip_abduction = uniform(0.05, 0.3);
  pose.leg_swing = uniform(-0.3, 0.3);
  pose.knee_flex = uniform(0.0, 0.6);
  pose.torso_lean = uniform(-0.15, 0.15);
  pose.head_tilt = uniform(-0.3, 0.3);
  pose.scale = uniform(0.9, 1.1);
  pose.limb_thickness = uniform(0.9, 1.1);
  return pose;
}

}  // namespace patchseg::shapes
