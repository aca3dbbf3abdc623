#pragma once

// Procedural meshes: analytic test surfaces and articulated capsule figures.

#include <cstdint>
#include <vector>

#include "patchseg/mesh.hpp"

namespace patchseg::shapes {

/// Flat (nx+1)x(ny+1) vertex grid over [0, width] x [0, height] in z = 0.
TriMesh grid(int nx, int ny, double width = 1.0, double height = 1.0);
/// Grid with the faces of the central `hole` x `hole` cell block removed.
TriMesh annulus_grid(int n, int hole, double size = 1.0);
/// Regular hexagon of six boundary vertices around one center vertex.
TriMesh hexagon(double radius = 1.0);
TriMesh single_triangle(const Vec3& a, const Vec3& b, const Vec3& c);
/// Regular tetrahedron with the given edge length.
TriMesh tetrahedron(double edge = 1.0);
TriMesh icosphere(int subdivisions, double radius = 1.0);
/// Surface of the unit cube [0,1]^3, each face an n x n grid.
TriMesh cube(int n);
/// Open cylinder around the z axis, z in [0, height].
TriMesh cylinder(double radius, double height, int around, int rings);
TriMesh torus(double major_radius, double minor_radius, int around, int tube);
/// Closed capsule along z: cylinder of `length` capped by hemispheres.
TriMesh capsule(double radius, double length, int around, int cap_rings, int body_rings);

enum class BodyPart : int {
  kHead = 0,
  kTorso = 1,
  kUpperArm = 2,
  kForearm = 3,
  kHand = 4,
  kThigh = 5,
  kShin = 6,
  kFoot = 7,
};

struct FigurePose {
  double shoulder_abduction = 0.35;  // radians away from the body, 0 = arms down
  double arm_swing = 0.0;            // forward/backward rotation at the shoulder
  double elbow_flex = 0.2;
  double hip_abduction = 0.08;
  double leg_swing = 0.0;
  double knee_flex = 0.05;
  double torso_lean = 0.0;
  double head_tilt = 0.0;
  double scale = 1.0;
  double limb_thickness = 1.0;
};

struct Figure {
  TriMesh mesh;  // carries per-vertex BodyPart labels
  std::vector<int> sources;  // top of the head
  std::vector<int> sinks;    // lowest vertex of each foot
};

/// Watertight articulated figure built from a smooth union of capsules and
/// polygonized with marching tetrahedra at grid spacing `cell`.
Figure capsule_figure(const FigurePose& pose, double cell = 0.03, int smoothing_iterations = 8);

/// Pose drawn from a seeded distribution of plausible stances.
FigurePose random_pose(uint64_t seed);

}  // namespace patchseg::shapes
