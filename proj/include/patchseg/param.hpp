#pragma once

// Local patch charts on the unit disk and their rotational calibration
// against a global flow field.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "patchseg/geodesics.hpp"
#include "patchseg/mesh.hpp"

namespace patchseg {

/// Binary angle: the full uint64 range is one turn, so adding two angles is
/// exact modular arithmetic.
using Turn = uint64_t;
Turn to_turn(double radians);
double to_radians(Turn angle);  // in [0, 2pi)

struct Patch {
  int center = kNone;
  int local_center = kNone;
  SubMesh sub;
  GeodesicBall ball;
  bool is_disk = false;

  double radius() const { return ball.radius(); }
};

/// Faces of the ball with all three corners reached, restricted to the
/// connected piece that holds the center. Throws TopologyError when no face
/// survives or the center's full one-ring is not inside the patch.
Patch extract_patch(const TriMesh& mesh, const GeodesicBall& ball);

enum class ChartMethod { kHarmonic, kPolar };
const char* to_string(ChartMethod method);

/// Per-vertex disk coordinates of a patch in polar form, indexed by the
/// patch's local vertex ids.
struct DiskParam {
  ChartMethod method = ChartMethod::kHarmonic;
  std::vector<double> radius;
  std::vector<Turn> angle;
  std::vector<uint8_t> valid;  // polar charts drop vertices whose trace failed
  bool fold_over = false;      // some triangle has non-positive signed area
  bool aligned = false;
  double calibration_angle = 0.0;  // rotation applied by align(), radians in [0, 2pi)
  double residual = 0.0;           // harmonic charts: max Laplace residual

  int size() const { return static_cast<int>(radius.size()); }
  Vec2 coord(int local) const;
  std::vector<Vec2> coords() const;
};

/// Copy of `param` with every angle advanced by `delta`.
DiskParam rotated(const DiskParam& param, Turn delta);

/// Half the sum of the cotangents of the angles opposite halfedge `h` and its
/// twin; boundary edges use their single face.
double cotangent_weight(const TriMesh& mesh, int h);
/// Same for the edge between vertices i and j; throws LookupError when they
/// are not adjacent.
double cotangent_weight(const TriMesh& mesh, int i, int j);

/// Dirichlet harmonic map with the boundary spread over the circle by arc
/// length. Throws TopologyError for non-disk patches and SolverError when the
/// system cannot be solved; flipped triangles only set `fold_over`.
DiskParam harmonic_map(const Patch& patch);

/// (distance / radius, departure angle) for every patch vertex.
DiskParam geodesic_polar_map(const Patch& patch);

/// Harmonic map when the patch is a disk and the map is injective, geodesic
/// polar map otherwise.
DiskParam parameterize(const Patch& patch);

struct FlowField {
  std::vector<double> u;     // per vertex
  std::vector<Vec3> grad;    // per face
  std::vector<int> sources;  // u = 0
  std::vector<int> sinks;    // u = 1
};

FlowField solve_flow_field(const TriMesh& mesh, const std::vector<int>& sources,
                           const std::vector<int>& sinks);

struct Landmarks {
  std::vector<int> sources;
  std::vector<int> sinks;
};

/// Endpoints of an approximate edge-graph diameter (two sweeps from vertex 0);
/// the lower id becomes the source.
Landmarks default_landmarks(const TriMesh& mesh);
/// Text file with a "source <ids...>" line and a "sink <ids...>" line.
Landmarks load_landmarks(const std::filesystem::path& path, int vertex_count);
void save_landmarks(const Landmarks& landmarks, const std::filesystem::path& path);

/// Lowest-index neighbor of the patch center; the center-to-it edge is the
/// reference edge for alignment.
int base_neighbor(const TriMesh& mesh, int center);

/// Rotates the chart so the projected flow at the center points along the
/// polar axis. Leaves the chart unrotated and `aligned` false when the flow
/// vanishes there.
DiskParam align(const DiskParam& param, const Patch& patch, const FlowField& flow);

/// Debug dump: one "vertex_id x y" line per charted vertex.
void dump_chart(const DiskParam& param, const Patch& patch, const std::filesystem::path& path);

}  // namespace patchseg
