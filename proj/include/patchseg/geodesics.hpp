#pragma once

#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "patchseg/mesh.hpp"

namespace patchseg {

enum class GeodesicBackend {
  kExact,               // window propagation with vertex-distance filtering
  kSubdividedDijkstra,  // graph search over edge Steiner points
};

const char* to_string(GeodesicBackend backend);
GeodesicBackend parse_geodesic_backend(std::string_view name);

struct GeodesicOptions {
  GeodesicBackend backend = GeodesicBackend::kExact;
  double prune_tolerance = 1e-9;  // absolute slack in window domination tests
  int steiner_points = 3;         // per edge, Dijkstra backend only
};

namespace detail {
class Routing;
}

/// Distance field around a center vertex, truncated at `radius`, plus the
/// back-trace data needed to rebuild geodesic paths.
class GeodesicBall {
 public:
  GeodesicBall() = default;

  const TriMesh& mesh() const { return *mesh_; }
  int center() const { return center_; }
  double radius() const { return radius_; }
  GeodesicBackend backend() const { return backend_; }

  /// Reached vertices, ascending.
  std::span<const int> vertices() const { return vertices_; }
  /// Distances aligned with vertices().
  std::span<const double> distances() const { return distances_; }
  int size() const { return static_cast<int>(vertices_.size()); }

  bool contains(int v) const;
  /// Throws LookupError when v was not reached.
  double distance(int v) const;
  /// Departure angle of the geodesic to v at the center, in [0, 2pi), in the
  /// center's one-ring angle coordinates rescaled to a full turn.
  double initial_angle(int v) const;

  /// Writes "id distance" per reached vertex.
  void dump(const std::filesystem::path& path) const;

 private:
  friend GeodesicBall geodesic_ball(const TriMesh&, int, double, const GeodesicOptions&);
  friend struct GeodesicPath trace_path(const GeodesicBall&, int);

  const TriMesh* mesh_ = nullptr;
  int center_ = kNone;
  double radius_ = 0.0;
  GeodesicBackend backend_ = GeodesicBackend::kExact;
  std::vector<int> vertices_;
  std::vector<double> distances_;
  std::shared_ptr<const detail::Routing> routing_;
};

struct GeodesicPath {
  std::vector<Vec3> points;  // from the queried vertex to the center
  double departure_angle = 0.0;
  double length() const;
};

/// sqrt(total_area / m): the patch radius used for every vertex of a mesh.
double patch_radius(const TriMesh& mesh, int m = 1000);

/// Geodesic distances from `center` to every vertex closer than `radius`.
/// Pass an infinite radius for a whole-mesh field.
GeodesicBall geodesic_ball(const TriMesh& mesh, int center, double radius,
                           const GeodesicOptions& options = {});

GeodesicPath trace_path(const GeodesicBall& ball, int v);

/// Angle of a tangent direction at `center`, measured counter-clockwise from
/// the center's first ring edge and rescaled so the full ring spans 2pi.
double ring_angle(const TriMesh& mesh, int center, const Vec3& direction);

/// Mean geodesic distance from each vertex to `sample_count` farthest-point
/// samples (all vertices when sample_count >= vertex count).
std::vector<double> avg_geodesic_distance(const TriMesh& mesh, int sample_count,
                                          const GeodesicOptions& options = {});

/// Shortest paths along mesh edges; infinity for unreachable vertices.
std::vector<double> edge_graph_distances(const TriMesh& mesh, int center);

}  // namespace patchseg
