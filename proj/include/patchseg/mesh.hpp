#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace patchseg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

inline constexpr int kNone = -1;
inline constexpr int kLabelCount = 8;

enum class MeshFormat { kOff, kObj, kPly };

/// Indexed, consistently oriented, edge-manifold triangle mesh.
///
/// Halfedge `h = 3 * f + k` runs from `faces[f][k]` to `faces[f][(k + 1) % 3]`.
/// The mesh is immutable after construction; all adjacency is precomputed.
class TriMesh {
 public:
  struct Options {
    // Submeshes cut out of a manifold surface may touch themselves at a
    // vertex; loaded meshes may not.
    bool allow_pinched_vertices = false;
  };

  TriMesh() = default;
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces);
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces, Options options);

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_faces() const { return static_cast<int>(faces_.size()); }
  int num_halfedges() const { return 3 * num_faces(); }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const Vec3& position(int v) const { return vertices_[v]; }
  const std::vector<Face>& faces() const { return faces_; }
  const Face& face(int f) const { return faces_[f]; }
  const std::vector<double>& face_areas() const { return face_areas_; }
  double face_area(int f) const { return face_areas_[f]; }
  Vec3 face_normal(int f) const;  // unit
  double bbox_diagonal() const { return bbox_diagonal_; }

  static int face_of(int h) { return h / 3; }
  static int next(int h) { return 3 * (h / 3) + (h % 3 + 1) % 3; }
  static int prev(int h) { return 3 * (h / 3) + (h % 3 + 2) % 3; }
  int from(int h) const { return faces_[h / 3][h % 3]; }
  int to(int h) const { return faces_[h / 3][(h % 3 + 1) % 3]; }
  int opposite(int h) const { return faces_[h / 3][(h % 3 + 2) % 3]; }
  int twin(int h) const { return twins_[h]; }
  double length(int h) const { return (position(to(h)) - position(from(h))).norm(); }

  /// Interior angle of the face of `h` at `from(h)`.
  double corner_angle(int h) const { return corner_angles_[h]; }

  /// Outgoing halfedges of `v` in counter-clockwise order. Boundary vertices
  /// start at the halfedge with no twin.
  std::span<const int> outgoing(int v) const;
  /// Ordered neighbor ring. Interior vertices start at the lowest-index
  /// neighbor; boundary vertices list the fan from one boundary edge to the
  /// other (faces + 1 entries).
  std::span<const int> one_ring(int v) const;

  bool is_boundary_vertex(int v) const { return boundary_vertex_[v] != 0; }
  bool is_pinched_vertex(int v) const { return pinched_vertex_[v] != 0; }
  double angle_sum(int v) const { return angle_sums_[v]; }

  const std::optional<std::vector<int>>& labels() const { return labels_; }
  /// Attaches per-vertex labels; every label must be in [0, kLabelCount).
  void set_labels(std::vector<int> labels);

 private:
  void build(Options options);

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<double> face_areas_;
  std::vector<int> twins_;
  std::vector<double> corner_angles_;
  std::vector<int> ring_offsets_;
  std::vector<int> ring_halfedges_;
  std::vector<int> neighbor_offsets_;
  std::vector<int> neighbors_;
  std::vector<uint8_t> boundary_vertex_;
  std::vector<uint8_t> pinched_vertex_;
  std::vector<double> angle_sums_;
  std::optional<std::vector<int>> labels_;
  double bbox_diagonal_ = 0.0;
};

/// Face subset of a parent mesh, reindexed into its own local TriMesh.
struct SubMesh {
  const TriMesh* parent = nullptr;
  std::vector<int> vertex_ids;  // local -> parent, ascending
  std::vector<int> face_ids;    // local -> parent, ascending
  TriMesh local;

  /// Local index of a parent vertex, or kNone.
  int local_vertex(int parent_vertex) const;
};

SubMesh make_submesh(const TriMesh& parent, std::vector<int> face_ids);

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format);
/// Format picked from the file extension (.off, .obj, .ply).
TriMesh load_mesh(const std::filesystem::path& path);

struct SaveOptions {
  bool binary = false;  // PLY only
  const std::vector<std::array<uint8_t, 3>>* vertex_colors = nullptr;  // PLY only
};
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, MeshFormat format,
               SaveOptions options = {});

/// Sidecar label file: one integer per line, line i labels vertex i.
std::vector<int> load_labels(const std::filesystem::path& path, int vertex_count);
void save_labels(const std::vector<int>& labels, const std::filesystem::path& path);

double total_area(const TriMesh& mesh);

/// Closed loops of boundary edges, each listed clockwise when seen from the
/// side the face normals point to, starting at the loop's lowest vertex id.
/// Loops are ordered by their starting vertex.
std::vector<std::vector<int>> boundary_loops(const TriMesh& mesh);
/// Same, reported in parent vertex ids.
std::vector<std::vector<int>> boundary_loops(const SubMesh& sub);

int euler_characteristic(const TriMesh& mesh);
int euler_characteristic(const SubMesh& sub);

/// Face-connected components over referenced vertices; returns the number of
/// components and fills `component_of` (kNone for unreferenced vertices).
int connected_components(const TriMesh& mesh, std::vector<int>* component_of = nullptr);

/// Copy of `mesh` with every vertex mapped through x -> R x + t.
TriMesh transformed(const TriMesh& mesh, const Eigen::Matrix3d& rotation, const Vec3& translation);

}  // namespace patchseg
