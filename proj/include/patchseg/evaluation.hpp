#pragma once

// Vertex-to-face label voting, area-weighted accuracy over a test set, and
// the report and colored-mesh outputs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "patchseg/geodesics.hpp"
#include "patchseg/mesh.hpp"

namespace patchseg {

/// Per-face random word for breaking three-way ties; depends only on the
/// seed, the mesh id and the face id.
uint64_t tie_break_key(uint64_t seed, std::string_view mesh_id, int face);

/// Majority of three labels, or the one picked by `key % 3` when all differ.
int vote(int a, int b, int c, uint64_t key);

/// Throws LookupError naming the vertex when a label is missing or outside
/// [0, kLabelCount).
std::vector<int> vertex_to_face_labels(const TriMesh& mesh, const std::vector<int>& vertex_labels, uint64_t seed,
                                       std::string_view mesh_id);

/// Fills kNone entries with the label of the geodesically nearest labeled
/// vertex (lowest id on ties). Returns how many entries were filled.
int fill_missing_labels(const TriMesh& mesh, std::vector<int>& vertex_labels, const GeodesicOptions& options = {});

struct SegmentationResult {
  std::string mesh_id;
  std::vector<int> vertex_labels;
  std::vector<int> face_labels;
  uint64_t seed = 0;
};

/// What one mesh contributes to the score.
struct ScoredMesh {
  std::string mesh_id;
  std::vector<double> face_areas;
  std::vector<int> predicted;  // per face
  std::vector<int> truth;      // per face
};

struct MeshAccuracy {
  std::string mesh_id;
  double accuracy = 0.0;
  int faces = 0;
  int correct_faces = 0;
};

struct AccuracyReport {
  double accuracy = 0.0;  // mean of the per-mesh area-weighted accuracies
  std::vector<MeshAccuracy> meshes;
};

/// Area of the correctly labeled faces over the total area, summed in
/// ascending face order.
double mesh_accuracy(const std::vector<double>& face_areas, const std::vector<int>& predicted,
                     const std::vector<int>& truth);

/// Throws ConfigError when a mesh's face counts disagree.
AccuracyReport accuracy(const std::vector<ScoredMesh>& meshes);

/// Text table with one "method #features ACC" row per entry, followed by the
/// per-mesh breakdown of the first entry.
struct ReportRow {
  std::string method;
  int features = 0;
  AccuracyReport result;
};
std::string format_report(const std::vector<ReportRow>& rows);

/// Fixed colors for the eight labels.
const std::array<std::array<uint8_t, 3>, kLabelCount>& label_palette();

/// PLY with per-vertex colors from the palette (black for kNone).
void save_colored_mesh(const TriMesh& mesh, const std::vector<int>& vertex_labels, const std::filesystem::path& path);

}  // namespace patchseg
