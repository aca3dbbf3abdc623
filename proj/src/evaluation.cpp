#include "patchseg/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"

namespace patchseg {

uint64_t tie_break_key(uint64_t seed, std::string_view mesh_id, int face) {
  uint64_t h = io::mix64(seed);
  h = io::mix64(h ^ io::fnv1a(mesh_id));
  return io::mix64(h ^ static_cast<uint64_t>(face));
}

int vote(int a, int b, int c, uint64_t key) {
  if (a == b || a == c) return a;
  if (b == c) return b;
  const int pick = static_cast<int>(key % 3);
  return pick == 0 ? a : (pick == 1 ? b : c);
}

std::vector<int> vertex_to_face_labels(const TriMesh& mesh, const std::vector<int>& vertex_labels, uint64_t seed,
                                       std::string_view mesh_id) {
  if (static_cast<int>(vertex_labels.size()) != mesh.num_vertices()) {
    throw ConfigError("mesh " + std::string(mesh_id) + " has " + std::to_string(mesh.num_vertices()) +
                      " vertices but " + std::to_string(vertex_labels.size()) + " labels");
  }
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const int l = vertex_labels[v];
    if (l < 0 || l >= kLabelCount) {
      throw LookupError("vertex " + std::to_string(v) + " of mesh " + std::string(mesh_id) +
                        (l == kNone ? " is unlabeled" : " has label " + std::to_string(l) + " outside [0, 7]"));
    }
  }
  std::vector<int> out(mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(f);
    out[f] = vote(vertex_labels[t[0]], vertex_labels[t[1]], vertex_labels[t[2]], tie_break_key(seed, mesh_id, f));
  }
  return out;
}

int fill_missing_labels(const TriMesh& mesh, std::vector<int>& vertex_labels, const GeodesicOptions& options) {
  const std::vector<int> known = vertex_labels;
  int filled = 0;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (known[v] != kNone) continue;
    const GeodesicBall ball = geodesic_ball(mesh, v, std::numeric_limits<double>::infinity(), options);
    int best = kNone;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ball.size(); ++i) {
      const int u = ball.vertices()[i];
      if (known[u] == kNone) continue;
      if (ball.distances()[i] < best_d) {
        best_d = ball.distances()[i];
        best = u;
      }
    }
    if (best == kNone) {
      throw LookupError("vertex " + std::to_string(v) + " has no labeled vertex in its connected component");
    }
    vertex_labels[v] = known[best];
    ++filled;
  }
  return filled;
}

double mesh_accuracy(const std::vector<double>& face_areas, const std::vector<int>& predicted,
                     const std::vector<int>& truth) {
  if (predicted.size() != face_areas.size() || truth.size() != face_areas.size()) {
    throw ConfigError("face count mismatch: " + std::to_string(face_areas.size()) + " faces, " +
                      std::to_string(predicted.size()) + " predictions, " + std::to_string(truth.size()) +
                      " ground-truth labels");
  }
  double total = 0.0, correct = 0.0;
  for (std::size_t j = 0; j < face_areas.size(); ++j) {
    total += face_areas[j];
    if (predicted[j] == truth[j]) correct += face_areas[j];
  }
  if (!(total > 0.0)) throw ConfigError("mesh has zero total area");
  return correct / total;
}

AccuracyReport accuracy(const std::vector<ScoredMesh>& meshes) {
  if (meshes.empty()) throw ConfigError("no meshes to score");
  AccuracyReport report;
  double sum = 0.0;
  for (const ScoredMesh& m : meshes) {
    MeshAccuracy a;
    a.mesh_id = m.mesh_id;
    try {
      a.accuracy = mesh_accuracy(m.face_areas, m.predicted, m.truth);
    } catch (const ConfigError& e) {
      throw ConfigError("mesh " + m.mesh_id + ": " + e.what());
    }
    a.faces = static_cast<int>(m.face_areas.size());
    for (std::size_t j = 0; j < m.predicted.size(); ++j) a.correct_faces += m.predicted[j] == m.truth[j];
    sum += a.accuracy;
    report.meshes.push_back(a);
  }
  report.accuracy = sum / static_cast<double>(meshes.size());
  return report;
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %-10s %s\n", "method", "#features", "ACC");
  out << line;
  for (const ReportRow& r : rows) {
    std::snprintf(line, sizeof line, "%-28s %-10d %.2f%%  (%s)\n", r.method.c_str(), r.features,
                  100.0 * r.result.accuracy, io::format_double(r.result.accuracy).c_str());
    out << line;
  }
  if (!rows.empty()) {
    out << "\nper-mesh (" << rows.front().method << ")\n";
    for (const MeshAccuracy& m : rows.front().result.meshes) {
      std::snprintf(line, sizeof line, "%-28s %.2f%%  %d/%d faces  (%s)\n", m.mesh_id.c_str(), 100.0 * m.accuracy,
                    m.correct_faces, m.faces, io::format_double(m.accuracy).c_str());
      out << line;
    }
  }
  return out.str();
}

const std::array<std::array<uint8_t, 3>, kLabelCount>& label_palette() {
  static const std::array<std::array<uint8_t, 3>, kLabelCount> palette = {{
      {230, 25, 75},    // red
      {60, 180, 75},    // green
      {255, 225, 25},   // yellow
      {0, 130, 200},    // blue
      {245, 130, 48},   // orange
      {145, 30, 180},   // purple
      {70, 240, 240},   // cyan
      {240, 50, 230},   // magenta
  }};
  return palette;
}

void save_colored_mesh(const TriMesh& mesh, const std::vector<int>& vertex_labels, const std::filesystem::path& path) {
  if (static_cast<int>(vertex_labels.size()) != mesh.num_vertices()) {
    throw ConfigError("need one label per vertex to color a mesh");
  }
  std::vector<std::array<uint8_t, 3>> colors(mesh.num_vertices(), {0, 0, 0});
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const int l = vertex_labels[v];
    if (l >= 0 && l < kLabelCount) colors[v] = label_palette()[l];
  }
  SaveOptions options;
  options.vertex_colors = &colors;
  save_mesh(mesh, path, MeshFormat::kPly, options);
}

}  // namespace patchseg
