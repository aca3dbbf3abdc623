#include "patchseg/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <Eigen/Geometry>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"

namespace patchseg {
namespace {

uint64_t edge_key(int a, int b) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
}

double angle_between(const Vec3& u, const Vec3& v) {
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

}  // namespace

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : TriMesh(std::move(vertices), std::move(faces), Options{}) {}

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces, Options options)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  build(options);
}

void TriMesh::build(Options options) {
  const int nv = num_vertices();
  const int nf = num_faces();

  Eigen::AlignedBox3d box;
  for (const auto& p : vertices_) {
    if (!p.allFinite()) throw LoadError("non-finite vertex coordinate");
    box.extend(p);
  }
  bbox_diagonal_ = nv > 0 ? box.diagonal().norm() : 0.0;
  const double min_area = 1e-12 * bbox_diagonal_ * bbox_diagonal_;

  face_areas_.resize(nf);
  for (int f = 0; f < nf; ++f) {
    const Face& t = faces_[f];
    for (int k = 0; k < 3; ++k) {
      if (t[k] < 0 || t[k] >= nv) {
        throw LoadError("out-of-range vertex index " + std::to_string(t[k]) + " in face " +
                        std::to_string(f));
      }
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      throw LoadError("face " + std::to_string(f) + " repeats a vertex");
    }
    const Vec3 e1 = vertices_[t[1]] - vertices_[t[0]];
    const Vec3 e2 = vertices_[t[2]] - vertices_[t[0]];
    face_areas_[f] = 0.5 * e1.cross(e2).norm();
    if (!(face_areas_[f] > min_area)) {
      throw LoadError("degenerate face at index " + std::to_string(f));
    }
  }

  // Twins. A repeated directed edge means either more than two incident faces
  // or inconsistent orientation; both are rejected.
  std::unordered_map<uint64_t, int> directed;
  directed.reserve(static_cast<std::size_t>(3 * nf));
  for (int h = 0; h < 3 * nf; ++h) {
    auto [it, inserted] = directed.emplace(edge_key(from(h), to(h)), h);
    if (!inserted) {
      throw TopologyError("non-manifold or inconsistently oriented edge (" +
                          std::to_string(from(h)) + ", " + std::to_string(to(h)) + ") at face " +
                          std::to_string(face_of(h)));
    }
  }
  twins_.assign(3 * nf, kNone);
  for (int h = 0; h < 3 * nf; ++h) {
    auto it = directed.find(edge_key(to(h), from(h)));
    if (it != directed.end()) twins_[h] = it->second;
  }

  corner_angles_.resize(3 * nf);
  for (int h = 0; h < 3 * nf; ++h) {
    const Vec3& o = position(from(h));
    corner_angles_[h] = angle_between(position(to(h)) - o, position(opposite(h)) - o);
  }

  // Outgoing halfedge fans.
  std::vector<std::vector<int>> out(nv);
  for (int h = 0; h < 3 * nf; ++h) out[from(h)].push_back(h);

  ring_offsets_.assign(nv + 1, 0);
  neighbor_offsets_.assign(nv + 1, 0);
  ring_halfedges_.clear();
  neighbors_.clear();
  boundary_vertex_.assign(nv, 0);
  pinched_vertex_.assign(nv, 0);
  angle_sums_.assign(nv, 0.0);

  for (int v = 0; v < nv; ++v) {
    auto& hs = out[v];
    ring_offsets_[v] = static_cast<int>(ring_halfedges_.size());
    neighbor_offsets_[v] = static_cast<int>(neighbors_.size());
    if (hs.empty()) continue;

    std::vector<uint8_t> used(hs.size(), 0);
    auto index_of = [&](int h) {
      return static_cast<int>(std::find(hs.begin(), hs.end(), h) - hs.begin());
    };
    int fans = 0;
    bool boundary = false;
    std::size_t visited = 0;
    std::vector<int> ring;
    std::vector<int> nbrs;
    while (visited < hs.size()) {
      // Prefer a fan start on the boundary (outgoing halfedge without twin).
      int start = kNone;
      for (std::size_t i = 0; i < hs.size(); ++i) {
        if (!used[i] && twins_[hs[i]] == kNone) {
          start = hs[i];
          break;
        }
      }
      if (start == kNone) {
        for (std::size_t i = 0; i < hs.size(); ++i) {
          if (!used[i]) {
            start = hs[i];
            break;
          }
        }
      }
      ++fans;
      int h = start;
      bool open = false;
      do {
        used[index_of(h)] = 1;
        ++visited;
        ring.push_back(h);
        nbrs.push_back(to(h));
        const int back = twins_[prev(h)];
        if (back == kNone) {
          open = true;
          nbrs.push_back(from(prev(h)));
          break;
        }
        h = back;
      } while (h != start);
      boundary = boundary || open;
    }
    if (fans > 1) {
      if (!options.allow_pinched_vertices) {
        throw TopologyError("non-manifold vertex " + std::to_string(v) + " (" +
                            std::to_string(fans) + " separate face fans)");
      }
      pinched_vertex_[v] = 1;
    }
    boundary_vertex_[v] = boundary ? 1 : 0;
    if (!boundary && fans == 1) {
      // Closed fan: rotate so the ring starts at the lowest-index neighbor.
      const auto it = std::min_element(nbrs.begin(), nbrs.end());
      const auto shift = it - nbrs.begin();
      std::rotate(nbrs.begin(), it, nbrs.end());
      std::rotate(ring.begin(), ring.begin() + shift, ring.end());
    }
    double sum = 0.0;
    for (int h : ring) sum += corner_angles_[h];
    angle_sums_[v] = sum;
    ring_halfedges_.insert(ring_halfedges_.end(), ring.begin(), ring.end());
    neighbors_.insert(neighbors_.end(), nbrs.begin(), nbrs.end());
  }
  ring_offsets_[nv] = static_cast<int>(ring_halfedges_.size());
  neighbor_offsets_[nv] = static_cast<int>(neighbors_.size());
}

Vec3 TriMesh::face_normal(int f) const {
  const Face& t = faces_[f];
  return (position(t[1]) - position(t[0])).cross(position(t[2]) - position(t[0])).normalized();
}

std::span<const int> TriMesh::outgoing(int v) const {
  return {ring_halfedges_.data() + ring_offsets_[v],
          static_cast<std::size_t>(ring_offsets_[v + 1] - ring_offsets_[v])};
}

std::span<const int> TriMesh::one_ring(int v) const {
  return {neighbors_.data() + neighbor_offsets_[v],
          static_cast<std::size_t>(neighbor_offsets_[v + 1] - neighbor_offsets_[v])};
}

void TriMesh::set_labels(std::vector<int> labels) {
  if (static_cast<int>(labels.size()) != num_vertices()) {
    throw LoadError("label count " + std::to_string(labels.size()) + " does not match vertex count " +
                    std::to_string(num_vertices()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kLabelCount) {
      throw LoadError("label " + std::to_string(labels[i]) + " of vertex " + std::to_string(i) +
                      " outside [0, " + std::to_string(kLabelCount - 1) + "]");
    }
  }
  labels_ = std::move(labels);
}

int SubMesh::local_vertex(int parent_vertex) const {
  const auto it = std::lower_bound(vertex_ids.begin(), vertex_ids.end(), parent_vertex);
  if (it == vertex_ids.end() || *it != parent_vertex) return kNone;
  return static_cast<int>(it - vertex_ids.begin());
}

SubMesh make_submesh(const TriMesh& parent, std::vector<int> face_ids) {
  SubMesh sub;
  sub.parent = &parent;
  std::sort(face_ids.begin(), face_ids.end());
  face_ids.erase(std::unique(face_ids.begin(), face_ids.end()), face_ids.end());
  for (int f : face_ids) {
    for (int v : parent.face(f)) sub.vertex_ids.push_back(v);
  }
  std::sort(sub.vertex_ids.begin(), sub.vertex_ids.end());
  sub.vertex_ids.erase(std::unique(sub.vertex_ids.begin(), sub.vertex_ids.end()),
                       sub.vertex_ids.end());
  std::vector<Vec3> positions;
  positions.reserve(sub.vertex_ids.size());
  for (int v : sub.vertex_ids) positions.push_back(parent.position(v));
  std::vector<Face> faces;
  faces.reserve(face_ids.size());
  for (int f : face_ids) {
    const Face& t = parent.face(f);
    faces.push_back({sub.local_vertex(t[0]), sub.local_vertex(t[1]), sub.local_vertex(t[2])});
  }
  sub.face_ids = std::move(face_ids);
  sub.local = TriMesh(std::move(positions), std::move(faces), {.allow_pinched_vertices = true});
  return sub;
}

double total_area(const TriMesh& mesh) {
  double sum = 0.0;
  for (double a : mesh.face_areas()) sum += a;
  return sum;
}

std::vector<std::vector<int>> boundary_loops(const TriMesh& mesh) {
  const int nh = mesh.num_halfedges();
  std::vector<uint8_t> seen(nh, 0);
  std::vector<std::vector<int>> loops;
  for (int h0 = 0; h0 < nh; ++h0) {
    if (mesh.twin(h0) != kNone || seen[h0]) continue;
    // Follow boundary halfedges (interior on the left), then reverse so the
    // loop runs clockwise about the face normals.
    std::vector<int> loop;
    int h = h0;
    do {
      seen[h] = 1;
      loop.push_back(mesh.from(h));
      // Next boundary halfedge leaving to(h), searched within the fan.
      int g = TriMesh::next(h);
      while (mesh.twin(g) != kNone) g = TriMesh::next(mesh.twin(g));
      h = g;
      if (loop.size() > static_cast<std::size_t>(nh)) {
        throw TopologyError("boundary loop does not close");
      }
    } while (h != h0);
    std::reverse(loop.begin(), loop.end());
    const auto lowest = std::min_element(loop.begin(), loop.end());
    std::rotate(loop.begin(), lowest, loop.end());
    loops.push_back(std::move(loop));
  }
  std::sort(loops.begin(), loops.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return loops;
}

std::vector<std::vector<int>> boundary_loops(const SubMesh& sub) {
  auto loops = boundary_loops(sub.local);
  for (auto& loop : loops) {
    for (int& v : loop) v = sub.vertex_ids[v];
  }
  return loops;
}

int euler_characteristic(const TriMesh& mesh) {
  long edges = 0;
  for (int h = 0; h < mesh.num_halfedges(); ++h) {
    const int t = mesh.twin(h);
    if (t == kNone || h < t) ++edges;
  }
  int referenced = 0;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (!mesh.outgoing(v).empty()) ++referenced;
  }
  return referenced - static_cast<int>(edges) + mesh.num_faces();
}

int euler_characteristic(const SubMesh& sub) { return euler_characteristic(sub.local); }

int connected_components(const TriMesh& mesh, std::vector<int>* component_of) {
  const int nv = mesh.num_vertices();
  std::vector<int> parent(nv);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const Face& f : mesh.faces()) {
    for (int k = 1; k < 3; ++k) {
      const int a = find(f[0]);
      const int b = find(f[k]);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<int> comp(nv, kNone);
  std::unordered_map<int, int> ids;
  for (int v = 0; v < nv; ++v) {
    if (mesh.outgoing(v).empty()) continue;
    const int root = find(v);
    auto [it, inserted] = ids.emplace(root, static_cast<int>(ids.size()));
    comp[v] = it->second;
  }
  if (component_of) *component_of = std::move(comp);
  return static_cast<int>(ids.size());
}

TriMesh transformed(const TriMesh& mesh, const Eigen::Matrix3d& rotation, const Vec3& translation) {
  std::vector<Vec3> positions;
  positions.reserve(mesh.num_vertices());
  for (const auto& p : mesh.vertices()) positions.push_back(rotation * p + translation);
  TriMesh out(std::move(positions), mesh.faces());
  if (mesh.labels()) out.set_labels(*mesh.labels());
  return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  // Next non-empty, non-comment line split into whitespace tokens.
  bool next(std::vector<std::string>& tokens, char comment = '#') {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const auto hash = line.find(comment);
      if (hash != std::string::npos) line.resize(hash);
      tokens.clear();
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }
  int line_no() const { return line_no_; }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw LoadError("cannot open " + path.string());
  return in;
}

TriMesh load_off(const std::filesystem::path& path) {
  auto in = open_input(path);
  LineReader reader(in);
  std::vector<std::string> tok;
  if (!reader.next(tok)) throw LoadError(path.string() + ": empty file");
  std::size_t pos = 0;
  if (tok[0] == "OFF") {
    pos = 1;
  } else if (tok[0].size() > 3 && tok[0].compare(0, 3, "OFF") == 0) {
    throw LoadError(path.string() + ": unsupported OFF variant " + tok[0]);
  }
  std::vector<std::string> counts(tok.begin() + static_cast<long>(pos), tok.end());
  if (counts.empty()) {
    if (!reader.next(tok)) throw LoadError(path.string() + ": missing OFF counts");
    counts = tok;
  }
  if (counts.size() < 2) throw LoadError(path.string() + ": malformed OFF counts");
  const long nv = io::parse_int(counts[0], "OFF vertex count");
  const long nf = io::parse_int(counts[1], "OFF face count");
  if (nv < 0 || nf < 0) throw LoadError(path.string() + ": negative OFF counts");

  std::vector<Vec3> vertices;
  vertices.reserve(nv);
  for (long i = 0; i < nv; ++i) {
    if (!reader.next(tok) || tok.size() < 3) {
      throw LoadError(path.string() + ": malformed vertex at index " + std::to_string(i));
    }
    vertices.emplace_back(io::parse_double(tok[0], "x"), io::parse_double(tok[1], "y"),
                          io::parse_double(tok[2], "z"));
  }
  std::vector<Face> faces;
  faces.reserve(nf);
  for (long i = 0; i < nf; ++i) {
    if (!reader.next(tok)) throw LoadError(path.string() + ": missing face at index " + std::to_string(i));
    const long n = io::parse_int(tok[0], "face size");
    if (n != 3) throw LoadError("non-triangle face at index " + std::to_string(i));
    if (tok.size() < 4) throw LoadError(path.string() + ": malformed face at index " + std::to_string(i));
    faces.push_back({static_cast<int>(io::parse_int(tok[1], "face index")),
                     static_cast<int>(io::parse_int(tok[2], "face index")),
                     static_cast<int>(io::parse_int(tok[3], "face index"))});
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

TriMesh load_obj(const std::filesystem::path& path) {
  auto in = open_input(path);
  LineReader reader(in);
  std::vector<std::string> tok;
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  while (reader.next(tok)) {
    if (tok[0] == "v") {
      if (tok.size() < 4) throw LoadError(path.string() + ": malformed vertex on line " + std::to_string(reader.line_no()));
      vertices.emplace_back(io::parse_double(tok[1], "x"), io::parse_double(tok[2], "y"),
                            io::parse_double(tok[3], "z"));
    } else if (tok[0] == "f") {
      if (tok.size() != 4) {
        throw LoadError("non-triangle face at index " + std::to_string(faces.size()));
      }
      Face f{};
      for (int k = 0; k < 3; ++k) {
        const std::string& t = tok[k + 1];
        const auto slash = t.find('/');
        long idx = io::parse_int(slash == std::string::npos ? t : t.substr(0, slash), "face index");
        idx = idx < 0 ? static_cast<long>(vertices.size()) + idx : idx - 1;
        f[k] = static_cast<int>(idx);
      }
      faces.push_back(f);
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

enum class PlyType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::kI8;
  if (name == "uchar" || name == "uint8") return PlyType::kU8;
  if (name == "short" || name == "int16") return PlyType::kI16;
  if (name == "ushort" || name == "uint16") return PlyType::kU16;
  if (name == "int" || name == "int32") return PlyType::kI32;
  if (name == "uint" || name == "uint32") return PlyType::kU32;
  if (name == "float" || name == "float32") return PlyType::kF32;
  if (name == "double" || name == "float64") return PlyType::kF64;
  throw LoadError("unknown PLY type " + name);
}

double read_ply_binary(std::istream& in, PlyType t) {
  switch (t) {
    case PlyType::kI8: return io::read_le<int8_t>(in, "PLY");
    case PlyType::kU8: return io::read_le<uint8_t>(in, "PLY");
    case PlyType::kI16: return io::read_le<int16_t>(in, "PLY");
    case PlyType::kU16: return io::read_le<uint16_t>(in, "PLY");
    case PlyType::kI32: return io::read_le<int32_t>(in, "PLY");
    case PlyType::kU32: return io::read_le<uint32_t>(in, "PLY");
    case PlyType::kF32: return io::read_le<float>(in, "PLY");
    case PlyType::kF64: return io::read_le<double>(in, "PLY");
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kF32;
  bool is_list = false;
  PlyType count_type = PlyType::kU8;
};

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<PlyProperty> properties;
};

TriMesh load_ply(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::in | std::ios::binary);
  std::string line;
  std::getline(in, line);
  if (io::trim(line) != "ply") throw LoadError(path.string() + ": missing PLY magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw LoadError(path.string() + ": unsupported PLY format " + fmt);
    } else if (key == "element") {
      PlyElement e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) throw LoadError(path.string() + ": property before element");
      PlyProperty p;
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string ct, it;
        ss >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_type(ct);
        p.type = ply_type(it);
      } else {
        p.type = ply_type(type);
        ss >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }

  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string ascii_line;
  std::vector<std::string> tok;
  std::size_t tok_pos = 0;
  auto next_ascii = [&]() -> double {
    while (tok_pos >= tok.size()) {
      if (!std::getline(in, ascii_line)) throw LoadError(path.string() + ": truncated PLY body");
      tok.clear();
      tok_pos = 0;
      std::istringstream ss(ascii_line);
      std::string t;
      while (ss >> t) tok.push_back(t);
    }
    return io::parse_double(tok[tok_pos++], "PLY value");
  };
  auto read_value = [&](PlyType t) { return binary ? read_ply_binary(in, t) : next_ascii(); };

  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    for (long i = 0; i < e.count; ++i) {
      Vec3 p = Vec3::Zero();
      for (const auto& prop : e.properties) {
        if (prop.is_list) {
          const long n = static_cast<long>(read_value(prop.count_type));
          std::vector<int> idx(n);
          for (long k = 0; k < n; ++k) idx[k] = static_cast<int>(read_value(prop.type));
          if (is_face && (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
            if (n != 3) throw LoadError("non-triangle face at index " + std::to_string(i));
            faces.push_back({idx[0], idx[1], idx[2]});
          }
        } else {
          const double value = read_value(prop.type);
          if (is_vertex) {
            if (prop.name == "x") p.x() = value;
            else if (prop.name == "y") p.y() = value;
            else if (prop.name == "z") p.z() = value;
          }
        }
      }
      if (is_vertex) vertices.push_back(p);
      // Each ASCII record sits on its own line.
      if (!binary) tok_pos = tok.size();
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  try {
    switch (format) {
      case MeshFormat::kOff: return load_off(path);
      case MeshFormat::kObj: return load_obj(path);
      case MeshFormat::kPly: return load_ply(path);
    }
  } catch (const FormatError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  throw LoadError("unknown mesh format");
}

TriMesh load_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".off") return load_mesh(path, MeshFormat::kOff);
  if (ext == ".obj") return load_mesh(path, MeshFormat::kObj);
  if (ext == ".ply") return load_mesh(path, MeshFormat::kPly);
  throw LoadError(path.string() + ": cannot infer mesh format from extension");
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, MeshFormat format,
               SaveOptions options) {
  using io::format_double;
  if (format == MeshFormat::kOff) {
    auto out = open_output(path);
    out << "OFF\n" << mesh.num_vertices() << ' ' << mesh.num_faces() << " 0\n";
    for (const auto& p : mesh.vertices()) {
      out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
    }
    for (const auto& f : mesh.faces()) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    return;
  }
  if (format == MeshFormat::kObj) {
    auto out = open_output(path);
    for (const auto& p : mesh.vertices()) {
      out << "v " << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
    }
    for (const auto& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    return;
  }

  const auto* colors = options.vertex_colors;
  if (colors && static_cast<int>(colors->size()) != mesh.num_vertices()) {
    throw Error("vertex color count does not match vertex count");
  }
  auto out = open_output(path, std::ios::out | std::ios::binary);
  out << "ply\nformat " << (options.binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  out << "element vertex " << mesh.num_vertices() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.num_faces() << '\n';
  out << "property list uchar int vertex_indices\nend_header\n";
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const Vec3& p = mesh.position(v);
    if (options.binary) {
      io::write_le(out, p.x());
      io::write_le(out, p.y());
      io::write_le(out, p.z());
      if (colors) {
        for (uint8_t c : (*colors)[v]) io::write_le(out, c);
      }
    } else {
      out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z());
      if (colors) {
        for (uint8_t c : (*colors)[v]) out << ' ' << static_cast<int>(c);
      }
      out << '\n';
    }
  }
  for (const auto& f : mesh.faces()) {
    if (options.binary) {
      io::write_le<uint8_t>(out, 3);
      for (int k = 0; k < 3; ++k) io::write_le<int32_t>(out, f[k]);
    } else {
      out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    }
  }
}

std::vector<int> load_labels(const std::filesystem::path& path, int vertex_count) {
  auto in = open_input(path);
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = io::trim(line);
    if (t.empty()) continue;
    long long value = 0;
    try {
      value = io::parse_int(t, "label");
    } catch (const FormatError&) {
      throw LoadError(path.string() + ": bad label on line " + std::to_string(line_no));
    }
    const int vertex = static_cast<int>(labels.size());
    if (value < 0 || value >= kLabelCount) {
      throw LoadError(path.string() + ": label " + std::to_string(value) + " of vertex " +
                      std::to_string(vertex) + " outside [0, " + std::to_string(kLabelCount - 1) + "]");
    }
    labels.push_back(static_cast<int>(value));
  }
  if (static_cast<int>(labels.size()) != vertex_count) {
    throw LoadError(path.string() + ": " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(vertex_count) + " vertices");
  }
  return labels;
}

void save_labels(const std::vector<int>& labels, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (int l : labels) out << l << '\n';
}

}  // namespace patchseg
