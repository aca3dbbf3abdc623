#include "patchseg/param.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"
#include "patchseg/log.hpp"

namespace patchseg {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

double cot(const Vec3& a, const Vec3& b) { return a.dot(b) / a.cross(b).norm(); }
}  // namespace

Turn to_turn(double radians) {
  double t = radians / kTwoPi;
  t -= std::floor(t);
  const double scaled = std::ldexp(t, 64);
  if (!(scaled < 18446744073709551616.0)) return 0;
  return static_cast<Turn>(scaled);
}

double to_radians(Turn angle) { return std::ldexp(static_cast<double>(angle), -64) * kTwoPi; }

const char* to_string(ChartMethod method) {
  return method == ChartMethod::kHarmonic ? "harmonic" : "polar";
}

Vec2 DiskParam::coord(int local) const {
  const double a = to_radians(angle[local]);
  return {radius[local] * std::cos(a), radius[local] * std::sin(a)};
}

std::vector<Vec2> DiskParam::coords() const {
  std::vector<Vec2> out(radius.size());
  for (int i = 0; i < size(); ++i) out[i] = coord(i);
  return out;
}

DiskParam rotated(const DiskParam& param, Turn delta) {
  DiskParam out = param;
  for (Turn& a : out.angle) a += delta;
  return out;
}

// ---------------------------------------------------------------------------

Patch extract_patch(const TriMesh& mesh, const GeodesicBall& ball) {
  std::vector<int> faces;
  for (int v : ball.vertices()) {
    for (int h : mesh.outgoing(v)) {
      const int f = TriMesh::face_of(h);
      const Face& t = mesh.face(f);
      // Count each face once, from its lowest corner.
      if (std::min({t[0], t[1], t[2]}) != v) continue;
      if (ball.contains(t[0]) && ball.contains(t[1]) && ball.contains(t[2])) faces.push_back(f);
    }
  }
  const std::string where = "patch at vertex " + std::to_string(ball.center());
  if (faces.empty()) throw TopologyError("degenerate " + where + ": no face inside the geodesic ball");

  Patch patch;
  patch.center = ball.center();
  patch.ball = ball;
  patch.sub = make_submesh(mesh, std::move(faces));
  patch.local_center = patch.sub.local_vertex(patch.center);
  if (patch.local_center == kNone) {
    throw TopologyError("degenerate " + where + ": center has no face inside the ball");
  }

  std::vector<int> component;
  if (connected_components(patch.sub.local, &component) > 1) {
    const int keep = component[patch.local_center];
    std::vector<int> kept;
    for (int f = 0; f < patch.sub.local.num_faces(); ++f) {
      if (component[patch.sub.local.face(f)[0]] == keep) kept.push_back(patch.sub.face_ids[f]);
    }
    patch.sub = make_submesh(mesh, std::move(kept));
    patch.local_center = patch.sub.local_vertex(patch.center);
  }

  const TriMesh& local = patch.sub.local;
  if (local.is_boundary_vertex(patch.local_center) || local.is_pinched_vertex(patch.local_center) ||
      local.outgoing(patch.local_center).size() != mesh.outgoing(patch.center).size()) {
    throw TopologyError("degenerate " + where + ": center one-ring is not inside the patch");
  }
  patch.is_disk = euler_characteristic(patch.sub) == 1 && boundary_loops(local).size() == 1;
  return patch;
}

// ---------------------------------------------------------------------------

double cotangent_weight(const TriMesh& mesh, int h) {
  auto half = [&](int g) {
    const Vec3& o = mesh.position(mesh.opposite(g));
    return 0.5 * cot(mesh.position(mesh.from(g)) - o, mesh.position(mesh.to(g)) - o);
  };
  double w = half(h);
  if (mesh.twin(h) != kNone) w += half(mesh.twin(h));
  return w;
}

double cotangent_weight(const TriMesh& mesh, int i, int j) {
  for (int h : mesh.outgoing(i)) {
    if (mesh.to(h) == j) return cotangent_weight(mesh, h);
  }
  // Boundary vertex: the edge may only exist as j -> i.
  for (int h : mesh.outgoing(j)) {
    if (mesh.to(h) == i) return cotangent_weight(mesh, h);
  }
  throw LookupError("vertices " + std::to_string(i) + " and " + std::to_string(j) + " are not adjacent");
}

namespace {

// Each undirected edge once: the halfedge itself when it has no twin or is
// the smaller of the pair.
template <typename Fn>
void for_each_edge(const TriMesh& mesh, Fn&& fn) {
  for (int h = 0; h < mesh.num_halfedges(); ++h) {
    const int t = mesh.twin(h);
    if (t == kNone || h < t) fn(h);
  }
}

bool any_flipped(const TriMesh& local, const std::vector<Vec2>& uv, const std::vector<uint8_t>& valid) {
  for (const Face& f : local.faces()) {
    if (!valid[f[0]] || !valid[f[1]] || !valid[f[2]]) continue;
    if (signed_area(uv[f[0]], uv[f[1]], uv[f[2]]) <= 0.0) return true;
  }
  return false;
}

}  // namespace

DiskParam harmonic_map(const Patch& patch) {
  if (!patch.is_disk) {
    throw TopologyError("harmonic map needs a disk patch (center " + std::to_string(patch.center) + ")");
  }
  const TriMesh& local = patch.sub.local;
  const int n = local.num_vertices();

  // Counter-clockwise boundary, starting from the loop's lowest vertex.
  std::vector<int> loop = boundary_loops(local).front();
  std::reverse(loop.begin() + 1, loop.end());
  std::vector<int> boundary_slot(n, kNone);
  for (std::size_t k = 0; k < loop.size(); ++k) {
    if (boundary_slot[loop[k]] != kNone) {
      throw TopologyError("boundary of patch at vertex " + std::to_string(patch.center) +
                          " passes through a vertex twice");
    }
    boundary_slot[loop[k]] = static_cast<int>(k);
  }

  // theta_k accumulates segment lengths, with the segment into the first
  // vertex closing the loop, so the last vertex lands exactly on 2pi.
  const int m = static_cast<int>(loop.size());
  std::vector<double> seg(m);
  double perimeter = 0.0;
  for (int k = 0; k < m; ++k) {
    seg[k] = (local.position(loop[k]) - local.position(loop[(k + m - 1) % m])).norm();
    perimeter += seg[k];
  }

  std::vector<Vec2> uv(n, Vec2::Zero());
  std::vector<double> radius(n, 0.0);
  std::vector<Turn> angle(n, 0);
  double acc = 0.0;
  for (int k = 0; k < m; ++k) {
    acc += seg[k];
    const double theta = k == m - 1 ? kTwoPi : kTwoPi * acc / perimeter;
    uv[loop[k]] = Vec2(std::cos(theta), std::sin(theta));
    radius[loop[k]] = 1.0;
    angle[loop[k]] = to_turn(theta);
  }

  std::vector<int> unknown(n, kNone);
  int count = 0;
  for (int v = 0; v < n; ++v) {
    if (boundary_slot[v] == kNone) unknown[v] = count++;
  }

  if (count > 0) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(count, 2);
    for_each_edge(local, [&](int h) {
      const int i = local.from(h);
      const int j = local.to(h);
      const double w = cotangent_weight(local, h);
      for (auto [a, b] : {std::pair{i, j}, std::pair{j, i}}) {
        const int row = unknown[a];
        if (row == kNone) continue;
        triplets.emplace_back(row, row, w);
        if (unknown[b] != kNone) {
          triplets.emplace_back(row, unknown[b], -w);
        } else {
          rhs.row(row) += w * uv[b].transpose();
        }
      }
    });
    Eigen::SparseMatrix<double> a(count, count);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) {
      throw SolverError("harmonic map of patch at vertex " + std::to_string(patch.center) +
                        ": singular Laplace system");
    }
    const Eigen::MatrixXd x = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !x.allFinite()) {
      throw SolverError("harmonic map of patch at vertex " + std::to_string(patch.center) +
                        ": Laplace solve failed");
    }
    for (int v = 0; v < n; ++v) {
      if (unknown[v] == kNone) continue;
      uv[v] = x.row(unknown[v]).transpose();
      radius[v] = uv[v].norm();
      angle[v] = to_turn(std::atan2(uv[v].y(), uv[v].x()));
    }
  }

  DiskParam param;
  param.method = ChartMethod::kHarmonic;
  param.radius = std::move(radius);
  param.angle = std::move(angle);
  param.valid.assign(n, 1);

  // Residual of the Laplace equation on the polar-form coordinates.
  const std::vector<Vec2> stored = param.coords();
  std::vector<Vec2> sum(n, Vec2::Zero());
  for_each_edge(local, [&](int h) {
    const int i = local.from(h);
    const int j = local.to(h);
    const double w = cotangent_weight(local, h);
    sum[i] += w * (stored[j] - stored[i]);
    sum[j] += w * (stored[i] - stored[j]);
  });
  for (int v = 0; v < n; ++v) {
    if (unknown[v] != kNone) param.residual = std::max(param.residual, sum[v].norm());
  }

  bool outside = false;
  for (double r : param.radius) outside = outside || r > 1.0 + 1e-9;
  param.fold_over = outside || any_flipped(local, stored, param.valid);
  return param;
}

DiskParam geodesic_polar_map(const Patch& patch) {
  const int n = patch.sub.local.num_vertices();
  DiskParam param;
  param.method = ChartMethod::kPolar;
  param.radius.assign(n, 0.0);
  param.angle.assign(n, 0);
  param.valid.assign(n, 0);
  for (int v = 0; v < n; ++v) {
    const int pv = patch.sub.vertex_ids[v];
    try {
      param.radius[v] = patch.ball.distance(pv) / patch.radius();
      param.angle[v] = to_turn(patch.ball.initial_angle(pv));
      param.valid[v] = 1;
    } catch (const Error& e) {
      log::warn("polar chart of vertex " + std::to_string(patch.center) + " drops vertex " +
                std::to_string(pv) + ": " + e.what());
    }
  }
  param.fold_over = any_flipped(patch.sub.local, param.coords(), param.valid);
  return param;
}

DiskParam parameterize(const Patch& patch) {
  if (patch.is_disk) {
    try {
      DiskParam param = harmonic_map(patch);
      if (!param.fold_over) return param;
    } catch (const Error&) {
      // Fall through to the polar chart.
    }
  }
  return geodesic_polar_map(patch);
}

// ---------------------------------------------------------------------------

FlowField solve_flow_field(const TriMesh& mesh, const std::vector<int>& sources,
                           const std::vector<int>& sinks) {
  const int n = mesh.num_vertices();
  if (sources.empty() || sinks.empty()) throw ConfigError("flow field needs at least one source and one sink");
  std::vector<int8_t> fixed(n, -1);
  for (int s : sources) {
    if (s < 0 || s >= n) throw ConfigError("flow source " + std::to_string(s) + " out of range");
    fixed[s] = 0;
  }
  for (int t : sinks) {
    if (t < 0 || t >= n) throw ConfigError("flow sink " + std::to_string(t) + " out of range");
    if (fixed[t] == 0) throw ConfigError("vertex " + std::to_string(t) + " is both a flow source and a sink");
    fixed[t] = 1;
  }
  std::vector<int> component;
  const int components = connected_components(mesh, &component);
  if (components != 1) {
    throw TopologyError("flow field needs a connected mesh; found " + std::to_string(components) + " components");
  }

  FlowField flow;
  flow.sources = sources;
  flow.sinks = sinks;
  flow.u.assign(n, 0.0);
  std::vector<int> unknown(n, kNone);
  int count = 0;
  for (int v = 0; v < n; ++v) {
    if (fixed[v] >= 0) {
      flow.u[v] = fixed[v];
    } else if (!mesh.outgoing(v).empty()) {
      unknown[v] = count++;
    }
  }

  if (count > 0) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(count);
    for_each_edge(mesh, [&](int h) {
      const double w = std::max(cotangent_weight(mesh, h), 0.0);
      if (w == 0.0) return;
      const int i = mesh.from(h);
      const int j = mesh.to(h);
      for (auto [a, b] : {std::pair{i, j}, std::pair{j, i}}) {
        const int row = unknown[a];
        if (row == kNone) continue;
        triplets.emplace_back(row, row, w);
        if (unknown[b] != kNone) {
          triplets.emplace_back(row, unknown[b], -w);
        } else {
          rhs[row] += w * flow.u[b];
        }
      }
    });
    Eigen::SparseMatrix<double> a(count, count);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
    if (ldlt.info() != Eigen::Success) throw SolverError("flow field: Laplace system is singular");
    const Eigen::VectorXd x = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success || !x.allFinite()) throw SolverError("flow field: solve failed");
    for (int v = 0; v < n; ++v) {
      // Clamp round-off so the maximum principle holds exactly.
      if (unknown[v] != kNone) flow.u[v] = std::clamp(x[unknown[v]], 0.0, 1.0);
    }
  }

  flow.grad.resize(mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(f);
    const Vec3 normal = mesh.face_normal(f);
    Vec3 g = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      const Vec3 e = mesh.position(t[(k + 2) % 3]) - mesh.position(t[(k + 1) % 3]);
      g += flow.u[t[k]] * normal.cross(e);
    }
    flow.grad[f] = g / (2.0 * mesh.face_area(f));
  }
  return flow;
}

Landmarks default_landmarks(const TriMesh& mesh) {
  auto farthest = [&](int from) {
    const auto d = edge_graph_distances(mesh, from);
    int best = from;
    for (int v = 0; v < mesh.num_vertices(); ++v) {
      if (std::isfinite(d[v]) && d[v] > d[best]) best = v;
    }
    return best;
  };
  int start = 0;
  while (start < mesh.num_vertices() && mesh.outgoing(start).empty()) ++start;
  if (start == mesh.num_vertices()) throw TopologyError("mesh has no faces");
  const int a = farthest(start);
  const int b = farthest(a);
  if (a == b) throw TopologyError("cannot pick flow landmarks on a single-vertex mesh");
  return {{std::min(a, b)}, {std::max(a, b)}};
}

Landmarks load_landmarks(const std::filesystem::path& path, int vertex_count) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open landmarks file " + path.string());
  Landmarks out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key) || key[0] == '#') continue;
    std::vector<int>* target = key == "source" ? &out.sources : key == "sink" ? &out.sinks : nullptr;
    if (!target) throw LoadError(path.string() + ": unknown landmark key '" + key + "'");
    std::string tok;
    while (ss >> tok) {
      const long long v = io::parse_int(tok, "landmark vertex id");
      if (v < 0 || v >= vertex_count) {
        throw LoadError(path.string() + ": landmark vertex " + tok + " out of range");
      }
      target->push_back(static_cast<int>(v));
    }
  }
  if (out.sources.empty() || out.sinks.empty()) {
    throw LoadError(path.string() + ": needs both a source and a sink line");
  }
  return out;
}

void save_landmarks(const Landmarks& landmarks, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "source";
  for (int v : landmarks.sources) out << ' ' << v;
  out << "\nsink";
  for (int v : landmarks.sinks) out << ' ' << v;
  out << '\n';
}

int base_neighbor(const TriMesh& mesh, int center) {
  const auto ring = mesh.one_ring(center);
  if (ring.empty()) throw TopologyError("vertex " + std::to_string(center) + " has no neighbors");
  return *std::min_element(ring.begin(), ring.end());
}

DiskParam align(const DiskParam& param, const Patch& patch, const FlowField& flow) {
  const TriMesh& mesh = *patch.sub.parent;
  const int c = patch.center;
  const int nb = base_neighbor(mesh, c);
  int face = -1;
  for (int h : mesh.outgoing(c)) {
    if (mesh.to(h) == nb || mesh.opposite(h) == nb) {
      const int f = TriMesh::face_of(h);
      if (face < 0 || f < face) face = f;
    }
  }

  DiskParam out = param;
  out.aligned = false;
  out.calibration_angle = 0.0;
  const int local_nb = patch.sub.local_vertex(nb);
  if (local_nb == kNone || !param.valid[local_nb]) {
    log::warn("patch at vertex " + std::to_string(c) + " left unaligned: base neighbor not charted");
    return out;
  }
  const Vec3 normal = mesh.face_normal(face);
  Vec3 phi = flow.grad[face];
  phi -= phi.dot(normal) * normal;
  if (!(phi.norm() * mesh.bbox_diagonal() > 1e-12)) {
    log::warn("patch at vertex " + std::to_string(c) + " left unaligned: flow vanishes at the center");
    return out;
  }
  const Vec3 base = mesh.position(nb) - mesh.position(c);
  const double base_to_ref = std::atan2(normal.dot(base.cross(phi)), base.dot(phi));
  const Turn delta = Turn{0} - param.angle[local_nb] - to_turn(base_to_ref);
  for (Turn& a : out.angle) a += delta;
  out.aligned = true;
  out.calibration_angle = to_radians(delta);
  return out;
}

void dump_chart(const DiskParam& param, const Patch& patch, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (int v = 0; v < param.size(); ++v) {
    if (!param.valid[v]) continue;
    const Vec2 p = param.coord(v);
    out << patch.sub.vertex_ids[v] << ' ' << io::format_double(p.x()) << ' ' << io::format_double(p.y()) << '\n';
  }
}

}  // namespace patchseg
