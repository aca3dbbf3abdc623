#include "patchseg/geodesics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <string>
#include <unordered_map>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"

namespace patchseg {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }
}  // namespace

const char* to_string(GeodesicBackend backend) {
  return backend == GeodesicBackend::kExact ? "exact" : "dijkstra";
}

GeodesicBackend parse_geodesic_backend(std::string_view name) {
  if (name == "exact") return GeodesicBackend::kExact;
  if (name == "dijkstra") return GeodesicBackend::kSubdividedDijkstra;
  throw ConfigError("unknown geodesic backend '" + std::string(name) + "' (expected exact or dijkstra)");
}

namespace detail {

class Routing {
 public:
  virtual ~Routing() = default;
  /// Polyline from v back to the center.
  virtual std::vector<Vec3> trace(int v) const = 0;
};

namespace {

// A window: an interval [b0, b1] on halfedge `he` (a -> b) lit by a
// pseudo-source. Coordinates are in the edge frame: a at the origin, x toward
// b, and +y toward the face of `he`, which is the face entered next. The
// source always sits at y < 0.
struct Window {
  int he;
  double b0;
  double b1;
  Vec2 src;
  double sigma;
  int source;
  int parent;
  double key;
};

struct Origin {
  enum class Kind : uint8_t { kUnset, kCenter, kEdge, kWindow };
  Kind kind = Kind::kUnset;
  int index = kNone;
};

class ExactRouting final : public Routing {
 public:
  ExactRouting(const TriMesh& mesh, int center, std::vector<Window> windows, std::vector<Origin> origins)
      : mesh_(mesh), center_(center), windows_(std::move(windows)), origins_(std::move(origins)) {}

  std::vector<Vec3> trace(int v) const override {
    std::vector<Vec3> points{mesh_.position(v)};
    auto push = [&](const Vec3& p) {
      if ((p - points.back()).norm() > 1e-15 * (1.0 + p.norm())) points.push_back(p);
    };
    int cur = v;
    std::size_t guard = 0;
    while (cur != center_) {
      if (++guard > windows_.size() + origins_.size() + 8) {
        throw Error("geodesic back-trace did not terminate");
      }
      const Origin& o = origins_[cur];
      if (o.kind == Origin::Kind::kEdge) {
        cur = o.index;
        push(mesh_.position(cur));
        continue;
      }
      if (o.kind != Origin::Kind::kWindow) throw Error("missing geodesic routing record");
      Vec3 p = mesh_.position(cur);
      const Window* w = &windows_[o.index];
      while (true) {
        const Vec3& a = mesh_.position(mesh_.from(w->he));
        const Vec3& b = mesh_.position(mesh_.to(w->he));
        const Vec3& c = mesh_.position(mesh_.opposite(w->he));
        const Vec3 u = (b - a).normalized();
        Vec3 n = (c - a) - (c - a).dot(u) * u;
        n.normalize();
        const Vec2 q((p - a).dot(u), (p - a).dot(n));
        double x = q.x();
        if (q.y() - w->src.y() > 0) {
          const double s = q.y() / (q.y() - w->src.y());
          x = q.x() + s * (w->src.x() - q.x());
        }
        x = std::clamp(x, w->b0, w->b1);
        p = a + x * u;
        push(p);
        if (w->parent == kNone) {
          cur = w->source;
          push(mesh_.position(cur));
          break;
        }
        w = &windows_[w->parent];
      }
    }
    return points;
  }

 private:
  const TriMesh& mesh_;
  int center_;
  std::vector<Window> windows_;
  std::vector<Origin> origins_;  // per vertex
};

class GraphRouting final : public Routing {
 public:
  GraphRouting(int center, std::unordered_map<int, std::pair<int, Vec3>> pred,
               std::unordered_map<int, Vec3> positions)
      : center_(center), pred_(std::move(pred)), positions_(std::move(positions)) {}

  std::vector<Vec3> trace(int v) const override {
    std::vector<Vec3> points{positions_.at(v)};
    int cur = v;
    while (cur != center_) {
      const auto& [prev, pos] = pred_.at(cur);
      cur = prev;
      points.push_back(positions_.at(cur));
    }
    return points;
  }

 private:
  int center_;
  std::unordered_map<int, std::pair<int, Vec3>> pred_;
  std::unordered_map<int, Vec3> positions_;
};

// ---------------------------------------------------------------------------
// Exact window propagation.

class WindowPropagation {
 public:
  WindowPropagation(const TriMesh& mesh, int center, double radius, double tolerance)
      : mesh_(mesh),
        center_(center),
        radius_(radius),
        tol_(tolerance),
        dist_(mesh.num_vertices(), kInf),
        origins_(mesh.num_vertices()) {}

  void run() {
    relax(center_, 0.0, {Origin::Kind::kCenter, kNone});
    while (!queue_.empty()) {
      const Event e = queue_.top();
      queue_.pop();
      if (e.key >= radius_) break;
      if (e.is_vertex) {
        if (dist(e.index) != e.key) continue;
        spawn(e.index);
      } else {
        const Window& w = windows_[e.index];
        if (dominated(w.he, w.b0, w.b1, w.src, w.sigma, w.key)) continue;
        propagate(e.index);
      }
    }
  }

  double dist(int v) const { return dist_[v]; }
  /// (vertex, distance) for every vertex given a finite distance.
  std::vector<std::pair<int, double>> reached() const {
    std::vector<std::pair<int, double>> out;
    out.reserve(touched_.size());
    for (int v : touched_) out.emplace_back(v, dist_[v]);
    return out;
  }
  std::vector<Window> take_windows() { return std::move(windows_); }
  std::vector<Origin> take_origins() { return std::move(origins_); }

 private:
  struct Event {
    double key;
    bool is_vertex;
    int index;
    bool operator>(const Event& o) const {
      if (key != o.key) return key > o.key;
      if (is_vertex != o.is_vertex) return !is_vertex;  // vertices first
      return index > o.index;
    }
  };

  bool is_pseudo_source(int v) const {
    return v == center_ || mesh_.is_boundary_vertex(v) || mesh_.angle_sum(v) > kTwoPi + 1e-9;
  }

  void relax(int v, double d, Origin origin) {
    const double cur = dist(v);
    if (d < cur) {
      if (cur == kInf) touched_.push_back(v);
      dist_[v] = d;
      origins_[v] = origin;
      if (is_pseudo_source(v) && d < radius_) queue_.push({d, true, v});
    }
  }

  // Layout of the opposite vertex of `he` in its edge frame.
  Vec2 apex(int he, double len) const {
    const double lac = (mesh_.position(mesh_.opposite(he)) - mesh_.position(mesh_.from(he))).norm();
    const double lbc = (mesh_.position(mesh_.opposite(he)) - mesh_.position(mesh_.to(he))).norm();
    const double cx = (len * len + lac * lac - lbc * lbc) / (2.0 * len);
    return {cx, std::sqrt(std::max(lac * lac - cx * cx, 0.0))};
  }

  // True when every point of the window is reached at least as cheaply from
  // an already-labelled vertex of the face it is entering.
  bool dominated(int he, double t0, double t1, const Vec2& src, double sigma, double key) const {
    if (key >= radius_) return true;
    const double len = mesh_.length(he);
    const Vec2 x0(t0, 0.0);
    const Vec2 x1(t1, 0.0);
    const double d0 = sigma + (src - x0).norm();
    const double d1 = sigma + (src - x1).norm();
    const int p = mesh_.from(he);
    const int q = mesh_.to(he);
    const int r = mesh_.opposite(he);
    if (dist(p) + t1 < d1 - tol_) return true;
    if (dist(q) + (len - t0) < d0 - tol_) return true;
    const double dr = dist(r);
    if (dr < kInf) {
      const Vec2 rp = apex(he, len);
      if (dr + std::max((rp - x0).norm(), (rp - x1).norm()) < key - tol_) return true;
    }
    return false;
  }

  void push_window(int he, double t0, double t1, const Vec2& src, double sigma, int source,
                   int parent) {
    if (he == kNone) return;
    const double len = mesh_.length(he);
    t0 = std::clamp(t0, 0.0, len);
    t1 = std::clamp(t1, 0.0, len);
    if (!(t1 - t0 > 1e-12 * len)) return;
    if (!(src.y() < 0.0)) return;
    const double nearest = std::clamp(src.x(), t0, t1);
    const double key = sigma + std::hypot(nearest - src.x(), src.y());
    if (dominated(he, t0, t1, src, sigma, key)) return;
    windows_.push_back({he, t0, t1, src, sigma, source, parent, key});
    queue_.push({key, false, static_cast<int>(windows_.size()) - 1});
  }

  void spawn(int v) {
    const double d = dist(v);
    const Vec3& pv = mesh_.position(v);
    for (int n : mesh_.one_ring(v)) {
      relax(n, d + (mesh_.position(n) - pv).norm(), {Origin::Kind::kEdge, v});
    }
    for (int h : mesh_.outgoing(v)) {
      // Window over the edge opposite v, lighting the face beyond it.
      const int across = mesh_.twin(TriMesh::next(h));
      if (across == kNone) continue;
      const Vec3& a = mesh_.position(mesh_.from(across));
      const Vec3& b = mesh_.position(mesh_.to(across));
      const double len = (b - a).norm();
      const Vec3 u = (b - a) / len;
      const double x = (pv - a).dot(u);
      const double y = -((pv - a) - x * u).norm();
      push_window(across, 0.0, len, Vec2(x, y), d, v, kNone);
    }
  }

  // Intersection parameter along the ray origin + t * dir (|dir| = 1) of the
  // line through `src` and `target`.
  static double hit(const Vec2& src, const Vec2& target, const Vec2& origin, const Vec2& dir) {
    const double denom = cross2(dir, target - src);
    if (denom == 0.0) return (target - origin).dot(dir);
    const double s = -cross2(dir, src - origin) / denom;
    return (src + s * (target - src) - origin).dot(dir);
  }

  static Vec2 to_frame(const Vec2& p, const Vec2& origin, const Vec2& dir) {
    const Vec2 d = p - origin;
    return {d.dot(dir), cross2(dir, d)};
  }

  void propagate(int wi) {
    const Window w = windows_[wi];
    const int he = w.he;
    const double len = mesh_.length(he);
    const Vec2 a(0.0, 0.0);
    const Vec2 b(len, 0.0);
    const Vec2 c = apex(he, len);
    const Vec2& s = w.src;
    const double lac = c.norm();
    const double lbc = (b - c).norm();
    const double slack = 1e-12 * len;

    // Where the ray source -> apex crosses the edge line.
    const double xc = s.x() + (c.x() - s.x()) * (-s.y()) / (c.y() - s.y());
    if (xc >= w.b0 - slack && xc <= w.b1 + slack) {
      relax(mesh_.opposite(he), w.sigma + (c - s).norm(), {Origin::Kind::kWindow, wi});
    }

    if (xc > w.b0) {
      // Part of the cone hitting edge a -> c.
      const Vec2 dir = c / lac;
      const double t0 = w.b0 <= slack ? 0.0 : hit(s, Vec2(w.b0, 0.0), a, dir);
      const double t1 = xc <= w.b1 ? lac : hit(s, Vec2(w.b1, 0.0), a, dir);
      push_window(mesh_.twin(TriMesh::prev(he)), t0, t1, to_frame(s, a, dir), w.sigma, w.source, wi);
    }
    if (xc < w.b1) {
      // Part of the cone hitting edge c -> b.
      const Vec2 dir = (b - c) / lbc;
      const double t0 = xc >= w.b0 ? 0.0 : hit(s, Vec2(w.b0, 0.0), c, dir);
      const double t1 = w.b1 >= len - slack ? lbc : hit(s, Vec2(w.b1, 0.0), c, dir);
      push_window(mesh_.twin(TriMesh::next(he)), t0, t1, to_frame(s, c, dir), w.sigma, w.source, wi);
    }
  }

  const TriMesh& mesh_;
  int center_;
  double radius_;
  double tol_;
  std::vector<double> dist_;    // per vertex, kInf when unreached
  std::vector<Origin> origins_;
  std::vector<int> touched_;
  std::vector<Window> windows_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
};

}  // namespace
}  // namespace detail

bool GeodesicBall::contains(int v) const {
  return std::binary_search(vertices_.begin(), vertices_.end(), v);
}

double GeodesicBall::distance(int v) const {
  const auto it = std::lower_bound(vertices_.begin(), vertices_.end(), v);
  if (it == vertices_.end() || *it != v) {
    throw LookupError("vertex " + std::to_string(v) + " is not within the geodesic ball of center " +
                      std::to_string(center_));
  }
  return distances_[it - vertices_.begin()];
}

double GeodesicBall::initial_angle(int v) const { return trace_path(*this, v).departure_angle; }

void GeodesicBall::dump(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    out << vertices_[i] << ' ' << io::format_double(distances_[i]) << '\n';
  }
}

double GeodesicPath::length() const {
  double sum = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) sum += (points[i] - points[i - 1]).norm();
  return sum;
}

double patch_radius(const TriMesh& mesh, int m) {
  if (m <= 0) throw ConfigError("patch count m must be positive");
  return std::sqrt(total_area(mesh) / m);
}

namespace {

void finish_ball(std::vector<std::pair<int, double>> reached, double radius, std::vector<int>& vertices,
                 std::vector<double>& distances) {
  std::erase_if(reached, [radius](const auto& e) { return !(e.second < radius); });
  std::sort(reached.begin(), reached.end());
  vertices.clear();
  distances.clear();
  for (const auto& [v, d] : reached) {
    vertices.push_back(v);
    distances.push_back(d);
  }
}

// Dijkstra over vertices plus `k` evenly spaced Steiner points per edge, with
// straight segments between all points on the boundary of each face.
struct SteinerGraph {
  std::unordered_map<int, double> dist;
  std::unordered_map<int, std::pair<int, Vec3>> pred;
  std::unordered_map<int, Vec3> positions;
};

SteinerGraph steiner_dijkstra(const TriMesh& mesh, int center, double radius, int k) {
  const int nv = mesh.num_vertices();
  // Steiner node id for halfedge h, point i (shared between twins).
  auto node = [&](int h, int i) {
    const int t = mesh.twin(h);
    if (t != kNone && t < h) return nv + t * k + (k - 1 - i);
    return nv + h * k + i;
  };
  auto position = [&](int id) -> Vec3 {
    if (id < nv) return mesh.position(id);
    const int h = (id - nv) / k;
    const int i = (id - nv) % k;
    const double t = double(i + 1) / (k + 1);
    return (1.0 - t) * mesh.position(mesh.from(h)) + t * mesh.position(mesh.to(h));
  };
  // Boundary nodes of a face in order.
  auto face_nodes = [&](int f, std::vector<int>& out) {
    out.clear();
    for (int j = 0; j < 3; ++j) {
      const int h = 3 * f + j;
      out.push_back(mesh.from(h));
      for (int i = 0; i < k; ++i) out.push_back(node(h, i));
    }
  };
  // Faces touching each node.
  auto node_faces = [&](int id, std::vector<int>& out) {
    out.clear();
    if (id < nv) {
      for (int h : mesh.outgoing(id)) out.push_back(TriMesh::face_of(h));
      return;
    }
    const int h = (id - nv) / k;
    out.push_back(TriMesh::face_of(h));
    if (mesh.twin(h) != kNone) out.push_back(TriMesh::face_of(mesh.twin(h)));
  };

  SteinerGraph g;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  g.dist[center] = 0.0;
  g.positions[center] = mesh.position(center);
  pq.push({0.0, center});
  std::vector<int> faces, nodes;
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d >= radius) break;
    if (d != g.dist[u]) continue;
    const Vec3 pu = g.positions[u];
    node_faces(u, faces);
    for (int f : faces) {
      face_nodes(f, nodes);
      for (int v : nodes) {
        if (v == u) continue;
        const Vec3 pv = position(v);
        const double nd = d + (pv - pu).norm();
        auto it = g.dist.find(v);
        if (it == g.dist.end() || nd < it->second) {
          g.dist[v] = nd;
          g.pred[v] = {u, pv};
          g.positions[v] = pv;
          pq.push({nd, v});
        }
      }
    }
  }
  return g;
}

}  // namespace

GeodesicBall geodesic_ball(const TriMesh& mesh, int center, double radius, const GeodesicOptions& options) {
  if (center < 0 || center >= mesh.num_vertices()) {
    throw LookupError("center vertex " + std::to_string(center) + " out of range");
  }
  if (mesh.outgoing(center).empty()) {
    throw TopologyError("center vertex " + std::to_string(center) + " is isolated");
  }
  if (!(radius > 0.0)) throw ConfigError("geodesic radius must be positive");

  GeodesicBall ball;
  ball.mesh_ = &mesh;
  ball.center_ = center;
  ball.radius_ = radius;
  ball.backend_ = options.backend;

  if (options.backend == GeodesicBackend::kExact) {
    detail::WindowPropagation prop(mesh, center, radius, options.prune_tolerance);
    prop.run();
    finish_ball(prop.reached(), radius, ball.vertices_, ball.distances_);
    ball.routing_ = std::make_shared<detail::ExactRouting>(mesh, center, prop.take_windows(),
                                                           prop.take_origins());
  } else {
    const int k = std::max(options.steiner_points, 0);
    SteinerGraph g = steiner_dijkstra(mesh, center, radius, std::max(k, 1));
    std::vector<std::pair<int, double>> vdist;
    for (const auto& [id, d] : g.dist) {
      if (id < mesh.num_vertices()) vdist.emplace_back(id, d);
    }
    finish_ball(std::move(vdist), radius, ball.vertices_, ball.distances_);
    ball.routing_ = std::make_shared<detail::GraphRouting>(center, std::move(g.pred), std::move(g.positions));
  }
  return ball;
}

double ring_angle(const TriMesh& mesh, int center, const Vec3& direction) {
  const Vec3& o = mesh.position(center);
  const auto ring = mesh.outgoing(center);
  double total = 0.0;
  for (int h : ring) total += mesh.corner_angle(h);
  double before = 0.0;
  double best_err = kInf;
  double best = 0.0;
  for (int h : ring) {
    const Vec3 e1 = mesh.position(mesh.to(h)) - o;
    const Vec3 e2 = mesh.position(mesh.opposite(h)) - o;
    const double corner = mesh.corner_angle(h);
    const double a1 = std::atan2(e1.cross(direction).norm(), e1.dot(direction));
    const double a2 = std::atan2(e2.cross(direction).norm(), e2.dot(direction));
    // Inside the corner sector the two angles add up to the corner angle.
    const double err = std::abs(a1 + a2 - corner);
    if (err < best_err - 1e-12) {
      best_err = err;
      best = before + std::min(a1, corner);
    }
    before += corner;
  }
  double angle = best * kTwoPi / total;
  if (angle >= kTwoPi) angle -= kTwoPi;
  if (angle < 0.0) angle += kTwoPi;
  return angle;
}

namespace {

// Edge crossings inside a flat region add no information to the polyline.
std::vector<Vec3> drop_collinear(std::vector<Vec3> pts) {
  if (pts.size() < 3) return pts;
  std::vector<Vec3> out{pts.front()};
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const Vec3& a = out.back();
    const double bent = (pts[i] - a).norm() + (pts[i + 1] - pts[i]).norm() - (pts[i + 1] - a).norm();
    if (bent > 1e-12 * (pts[i + 1] - a).norm()) out.push_back(pts[i]);
  }
  out.push_back(pts.back());
  return out;
}

}  // namespace

GeodesicPath trace_path(const GeodesicBall& ball, int v) {
  if (!ball.contains(v)) {
    throw LookupError("vertex " + std::to_string(v) + " is not within the geodesic ball of center " +
                      std::to_string(ball.center()));
  }
  GeodesicPath path;
  path.points = drop_collinear(ball.routing_->trace(v));
  if (v == ball.center() || path.points.size() < 2) {
    path.departure_angle = 0.0;
    return path;
  }
  const Vec3& c = path.points.back();
  const Vec3 dir = path.points[path.points.size() - 2] - c;
  path.departure_angle = ring_angle(ball.mesh(), ball.center(), dir);
  return path;
}

std::vector<double> edge_graph_distances(const TriMesh& mesh, int center) {
  std::vector<double> dist(mesh.num_vertices(), kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[center] = 0.0;
  pq.push({0.0, center});
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d != dist[u]) continue;
    for (int n : mesh.one_ring(u)) {
      const double nd = d + (mesh.position(n) - mesh.position(u)).norm();
      if (nd < dist[n]) {
        dist[n] = nd;
        pq.push({nd, n});
      }
    }
  }
  return dist;
}

std::vector<double> avg_geodesic_distance(const TriMesh& mesh, int sample_count,
                                          const GeodesicOptions& options) {
  if (sample_count <= 0) throw ConfigError("AGD sample count must be positive");
  const int nv = mesh.num_vertices();
  std::vector<int> component;
  const int components = connected_components(mesh, &component);
  bool isolated = false;
  for (int c : component) isolated = isolated || c == kNone;
  if (components != 1 || isolated) {
    std::vector<int> sizes(components, 0);
    for (int c : component) {
      if (c != kNone) ++sizes[c];
    }
    std::string msg = "AGD requires a connected mesh; found " + std::to_string(components) +
                      " components with vertex counts";
    for (int s : sizes) msg += " " + std::to_string(s);
    if (isolated) msg += " plus isolated vertices";
    throw TopologyError(msg);
  }

  std::vector<double> sum(nv, 0.0);
  std::vector<double> nearest(nv, kInf);
  const bool all_pairs = sample_count >= nv;
  const int count = all_pairs ? nv : sample_count;
  int source = 0;
  for (int i = 0; i < count; ++i) {
    if (all_pairs) source = i;
    const GeodesicBall ball = geodesic_ball(mesh, source, kInf, options);
    if (ball.size() != nv) throw TopologyError("geodesic field did not reach every vertex");
    const auto d = ball.distances();
    for (int v = 0; v < nv; ++v) {
      sum[v] += d[v];
      nearest[v] = std::min(nearest[v], d[v]);
    }
    if (!all_pairs) {
      // Next sample: farthest from the chosen set, lowest id on ties.
      source = static_cast<int>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
    }
  }
  for (double& s : sum) s /= count;
  return sum;
}

}  // namespace patchseg
