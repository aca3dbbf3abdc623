#include "patchseg/rasterize.hpp"

#include <algorithm>
#include <cmath>

#include "patchseg/error.hpp"

namespace patchseg {

namespace {
constexpr double kInside = -1e-12;
constexpr double kTie = 1e-12;
}  // namespace

int GridChart::valid_count() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [](const GridCell& c) { return c.valid; }));
}

Vec2 cell_center(int i, int j, int resolution) {
  const double side = std::sqrt(2.0);
  const double step = side / resolution;
  return {-side / 2 + (i + 0.5) * step, -side / 2 + (j + 0.5) * step};
}

std::array<double, 3> barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  const Vec2 e1 = b - a;
  const Vec2 e2 = c - a;
  const Vec2 d = p - a;
  const double det = e1.x() * e2.y() - e1.y() * e2.x();
  const double l1 = (d.x() * e2.y() - d.y() * e2.x()) / det;
  const double l2 = (e1.x() * d.y() - e1.y() * d.x()) / det;
  const double l0 = 1.0 - l1 - l2;
  return {l0, l1, 1.0 - l0 - l1};
}

GridChart rasterize(const DiskParam& param, const Patch& patch, int resolution) {
  if (resolution <= 0) throw ConfigError("grid resolution must be positive");
  GridChart chart;
  chart.resolution = resolution;
  chart.cells.assign(static_cast<std::size_t>(resolution) * resolution, {});
  std::vector<double> depth(chart.cells.size(), -std::numeric_limits<double>::infinity());

  const TriMesh& local = patch.sub.local;
  const std::vector<Vec2> uv = param.coords();
  const double side = std::sqrt(2.0);
  const double step = side / resolution;
  auto cell_range = [&](double lo, double hi, int& first, int& last) {
    first = std::max(0, static_cast<int>(std::floor((lo + side / 2) / step - 0.5)) - 1);
    last = std::min(resolution - 1, static_cast<int>(std::ceil((hi + side / 2) / step - 0.5)) + 1);
  };

  // Faces in ascending parent id, so a later face must be strictly deeper
  // to take a cell.
  for (int lf = 0; lf < local.num_faces(); ++lf) {
    const Face& t = local.face(lf);
    if (!param.valid[t[0]] || !param.valid[t[1]] || !param.valid[t[2]]) continue;
    const Vec2& a = uv[t[0]];
    const Vec2& b = uv[t[1]];
    const Vec2& c = uv[t[2]];
    const double area2 = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (!(area2 > 0.0)) continue;
    int i0, i1, j0, j1;
    cell_range(std::min({a.x(), b.x(), c.x()}), std::max({a.x(), b.x(), c.x()}), i0, i1);
    cell_range(std::min({a.y(), b.y(), c.y()}), std::max({a.y(), b.y(), c.y()}), j0, j1);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const auto bc = barycentric(cell_center(i, j, resolution), a, b, c);
        const double inner = std::min({bc[0], bc[1], bc[2]});
        if (inner < kInside) continue;
        const std::size_t idx = static_cast<std::size_t>(j) * resolution + i;
        if (inner <= depth[idx] + kTie) continue;
        depth[idx] = inner;
        GridCell& cell = chart.cells[idx];
        cell.face = patch.sub.face_ids[lf];
        for (int k = 0; k < 3; ++k) cell.vertices[k] = patch.sub.vertex_ids[t[k]];
        // Clip the tolerance band so sampling stays a convex combination.
        const double b0 = std::max(bc[0], 0.0), b1 = std::max(bc[1], 0.0), b2 = std::max(bc[2], 0.0);
        const double sum = b0 + b1 + b2;
        cell.bary = {b0 / sum, b1 / sum, b2 / sum};
        cell.valid = true;
      }
    }
  }
  return chart;
}

std::vector<double> sample_features(const GridChart& chart, const Eigen::MatrixXd& vertex_features,
                                    int expected_channels) {
  const int channels = static_cast<int>(vertex_features.cols());
  if (expected_channels >= 0 && channels != expected_channels) {
    throw ConfigError("feature width " + std::to_string(channels) + " does not match the expected " +
                      std::to_string(expected_channels));
  }
  const std::size_t plane = static_cast<std::size_t>(chart.resolution) * chart.resolution;
  std::vector<double> out((channels + 1) * plane, 0.0);
  for (std::size_t idx = 0; idx < plane; ++idx) {
    const GridCell& cell = chart.cells[idx];
    if (!cell.valid) continue;
    for (int v : cell.vertices) {
      if (v < 0 || v >= vertex_features.rows()) {
        throw LookupError("feature matrix has no row for vertex " + std::to_string(v));
      }
    }
    for (int c = 0; c < channels; ++c) {
      out[c * plane + idx] = cell.bary[0] * vertex_features(cell.vertices[0], c) +
                             cell.bary[1] * vertex_features(cell.vertices[1], c) +
                             cell.bary[2] * vertex_features(cell.vertices[2], c);
    }
    out[channels * plane + idx] = 1.0;
  }
  return out;
}

}  // namespace patchseg
