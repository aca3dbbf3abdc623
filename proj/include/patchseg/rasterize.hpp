#pragma once

// Square cell grid inscribed in the unit disk, with per-cell triangle lookup
// for barycentric feature sampling.

#include <array>
#include <vector>

#include <Eigen/Core>

#include "patchseg/param.hpp"

namespace patchseg {

struct GridCell {
  int face = kNone;                          // parent face id
  std::array<int, 3> vertices{kNone, kNone, kNone};  // parent vertex ids of the face
  std::array<double, 3> bary{0.0, 0.0, 0.0};
  bool valid = false;
};

/// Cells are row-major: cell (i, j) has index j * resolution + i, with i
/// running along the polar axis and j along the pi/2 direction.
struct GridChart {
  int resolution = 32;
  std::vector<GridCell> cells;
  int valid_count() const;
};

/// Center of cell (i, j) in disk coordinates. The grid side is sqrt(2), so
/// the unit disk is its circumcircle.
Vec2 cell_center(int i, int j, int resolution);

/// Barycentric coordinates of `p` in triangle (a, b, c); the last is formed
/// as 1 - b0 - b1.
std::array<double, 3> barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);

/// Locates each cell center in the chart's triangles. Where images overlap,
/// the triangle holding the center most deeply wins, ties going to the lowest
/// face id. Flipped triangles are never used.
GridChart rasterize(const DiskParam& param, const Patch& patch, int resolution = 32);

/// Channel-major grid of interpolated features plus a trailing validity mask:
/// value (c, j, i) sits at index (c * resolution + j) * resolution + i.
/// `vertex_features` has one row per parent vertex; a non-negative
/// `expected_channels` is checked against its width.
std::vector<double> sample_features(const GridChart& chart, const Eigen::MatrixXd& vertex_features,
                                    int expected_channels = -1);

}  // namespace patchseg
