#pragma once

// Per-vertex shape descriptors: wave kernel signature, four curvature
// channels, and average geodesic distance, with collection-wide min-max
// normalization.

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "patchseg/geodesics.hpp"
#include "patchseg/mesh.hpp"

namespace patchseg {

/// Stiffness (cotangent) and lumped-mass generalized eigenpairs, ascending.
/// Eigenvectors are mass-orthonormal.
struct SpectralBasis {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // vertices x K
  Eigen::VectorXd mass;
};

/// Meshes up to this many vertices use a dense solver; larger ones use
/// shift-invert Lanczos.
inline constexpr int kDenseEigenLimit = 600;

/// Sparse cotangent stiffness matrix (positive semidefinite).
Eigen::SparseMatrix<double> cotangent_stiffness(const TriMesh& mesh);
/// One third of the incident face area per vertex.
Eigen::VectorXd lumped_mass(const TriMesh& mesh);

/// The K smallest eigenpairs. Throws SolverError on non-convergence.
SpectralBasis eigenbasis(const TriMesh& mesh, int k);

/// Wave kernel signature at `bands` log-energies spanning
/// [log lambda_1, log lambda_{K-1}]; the zero mode is left out.
Eigen::MatrixXd wks(const SpectralBasis& basis, int bands = 26);

/// Columns: minimal, maximal, mean, Gaussian curvature.
Eigen::MatrixXd curvatures(const TriMesh& mesh);
/// Voronoi-safe mixed area per vertex (the curvature integration domains).
Eigen::VectorXd mixed_areas(const TriMesh& mesh);

enum class Family { kWks = 0, kCurvature = 1, kAgd = 2 };
inline constexpr int kFamilyCount = 3;
const char* to_string(Family family);

/// Which descriptor families feed the grids.
struct FeatureSelection {
  bool wks = true;
  bool curvature = true;
  bool agd = true;

  int channels(int bands = 26) const { return (wks ? bands : 0) + (curvature ? 4 : 0) + (agd ? 1 : 0); }
  std::string to_string() const;
};

/// Comma-separated family names ("wks,curvature,agd"). Rejects SI-HKS.
FeatureSelection parse_feature_selection(std::string_view text);

struct DescriptorConfig {
  int eigenpairs = 100;  // clipped to vertex count - 1
  int bands = 26;
  int agd_samples = 100;
  GeodesicOptions geodesic;
};

struct DescriptorSet {
  Eigen::MatrixXd wks;        // vertices x bands
  Eigen::MatrixXd curvature;  // vertices x 4
  Eigen::VectorXd agd;

  int vertex_count() const { return static_cast<int>(agd.size()); }
  /// Selected families side by side, in the fixed order WKS, curvatures, AGD.
  Eigen::MatrixXd matrix(const FeatureSelection& selection = {}) const;
};

DescriptorSet compute_descriptors(const TriMesh& mesh, const DescriptorConfig& config);

struct NormalizationStats {
  std::array<double, kFamilyCount> min{};
  std::array<double, kFamilyCount> max{};
  std::string config_hash;  // producing pipeline config; empty when unknown
};

/// Family-wise min and max over every entry of every set.
NormalizationStats compute_stats(const std::vector<const DescriptorSet*>& sets);

/// Maps each family through (x - min) / (max - min), or to 0.5 when the range
/// is empty. Results are clamped to [-0.5, 1.5]; returns how many entries
/// needed clamping.
int normalize(DescriptorSet& set, const NormalizationStats& stats);

/// Text file, one "family min max" line per family plus an optional
/// "config_hash <hex>" line.
void save_stats(const NormalizationStats& stats, const std::filesystem::path& path);
NormalizationStats load_stats(const std::filesystem::path& path);

}  // namespace patchseg
