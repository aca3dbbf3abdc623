#pragma once

// Per-vertex grid construction (ball, patch, chart, alignment, sampling) and
// the on-disk dataset: one PGRD container per mesh plus a text manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "patchseg/descriptors.hpp"
#include "patchseg/geodesics.hpp"
#include "patchseg/mesh.hpp"
#include "patchseg/param.hpp"

namespace patchseg {

struct PipelineConfig {
  int patch_count = 1000;  // m in the patch radius sqrt(area / m)
  int resolution = 32;
  DescriptorConfig descriptors;
  FeatureSelection selection;
  int max_retries = 3;        // radius enlargements for a degenerate patch
  double radius_growth = 1.5;
  double skip_budget = 0.01;  // fraction of vertices that may fail per run
  int workers = 0;            // 0: PATCHSEG_WORKERS or hardware concurrency
  uint64_t seed = 0;

  int channels() const { return selection.channels(descriptors.bands) + 1; }  // + mask
  /// Canonical "key value" lines covering every field that changes outputs.
  std::string describe() const;
  uint64_t hash() const;
};

/// Channel names in storage order, mask last.
std::vector<std::string> channel_names(const PipelineConfig& config);

enum RecordFlags : uint32_t {
  kRecordPolar = 1u << 0,
  kRecordAligned = 1u << 1,
  kRecordEnlarged = 1u << 2,  // patch radius was grown to get a usable patch
  kRecordEmpty = 1u << 3,     // no cell of the chart is covered
};

struct FeatureGrid {
  int vertex = kNone;
  int label = kNone;  // kNone when unlabeled
  uint32_t flags = 0;
  std::vector<float> data;  // channel-major, channels x resolution x resolution
};

struct VertexFailure {
  int vertex;
  std::string reason;
};

struct MeshGrids {
  std::vector<FeatureGrid> grids;  // ascending vertex id
  std::vector<VertexFailure> failures;
};

/// Grid for one vertex; throws when the vertex cannot be charted even after
/// enlarging its patch radius.
FeatureGrid build_vertex_grid(const TriMesh& mesh, int vertex, double radius, const FlowField& flow,
                              const Eigen::MatrixXd& features, const PipelineConfig& config);

/// Grids for every vertex of a mesh, computed in parallel. `features` holds
/// normalized descriptors, one row per vertex. Failed vertices are reported,
/// not thrown.
MeshGrids build_mesh_grids(const TriMesh& mesh, const FlowField& flow, const Eigen::MatrixXd& features,
                           const PipelineConfig& config);
/// Same for the vertex range [first, first + count).
MeshGrids build_mesh_grids(const TriMesh& mesh, const FlowField& flow, const Eigen::MatrixXd& features,
                           const PipelineConfig& config, int first, int count);

// ---------------------------------------------------------------------------
// PGRD container

inline constexpr uint32_t kGridFormatVersion = 1;
inline constexpr std::size_t kGridHeaderSize = 64;

struct GridFileHeader {
  uint32_t version = kGridFormatVersion;
  uint32_t resolution = 0;
  uint32_t channels = 0;
  uint64_t record_count = 0;
  bool has_labels = false;
  uint64_t config_hash = 0;
  uint64_t index_offset = 0;
};

void write_grid_file(const std::filesystem::path& path, const GridFileHeader& header,
                     const std::vector<FeatureGrid>& grids);

/// Random access to the records of one container.
class GridFile {
 public:
  explicit GridFile(const std::filesystem::path& path);

  const GridFileHeader& header() const { return header_; }
  int size() const { return static_cast<int>(index_.size()); }
  int vertex(int record) const { return index_[record].vertex; }
  int label(int record) const { return index_[record].label; }
  uint32_t flags(int record) const { return index_[record].flags; }
  /// Reads one record; safe to call from several threads.
  FeatureGrid read(int record) const;
  std::vector<FeatureGrid> read_all() const;

 private:
  struct Entry {
    int vertex;
    int label;
    uint32_t flags;
    uint64_t offset;
  };
  std::filesystem::path path_;
  GridFileHeader header_;
  std::vector<Entry> index_;
};

// ---------------------------------------------------------------------------
// Dataset manifest

struct ManifestMesh {
  std::string id;
  std::string grid_file;  // relative to the manifest directory
  int records = 0;
  int skipped = 0;
};

struct DatasetManifest {
  int resolution = 32;
  int channels = 0;
  std::vector<std::string> channel_order;
  std::string stats_file;
  std::string config_hash;
  uint64_t seed = 0;
  std::string config;  // resolved pipeline config, one "key value" per line
  std::vector<ManifestMesh> meshes;
  std::array<long, kLabelCount> label_counts{};

  long record_count() const;
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Manifest plus its containers, addressed by a global record id that runs
/// through the meshes in manifest order.
class Dataset {
 public:
  explicit Dataset(const std::filesystem::path& manifest_path);

  const DatasetManifest& manifest() const { return manifest_; }
  long size() const { return static_cast<long>(labels_.size()); }
  int label(long record) const { return labels_[record]; }
  const std::vector<int>& labels() const { return labels_; }
  FeatureGrid read(long record) const;
  int record_size() const { return manifest_.channels * manifest_.resolution * manifest_.resolution; }

 private:
  DatasetManifest manifest_;
  std::vector<GridFile> files_;
  std::vector<long> first_record_;
  std::vector<int> labels_;
};

/// One balanced epoch: `per_label` ids for each label (without replacement
/// when enough records exist, with replacement otherwise), shuffled.
std::vector<long> balanced_epoch_sampler(const std::vector<int>& labels, int per_label, uint64_t seed,
                                         int epoch = 0, int label_count = kLabelCount);

}  // namespace patchseg
