#pragma once

// The batch commands behind the patchseg executable: run configuration,
// corpus discovery and the preprocess / train / predict / evaluate /
// export-charts stages. Each stage writes a run manifest holding the fully
// resolved configuration next to its outputs.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "patchseg/classifier.hpp"
#include "patchseg/evaluation.hpp"
#include "patchseg/features.hpp"

namespace patchseg {

struct RunPaths {
  std::filesystem::path meshes;        // training meshes
  std::filesystem::path labels;        // <stem>.labels for training meshes; empty: same as meshes
  std::filesystem::path test_meshes;   // meshes to predict
  std::filesystem::path test_labels;   // ground truth for evaluate; empty: same as test_meshes
  std::filesystem::path output = "patchseg_out";

  // Derived from `output` unless set.
  std::filesystem::path dataset;       // output/dataset
  std::filesystem::path model;         // output/model.pgmd
  std::filesystem::path predictions;   // output/predictions
};

struct RunConfig {
  RunPaths paths;
  PipelineConfig pipeline;
  ClassifierConfig train;
  uint64_t seed = 0;

  std::filesystem::path dataset_dir() const;
  std::filesystem::path model_path() const;
  std::filesystem::path predictions_dir() const;
  std::filesystem::path labels_dir() const;
  std::filesystem::path test_labels_dir() const;

  /// Applies one "section.key" setting; throws ConfigError for unknown keys
  /// and unparsable values. "seed" also seeds the pipeline and training.
  void set(const std::string& key, const std::string& value);
  /// Range checks for every numeric field; throws ConfigError.
  void validate() const;
  /// Every setting as "key = value" lines, in a fixed order. Feeding this back
  /// through parse_run_config reproduces the configuration.
  std::string describe() const;
};

/// Flat "key = value" text, '#' starts a comment.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

struct CorpusMesh {
  std::string id;  // file stem
  std::filesystem::path mesh;
  std::filesystem::path labels;     // empty when not found
  std::filesystem::path landmarks;  // empty when not found
};

/// Meshes (.off, .obj, .ply) in `mesh_dir`, sorted by id. Labels and landmarks
/// are looked up as <id>.labels and <id>.landmarks in `label_dir`, then in
/// `mesh_dir`. With `require_labels` a missing label file is a ConfigError
/// naming the mesh.
std::vector<CorpusMesh> discover_meshes(const std::filesystem::path& mesh_dir, const std::filesystem::path& label_dir,
                                        bool require_labels);

/// Normalized descriptor rows of one mesh, kept in memory for baselines.
struct MeshFeatures {
  std::string id;
  Eigen::MatrixXd features;  // vertices x selected channels
  std::vector<int> labels;   // empty when unlabeled
};

struct PreprocessSummary {
  long vertices = 0;
  long records = 0;
  long skipped = 0;
  double seconds = 0.0;
  std::vector<MeshFeatures> meshes;
};

/// Descriptors, train-set normalization stats, flow fields and grids for
/// every training mesh. Writes one PGRD container per mesh, stats.txt and
/// manifest.txt into the dataset directory. Fails when the skipped-vertex
/// fraction exceeds the skip budget.
PreprocessSummary cmd_preprocess(const RunConfig& config);

/// Trains on the preprocessed dataset and writes the model plus
/// train_report.txt.
TrainReport cmd_train(const RunConfig& config);

struct PredictSummary {
  std::vector<SegmentationResult> results;
  std::vector<MeshFeatures> meshes;
  long filled = 0;  // vertices labeled from their nearest neighbour
  double seconds = 0.0;
};

/// Labels every vertex of every test mesh. Writes <id>.vlabels, <id>.flabels,
/// <id>.ply (colored) and <id>.meta into the predictions directory. Refuses
/// stats or a model produced under a different pipeline config.
PredictSummary cmd_predict(const RunConfig& config);

/// Scores the face labels in the predictions directory against the ground
/// truth of the test meshes and writes report.txt.
AccuracyReport cmd_evaluate(const RunConfig& config);

/// Chart and grid dumps for selected vertices of one mesh.
void cmd_export_charts(const RunConfig& config, const std::filesystem::path& mesh, const std::vector<int>& vertices,
                       const std::filesystem::path& out_dir);

/// Writes run_<command>.txt into `dir`: the command and the resolved config.
void write_run_manifest(const RunConfig& config, const std::string& command, const std::filesystem::path& dir);

/// Label of the nearest training row (squared Euclidean, lowest index on
/// ties) for each query row.
std::vector<int> nearest_neighbor_labels(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                                         const Eigen::MatrixXd& query);

}  // namespace patchseg
