#include <fstream>
#include <sstream>

#include "doctest.h"
#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"
#include "patchseg/log.hpp"
#include "patchseg/pipeline.hpp"
#include "test_util.hpp"

using namespace patchseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

RunConfig small_config(const fs::path& root) {
  RunConfig c = parse_run_config(
      "pipeline.resolution = 8\n"
      "descriptors.agd_samples = 16\n"
      "train.architecture = fc:32,relu,fc:8\n"
      "train.epochs = 1\n"
      "train.per_label = 50\n"
      "train.lr_start = 0.05\n"
      "train.lr_end = 0.005\n"
      "seed = 11\n");
  c.paths.output = root / "out";
  return c;
}

// Eight spheres of growing radius, every vertex of sphere k labeled k. The
// AGD channel alone tells them apart.
void write_spheres(const fs::path& dir) {
  fs::create_directories(dir);
  for (int k = 0; k < kLabelCount; ++k) {
    const TriMesh m = shapes::icosphere(2, 0.5 + 0.25 * k);
    const std::string id = "sphere_" + std::to_string(k);
    save_mesh(m, dir / (id + ".off"), MeshFormat::kOff);
    save_labels(std::vector<int>(m.num_vertices(), k), dir / (id + ".labels"));
  }
}

}  // namespace

TEST_CASE("run config text round trip") {
  log::set_level(log::Level::kWarn);
  const RunConfig c = parse_run_config(
      "# comment\n"
      "paths.meshes = /data/train   # trailing comment\n"
      "pipeline.patch_count = 500\n"
      "descriptors.bands = 20\n"
      "geodesic.backend = dijkstra\n"
      "train.schedule = step\n"
      "train.lr_end = 1e-6\n"
      "seed = 42\n");
  CHECK(c.paths.meshes == "/data/train");
  CHECK(c.pipeline.patch_count == 500);
  CHECK(c.pipeline.descriptors.bands == 20);
  CHECK(c.pipeline.descriptors.geodesic.backend == GeodesicBackend::kSubdividedDijkstra);
  CHECK(c.train.schedule == LrSchedule::kStep);
  CHECK(c.seed == 42);
  CHECK(c.pipeline.seed == 42);
  CHECK(c.train.seed == 42);
  CHECK(c.labels_dir() == "/data/train");
  CHECK(c.dataset_dir() == fs::path("patchseg_out") / "dataset");

  const RunConfig back = parse_run_config(c.describe());
  CHECK(back.describe() == c.describe());
  CHECK(back.pipeline.hash() == c.pipeline.hash());
}

TEST_CASE("run config rejects bad input") {
  CHECK(error_of([] { parse_run_config("pipeline.nonsense = 3\n", "x.cfg"); }).find("x.cfg:1") !=
        std::string::npos);
  CHECK(error_of([] { parse_run_config("pipeline.nonsense = 3\n"); }).find("pipeline.nonsense") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_run_config("pipeline.resolution = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("geodesic.backend = magic\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("pipeline.features = wks,si-hks\n"), ConfigError);

  RunConfig c;
  c.set("train.lr_start", "1e-5");
  c.set("train.lr_end", "1e-3");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.set("pipeline.resolution", "1");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.set("pipeline.skip_budget", "1.5");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());
}

TEST_CASE("corpus discovery") {
  const fs::path root = testutil::temp_dir("discover");
  write_spheres(root / "m");
  fs::create_directories(root / "l");
  fs::rename(root / "m" / "sphere_3.labels", root / "l" / "sphere_3.labels");
  std::ofstream(root / "m" / "notes.txt") << "not a mesh\n";

  const auto corpus = discover_meshes(root / "m", root / "l", true);
  REQUIRE(corpus.size() == 8);
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(corpus[i].id == "sphere_" + std::to_string(i));
  CHECK(corpus[3].labels == root / "l" / "sphere_3.labels");
  CHECK(corpus[2].labels == root / "m" / "sphere_2.labels");
  CHECK(corpus[0].landmarks.empty());

  fs::remove(root / "l" / "sphere_3.labels");
  const std::string msg = error_of([&] { discover_meshes(root / "m", root / "l", true); });
  CHECK(msg.find("sphere_3") != std::string::npos);
  CHECK(discover_meshes(root / "m", root / "l", false)[3].labels.empty());
  CHECK_THROWS_AS(discover_meshes(root / "absent", {}, false), ConfigError);
}

TEST_CASE("preprocess counts records and is repeatable") {
  const fs::path root = testutil::temp_dir("preprocess");
  testutil::write_figures(root / "train", {1, 2}, 0.16, 1.8);
  RunConfig c = small_config(root);
  c.paths.meshes = root / "train";

  const auto summary = cmd_preprocess(c);
  const DatasetManifest manifest = read_manifest(c.dataset_dir() / "manifest.txt");
  long vertices = 0;
  for (const auto& entry : discover_meshes(c.paths.meshes, {}, true)) vertices += load_mesh(entry.mesh).num_vertices();
  CHECK(summary.vertices == vertices);
  CHECK(manifest.record_count() == summary.vertices - summary.skipped);
  CHECK(manifest.record_count() == summary.records);
  CHECK(summary.skipped <= c.pipeline.skip_budget * summary.vertices);
  CHECK(manifest.channels == 32);
  CHECK(manifest.config_hash == io::hex64(c.pipeline.hash()));
  CHECK(load_stats(c.dataset_dir() / "stats.txt").config_hash == manifest.config_hash);
  CHECK(fs::exists(c.dataset_dir() / "run_preprocess.txt"));
  REQUIRE(summary.meshes.size() == 2);
  CHECK(summary.meshes[0].features.cols() == 31);
  CHECK(summary.meshes[0].features.minCoeff() >= 0.0);
  CHECK(summary.meshes[0].features.maxCoeff() <= 1.0);

  // The run manifest alone reproduces the outputs.
  RunConfig again = load_run_config(c.dataset_dir() / "run_preprocess.txt");
  again.paths.dataset = root / "again";
  cmd_preprocess(again);
  CHECK(slurp(root / "again" / "manifest.txt") == slurp(c.dataset_dir() / "manifest.txt"));
  CHECK(slurp(root / "again" / "stats.txt") == slurp(c.dataset_dir() / "stats.txt"));
  for (const auto& m : manifest.meshes) {
    CHECK(slurp(root / "again" / m.grid_file) == slurp(c.dataset_dir() / m.grid_file));
  }

  RunConfig strict = c;
  strict.pipeline.skip_budget = 0.0;
  strict.paths.dataset = root / "strict";
  if (summary.skipped > 0) {
    CHECK(error_of([&] { cmd_preprocess(strict); }).find("budget") != std::string::npos);
    CHECK_FALSE(fs::exists(root / "strict" / "manifest.txt"));
  }

  fs::remove(root / "train" / "figure_002.labels");
  const std::string msg = error_of([&] { cmd_preprocess(c); });
  CHECK(msg.find("figure_002") != std::string::npos);
}

TEST_CASE("train, predict and evaluate a separable corpus") {
  const fs::path root = testutil::temp_dir("separable");
  write_spheres(root / "spheres");
  RunConfig c = small_config(root);
  c.paths.meshes = root / "spheres";
  c.paths.test_meshes = root / "spheres";
  c.pipeline.patch_count = 100;

  CHECK(error_of([&] { cmd_predict(c); }).find("run preprocess") != std::string::npos);
  cmd_preprocess(c);

  // One-epoch smoke run leaves a loadable model.
  const TrainReport smoke = cmd_train(c);
  CHECK(smoke.epochs.size() == 1);
  CHECK_NOTHROW(load_model(c.model_path()));
  CHECK(fs::exists(c.paths.output / "train_report.txt"));

  RunConfig bad_lr = c;
  bad_lr.train.lr_end = 0.5;
  CHECK_THROWS_AS(cmd_train(bad_lr), ConfigError);

  c.train.epochs = 30;
  const TrainReport report = cmd_train(c);
  CHECK(report.epochs.back().accuracy == 1.0);

  const PredictSummary pred = cmd_predict(c);
  CHECK(pred.results.size() == 8);
  CHECK(pred.filled == 0);
  const AccuracyReport acc = cmd_evaluate(c);
  CHECK(acc.accuracy == 1.0);
  CHECK(fs::exists(c.predictions_dir() / "report.txt"));
  CHECK(fs::exists(c.predictions_dir() / "sphere_0.ply"));

  // Prediction files copied in another order score the same.
  const fs::path shuffled = root / "shuffled";
  fs::create_directories(shuffled);
  for (int k : {5, 2, 7, 0, 3, 6, 1, 4}) {
    const std::string f = "sphere_" + std::to_string(k) + ".flabels";
    fs::copy_file(c.predictions_dir() / f, shuffled / f);
  }
  RunConfig permuted = c;
  permuted.paths.predictions = shuffled;
  CHECK(cmd_evaluate(permuted).accuracy == acc.accuracy);

  // Stats and model from another pipeline config are refused.
  RunConfig other = c;
  other.pipeline.descriptors.bands = 20;
  CHECK(error_of([&] { cmd_predict(other); }).find("stats") != std::string::npos);

  fs::remove(c.predictions_dir() / "sphere_4.flabels");
  CHECK(error_of([&] { cmd_evaluate(c); }).find("sphere_4") != std::string::npos);
}

TEST_CASE("chart export") {
  const fs::path root = testutil::temp_dir("charts");
  const TriMesh m = shapes::icosphere(2);
  save_mesh(m, root / "ball.off", MeshFormat::kOff);
  RunConfig c;
  c.paths.output = root / "out";
  c.pipeline.patch_count = 100;
  cmd_export_charts(c, root / "ball.off", {0, 5}, root / "charts");
  CHECK(fs::exists(root / "charts" / "chart_0.txt"));
  CHECK(fs::exists(root / "charts" / "chart_5.txt"));
  CHECK_FALSE(fs::exists(root / "charts" / "grid_0.txt"));
  CHECK_THROWS_AS(cmd_export_charts(c, root / "ball.off", {9999}, root / "charts"), LookupError);
}

TEST_CASE("nearest neighbour baseline") {
  Eigen::MatrixXd train(4, 2);
  train << 0, 0, 1, 0, 0, 1, 1, 0;  // rows 1 and 3 coincide
  const std::vector<int> labels = {0, 1, 2, 3};
  Eigen::MatrixXd query(3, 2);
  query << 0.1, 0.1, 0.9, 0.1, 0.2, 0.8;
  CHECK(nearest_neighbor_labels(train, labels, query) == std::vector<int>{0, 1, 2});
  CHECK(nearest_neighbor_labels(train, labels, train) == std::vector<int>{0, 1, 2, 1});
  CHECK_THROWS_AS(nearest_neighbor_labels(train, {0, 1}, query), ConfigError);
}
