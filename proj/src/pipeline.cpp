#include "patchseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"
#include "patchseg/log.hpp"
#include "patchseg/parallel.hpp"

namespace fs = std::filesystem;

namespace patchseg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", s);
  return buf;
}

// Rethrows the active exception with `context` prepended, keeping its type.
[[noreturn]] void rethrow_with(const std::string& context) {
  try {
    throw;
  } catch (const LoadError& e) {
    throw LoadError(context + ": " + e.what());
  } catch (const TopologyError& e) {
    throw TopologyError(context + ": " + e.what());
  } catch (const SolverError& e) {
    throw SolverError(context + ": " + e.what());
  } catch (const LookupError& e) {
    throw LookupError(context + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(context + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(context + ": " + e.what());
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    const long long v = io::parse_int(value, key);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) throw FormatError("range");
    return static_cast<int>(v);
  } catch (const FormatError&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    return io::parse_double(value, key);
  } catch (const FormatError&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw ConfigError(key + ": value '" + value + "' out of range");
  }
}

void require_dir(const fs::path& p, const std::string& key) {
  if (p.empty()) throw ConfigError(key + " is not set");
  if (!fs::is_directory(p)) throw ConfigError(key + ": directory " + p.string() + " does not exist");
}

bool is_mesh_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".off" || ext == ".obj" || ext == ".ply";
}

std::string data_hash(const RunConfig& config) { return io::hex64(config.pipeline.hash()); }

Landmarks landmarks_for(const CorpusMesh& entry, const TriMesh& mesh) {
  if (!entry.landmarks.empty()) return load_landmarks(entry.landmarks, mesh.num_vertices());
  return default_landmarks(mesh);
}

NormalizationStats checked_stats(const RunConfig& config) {
  const fs::path path = config.dataset_dir() / "stats.txt";
  if (!fs::exists(path)) {
    throw ConfigError("normalization stats not found at " + path.string() + "; run preprocess first");
  }
  NormalizationStats stats = load_stats(path);
  if (stats.config_hash != data_hash(config)) {
    throw ConfigError("normalization stats at " + path.string() + " were produced under pipeline config " +
                      (stats.config_hash.empty() ? std::string("<unknown>") : stats.config_hash) +
                      ", current config is " + data_hash(config));
  }
  return stats;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

int argmax_row(const Batch<float>& probs, int row) {
  int best = 0;
  for (int c = 1; c < probs.cols(); ++c) {
    if (probs(row, c) > probs(row, best)) best = c;
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

fs::path RunConfig::dataset_dir() const { return paths.dataset.empty() ? paths.output / "dataset" : paths.dataset; }
fs::path RunConfig::model_path() const { return paths.model.empty() ? paths.output / "model.pgmd" : paths.model; }
fs::path RunConfig::predictions_dir() const {
  return paths.predictions.empty() ? paths.output / "predictions" : paths.predictions;
}
fs::path RunConfig::labels_dir() const { return paths.labels.empty() ? paths.meshes : paths.labels; }
fs::path RunConfig::test_labels_dir() const { return paths.test_labels.empty() ? paths.test_meshes : paths.test_labels; }

void RunConfig::set(const std::string& key, const std::string& value) {
  auto& d = pipeline.descriptors;
  if (key == "paths.meshes") {
    paths.meshes = value;
  } else if (key == "paths.labels") {
    paths.labels = value;
  } else if (key == "paths.test_meshes") {
    paths.test_meshes = value;
  } else if (key == "paths.test_labels") {
    paths.test_labels = value;
  } else if (key == "paths.output") {
    paths.output = value;
  } else if (key == "paths.dataset") {
    paths.dataset = value;
  } else if (key == "paths.model") {
    paths.model = value;
  } else if (key == "paths.predictions") {
    paths.predictions = value;
  } else if (key == "pipeline.patch_count") {
    pipeline.patch_count = to_int(key, value);
  } else if (key == "pipeline.resolution") {
    pipeline.resolution = to_int(key, value);
  } else if (key == "pipeline.features") {
    try {
      pipeline.selection = parse_feature_selection(value);
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  } else if (key == "pipeline.max_retries") {
    pipeline.max_retries = to_int(key, value);
  } else if (key == "pipeline.radius_growth") {
    pipeline.radius_growth = to_double(key, value);
  } else if (key == "pipeline.skip_budget") {
    pipeline.skip_budget = to_double(key, value);
  } else if (key == "pipeline.workers") {
    pipeline.workers = to_int(key, value);
  } else if (key == "descriptors.eigenpairs") {
    d.eigenpairs = to_int(key, value);
  } else if (key == "descriptors.bands") {
    d.bands = to_int(key, value);
  } else if (key == "descriptors.agd_samples") {
    d.agd_samples = to_int(key, value);
  } else if (key == "geodesic.backend") {
    d.geodesic.backend = parse_geodesic_backend(value);
  } else if (key == "geodesic.prune_tolerance") {
    d.geodesic.prune_tolerance = to_double(key, value);
  } else if (key == "geodesic.steiner_points") {
    d.geodesic.steiner_points = to_int(key, value);
  } else if (key == "train.architecture") {
    train.architecture = value;
  } else if (key == "train.epochs") {
    train.epochs = to_int(key, value);
  } else if (key == "train.batch_size") {
    train.batch_size = to_int(key, value);
  } else if (key == "train.lr_start") {
    train.lr_start = to_double(key, value);
  } else if (key == "train.lr_end") {
    train.lr_end = to_double(key, value);
  } else if (key == "train.schedule") {
    if (value == "log-uniform") {
      train.schedule = LrSchedule::kLogUniform;
    } else if (value == "step") {
      train.schedule = LrSchedule::kStep;
    } else {
      throw ConfigError(key + ": expected log-uniform or step, got '" + value + "'");
    }
  } else if (key == "train.step_every") {
    train.step_every = to_int(key, value);
  } else if (key == "train.step_factor") {
    train.step_factor = to_double(key, value);
  } else if (key == "train.momentum") {
    train.momentum = to_double(key, value);
  } else if (key == "train.per_label") {
    train.per_label = to_int(key, value);
  } else if (key == "train.checkpoint_every") {
    train.checkpoint_every = to_int(key, value);
  } else if (key == "seed") {
    seed = to_u64(key, value);
    pipeline.seed = seed;
    train.seed = seed;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::validate() const {
  auto range = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  const auto& d = pipeline.descriptors;
  range(pipeline.patch_count >= 1, "pipeline.patch_count must be at least 1");
  range(pipeline.resolution >= 2 && pipeline.resolution <= 512, "pipeline.resolution must lie in [2, 512]");
  range(pipeline.selection.channels(d.bands) >= 1, "pipeline.features selects no channel");
  range(pipeline.max_retries >= 0 && pipeline.max_retries <= 16, "pipeline.max_retries must lie in [0, 16]");
  range(pipeline.radius_growth > 1.0 && pipeline.radius_growth <= 10.0, "pipeline.radius_growth must lie in (1, 10]");
  range(pipeline.skip_budget >= 0.0 && pipeline.skip_budget <= 1.0, "pipeline.skip_budget must lie in [0, 1]");
  range(pipeline.workers >= 0, "pipeline.workers must be non-negative");
  range(d.eigenpairs >= 3 && d.eigenpairs <= 2000, "descriptors.eigenpairs must lie in [3, 2000]");
  range(d.bands >= 1 && d.bands <= 1000, "descriptors.bands must lie in [1, 1000]");
  range(d.agd_samples >= 1, "descriptors.agd_samples must be at least 1");
  range(d.geodesic.prune_tolerance >= 0.0 && d.geodesic.prune_tolerance < 1e-3,
        "geodesic.prune_tolerance must lie in [0, 1e-3)");
  range(d.geodesic.steiner_points >= 0 && d.geodesic.steiner_points <= 64,
        "geodesic.steiner_points must lie in [0, 64]");
  train.validate();
}

std::string RunConfig::describe() const {
  std::ostringstream out;
  const auto& d = pipeline.descriptors;
  out << "paths.meshes = " << paths.meshes.string() << '\n'
      << "paths.labels = " << paths.labels.string() << '\n'
      << "paths.test_meshes = " << paths.test_meshes.string() << '\n'
      << "paths.test_labels = " << paths.test_labels.string() << '\n'
      << "paths.output = " << paths.output.string() << '\n'
      << "paths.dataset = " << paths.dataset.string() << '\n'
      << "paths.model = " << paths.model.string() << '\n'
      << "paths.predictions = " << paths.predictions.string() << '\n'
      << "pipeline.patch_count = " << pipeline.patch_count << '\n'
      << "pipeline.resolution = " << pipeline.resolution << '\n'
      << "pipeline.features = " << pipeline.selection.to_string() << '\n'
      << "pipeline.max_retries = " << pipeline.max_retries << '\n'
      << "pipeline.radius_growth = " << io::format_double(pipeline.radius_growth) << '\n'
      << "pipeline.skip_budget = " << io::format_double(pipeline.skip_budget) << '\n'
      << "pipeline.workers = " << pipeline.workers << '\n'
      << "descriptors.eigenpairs = " << d.eigenpairs << '\n'
      << "descriptors.bands = " << d.bands << '\n'
      << "descriptors.agd_samples = " << d.agd_samples << '\n'
      << "geodesic.backend = " << to_string(d.geodesic.backend) << '\n'
      << "geodesic.prune_tolerance = " << io::format_double(d.geodesic.prune_tolerance) << '\n'
      << "geodesic.steiner_points = " << d.geodesic.steiner_points << '\n'
      << "train.architecture = " << train.architecture << '\n'
      << "train.epochs = " << train.epochs << '\n'
      << "train.batch_size = " << train.batch_size << '\n'
      << "train.lr_start = " << io::format_double(train.lr_start) << '\n'
      << "train.lr_end = " << io::format_double(train.lr_end) << '\n'
      << "train.schedule = " << (train.schedule == LrSchedule::kStep ? "step" : "log-uniform") << '\n'
      << "train.step_every = " << train.step_every << '\n'
      << "train.step_factor = " << io::format_double(train.step_factor) << '\n'
      << "train.momentum = " << io::format_double(train.momentum) << '\n'
      << "train.per_label = " << train.per_label << '\n'
      << "train.checkpoint_every = " << train.checkpoint_every << '\n'
      << "seed = " << seed << '\n';
  return out.str();
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body(io::trim(std::string_view(line).substr(0, hash)));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(io::trim(std::string_view(body).substr(0, eq)));
    const std::string value(io::trim(std::string_view(body).substr(eq + 1)));
    try {
      config.set(key, value);
    } catch (const Error& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

void write_run_manifest(const RunConfig& config, const std::string& command, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream out;
  out << "# patchseg run manifest\n"
      << "# command: " << command << '\n'
      << "# pipeline config hash: " << data_hash(config) << '\n'
      << config.describe();
  write_text(dir / ("run_" + command + ".txt"), out.str());
}

// ---------------------------------------------------------------------------
// Corpus

std::vector<CorpusMesh> discover_meshes(const fs::path& mesh_dir, const fs::path& label_dir, bool require_labels) {
  if (!fs::is_directory(mesh_dir)) throw ConfigError("mesh directory " + mesh_dir.string() + " does not exist");
  std::vector<CorpusMesh> out;
  for (const auto& entry : fs::directory_iterator(mesh_dir)) {
    if (!entry.is_regular_file() || !is_mesh_file(entry.path())) continue;
    CorpusMesh m;
    m.id = entry.path().stem().string();
    m.mesh = entry.path();
    out.push_back(m);
  }
  std::sort(out.begin(), out.end(), [](const CorpusMesh& a, const CorpusMesh& b) {
    return a.id != b.id ? a.id < b.id : a.mesh < b.mesh;
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].id == out[i - 1].id) {
      throw ConfigError("mesh id " + out[i].id + " is ambiguous: " + out[i - 1].mesh.string() + " and " +
                        out[i].mesh.string());
    }
  }
  const fs::path labels = label_dir.empty() ? mesh_dir : label_dir;
  for (CorpusMesh& m : out) {
    for (const fs::path& dir : {labels, mesh_dir}) {
      if (m.labels.empty() && fs::exists(dir / (m.id + ".labels"))) m.labels = dir / (m.id + ".labels");
      if (m.landmarks.empty() && fs::exists(dir / (m.id + ".landmarks"))) m.landmarks = dir / (m.id + ".landmarks");
    }
    if (require_labels && m.labels.empty()) {
      throw ConfigError("mesh " + m.id + ": missing label file " + (labels / (m.id + ".labels")).string());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// preprocess

PreprocessSummary cmd_preprocess(const RunConfig& config) {
  const auto start = Clock::now();
  config.validate();
  require_dir(config.paths.meshes, "paths.meshes");
  const auto corpus = discover_meshes(config.paths.meshes, config.labels_dir(), true);
  if (corpus.empty()) throw ConfigError("no meshes found in " + config.paths.meshes.string());

  const fs::path out_dir = config.dataset_dir();
  fs::create_directories(out_dir);
  write_run_manifest(config, "preprocess", out_dir);
  const PipelineConfig& pc = config.pipeline;
  const int n = static_cast<int>(corpus.size());

  std::vector<TriMesh> meshes(n);
  std::vector<DescriptorSet> sets(n);
  parallel_for(n, resolve_workers(pc.workers), [&](int i) {
    const auto t0 = Clock::now();
    try {
      meshes[i] = load_mesh(corpus[i].mesh);
      meshes[i].set_labels(load_labels(corpus[i].labels, meshes[i].num_vertices()));
      sets[i] = compute_descriptors(meshes[i], pc.descriptors);
    } catch (...) {
      rethrow_with("mesh " + corpus[i].id);
    }
    log::info("stage=descriptors mesh=" + corpus[i].id + " vertices=" + std::to_string(meshes[i].num_vertices()) +
              " seconds=" + fmt_seconds(seconds_since(t0)));
  });

  std::vector<const DescriptorSet*> ptrs;
  for (const auto& s : sets) ptrs.push_back(&s);
  NormalizationStats stats = compute_stats(ptrs);
  stats.config_hash = data_hash(config);
  save_stats(stats, out_dir / "stats.txt");

  DatasetManifest manifest;
  manifest.resolution = pc.resolution;
  manifest.channels = pc.channels();
  manifest.channel_order = channel_names(pc);
  manifest.stats_file = "stats.txt";
  manifest.config_hash = data_hash(config);
  manifest.seed = pc.seed;
  manifest.config = pc.describe();

  PreprocessSummary summary;
  for (int i = 0; i < n; ++i) {
    const CorpusMesh& entry = corpus[i];
    const TriMesh& mesh = meshes[i];
    auto t0 = Clock::now();
    normalize(sets[i], stats);
    MeshGrids grids;
    try {
      const Landmarks lm = landmarks_for(entry, mesh);
      const FlowField flow = solve_flow_field(mesh, lm.sources, lm.sinks);
      log::info("stage=flow mesh=" + entry.id + " seconds=" + fmt_seconds(seconds_since(t0)));
      t0 = Clock::now();
      grids = build_mesh_grids(mesh, flow, sets[i].matrix(pc.selection), pc);
    } catch (...) {
      rethrow_with("mesh " + entry.id);
    }
    // A few examples per mesh; the count is in the stage line.
    for (std::size_t k = 0; k < std::min<std::size_t>(grids.failures.size(), 3); ++k) {
      const auto& f = grids.failures[k];
      log::warn("mesh " + entry.id + " vertex " + std::to_string(f.vertex) + " skipped: " + f.reason);
    }
    GridFileHeader header;
    header.resolution = static_cast<uint32_t>(pc.resolution);
    header.channels = static_cast<uint32_t>(pc.channels());
    header.has_labels = true;
    header.config_hash = pc.hash();
    const std::string file = entry.id + ".pgrd";
    write_grid_file(out_dir / file, header, grids.grids);
    for (const auto& g : grids.grids) ++manifest.label_counts[g.label];
    manifest.meshes.push_back({entry.id, file, static_cast<int>(grids.grids.size()),
                               static_cast<int>(grids.failures.size())});
    log::info("stage=grids mesh=" + entry.id + " records=" + std::to_string(grids.grids.size()) +
              " skipped=" + std::to_string(grids.failures.size()) + " seconds=" + fmt_seconds(seconds_since(t0)));

    summary.vertices += mesh.num_vertices();
    summary.records += static_cast<long>(grids.grids.size());
    summary.skipped += static_cast<long>(grids.failures.size());
    summary.meshes.push_back({entry.id, sets[i].matrix(pc.selection), *mesh.labels()});
  }

  if (static_cast<double>(summary.skipped) > pc.skip_budget * static_cast<double>(summary.vertices)) {
    throw Error("skipped " + std::to_string(summary.skipped) + " of " + std::to_string(summary.vertices) +
                " vertices, above the budget of " + io::format_double(pc.skip_budget) +
                "; no manifest written");
  }
  write_manifest(manifest, out_dir / "manifest.txt");
  summary.seconds = seconds_since(start);
  log::info("stage=preprocess meshes=" + std::to_string(n) + " vertices=" + std::to_string(summary.vertices) +
            " records=" + std::to_string(summary.records) + " skipped=" + std::to_string(summary.skipped) +
            " seconds=" + fmt_seconds(summary.seconds));
  return summary;
}

// ---------------------------------------------------------------------------
// train

TrainReport cmd_train(const RunConfig& config) {
  config.validate();
  const fs::path manifest_path = config.dataset_dir() / "manifest.txt";
  if (!fs::exists(manifest_path)) {
    throw ConfigError("no dataset manifest at " + manifest_path.string() + "; run preprocess first");
  }
  const Dataset dataset(manifest_path);
  if (dataset.manifest().config_hash != data_hash(config)) {
    throw ConfigError("dataset at " + config.dataset_dir().string() + " was built under pipeline config " +
                      dataset.manifest().config_hash + ", current config is " + data_hash(config));
  }
  const fs::path model_path = config.model_path();
  if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
  write_run_manifest(config, "train", model_path.has_parent_path() ? model_path.parent_path() : fs::path("."));

  ClassifierConfig tc = config.train;
  if (tc.checkpoint_every > 0 && tc.checkpoint_dir.empty()) tc.checkpoint_dir = config.paths.output / "checkpoints";
  TrainReport report;
  Model model = train(training_data(dataset), tc, &report, [](const EpochStats& s) {
    char line[160];
    std::snprintf(line, sizeof line, "stage=train epoch=%d loss=%.6f accuracy=%.4f lr=%.3e seconds=%.2f", s.epoch,
                  s.loss, s.accuracy, s.lr, s.seconds);
    log::info(line);
    return true;
  });
  model.data_hash = dataset.manifest().config_hash;
  save_model(model, model_path);
  const fs::path report_path =
      (model_path.has_parent_path() ? model_path.parent_path() : fs::path(".")) / "train_report.txt";
  write_text(report_path, report.table());
  log::info("stage=train done model=" + model_path.string() + " seconds=" + fmt_seconds(report.seconds));
  return report;
}

// ---------------------------------------------------------------------------
// predict

PredictSummary cmd_predict(const RunConfig& config) {
  const auto start = Clock::now();
  config.validate();
  require_dir(config.paths.test_meshes, "paths.test_meshes");
  const NormalizationStats stats = checked_stats(config);
  if (!fs::exists(config.model_path())) {
    throw ConfigError("no model at " + config.model_path().string() + "; run train first");
  }
  const PipelineConfig& pc = config.pipeline;
  ModelExpectations expect;
  expect.channels = pc.channels();
  expect.resolution = pc.resolution;
  expect.data_hash = data_hash(config);
  const Model model = load_model(config.model_path(), expect);

  const auto corpus = discover_meshes(config.paths.test_meshes, config.test_labels_dir(), false);
  if (corpus.empty()) throw ConfigError("no meshes found in " + config.paths.test_meshes.string());
  const fs::path out_dir = config.predictions_dir();
  fs::create_directories(out_dir);
  write_run_manifest(config, "predict", out_dir);

  constexpr int kChunk = 512;
  PredictSummary summary;
  for (const CorpusMesh& entry : corpus) {
    try {
      auto t0 = Clock::now();
      const TriMesh mesh = load_mesh(entry.mesh);
      DescriptorSet set = compute_descriptors(mesh, pc.descriptors);
      const int clamped = normalize(set, stats);
      const Eigen::MatrixXd features = set.matrix(pc.selection);
      log::info("stage=descriptors mesh=" + entry.id + " vertices=" + std::to_string(mesh.num_vertices()) +
                " clamped=" + std::to_string(clamped) + " seconds=" + fmt_seconds(seconds_since(t0)));

      t0 = Clock::now();
      const Landmarks lm = landmarks_for(entry, mesh);
      const FlowField flow = solve_flow_field(mesh, lm.sources, lm.sinks);
      std::vector<int> labels(mesh.num_vertices(), kNone);
      std::vector<VertexFailure> failures;
      for (int first = 0; first < mesh.num_vertices(); first += kChunk) {
        const int count = std::min(kChunk, mesh.num_vertices() - first);
        MeshGrids grids = build_mesh_grids(mesh, flow, features, pc, first, count);
        failures.insert(failures.end(), grids.failures.begin(), grids.failures.end());
        if (grids.grids.empty()) continue;
        std::vector<const FeatureGrid*> ptrs;
        for (const auto& g : grids.grids) ptrs.push_back(&g);
        const Batch<float> probs = patchseg::predict(model, ptrs);
        for (std::size_t r = 0; r < grids.grids.size(); ++r) {
          labels[grids.grids[r].vertex] = argmax_row(probs, static_cast<int>(r));
        }
      }
      std::vector<int> missing;
      for (int v = 0; v < mesh.num_vertices(); ++v) {
        if (labels[v] == kNone) missing.push_back(v);
      }
      const int filled = missing.empty() ? 0 : fill_missing_labels(mesh, labels, pc.descriptors.geodesic);
      log::info("stage=classify mesh=" + entry.id + " filled=" + std::to_string(filled) +
                " seconds=" + fmt_seconds(seconds_since(t0)));

      SegmentationResult result;
      result.mesh_id = entry.id;
      result.seed = config.seed;
      result.vertex_labels = labels;
      result.face_labels = vertex_to_face_labels(mesh, labels, config.seed, entry.id);
      save_labels(result.vertex_labels, out_dir / (entry.id + ".vlabels"));
      save_labels(result.face_labels, out_dir / (entry.id + ".flabels"));
      save_colored_mesh(mesh, result.vertex_labels, out_dir / (entry.id + ".ply"));

      std::ostringstream meta;
      meta << "mesh " << entry.id << '\n'
           << "vertices " << mesh.num_vertices() << '\n'
           << "faces " << mesh.num_faces() << '\n'
           << "filled " << filled << '\n';
      for (const auto& f : failures) meta << "filled_vertex " << f.vertex << ' ' << f.reason << '\n';
      write_text(out_dir / (entry.id + ".meta"), meta.str());

      summary.filled += filled;
      summary.results.push_back(std::move(result));
      summary.meshes.push_back({entry.id, features, {}});
      if (!entry.labels.empty()) summary.meshes.back().labels = load_labels(entry.labels, mesh.num_vertices());
    } catch (...) {
      rethrow_with("mesh " + entry.id);
    }
  }
  summary.seconds = seconds_since(start);
  log::info("stage=predict meshes=" + std::to_string(corpus.size()) + " filled=" + std::to_string(summary.filled) +
            " seconds=" + fmt_seconds(summary.seconds));
  return summary;
}

// ---------------------------------------------------------------------------
// evaluate

AccuracyReport cmd_evaluate(const RunConfig& config) {
  config.validate();
  require_dir(config.paths.test_meshes, "paths.test_meshes");
  const fs::path pred_dir = config.predictions_dir();
  require_dir(pred_dir, "paths.predictions");
  const auto corpus = discover_meshes(config.paths.test_meshes, config.test_labels_dir(), true);
  if (corpus.empty()) throw ConfigError("no meshes found in " + config.paths.test_meshes.string());

  std::vector<ScoredMesh> scored;
  for (const CorpusMesh& entry : corpus) {
    try {
      const TriMesh mesh = load_mesh(entry.mesh);
      const fs::path pred = pred_dir / (entry.id + ".flabels");
      if (!fs::exists(pred)) throw ConfigError("no prediction file " + pred.string());
      ScoredMesh s;
      s.mesh_id = entry.id;
      s.face_areas = mesh.face_areas();
      s.predicted = load_labels(pred, mesh.num_faces());
      s.truth = vertex_to_face_labels(mesh, load_labels(entry.labels, mesh.num_vertices()), config.seed, entry.id);
      scored.push_back(std::move(s));
    } catch (...) {
      rethrow_with("mesh " + entry.id);
    }
  }
  const AccuracyReport report = accuracy(scored);
  write_run_manifest(config, "evaluate", pred_dir);
  const ReportRow row{"patch grids + CNN", config.pipeline.channels() - 1, report};
  write_text(pred_dir / "report.txt", format_report({row}));
  log::info("stage=evaluate meshes=" + std::to_string(scored.size()) + " acc=" + io::format_double(report.accuracy));
  return report;
}

// ---------------------------------------------------------------------------
// export-charts

void cmd_export_charts(const RunConfig& config, const fs::path& mesh_path, const std::vector<int>& vertices,
                       const fs::path& out_dir) {
  config.validate();
  const TriMesh mesh = load_mesh(mesh_path);
  for (int v : vertices) {
    if (v < 0 || v >= mesh.num_vertices()) {
      throw LookupError("vertex " + std::to_string(v) + " outside " + mesh_path.string() + " (" +
                        std::to_string(mesh.num_vertices()) + " vertices)");
    }
  }
  fs::create_directories(out_dir);
  write_run_manifest(config, "export-charts", out_dir);
  const PipelineConfig& pc = config.pipeline;

  CorpusMesh entry;
  entry.id = mesh_path.stem().string();
  entry.mesh = mesh_path;
  const fs::path lm_path = mesh_path.parent_path() / (entry.id + ".landmarks");
  if (fs::exists(lm_path)) entry.landmarks = lm_path;
  const Landmarks lm = landmarks_for(entry, mesh);
  const FlowField flow = solve_flow_field(mesh, lm.sources, lm.sinks);
  const double radius = patch_radius(mesh, pc.patch_count);

  // Grids need train-set stats; charts do not.
  std::optional<Eigen::MatrixXd> features;
  if (fs::exists(config.dataset_dir() / "stats.txt")) {
    DescriptorSet set = compute_descriptors(mesh, pc.descriptors);
    normalize(set, checked_stats(config));
    features = set.matrix(pc.selection);
  } else {
    log::warn("no normalization stats in " + config.dataset_dir().string() + "; exporting charts only");
  }

  for (int v : vertices) {
    try {
      const Patch patch = extract_patch(mesh, geodesic_ball(mesh, v, radius, pc.descriptors.geodesic));
      const DiskParam chart = align(parameterize(patch), patch, flow);
      dump_chart(chart, patch, out_dir / ("chart_" + std::to_string(v) + ".txt"));
      if (!features) continue;
      const FeatureGrid grid = build_vertex_grid(mesh, v, radius, flow, *features, pc);
      std::ostringstream out;
      const auto names = channel_names(pc);
      const int cells = pc.resolution * pc.resolution;
      out << "# vertex " << v << " flags " << grid.flags << " resolution " << pc.resolution << '\n';
      for (std::size_t c = 0; c < names.size(); ++c) {
        out << names[c];
        for (int k = 0; k < cells; ++k) out << ' ' << io::format_double(grid.data[c * cells + k]);
        out << '\n';
      }
      write_text(out_dir / ("grid_" + std::to_string(v) + ".txt"), out.str());
    } catch (...) {
      rethrow_with("vertex " + std::to_string(v));
    }
  }
  log::info("stage=export-charts mesh=" + entry.id + " vertices=" + std::to_string(vertices.size()));
}

// ---------------------------------------------------------------------------

std::vector<int> nearest_neighbor_labels(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                                         const Eigen::MatrixXd& query) {
  if (train.rows() == 0 || static_cast<std::size_t>(train.rows()) != train_labels.size()) {
    throw ConfigError("need one label per training row");
  }
  if (train.cols() != query.cols()) throw ConfigError("training and query rows differ in width");
  // Row-major copies keep each row contiguous for the inner loop.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = train;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> q = query;
  std::vector<int> out(q.rows());
  parallel_for(static_cast<int>(q.rows()), resolve_workers(0), [&](int i) {
    double best = std::numeric_limits<double>::infinity();
    int best_row = 0;
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      const double d = (t.row(r) - q.row(i)).squaredNorm();
      if (d < best) {
        best = d;
        best_row = static_cast<int>(r);
      }
    }
    out[i] = train_labels[best_row];
  });
  return out;
}

}  // namespace patchseg
