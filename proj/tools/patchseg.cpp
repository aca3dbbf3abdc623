// patchseg: batch frontend for the segmentation pipeline.
//
// Settings come from an optional --config file of "key = value" lines, then
// --set overrides, then the per-command flags. PATCHSEG_WORKERS sets the
// worker count when pipeline.workers is 0.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "patchseg/error.hpp"
#include "patchseg/log.hpp"
#include "patchseg/pipeline.hpp"

using namespace patchseg;

namespace {

struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;  // applied last

  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { flags.emplace_back(key, v); }, help + " (" + key + ")");
  }

  RunConfig resolve() const {
    RunConfig config = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      config.set(std::string(CLI::detail::trim_copy(s.substr(0, eq))),
                 std::string(CLI::detail::trim_copy(s.substr(eq + 1))));
    }
    for (const auto& [key, value] : flags) config.set(key, value);
    config.validate();
    return config;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-grid mesh segmentation: preprocess, train, predict, evaluate, export-charts"};
  app.require_subcommand(1);
  Overrides o;
  bool verbose = false;
  bool quiet = false;
  app.add_option("-c,--config", o.config_file, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "Override one setting, e.g. --set train.epochs=20 (repeatable)");
  o.flag(&app, "--seed", "seed", "Seed for every random choice");
  o.flag(&app, "-o,--output", "paths.output", "Output root");
  o.flag(&app, "-j,--workers", "pipeline.workers", "Worker threads, 0 = PATCHSEG_WORKERS or all cores");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Errors only");

  auto* pre = app.add_subcommand("preprocess", "Descriptors, normalization stats and grids for the training meshes");
  o.flag(pre, "--meshes", "paths.meshes", "Training mesh directory");
  o.flag(pre, "--labels", "paths.labels", "Label directory (default: the mesh directory)");
  o.flag(pre, "--dataset", "paths.dataset", "Dataset directory (default: <output>/dataset)");

  auto* trn = app.add_subcommand("train", "Train the classifier on a preprocessed dataset");
  o.flag(trn, "--dataset", "paths.dataset", "Dataset directory");
  o.flag(trn, "--model", "paths.model", "Model file to write");
  o.flag(trn, "--epochs", "train.epochs", "Epochs");
  o.flag(trn, "--per-label", "train.per_label", "Records per label per epoch");
  o.flag(trn, "--architecture", "train.architecture", "Layer list, e.g. 'conv3:16,relu,pool2,fc:8'");

  auto* prd = app.add_subcommand("predict", "Label every vertex of the test meshes");
  o.flag(prd, "--meshes", "paths.test_meshes", "Mesh directory to label");
  o.flag(prd, "--dataset", "paths.dataset", "Dataset directory holding stats.txt");
  o.flag(prd, "--model", "paths.model", "Model file");
  o.flag(prd, "--predictions", "paths.predictions", "Output directory (default: <output>/predictions)");

  auto* evl = app.add_subcommand("evaluate", "Area-weighted accuracy of the predictions");
  o.flag(evl, "--meshes", "paths.test_meshes", "Test mesh directory");
  o.flag(evl, "--labels", "paths.test_labels", "Ground-truth label directory (default: the mesh directory)");
  o.flag(evl, "--predictions", "paths.predictions", "Directory with <id>.flabels files");

  auto* exp = app.add_subcommand("export-charts", "Dump charts and grids for chosen vertices");
  std::string chart_mesh;
  std::vector<int> chart_vertices;
  std::string chart_out = "charts";
  exp->add_option("--mesh", chart_mesh, "Mesh file")->required()->check(CLI::ExistingFile);
  exp->add_option("--vertices", chart_vertices, "Vertex ids")->required()->delimiter(',');
  exp->add_option("--out", chart_out, "Output directory");
  o.flag(exp, "--dataset", "paths.dataset", "Dataset directory holding stats.txt (grids are skipped without it)");

  app.footer(
      "Config keys: paths.{meshes,labels,test_meshes,test_labels,output,dataset,model,predictions}\n"
      "  pipeline.{patch_count,resolution,features,max_retries,radius_growth,skip_budget,workers}\n"
      "  descriptors.{eigenpairs,bands,agd_samples}  geodesic.{backend,prune_tolerance,steiner_points}\n"
      "  train.{architecture,epochs,batch_size,lr_start,lr_end,schedule,step_every,step_factor,\n"
      "         momentum,per_label,checkpoint_every}  seed\n"
      "Exit status: 0 on success, 1 on any pipeline error, 2 on bad usage.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (verbose) log::set_level(log::Level::kDebug);
  if (quiet) log::set_level(log::Level::kError);

  try {
    const RunConfig config = o.resolve();
    if (pre->parsed()) {
      const auto s = cmd_preprocess(config);
      std::printf("preprocess: %ld vertices, %ld records, %ld skipped, %.1f s\n", s.vertices, s.records, s.skipped,
                  s.seconds);
    } else if (trn->parsed()) {
      const auto r = cmd_train(config);
      const auto& last = r.epochs.back();
      std::printf("train: %zu epochs, final loss %.6f, accuracy %.4f, %.1f s\n", r.epochs.size(), last.loss,
                  last.accuracy, r.seconds);
    } else if (prd->parsed()) {
      const auto s = cmd_predict(config);
      std::printf("predict: %zu meshes, %ld vertices filled from neighbours, %.1f s\n", s.results.size(), s.filled,
                  s.seconds);
    } else if (evl->parsed()) {
      const auto r = cmd_evaluate(config);
      std::printf("evaluate: ACC %.4f over %zu meshes\n", r.accuracy, r.meshes.size());
    } else if (exp->parsed()) {
      cmd_export_charts(config, chart_mesh, chart_vertices, chart_out);
      std::printf("export-charts: %zu vertices written to %s\n", chart_vertices.size(), chart_out.c_str());
    }
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}
