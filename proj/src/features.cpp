#include "patchseg/features.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"
#include "patchseg/log.hpp"
#include "patchseg/parallel.hpp"
#include "patchseg/rasterize.hpp"

namespace patchseg {

std::string PipelineConfig::describe() const {
  std::ostringstream out;
  out << "pipeline.patch_count " << patch_count << '\n'
      << "pipeline.resolution " << resolution << '\n'
      << "pipeline.features " << selection.to_string() << '\n'
      << "pipeline.max_retries " << max_retries << '\n'
      << "pipeline.radius_growth " << io::format_double(radius_growth) << '\n'
      << "pipeline.skip_budget " << io::format_double(skip_budget) << '\n'
      << "descriptors.eigenpairs " << descriptors.eigenpairs << '\n'
      << "descriptors.bands " << descriptors.bands << '\n'
      << "descriptors.agd_samples " << descriptors.agd_samples << '\n'
      << "geodesic.backend " << to_string(descriptors.geodesic.backend) << '\n'
      << "geodesic.prune_tolerance " << io::format_double(descriptors.geodesic.prune_tolerance) << '\n'
      << "geodesic.steiner_points " << descriptors.geodesic.steiner_points << '\n'
      << "seed " << seed << '\n';
  return out.str();
}

uint64_t PipelineConfig::hash() const { return io::fnv1a(describe()); }

std::vector<std::string> channel_names(const PipelineConfig& config) {
  std::vector<std::string> names;
  if (config.selection.wks) {
    for (int b = 0; b < config.descriptors.bands; ++b) names.push_back("wks" + std::to_string(b));
  }
  if (config.selection.curvature) {
    for (const char* n : {"cmin", "cmax", "cmean", "cgauss"}) names.emplace_back(n);
  }
  if (config.selection.agd) names.emplace_back("agd");
  names.emplace_back("mask");
  return names;
}

FeatureGrid build_vertex_grid(const TriMesh& mesh, int vertex, double radius, const FlowField& flow,
                              const Eigen::MatrixXd& features, const PipelineConfig& config) {
  FeatureGrid grid;
  grid.vertex = vertex;
  std::optional<Patch> patch;
  double r = radius;
  for (int attempt = 0;; ++attempt) {
    try {
      patch = extract_patch(mesh, geodesic_ball(mesh, vertex, r, config.descriptors.geodesic));
      break;
    } catch (const TopologyError&) {
      if (attempt >= config.max_retries) throw;
      r *= config.radius_growth;
      grid.flags |= kRecordEnlarged;
    }
  }
  const DiskParam chart = align(parameterize(*patch), *patch, flow);
  if (chart.method == ChartMethod::kPolar) grid.flags |= kRecordPolar;
  if (chart.aligned) grid.flags |= kRecordAligned;
  const GridChart cells = rasterize(chart, *patch, config.resolution);
  if (cells.valid_count() == 0) grid.flags |= kRecordEmpty;
  const std::vector<double> sampled = sample_features(cells, features, config.channels() - 1);
  grid.data.assign(sampled.begin(), sampled.end());
  if (mesh.labels()) grid.label = (*mesh.labels())[vertex];
  return grid;
}

MeshGrids build_mesh_grids(const TriMesh& mesh, const FlowField& flow, const Eigen::MatrixXd& features,
                           const PipelineConfig& config) {
  return build_mesh_grids(mesh, flow, features, config, 0, mesh.num_vertices());
}

MeshGrids build_mesh_grids(const TriMesh& mesh, const FlowField& flow, const Eigen::MatrixXd& features,
                           const PipelineConfig& config, int first, int count) {
  if (first < 0 || count < 0 || first + count > mesh.num_vertices()) {
    throw LookupError("vertex range [" + std::to_string(first) + ", " + std::to_string(first + count) +
                      ") outside the mesh");
  }
  const double radius = patch_radius(mesh, config.patch_count);
  std::vector<std::optional<FeatureGrid>> slots(count);
  std::vector<std::string> errors(count);
  parallel_for(count, resolve_workers(config.workers), [&](int i) {
    try {
      slots[i] = build_vertex_grid(mesh, first + i, radius, flow, features, config);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  MeshGrids out;
  for (int i = 0; i < count; ++i) {
    if (slots[i]) {
      out.grids.push_back(std::move(*slots[i]));
    } else {
      out.failures.push_back({first + i, errors[i]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kGridMagic[4] = {'P', 'G', 'R', 'D'};
constexpr std::size_t kIndexEntrySize = 24;
}  // namespace

void write_grid_file(const std::filesystem::path& path, const GridFileHeader& header,
                     const std::vector<FeatureGrid>& grids) {
  const std::size_t floats = static_cast<std::size_t>(header.channels) * header.resolution * header.resolution;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const uint64_t index_offset = kGridHeaderSize + grids.size() * floats * sizeof(float);

  out.write(kGridMagic, 4);
  io::write_le<uint32_t>(out, kGridFormatVersion);
  io::write_le<uint32_t>(out, header.resolution);
  io::write_le<uint32_t>(out, header.channels);
  io::write_le<uint64_t>(out, grids.size());
  io::write_le<uint32_t>(out, header.has_labels ? 1u : 0u);
  io::write_le<uint32_t>(out, 0);
  io::write_le<uint64_t>(out, index_offset);
  io::write_le<uint64_t>(out, kGridHeaderSize);  // first record
  io::write_le<uint64_t>(out, header.config_hash);
  io::write_le<uint64_t>(out, 0);

  for (const FeatureGrid& g : grids) {
    if (g.data.size() != floats) {
      throw Error("grid of vertex " + std::to_string(g.vertex) + " has " + std::to_string(g.data.size()) +
                  " values, expected " + std::to_string(floats));
    }
    out.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(floats * sizeof(float)));
  }
  uint64_t offset = kGridHeaderSize;
  for (const FeatureGrid& g : grids) {
    io::write_le<uint32_t>(out, static_cast<uint32_t>(g.vertex));
    io::write_le<int32_t>(out, g.label);
    io::write_le<uint32_t>(out, g.flags);
    io::write_le<uint32_t>(out, 0);
    io::write_le<uint64_t>(out, offset);
    offset += floats * sizeof(float);
  }
  if (!out) throw Error("write failed for " + path.string());
}

GridFile::GridFile(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open grid file " + path.string());
  try {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kGridMagic, 4) != 0) throw FormatError("not a PGRD container");
    header_.version = io::read_le<uint32_t>(in, "version");
    if (header_.version != kGridFormatVersion) {
      throw FormatError("unsupported PGRD version " + std::to_string(header_.version));
    }
    header_.resolution = io::read_le<uint32_t>(in, "resolution");
    header_.channels = io::read_le<uint32_t>(in, "channel count");
    header_.record_count = io::read_le<uint64_t>(in, "record count");
    header_.has_labels = io::read_le<uint32_t>(in, "label flag") != 0;
    io::read_le<uint32_t>(in, "reserved");
    header_.index_offset = io::read_le<uint64_t>(in, "index offset");
    io::read_le<uint64_t>(in, "data offset");
    header_.config_hash = io::read_le<uint64_t>(in, "config hash");

    const uint64_t record_bytes =
        static_cast<uint64_t>(header_.channels) * header_.resolution * header_.resolution * sizeof(float);
    const uint64_t file_size = std::filesystem::file_size(path);
    if (header_.index_offset != kGridHeaderSize + header_.record_count * record_bytes ||
        file_size != header_.index_offset + header_.record_count * kIndexEntrySize) {
      throw FormatError("size does not match header (truncated file?)");
    }
    in.seekg(static_cast<std::streamoff>(header_.index_offset));
    index_.resize(header_.record_count);
    for (Entry& e : index_) {
      e.vertex = static_cast<int>(io::read_le<uint32_t>(in, "record vertex"));
      e.label = io::read_le<int32_t>(in, "record label");
      e.flags = io::read_le<uint32_t>(in, "record flags");
      io::read_le<uint32_t>(in, "reserved");
      e.offset = io::read_le<uint64_t>(in, "record offset");
    }
  } catch (const FormatError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

FeatureGrid GridFile::read(int record) const {
  if (record < 0 || record >= size()) {
    throw LookupError("record " + std::to_string(record) + " out of range in " + path_.string());
  }
  const Entry& e = index_[record];
  FeatureGrid g;
  g.vertex = e.vertex;
  g.label = e.label;
  g.flags = e.flags;
  g.data.resize(static_cast<std::size_t>(header_.channels) * header_.resolution * header_.resolution);
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(e.offset));
  in.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(float)));
  if (!in) throw LoadError(path_.string() + ": truncated record " + std::to_string(record));
  return g;
}

std::vector<FeatureGrid> GridFile::read_all() const {
  std::vector<FeatureGrid> out;
  out.reserve(index_.size());
  for (int i = 0; i < size(); ++i) out.push_back(read(i));
  return out;
}

// ---------------------------------------------------------------------------

long DatasetManifest::record_count() const {
  long n = 0;
  for (const auto& m : meshes) n += m.records;
  return n;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "format patchseg-dataset 1\n"
      << "resolution " << m.resolution << '\n'
      << "channels " << m.channels << '\n'
      << "channel_order";
  for (const auto& c : m.channel_order) out << ' ' << c;
  out << '\n'
      << "stats " << m.stats_file << '\n'
      << "config_hash " << m.config_hash << '\n'
      << "seed " << m.seed << '\n';
  std::istringstream cfg(m.config);
  std::string line;
  while (std::getline(cfg, line)) {
    if (!line.empty()) out << "config " << line << '\n';
  }
  for (const auto& mesh : m.meshes) {
    out << "mesh " << mesh.id << ' ' << mesh.grid_file << ' ' << mesh.records << ' ' << mesh.skipped << '\n';
  }
  for (int l = 0; l < kLabelCount; ++l) out << "label " << l << ' ' << m.label_counts[l] << '\n';
  out << "records " << m.record_count() << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  long records = -1;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string key;
      if (!(ss >> key)) continue;
      if (key == "format") {
        std::string kind, version;
        ss >> kind >> version;
        if (kind != "patchseg-dataset" || version != "1") throw FormatError("unsupported manifest format");
        header = true;
      } else if (key == "resolution") {
        ss >> m.resolution;
      } else if (key == "channels") {
        ss >> m.channels;
      } else if (key == "channel_order") {
        std::string c;
        while (ss >> c) m.channel_order.push_back(c);
        ss.clear();
      } else if (key == "stats") {
        ss >> m.stats_file;
      } else if (key == "config_hash") {
        ss >> m.config_hash;
      } else if (key == "seed") {
        ss >> m.seed;
      } else if (key == "config") {
        std::string rest;
        std::getline(ss >> std::ws, rest);
        m.config += rest + '\n';
      } else if (key == "mesh") {
        ManifestMesh mm;
        if (!(ss >> mm.id >> mm.grid_file >> mm.records >> mm.skipped)) throw FormatError("malformed mesh line");
        m.meshes.push_back(mm);
      } else if (key == "label") {
        int l;
        long c;
        if (!(ss >> l >> c) || l < 0 || l >= kLabelCount) throw FormatError("malformed label line");
        m.label_counts[l] = c;
      } else if (key == "records") {
        ss >> records;
      } else {
        throw FormatError("unknown key '" + key + "'");
      }
      if (ss.fail()) throw FormatError("malformed line '" + line + "'");
    }
  } catch (const FormatError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  if (!header) throw LoadError(path.string() + ": missing format line");
  if (records != m.record_count()) throw LoadError(path.string() + ": record count does not match mesh lines");
  if (static_cast<int>(m.channel_order.size()) != m.channels) {
    throw LoadError(path.string() + ": channel order lists " + std::to_string(m.channel_order.size()) +
                    " names for " + std::to_string(m.channels) + " channels");
  }
  return m;
}

Dataset::Dataset(const std::filesystem::path& manifest_path) : manifest_(read_manifest(manifest_path)) {
  const auto dir = manifest_path.parent_path();
  long first = 0;
  for (const auto& mm : manifest_.meshes) {
    GridFile f(dir / mm.grid_file);
    const auto& h = f.header();
    if (static_cast<int>(h.channels) != manifest_.channels || static_cast<int>(h.resolution) != manifest_.resolution) {
      throw LoadError(mm.grid_file + ": expected " + std::to_string(manifest_.channels) + " channels at " +
                      std::to_string(manifest_.resolution) + "^2, found " + std::to_string(h.channels) + " at " +
                      std::to_string(h.resolution) + "^2");
    }
    if (f.size() != mm.records) throw LoadError(mm.grid_file + ": record count differs from the manifest");
    if (io::hex64(h.config_hash) != manifest_.config_hash) {
      throw LoadError(mm.grid_file + ": config hash differs from the manifest");
    }
    first_record_.push_back(first);
    first += f.size();
    for (int i = 0; i < f.size(); ++i) labels_.push_back(f.label(i));
    files_.push_back(std::move(f));
  }
}

FeatureGrid Dataset::read(long record) const {
  if (record < 0 || record >= size()) throw LookupError("record " + std::to_string(record) + " out of range");
  const auto it = std::upper_bound(first_record_.begin(), first_record_.end(), record) - 1;
  const std::size_t file = it - first_record_.begin();
  return files_[file].read(static_cast<int>(record - *it));
}

std::vector<long> balanced_epoch_sampler(const std::vector<int>& labels, int per_label, uint64_t seed, int epoch,
                                         int label_count) {
  if (per_label <= 0) throw ConfigError("samples per label must be positive");
  std::vector<std::vector<long>> by_label(label_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || l >= label_count) {
      throw LookupError("record " + std::to_string(i) + " has no usable label (" + std::to_string(l) + ")");
    }
    by_label[l].push_back(static_cast<long>(i));
  }
  std::mt19937_64 rng(io::mix64(seed ^ io::mix64(static_cast<uint64_t>(epoch))));
  std::vector<long> out;
  out.reserve(static_cast<std::size_t>(per_label) * label_count);
  for (int l = 0; l < label_count; ++l) {
    auto& ids = by_label[l];
    if (ids.empty()) throw ConfigError("label " + std::to_string(l) + " has no records to sample");
    const std::size_t n = ids.size();
    if (n >= static_cast<std::size_t>(per_label)) {
      // Partial Fisher-Yates.
      for (int k = 0; k < per_label; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(ids[k], ids[pick(rng)]);
        out.push_back(ids[k]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (int k = 0; k < per_label; ++k) out.push_back(ids[pick(rng)]);
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace patchseg
