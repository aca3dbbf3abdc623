#include "patchseg/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <arpack/arpack.hpp>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"
#include "patchseg/log.hpp"
#include "patchseg/param.hpp"

namespace patchseg {

namespace {
constexpr double kPi = std::numbers::pi;

// The Fortran library keeps solver state in SAVE variables.
std::mutex g_arpack_mutex;
}  // namespace

Eigen::SparseMatrix<double> cotangent_stiffness(const TriMesh& mesh) {
  const int n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(4 * mesh.num_halfedges());
  for (int h = 0; h < mesh.num_halfedges(); ++h) {
    const int tw = mesh.twin(h);
    if (tw != kNone && tw < h) continue;
    const double w = cotangent_weight(mesh, h);
    const int i = mesh.from(h);
    const int j = mesh.to(h);
    t.emplace_back(i, j, -w);
    t.emplace_back(j, i, -w);
    t.emplace_back(i, i, w);
    t.emplace_back(j, j, w);
  }
  Eigen::SparseMatrix<double> l(n, n);
  l.setFromTriplets(t.begin(), t.end());
  return l;
}

Eigen::VectorXd lumped_mass(const TriMesh& mesh) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(mesh.num_vertices());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int v : mesh.face(f)) m[v] += mesh.face_area(f) / 3.0;
  }
  return m;
}

namespace {

SpectralBasis dense_eigenbasis(const Eigen::SparseMatrix<double>& l, const Eigen::VectorXd& mass, int k) {
  const Eigen::MatrixXd a(l);
  const Eigen::MatrixXd b = mass.asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, b);
  if (solver.info() != Eigen::Success) throw SolverError("dense generalized eigensolver failed");
  SpectralBasis basis;
  basis.values = solver.eigenvalues().head(k);
  basis.vectors = solver.eigenvectors().leftCols(k);
  basis.mass = mass;
  return basis;
}

// Shift-invert Lanczos around a small negative shift, so the factored matrix
// L - sigma M is positive definite even though L is singular.
SpectralBasis arpack_eigenbasis(const Eigen::SparseMatrix<double>& l, const Eigen::VectorXd& mass, int k,
                                double scale) {
  const int n = static_cast<int>(l.rows());
  const double sigma = -1e-4 / (scale * scale);
  Eigen::SparseMatrix<double> shifted = l;
  for (int i = 0; i < n; ++i) shifted.coeffRef(i, i) -= sigma * mass[i];
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw SolverError("eigenbasis: shifted stiffness factorization failed");

  const int nev = k;
  const int ncv = std::min(n, std::max(2 * nev + 1, nev + 20));
  const int lworkl = ncv * (ncv + 8);
  std::vector<double> resid(n), v(static_cast<std::size_t>(n) * ncv), workd(3 * n), workl(lworkl);
  std::vector<int> iparam(11, 0), ipntr(14, 0);
  // Fixed start vector keeps runs reproducible.
  for (int i = 0; i < n; ++i) resid[i] = 1.0 + 0.5 * std::sin(1.7 * i + 0.3);
  iparam[0] = 1;
  iparam[2] = 3000;
  iparam[6] = 3;
  int ido = 0;
  int info = 1;
  const double tol = 1e-12;

  std::lock_guard lock(g_arpack_mutex);
  Eigen::VectorXd tmp(n);
  while (true) {
    arpack::saupd(ido, arpack::bmat::generalized, n, arpack::which::largest_magnitude, nev, tol, resid.data(),
                  ncv, v.data(), n, iparam.data(), ipntr.data(), workd.data(), workl.data(), lworkl, info);
    double* x = workd.data() + ipntr[0] - 1;
    double* y = workd.data() + ipntr[1] - 1;
    Eigen::Map<Eigen::VectorXd> xm(x, n), ym(y, n);
    if (ido == -1) {
      tmp = mass.cwiseProduct(xm);
      ym = ldlt.solve(tmp);
    } else if (ido == 1) {
      Eigen::Map<Eigen::VectorXd> bx(workd.data() + ipntr[2] - 1, n);
      ym = ldlt.solve(Eigen::VectorXd(bx));
    } else if (ido == 2) {
      ym = mass.cwiseProduct(xm);
    } else {
      break;
    }
  }
  if (info < 0) throw SolverError("eigenbasis: ARPACK iteration error " + std::to_string(info));
  if (info == 1 || iparam[4] < nev) {
    throw SolverError("eigenbasis: only " + std::to_string(iparam[4]) + " of " + std::to_string(nev) +
                      " eigenpairs converged after " + std::to_string(iparam[2]) + " iterations");
  }

  std::vector<int> select(ncv, 1);
  std::vector<double> d(nev);
  std::vector<double> z(static_cast<std::size_t>(n) * nev);
  int einfo = 0;
  arpack::seupd(1, arpack::howmny::ritz_vectors, select.data(), d.data(), z.data(), n, sigma,
                arpack::bmat::generalized, n, arpack::which::largest_magnitude, nev, tol, resid.data(), ncv,
                v.data(), n, iparam.data(), ipntr.data(), workd.data(), workl.data(), lworkl, einfo);
  if (einfo != 0) throw SolverError("eigenbasis: ARPACK extraction error " + std::to_string(einfo));

  std::vector<int> order(nev);
  for (int i = 0; i < nev; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  SpectralBasis basis;
  basis.values.resize(nev);
  basis.vectors.resize(n, nev);
  basis.mass = mass;
  const Eigen::Map<const Eigen::MatrixXd> zm(z.data(), n, nev);
  for (int i = 0; i < nev; ++i) {
    basis.values[i] = d[order[i]];
    basis.vectors.col(i) = zm.col(order[i]);
  }

  // Report the worst residual relative to the eigenvalue scale.
  double worst = 0.0;
  for (int i = 0; i < nev; ++i) {
    const Eigen::VectorXd r = l * basis.vectors.col(i) - basis.values[i] * mass.cwiseProduct(basis.vectors.col(i));
    const double norm = std::sqrt(r.cwiseProduct(r.cwiseQuotient(mass)).sum());
    worst = std::max(worst, norm / std::max(1.0, std::abs(basis.values[i])));
  }
  if (!(worst < 1e-6)) {
    throw SolverError("eigenbasis: residual " + io::format_double(worst) + " exceeds 1e-6");
  }
  return basis;
}

}  // namespace

SpectralBasis eigenbasis(const TriMesh& mesh, int k) {
  const int n = mesh.num_vertices();
  if (k <= 0 || k >= n) {
    throw ConfigError("eigenpair count " + std::to_string(k) + " must be in [1, " + std::to_string(n - 1) + "]");
  }
  const Eigen::VectorXd mass = lumped_mass(mesh);
  for (int v = 0; v < n; ++v) {
    if (!(mass[v] > 0.0)) throw TopologyError("vertex " + std::to_string(v) + " has no incident face");
  }
  const Eigen::SparseMatrix<double> l = cotangent_stiffness(mesh);
  if (n <= kDenseEigenLimit) return dense_eigenbasis(l, mass, k);
  return arpack_eigenbasis(l, mass, k, mesh.bbox_diagonal());
}

Eigen::MatrixXd wks(const SpectralBasis& basis, int bands) {
  const int k = static_cast<int>(basis.values.size());
  if (bands < 2) throw ConfigError("WKS needs at least 2 bands");
  if (k < bands) {
    throw ConfigError("WKS with " + std::to_string(bands) + " bands needs at least that many eigenpairs, got " +
                      std::to_string(k));
  }
  if (!(basis.values[1] > 0.0)) throw SolverError("WKS: first nonzero eigenvalue is not positive (disconnected mesh?)");
  Eigen::VectorXd loge(k - 1);
  for (int i = 1; i < k; ++i) loge[i - 1] = std::log(basis.values[i]);
  const double lo = loge[0];
  const double hi = loge[k - 2];
  const double step = (hi - lo) / (bands - 1);
  const double sigma = 7.0 * step;

  // Weights (k-1) x bands, normalized per band.
  Eigen::MatrixXd w(k - 1, bands);
  for (int b = 0; b < bands; ++b) {
    const double e = lo + b * step;
    for (int i = 0; i < k - 1; ++i) {
      const double d = e - loge[i];
      w(i, b) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    w.col(b) /= w.col(b).sum();
  }
  const Eigen::MatrixXd sq = basis.vectors.rightCols(k - 1).array().square().matrix();
  return sq * w;
}

Eigen::VectorXd mixed_areas(const TriMesh& mesh) {
  Eigen::VectorXd area = Eigen::VectorXd::Zero(mesh.num_vertices());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(f);
    const double a = mesh.face_area(f);
    std::array<double, 3> angle{};
    for (int k = 0; k < 3; ++k) angle[k] = mesh.corner_angle(3 * f + k);
    const int obtuse = angle[0] > kPi / 2 ? 0 : angle[1] > kPi / 2 ? 1 : angle[2] > kPi / 2 ? 2 : -1;
    for (int k = 0; k < 3; ++k) {
      if (obtuse >= 0) {
        area[t[k]] += k == obtuse ? a / 2 : a / 4;
        continue;
      }
      const int j = (k + 1) % 3;
      const int l = (k + 2) % 3;
      const double eij = (mesh.position(t[j]) - mesh.position(t[k])).squaredNorm();
      const double eil = (mesh.position(t[l]) - mesh.position(t[k])).squaredNorm();
      area[t[k]] += (eij / std::tan(angle[l]) + eil / std::tan(angle[j])) / 8.0;
    }
  }
  return area;
}

Eigen::MatrixXd curvatures(const TriMesh& mesh) {
  const int n = mesh.num_vertices();
  const Eigen::VectorXd area = mixed_areas(mesh);
  std::vector<Vec3> hn(n, Vec3::Zero());
  std::vector<Vec3> normal(n, Vec3::Zero());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(f);
    const Vec3 fn = mesh.face_normal(f) * mesh.face_area(f);
    for (int k = 0; k < 3; ++k) {
      normal[t[k]] += fn;
      // Edge (i, j) opposite corner k.
      const int i = t[(k + 1) % 3];
      const int j = t[(k + 2) % 3];
      const double c = 1.0 / std::tan(mesh.corner_angle(3 * f + k));
      const Vec3 e = mesh.position(i) - mesh.position(j);
      hn[i] += c * e;
      hn[j] -= c * e;
    }
  }
  Eigen::MatrixXd out(n, 4);
  for (int v = 0; v < n; ++v) {
    if (!(area[v] > 0.0)) {
      out.row(v).setZero();
      continue;
    }
    const Vec3 k = hn[v] / (2.0 * area[v]);
    double h = 0.5 * k.norm();
    if (k.dot(normal[v]) < 0.0) h = -h;
    const double full = mesh.is_boundary_vertex(v) ? kPi : 2.0 * kPi;
    const double g = (full - mesh.angle_sum(v)) / area[v];
    const double root = std::sqrt(std::max(h * h - g, 0.0));
    out(v, 0) = h - root;
    out(v, 1) = h + root;
    out(v, 2) = h;
    out(v, 3) = g;
  }
  return out;
}

const char* to_string(Family family) {
  switch (family) {
    case Family::kWks:
      return "wks";
    case Family::kCurvature:
      return "curvature";
    case Family::kAgd:
      return "agd";
  }
  return "?";
}

std::string FeatureSelection::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(wks, "wks");
  add(curvature, "curvature");
  add(agd, "agd");
  return out;
}

FeatureSelection parse_feature_selection(std::string_view text) {
  FeatureSelection sel{false, false, false};
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view name = io::trim(text.substr(pos, comma - pos));
    if (name == "wks") {
      sel.wks = true;
    } else if (name == "curvature" || name == "curvatures") {
      sel.curvature = true;
    } else if (name == "agd") {
      sel.agd = true;
    } else if (name == "sihks" || name == "si-hks" || name == "hks") {
      throw ConfigError("feature family '" + std::string(name) +
                        "' is not supported; choose from wks, curvature, agd");
    } else if (!name.empty()) {
      throw ConfigError("unknown feature family '" + std::string(name) + "'");
    }
    pos = comma + 1;
  }
  if (!sel.wks && !sel.curvature && !sel.agd) throw ConfigError("feature selection is empty");
  return sel;
}

Eigen::MatrixXd DescriptorSet::matrix(const FeatureSelection& selection) const {
  const int n = vertex_count();
  const int bands = static_cast<int>(wks.cols());
  Eigen::MatrixXd out(n, selection.channels(bands));
  int col = 0;
  if (selection.wks) {
    out.middleCols(col, bands) = wks;
    col += bands;
  }
  if (selection.curvature) {
    out.middleCols(col, 4) = curvature;
    col += 4;
  }
  if (selection.agd) out.col(col) = agd;
  return out;
}

DescriptorSet compute_descriptors(const TriMesh& mesh, const DescriptorConfig& config) {
  DescriptorSet set;
  const int k = std::min(config.eigenpairs, mesh.num_vertices() - 1);
  set.wks = wks(eigenbasis(mesh, k), config.bands);
  set.curvature = curvatures(mesh);
  const auto agd = avg_geodesic_distance(mesh, config.agd_samples, config.geodesic);
  set.agd = Eigen::Map<const Eigen::VectorXd>(agd.data(), static_cast<Eigen::Index>(agd.size()));
  return set;
}

NormalizationStats compute_stats(const std::vector<const DescriptorSet*>& sets) {
  if (sets.empty()) throw ConfigError("normalization needs at least one descriptor set");
  NormalizationStats s;
  s.min.fill(std::numeric_limits<double>::infinity());
  s.max.fill(-std::numeric_limits<double>::infinity());
  for (const DescriptorSet* d : sets) {
    s.min[0] = std::min(s.min[0], d->wks.minCoeff());
    s.max[0] = std::max(s.max[0], d->wks.maxCoeff());
    s.min[1] = std::min(s.min[1], d->curvature.minCoeff());
    s.max[1] = std::max(s.max[1], d->curvature.maxCoeff());
    s.min[2] = std::min(s.min[2], d->agd.minCoeff());
    s.max[2] = std::max(s.max[2], d->agd.maxCoeff());
  }
  return s;
}

int normalize(DescriptorSet& set, const NormalizationStats& stats) {
  int clamped = 0;
  auto apply = [&](auto&& block, int family) {
    const double lo = stats.min[family];
    const double range = stats.max[family] - lo;
    if (!(range > 0.0)) {
      log::warn(std::string("descriptor family ") + to_string(static_cast<Family>(family)) +
                " has an empty range; mapped to 0.5");
    }
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      for (Eigen::Index i = 0; i < block.rows(); ++i) {
        double x = range > 0.0 ? (block(i, j) - lo) / range : 0.5;
        if (x < -0.5 || x > 1.5) {
          x = std::clamp(x, -0.5, 1.5);
          ++clamped;
        }
        block(i, j) = x;
      }
    }
  };
  apply(set.wks, 0);
  apply(set.curvature, 1);
  apply(set.agd, 2);
  return clamped;
}

void save_stats(const NormalizationStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (int f = 0; f < kFamilyCount; ++f) {
    out << to_string(static_cast<Family>(f)) << ' ' << io::format_double(stats.min[f]) << ' '
        << io::format_double(stats.max[f]) << '\n';
  }
  if (!stats.config_hash.empty()) out << "config_hash " << stats.config_hash << '\n';
}

NormalizationStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw LoadError("normalization stats " + path.string() + " not found; run preprocess on the training set first");
  }
  NormalizationStats s;
  std::array<bool, kFamilyCount> seen{};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string name, lo, hi;
    if (!(ss >> name) || name[0] == '#') continue;
    if (name == "config_hash") {
      ss >> s.config_hash;
      continue;
    }
    if (!(ss >> lo >> hi)) throw LoadError(path.string() + ": malformed line '" + line + "'");
    int f = -1;
    for (int i = 0; i < kFamilyCount; ++i) {
      if (name == to_string(static_cast<Family>(i))) f = i;
    }
    if (f < 0) throw LoadError(path.string() + ": unknown family '" + name + "'");
    try {
      s.min[f] = io::parse_double(lo, "minimum");
      s.max[f] = io::parse_double(hi, "maximum");
    } catch (const FormatError& e) {
      throw LoadError(path.string() + ": " + e.what());
    }
    seen[f] = true;
  }
  for (int f = 0; f < kFamilyCount; ++f) {
    if (!seen[f]) throw LoadError(path.string() + ": missing family " + to_string(static_cast<Family>(f)));
  }
  return s;
}

}  // namespace patchseg
