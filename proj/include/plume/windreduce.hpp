#pragma once

// Plume-localized zonal-wind reduction: threshold + RBF weighting of 3D wind samples,
// weighted Gaussian KDE on a frozen grid, and PCA of the resulting PDFs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plume/datagen.hpp"
#include "plume/error.hpp"
#include "plume/parallel.hpp"
#include "plume/rbf.hpp"

namespace plume::wind {

class EmptyLocalizationError : public DataError {
 public:
  explicit EmptyLocalizationError(const std::string& what) : DataError(what) {}
};

struct WeightedSamples {
  std::vector<double> values;
  std::vector<double> weights;
};

/// Wind samples from cells where SO2 >= tau, weighted by the l-th periodized basis at the
/// cell longitude. Fields are one day of [lon][column] data.
inline WeightedSamples localize(std::span<const double> omega_3d, std::span<const double> alpha_3d,
                                std::span<const double> lon, std::size_t n_column, const rbf::Term& term,
                                double tau, const rbf::PeriodicDomain& domain = {}) {
  const std::size_t n_lon = lon.size();
  if (omega_3d.size() != n_lon * n_column || alpha_3d.size() != n_lon * n_column) {
    throw DataError("localize: wind and SO2 fields must share the 3D grid");
  }
  if (tau < 0.0) throw ConfigError("localize: threshold must be >= 0");
  WeightedSamples out;
  for (std::size_t i = 0; i < n_lon; ++i) {
    const double psi = rbf::eval_term(term, lon[i], domain);
    for (std::size_t c = 0; c < n_column; ++c) {
      const std::size_t idx = i * n_column + c;
      if (alpha_3d[idx] >= tau) {
        out.values.push_back(omega_3d[idx]);
        out.weights.push_back(psi);
      }
    }
  }
  if (out.values.empty()) {
    throw EmptyLocalizationError("empty localization: no cell reaches the SO2 threshold " + std::to_string(tau) +
                                 " g; lower tau");
  }
  return out;
}

/// Silverman's rule with the weighted standard deviation and Kish effective sample size.
inline double silverman_bandwidth(std::span<const double> values, std::span<const double> weights) {
  double sw = 0.0, sw2 = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sw += weights[i];
    sw2 += weights[i] * weights[i];
    mean += weights[i] * values[i];
  }
  if (!(sw > 0.0)) throw DataError("bandwidth: weights sum to zero");
  mean /= sw;
  double var = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) var += weights[i] * (values[i] - mean) * (values[i] - mean);
  var /= sw;
  const double n_eff = sw * sw / sw2;
  double sd = std::sqrt(var);
  if (!(sd > 0.0)) sd = 1e-3;  // a single distinct value still needs a kernel width
  return 1.06 * sd * std::pow(n_eff, -0.2);
}

/// Uniform evaluation grid for wind PDFs (deg/day).
struct PdfGrid {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t n = 1000;

  double spacing() const { return (hi - lo) / static_cast<double>(n - 1); }
  double at(std::size_t j) const { return lo + spacing() * static_cast<double>(j); }
  std::vector<double> points() const {
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = at(j);
    return g;
  }
  bool operator==(const PdfGrid&) const = default;
};

struct WindPdf {
  PdfGrid grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

inline double trapezoid(std::span<const double> f, double dx) {
  if (f.size() < 2) return 0.0;
  double s = 0.5 * (f.front() + f.back());
  for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
  return s * dx;
}

/// Weighted Gaussian KDE on `grid`; weights are normalized to one and the result is
/// renormalized to unit trapezoid integral on the grid. bandwidth <= 0 selects Silverman.
inline WindPdf weighted_kde(std::span<const double> samples, std::span<const double> weights, const PdfGrid& grid,
                            double bandwidth = 0.0) {
  if (samples.size() != weights.size()) throw DataError("weighted_kde: samples and weights differ in length");
  double sw = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw DataError("weighted_kde: weights must be finite and >= 0");
    sw += w;
  }
  if (!(sw > 0.0)) throw DataError("weighted_kde: all weights are zero");
  const double h = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(samples, weights);

  WindPdf pdf;
  pdf.grid = grid;
  pdf.bandwidth = h;
  pdf.density.assign(grid.n, 0.0);
  const double dx = grid.spacing();
  const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi));
  const double inv2h2 = 0.5 / (h * h);
  const double reach = 10.0 * h;  // kernel tail beyond 10h is below exp(-50)
  const double ratio_step = std::exp(-2.0 * inv2h2 * dx * dx);
  // Along a uniform grid exp(-(g-s)^2/2h^2) obeys a two-term multiplicative recurrence,
  // started at the grid point nearest the sample and run outwards.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double w = weights[i] / sw;
    if (w == 0.0) continue;
    const double s = samples[i];
    const double jf = std::round((s - grid.lo) / dx);
    const long j0 = static_cast<long>(std::clamp(jf, 0.0, static_cast<double>(grid.n - 1)));
    const long span_pts = static_cast<long>(std::ceil(reach / dx)) + 1;
    const double d0 = grid.at(static_cast<std::size_t>(j0)) - s;
    const double e0 = std::exp(-inv2h2 * d0 * d0);
    {
      double e = e0;
      double q = std::exp(-inv2h2 * (2.0 * d0 * dx + dx * dx));
      for (long j = j0; j < static_cast<long>(grid.n) && j <= j0 + span_pts; ++j) {
        pdf.density[static_cast<std::size_t>(j)] += w * norm * e;
        e *= q;
        q *= ratio_step;
      }
    }
    {
      double e = e0 * std::exp(-inv2h2 * (-2.0 * d0 * dx + dx * dx));
      double q = std::exp(-inv2h2 * (-2.0 * (d0 - dx) * dx + dx * dx));
      for (long j = j0 - 1; j >= 0 && j >= j0 - span_pts; --j) {
        pdf.density[static_cast<std::size_t>(j)] += w * norm * e;
        e *= q;
        q *= ratio_step;
      }
    }
  }
  const double integral = trapezoid(pdf.density, dx);
  if (!(integral > 0.0)) throw DataError("weighted_kde: density vanishes on the evaluation grid");
  for (auto& v : pdf.density) v /= integral;
  return pdf;
}

/// PDF column as it enters PCA: density scaled by sqrt(grid spacing), so Euclidean inner
/// products approximate L2 inner products of the densities.
inline Eigen::VectorXd pdf_column(const WindPdf& pdf) {
  const double s = std::sqrt(pdf.grid.spacing());
  Eigen::VectorXd v(static_cast<Eigen::Index>(pdf.density.size()));
  for (std::size_t j = 0; j < pdf.density.size(); ++j) v[static_cast<Eigen::Index>(j)] = s * pdf.density[j];
  return v;
}

struct PcaBasis {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // columns are orthonormal principal directions
  Eigen::VectorXd singular_values;
  int rank = 4;  // truncation N_w used by project()
};

/// SVD of the mean-centered (grid x samples) matrix. Component signs are fixed so the
/// largest-magnitude entry of each is positive.
inline PcaBasis fit_pca(const Eigen::MatrixXd& pdfs, int rank = 4) {
  if (pdfs.cols() < 2) throw DataError("fit_pca: need at least two sample columns");
  PcaBasis basis;
  basis.mean = pdfs.rowwise().mean();
  const Eigen::MatrixXd centered = pdfs.colwise() - basis.mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  basis.singular_values = svd.singularValues();
  basis.components = svd.matrixU();
  const double scale = pdfs.norm();
  for (Eigen::Index k = 0; k < basis.components.cols(); ++k) {
    Eigen::Index arg = 0;
    basis.components.col(k).cwiseAbs().maxCoeff(&arg);
    if (basis.components(arg, k) < 0.0) basis.components.col(k) *= -1.0;
    // Directions carrying only rounding noise of the centering are reported as exactly zero.
    if (basis.singular_values[k] <= 1e-13 * scale) basis.singular_values[k] = 0.0;
  }
  basis.rank = std::min<int>(rank, static_cast<int>(basis.components.cols()));
  return basis;
}

/// Leading `rank` coordinates of a centered PDF column (rank < 0 uses basis.rank).
inline Eigen::VectorXd project(const Eigen::VectorXd& column, const PcaBasis& basis, int rank = -1) {
  if (column.size() != basis.mean.size()) {
    throw DataError("project: PDF grid has " + std::to_string(column.size()) + " points, basis expects " +
                    std::to_string(basis.mean.size()));
  }
  const int r = rank < 0 ? basis.rank : rank;
  if (r > basis.components.cols()) throw ConfigError("project: rank exceeds available components");
  return basis.components.leftCols(r).transpose() * (column - basis.mean);
}

inline Eigen::VectorXd reconstruct(const Eigen::VectorXd& coords, const PcaBasis& basis) {
  return basis.mean + basis.components.leftCols(coords.size()) * coords;
}

/// Per-trajectory reduced winds: coords[day][l] in R^{N_w}.
using TrajectoryWind = std::vector<std::vector<Eigen::VectorXd>>;

struct WindReduction {
  PdfGrid grid;
  PcaBasis basis;
  double tau = 100.0;
  std::vector<TrajectoryWind> coords;                     // per trajectory in dataset order
  std::vector<std::vector<std::vector<WindPdf>>> pdfs;    // [traj][day][l]
};

struct WindOptions {
  double tau = 100.0;
  int rank = 4;
  std::size_t grid_points = 1000;
  double bandwidth = 0.0;  // <= 0: Silverman per PDF
};

/// Runs localization -> KDE -> PCA for all trajectories. The PDF grid and PCA basis are
/// built from training trajectories only and reused for every projection.
inline WindReduction reduce_wind(const datagen::RawDataset& ds, const std::vector<std::vector<rbf::Coords>>& so2_fits,
                                 const WindOptions& opt, int jobs = 1) {
  const auto& grid = ds.grid;
  const std::size_t n_lon = grid.n_lon(), nc = grid.n_column();
  const std::size_t n_traj = ds.trajectories.size();
  if (so2_fits.size() != n_traj) throw DataError("reduce_wind: one SO2 fit series per trajectory required");

  std::vector<std::vector<std::vector<WeightedSamples>>> samples(n_traj);
  parallel_for(n_traj, jobs, [&](std::size_t ti) {
    const auto& t = ds.trajectories[ti];
    const std::size_t n_days = so2_fits[ti].size();
    samples[ti].resize(n_days);
    for (std::size_t d = 0; d < n_days; ++d) {
      const std::span<const double> om(t.omega.data() + d * n_lon * nc, n_lon * nc);
      const std::span<const double> al(t.alpha_v_3d.data() + d * n_lon * nc, n_lon * nc);
      for (const auto& term : so2_fits[ti][d].terms) {
        samples[ti][d].push_back(localize(om, al, grid.lon, nc, term, opt.tau));
      }
    }
  });

  WindReduction out;
  out.tau = opt.tau;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, hmax = 0.0;
  for (std::size_t ti = 0; ti < n_traj; ++ti) {
    if (ds.trajectories[ti].split != datagen::Split::kTrain) continue;
    for (const auto& day : samples[ti]) {
      for (const auto& s : day) {
        for (std::size_t i = 0; i < s.values.size(); ++i) {
          if (s.weights[i] <= 0.0) continue;
          lo = std::min(lo, s.values[i]);
          hi = std::max(hi, s.values[i]);
        }
        hmax = std::max(hmax, opt.bandwidth > 0.0 ? opt.bandwidth : silverman_bandwidth(s.values, s.weights));
      }
    }
  }
  if (!std::isfinite(lo)) throw DataError("reduce_wind: no training wind samples");
  out.grid = {lo - 3.0 * hmax, hi + 3.0 * hmax, opt.grid_points};

  out.pdfs.resize(n_traj);
  parallel_for(n_traj, jobs, [&](std::size_t ti) {
    out.pdfs[ti].resize(samples[ti].size());
    for (std::size_t d = 0; d < samples[ti].size(); ++d) {
      for (const auto& s : samples[ti][d]) out.pdfs[ti][d].push_back(weighted_kde(s.values, s.weights, out.grid, opt.bandwidth));
    }
  });

  std::vector<Eigen::VectorXd> cols;
  for (std::size_t ti = 0; ti < n_traj; ++ti) {
    if (ds.trajectories[ti].split != datagen::Split::kTrain) continue;
    for (const auto& day : out.pdfs[ti]) for (const auto& p : day) cols.push_back(pdf_column(p));
  }
  Eigen::MatrixXd mat(static_cast<Eigen::Index>(opt.grid_points), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) mat.col(static_cast<Eigen::Index>(j)) = cols[j];
  out.basis = fit_pca(mat, opt.rank);

  out.coords.resize(n_traj);
  for (std::size_t ti = 0; ti < n_traj; ++ti) {
    for (const auto& day : out.pdfs[ti]) {
      std::vector<Eigen::VectorXd> per_l;
      for (const auto& p : day) per_l.push_back(project(pdf_column(p), out.basis));
      out.coords[ti].push_back(std::move(per_l));
    }
  }
  return out;
}

/// Re-projects stored PDFs at a different truncation rank (used by the rank study).
inline std::vector<TrajectoryWind> reproject(const WindReduction& red, int rank) {
  std::vector<TrajectoryWind> out(red.pdfs.size());
  for (std::size_t ti = 0; ti < red.pdfs.size(); ++ti) {
    for (const auto& day : red.pdfs[ti]) {
      std::vector<Eigen::VectorXd> per_l;
      for (const auto& p : day) per_l.push_back(project(pdf_column(p), red.basis, rank));
      out[ti].push_back(std::move(per_l));
    }
  }
  return out;
}

/// Concatenates a trajectory's wind coordinates over basis functions for each day:
/// w_k in R^{N_w N_rbf}.
inline std::vector<Eigen::VectorXd> concat_days(const TrajectoryWind& w) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& day : w) {
    Eigen::Index total = 0;
    for (const auto& v : day) total += v.size();
    Eigen::VectorXd c(total);
    Eigen::Index off = 0;
    for (const auto& v : day) {
      c.segment(off, v.size()) = v;
      off += v.size();
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace plume::wind
