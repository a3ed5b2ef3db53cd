#pragma once

// Validation instruments: reaction-rate series, Mahalanobis distance, relative errors and
// sulfur mass-loss curves.

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "plume/datagen.hpp"
#include "plume/error.hpp"
#include "plume/flowmap.hpp"
#include "plume/rbf.hpp"

namespace plume::diag {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ReactionRates {
  std::vector<double> lambda;  // n = 0..N_t-1
  std::vector<bool> defined;   // false where alpha_n <= 0

  /// Population standard deviation over the defined entries.
  double stddev() const {
    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
      if (!defined[i]) continue;
      sum += lambda[i];
      ++n;
    }
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    const double mean = sum / n;
    for (std::size_t i = 0; i < lambda.size(); ++i) if (defined[i]) sq += (lambda[i] - mean) * (lambda[i] - mean);
    return std::sqrt(sq / n);
  }

  std::size_t n_undefined() const {
    std::size_t n = 0;
    for (bool d : defined) n += d ? 0u : 1u;
    return n;
  }
};

/// lambda_n = (alpha_{n+1} - alpha_n) / alpha_n for n = 0..N_t-1.
inline ReactionRates reaction_rate(std::span<const double> alpha) {
  ReactionRates r;
  for (std::size_t n = 0; n + 1 < alpha.size(); ++n) {
    const bool ok = alpha[n] > 0.0;
    r.defined.push_back(ok);
    r.lambda.push_back(ok ? (alpha[n + 1] - alpha[n]) / alpha[n] : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

/// sqrt((w - mu)^T Sigma^+ (w - mu)) with singular values below tol * s_max dropped.
inline double mahalanobis(const std::vector<Vec>& train, const Vec& w, double tol = 1e-10) {
  if (train.size() < 2) throw DataError("mahalanobis: need at least 2 training samples");
  const Eigen::Index n = w.size();
  Vec mu = Vec::Zero(n);
  for (const auto& t : train) {
    if (t.size() != n) throw DataError("mahalanobis: dimension mismatch");
    mu += t;
  }
  mu /= static_cast<double>(train.size());
  Mat X(n, static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = train[i] - mu;
  // Sigma = X X^T / (n-1) = U S^2 U^T / (n-1); the pseudo-inverse keeps the leading directions.
  Eigen::BDCSVD<Mat> svd(X, Eigen::ComputeThinU);
  const Vec s = svd.singularValues();
  const Vec proj = svd.matrixU().transpose() * (w - mu);
  const double cut = tol * (s.size() ? s[0] * s[0] : 0.0);
  double d2 = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    const double ev = s[k] * s[k];
    if (ev > cut && ev > 0.0) d2 += proj[k] * proj[k] * static_cast<double>(train.size() - 1) / ev;
  }
  return std::sqrt(d2);
}

inline double relative_l2(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("relative_l2: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  if (den == 0.0) throw DataError("relative_l2: reference has zero norm");
  return std::sqrt(num / den);
}

struct MassLossCurve {
  std::vector<double> raw;  // S(t)/S(0) from raw grid sums
  std::vector<double> fit;  // S(t)/S(0) from basis masses of the fits
};

/// Sulfur-mole ratios S(t)/S(0) of one trajectory from raw sums and from its RBF fits.
inline MassLossCurve mass_loss_curve(const datagen::Trajectory& t, const datagen::SimulationConfig& cfg,
                                     const std::vector<rbf::FitResult>& so2, const std::vector<rbf::FitResult>& sulfate) {
  const auto n = static_cast<std::size_t>(cfg.n_lon);
  MassLossCurve c;
  const auto fit_moles = [&](std::size_t d) {
    return rbf::total_mass(so2[d].coords) / cfg.molar_mass_so2 + rbf::total_mass(sulfate[d].coords) / cfg.molar_mass_sulfate;
  };
  const double raw0 = datagen::sulfur_moles(t, n, 0, cfg), fit0 = fit_moles(0);
  for (std::size_t d = 0; d < static_cast<std::size_t>(cfg.n_days); ++d) {
    c.raw.push_back(datagen::sulfur_moles(t, n, d, cfg) / raw0);
    c.fit.push_back(fit_moles(d) / fit0);
  }
  return c;
}

/// Mean relative l2 prediction error of a flow map over trajectories: for each trajectory
/// and species (SO2, sulfate), decoded predictions on days 1..N_t against the raw fields,
/// stacked over days.
inline double prediction_error(const flow::FlowMapParams& p, const datagen::RawDataset& ds,
                               const std::vector<flow::Sample>& samples, datagen::Split split) {
  double total = 0.0;
  int count = 0;
  const std::size_t n = ds.grid.n_lon();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& t = ds.trajectories[i];
    if (t.split != split) continue;
    const auto& s = samples[i];
    const auto ro = flow::rollout(p, s.r[0], std::vector<Vec>(s.w.begin(), s.w.end() - 1));
    std::vector<double> pred_a, pred_b, raw_a, raw_b;
    for (std::size_t k = 1; k < ro.r.size(); ++k) {
      const auto fa = rbf::eval_basis(rbf::Coords::from_vector(ro.r[k]), {}, ds.grid.lon);
      const auto fb = rbf::eval_basis(rbf::Coords::from_vector(ro.s[k]), {}, ds.grid.lon);
      const auto ra = datagen::day_slice(t.alpha_v, n, k), rb = datagen::day_slice(t.beta_v, n, k);
      pred_a.insert(pred_a.end(), fa.begin(), fa.end());
      pred_b.insert(pred_b.end(), fb.begin(), fb.end());
      raw_a.insert(raw_a.end(), ra.begin(), ra.end());
      raw_b.insert(raw_b.end(), rb.begin(), rb.end());
    }
    total += relative_l2(pred_a, raw_a) + relative_l2(pred_b, raw_b);
    count += 2;
  }
  if (count == 0) throw DataError("prediction_error: no trajectories in the requested split");
  return total / count;
}

}  // namespace plume::diag
