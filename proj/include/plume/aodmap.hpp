#pragma once

// Stationary linear map from sulfate RBF coordinates to AOD RBF coordinates.

#include <Eigen/Dense>
#include <sstream>
#include <vector>

#include "plume/error.hpp"

namespace plume::aod {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct AodMapParams {
  Mat L;                // q = L s
  Vec r_squared;        // per output component
  double train_rmse = 0.0;
  std::size_t n_samples = 0;
  double shape_min = 1e-3;
};

/// Ordinary least squares without intercept over pooled (s, q) pairs.
inline AodMapParams fit(const std::vector<Vec>& s, const std::vector<Vec>& q, double rank_tol = 1e-12) {
  if (s.empty() || s.size() != q.size()) throw DataError("aod map: need matching non-empty sample lists");
  const Eigen::Index dim = s.front().size();
  const auto n = static_cast<Eigen::Index>(s.size());
  Mat X(n, dim), Q(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s[static_cast<std::size_t>(i)].size() != dim || q[static_cast<std::size_t>(i)].size() != dim) {
      throw DataError("aod map: inconsistent coordinate dimension");
    }
    X.row(i) = s[static_cast<std::size_t>(i)].transpose();
    Q.row(i) = q[static_cast<std::size_t>(i)].transpose();
  }
  if (!X.allFinite() || !Q.allFinite()) throw DataError("aod map: non-finite samples");

  // Columns differ by ~10 orders of magnitude (degrees vs grams); scale before the Gram solve.
  Vec scale = X.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < dim; ++j) if (scale[j] == 0.0) scale[j] = 1.0;
  const Mat Xs = X * scale.cwiseInverse().asDiagonal();
  const Mat G = Xs.transpose() * Xs;
  Eigen::SelfAdjointEigenSolver<Mat> eig(G);
  const double emax = eig.eigenvalues().maxCoeff();
  std::ostringstream bad;
  int deficient = 0;
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (eig.eigenvalues()[j] <= rank_tol * std::max(emax, 1e-300)) {
      bad << (deficient++ ? "; " : "") << "[" << eig.eigenvectors().col(j).transpose() << "]";
    }
  }
  if (deficient > 0) {
    throw DataError("aod map: rank-deficient design (" + std::to_string(deficient) +
                    " direction(s) in scaled sulfate coordinates: " + bad.str() + ")");
  }
  const Mat B = G.llt().solve(Xs.transpose() * Q);  // scaled L^T
  AodMapParams out;
  out.L = (scale.cwiseInverse().asDiagonal() * B).transpose();
  out.n_samples = static_cast<std::size_t>(n);

  const Mat R = Q - X * out.L.transpose();
  out.r_squared.resize(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double ss_tot = (Q.col(j).array() - Q.col(j).mean()).square().sum();
    out.r_squared[j] = ss_tot > 0 ? 1.0 - R.col(j).squaredNorm() / ss_tot : 1.0;
  }
  out.train_rmse = std::sqrt(R.squaredNorm() / static_cast<double>(R.size()));
  return out;
}

struct Applied {
  Vec q;
  std::size_t clamped = 0;
};

/// q = L s, with non-positive shapes raised to shape_min.
inline Applied apply(const AodMapParams& p, const Vec& s) {
  if (s.size() != p.L.cols()) throw DataError("aod map: coordinate dimension mismatch");
  if (!s.allFinite()) throw NumericalError("aod map: non-finite input");
  Applied out{p.L * s, 0};
  for (Eigen::Index l = 1; l < out.q.size(); l += 3) {
    if (out.q[l] <= 0.0) {
      out.q[l] = p.shape_min;
      ++out.clamped;
    }
  }
  return out;
}

}  // namespace plume::aod
