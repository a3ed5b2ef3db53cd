#pragma once

// Periodized Gaussian radial basis functions on a longitude circle: evaluation,
// closed-form mass, and the block-coordinate nonlinear least-squares fit.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plume/error.hpp"

namespace plume::rbf {

/// One periodized Gaussian c * sum_m exp(-a^2 |x + mL - center|^2).
/// `center` is an unconstrained real; it is reduced modulo the period only for evaluation
/// and reporting so optimization is smooth across the 0/360 seam.
struct Term {
  double center = 0.0;  // degrees
  double shape = 1.0;   // 1/degrees, > 0
  double coeff = 0.0;   // field units, >= 0 for aerosol fields
};

/// Reduced plume state: N_rbf terms, optionally tagged with a day index.
struct Coords {
  std::vector<Term> terms;
  int day = -1;

  std::size_t size() const { return terms.size(); }

  /// Flat (x, a, c) per term, term-major.
  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(3 * terms.size());
    for (std::size_t l = 0; l < terms.size(); ++l) {
      v[3 * l] = terms[l].center;
      v[3 * l + 1] = terms[l].shape;
      v[3 * l + 2] = terms[l].coeff;
    }
    return v;
  }

  static Coords from_vector(const Eigen::Ref<const Eigen::VectorXd>& v, int day = -1) {
    if (v.size() % 3 != 0) throw DataError("rbf coordinate vector length must be a multiple of 3");
    Coords c;
    c.day = day;
    c.terms.resize(static_cast<std::size_t>(v.size() / 3));
    for (std::size_t l = 0; l < c.terms.size(); ++l) {
      c.terms[l] = {v[3 * l], v[3 * l + 1], v[3 * l + 2]};
    }
    return c;
  }
};

struct PeriodicDomain {
  double period = 360.0;
  /// Image-sum truncation order; 0 selects it per term from the shape (see image_count).
  int truncation = 0;
};

/// Reduces x into [0, period).
inline double wrap(double x, double period = 360.0) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  if (r >= period) r -= period;
  return r;
}

/// Image count M = ceil(8 / (a L)) + 1: the first dropped image lies at least 8/a away,
/// so its weight is below exp(-64).
inline int image_count(double shape, const PeriodicDomain& domain) {
  if (domain.truncation > 0) return domain.truncation;
  return std::max(1, static_cast<int>(std::ceil(8.0 / (shape * domain.period))) + 1);
}

inline void require_valid(const Term& t) {
  if (!(t.shape > 0.0) || !std::isfinite(t.shape)) {
    throw DomainError("rbf shape must be positive and finite, got " + std::to_string(t.shape));
  }
  if (!std::isfinite(t.center) || !std::isfinite(t.coeff)) {
    throw DomainError("rbf center and coefficient must be finite");
  }
}

/// Value of a single periodized term at longitude x.
inline double eval_term(const Term& t, double x, const PeriodicDomain& domain = {}) {
  const double center = wrap(t.center, domain.period);
  const int m_max = image_count(t.shape, domain);
  const double a2 = t.shape * t.shape;
  double sum = 0.0;
  for (int m = -m_max; m <= m_max; ++m) {
    const double d = x + m * domain.period - center;
    sum += std::exp(-a2 * d * d);
  }
  return t.coeff * sum;
}

/// Sum of all periodized terms evaluated on `grid`.
inline std::vector<double> eval_basis(const Coords& coords, const PeriodicDomain& domain,
                                      std::span<const double> grid) {
  for (const auto& t : coords.terms) require_valid(t);
  std::vector<double> out(grid.size(), 0.0);
  for (const auto& t : coords.terms) {
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] += eval_term(t, grid[i], domain);
  }
  return out;
}

/// Integral of a periodized term over one period, sqrt(pi) c / a. Over one period the
/// image sum integrates to the whole-line Gaussian integral, so no truncation enters.
inline double basis_mass(const Term& t) {
  require_valid(t);
  return std::sqrt(std::numbers::pi) * t.coeff / t.shape;
}

inline std::vector<double> basis_mass(const Coords& coords) {
  std::vector<double> m;
  m.reserve(coords.size());
  for (const auto& t : coords.terms) m.push_back(basis_mass(t));
  return m;
}

inline double total_mass(const Coords& coords) {
  double s = 0.0;
  for (const auto& t : coords.terms) s += basis_mass(t);
  return s;
}

/// Uniform longitude grid of n points on [0, period).
inline std::vector<double> uniform_grid(std::size_t n, double period = 360.0) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = period * static_cast<double>(i) / static_cast<double>(n);
  return g;
}

struct FitOptions {
  PeriodicDomain domain;
  int max_outer = 500;
  int inner_steps = 5;
  double rel_tol = 1e-8;
  double shape_min = 1e-3;
  double shape_max = 10.0;
};

struct FitResult {
  Coords coords;
  double residual = 0.0;       // relative l2 misfit ||model - field|| / ||field||
  bool unidentifiable = false;  // all-zero field: coefficients zero, center/shape from init
  int iterations = 0;
};

namespace detail {

/// Unit-coefficient basis column for each term: B(i, l) = Psi_l(grid_i) with c_l = 1.
inline Eigen::MatrixXd unit_columns(const std::vector<Term>& terms, std::span<const double> grid,
                                    const PeriodicDomain& domain) {
  Eigen::MatrixXd b(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t l = 0; l < terms.size(); ++l) {
    Term unit = terms[l];
    unit.coeff = 1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = eval_term(unit, grid[i], domain);
  }
  return b;
}

/// Non-negative coefficients for fixed centers/shapes: unconstrained least squares,
/// clamped at zero, then re-solved once on the remaining positive set.
inline void solve_coefficients(std::vector<Term>& terms, std::span<const double> grid,
                               const Eigen::VectorXd& field, const PeriodicDomain& domain) {
  const Eigen::MatrixXd b = unit_columns(terms, grid, domain);
  const Eigen::Index n = b.cols();
  std::vector<bool> active(static_cast<std::size_t>(n), true);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index l = 0; l < n; ++l) if (active[static_cast<std::size_t>(l)]) idx.push_back(l);
    c.setZero();
    if (idx.empty()) break;
    Eigen::MatrixXd sub(b.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = b.col(idx[j]);
    const Eigen::MatrixXd gram = sub.transpose() * sub;
    const Eigen::VectorXd rhs = sub.transpose() * field;
    const Eigen::VectorXd sol = gram.ldlt().solve(rhs);
    bool clamped = false;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const double v = std::isfinite(sol[static_cast<Eigen::Index>(j)]) ? sol[static_cast<Eigen::Index>(j)] : 0.0;
      if (v < 0.0) {
        active[static_cast<std::size_t>(idx[j])] = false;
        clamped = true;
      } else {
        c[idx[j]] = v;
      }
    }
    if (!clamped) break;
  }
  for (Eigen::Index l = 0; l < n; ++l) terms[static_cast<std::size_t>(l)].coeff = c[l];
}

inline double misfit(const std::vector<Term>& terms, std::span<const double> grid,
                     const Eigen::VectorXd& field, const PeriodicDomain& domain) {
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double v = 0.0;
    for (const auto& t : terms) v += eval_term(t, grid[i], domain);
    const double e = v - field[static_cast<Eigen::Index>(i)];
    s += e * e;
  }
  return s;
}

/// Gradient of the squared misfit with respect to (center, shape) of every term, and the
/// diagonal of the Gauss-Newton matrix used to scale it.
inline void center_shape_gradient(const std::vector<Term>& terms, std::span<const double> grid,
                                  const Eigen::VectorXd& field, const PeriodicDomain& domain,
                                  Eigen::VectorXd& grad, Eigen::VectorXd& gn_diag) {
  const std::size_t n = terms.size();
  grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n));
  gn_diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n));
  std::vector<double> dx(n), da(n);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double v = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      const Term& t = terms[l];
      const double center = wrap(t.center, domain.period);
      const int m_max = image_count(t.shape, domain);
      const double a2 = t.shape * t.shape;
      double val = 0.0, gx = 0.0, ga = 0.0;
      for (int m = -m_max; m <= m_max; ++m) {
        const double d = grid[i] + m * domain.period - center;
        const double e = std::exp(-a2 * d * d);
        val += e;
        gx += 2.0 * a2 * d * e;
        ga += -2.0 * t.shape * d * d * e;
      }
      v += t.coeff * val;
      dx[l] = t.coeff * gx;
      da[l] = t.coeff * ga;
    }
    const double r = v - field[static_cast<Eigen::Index>(i)];
    for (std::size_t l = 0; l < n; ++l) {
      grad[static_cast<Eigen::Index>(2 * l)] += 2.0 * r * dx[l];
      grad[static_cast<Eigen::Index>(2 * l + 1)] += 2.0 * r * da[l];
      gn_diag[static_cast<Eigen::Index>(2 * l)] += 2.0 * dx[l] * dx[l];
      gn_diag[static_cast<Eigen::Index>(2 * l + 1)] += 2.0 * da[l] * da[l];
    }
  }
}

inline Eigen::VectorXd checked_field(std::span<const double> field, std::span<const double> grid) {
  if (field.size() != grid.size()) throw DataError("rbf fit: field and grid sizes differ");
  if (field.empty()) throw DataError("rbf fit: empty field");
  Eigen::VectorXd f(static_cast<Eigen::Index>(field.size()));
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!std::isfinite(field[i])) throw DataError("rbf fit: non-finite field value at index " + std::to_string(i));
    f[static_cast<Eigen::Index>(i)] = field[i];
  }
  return f;
}

}  // namespace detail

/// Locally minimizes the uniform-weight discrete l2 misfit by alternating (i) a few
/// scaled gradient steps on centers/shapes with Armijo backtracking and (ii) a
/// non-negative linear solve for coefficients. Shapes are kept in [shape_min, shape_max].
inline FitResult fit(std::span<const double> field, std::span<const double> grid, const Coords& init,
                     const FitOptions& opt = {}) {
  const Eigen::VectorXd f = detail::checked_field(field, grid);
  for (const auto& t : init.terms) require_valid(t);
  if (init.terms.empty()) throw ConfigError("rbf fit: at least one basis function required");

  FitResult out;
  out.coords = init;
  const double norm2 = f.squaredNorm();
  if (norm2 == 0.0) {
    for (auto& t : out.coords.terms) t.coeff = 0.0;
    out.unidentifiable = true;
    return out;
  }

  std::vector<Term> terms = init.terms;
  for (auto& t : terms) t.shape = std::clamp(t.shape, opt.shape_min, opt.shape_max);
  detail::solve_coefficients(terms, grid, f, opt.domain);
  double current = detail::misfit(terms, grid, f, opt.domain);

  const double floor = norm2 * 1e-30;
  int outer = 0;
  for (; outer < opt.max_outer && current > floor; ++outer) {
    const double before = current;
    for (int s = 0; s < opt.inner_steps; ++s) {
      Eigen::VectorXd g, diag;
      detail::center_shape_gradient(terms, grid, f, opt.domain, g, diag);
      Eigen::VectorXd dir(g.size());
      for (Eigen::Index j = 0; j < g.size(); ++j) dir[j] = diag[j] > 0.0 ? -g[j] / diag[j] : 0.0;
      const double slope = g.dot(dir);
      if (!(slope < 0.0)) break;
      double step = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 50; ++bt, step *= 0.5) {
        std::vector<Term> trial = terms;
        for (std::size_t l = 0; l < trial.size(); ++l) {
          trial[l].center += step * dir[static_cast<Eigen::Index>(2 * l)];
          trial[l].shape = std::clamp(trial[l].shape + step * dir[static_cast<Eigen::Index>(2 * l + 1)],
                                      opt.shape_min, opt.shape_max);
        }
        const double val = detail::misfit(trial, grid, f, opt.domain);
        if (val <= current + 1e-4 * step * slope) {
          terms = std::move(trial);
          current = val;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    detail::solve_coefficients(terms, grid, f, opt.domain);
    current = detail::misfit(terms, grid, f, opt.domain);
    if (std::abs(before - current) <= opt.rel_tol * before) {
      ++outer;
      break;
    }
  }
  out.coords.terms = terms;
  out.iterations = outer;
  out.residual = std::sqrt(current / norm2);
  return out;
}

/// Coarse search used to seed a fit: every grid longitude as center, log-spaced shapes,
/// exact coefficient. Further terms are placed greedily on the positive residual.
inline Coords initial_guess(std::span<const double> field, std::span<const double> grid, std::size_t n_rbf,
                            const FitOptions& opt = {}) {
  Eigen::VectorXd residual = detail::checked_field(field, grid);
  Coords out;
  constexpr int kShapes = 32;
  const double lo = std::max(opt.shape_min, 2e-3), hi = std::min(opt.shape_max, 2.0);
  for (std::size_t l = 0; l < n_rbf; ++l) {
    Term best{grid.empty() ? 0.0 : grid[0], lo, 0.0};
    double best_score = -1.0;
    for (int s = 0; s < kShapes; ++s) {
      const double shape = lo * std::pow(hi / lo, static_cast<double>(s) / (kShapes - 1));
      for (std::size_t j = 0; j < grid.size(); ++j) {
        Term t{grid[j], shape, 1.0};
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
          const double b = eval_term(t, grid[i], opt.domain);
          num += b * residual[static_cast<Eigen::Index>(i)];
          den += b * b;
        }
        if (den <= 0.0 || num <= 0.0) continue;
        const double score = num * num / den;  // misfit reduction with the optimal coefficient
        if (score > best_score) {
          best_score = score;
          best = {grid[j], shape, num / den};
        }
      }
    }
    out.terms.push_back(best);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      residual[static_cast<Eigen::Index>(i)] = std::max(0.0, residual[static_cast<Eigen::Index>(i)] - eval_term(best, grid[i], opt.domain));
    }
  }
  return out;
}

/// Fits every day of a trajectory. Day 0 starts from the coarse search; each later day
/// is warm-started from the previous day's optimum.
inline std::vector<FitResult> fit_timeseries(const std::vector<std::vector<double>>& days,
                                             std::span<const double> grid, std::size_t n_rbf,
                                             const FitOptions& opt = {}) {
  std::vector<FitResult> out;
  out.reserve(days.size());
  for (std::size_t k = 0; k < days.size(); ++k) {
    Coords init;
    if (k == 0 || out.back().unidentifiable) {
      init = initial_guess(days[k], grid, n_rbf, opt);
      bool any = false;
      for (const auto& t : init.terms) any = any || t.coeff > 0.0;
      if (!any && k > 0) init = out.back().coords;
      for (auto& t : init.terms) t.shape = std::max(t.shape, opt.shape_min);
    } else {
      init = out.back().coords;
    }
    FitResult r = fit(days[k], grid, init, opt);
    r.coords.day = static_cast<int>(k);
    out.push_back(std::move(r));
  }
  return out;
}

/// Makes a center time series continuous by removing jumps of a full period.
inline void unwrap_centers(std::vector<Coords>& series, double period = 360.0) {
  for (std::size_t k = 1; k < series.size(); ++k) {
    for (std::size_t l = 0; l < series[k].size(); ++l) {
      const double prev = series[k - 1].terms[l].center;
      double& cur = series[k].terms[l].center;
      double delta = std::remainder(cur - prev, period);
      cur = prev + delta;
    }
  }
}

}  // namespace plume::rbf
