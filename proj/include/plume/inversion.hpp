#pragma once

// Bayesian inversion for the initial SO2 coordinates r_0 from AOD observations: composed
// observable map, background and wind-error (BAE) noise model, multistart MAP and Laplace.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "plume/aodmap.hpp"
#include "plume/autodiff.hpp"
#include "plume/datagen.hpp"
#include "plume/error.hpp"
#include "plume/flowmap.hpp"
#include "plume/optim.hpp"
#include "plume/parallel.hpp"
#include "plume/random.hpp"
#include "plume/rbf.hpp"

namespace plume::inv {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using WindSeries = std::vector<Vec>;  // w_0, w_1, ... (at least n_days entries used)

struct ObservationOperator {
  std::vector<double> lon;
  int n_days = 9;  // observed days 1..n_days

  static ObservationOperator uniform(int n_obs, int n_days, double period = 360.0) {
    if (n_obs < 1 || n_days < 1) throw ConfigError("observation operator needs n_obs >= 1 and n_days >= 1");
    ObservationOperator o;
    o.n_days = n_days;
    for (int i = 0; i < n_obs; ++i) o.lon.push_back(period * i / n_obs);
    return o;
  }

  std::size_t n_obs() const { return lon.size(); }
  Eigen::Index size() const { return static_cast<Eigen::Index>(lon.size()) * n_days; }

  void validate(double period = 360.0) const {
    if (lon.empty() || n_days < 1) throw ConfigError("observation operator needs n_obs >= 1 and n_days >= 1");
    for (double x : lon) {
      if (!(x >= 0.0 && x < period)) throw ConfigError("observation longitude outside [0, period)");
    }
  }
};

/// Basis evaluation at the observation points for days 1..n_days, day-major.
inline Vec observe(const ObservationOperator& obs, const std::vector<rbf::Coords>& q,
                   const rbf::PeriodicDomain& domain = {}) {
  if (static_cast<int>(q.size()) < obs.n_days) throw DataError("observe: fewer coordinate days than observed days");
  Vec out(obs.size());
  for (int k = 0; k < obs.n_days; ++k) {
    const auto v = rbf::eval_basis(q[static_cast<std::size_t>(k)], domain, obs.lon);
    for (std::size_t j = 0; j < v.size(); ++j) out[k * static_cast<Eigen::Index>(obs.n_obs()) + static_cast<Eigen::Index>(j)] = v[j];
  }
  return out;
}

/// Gridded [day][lon] field sampled at the observation points for days 1..n_days by periodic
/// linear interpolation (exact when the points sit on the grid).
inline Vec sample_field(const ObservationOperator& obs, const datagen::Grid& grid, const std::vector<double>& field) {
  const std::size_t n = grid.n_lon();
  if (field.size() < n * static_cast<std::size_t>(obs.n_days + 1)) throw DataError("sample_field: field has too few days");
  const double dl = grid.dlon();
  Vec out(obs.size());
  for (int k = 0; k < obs.n_days; ++k) {
    const auto day = datagen::day_slice(field, n, static_cast<std::size_t>(k + 1));
    for (std::size_t j = 0; j < obs.n_obs(); ++j) {
      const double pos = (obs.lon[j] - grid.lon[0]) / dl;
      const double fl = std::floor(pos);
      const double t = pos - fl;
      const auto i0 = static_cast<std::size_t>(((static_cast<long>(fl) % static_cast<long>(n)) + static_cast<long>(n)) % static_cast<long>(n));
      const std::size_t i1 = (i0 + 1) % n;
      out[k * static_cast<Eigen::Index>(obs.n_obs()) + static_cast<Eigen::Index>(j)] =
          t == 0.0 ? day[i0] : (1.0 - t) * day[i0] + t * day[i1];
    }
  }
  return out;
}

struct Models {
  flow::FlowMapParams flow;
  aod::AodMapParams aod;
  rbf::PeriodicDomain domain;
};

/// Single-wind observable A(r_0, w): rollout, conservation map, AOD map, observation.
inline Vec forward(const Models& m, const ObservationOperator& obs, const Vec& r0, const WindSeries& w) {
  if (static_cast<int>(w.size()) < obs.n_days) throw DataError("forward: wind series shorter than the observed window");
  const auto ro = flow::rollout(m.flow, r0, WindSeries(w.begin(), w.begin() + obs.n_days));
  std::vector<rbf::Coords> q;
  for (int k = 1; k <= obs.n_days; ++k) q.push_back(rbf::Coords::from_vector(aod::apply(m.aod, ro.s[static_cast<std::size_t>(k)]).q));
  return observe(obs, q, m.domain);
}

/// Mean observable over the wind ensemble on the tape; u0 is the transformed r_0 (3N x 1).
/// Every ensemble member is one batch column.
inline ad::Var forward_mean_tape(ad::Tape& tape, const Models& m, const ObservationOperator& obs, ad::Var u0,
                                 const std::vector<WindSeries>& ensemble) {
  const auto& p = m.flow;
  const auto n_rbf = p.n_rbf;
  const auto dim = static_cast<Eigen::Index>(3 * n_rbf);
  const auto batch = static_cast<Eigen::Index>(ensemble.size());
  if (batch == 0) throw DataError("forward_mean: empty wind ensemble");
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    if (static_cast<int>(ensemble[i].size()) < obs.n_days) {
      throw DataError("forward_mean: wind sample " + std::to_string(i) + " shorter than the observed window");
    }
  }
  const auto rows_x = flow::detail::channel_rows(n_rbf, 0), rows_a = flow::detail::channel_rows(n_rbf, 1),
             rows_m = flow::detail::channel_rows(n_rbf, 2);
  const auto pv = flow::place(tape, p);
  const ad::Var L = tape.leaf(m.aod.L);
  Vec floor = Vec::Constant(dim, -std::numeric_limits<double>::infinity());
  for (int l = 0; l < n_rbf; ++l) floor[3 * l + 1] = m.aod.shape_min;
  const double ratio = p.molar_sulfate / p.molar_so2;

  ad::Var u = ad::broadcast_cols(u0, batch);
  const ad::Var m0 = ad::select_rows(u, rows_m);
  std::vector<ad::Var> days;
  for (int k = 0; k < obs.n_days; ++k) {
    Mat w(p.wind_dim(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) w.col(b) = ensemble[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
    u = flow::step_transformed(p, pv, u, flow::standardize_wind(p, w));
    const ad::Var x = ad::select_rows(u, rows_x), a = ad::select_rows(u, rows_a);
    const ad::Var ms = ad::add(ad::scale(ad::select_rows(u, rows_m), -ratio), ad::scale(m0, ratio + p.rho0));
    const ad::Var s = ad::add(ad::add(ad::scatter_rows(x, rows_x, dim), ad::scatter_rows(a, rows_a, dim)),
                              ad::scatter_rows(ad::cmul(a, ms), rows_m, dim));
    const ad::Var q = ad::clamp_rows(ad::matmul(L, s), floor);
    const ad::Var y = ad::rbf_eval(ad::select_rows(q, rows_x), ad::select_rows(q, rows_a), ad::select_rows(q, rows_m),
                                   obs.lon, m.domain);
    days.push_back(ad::mean_cols(y));
  }
  return ad::vstack(days);
}

inline Vec forward_mean(const Models& m, const ObservationOperator& obs, const Vec& r0,
                        const std::vector<WindSeries>& ensemble) {
  ad::Tape tape;
  return forward_mean_tape(tape, m, obs, tape.leaf(flow::transform(r0)), ensemble).value().col(0);
}

struct Moments {
  Vec mean;
  Mat cov;
};

/// Empirical mean and unbiased covariance by two passes, symmetrized.
inline Moments moments(const std::vector<Vec>& samples) {
  if (samples.size() < 2) throw DataError("need at least 2 samples for a covariance");
  const Eigen::Index n = samples.front().size();
  Moments out{Vec::Zero(n), Mat::Zero(n, n)};
  // Shifted by the first sample: identical samples give their value and zero spread exactly.
  for (const auto& s : samples) out.mean += s - samples.front();
  out.mean = samples.front() + out.mean / static_cast<double>(samples.size());
  Mat X(n, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = samples[i] - out.mean;
  out.cov = X * X.transpose() / static_cast<double>(samples.size() - 1);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

/// Background AOD statistics over the given (training) trajectories.
inline Moments estimate_background(const std::vector<const datagen::Trajectory*>& train, const datagen::Grid& grid,
                                   const ObservationOperator& obs) {
  if (train.size() < 2) throw DataError("background statistics need at least 2 trajectories");
  std::vector<Vec> y;
  for (const auto* t : train) y.push_back(sample_field(obs, grid, t->rho_b));
  return moments(y);
}

/// Wind-variability statistics at the prior mean. mu is the mean of the centered samples.
inline Moments estimate_bae(const Models& m, const ObservationOperator& obs, const Vec& prior_mean,
                            const std::vector<WindSeries>& ensemble, int jobs = 1) {
  std::vector<Vec> y(ensemble.size());
  parallel_for(ensemble.size(), jobs, [&](std::size_t i) { y[i] = forward(m, obs, prior_mean, ensemble[i]); });
  if (y.size() == 1) return {Vec::Zero(obs.size()), Mat::Zero(obs.size(), obs.size())};
  auto mom = moments(y);
  Vec centered = Vec::Zero(obs.size());
  for (const auto& v : y) centered += v - mom.mean;
  mom.mean = centered / static_cast<double>(y.size());
  return mom;
}

/// Alternative estimator: deviations A(r_i, w_i) - E_w[A(r_i, .)] with r_i drawn from the prior.
inline Moments estimate_bae_sampled(const Models& m, const ObservationOperator& obs,
                                    const std::function<Vec(Rng&)>& draw_prior, const std::vector<WindSeries>& ensemble,
                                    int n_samples, std::uint64_t seed, int jobs = 1) {
  std::vector<Vec> dev(static_cast<std::size_t>(n_samples));
  parallel_for(dev.size(), jobs, [&](std::size_t i) {
    Rng rng(mix_seed(seed, i));
    const Vec r0 = draw_prior(rng);
    const auto& w = ensemble[static_cast<std::size_t>(rng.below(ensemble.size()))];
    dev[i] = forward(m, obs, r0, w) - forward_mean(m, obs, r0, ensemble);
  });
  return moments(dev);
}

struct BaeLikelihood {
  Vec mu_nu, mu_bae;
  Mat sigma_nu, sigma_bae;
  double sigma_noise = 0.01;
  Vec mu;
  Mat sigma;
  Mat chol;  // lower factor of sigma

  /// Sigma = sigma_noise^2 I + Sigma_nu + Sigma_BAE; mu = mu_nu + mu_BAE.
  static BaeLikelihood assemble(Moments background, Moments bae, double sigma_noise, bool use_background = true,
                                bool use_bae = true) {
    if (!(sigma_noise > 0.0)) throw ConfigError("sigma_noise must be positive");
    const Eigen::Index n = background.mean.size();
    if (bae.mean.size() != n || background.cov.rows() != n || bae.cov.rows() != n) {
      throw DataError("likelihood blocks have inconsistent sizes");
    }
    BaeLikelihood l;
    l.sigma_noise = sigma_noise;
    l.mu_nu = use_background ? background.mean : Vec::Zero(n);
    l.sigma_nu = use_background ? background.cov : Mat::Zero(n, n);
    l.mu_bae = use_bae ? bae.mean : Vec::Zero(n);
    l.sigma_bae = use_bae ? bae.cov : Mat::Zero(n, n);
    l.mu = l.mu_nu + l.mu_bae;
    l.sigma = l.sigma_nu + l.sigma_bae;
    l.sigma.diagonal().array() += sigma_noise * sigma_noise;
    l.sigma = 0.5 * (l.sigma + l.sigma.transpose()).eval();
    Eigen::LLT<Mat> llt(l.sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("likelihood covariance is not positive definite");
    l.chol = llt.matrixL();
    return l;
  }

  /// Leading block for the first n entries (earlier days under day-major order).
  BaeLikelihood leading(Eigen::Index n) const {
    return assemble({mu_nu.head(n), sigma_nu.topLeftCorner(n, n)}, {mu_bae.head(n), sigma_bae.topLeftCorner(n, n)},
                    sigma_noise);
  }

  /// Whitened residual L^{-1}(pred + mu - d).
  Vec whiten(const Vec& pred, const Vec& d) const {
    return chol.triangularView<Eigen::Lower>().solve(pred + mu - d);
  }

  double log_likelihood(const Vec& pred, const Vec& d) const { return -0.5 * whiten(pred, d).squaredNorm(); }

  /// Sigma^{-1} (pred + mu - d) by two triangular solves.
  Vec precision_times_residual(const Vec& pred, const Vec& d) const {
    return chol.transpose().triangularView<Eigen::Upper>().solve(whiten(pred, d));
  }
};

struct Prior {
  Vec mean;
  Mat cov;
  Mat chol;

  static Prior make(Vec mean, Mat cov) {
    Prior p{std::move(mean), std::move(cov), {}};
    Eigen::LLT<Mat> llt(p.cov);
    if (llt.info() != Eigen::Success) throw ConfigError("prior covariance must be symmetric positive definite");
    p.chol = llt.matrixL();
    return p;
  }

  Vec draw(Rng& rng) const {
    Vec z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return mean + chol * z;
  }

  double neg_log(const Vec& r0) const {
    return 0.5 * chol.triangularView<Eigen::Lower>().solve(r0 - mean).squaredNorm();
  }

  Vec neg_log_gradient(const Vec& r0) const { return Eigen::LLT<Mat>(cov).solve(r0 - mean); }
};

/// Default prior: a Gaussian bump of the given mass at the volcano with independent
/// per-coordinate spreads (center in degrees, shape and coefficient relative).
struct PriorConfig {
  double mass_tg = 9.0;
  double center_deg = 120.0;
  double width_deg = 8.0;  // Gaussian standard deviation of the bump
  double center_std_deg = 10.0;
  double shape_rel_std = 0.3;
  double coeff_rel_std = 0.6;
};

inline Prior default_prior(const PriorConfig& c, int n_rbf = 1) {
  Vec mean(3 * n_rbf), sd(3 * n_rbf);
  const double a = 1.0 / (std::sqrt(2.0) * c.width_deg);
  const double coeff = c.mass_tg * 1e12 / n_rbf * a / std::sqrt(std::numbers::pi);
  for (int l = 0; l < n_rbf; ++l) {
    mean.segment(3 * l, 3) << c.center_deg, a, coeff;
    sd.segment(3 * l, 3) << c.center_std_deg, c.shape_rel_std * a, c.coeff_rel_std * coeff;
  }
  return Prior::make(mean, sd.cwiseAbs2().asDiagonal());
}

/// Negative log posterior in r_0 with the mean observable over a wind ensemble.
struct InverseProblem {
  const Models* models = nullptr;
  ObservationOperator obs;
  std::vector<WindSeries> ensemble;
  BaeLikelihood like;
  Prior prior;
  Vec data;
  bool use_prior = true;

  /// Value and gradient with respect to the transformed state u_0 = (x, a, c/a).
  double value_u(const Vec& u0, Vec* grad_u) const {
    ad::Tape tape;
    const ad::Var u = tape.leaf(u0);
    const ad::Var pred = forward_mean_tape(tape, *models, obs, u, ensemble);
    const Vec r0 = flow::inverse_transform(u0);
    double f = -like.log_likelihood(pred.value().col(0), data);
    if (use_prior) f += prior.neg_log(r0);
    if (grad_u) {
      tape.backward(pred, like.precision_times_residual(pred.value().col(0), data));
      *grad_u = tape.gradient(u).col(0);
      if (use_prior) *grad_u += transform_jacobian_t(u0, prior.neg_log_gradient(r0));
    }
    return f;
  }

  double value(const Vec& r0, Vec* grad_r) const {
    Vec gu;
    const double f = value_u(flow::transform(r0), grad_r ? &gu : nullptr);
    if (grad_r) {
      // u = (x, a, c/a): dm/da = -c/a^2, dm/dc = 1/a.
      *grad_r = gu;
      for (Eigen::Index i = 0; i + 2 < r0.size(); i += 3) {
        (*grad_r)[i + 1] = gu[i + 1] - gu[i + 2] * r0[i + 2] / (r0[i + 1] * r0[i + 1]);
        (*grad_r)[i + 2] = gu[i + 2] / r0[i + 1];
      }
    }
    return f;
  }

  /// Pulls a gradient with respect to r back to u: r = (x, a, a m).
  static Vec transform_jacobian_t(const Vec& u0, const Vec& gr) {
    Vec gu = gr;
    for (Eigen::Index i = 0; i + 2 < u0.size(); i += 3) {
      gu[i + 1] = gr[i + 1] + gr[i + 2] * u0[i + 2];
      gu[i + 2] = gr[i + 2] * u0[i + 1];
    }
    return gu;
  }
};

/// Unconstrained optimization variables theta = ((x - x_ref)/x_scale, log a, log c).
struct Parameterization {
  Vec x_ref, x_scale;  // per RBF

  static Parameterization from_prior(const Prior& p) {
    const auto n = p.mean.size() / 3;
    Parameterization t{Vec(n), Vec(n)};
    for (Eigen::Index l = 0; l < n; ++l) {
      t.x_ref[l] = p.mean[3 * l];
      t.x_scale[l] = std::sqrt(p.cov(3 * l, 3 * l));
    }
    return t;
  }

  Vec to_theta(const Vec& r0) const {
    Vec th(r0.size());
    for (Eigen::Index l = 0; 3 * l + 2 < r0.size(); ++l) {
      if (!(r0[3 * l + 1] > 0.0) || !(r0[3 * l + 2] > 0.0)) throw DomainError("theta parameterization needs a > 0 and c > 0");
      th[3 * l] = (r0[3 * l] - x_ref[l]) / x_scale[l];
      th[3 * l + 1] = std::log(r0[3 * l + 1]);
      th[3 * l + 2] = std::log(r0[3 * l + 2]);
    }
    return th;
  }

  Vec to_r(const Vec& th) const {
    Vec r(th.size());
    for (Eigen::Index l = 0; 3 * l + 2 < th.size(); ++l) {
      r[3 * l] = x_ref[l] + x_scale[l] * th[3 * l];
      r[3 * l + 1] = std::exp(th[3 * l + 1]);
      r[3 * l + 2] = std::exp(th[3 * l + 2]);
    }
    return r;
  }

  /// dJ/dtheta from dJ/dr at r.
  Vec pull_gradient(const Vec& r, const Vec& gr) const {
    Vec g(r.size());
    for (Eigen::Index l = 0; 3 * l + 2 < r.size(); ++l) {
      g[3 * l] = gr[3 * l] * x_scale[l];
      g[3 * l + 1] = gr[3 * l + 1] * r[3 * l + 1];
      g[3 * l + 2] = gr[3 * l + 2] * r[3 * l + 2];
    }
    return g;
  }
};

struct MapOptions {
  int starts = 8;
  std::uint64_t seed = 3;
  double shape_min = 1e-3;
  optim::LbfgsOptions lbfgs{};
  int jobs = 1;
};

struct StartReport {
  Vec start;
  Vec r0;
  double objective = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool failed = false;
  std::string message;
  std::vector<double> trace;
};

struct MapResult {
  Vec r0;
  double objective = 0.0;
  std::size_t best = 0;
  std::vector<StartReport> starts;
};

/// Feasible starting point drawn from the prior (redrawn until a > shape_min and c > 0).
inline Vec draw_start(const Prior& prior, std::uint64_t seed, double shape_min) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Vec r = prior.draw(rng);
    bool ok = true;
    for (Eigen::Index i = 0; i + 2 < r.size(); i += 3) ok = ok && r[i + 1] > shape_min && r[i + 2] > 0.0;
    if (ok) return r;
  }
  throw NumericalError("could not draw a feasible start from the prior");
}

/// Multistart quasi-Newton MAP search. Explicit starts replace the prior draws when given.
inline MapResult map_estimate(const InverseProblem& prob, const MapOptions& opt, std::vector<Vec> starts = {}) {
  if (starts.empty()) {
    if (opt.starts < 1) throw ConfigError("need at least one start");
    for (int s = 0; s < opt.starts; ++s) starts.push_back(draw_start(prob.prior, mix_seed(opt.seed, static_cast<std::uint64_t>(s)), opt.shape_min));
  }
  const auto par = Parameterization::from_prior(prob.prior);
  MapResult out;
  out.starts.resize(starts.size());
  parallel_for(starts.size(), opt.jobs, [&](std::size_t s) {
    auto& rep = out.starts[s];
    rep.start = starts[s];
    const optim::Objective fn = [&](const Vec& th, Vec& g) {
      const Vec r = par.to_r(th);
      Vec gr;
      try {
        const double f = prob.value(r, &gr);
        g = par.pull_gradient(r, gr);
        return f;
      } catch (const NumericalError&) {
        g = Vec::Constant(th.size(), std::numeric_limits<double>::quiet_NaN());
        return std::numeric_limits<double>::quiet_NaN();
      }
    };
    const auto res = optim::lbfgs(fn, par.to_theta(starts[s]), opt.lbfgs);
    rep.r0 = res.iterations == 0 ? starts[s] : par.to_r(res.x);
    rep.objective = res.f;
    rep.iterations = res.iterations;
    rep.evaluations = res.evaluations;
    rep.converged = res.converged;
    rep.failed = res.line_search_failed && res.iterations == 0;
    rep.message = res.message;
    rep.trace = res.trace;
  });
  bool any = false;
  for (std::size_t s = 0; s < out.starts.size(); ++s) {
    const auto& rep = out.starts[s];
    if (rep.failed || !std::isfinite(rep.objective)) continue;
    if (!any || rep.objective < out.objective) {
      out.objective = rep.objective;
      out.best = s;
      any = true;
    }
  }
  if (!any) {
    std::string trace;
    for (std::size_t s = 0; s < out.starts.size(); ++s) trace += " [start " + std::to_string(s) + ": " + out.starts[s].message + "]";
    throw NumericalError("optimization failed for every start:" + trace);
  }
  out.r0 = out.starts[out.best].r0;
  return out;
}

struct Laplace {
  Vec mean;
  Mat hessian;
  Mat covariance;
  Mat chol;
  bool regularized = false;
  double floor = 0.0;

  std::vector<Vec> sample(std::size_t n, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec z(mean.size());
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
      out.push_back(mean + chol * z);
    }
    return out;
  }
};

/// Gaussian approximation at x from a central-difference Hessian of the gradient.
inline Laplace laplace(const std::function<Vec(const Vec&)>& gradient, const Vec& x, const Vec& step) {
  const Eigen::Index n = x.size();
  Laplace out;
  out.mean = x;
  out.hessian.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec xp = x, xm = x;
    xp[i] += step[i];
    xm[i] -= step[i];
    out.hessian.col(i) = (gradient(xp) - gradient(xm)) / (2.0 * step[i]);
  }
  out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
  Eigen::LLT<Mat> llt(out.hessian);
  if (llt.info() == Eigen::Success) {
    out.covariance = llt.solve(Mat::Identity(n, n));
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> eig(out.hessian);
    Vec lam = eig.eigenvalues();
    out.floor = 1e-8 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
    lam = lam.cwiseMax(out.floor);
    out.regularized = true;
    out.covariance = eig.eigenvectors() * lam.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  Eigen::LLT<Mat> cov_llt(out.covariance);
  if (cov_llt.info() != Eigen::Success) throw NumericalError("Laplace covariance is not positive definite");
  out.chol = cov_llt.matrixL();
  return out;
}

/// Laplace approximation of the posterior in raw r_0 coordinates at the MAP point.
inline Laplace posterior_laplace(const InverseProblem& prob, const Vec& r_map, double rel_step = 1e-4) {
  Vec step(r_map.size());
  for (Eigen::Index i = 0; i < step.size(); ++i) step[i] = rel_step * std::sqrt(prob.prior.cov(i, i));
  return laplace([&](const Vec& r) {
    Vec g;
    prob.value(r, &g);
    return g;
  }, r_map, step);
}

/// d = (volcanic + background AOD) at the observation points + N(0, sigma_obs^2).
inline Vec synthesize_observations(const datagen::Trajectory& t, const datagen::Grid& grid,
                                   const ObservationOperator& obs, double sigma_obs, std::uint64_t seed) {
  std::vector<double> total(t.rho_v.size());
  for (std::size_t i = 0; i < total.size(); ++i) total[i] = t.rho_v[i] + t.rho_b[i];
  Vec d = sample_field(obs, grid, total);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] += sigma_obs * rng.normal();
  return d;
}

/// Decoded SO2 field of r_0 on the model grid. Negative coefficients are allowed.
inline std::vector<double> decode(const Vec& r0, const std::vector<double>& lon, const rbf::PeriodicDomain& domain = {}) {
  std::vector<double> out(lon.size(), 0.0);
  for (Eigen::Index l = 0; 3 * l + 2 < r0.size(); ++l) {
    const rbf::Term t{r0[3 * l], r0[3 * l + 1], r0[3 * l + 2]};
    if (!(t.shape > 0.0)) continue;
    for (std::size_t i = 0; i < lon.size(); ++i) out[i] += rbf::eval_term(t, lon[i], domain);
  }
  return out;
}

}  // namespace plume::inv
