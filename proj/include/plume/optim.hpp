#pragma once

// Limited-memory BFGS with Armijo backtracking.

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace plume::optim {

using Vec = Eigen::VectorXd;

/// Returns f(x) and writes the gradient.
using Objective = std::function<double(const Vec& x, Vec& grad)>;

struct LbfgsOptions {
  int memory = 8;
  int max_iterations = 300;
  int max_backtracks = 40;
  double armijo = 1e-4;
  double gtol = 1e-8;   // on ||g||_inf / max(1, |f|)
  double ftol = 1e-13;  // relative decrease over one iteration
};

struct LbfgsResult {
  Vec x;
  double f = 0.0;
  Vec grad;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::string message;
  std::vector<double> trace;  // f at every accepted iterate, starting with f(x0)
};

inline LbfgsResult lbfgs(const Objective& fn, Vec x0, const LbfgsOptions& opt = {}) {
  LbfgsResult r;
  r.x = std::move(x0);
  r.grad.resize(r.x.size());
  r.f = fn(r.x, r.grad);
  r.evaluations = 1;
  r.trace.push_back(r.f);
  if (!std::isfinite(r.f) || !r.grad.allFinite()) {
    r.line_search_failed = true;
    r.message = "non-finite objective at the starting point";
    return r;
  }
  std::deque<Vec> S, Y;
  std::deque<double> rho;
  for (r.iterations = 0; r.iterations < opt.max_iterations; ++r.iterations) {
    if (r.grad.cwiseAbs().maxCoeff() <= opt.gtol * std::max(1.0, std::abs(r.f))) {
      r.converged = true;
      r.message = "gradient tolerance";
      return r;
    }
    // Two-loop recursion.
    Vec q = r.grad;
    std::vector<double> alpha(S.size());
    for (std::size_t i = S.size(); i-- > 0;) {
      alpha[i] = rho[i] * S[i].dot(q);
      q -= alpha[i] * Y[i];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(q);
      q += (alpha[i] - beta) * S[i];
    }
    Vec dir = -q;
    double slope = r.grad.dot(dir);
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      dir = -r.grad;
      slope = -r.grad.squaredNorm();
    }
    double step = S.empty() ? std::min(1.0, 1.0 / r.grad.cwiseAbs().maxCoeff()) : 1.0;
    Vec x_new, g_new(r.x.size());
    double f_new = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = r.x + step * dir;
      f_new = fn(x_new, g_new);
      ++r.evaluations;
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= r.f + opt.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      r.line_search_failed = true;
      r.message = "line search failed";
      return r;
    }
    Vec s = x_new - r.x, y = g_new - r.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double decrease = r.f - f_new;
    r.x = std::move(x_new);
    r.grad = g_new;
    r.f = f_new;
    r.trace.push_back(r.f);
    if (decrease <= opt.ftol * std::max(1.0, std::abs(r.f))) {
      r.converged = true;
      r.message = "function tolerance";
      ++r.iterations;
      return r;
    }
  }
  r.message = "iteration limit";
  return r;
}

}  // namespace plume::optim
