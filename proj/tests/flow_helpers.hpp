#pragma once

// Random flow-map parameters, teacher trajectories and loss oracles shared by the flow-map
// tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <vector>

#include "plume/flowmap.hpp"
#include "plume/random.hpp"

namespace plume::testkit {

using flow::Vec;

inline flow::FlowMapParams random_params(Rng& rng, int n_rbf, int n_wind, std::vector<int> hidden, double w_scale,
                                  double bias) {
  auto p = flow::make_params(n_rbf, n_wind, std::move(hidden));
  for (auto& w : p.weights) for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = w_scale * rng.normal();
  for (auto& b : p.biases) for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = bias + 0.3 * rng.normal();
  for (int c = 0; c < 3 + n_wind; ++c) {
    p.in_mean[c] = rng.normal();
    p.in_std[c] = rng.uniform(0.5, 2.0);
  }
  for (int c = 0; c < 3; ++c) {
    p.out_scale[c] = rng.uniform(0.001, 0.05);
    p.r_scale[c] = rng.uniform(0.5, 2.0);
    p.s_scale[c] = rng.uniform(0.5, 2.0);
  }
  return p;
}

inline Vec random_state(Rng& rng, int n_rbf) {
  Vec r(3 * n_rbf);
  for (int l = 0; l < n_rbf; ++l) {
    r[3 * l] = rng.uniform(-1, 1);
    r[3 * l + 1] = rng.uniform(0.5, 1.5);
    r[3 * l + 2] = rng.uniform(0.5, 1.5);
  }
  return r;
}

inline Vec random_wind(Rng& rng, int dim) {
  Vec w(dim);
  for (Eigen::Index i = 0; i < dim; ++i) w[i] = rng.normal();
  return w;
}

// Trajectories generated by a teacher model so that the flow map can reproduce them.
inline std::vector<flow::Sample> teacher_samples(const flow::FlowMapParams& teacher, Rng& rng, int n, int n_days) {
  std::vector<flow::Sample> out;
  for (int i = 0; i < n; ++i) {
    flow::Sample s;
    s.ensemble = i + 1;
    for (int k = 0; k < n_days; ++k) s.w.push_back(random_wind(rng, teacher.wind_dim()));
    const auto ro = flow::rollout(teacher, random_state(rng, teacher.n_rbf),
                                  std::vector<Vec>(s.w.begin(), s.w.end() - 1));
    s.r = ro.r;
    s.s = ro.s;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<const flow::Sample*> ptrs(const std::vector<flow::Sample>& v) {
  std::vector<const flow::Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// Look-ahead loss written as the literal double sum with a fresh composition per term.
inline double brute_force_loss(const flow::FlowMapParams& p, const std::vector<flow::Sample>& data, int P) {
  double total = 0.0;
  for (const auto& s : data) {
    const int nt = s.n_steps();
    for (int k = 1; k <= nt; ++k) {
      for (int q = 1; q <= std::min(P, nt - k); ++q) {
        Vec r = s.r[static_cast<std::size_t>(k)];
        for (int i = 0; i < q; ++i) r = flow::step(p, r, s.w[static_cast<std::size_t>(k + i)]).r;
        const Vec sh = flow::sulfate_from_so2(p, r, s.r[0]);
        for (Eigen::Index j = 0; j < r.size(); ++j) {
          const auto ch = j % 3;
          total += std::pow((r[j] - s.r[static_cast<std::size_t>(k + q)][j]) / p.r_scale[ch], 2);
          total += std::pow((sh[j] - s.s[static_cast<std::size_t>(k + q)][j]) / p.s_scale[ch], 2);
        }
      }
    }
  }
  return total;
}


// Smallest |pre-activation| over every step of the loss; small values sit near the kink.
inline double kink_margin(const flow::FlowMapParams& p, const std::vector<flow::Sample>& data, int P) {
  double margin = 1e300;
  for (const auto& s : data) {
    for (int k = 1; k < s.n_steps(); ++k) {
      Vec r = s.r[static_cast<std::size_t>(k)];
      for (int q = 0; q < P && k + q < s.n_steps(); ++q) {
        Vec u = flow::transform(r);
        Vec z(p.input_dim());
        for (int i = 0; i < p.state_dim(); ++i) z[i] = (u[i] - p.in_mean[i % 3]) / p.in_std[i % 3];
        z.tail(p.wind_dim()) = flow::standardize_wind(p, s.w[static_cast<std::size_t>(k + q)]);
        Vec h = z;
        for (std::size_t layer = 0; layer + 1 < p.weights.size(); ++layer) {
          h = (p.weights[layer] * h + p.biases[layer]).array().tanh().matrix();
        }
        const Vec y = p.weights.back() * h + p.biases.back();
        margin = std::min(margin, y.cwiseAbs().minCoeff());
        r = flow::step(p, r, s.w[static_cast<std::size_t>(k + q)]).r;
      }
    }
  }
  return margin;
}


/// Central differences of the look-ahead loss with one Richardson step (h, h/2), error O(h^4).
inline Vec fd_gradient(const flow::FlowMapParams& p, const std::vector<flow::Sample>& data, int P, double h = 1e-4) {
  const Vec theta = p.flatten();
  const auto central = [&](Eigen::Index i, double step) {
    auto plus = p, minus = p;
    Vec t = theta;
    t[i] += step;
    plus.unflatten(t);
    t[i] = theta[i] - step;
    minus.unflatten(t);
    return (flow::lookahead_loss_value(plus, ptrs(data), P) - flow::lookahead_loss_value(minus, ptrs(data), P)) / (2 * step);
  };
  Vec fd(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) fd[i] = (4 * central(i, h / 2) - central(i, h)) / 3;
  return fd;
}

}  // namespace plume::testkit
