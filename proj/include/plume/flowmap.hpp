#pragma once

// Learned one-day flow map for SO2 RBF coordinates. The network acts in transformed
// coordinates u = T(x, a, c) = (x, a, c/a); its output passes through min(0, .) so every
// transformed component is non-increasing, and sulfate follows from molar conservation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plume/autodiff.hpp"
#include "plume/error.hpp"
#include "plume/random.hpp"
#include "plume/rbf.hpp"

namespace plume::flow {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// (x, a, c) -> (x, a, c/a), applied to every term of a flat coordinate vector.
inline Vec transform(const Vec& r) {
  Vec u = r;
  for (Eigen::Index l = 0; l + 2 < r.size(); l += 3) {
    if (!(r[l + 1] > 0.0)) throw DomainError("transform: shape must be positive");
    u[l + 2] = r[l + 2] / r[l + 1];
  }
  return u;
}

inline Vec inverse_transform(const Vec& u) {
  Vec r = u;
  for (Eigen::Index l = 0; l + 2 < u.size(); l += 3) {
    if (!(u[l + 1] > 0.0)) throw DomainError("inverse_transform: shape must be positive");
    r[l + 2] = u[l + 2] * u[l + 1];
  }
  return r;
}

/// One reduced trajectory: SO2 coords r_k, sulfate coords s_k and concatenated wind
/// coords w_k for k = 0..N_t.
struct Sample {
  std::string id;
  int ensemble = 0;
  double mass_tg = 0.0;
  std::vector<Vec> r;
  std::vector<Vec> s;
  std::vector<Vec> w;

  int n_steps() const { return static_cast<int>(r.size()) - 1; }
};

struct FlowMapParams {
  int n_rbf = 1;
  int n_wind = 4;
  std::vector<int> hidden;  // widths of tanh hidden layers; empty = single linear layer
  std::vector<Mat> weights;
  std::vector<Vec> biases;
  double dt = 1.0;
  double molar_so2 = 64.066;
  double molar_sulfate = 96.06;
  double rho0 = 0.0544;
  double shape_min = 1e-3;
  bool monotone_center = true;
  Vec in_mean, in_std;    // 3 + n_wind input channels
  Vec out_scale;          // 3 output channels, > 0
  Vec r_scale, s_scale;   // loss standardization per (x, a, c)

  int state_dim() const { return 3 * n_rbf; }
  int wind_dim() const { return n_wind * n_rbf; }
  int input_dim() const { return state_dim() + wind_dim(); }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += static_cast<std::size_t>(weights[i].size() + biases[i].size());
    return n;
  }

  Vec flatten() const {
    Vec v(static_cast<Eigen::Index>(n_params()));
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      v.segment(o, weights[i].size()) = weights[i].reshaped<Eigen::RowMajor>();
      o += weights[i].size();
      v.segment(o, biases[i].size()) = biases[i];
      o += biases[i].size();
    }
    return v;
  }

  void unflatten(const Vec& v) {
    if (static_cast<std::size_t>(v.size()) != n_params()) throw DataError("flow map parameter vector has wrong length");
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] = v.segment(o, weights[i].size()).reshaped<Eigen::RowMajor>(weights[i].rows(), weights[i].cols());
      o += weights[i].size();
      biases[i] = v.segment(o, biases[i].size());
      o += biases[i].size();
    }
  }

  /// Allocates layers (zero weights) for the given architecture.
  void allocate() {
    weights.clear();
    biases.clear();
    int fan_in = input_dim();
    for (int h : hidden) {
      weights.push_back(Mat::Zero(h, fan_in));
      biases.push_back(Vec::Zero(h));
      fan_in = h;
    }
    weights.push_back(Mat::Zero(state_dim(), fan_in));
    biases.push_back(Vec::Zero(state_dim()));
  }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("flow map: dt must be > 0");
    if (!(molar_so2 > 0.0) || !(molar_sulfate > 0.0)) throw ConfigError("flow map: molar masses must be > 0");
    if (!(rho0 >= 0.0 && rho0 <= 0.1)) throw ConfigError("flow map: rho0 must lie in [0, 0.1]");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!weights[i].allFinite() || !biases[i].allFinite()) throw NumericalError("flow map: non-finite weights");
    }
  }
};

/// Identity standardization with unit output scale; convenient for tests and as a base.
inline FlowMapParams make_params(int n_rbf, int n_wind, std::vector<int> hidden = {}) {
  FlowMapParams p;
  p.n_rbf = n_rbf;
  p.n_wind = n_wind;
  p.hidden = std::move(hidden);
  p.in_mean = Vec::Zero(3 + n_wind);
  p.in_std = Vec::Ones(3 + n_wind);
  p.out_scale = Vec::Ones(3);
  p.r_scale = Vec::Ones(3);
  p.s_scale = Vec::Ones(3);
  p.allocate();
  return p;
}

namespace detail {

inline std::vector<int> channel_rows(int n_rbf, int channel) {
  std::vector<int> rows;
  for (int l = 0; l < n_rbf; ++l) rows.push_back(3 * l + channel);
  return rows;
}

}  // namespace detail

/// Layer parameters placed on a tape.
struct ParamVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

inline ParamVars place(ad::Tape& tape, const FlowMapParams& p) {
  ParamVars v;
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    v.weights.push_back(tape.leaf(p.weights[i]));
    v.biases.push_back(tape.leaf(p.biases[i]));
  }
  return v;
}

/// Standardized wind block (n_wind*n_rbf x B) from raw concatenated wind columns.
inline Mat standardize_wind(const FlowMapParams& p, const Mat& wind) {
  Mat z = wind;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto ch = 3 + i % p.n_wind;
    z.row(i) = (z.row(i).array() - p.in_mean[ch]) / p.in_std[ch];
  }
  return z;
}

/// One flow-map step on transformed state U (3N x B) with standardized wind Zw.
inline ad::Var step_transformed(const FlowMapParams& p, const ParamVars& pv, ad::Var u, const Mat& zw,
                                std::size_t* clamped = nullptr) {
  auto& tape = *u.tape;
  const Eigen::Index sd = p.state_dim();
  Vec in_scale(sd), in_shift(sd), out(sd), floor(sd);
  std::vector<bool> mask(static_cast<std::size_t>(sd));
  for (Eigen::Index i = 0; i < sd; ++i) {
    const auto ch = i % 3;
    in_scale[i] = 1.0 / p.in_std[ch];
    in_shift[i] = -p.in_mean[ch] / p.in_std[ch];
    out[i] = p.dt * p.out_scale[ch];
    mask[static_cast<std::size_t>(i)] = ch != 0 || p.monotone_center;
    floor[i] = ch == 0 ? -std::numeric_limits<double>::infinity() : (ch == 1 ? p.shape_min : 0.0);
  }
  ad::Var h = ad::vstack({ad::affine_rows(u, in_scale, in_shift), tape.leaf(zw)});
  for (std::size_t layer = 0; layer + 1 < pv.weights.size(); ++layer) {
    h = ad::tanh(ad::add_bias(ad::matmul(pv.weights[layer], h), pv.biases[layer]));
  }
  ad::Var y = ad::add_bias(ad::matmul(pv.weights.back(), h), pv.biases.back());
  ad::Var inc = ad::affine_rows(ad::min0_rows(y, mask), out, Vec::Zero(sd));
  ad::Var next = ad::clamp_rows(ad::add(u, inc), floor, clamped);
  ad::check_finite(next.value(), "flow map step");
  return next;
}

struct StepResult {
  Vec r;
  std::size_t clamped = 0;
};

/// Transformed-coordinate step u -> u + dt * s_out * sigma(N(u, w)).
inline Vec step_u(const FlowMapParams& p, const Vec& u, const Vec& w, std::size_t* clamped = nullptr) {
  ad::Tape tape;
  const auto pv = place(tape, p);
  return step_transformed(p, pv, tape.leaf(u), standardize_wind(p, w), clamped).value().col(0);
}

/// r_{k+1} = T^{-1}(T(r_k) + dt * s_out * sigma(N(T(r_k), w_k))).
inline StepResult step(const FlowMapParams& p, const Vec& r, const Vec& w) {
  StepResult out;
  out.r = inverse_transform(step_u(p, transform(r), w, &out.clamped));
  return out;
}

/// Sulfate coordinates from SO2 coordinates by per-term molar balance: centers and shapes
/// are copied, and the sulfate mass is the converted SO2 plus the initial sulfate rho0*m0.
inline Vec sulfate_from_so2(const FlowMapParams& p, const Vec& r_k, const Vec& r_0) {
  const Vec u = transform(r_k), u0 = transform(r_0);
  const double ratio = p.molar_sulfate / p.molar_so2;
  Vec s = r_k;
  for (Eigen::Index l = 0; l + 2 < s.size(); l += 3) {
    // c/a round trips can exceed m0 by a few ulps
    const double m0 = u0[l + 2], m = std::min(u[l + 2], m0);
    if (u[l + 2] > m0 * (1 + 1e-12)) throw NumericalError("conservation violation: SO2 mass exceeds its initial value");
    s[l + 2] = r_k[l + 1] * (ratio * (m0 - m) + p.rho0 * m0);
  }
  return s;
}

/// Total sulfur moles of an (SO2, sulfate) coordinate pair (units of g/mol-normalized mass).
inline double sulfur_moles(const FlowMapParams& p, const Vec& r, const Vec& s) {
  double total = 0.0;
  for (Eigen::Index l = 0; l + 2 < r.size(); l += 3) {
    total += std::sqrt(std::numbers::pi) * (r[l + 2] / r[l + 1] / p.molar_so2 + s[l + 2] / s[l + 1] / p.molar_sulfate);
  }
  return total;
}

struct Rollout {
  std::vector<Vec> r;  // r_0..r_{N_t}
  std::vector<Vec> s;  // s_0..s_{N_t}
  std::size_t clamped = 0;
};

/// Composes the step with itself winds.size() times starting from r_0.
inline Rollout rollout(const FlowMapParams& p, const Vec& r0, const std::vector<Vec>& winds) {
  Rollout out;
  out.r.push_back(r0);
  out.s.push_back(sulfate_from_so2(p, r0, r0));
  for (const auto& w : winds) {
    auto st = step(p, out.r.back(), w);
    out.clamped += st.clamped;
    out.s.push_back(sulfate_from_so2(p, st.r, r0));
    out.r.push_back(std::move(st.r));
  }
  return out;
}

/// Sulfate rows (x, a, c_s) on the tape from transformed SO2 state U and constant m0 rows.
inline ad::Var sulfate_rows(const FlowMapParams& p, ad::Var u, const Mat& m0) {
  const ad::Var a = ad::select_rows(u, detail::channel_rows(p.n_rbf, 1));
  const ad::Var m = ad::select_rows(u, detail::channel_rows(p.n_rbf, 2));
  const double ratio = p.molar_sulfate / p.molar_so2;
  const ad::Var ms = ad::add_const(ad::scale(m, -ratio), (ratio + p.rho0) * m0);
  return ad::cmul(a, ms);
}

struct LossValue {
  ad::Var loss;
  std::size_t n_terms = 0;
  std::size_t clamped = 0;
};

/// Look-ahead loss on the tape. Each (trajectory, k) start is a batch column; horizons
/// that run past the end of a trajectory are masked out.
inline LossValue lookahead_loss(ad::Tape& tape, const FlowMapParams& p, const ParamVars& pv,
                                const std::vector<const Sample*>& data, int lookahead) {
  if (lookahead < 1) throw ConfigError("look-ahead P must be >= 1");
  struct Col {
    const Sample* s;
    int k;
  };
  std::vector<Col> cols;
  for (const auto* s : data) {
    for (int k = 1; k < s->n_steps(); ++k) cols.push_back({s, k});
  }
  LossValue out;
  if (cols.empty()) {
    out.loss = tape.leaf(Mat::Zero(1, 1));
    return out;
  }
  const Eigen::Index B = static_cast<Eigen::Index>(cols.size());
  const Eigen::Index sd = p.state_dim(), wd = p.wind_dim();
  const int n = p.n_rbf;
  Mat u0(sd, B), m0(n, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    u0.col(j) = transform(cols[static_cast<std::size_t>(j)].s->r[static_cast<std::size_t>(cols[static_cast<std::size_t>(j)].k)]);
    const Vec first = transform(cols[static_cast<std::size_t>(j)].s->r[0]);
    for (int l = 0; l < n; ++l) m0(l, j) = first[3 * l + 2];
  }
  ad::Var u = tape.leaf(u0);
  std::vector<int> x_rows = detail::channel_rows(n, 0), a_rows = detail::channel_rows(n, 1),
                   m_rows = detail::channel_rows(n, 2);
  ad::Var total = tape.leaf(Mat::Zero(1, 1));
  for (int step_p = 1; step_p <= lookahead; ++step_p) {
    Mat wind(wd, B), target(6 * n, B), weight(6 * n, B);
    bool any = false;
    for (Eigen::Index j = 0; j < B; ++j) {
      const auto& c = cols[static_cast<std::size_t>(j)];
      const int last = c.s->n_steps();
      const bool live = c.k + step_p <= last;
      any = any || live;
      const int wi = std::min(c.k + step_p - 1, last - 1);
      const int ti = std::min(c.k + step_p, last);
      wind.col(j) = c.s->w[static_cast<std::size_t>(wi)];
      const Vec& r = c.s->r[static_cast<std::size_t>(ti)];
      const Vec& s = c.s->s[static_cast<std::size_t>(ti)];
      for (int l = 0; l < n; ++l) {
        for (int ch = 0; ch < 3; ++ch) {
          target(ch * n + l, j) = r[3 * l + ch];
          target((3 + ch) * n + l, j) = s[3 * l + ch];
          weight(ch * n + l, j) = live ? 1.0 / p.r_scale[ch] : 0.0;
          weight((3 + ch) * n + l, j) = live ? 1.0 / p.s_scale[ch] : 0.0;
        }
      }
      if (live) ++out.n_terms;
    }
    if (!any) break;
    u = step_transformed(p, pv, u, standardize_wind(p, wind), &out.clamped);
    const ad::Var x = ad::select_rows(u, x_rows);
    const ad::Var a = ad::select_rows(u, a_rows);
    const ad::Var c = ad::cmul(a, ad::select_rows(u, m_rows));
    const ad::Var cs = sulfate_rows(p, u, m0);
    ad::check_finite(cs.value(), "conservation map");
    const ad::Var pred = ad::vstack({x, a, c, x, a, cs});
    const ad::Var res = ad::mul_const(ad::add_const(pred, -target), weight);
    total = ad::add(total, ad::sum_squares(res));
  }
  ad::check_finite(total.value(), "look-ahead loss");
  out.loss = total;
  return out;
}

inline double lookahead_loss_value(const FlowMapParams& p, const std::vector<const Sample*>& data, int lookahead) {
  ad::Tape tape;
  const auto pv = place(tape, p);
  return lookahead_loss(tape, p, pv, data, lookahead).loss.value()(0, 0);
}

struct Gradient {
  double loss = 0.0;
  Vec grad;
  std::size_t n_terms = 0;
  std::size_t clamped = 0;
};

/// Loss and its gradient with respect to the flattened layer parameters, scaled by `seed`.
inline Gradient loss_gradient(const FlowMapParams& p, const std::vector<const Sample*>& data, int lookahead,
                              double seed = 1.0) {
  ad::Tape tape;
  const auto pv = place(tape, p);
  const auto lv = lookahead_loss(tape, p, pv, data, lookahead);
  Gradient g;
  g.loss = lv.loss.value()(0, 0);
  g.n_terms = lv.n_terms;
  g.clamped = lv.clamped;
  tape.backward(lv.loss, Mat::Constant(1, 1, seed));
  g.grad.resize(static_cast<Eigen::Index>(p.n_params()));
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < pv.weights.size(); ++i) {
    const Mat gw = tape.gradient(pv.weights[i]);
    g.grad.segment(o, gw.size()) = gw.reshaped<Eigen::RowMajor>();
    o += gw.size();
    const Mat gb = tape.gradient(pv.biases[i]);
    g.grad.segment(o, gb.size()) = gb.reshaped();
    o += gb.size();
  }
  if (!g.grad.allFinite()) throw NumericalError("non-finite gradient in flow map backward pass");
  return g;
}

/// Input/output/loss scalings from training samples.
inline void fit_standardization(FlowMapParams& p, const std::vector<const Sample*>& train) {
  const int n = p.n_rbf;
  Vec sum = Vec::Zero(3 + p.n_wind), sq = sum;
  Vec inc_sq = Vec::Zero(3);
  Vec r_sum = Vec::Zero(3), r_sq = r_sum, s_sum = r_sum, s_sq = r_sum;
  double count_u = 0.0, count_w = 0.0, count_inc = 0.0;
  for (const auto* s : train) {
    for (std::size_t k = 0; k < s->r.size(); ++k) {
      const Vec u = transform(s->r[k]);
      for (int l = 0; l < n; ++l) {
        for (int ch = 0; ch < 3; ++ch) {
          sum[ch] += u[3 * l + ch];
          sq[ch] += u[3 * l + ch] * u[3 * l + ch];
          r_sum[ch] += s->r[k][3 * l + ch];
          r_sq[ch] += s->r[k][3 * l + ch] * s->r[k][3 * l + ch];
          s_sum[ch] += s->s[k][3 * l + ch];
          s_sq[ch] += s->s[k][3 * l + ch] * s->s[k][3 * l + ch];
        }
      }
      count_u += n;
      if (k + 1 < s->r.size()) {
        const Vec du = (transform(s->r[k + 1]) - u) / p.dt;
        for (int l = 0; l < n; ++l) for (int ch = 0; ch < 3; ++ch) inc_sq[ch] += du[3 * l + ch] * du[3 * l + ch];
        count_inc += n;
      }
    }
    for (const auto& w : s->w) {
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const auto ch = 3 + i % p.n_wind;
        sum[ch] += w[i];
        sq[ch] += w[i] * w[i];
      }
      count_w += n;
    }
  }
  if (count_u == 0.0) throw DataError("standardization: no training data");
  auto stdev = [](double s, double q, double c) {
    const double m = s / c;
    const double v = std::max(0.0, q / c - m * m);
    return v > 0.0 ? std::sqrt(v) : 1.0;
  };
  p.in_mean.resize(3 + p.n_wind);
  p.in_std.resize(3 + p.n_wind);
  for (int ch = 0; ch < 3 + p.n_wind; ++ch) {
    const double c = ch < 3 ? count_u : count_w;
    p.in_mean[ch] = c > 0 ? sum[ch] / c : 0.0;
    p.in_std[ch] = c > 0 ? stdev(sum[ch], sq[ch], c) : 1.0;
  }
  p.out_scale.resize(3);
  p.r_scale.resize(3);
  p.s_scale.resize(3);
  for (int ch = 0; ch < 3; ++ch) {
    const double rms = count_inc > 0 ? std::sqrt(inc_sq[ch] / count_inc) : 0.0;
    p.out_scale[ch] = rms > 0.0 ? rms : 1.0;
    p.r_scale[ch] = stdev(r_sum[ch], r_sq[ch], count_u);
    p.s_scale[ch] = stdev(s_sum[ch], s_sq[ch], count_u);
  }
}

/// Mean day-0 sulfate/SO2 mass ratio over training samples.
inline double initial_mass_ratio(const std::vector<const Sample*>& train) {
  double sum = 0.0;
  int n = 0;
  for (const auto* s : train) {
    double ms = 0.0, mr = 0.0;
    for (Eigen::Index l = 0; l + 2 < s->r[0].size(); l += 3) {
      mr += s->r[0][l + 2] / s->r[0][l + 1];
      ms += s->s[0][l + 2] / s->s[0][l + 1];
    }
    if (mr > 0.0) {
      sum += ms / mr;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0544;
}

struct TrainOptions {
  int lookahead = 3;
  int epochs = 300;
  std::string optimizer = "adam";  // "adam" or "gd"
  double learning_rate = 0.03;
  double decay = 0.99;  // geometric step-size decay per epoch
  std::uint64_t seed = 7;
  std::vector<int> hidden;
  bool monotone_center = true;
  double init_bias = -1.0;
  double divergence_factor = 1e6;
};

struct TrainResult {
  FlowMapParams params;
  std::vector<double> train_loss;  // per epoch, after the epoch's updates
  std::vector<double> val_loss;
  double initial_loss = 0.0;
  double initial_val_loss = 0.0;
  int best_epoch = -1;
  std::size_t clamp_events = 0;
  bool aborted = false;
  std::string message;
};

/// Ensemble groups of 2-3 ensembles each, all source magnitudes together.
inline std::vector<std::vector<const Sample*>> ensemble_batches(const std::vector<const Sample*>& train) {
  std::vector<int> ens;
  for (const auto* s : train) {
    if (std::find(ens.begin(), ens.end(), s->ensemble) == ens.end()) ens.push_back(s->ensemble);
  }
  std::sort(ens.begin(), ens.end());
  const std::size_t n_groups = std::max<std::size_t>(1, (ens.size() + 2) / 3);
  std::vector<std::vector<const Sample*>> batches(n_groups);
  std::size_t start = 0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t size = ens.size() / n_groups + (g < ens.size() % n_groups ? 1 : 0);
    for (const auto* s : train) {
      for (std::size_t e = start; e < start + size; ++e) {
        if (s->ensemble == ens[e]) batches[g].push_back(s);
      }
    }
    start += size;
  }
  return batches;
}

/// Seeded initialization: weights ~ N(0, 0.1/sqrt(fan_in)) in the output layer and
/// N(0, 1/sqrt(fan_in)) in hidden layers; output bias init_bias, hidden biases 0.
inline void initialize(FlowMapParams& p, std::uint64_t seed, double init_bias) {
  Rng rng(mix_seed(seed, 0x9e3779b97f4a7c15ULL));
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    const bool output = i + 1 == p.weights.size();
    const double sd = (output ? 0.1 : 1.0) / std::sqrt(static_cast<double>(p.weights[i].cols()));
    for (Eigen::Index j = 0; j < p.weights[i].size(); ++j) p.weights[i].data()[j] = sd * rng.normal();
    p.biases[i].setConstant(output ? init_bias : 0.0);
  }
}

inline TrainResult train(const std::vector<const Sample*>& train_set, const std::vector<const Sample*>& val_set,
                         const FlowMapParams& base, const TrainOptions& opt) {
  if (train_set.empty()) throw DataError("train: no training trajectories");
  if (opt.epochs < 0 || !(opt.learning_rate > 0.0)) throw ConfigError("train: invalid epochs or learning rate");
  FlowMapParams p = base;
  p.hidden = opt.hidden;
  p.monotone_center = opt.monotone_center;
  p.allocate();
  fit_standardization(p, train_set);
  initialize(p, opt.seed, opt.init_bias);
  p.validate();

  TrainResult res;
  const auto batches = ensemble_batches(train_set);
  const auto& select = val_set.empty() ? train_set : val_set;
  res.initial_loss = lookahead_loss_value(p, train_set, opt.lookahead);
  res.initial_val_loss = lookahead_loss_value(p, select, opt.lookahead);
  double best = res.initial_val_loss;
  res.params = p;

  Vec theta = p.flatten();
  Vec m1 = Vec::Zero(theta.size()), m2 = m1;
  long t_adam = 0;
  double lr = opt.learning_rate;
  Rng order_rng(mix_seed(opt.seed, 0x5bd1e995ULL));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order(batches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    for (std::size_t bi : order) {
      p.unflatten(theta);
      const auto g = loss_gradient(p, batches[bi], opt.lookahead);
      res.clamp_events += g.clamped;
      if (g.n_terms == 0) continue;
      const Vec grad = g.grad / static_cast<double>(g.n_terms);
      if (opt.optimizer == "adam") {
        ++t_adam;
        m1 = 0.9 * m1 + 0.1 * grad;
        m2 = 0.999 * m2 + 0.001 * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t_adam));
        const double c2 = 1.0 - std::pow(0.999, static_cast<double>(t_adam));
        theta -= lr * ((m1 / c1).array() / ((m2 / c2).array().sqrt() + 1e-12)).matrix();
      } else if (opt.optimizer == "gd") {
        theta -= lr * grad;
      } else {
        throw ConfigError("unknown optimizer '" + opt.optimizer + "'");
      }
    }
    lr *= opt.decay;
    p.unflatten(theta);
    double tl = 0.0, vl = 0.0;
    try {
      tl = lookahead_loss_value(p, train_set, opt.lookahead);
      vl = val_set.empty() ? tl : lookahead_loss_value(p, val_set, opt.lookahead);
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.message = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
      break;
    }
    res.train_loss.push_back(tl);
    res.val_loss.push_back(vl);
    if (!(tl <= opt.divergence_factor * res.initial_loss)) {
      res.aborted = true;
      res.message = "diverged at epoch " + std::to_string(epoch) + ": loss " + std::to_string(tl) +
                    " exceeds " + std::to_string(opt.divergence_factor) + "x initial " +
                    std::to_string(res.initial_loss);
      break;
    }
    if (vl < best) {
      best = vl;
      res.best_epoch = epoch;
      res.params = p;
    }
  }
  return res;
}

}  // namespace plume::flow
