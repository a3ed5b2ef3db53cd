#pragma once

// Minimal reverse-mode differentiation over dense matrices. Every node holds a matrix
// (rows = features, cols = batch); the tape is replayed backwards from a scalar or a
// seeded output.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "plume/error.hpp"
#include "plume/rbf.hpp"

namespace plume::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Var leaf(Mat value) { return push(std::move(value), nullptr); }

  Var push(Mat value, std::function<void(Tape&, int)> backward) {
    nodes_.push_back({std::move(value), Mat(), std::move(backward)});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }
  const Mat& grad(Var v) const { return grad(v.id); }

  void accumulate(int id, const Mat& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from `out` with upstream gradient `seed` (same shape as out).
  void backward(Var out, const Mat& seed) {
    for (auto& n : nodes_) n.grad.resize(0, 0);
    accumulate(out.id, seed);
    for (int i = out.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  void backward(Var scalar) { backward(scalar, Mat::Ones(1, 1)); }

  /// Gradient of a leaf after backward(); zeros if the leaf did not influence the output.
  Mat gradient(Var v) const {
    const auto& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.grad.size() ? n.grad : Mat::Zero(n.value.rows(), n.value.cols());
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> backward;
  };
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }

inline void check_finite(const Mat& m, const char* stage) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite value in ") + stage);
}

inline Var matmul(Var a, Var b) {
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() * b.value(), [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

inline Var sub(Var a, Var b) {
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

inline Var cmul(Var a, Var b) {
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(ib)));
    t.accumulate(ib, t.grad(self).cwiseProduct(t.value(ia)));
  });
}

inline Var cdiv(Var a, Var b) {
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseQuotient(b.value()), [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad(self);
    const Mat& bv = t.value(ib);
    t.accumulate(ia, g.cwiseQuotient(bv));
    t.accumulate(ib, -g.cwiseProduct(t.value(self)).cwiseQuotient(bv));
  });
}

/// a + bias, with bias a column vector broadcast over the batch.
inline Var add_bias(Var a, Var bias) {
  const int ia = a.id, ib = bias.id;
  Mat v = a.value();
  v.colwise() += bias.value().col(0);
  return a.tape->push(std::move(v), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self).rowwise().sum());
  });
}

/// Row-wise affine map with constant coefficients: out(i,:) = scale[i] * a(i,:) + shift[i].
inline Var affine_rows(Var a, const Vec& scale, const Vec& shift) {
  const int ia = a.id;
  Mat v = (a.value().array().colwise() * scale.array()).matrix();
  v.colwise() += shift;
  return a.tape->push(std::move(v), [ia, scale](Tape& t, int self) {
    t.accumulate(ia, (t.grad(self).array().colwise() * scale.array()).matrix());
  });
}

inline Var scale(Var a, double s) {
  const int ia = a.id;
  return a.tape->push(a.value() * s, [ia, s](Tape& t, int self) { t.accumulate(ia, t.grad(self) * s); });
}

inline Var add_const(Var a, const Mat& c) {
  const int ia = a.id;
  return a.tape->push(a.value() + c, [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self)); });
}

inline Var mul_const(Var a, const Mat& c) {
  const int ia = a.id;
  return a.tape->push(a.value().cwiseProduct(c), [ia, c](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(c));
  });
}

/// min(0, y) on rows flagged in `mask`, identity elsewhere. Subgradient at 0 is 0.
inline Var min0_rows(Var a, const std::vector<bool>& mask) {
  const int ia = a.id;
  Mat v = a.value();
  Mat d = Mat::Ones(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (v(i, j) >= 0.0) {
        v(i, j) = 0.0;
        d(i, j) = 0.0;
      }
    }
  }
  return a.tape->push(std::move(v), [ia, d = std::move(d)](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

inline Var tanh(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().tanh().matrix(), [ia](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate(ia, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

inline Var exp(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().exp().matrix(), [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(self)));
  });
}

/// Entries below the row floor are raised to it; gradient is blocked where that happens.
/// Returns the number of clamped entries through `clamped`.
inline Var clamp_rows(Var a, const Vec& floor, std::size_t* clamped = nullptr) {
  const int ia = a.id;
  Mat v = a.value();
  Mat d = Mat::Ones(v.rows(), v.cols());
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (v(i, j) < floor[i]) {
        v(i, j) = floor[i];
        d(i, j) = 0.0;
        ++count;
      }
    }
  }
  if (clamped) *clamped += count;
  return a.tape->push(std::move(v), [ia, d = std::move(d)](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

inline Var select_rows(Var a, std::vector<int> rows) {
  const int ia = a.id;
  Mat v(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) v.row(static_cast<Eigen::Index>(r)) = a.value().row(rows[r]);
  const Eigen::Index n_in = a.rows();
  return a.tape->push(std::move(v), [ia, rows = std::move(rows), n_in](Tape& t, int self) {
    const Mat& g = t.grad(self);
    Mat gi = Mat::Zero(n_in, g.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) gi.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(ia, gi);
  });
}

/// Inverse of select_rows for a full permutation: out rows[r] = a row r.
inline Var scatter_rows(Var a, std::vector<int> rows, Eigen::Index n_out) {
  const int ia = a.id;
  Mat v = Mat::Zero(n_out, a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) v.row(rows[r]) += a.value().row(static_cast<Eigen::Index>(r));
  return a.tape->push(std::move(v), [ia, rows = std::move(rows)](Tape& t, int self) {
    const Mat& g = t.grad(self);
    Mat gi(static_cast<Eigen::Index>(rows.size()), g.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) gi.row(static_cast<Eigen::Index>(r)) = g.row(rows[r]);
    t.accumulate(ia, gi);
  });
}

inline Var vstack(const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat v(rows, parts.front().cols());
  Eigen::Index off = 0;
  std::vector<std::pair<int, Eigen::Index>> ids;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    ids.emplace_back(p.id, p.rows());
    off += p.rows();
  }
  return parts.front().tape->push(std::move(v), [ids = std::move(ids)](Tape& t, int self) {
    const Mat& g = t.grad(self);
    Eigen::Index o = 0;
    for (const auto& [id, n] : ids) {
      t.accumulate(id, g.middleRows(o, n));
      o += n;
    }
  });
}

/// Column vector repeated over `n` batch columns.
inline Var broadcast_cols(Var a, Eigen::Index n) {
  const int ia = a.id;
  return a.tape->push(a.value().col(0).replicate(1, n), [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).rowwise().sum());
  });
}

inline Var mean_cols(Var a) {
  const int ia = a.id;
  const Eigen::Index n = a.cols();
  return a.tape->push(a.value().rowwise().mean(), [ia, n](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).replicate(1, n) / static_cast<double>(n));
  });
}

inline Var sum_squares(Var a) {
  const int ia = a.id;
  Mat v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  return a.tape->push(std::move(v), [ia](Tape& t, int self) {
    t.accumulate(ia, 2.0 * t.grad(self)(0, 0) * t.value(ia));
  });
}

/// L^{-1} a for a constant lower-triangular L.
inline Var lower_solve(Var a, const Mat& lower) {
  const int ia = a.id;
  Mat v = lower.triangularView<Eigen::Lower>().solve(a.value());
  return a.tape->push(std::move(v), [ia, lower](Tape& t, int self) {
    t.accumulate(ia, lower.transpose().triangularView<Eigen::Upper>().solve(t.grad(self)));
  });
}

/// Sum of periodized Gaussians evaluated at fixed longitudes. x, a, c are (N_rbf x B);
/// the result is (n_points x B).
inline Var rbf_eval(Var x, Var a, Var c, std::vector<double> points, rbf::PeriodicDomain domain = {}) {
  const Mat& X = x.value();
  const Mat& A = a.value();
  const Mat& C = c.value();
  const Eigen::Index n_rbf = X.rows(), batch = X.cols();
  const auto n_pts = static_cast<Eigen::Index>(points.size());
  Mat out = Mat::Zero(n_pts, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index l = 0; l < n_rbf; ++l) {
      const rbf::Term term{X(l, b), A(l, b), C(l, b)};
      for (Eigen::Index o = 0; o < n_pts; ++o) out(o, b) += rbf::eval_term(term, points[static_cast<std::size_t>(o)], domain);
    }
  }
  const int ix = x.id, ia = a.id, ic = c.id;
  return x.tape->push(std::move(out), [ix, ia, ic, points = std::move(points), domain](Tape& t, int self) {
    const Mat& g = t.grad(self);
    const Mat& Xv = t.value(ix);
    const Mat& Av = t.value(ia);
    const Mat& Cv = t.value(ic);
    Mat gx = Mat::Zero(Xv.rows(), Xv.cols()), ga = gx, gc = gx;
    for (Eigen::Index b = 0; b < Xv.cols(); ++b) {
      for (Eigen::Index l = 0; l < Xv.rows(); ++l) {
        const double xc = rbf::wrap(Xv(l, b), domain.period), av = Av(l, b), cv = Cv(l, b);
        const int m_img = rbf::image_count(av, domain);
        double sx = 0.0, sa = 0.0, sc = 0.0;
        for (std::size_t o = 0; o < points.size(); ++o) {
          const double go = g(static_cast<Eigen::Index>(o), b);
          if (go == 0.0) continue;
          double e_sum = 0.0, dx_sum = 0.0, da_sum = 0.0;
          for (int m = -m_img; m <= m_img; ++m) {
            const double d = points[o] + m * domain.period - xc;
            const double e = std::exp(-av * av * d * d);
            e_sum += e;
            dx_sum += 2.0 * av * av * d * e;
            da_sum += -2.0 * av * d * d * e;
          }
          sc += go * e_sum;
          sx += go * cv * dx_sum;
          sa += go * cv * da_sum;
        }
        gx(l, b) = sx;
        ga(l, b) = sa;
        gc(l, b) = sc;
      }
    }
    t.accumulate(ix, gx);
    t.accumulate(ia, ga);
    t.accumulate(ic, gc);
  });
}

}  // namespace plume::ad
