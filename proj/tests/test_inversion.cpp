#include <chrono>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "campaign_fixture.hpp"
#include "plume/inversion.hpp"

using namespace plume;
using inv::Mat;
using inv::Vec;

namespace {

inv::Models random_models(std::uint64_t seed, int n_wind = 2) {
  Rng rng(seed);
  auto p = flow::make_params(1, n_wind);
  for (auto& w : p.weights) for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 * rng.normal();
  p.biases[0] = Vec::Constant(3, -1.0);
  p.in_mean << 120, 0.09, 1e12;
  p.in_std << 20, 0.02, 3e11;
  for (int c = 0; c < n_wind; ++c) {
    p.in_mean[3 + c] = 0;
    p.in_std[3 + c] = 1;
  }
  p.out_scale << 8, 0.004, 5e10;
  aod::AodMapParams a;
  a.L = Vec((Vec(3) << 1, 1, 1e-11).finished()).asDiagonal();
  return {p, a, {}};
}

std::vector<inv::WindSeries> random_winds(Rng& rng, int n, int n_days, int dim) {
  std::vector<inv::WindSeries> out(static_cast<std::size_t>(n));
  for (auto& w : out) {
    for (int k = 0; k < n_days; ++k) {
      Vec v(dim);
      for (int i = 0; i < dim; ++i) v[i] = rng.normal();
      w.push_back(v);
    }
  }
  return out;
}

const Vec kR0 = (Vec(3) << 120, 0.088, 1.2e12).finished();

double rel_l2(const std::vector<double>& a, std::span<const double> b) {
  double n = 0, d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    n += (a[i] - b[i]) * (a[i] - b[i]);
    d += b[i] * b[i];
  }
  return std::sqrt(n / d);
}

}  // namespace

TEST(Observe, PointAtCenterGivesCoefficient) {
  inv::ObservationOperator obs{{210.0}, 1};
  const rbf::Coords q{{{210, 0.08, 5}}, 0};
  EXPECT_NEAR(inv::observe(obs, {q})[0], 5.0, 1e-12);
  const rbf::Coords zero{{{210, 0.08, 0}}, 0};
  EXPECT_EQ(inv::observe(obs, {zero})[0], 0.0);
}

TEST(Observe, RestrictionOfGridEvaluationIsBitIdentical) {
  const auto obs = inv::ObservationOperator::uniform(72, 3);
  const auto grid = rbf::uniform_grid(144);
  std::vector<rbf::Coords> q{{{{100, 0.05, 2}, {300, 0.2, 1}}, 0}, {{{110, 0.06, 3}}, 0}, {{{5, 0.1, 1}}, 0}};
  const Vec y = inv::observe(obs, q);
  for (int k = 0; k < 3; ++k) {
    const auto full = rbf::eval_basis(q[static_cast<std::size_t>(k)], {}, grid);
    for (int j = 0; j < 72; ++j) EXPECT_EQ(y[72 * k + j], full[static_cast<std::size_t>(2 * j)]);
  }
}

TEST(Observe, SampleFieldOnGridPicksCells) {
  datagen::SimulationConfig cfg;
  const auto grid = datagen::Grid::make(cfg);
  std::vector<double> f(grid.n_lon() * 3);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
  const auto obs = inv::ObservationOperator::uniform(72, 2);
  const Vec y = inv::sample_field(obs, grid, f);
  EXPECT_EQ(y[0], static_cast<double>(grid.n_lon()));
  EXPECT_EQ(y[73], static_cast<double>(2 * grid.n_lon() + 2));
}

TEST(ForwardMean, SingleSampleEqualsRollout) {
  const auto m = random_models(1);
  Rng rng(2);
  const auto obs = inv::ObservationOperator::uniform(72, 9);
  const auto w = random_winds(rng, 1, 9, 2);
  const Vec a = inv::forward_mean(m, obs, kR0, w), b = inv::forward(m, obs, kR0, w[0]);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14 * b.cwiseAbs().maxCoeff());
}

TEST(ForwardMean, DuplicatedEnsembleAndLoopOracle) {
  const auto m = random_models(3);
  Rng rng(4);
  const auto obs = inv::ObservationOperator::uniform(72, 9);
  auto w = random_winds(rng, 6, 9, 2);
  const Vec mean = inv::forward_mean(m, obs, kR0, w);
  Vec oracle = Vec::Zero(obs.size());
  for (const auto& ws : w) oracle += inv::forward(m, obs, kR0, ws);
  oracle /= 6.0;
  EXPECT_LT((mean - oracle).cwiseAbs().maxCoeff(), 1e-14 * oracle.cwiseAbs().maxCoeff());

  auto doubled = w;
  doubled.insert(doubled.end(), w.begin(), w.end());
  EXPECT_LT((inv::forward_mean(m, obs, kR0, doubled) - mean).cwiseAbs().maxCoeff(), 1e-15 * mean.cwiseAbs().maxCoeff());
}

TEST(ForwardMean, ShortWindSampleNamed) {
  const auto m = random_models(5);
  Rng rng(6);
  auto w = random_winds(rng, 3, 9, 2);
  w[2].pop_back();
  try {
    inv::forward_mean(m, inv::ObservationOperator::uniform(8, 9), kR0, w);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos);
  }
}

TEST(Background, IdenticalTrajectoriesAndRankBound) {
  datagen::SimulationConfig cfg;
  cfg.n_days = 4;
  const auto grid = datagen::Grid::make(cfg);
  const auto obs = inv::ObservationOperator::uniform(12, 3);
  datagen::Trajectory t;
  Rng rng(7);
  for (std::size_t i = 0; i < grid.n_lon() * 4; ++i) t.rho_b.push_back(rng.uniform(0, 0.05));
  const auto same = inv::estimate_background({&t, &t, &t}, grid, obs);
  EXPECT_EQ(same.cov.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(same.mean, inv::sample_field(obs, grid, t.rho_b));

  datagen::Trajectory u = t;
  for (auto& v : u.rho_b) v += rng.uniform(0, 0.01);
  const auto two = inv::estimate_background({&t, &u}, grid, obs);
  Eigen::SelfAdjointEigenSolver<Mat> eig(two.cov);
  int rank = 0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) rank += eig.eigenvalues()[i] > 1e-12 * eig.eigenvalues().maxCoeff();
  EXPECT_LE(rank, 1);
  EXPECT_THROW(inv::estimate_background({&t}, grid, obs), DataError);
}

TEST(Background, MatchesTextbookCovariance) {
  Rng rng(8);
  std::vector<Vec> y;
  for (int i = 0; i < 35; ++i) y.push_back(Vec::NullaryExpr(20, [&] { return 0.02 + 0.01 * rng.normal(); }));
  const auto mom = inv::moments(y);
  for (int a = 0; a < 20; ++a) {
    double mean_a = 0;
    for (const auto& v : y) mean_a += v[a];
    mean_a /= 35;
    EXPECT_NEAR(mom.mean[a], mean_a, 1e-15);
    for (int b = 0; b < 20; ++b) {
      double mean_b = 0;
      for (const auto& v : y) mean_b += v[b];
      mean_b /= 35;
      double c = 0;
      for (const auto& v : y) c += (v[a] - mean_a) * (v[b] - mean_b);
      c /= 34;
      EXPECT_NEAR(mom.cov(a, b), c, 1e-12 * 1e-4);
    }
  }
}

TEST(Bae, DegenerateEnsemblesGiveZeroCovariance) {
  const auto m = random_models(9);
  Rng rng(10);
  const auto obs = inv::ObservationOperator::uniform(24, 9);
  const auto one = random_winds(rng, 1, 9, 2);
  EXPECT_EQ(inv::estimate_bae(m, obs, kR0, one).cov.cwiseAbs().maxCoeff(), 0.0);
  const std::vector<inv::WindSeries> same(5, one[0]);
  const auto bae = inv::estimate_bae(m, obs, kR0, same);
  EXPECT_EQ(bae.cov.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(bae.mean.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Bae, SpreadGrowsWithDayOnCampaign) {
  const auto& m = fixture::default_models();
  const auto obs = inv::ObservationOperator::uniform(72, 9);
  const auto prior = inv::default_prior({});
  const auto bae = inv::estimate_bae(m, obs, prior.mean, fixture::training_winds());
  EXPECT_LT(bae.mean.cwiseAbs().maxCoeff(), 1e-12);
  double prev = -1;
  for (int k = 0; k < 9; ++k) {
    const double tr = bae.cov.diagonal().segment(72 * k, 72).sum();
    EXPECT_GT(tr, prev) << "day " << k + 1;
    prev = tr;
  }
}

TEST(Likelihood, ReducesToGaussianMisfit) {
  Rng rng(11);
  const int n = 30;
  const inv::Moments zero{Vec::Zero(n), Mat::Zero(n, n)};
  const auto like = inv::BaeLikelihood::assemble(zero, zero, 1.0);
  const Vec pred = Vec::NullaryExpr(n, [&] { return rng.normal(); });
  const Vec d = Vec::NullaryExpr(n, [&] { return rng.normal(); });
  const double expect = -0.5 * (pred - d).squaredNorm();
  EXPECT_NEAR(like.log_likelihood(pred, d), expect, 1e-12 * std::abs(expect));
}

TEST(Likelihood, MaximumAtBiasCorrectedPrediction) {
  Rng rng(12);
  const int n = 10;
  inv::Moments bg{Vec::NullaryExpr(n, [&] { return rng.normal(); }), Mat::Identity(n, n) * 0.1};
  const auto like = inv::BaeLikelihood::assemble(bg, {Vec::Zero(n), Mat::Zero(n, n)}, 0.01);
  const Vec pred = Vec::NullaryExpr(n, [&] { return rng.normal(); });
  EXPECT_EQ(like.log_likelihood(pred, pred + like.mu), 0.0);
}

TEST(Likelihood, MatchesDenseQuadraticForm) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 40;
    Mat A = Mat::NullaryExpr(n, 5, [&] { return rng.normal(); });
    Mat B = Mat::NullaryExpr(n, 3, [&] { return 0.3 * rng.normal(); });
    const inv::Moments bg{Vec::NullaryExpr(n, [&] { return rng.normal(); }), A * A.transpose()};
    const inv::Moments bae{Vec::Zero(n), B * B.transpose()};
    const auto like = inv::BaeLikelihood::assemble(bg, bae, 0.05);
    const Vec pred = Vec::NullaryExpr(n, [&] { return rng.normal(); });
    const Vec d = Vec::NullaryExpr(n, [&] { return rng.normal(); });
    const Mat sigma = A * A.transpose() + B * B.transpose() + 0.0025 * Mat::Identity(n, n);
    const Vec e = pred + bg.mean - d;
    const double oracle = -0.5 * e.dot(sigma.inverse() * e);
    EXPECT_NEAR(like.log_likelihood(pred, d) / oracle, 1.0, 1e-10);
  }
}

TEST(Likelihood, AssemblyAlwaysSpdForPositiveNoise) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 20;
    const Mat A = Mat::NullaryExpr(n, 1 + trial % 7, [&] { return 1e3 * rng.normal(); });
    const inv::Moments bg{Vec::Zero(n), A * A.transpose()};
    EXPECT_NO_THROW(inv::BaeLikelihood::assemble(bg, bg, 1e-3));
  }
  const inv::Moments z{Vec::Zero(2), Mat::Zero(2, 2)};
  EXPECT_THROW(inv::BaeLikelihood::assemble(z, z, 0.0), ConfigError);
}

TEST(Posterior, GradientMatchesFiniteDifferences) {
  const auto m = random_models(15);
  Rng rng(16);
  const auto obs = inv::ObservationOperator::uniform(36, 9);
  const auto w = random_winds(rng, 5, 9, 2);
  const inv::Moments zero{Vec::Zero(obs.size()), Mat::Zero(obs.size(), obs.size())};
  inv::InverseProblem prob{&m, obs, w, inv::BaeLikelihood::assemble(zero, zero, 0.01), inv::default_prior({}),
                           inv::forward_mean(m, obs, kR0, w)};
  const Vec r = (Vec(3) << 125, 0.08, 1.0e12).finished();
  Vec g;
  prob.value(r, &g);
  for (int i = 0; i < 3; ++i) {
    const double h = 1e-5 * std::abs(r[i]);
    Vec rp = r, rm = r;
    rp[i] += h;
    rm[i] -= h;
    const double fd = (prob.value(rp, nullptr) - prob.value(rm, nullptr)) / (2 * h);
    EXPECT_NEAR(g[i] / fd, 1.0, 1e-5) << "component " << i;
  }
}

TEST(Map, InverseCrimeRecovery) {
  const auto& m = fixture::default_models();
  const auto winds = fixture::training_winds();
  const std::vector<inv::WindSeries> one{winds[3]};
  const auto obs = inv::ObservationOperator::uniform(72, 9);
  const inv::Moments zero{Vec::Zero(obs.size()), Mat::Zero(obs.size(), obs.size())};
  const Vec truth = (Vec(3) << 121.5, 0.081, 1.3e12).finished();
  inv::InverseProblem prob{&m, obs, one, inv::BaeLikelihood::assemble(zero, zero, 0.01), inv::default_prior({}),
                           inv::forward_mean(m, obs, truth, one)};
  prob.use_prior = false;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = inv::map_estimate(prob, {});
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 300.0);
  EXPECT_LT((res.r0 - truth).norm() / truth.norm(), 1e-3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(res.r0[i] / truth[i], 1.0, 1e-3) << i;
  for (const auto& s : res.starts) {
    for (std::size_t k = 1; k < s.trace.size(); ++k) EXPECT_LE(s.trace[k], s.trace[k - 1]);
  }
}

TEST(Map, StartAtKnownAnswerIsReturned) {
  const auto m = random_models(17);
  Rng rng(18);
  const auto obs = inv::ObservationOperator::uniform(36, 9);
  const auto w = random_winds(rng, 4, 9, 2);
  const inv::Moments zero{Vec::Zero(obs.size()), Mat::Zero(obs.size(), obs.size())};
  auto prior = inv::default_prior({});
  prior = inv::Prior::make(kR0, prior.cov);
  inv::InverseProblem prob{&m, obs, w, inv::BaeLikelihood::assemble(zero, zero, 0.01), prior,
                           inv::forward_mean(m, obs, kR0, w)};
  const auto res = inv::map_estimate(prob, {}, {kR0});
  EXPECT_EQ(res.r0, kR0);
  EXPECT_EQ(res.starts.size(), 1u);
}

TEST(Map, EveryStartFailingIsReported) {
  const auto m = random_models(19);
  Rng rng(20);
  const auto obs = inv::ObservationOperator::uniform(12, 9);
  const auto w = random_winds(rng, 2, 9, 2);
  const inv::Moments zero{Vec::Zero(obs.size()), Mat::Zero(obs.size(), obs.size())};
  Vec bad_data = Vec::Constant(obs.size(), std::numeric_limits<double>::quiet_NaN());
  inv::InverseProblem prob{&m, obs, w, inv::BaeLikelihood::assemble(zero, zero, 0.01), inv::default_prior({}), bad_data};
  inv::MapOptions opt;
  opt.starts = 2;
  try {
    inv::map_estimate(prob, opt);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("start 1"), std::string::npos) << e.what();
  }
}

TEST(Laplace, ExactOnQuadratics) {
  Rng rng(21);
  const int n = 5;
  const Mat A = Mat::NullaryExpr(n, n, [&] { return rng.normal(); });
  const Mat H = A * A.transpose() + Mat::Identity(n, n);
  const Vec x0 = Vec::NullaryExpr(n, [&] { return rng.normal(); });
  const auto lap = inv::laplace([&](const Vec& x) -> Vec { return H * (x - x0); }, x0, Vec::Constant(n, 1e-3));
  const Mat truth = H.inverse();
  EXPECT_FALSE(lap.regularized);
  EXPECT_LT((lap.covariance - truth).norm() / truth.norm(), 1e-8);
  EXPECT_LT((lap.hessian - H).norm() / H.norm(), 1e-6);

  const auto draws = lap.sample(100000, 5);
  Vec mean = Vec::Zero(n);
  for (const auto& d : draws) mean += d;
  mean /= static_cast<double>(draws.size());
  Mat cov = Mat::Zero(n, n);
  for (const auto& d : draws) cov += (d - mean) * (d - mean).transpose();
  cov /= static_cast<double>(draws.size() - 1);
  for (int i = 0; i < n; ++i) {
    const double se = std::sqrt(truth(i, i) / static_cast<double>(draws.size()));
    EXPECT_LT(std::abs(mean[i] - x0[i]), 3 * se);
    for (int j = 0; j < n; ++j) {
      // Standard error of a sample covariance entry.
      const double se_c = std::sqrt((truth(i, j) * truth(i, j) + truth(i, i) * truth(j, j)) / static_cast<double>(draws.size()));
      EXPECT_LT(std::abs(cov(i, j) - truth(i, j)), 4 * se_c);
    }
  }
}

TEST(Laplace, IndefiniteHessianIsFloored) {
  const Mat H = (Vec(2) << 2.0, -1.0).finished().asDiagonal();
  const auto lap = inv::laplace([&](const Vec& x) -> Vec { return H * x; }, Vec::Zero(2), Vec::Constant(2, 1e-3));
  EXPECT_TRUE(lap.regularized);
  EXPECT_GT(lap.floor, 0.0);
  EXPECT_NEAR(lap.covariance(0, 0), 0.5, 1e-9);
  EXPECT_NEAR(lap.covariance(1, 1), 1.0 / lap.floor, 1e-6 / lap.floor);
}

TEST(Observations, NoiseModel) {
  const auto& c = fixture::default_campaign();
  const auto& t = *c.ds.split(datagen::Split::kTest).front();
  const auto obs = inv::ObservationOperator::uniform(72, 9);
  std::vector<double> total(t.rho_v.size());
  for (std::size_t i = 0; i < total.size(); ++i) total[i] = t.rho_v[i] + t.rho_b[i];
  const Vec clean = inv::sample_field(obs, c.ds.grid, total);
  EXPECT_EQ(inv::synthesize_observations(t, c.ds.grid, obs, 0.0, 1), clean);
  EXPECT_EQ(inv::synthesize_observations(t, c.ds.grid, obs, 0.012, 4), inv::synthesize_observations(t, c.ds.grid, obs, 0.012, 4));
  double ss = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Vec e = inv::synthesize_observations(t, c.ds.grid, obs, 0.012, seed) - clean;
    ss += e.squaredNorm();
    n += static_cast<std::size_t>(e.size());
  }
  EXPECT_NEAR(ss / static_cast<double>(n) / (0.012 * 0.012), 1.0, 0.05);
}

namespace {

struct CampaignInversion {
  inv::InverseProblem prob;
  const datagen::Trajectory* truth;
};

CampaignInversion campaign_problem(std::size_t test_index, int n_days) {
  const auto& c = fixture::default_campaign();
  const auto& m = fixture::default_models();
  const auto obs = inv::ObservationOperator::uniform(72, n_days);
  const auto prior = inv::default_prior({});
  const auto winds = fixture::training_winds();
  const auto bg = inv::estimate_background(c.ds.split(datagen::Split::kTrain), c.ds.grid, obs);
  const auto bae = inv::estimate_bae(m, obs, prior.mean, winds);
  const auto* t = c.ds.split(datagen::Split::kTest)[test_index];
  return {inv::InverseProblem{&m, obs, winds, inv::BaeLikelihood::assemble(bg, bae, 0.01), prior,
                              inv::synthesize_observations(*t, c.ds.grid, obs, 0.012, 100 + test_index)},
          t};
}

}  // namespace

TEST(Map, CampaignTestEnsemblesDecodeWithinTolerance) {
  const auto& c = fixture::default_campaign();
  for (std::size_t i = 0; i < 2; ++i) {
    const auto ci = campaign_problem(i, 9);
    const auto res = inv::map_estimate(ci.prob, {});
    const double err = rel_l2(inv::decode(res.r0, c.ds.grid.lon), datagen::day_slice(ci.truth->alpha_v, c.ds.grid.n_lon(), 0));
    EXPECT_LE(err, 0.35) << ci.truth->name();
  }
}

TEST(Laplace, MoreDaysContractThePosterior) {
  const auto full = campaign_problem(0, 9), short_window = campaign_problem(0, 3);
  const auto map_full = inv::map_estimate(full.prob, {}), map_short = inv::map_estimate(short_window.prob, {});
  const auto lap_full = inv::posterior_laplace(full.prob, map_full.r0);
  const auto lap_short = inv::posterior_laplace(short_window.prob, map_short.r0);
  EXPECT_LE(lap_full.covariance.trace(), lap_short.covariance.trace());
  for (int i = 0; i < 3; ++i) EXPECT_LE(lap_full.covariance(i, i), lap_short.covariance(i, i)) << i;
}
