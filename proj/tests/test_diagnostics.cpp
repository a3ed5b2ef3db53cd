#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "campaign_fixture.hpp"
#include "plume/diagnostics.hpp"
#include "plume/random.hpp"
#include "plume/studies.hpp"

using namespace plume;
using diag::Mat;
using diag::Vec;

TEST(ReactionRate, DirectFormula) {
  const std::vector<double> a{100, 90};
  const auto r = diag::reaction_rate(a);
  ASSERT_EQ(r.lambda.size(), 1u);
  EXPECT_DOUBLE_EQ(r.lambda[0], -0.1);
  const std::vector<double> c(6, 3.0);
  for (double l : diag::reaction_rate(c).lambda) EXPECT_EQ(l, 0.0);
}

TEST(ReactionRate, ExponentialDecayIsConstant) {
  const double rate = 0.055;
  std::vector<double> a;
  for (int n = 0; n < 10; ++n) a.push_back(1e13 * std::exp(-rate * n));
  const auto r = diag::reaction_rate(a);
  EXPECT_EQ(r.lambda.size(), 9u);
  for (double l : r.lambda) EXPECT_NEAR(l, std::expm1(-rate), 1e-14);
  EXPECT_LT(r.stddev(), 1e-15);
  EXPECT_LT(study::summarize_rates({a, a}).mean_std, 1e-15);
}

TEST(ReactionRate, NonPositiveMassFlagged) {
  const std::vector<double> a{10, 0, 5, 4};
  const auto r = diag::reaction_rate(a);
  EXPECT_EQ(r.n_undefined(), 1u);
  EXPECT_FALSE(r.defined[1]);
  EXPECT_TRUE(std::isnan(r.lambda[1]));
  EXPECT_TRUE(std::isfinite(r.stddev()));
}

TEST(Mahalanobis, ZeroAtMeanAndEuclideanForIdentityCovariance) {
  const int d = 4;
  const Vec mu = (Vec(d) << 1, -2, 3, 0.5).finished();
  const double c = std::sqrt((2.0 * d - 1.0) / 2.0);
  std::vector<Vec> train;
  for (int i = 0; i < d; ++i) {
    train.push_back(mu + c * Vec::Unit(d, i));
    train.push_back(mu - c * Vec::Unit(d, i));
  }
  EXPECT_NEAR(diag::mahalanobis(train, mu), 0.0, 1e-12);
  const Vec w = (Vec(d) << 0.3, 1.0, -2.0, 4.0).finished();
  EXPECT_NEAR(diag::mahalanobis(train, w), (w - mu).norm(), 1e-12);
}

TEST(Mahalanobis, AffineInvariance) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 3 + trial % 4;
    const bool deficient = trial % 2;
    const int n = deficient ? d - 1 : 3 * d;
    std::vector<Vec> train;
    for (int i = 0; i < n; ++i) train.push_back(Vec::NullaryExpr(d, [&] { return rng.normal(); }));
    Vec w = Vec::NullaryExpr(d, [&] { return rng.normal(); });
    if (deficient) {
      // Keep the test point inside the affine span of the training samples.
      w = train[0];
      for (int i = 1; i < n; ++i) w += rng.normal() * (train[static_cast<std::size_t>(i)] - train[0]);
    }
    const Mat A = Mat::NullaryExpr(d, d, [&] { return rng.normal(); }) + 2.0 * Mat::Identity(d, d);
    const Vec b = Vec::NullaryExpr(d, [&] { return 10 * rng.normal(); });
    std::vector<Vec> mapped;
    for (const auto& t : train) mapped.push_back(A * t + b);
    const double d0 = diag::mahalanobis(train, w), d1 = diag::mahalanobis(mapped, A * w + b);
    EXPECT_NEAR(d1, d0, 1e-8 * std::max(1.0, d0)) << "trial " << trial;
  }
}

TEST(Mahalanobis, PseudoInverseDropsTheMeanDirection) {
  // 35 samples in 100 dimensions: the covariance has rank 34 and the distance stays finite.
  Rng rng(2);
  std::vector<Vec> train;
  for (int i = 0; i < 35; ++i) train.push_back(Vec::NullaryExpr(100, [&] { return rng.normal(); }));
  const double dist = diag::mahalanobis(train, Vec::NullaryExpr(100, [&] { return rng.normal(); }));
  EXPECT_TRUE(std::isfinite(dist));
  EXPECT_GT(dist, 0.0);
}

TEST(RelativeL2, Examples) {
  const std::vector<double> b{1, -2, 3}, b2{2, -4, 6}, z{0, 0, 0};
  EXPECT_EQ(diag::relative_l2(b, b), 0.0);
  EXPECT_DOUBLE_EQ(diag::relative_l2(b2, b), 1.0);
  EXPECT_THROW(diag::relative_l2(b, z), DataError);
}

TEST(MassLoss, RawConservedAndFitsWithinBound) {
  const auto& c = fixture::default_campaign();
  for (std::size_t i = 0; i < c.ds.trajectories.size(); ++i) {
    const auto curve = diag::mass_loss_curve(c.ds.trajectories[i], c.ds.config, c.fits.so2[i], c.fits.sulfate[i]);
    ASSERT_EQ(curve.raw.size(), static_cast<std::size_t>(c.ds.config.n_days));
    for (std::size_t d = 0; d < curve.raw.size(); ++d) {
      EXPECT_NEAR(curve.raw[d], 1.0, 1e-10);
      EXPECT_LE(std::abs(1.0 - curve.fit[d]), 0.15);
    }
  }
}

TEST(RankStudy, SingleRankAndDeterminism) {
  const auto& c = fixture::default_campaign();
  flow::TrainOptions opt;
  opt.epochs = 40;
  const auto a = study::rank_study(c.ds, c.fits, c.wind, {3}, 2, opt, 5);
  ASSERT_EQ(a.rows.size(), 1u);
  EXPECT_EQ(a.best_rank, 3);
  EXPECT_TRUE(std::isfinite(a.rows[0].mean));
  const auto b = study::rank_study(c.ds, c.fits, c.wind, {3}, 2, opt, 5, 2);
  EXPECT_EQ(a.rows[0].errors, b.rows[0].errors);
}

TEST(RateStudy, SmallGridDeterministicWithProvenance) {
  const auto& c = fixture::default_campaign();
  study::RateStudyOptions o;
  o.depths = {0, 1};
  o.widths = {7};
  o.seeds_per_schedule = 1;
  o.schedules = {{0.03, 0.99}};
  o.n_samples = 50;
  flow::TrainOptions opt;
  opt.epochs = 40;
  const auto a = study::reaction_rate_study(c.ds, c.samples, opt, o);
  const auto b = study::reaction_rate_study(c.ds, c.samples, opt, o, 2);
  ASSERT_EQ(a.cells.size(), 2u);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(a.cells[i].best, b.cells[i].best);
    EXPECT_EQ(a.cells[i].best_summary.band_lo, b.cells[i].best_summary.band_lo);
  }
  EXPECT_EQ(a.box.r0_source, "validation");
  EXPECT_EQ(a.box.wind_source, "train");
  EXPECT_EQ(a.training.band_lo.size(), static_cast<std::size_t>(c.ds.config.n_days - 1));
  EXPECT_EQ(a.cells[0].best_summary.band_lo.size(), static_cast<std::size_t>(c.ds.config.n_days - 1));
}

TEST(RateStudy, SamplingBoxWidensValidationRange) {
  std::vector<flow::Sample> v(2), t(1);
  v[0].r = {(Vec(3) << 100, 0.1, 10).finished()};
  v[1].r = {(Vec(3) << 120, 0.2, 20).finished()};
  t[0].w = {(Vec(2) << -1, 2).finished(), (Vec(2) << 3, -4).finished()};
  const auto box = study::sampling_box({&v[0], &v[1]}, {&t[0]});
  EXPECT_DOUBLE_EQ(box.r0_lo[0], 90);
  EXPECT_DOUBLE_EQ(box.r0_hi[0], 132);
  EXPECT_DOUBLE_EQ(box.r0_hi[2], 22);
  EXPECT_EQ(box.wind_lo, (Vec(2) << -1, -4).finished());
  EXPECT_EQ(box.wind_hi, (Vec(2) << 3, 2).finished());
}
