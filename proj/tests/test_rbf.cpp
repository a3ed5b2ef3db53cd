#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "plume/datagen.hpp"
#include "plume/random.hpp"
#include "plume/rbf.hpp"

using namespace plume;
using rbf::Coords;
using rbf::Term;

namespace {

// Independent long image sum, written without the library's truncation rule.
double long_sum(const Term& t, double x, int m_max, double period = 360.0) {
  double s = 0.0;
  for (int m = -m_max; m <= m_max; ++m) {
    const double d = x + m * period - t.center;
    s += std::exp(-t.shape * t.shape * d * d);
  }
  return t.coeff * s;
}

// Periodic trapezoid rule on n points over one period.
double trapezoid_mass(const Term& t, int n) {
  Coords c{{t}};
  const auto grid = rbf::uniform_grid(static_cast<std::size_t>(n));
  const auto v = rbf::eval_basis(c, {}, grid);
  double s = 0.0;
  for (double x : v) s += x;
  return s * 360.0 / n;
}

std::vector<double> sample(const Coords& c, const std::vector<double>& grid) {
  return rbf::eval_basis(c, {}, grid);
}

}  // namespace

TEST(RbfEval, CenterValueIsCoefficient) {
  Coords c{{{180.0, 1.0, 1.0}}};
  const std::vector<double> x{180.0};
  EXPECT_NEAR(rbf::eval_basis(c, {}, x)[0], 1.0, 1e-15);
}

TEST(RbfEval, Periodicity) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Term t{rng.uniform(-400, 800), rng.uniform(0.005, 0.5), rng.uniform(0.1, 5)};
    const double x = rng.uniform(0, 360);
    EXPECT_NEAR(rbf::eval_term(t, x), rbf::eval_term(Term{t.center + 360.0, t.shape, t.coeff}, x), 1e-12 * t.coeff);
    // value at 0 equals the value with the evaluation point shifted by one period
    EXPECT_NEAR(rbf::eval_term(t, 0.0), long_sum(t, 360.0, 60), 1e-12 * t.coeff);
  }
}

TEST(RbfEval, TruncationMatchesLongSumOracle) {
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Term t{rng.uniform(0, 360), rng.uniform(0.05, 2.0), rng.uniform(0, 10)};
    const double x = rng.uniform(0, 360);
    worst = std::max(worst, std::abs(rbf::eval_term(t, x) - long_sum(t, x, 50)));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(RbfEval, NonPositiveShapeRejected) {
  Coords c{{{10.0, 0.0, 1.0}}};
  const std::vector<double> x{0.0};
  EXPECT_THROW(rbf::eval_basis(c, {}, x), DomainError);
  EXPECT_THROW(rbf::basis_mass(Term{0, -1, 1}), DomainError);
}

TEST(RbfMass, ClosedForm) {
  EXPECT_NEAR(rbf::basis_mass(Term{0, 1, 2}), 2.0 * std::sqrt(std::numbers::pi), 1e-15);
  EXPECT_NEAR(rbf::basis_mass(Term{0, 1, 2}), 3.5449077, 1e-7);
  EXPECT_EQ(rbf::basis_mass(Term{30, 0.3, 0.0}), 0.0);
}

TEST(RbfMass, MatchesQuadratureOracle) {
  const Term t{123.4, 0.1, 2.5};
  EXPECT_NEAR(rbf::basis_mass(t) / trapezoid_mass(t, 10000), 1.0, 1e-8);
}

TEST(RbfFit, RecoversExactlyRepresentableField) {
  const auto grid = rbf::uniform_grid(144);
  const Coords truth{{{210.0, 0.08, 5.0}}};
  const auto field = sample(truth, grid);
  const Coords init = rbf::initial_guess(field, grid, 1);
  const auto r = rbf::fit(field, grid, init);
  ASSERT_FALSE(r.unidentifiable);
  EXPECT_NEAR(rbf::wrap(r.coords.terms[0].center) / 210.0, 1.0, 1e-6);
  EXPECT_NEAR(r.coords.terms[0].shape / 0.08, 1.0, 1e-6);
  EXPECT_NEAR(r.coords.terms[0].coeff / 5.0, 1.0, 1e-6);
}

TEST(RbfFit, RoundTripAcrossSeam) {
  const auto grid = rbf::uniform_grid(144);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const Coords truth{{{rng.uniform(0, 360), rng.uniform(0.03, 0.3), rng.uniform(0.5, 10)}}};
    const auto field = sample(truth, grid);
    const auto r = rbf::fit(field, grid, rbf::initial_guess(field, grid, 1));
    const auto& got = r.coords.terms[0];
    EXPECT_NEAR(std::remainder(got.center - truth.terms[0].center, 360.0), 0.0, 1e-6 * truth.terms[0].center + 1e-9);
    EXPECT_NEAR(got.shape / truth.terms[0].shape, 1.0, 1e-6);
    EXPECT_NEAR(got.coeff / truth.terms[0].coeff, 1.0, 1e-6);
  }
}

TEST(RbfFit, ZeroFieldIsUnidentifiable) {
  const auto grid = rbf::uniform_grid(96);
  const std::vector<double> field(96, 0.0);
  const Coords init{{{50.0, 0.1, 1.0}}};
  const auto r = rbf::fit(field, grid, init);
  EXPECT_TRUE(r.unidentifiable);
  EXPECT_EQ(r.coords.terms[0].coeff, 0.0);
  EXPECT_EQ(r.coords.terms[0].center, 50.0);
  EXPECT_EQ(r.coords.terms[0].shape, 0.1);
}

TEST(RbfFit, NonFiniteInputRejected) {
  const auto grid = rbf::uniform_grid(96);
  std::vector<double> field(96, 1.0);
  field[3] = std::nan("");
  EXPECT_THROW(rbf::fit(field, grid, Coords{{{50.0, 0.1, 1.0}}}), DataError);
}

TEST(RbfFit, TwoBumpFieldNearGridSearchOptimum) {
  const auto grid = rbf::uniform_grid(144);
  const Coords two{{{100.0, 0.05, 3.0}, {150.0, 0.08, 2.0}}};
  const auto field = sample(two, grid);
  double norm2 = 0.0;
  for (double v : field) norm2 += v * v;

  // Oracle: dense search over (center, shape) with the exact optimal coefficient.
  double best = 1e300;
  for (int i = 0; i < 720; ++i) {
    const double x = 0.5 * i;
    for (int j = 0; j < 240; ++j) {
      const double a = 0.01 * std::pow(30.0, j / 239.0);
      Coords c{{{x, a, 1.0}}};
      const auto b = sample(c, grid);
      double num = 0, den = 0;
      for (std::size_t k = 0; k < grid.size(); ++k) {
        num += b[k] * field[k];
        den += b[k] * b[k];
      }
      const double coef = std::max(0.0, num / den);
      double ssq = 0;
      for (std::size_t k = 0; k < grid.size(); ++k) ssq += std::pow(coef * b[k] - field[k], 2);
      best = std::min(best, ssq);
    }
  }
  const auto r = rbf::fit(field, grid, rbf::initial_guess(field, grid, 1));
  const double got = r.residual * r.residual * norm2;
  EXPECT_LE(got, best * 1.01);
}

TEST(RbfTimeseries, ConstantFieldGivesConstantCoords) {
  const auto grid = rbf::uniform_grid(144);
  const auto field = sample(Coords{{{77.0, 0.06, 4.0}}}, grid);
  std::vector<std::vector<double>> days(4, field);
  const auto fits = rbf::fit_timeseries(days, grid, 1);
  for (std::size_t k = 1; k < fits.size(); ++k) {
    EXPECT_NEAR(fits[k].coords.terms[0].center, fits[0].coords.terms[0].center, 1e-10);
    EXPECT_NEAR(fits[k].coords.terms[0].shape, fits[0].coords.terms[0].shape, 1e-10);
    EXPECT_NEAR(fits[k].coords.terms[0].coeff / fits[0].coords.terms[0].coeff, 1.0, 1e-10);
  }
}

namespace {

std::vector<std::vector<double>> so2_days(const datagen::Trajectory& t, std::size_t n_lon, int n_days) {
  std::vector<std::vector<double>> days;
  for (int d = 0; d < n_days; ++d) {
    const auto s = datagen::day_slice(t.alpha_v, n_lon, static_cast<std::size_t>(d));
    days.emplace_back(s.begin(), s.end());
  }
  return days;
}

}  // namespace

TEST(RbfTimeseries, PureAdvectionCentersMoveWithWind) {
  datagen::SimulationConfig cfg;
  cfg.diffusion_deg2_per_day = 0.0;
  cfg.reaction_rate_per_day = 0.0;
  cfg.wind_noise = 0.0;
  cfg.wind_shear = 0.0;
  cfg.wind_lat_factor = 0.0;
  cfg.base_wind_deg_per_day = 13.7;
  const auto trajs = datagen::generate_ensemble(cfg, 1, {5.0});
  const auto grid = datagen::Grid::make(cfg);
  const auto fits = rbf::fit_timeseries(so2_days(trajs[0], grid.n_lon(), cfg.n_days), grid.lon, 1);
  for (std::size_t k = 1; k < fits.size(); ++k) {
    const double moved = fits[k].coords.terms[0].center - fits[k - 1].coords.terms[0].center;
    EXPECT_NEAR(moved, -13.7, 0.5) << "day " << k;
  }
}

TEST(RbfTimeseries, DiffusionWidensPlumeMonotonically) {
  datagen::SimulationConfig cfg;
  cfg.wind_noise = 0.0;
  const auto trajs = datagen::generate_ensemble(cfg, 1, {10.0});
  const auto grid = datagen::Grid::make(cfg);
  const auto fits = rbf::fit_timeseries(so2_days(trajs[0], grid.n_lon(), cfg.n_days), grid.lon, 1);
  for (std::size_t k = 1; k < fits.size(); ++k) {
    EXPECT_LT(fits[k].coords.terms[0].shape, fits[k - 1].coords.terms[0].shape) << "day " << k;
  }
}

TEST(RbfTimeseries, MassLossOnCampaignBelowFifteenPercent) {
  datagen::SimulationConfig cfg;
  const auto trajs = datagen::generate_ensemble(cfg, 104);
  const auto grid = datagen::Grid::make(cfg);
  for (const auto& t : trajs) {
    const auto fits = rbf::fit_timeseries(so2_days(t, grid.n_lon(), cfg.n_days), grid.lon, 1);
    for (int d = 0; d < cfg.n_days; ++d) {
      double raw = 0.0;
      for (double v : datagen::day_slice(t.alpha_v, grid.n_lon(), static_cast<std::size_t>(d))) raw += v * grid.dlon();
      const double fitted = rbf::total_mass(fits[static_cast<std::size_t>(d)].coords);
      EXPECT_LT(std::abs(1.0 - fitted / raw), 0.15);
    }
  }
}

TEST(RbfUnwrap, RemovesPeriodJumps) {
  std::vector<Coords> s{Coords{{{5.0, 0.1, 1}}}, Coords{{{355.0, 0.1, 1}}}, Coords{{{340.0, 0.1, 1}}}};
  rbf::unwrap_centers(s);
  EXPECT_DOUBLE_EQ(s[1].terms[0].center, -5.0);
  EXPECT_DOUBLE_EQ(s[2].terms[0].center, -20.0);
}
