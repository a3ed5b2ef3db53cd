#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "plume/datagen.hpp"

using namespace plume;
using namespace plume::datagen;

namespace {

double mass_on_day(const std::vector<double>& f, std::size_t n_lon, std::size_t day) {
  const auto s = day_slice(f, n_lon, day);
  return std::accumulate(s.begin(), s.end(), 0.0);
}

}  // namespace

TEST(Datagen, PureAdvectionIsCircularShift) {
  SimulationConfig cfg;
  cfg.diffusion_deg2_per_day = 0.0;
  cfg.reaction_rate_per_day = 0.0;
  cfg.wind_noise = 0.0;
  cfg.wind_shear = 0.0;
  cfg.wind_lat_factor = 0.0;
  cfg.base_wind_deg_per_day = 10.0;
  const auto t = generate_ensemble(cfg, 9, {7.0}).front();
  const std::size_t n = static_cast<std::size_t>(cfg.n_lon);
  const double cells_per_day = 10.0 / (360.0 / cfg.n_lon);  // 4 cells at 2.5 degrees
  double peak = *std::max_element(t.alpha_v.begin(), t.alpha_v.begin() + static_cast<long>(n));
  for (int d = 1; d < cfg.n_days; ++d) {
    const auto shift = static_cast<std::size_t>(std::lround(cells_per_day * d));
    for (std::size_t i = 0; i < n; ++i) {
      const double expected = t.alpha_v[(i + shift) % n];  // westward: value moves to lower index
      EXPECT_NEAR(t.alpha_v[static_cast<std::size_t>(d) * n + i], expected, 1e-6 * peak);
    }
  }
}

TEST(Datagen, DayZeroSulfateRatioInObservedBand) {
  SimulationConfig cfg;
  const auto t = generate_ensemble(cfg, 1, {10.0}).front();
  const std::size_t n = static_cast<std::size_t>(cfg.n_lon);
  const double ratio = mass_on_day(t.beta_v, n, 0) / mass_on_day(t.alpha_v, n, 0);
  EXPECT_GE(ratio, 0.0533);
  EXPECT_LE(ratio, 0.0558);
  EXPECT_NEAR(mass_on_day(t.alpha_v, n, 0) / 10.0e12, 1.0, 1e-14);
}

TEST(Datagen, SeedDeterminism) {
  SimulationConfig cfg;
  const auto a = generate_ensemble(cfg, 42);
  const auto b = generate_ensemble(cfg, 42);
  const auto c = generate_ensemble(cfg, 43);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].alpha_v, b[j].alpha_v);
    EXPECT_EQ(a[j].beta_v, b[j].beta_v);
    EXPECT_EQ(a[j].rho_v, b[j].rho_v);
    EXPECT_EQ(a[j].rho_b, b[j].rho_b);
    EXPECT_EQ(a[j].omega, b[j].omega);
    EXPECT_EQ(a[j].alpha_v_3d, b[j].alpha_v_3d);
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < a[0].omega.size(); ++i) diff = std::max(diff, std::abs(a[0].omega[i] - c[0].omega[i]));
  EXPECT_GT(diff, 0.0);
}

TEST(Datagen, InvariantsHold) {
  SimulationConfig cfg;
  const auto trajs = generate_ensemble(cfg, 7);
  EXPECT_EQ(trajs.size(), cfg.injection_masses_tg.size());
  const std::size_t n = static_cast<std::size_t>(cfg.n_lon);
  for (const auto& t : trajs) {
    for (const auto* f : {&t.alpha_v, &t.beta_v, &t.rho_v, &t.rho_b, &t.alpha_v_3d}) {
      EXPECT_GE(*std::min_element(f->begin(), f->end()), 0.0);
    }
    const double m0 = sulfur_moles(t, n, 0, cfg);
    for (int d = 1; d < cfg.n_days; ++d) {
      EXPECT_NEAR(sulfur_moles(t, n, static_cast<std::size_t>(d), cfg) / m0, 1.0, 1e-10);
    }
    for (std::size_t i = 0; i < t.rho_v.size(); ++i) EXPECT_DOUBLE_EQ(t.rho_v[i], cfg.aod_per_gram * t.beta_v[i]);
  }
}

TEST(Datagen, ColumnIntegrationRecoversOneDimensionalField) {
  SimulationConfig cfg;
  const auto grid = Grid::make(cfg);
  const auto t = generate_ensemble(cfg, 3, {5.0}).front();
  const std::size_t n = grid.n_lon(), nc = grid.n_column();
  for (std::size_t d : {0u, 5u}) {
    const std::span<const double> f3(t.alpha_v_3d.data() + d * n * nc, n * nc);
    const auto f1 = column_integrate(f3, n, grid.column_measure);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(f1[i], t.alpha_v[d * n + i], 1e-12 * 1e12);
  }
}

TEST(ColumnIntegrate, UnitFieldGivesColumnMeasure) {
  const std::vector<double> measure{0.25, 0.25, 0.5};
  const std::vector<double> ones(4 * 3, 1.0);
  const auto out = column_integrate(ones, 4, measure);
  for (double v : out) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(ColumnIntegrate, SeparableField) {
  const std::vector<double> measure{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> g{2.0, 1.0, 3.0, 0.5};
  const double int_g = 0.1 * 2 + 0.2 * 1 + 0.3 * 3 + 0.4 * 0.5;
  std::vector<double> f(10 * 4);
  std::vector<double> gauss(10);
  for (int i = 0; i < 10; ++i) {
    gauss[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 4.5) * (i - 4.5));
    for (int c = 0; c < 4; ++c) f[static_cast<std::size_t>(i * 4 + c)] = gauss[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(c)];
  }
  const auto out = column_integrate(f, 10, measure);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(out[i], gauss[i] * int_g, 1e-15);
}

TEST(ColumnIntegrate, TotalPreservedAgainstDirectSum) {
  Rng rng(8);
  const std::size_t n = 64, nc = 12;
  std::vector<double> measure(nc), f(n * nc);
  for (auto& m : measure) m = rng.uniform(0.1, 1.0);
  for (auto& v : f) v = rng.uniform(0.0, 1e6);
  const auto out = column_integrate(f, n, measure);
  double direct = 0.0;
  for (std::size_t i = 0; i < n; ++i) for (std::size_t c = 0; c < nc; ++c) direct += f[i * nc + c] * measure[c];
  EXPECT_NEAR(std::accumulate(out.begin(), out.end(), 0.0) / direct, 1.0, 1e-12);
}

TEST(ColumnIntegrate, ShapeMismatchRejected) {
  const std::vector<double> measure{0.5, 0.5};
  const std::vector<double> f(7, 1.0);
  EXPECT_THROW(column_integrate(f, 4, measure), DataError);
}

TEST(Datagen, StabilityViolationRejected) {
  SimulationConfig cfg;
  cfg.n_lon = 360;
  cfg.diffusion_deg2_per_day = 5.0;
  EXPECT_THROW(generate_ensemble(cfg, 1, {5.0}), NumericalError);
}

TEST(Campaign, DefaultSplitCounts) {
  SimulationConfig cfg;
  cfg.n_lat = 2;
  cfg.n_alt = 2;
  const auto ds = build_campaign(cfg);
  EXPECT_EQ(ds.split(Split::kTrain).size(), 35u);
  EXPECT_EQ(ds.split(Split::kValidation).size(), 5u);
  EXPECT_EQ(ds.split(Split::kTest).size(), 2u);
  for (const auto* test : ds.split(Split::kTest)) {
    for (const auto* train : ds.split(Split::kTrain)) {
      EXPECT_FALSE(test->ensemble == train->ensemble && test->mass_tg == train->mass_tg);
    }
    EXPECT_DOUBLE_EQ(test->mass_tg, 10.0);
  }
}

TEST(Campaign, ReconfiguredSplits) {
  SimulationConfig cfg;
  cfg.n_lat = 2;
  cfg.n_alt = 2;
  cfg.injection_masses_tg = {4.0};
  cfg.ensemble_seeds = {1, 2, 3};
  cfg.n_train_ensembles = 3;
  cfg.n_validation_ensembles = 0;
  cfg.n_test_ensembles = 0;
  EXPECT_EQ(build_campaign(cfg).split(Split::kTrain).size(), 3u);
}

TEST(Campaign, TooFewSeedsRejected) {
  SimulationConfig cfg;
  cfg.ensemble_seeds.resize(8);
  EXPECT_THROW(build_campaign(cfg), ConfigError);
}

TEST(Campaign, JobsDoNotChangeOutput) {
  SimulationConfig cfg;
  cfg.n_lat = 2;
  cfg.n_alt = 2;
  const auto a = build_campaign(cfg, 1);
  const auto b = build_campaign(cfg, 4);
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    EXPECT_EQ(a.trajectories[i].alpha_v, b.trajectories[i].alpha_v);
    EXPECT_EQ(a.trajectories[i].rho_b, b.trajectories[i].rho_b);
  }
}
