#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "plume/flowmap.hpp"
#include "plume/random.hpp"
#include "flow_helpers.hpp"

using namespace plume;
using flow::Mat;
using flow::Vec;
using namespace plume::testkit;

namespace {

Vec coords(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(Transform, RoundTripAndZeroCoefficient) {
  const Vec u = flow::transform(coords({180, 2, 4}));
  EXPECT_EQ(u, coords({180, 2, 2}));
  EXPECT_EQ(flow::inverse_transform(u), coords({180, 2, 4}));
  EXPECT_EQ(flow::transform(coords({10, 0.3, 0}))[2], 0.0);
  EXPECT_THROW(flow::transform(coords({1, 0, 1})), DomainError);
  EXPECT_THROW(flow::inverse_transform(coords({1, -1, 1})), DomainError);
}

TEST(Transform, MassOfInverseIsSqrtPiTimesThirdComponent) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double m = rng.uniform(0, 1e12);
    const Vec r = flow::inverse_transform(coords({rng.uniform(0, 360), rng.uniform(0.01, 2), m}));
    EXPECT_NEAR(rbf::basis_mass(rbf::Term{r[0], r[1], r[2]}) / (std::sqrt(std::numbers::pi) * m), 1.0, 1e-14);
  }
}

TEST(Step, ZeroParametersAreIdentity) {
  const auto p = flow::make_params(2, 3);
  const Vec r = coords({100, 0.1, 5, 40, 0.2, 1});
  EXPECT_EQ(flow::step(p, r, Vec::Ones(6)).r, r);
}

TEST(Step, MatchesDenseOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_params(rng, 2, 3, {}, 0.5, 0.0);
    const Vec r = random_state(rng, 2), w = random_wind(rng, 6);
    // Independent dense computation.
    Vec u = r;
    for (int l = 0; l < 2; ++l) u[3 * l + 2] = r[3 * l + 2] / r[3 * l + 1];
    Vec z(12);
    for (int i = 0; i < 6; ++i) z[i] = (u[i] - p.in_mean[i % 3]) / p.in_std[i % 3];
    for (int i = 0; i < 6; ++i) z[6 + i] = (w[i] - p.in_mean[3 + i % 3]) / p.in_std[3 + i % 3];
    const Vec y = p.weights[0] * z + p.biases[0];
    Vec next = u;
    for (int i = 0; i < 6; ++i) next[i] += p.dt * p.out_scale[i % 3] * std::min(0.0, y[i]);
    for (int l = 0; l < 2; ++l) next[3 * l + 2] *= next[3 * l + 1];
    const auto got = flow::step(p, r, w);
    if (got.clamped) continue;
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(got.r[i], next[i], 1e-14 * std::max(1.0, std::abs(next[i])));
  }
}

TEST(Step, ArchitectureGuaranteesMonotonicity) {
  Rng rng(3);
  std::size_t violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<int> hidden;
    if (trial % 3 == 1) hidden = {5};
    if (trial % 3 == 2) hidden = {4, 6};
    const auto p = random_params(rng, 1 + trial % 2, 2, hidden, rng.uniform(0.1, 5.0), rng.uniform(-2, 2));
    const Vec r = random_state(rng, p.n_rbf), w = random_wind(rng, p.wind_dim());
    const Vec u0 = flow::transform(r), u1 = flow::step_u(p, u0, w);
    for (Eigen::Index i = 0; i < u0.size(); ++i) violations += u1[i] > u0[i] ? 1u : 0u;
  }
  EXPECT_EQ(violations, 0u);
}

TEST(Step, ClampsAreCountedAndKeepShapePositive) {
  auto p = flow::make_params(1, 1);
  p.biases[0] = coords({0, -100, -100});
  p.out_scale = coords({1, 1, 1});
  const auto st = flow::step(p, coords({50, 0.5, 1}), coords({0}));
  EXPECT_EQ(st.clamped, 2u);
  EXPECT_EQ(st.r[1], p.shape_min);
  EXPECT_EQ(st.r[2], 0.0);
}

TEST(Step, RelaxedCenterMayIncrease) {
  auto p = flow::make_params(1, 1);
  p.monotone_center = false;
  p.biases[0] = coords({1, 0, 0});
  EXPECT_GT(flow::step(p, coords({50, 0.5, 1}), coords({0})).r[0], 50.0);
}

TEST(Conservation, NoDepletionKeepsInitialRatio) {
  auto p = flow::make_params(1, 1);
  const Vec r0 = coords({120, 0.08, 3e11});
  const Vec s0 = flow::sulfate_from_so2(p, r0, r0);
  EXPECT_EQ(s0[0], 120.0);
  EXPECT_EQ(s0[1], 0.08);
  EXPECT_NEAR(rbf::basis_mass({s0[0], s0[1], s0[2]}) / rbf::basis_mass({r0[0], r0[1], r0[2]}), p.rho0, 1e-15);
}

TEST(Conservation, OneMoleConverted) {
  auto p = flow::make_params(1, 1);
  p.rho0 = 0.0;
  const double sp = std::sqrt(std::numbers::pi);
  const double a = 0.1;
  const Vec r0 = coords({100, a, 1000.0 * a / sp});  // 1000 g
  const Vec rk = coords({90, a, (1000.0 - 64.066) * a / sp});
  const Vec sk = flow::sulfate_from_so2(p, rk, r0);
  EXPECT_NEAR(sp * sk[2] / sk[1], 96.06, 1e-10);
}

TEST(Conservation, ViolationRejected) {
  auto p = flow::make_params(1, 1);
  EXPECT_THROW(flow::sulfate_from_so2(p, coords({0, 0.1, 2}), coords({0, 0.1, 1})), NumericalError);
}

TEST(Rollout, MolesConservedAndMonotone) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_params(rng, 2, 2, trial % 2 ? std::vector<int>{5} : std::vector<int>{}, 1.0, -0.5);
    std::vector<Vec> winds;
    for (int k = 0; k < 10; ++k) winds.push_back(random_wind(rng, 4));
    Vec r0 = random_state(rng, 2);
    r0[2] *= 1e12;
    r0[5] *= 1e12;
    const auto ro = flow::rollout(p, r0, winds);
    const double moles0 = flow::sulfur_moles(p, ro.r[0], ro.s[0]);
    for (std::size_t k = 1; k < ro.r.size(); ++k) {
      EXPECT_NEAR(flow::sulfur_moles(p, ro.r[k], ro.s[k]) / moles0, 1.0, 1e-12);
      EXPECT_LE(rbf::total_mass(rbf::Coords::from_vector(ro.r[k])),
                rbf::total_mass(rbf::Coords::from_vector(ro.r[k - 1])) * (1 + 1e-14));
      for (int l = 0; l < 2; ++l) {
        EXPECT_LE(ro.r[k][3 * l], ro.r[k - 1][3 * l]);
        EXPECT_LE(ro.r[k][3 * l + 1], ro.r[k - 1][3 * l + 1]);
      }
    }
  }
}

TEST(Rollout, ZeroModelIsConstantAndCompositionIsStagewise) {
  const auto zero = flow::make_params(1, 2);
  const std::vector<Vec> winds(5, coords({1, -1}));
  const Vec r0 = coords({200, 0.05, 7});
  for (const auto& r : flow::rollout(zero, r0, winds).r) EXPECT_EQ(r, r0);

  Rng rng(5);
  const auto p = random_params(rng, 1, 2, {3}, 1.0, -0.5);
  const auto ro = flow::rollout(p, r0, winds);
  Vec r = r0;
  for (std::size_t k = 0; k < winds.size(); ++k) {
    r = flow::step(p, r, winds[k]).r;
    EXPECT_EQ(r, ro.r[k + 1]);
    EXPECT_EQ(flow::sulfate_from_so2(p, r, r0), ro.s[k + 1]);
  }
}

TEST(Loss, ExactModelGivesZero) {
  Rng rng(6);
  const auto teacher = random_params(rng, 1, 2, {}, 0.3, -1.5);
  const auto data = teacher_samples(teacher, rng, 3, 8);
  EXPECT_LT(flow::lookahead_loss_value(teacher, ptrs(data), 3), 1e-24);
}

TEST(Loss, MatchesBruteForceOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto teacher = random_params(rng, 2, 2, {}, 0.3, -1.5);
    const auto data = teacher_samples(teacher, rng, 3, 7);
    const auto p = random_params(rng, 2, 2, trial % 2 ? std::vector<int>{4} : std::vector<int>{}, 0.5, -1.0);
    for (int P : {1, 2, 3, 6}) {
      const double got = flow::lookahead_loss_value(p, ptrs(data), P);
      EXPECT_NEAR(got / brute_force_loss(p, data, P), 1.0, 1e-12) << "P=" << P;
    }
  }
}

TEST(Loss, OneStepLookaheadIsOneStepMisfit) {
  Rng rng(8);
  const auto teacher = random_params(rng, 1, 2, {}, 0.3, -1.5);
  const auto data = teacher_samples(teacher, rng, 2, 6);
  const auto p = random_params(rng, 1, 2, {}, 0.5, -1.0);
  double oracle = 0.0;
  for (const auto& s : data) {
    for (int k = 1; k + 1 <= s.n_steps(); ++k) {
      const Vec r = flow::step(p, s.r[static_cast<std::size_t>(k)], s.w[static_cast<std::size_t>(k)]).r;
      const Vec sh = flow::sulfate_from_so2(p, r, s.r[0]);
      for (int j = 0; j < 3; ++j) {
        oracle += std::pow((r[j] - s.r[static_cast<std::size_t>(k + 1)][j]) / p.r_scale[j], 2) +
                  std::pow((sh[j] - s.s[static_cast<std::size_t>(k + 1)][j]) / p.s_scale[j], 2);
      }
    }
  }
  EXPECT_NEAR(flow::lookahead_loss_value(p, ptrs(data), 1) / oracle, 1.0, 1e-12);
}


TEST(Gradient, MatchesCentralDifferences) {
  Rng rng(9);
  int checked = 0;
  double worst = 0.0;
  while (checked < 100) {
    const int n_rbf = 1 + static_cast<int>(rng.below(2));
    const auto teacher = random_params(rng, n_rbf, 2, {}, 0.3, -1.5);
    const auto data = teacher_samples(teacher, rng, 2, 6);
    std::vector<int> hidden;
    if (checked % 3 == 1) hidden = {4};
    const auto p = random_params(rng, n_rbf, 2, hidden, 0.4, -0.3);
    const int P = 1 + static_cast<int>(rng.below(3));
    const auto g = flow::loss_gradient(p, ptrs(data), P);
    if (g.clamped > 0 || kink_margin(p, data, P) < 1e-3) continue;
    const Vec fd = fd_gradient(p, data, P);
    const double scale = fd.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, std::abs(g.grad[i] - fd[i]) / std::max(std::abs(fd[i]), 1e-3 * scale));
    }
    ++checked;
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Gradient, ZeroResidualAndLinearity) {
  Rng rng(10);
  const auto teacher = random_params(rng, 1, 2, {}, 0.3, -1.5);
  const auto data = teacher_samples(teacher, rng, 3, 6);
  EXPECT_LT(flow::loss_gradient(teacher, ptrs(data), 3).grad.norm(), 1e-10);

  const auto p = random_params(rng, 1, 2, {3}, 0.5, -0.5);
  const auto g1 = flow::loss_gradient(p, ptrs(data), 2, 1.0);
  const auto g2 = flow::loss_gradient(p, ptrs(data), 2, 2.0);
  EXPECT_EQ(g2.grad, 2.0 * g1.grad);
}

TEST(Train, RecoversRepresentableSystemDeterministically) {
  Rng rng(11);
  auto teacher = random_params(rng, 1, 2, {}, 0.2, -2.0);
  teacher.out_scale = coords({0.05, 0.02, 0.03});
  auto data = teacher_samples(teacher, rng, 8, 8);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].ensemble = static_cast<int>(i % 6) + 1;
  std::vector<const flow::Sample*> tr, va;
  for (std::size_t i = 0; i < data.size(); ++i) (i < 6 ? tr : va).push_back(&data[i]);
  auto base = flow::make_params(1, 2);
  base.rho0 = teacher.rho0;
  flow::TrainOptions opt;
  opt.epochs = 1500;
  opt.learning_rate = 0.02;
  opt.decay = 0.997;
  const auto res = flow::train(tr, va, base, opt);
  ASSERT_FALSE(res.aborted) << res.message;
  EXPECT_LT(res.train_loss[static_cast<std::size_t>(res.best_epoch)], res.initial_loss);
  EXPECT_LT(res.val_loss[static_cast<std::size_t>(res.best_epoch)], 1e-6 * res.initial_val_loss);

  const auto again = flow::train(tr, va, base, opt);
  EXPECT_EQ(again.train_loss, res.train_loss);
  EXPECT_EQ(again.val_loss, res.val_loss);
  EXPECT_EQ(again.params.flatten(), res.params.flatten());
}

TEST(Train, DivergenceAborts) {
  Rng rng(12);
  const auto teacher = random_params(rng, 1, 2, {}, 0.2, -2.0);
  const auto data = teacher_samples(teacher, rng, 4, 6);
  auto base = flow::make_params(1, 2);
  flow::TrainOptions opt;
  opt.optimizer = "gd";
  opt.learning_rate = 1e9;
  opt.epochs = 20;
  const auto res = flow::train(ptrs(data), {}, base, opt);
  EXPECT_TRUE(res.aborted);
  EXPECT_FALSE(res.message.empty());
}

TEST(Train, BatchesGroupTwoOrThreeEnsembles) {
  std::vector<flow::Sample> s(35);
  for (int i = 0; i < 35; ++i) s[static_cast<std::size_t>(i)].ensemble = i / 5 + 1;
  const auto b = flow::ensemble_batches(ptrs(s));
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 15u);
  EXPECT_EQ(b[1].size(), 10u);
  EXPECT_EQ(b[2].size(), 10u);
}
