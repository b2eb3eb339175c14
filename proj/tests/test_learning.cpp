#include <gtest/gtest.h>

#include "mcaol/learning.hpp"
#include "test_support.hpp"

using namespace mcaol;

namespace {

// Exhaustive minimizer of 1/2 ||a - z||^2 + beta ||z||_0 over support patterns.
// Ties go to the pattern with more kept entries.
std::vector<bool> brute_support(const std::vector<double>& a, double beta) {
  const std::size_t J = a.size();
  double best = std::numeric_limits<double>::infinity();
  int best_kept = -1;
  std::size_t arg = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << J); ++mask) {
    double cost = 0.0;
    for (std::size_t j = 0; j < J; ++j) cost += (mask >> j & 1) ? beta : 0.5 * a[j] * a[j];
    const int kept = std::popcount(mask);
    if (cost < best || (cost == best && kept > best_kept)) {
      best = cost;
      best_kept = kept;
      arg = mask;
    }
  }
  std::vector<bool> out(J);
  for (std::size_t j = 0; j < J; ++j) out[j] = arg >> j & 1;
  return out;
}

std::vector<std::vector<double>> training_images(std::size_t L, std::size_t n, std::uint64_t seed) {
  // Piecewise-constant rectangles.
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pos(0, n - 1);
  std::uniform_real_distribution<double> val(0.2, 1.0);
  std::vector<std::vector<double>> out;
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> x(n * n, 0.0);
    for (int r = 0; r < 4; ++r) {
      std::size_t i0 = pos(rng), i1 = pos(rng), j0 = pos(rng), j1 = pos(rng);
      if (i0 > i1) std::swap(i0, i1);
      if (j0 > j1) std::swap(j0, j1);
      const double v = val(rng);
      for (std::size_t i = i0; i <= i1; ++i)
        for (std::size_t j = j0; j <= j1; ++j) x[i * n + j] += v;
    }
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Array2D> as_arrays(const std::vector<std::vector<double>>& xs, std::size_t n, double scale = 1.0) {
  std::vector<Array2D> out;
  for (const auto& x : xs) {
    Array2D a(n, n, x);
    for (double& v : a.data) v *= scale;
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

TEST(HardThreshold, Examples) {
  EXPECT_EQ(hard_threshold(std::vector<double>{2.0, 0.1, -0.5}, 0.5), (std::vector<double>{2.0, 0.0, 0.0}));
  // sqrt(2 * 0.125) = 0.5 exactly: kept.
  EXPECT_EQ(hard_threshold(std::vector<double>{0.5, -0.5, 0.49}, 0.125), (std::vector<double>{0.5, -0.5, 0.0}));
  EXPECT_THROW(hard_threshold(std::vector<double>{1.0}, 0.0), Error);
}

TEST(HardThreshold, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  std::uniform_real_distribution<double> beta(0.01, 2.0);
  for (int rep = 0; rep < 300; ++rep) {
    const auto a = testing_support::normal_vector(rng, len(rng));
    const double b = beta(rng);
    const auto z = hard_threshold(a, b);
    const auto sup = brute_support(a, b);
    for (std::size_t j = 0; j < a.size(); ++j) {
      EXPECT_EQ(z[j] != 0.0, sup[j]);
      if (sup[j]) EXPECT_EQ(z[j], a[j]);
    }
  }
}

TEST(HardThreshold, IdempotentAndScaleCovariant) {
  std::mt19937_64 rng(2);
  const auto a = testing_support::normal_vector(rng, 50);
  const auto z = hard_threshold(a, 0.3);
  EXPECT_EQ(hard_threshold(z, 0.3), z);
  std::vector<double> ca(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) ca[j] = 4.0 * a[j];
  const auto zc = hard_threshold(ca, 16.0 * 0.3);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(zc[j], 4.0 * z[j]);
}

TEST(MultiHardThreshold, Examples) {
  const std::vector<double> g2{2.0, 2.0};
  auto z = multi_hard_threshold({{0.8}, {0.6}}, g2);
  // 0.64 + 0.36 lands on 1 only up to rounding; follow the computed energy.
  const double energy = 0.5 * 2.0 * 0.8 * 0.8 + 0.5 * 2.0 * 0.6 * 0.6;
  EXPECT_EQ(z[0][0] != 0.0, energy >= 1.0);
  EXPECT_EQ(multi_hard_threshold({{0.8}, {0.6}}, std::vector<double>{2.5, 2.5})[1][0], 0.6);
  // Exact boundary: gamma 2, a = (1, 0) gives energy 1.
  z = multi_hard_threshold({{1.0}, {0.0}}, g2);
  EXPECT_EQ(z[0][0], 1.0);
  z = multi_hard_threshold({{1.0}, {0.0}}, std::vector<double>{1.0, 1.0});
  EXPECT_EQ(z[0][0], 0.0);
  EXPECT_EQ(z[1][0], 0.0);
  EXPECT_THROW(multi_hard_threshold({{1.0}, {0.0, 1.0}}, g2), Error);
  EXPECT_THROW(multi_hard_threshold({{1.0}, {0.0}}, std::vector<double>{1.0, 0.0}), Error);
}

TEST(MultiHardThreshold, MatchesPerPixelEnumeration) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 10);
  std::uniform_real_distribution<double> gam(0.1, 10.0);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = len(rng);
    const auto a1 = testing_support::normal_vector(rng, n), a2 = testing_support::normal_vector(rng, n);
    const std::vector<double> g{gam(rng), gam(rng)};
    const auto z = multi_hard_threshold({a1, a2}, g);
    for (std::size_t j = 0; j < n; ++j) {
      // Two cases per pixel: keep both (cost 1) or zero both (cost quadratic).
      const double zero_cost = 0.5 * g[0] * a1[j] * a1[j] + 0.5 * g[1] * a2[j] * a2[j];
      const bool keep = 1.0 <= zero_cost;
      EXPECT_EQ(z[0][j], keep ? a1[j] : 0.0);
      EXPECT_EQ(z[1][j], keep ? a2[j] : 0.0);
    }
  }
}

TEST(MultiHardThreshold, SingleChannelReducesToHardThreshold) {
  std::mt19937_64 rng(4);
  const auto a = testing_support::normal_vector(rng, 200);
  const double gamma = 4.0;  // 1/gamma exact
  const auto z = multi_hard_threshold({a}, std::vector<double>{gamma});
  EXPECT_EQ(z[0], hard_threshold(a, 1.0 / gamma));
  EXPECT_EQ(multi_hard_threshold(z, std::vector<double>{gamma}), z);
}

TEST(TightFrame, FixedPointAndConstraint) {
  const auto b = random_tight_frame(3, 9, 1);
  EXPECT_LE(b.tight_frame_residual(), 1e-12);
  const auto again = project_tight_frame(bank_matrix(b), 3);
  for (std::size_t i = 0; i < b.coefficients().size(); ++i)
    EXPECT_NEAR(again.bank.coefficients()[i], b.coefficients()[i], 1e-12);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd G = Eigen::MatrixXd::NullaryExpr(9, 12, [&] { return std::normal_distribution<double>()(rng); });
    EXPECT_LE(project_tight_frame(G, 3).bank.tight_frame_residual(), 1e-10);
  }
}

TEST(TightFrame, NearestByRandomSearch) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  Eigen::MatrixXd G = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return nd(rng); });
  const Eigen::MatrixXd D = nearest_tight_frame(G);
  ASSERT_LE((D * D.transpose() - I / 4.0).norm(), 1e-12);
  const double best = (D - G).norm();
  for (int s = 0; s < 10000; ++s) {
    // Half uniform members of the constraint set, half small rotations of the optimum.
    Eigen::MatrixXd C;
    if (s % 2 == 0) {
      Eigen::MatrixXd R = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return nd(rng); });
      C = Eigen::MatrixXd(Eigen::HouseholderQR<Eigen::MatrixXd>(R).householderQ()) / 2.0;
    } else {
      Eigen::MatrixXd S = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return 0.05 * nd(rng); });
      const Eigen::MatrixXd K = S - S.transpose();
      C = (I + 0.5 * K) * (I - 0.5 * K).inverse() * D;  // Cayley transform keeps C C^T = I/4
    }
    ASSERT_LE((C * C.transpose() - I / 4.0).norm(), 1e-10);
    EXPECT_GE((C - G).norm(), best - 1e-12);
  }
}

TEST(TightFrame, RankDeficientIsFlaggedAndCompleted) {
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(9, 9);
  G(0, 0) = 1.0;
  G(1, 1) = 2.0;
  const auto r = project_tight_frame(G, 3);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_LE(r.bank.tight_frame_residual(), 1e-10);
  EXPECT_THROW(project_tight_frame(Eigen::MatrixXd::Ones(9, 5), 3), Error);
}

TEST(CaolTrain, AllZeroImagesAreStationary) {
  TrainConfig cfg;
  cfg.filter_side = 3;
  cfg.filter_count = 9;
  cfg.max_outer = 5;
  std::vector<Array2D> zeros(3, Array2D(8, 8));
  const auto r = caol_train(zeros, cfg);
  for (double f : r.objective) EXPECT_EQ(f, 0.0);
  const auto init = random_tight_frame(3, 9, cfg.seed);
  for (std::size_t i = 0; i < init.coefficients().size(); ++i)
    EXPECT_NEAR(r.banks[0].coefficients()[i], init.coefficients()[i], 1e-12);
}

TEST(CaolTrain, ObjectiveNonIncreasing) {
  TrainConfig cfg;
  cfg.filter_side = 5;
  cfg.filter_count = 25;
  cfg.max_outer = 40;
  cfg.tol = 1e-12;
  cfg.alpha = 1e-3;
  const auto r = caol_train(as_arrays(training_images(4, 32, 9), 32), cfg);
  ASSERT_GE(r.objective.size(), 10u);
  for (std::size_t t = 1; t < r.objective.size(); ++t) EXPECT_LE(r.objective[t], r.objective[t - 1] + 1e-9);
  EXPECT_LT(r.objective.back(), r.objective.front());
  for (const auto& res : r.frame_residuals) EXPECT_LE(res[0], 1e-8);
}

TEST(CaolTrain, SaturatedThresholdZeroesAllCodes) {
  TrainConfig cfg;
  cfg.filter_side = 3;
  cfg.filter_count = 9;
  cfg.max_outer = 1;
  cfg.alpha = 1e6;
  const auto imgs = as_arrays(training_images(2, 12, 4), 12);
  const auto r = caol_train(imgs, cfg);
  for (const auto& m : r.final_codes[0].maps)
    for (double v : m.data) EXPECT_EQ(v, 0.0);
  // F_a reduces to 1/2 sum ||d_k * x_l||^2 on normalized images.
  const auto init = random_tight_frame(3, 9, cfg.seed);
  double expect = 0.0;
  for (const auto& x : imgs) {
    Array2D u = x;
    for (double& v : u.data) v /= r.input_scales[0];
    for (const auto& m : analyze(init, u).maps) expect += 0.5 * dot(m.data, m.data);
  }
  EXPECT_NEAR(r.objective[0], expect, 1e-10 * expect);
}

TEST(McaolTrain, SymmetricChannelsGiveIdenticalBanks) {
  TrainConfig cfg;
  cfg.filter_side = 3;
  cfg.filter_count = 9;
  cfg.max_outer = 15;
  cfg.gammas = {50.0, 50.0};
  const auto imgs = as_arrays(training_images(3, 16, 2), 16);
  const auto r = multichannel_train({imgs, imgs}, cfg);
  for (std::size_t i = 0; i < r.banks[0].coefficients().size(); ++i)
    EXPECT_NEAR(r.banks[0].coefficients()[i], r.banks[1].coefficients()[i], 1e-10);
}

TEST(McaolTrain, VanishingGammaProjectsInit) {
  TrainConfig cfg;
  cfg.filter_side = 3;
  cfg.filter_count = 9;
  cfg.max_outer = 2;
  cfg.gammas = {1e-12, 1e-12};
  const auto imgs = as_arrays(training_images(2, 12, 3), 12);
  const auto r = multichannel_train({imgs, imgs}, cfg);
  for (const auto& fs : r.final_codes)
    for (const auto& m : fs.maps)
      for (double v : m.data) EXPECT_EQ(v, 0.0);
  EXPECT_LE(r.banks[0].tight_frame_residual(), 1e-10);
}

TEST(McaolTrain, ScaledChannelSharesSupports) {
  TrainConfig cfg;
  cfg.filter_side = 5;
  cfg.filter_count = 25;
  cfg.max_outer = 30;
  cfg.gammas = {800.0, 800.0};
  const auto xs = training_images(3, 24, 6);
  const auto r = multichannel_train({as_arrays(xs, 24), as_arrays(xs, 24, 2.0)}, cfg);
  std::size_t nz = 0, shared = 0;
  for (std::size_t k = 0; k < 25; ++k)
    for (std::size_t j = 0; j < 24 * 24; ++j) {
      const bool a = r.final_codes[0].maps[k].data[j] != 0.0, b = r.final_codes[1].maps[k].data[j] != 0.0;
      nz += a || b;
      shared += a && b;
    }
  ASSERT_GT(nz, 0u);
  EXPECT_GE(static_cast<double>(shared) / static_cast<double>(nz), 0.99);
}

TEST(McaolTrain, ObjectiveMonotoneAndTightFrames) {
  TrainConfig cfg;
  cfg.filter_side = 5;
  cfg.filter_count = 25;
  cfg.max_outer = 30;
  cfg.tol = 1e-12;
  const auto xs = training_images(3, 24, 8);
  auto x2 = as_arrays(xs, 24, 0.7);
  for (auto& a : x2)
    for (std::size_t j = 0; j < a.size(); j += 5) a.data[j] *= 1.1;
  const auto r = multichannel_train({as_arrays(xs, 24), x2}, cfg);
  for (std::size_t t = 1; t < r.objective.size(); ++t) EXPECT_LE(r.objective[t], r.objective[t - 1] + 1e-9);
  for (const auto& res : r.frame_residuals) {
    EXPECT_LE(res[0], 1e-8);
    EXPECT_LE(res[1], 1e-8);
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.filter_side = 3;
  cfg.filter_count = 4;  // K < P
  std::vector<Array2D> imgs{Array2D(8, 8, 1.0)};
  EXPECT_THROW(caol_train(imgs, cfg), Error);
  cfg.filter_count = 9;
  cfg.alpha = 0.0;
  EXPECT_THROW(caol_train(imgs, cfg), Error);
  EXPECT_THROW(caol_train({}, TrainConfig{}), Error);
}
