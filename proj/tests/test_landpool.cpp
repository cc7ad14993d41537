#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "diagnet/landpool.hpp"

using namespace diagnet;

namespace {

CoarseModel random_model(std::uint64_t seed, std::size_t filters = 6, std::vector<std::size_t> hidden = {16, 8}) {
  ModelShape shape;
  shape.filters = filters;
  shape.hidden = std::move(hidden);
  CoarseModel m = init_model(shape, default_pools(), seed, false);
  std::mt19937_64 rng(seed ^ 0x5151);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < m.kernel_bias.size(); ++i) m.kernel_bias[i] = n(rng);
  for (auto& l : m.head)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = n(rng);
  return m;
}

std::vector<double> random_input(std::mt19937_64& rng, std::size_t L) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(L * kKindCount + kLocalCount);
  for (auto& v : x) v = n(rng);
  return x;
}

// Ideal-label loss evaluated from the forward pass only, for a fixed class.
double loss_for(const CoarseModel& m, std::span<const double> x, std::span<const std::uint8_t> present,
                std::size_t target) {
  auto y = coarse_forward(m, x, present);
  return -std::log(y[static_cast<Eigen::Index>(target)]);
}

// ℓ landmarks; class is Nominal when landmark 0's rtt is low and RemoteLatency
// when it is high. Nothing else differs between classes.
std::vector<Sample> separable_toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.x.resize(2 * kKindCount + kLocalCount);
    for (auto& v : s.x) v = 1.0 + noise(rng);
    s.present = {1, 1};
    bool faulty = i % 2 == 1;
    if (faulty) {
      s.x[static_cast<std::size_t>(MeasureKind::Rtt)] += 2.0;
      s.qoe_faulty = true;
      s.truth_cause = static_cast<std::size_t>(MeasureKind::Rtt);
      s.truth_family = FaultFamily::RemoteLatency;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(LandPool, IdenticalLandmarksCollapseToKernelResponse) {
  auto m = random_model(3);
  std::vector<double> v = {0.5, -1.0, 2.0, 0.1, 0.3};
  const std::size_t L = 4;
  std::vector<double> x;
  for (std::size_t l = 0; l < L; ++l) x.insert(x.end(), v.begin(), v.end());
  std::vector<std::uint8_t> present(L, 1);
  auto pooled = land_pool(x, present, m.kernel, m.kernel_bias, m.pools);
  Eigen::Map<const Eigen::VectorXd> ev(v.data(), 5);
  Eigen::VectorXd resp = m.kernel * ev + m.kernel_bias;
  const std::size_t f = m.filters();
  for (std::size_t p = 0; p < m.pools.size(); ++p)
    for (std::size_t q = 0; q < f; ++q) {
      double expect = m.pools[p].kind == PoolKind::Variance ? 0.0 : resp[static_cast<Eigen::Index>(q)];
      EXPECT_NEAR(pooled[p * f + q], expect, 1e-12) << m.pools[p].name();
    }
}

TEST(LandPool, SingletonReductions) {
  auto m = random_model(4);
  std::mt19937_64 rng(1);
  auto x = random_input(rng, 3);
  std::vector<std::uint8_t> present = {0, 1, 0};
  auto pooled = land_pool(x, present, m.kernel, m.kernel_bias, m.pools);
  const std::size_t f = m.filters();
  for (std::size_t q = 0; q < f; ++q) {
    double r = m.kernel_bias[static_cast<Eigen::Index>(q)];
    for (std::size_t c = 0; c < kKindCount; ++c) r += m.kernel(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(c)) * x[kKindCount + c];
    for (std::size_t p = 0; p < m.pools.size(); ++p) {
      double expect = m.pools[p].kind == PoolKind::Variance ? 0.0 : r;
      EXPECT_NEAR(pooled[p * f + q], expect, 1e-12);
    }
  }
}

TEST(LandPool, PermutationGivesIdenticalOutput) {
  auto m = random_model(5);
  std::mt19937_64 rng(2);
  const std::size_t L = 7;
  auto x = random_input(rng, L);
  std::vector<std::uint8_t> present = {1, 1, 0, 1, 1, 1, 0};
  auto ref = land_pool(x, present, m.kernel, m.kernel_bias, m.pools);
  auto yref = coarse_forward(m, x, present);
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 50; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> xp(x.size());
    std::vector<std::uint8_t> pp(L);
    for (std::size_t l = 0; l < L; ++l) {
      pp[l] = present[perm[l]];
      for (std::size_t k = 0; k < kKindCount; ++k) xp[l * kKindCount + k] = x[perm[l] * kKindCount + k];
    }
    for (std::size_t k = 0; k < kLocalCount; ++k) xp[L * kKindCount + k] = x[L * kKindCount + k];
    EXPECT_EQ(land_pool(xp, pp, m.kernel, m.kernel_bias, m.pools), ref);
    auto y = coarse_forward(m, xp, pp);
    for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], yref[i]);
  }
}

TEST(LandPool, NoLandmarkIsRejected) {
  auto m = random_model(6);
  std::vector<double> x(2 * kKindCount + kLocalCount, 0.0);
  std::vector<std::uint8_t> present = {0, 0};
  EXPECT_THROW(land_pool(x, present, m.kernel, m.kernel_bias, m.pools), ContractViolation);
  EXPECT_THROW(coarse_forward(m, x, present), ContractViolation);
}

TEST(CoarseForward, ProbabilitiesSumToOne) {
  auto m = random_model(7);
  std::mt19937_64 rng(3);
  for (std::size_t L = 1; L <= 12; ++L) {
    auto x = random_input(rng, L);
    std::vector<std::uint8_t> present(L, 1);
    auto y = coarse_forward(m, x, present);
    ASSERT_EQ(y.size(), static_cast<Eigen::Index>(kFamilyCount));
    EXPECT_NEAR(y.sum(), 1.0, 1e-9);
    EXPECT_GE(y.minCoeff(), 0.0);
  }
}

TEST(CoarseForward, ZeroOutputLayerIsUniform) {
  auto m = init_model(ModelShape{}, default_pools(), 11);
  std::mt19937_64 rng(4);
  auto x = random_input(rng, 10);
  std::vector<std::uint8_t> present(10, 1);
  auto y = coarse_forward(m, x, present);
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 1.0 / 7.0);
  EXPECT_EQ(m.head_input_width(), 13u * 24u + 5u);
  EXPECT_EQ(m.head[0].weight.rows(), 512);
  EXPECT_EQ(m.head[1].weight.rows(), 128);
}

TEST(CoarseForward, NanIsRejected) {
  auto m = random_model(8);
  std::vector<double> x(2 * kKindCount + kLocalCount, 0.0);
  x[3] = std::nan("");
  std::vector<std::uint8_t> present = {1, 1};
  EXPECT_THROW(coarse_forward(m, x, present), DataError);
}

TEST(CoarseForward, DuplicatedUnseenLandmarkStaysValid) {
  auto m = random_model(9);
  std::mt19937_64 rng(5);
  auto x = random_input(rng, 3);
  std::vector<std::uint8_t> present = {1, 1, 1};
  auto y0 = coarse_forward(m, x, present);
  std::vector<double> x4(x.begin(), x.begin() + 3 * kKindCount);
  x4.insert(x4.end(), x.begin() + kKindCount, x.begin() + 2 * kKindCount);
  x4.insert(x4.end(), x.begin() + 3 * kKindCount, x.end());
  std::vector<std::uint8_t> p4 = {1, 1, 1, 1};
  auto y1 = coarse_forward(m, x4, p4);
  EXPECT_NEAR(y1.sum(), 1.0, 1e-9);
  // A duplicate leaves min and max unchanged; the distribution moves but stays close.
  EXPECT_LT((y1 - y0).cwiseAbs().maxCoeff(), 0.5);
}

TEST(InputGradient, MatchesCentralDifferences) {
  const double h = 1e-3;
  std::mt19937_64 rng(77);
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t pair = 0; pair < 30; ++pair) {
    auto m = random_model(100 + pair);
    std::size_t L = 2 + pair % 9;
    auto x = random_input(rng, L);
    std::vector<std::uint8_t> present(L, 1);
    if (L > 3) present[pair % L] = 0;
    auto g = input_gradient(m, x, present);
    auto sig = activation_signature(m, x, present);
    for (std::size_t j = 0; j < x.size(); ++j) {
      bool absent = j < L * kKindCount && !present[j / kKindCount];
      if (absent) {
        EXPECT_EQ(g.grad[j], 0.0);
        continue;
      }
      auto xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      if (activation_signature(m, xp, present) != sig || activation_signature(m, xm, present) != sig) {
        ++skipped;
        continue;
      }
      double fd = (loss_for(m, xp, present, g.target) - loss_for(m, xm, present, g.target)) / (2 * h);
      EXPECT_LE(std::abs(g.grad[j] - fd), 1e-4 * (1 + std::abs(g.grad[j]))) << "pair " << pair << " j " << j;
      ++checked;
    }
  }
  EXPECT_GT(checked, 9 * skipped);
}

TEST(InputGradient, DeterministicAndFlagsTies) {
  auto m = random_model(12);
  std::mt19937_64 rng(6);
  auto x = random_input(rng, 4);
  std::vector<std::uint8_t> present(4, 1);
  auto a = input_gradient(m, x, present);
  auto b = input_gradient(m, x, present);
  EXPECT_EQ(a.grad, b.grad);
  auto u = init_model(ModelShape{{4}, {8}}, default_pools(), 1);
  auto t = input_gradient(u, x, present);
  EXPECT_TRUE(t.tie);
  EXPECT_EQ(t.target, 0u);
  EXPECT_NEAR(t.loss, std::log(7.0), 1e-12);
}

TEST(Train, SeparableToyReachesHighAccuracy) {
  FeatureSchema schema({"A", "B"});
  auto data = separable_toy(400, 1);
  TrainConfig cfg;
  cfg.shape = {8, {32, 16}};
  cfg.max_epochs = 50;
  cfg.patience = 50;
  cfg.batch_size = 32;
  auto res = train(schema, data, cfg);
  EXPECT_NEAR(res.history.train_loss[0], std::log(7.0), 1e-9);
  std::size_t correct = 0;
  for (const auto& s : data) {
    auto y = coarse_forward(res.model, s);
    correct += argmax_lowest(y) == static_cast<std::size_t>(coarse_label(s));
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(data.size()), 0.99);

  std::size_t pairs = 0, non_increasing = 0;
  for (std::size_t e = 1; e + 1 < res.history.train_loss.size(); ++e) {
    ++pairs;
    non_increasing += res.history.train_loss[e + 1] <= res.history.train_loss[e];
  }
  ASSERT_GT(pairs, 0u);
  EXPECT_GE(static_cast<double>(non_increasing), 0.9 * static_cast<double>(pairs));
}

TEST(Train, SameSeedSameWeights) {
  FeatureSchema schema({"A", "B"});
  auto data = separable_toy(120, 2);
  TrainConfig cfg;
  cfg.shape = {4, {16}};
  cfg.max_epochs = 5;
  auto a = train(schema, data, cfg);
  auto b = train(schema, data, cfg);
  EXPECT_EQ(a.model.kernel, b.model.kernel);
  for (std::size_t i = 0; i < a.model.head.size(); ++i) EXPECT_EQ(a.model.head[i].weight, b.model.head[i].weight);
  EXPECT_EQ(a.history.val_loss, b.history.val_loss);
}

TEST(Train, RejectsEmptyAndFlagsSingleClass) {
  FeatureSchema schema({"A", "B"});
  TrainConfig cfg;
  cfg.shape = {4, {8}};
  cfg.max_epochs = 2;
  EXPECT_THROW(train(schema, std::vector<Sample>{}, cfg), DataError);
  auto data = separable_toy(40, 3);
  std::vector<Sample> nominal;
  for (auto& s : data)
    if (!s.qoe_faulty) nominal.push_back(s);
  auto res = train(schema, nominal, cfg);
  EXPECT_TRUE(res.history.degenerate);
}

TEST(Transfer, FreezesKernelAndDoesNotRegress) {
  FeatureSchema schema({"A", "B"});
  auto data = separable_toy(300, 4);
  TrainConfig cfg;
  cfg.shape = {8, {32, 16}};
  cfg.max_epochs = 10;
  auto general = train(schema, data, cfg).model;

  auto res = transfer(general, data, cfg);
  EXPECT_EQ(res.model.kernel, general.kernel);
  EXPECT_EQ(res.model.kernel_bias, general.kernel_bias);
  EXPECT_LE(res.history.val_loss[res.history.best_epoch], res.history.val_loss[0] + 1e-12);

  TrainConfig zero = cfg;
  zero.max_epochs = 0;
  auto same = transfer(general, data, zero);
  for (std::size_t i = 0; i < general.head.size(); ++i) {
    EXPECT_EQ(same.model.head[i].weight, general.head[i].weight);
    EXPECT_EQ(same.model.head[i].bias, general.head[i].bias);
  }
}

TEST(Normalizer, SharedPerKindAndZeroForAbsent) {
  Sample a;
  a.x = {1, 2, 3, 4, 5, 3, 4, 5, 6, 7, 0, 0, 0, 0, 0};
  a.present = {1, 1};
  Sample b = a;
  b.present = {1, 0};
  auto n = Normalizer::fit(std::vector<Sample>{a});
  EXPECT_DOUBLE_EQ(n.kind_mean[0], 2.0);
  EXPECT_DOUBLE_EQ(n.kind_scale[0], 1.0);
  auto xb = n.apply(b);
  for (std::size_t j = 5; j < 10; ++j) EXPECT_EQ(xb[j], 0.0);
  EXPECT_DOUBLE_EQ(xb[0], -1.0);
}
