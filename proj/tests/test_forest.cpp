#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "diagnet/forest.hpp"

using namespace diagnet;

namespace {

const FeatureSchema& schema3() {
  static const FeatureSchema s({"A", "B", "C"});
  return s;
}

// Cause j shows as feature j shifted far above the rest; nominal rows stay flat.
std::vector<Sample> shifted(std::size_t per_class, std::uint64_t seed, std::initializer_list<std::size_t> causes) {
  const auto& s = schema3();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  std::vector<Sample> out;
  auto base = [&] {
    Sample x;
    x.x.resize(s.feature_count());
    for (auto& v : x.x) v = n(rng);
    x.present.assign(s.landmark_count(), 1);
    return x;
  };
  for (std::size_t i = 0; i < per_class; ++i) {
    out.push_back(base());
    for (auto c : causes) {
      auto x = base();
      x.x[c] += 5.0;
      x.qoe_faulty = true;
      x.truth_cause = c;
      x.truth_family = s.family_of(c);
      out.push_back(std::move(x));
    }
  }
  return out;
}

ForestParams params(std::size_t trees = 25) {
  ForestParams p;
  p.trees = trees;
  p.max_depth = 6;
  return p;
}

}  // namespace

TEST(Forest, LabelsAreCauseOrUnknown) {
  Sample s;
  s.x.assign(20, 0.0);
  s.present.assign(3, 1);
  EXPECT_EQ(forest_label(s), 20u);
  s.qoe_faulty = true;
  EXPECT_THROW(forest_label(s), DataError);
  s.truth_cause = 7;
  EXPECT_EQ(forest_label(s), 7u);
}

TEST(Forest, AbsentLandmarksAreZeroFilled) {
  Sample s;
  s.x.assign(20, 3.0);
  s.present = {1, 0, 1};
  auto z = zero_filled(s);
  for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(z[j], j >= 5 && j < 10 ? 0.0 : 3.0) << j;
}

TEST(Forest, SeparableCausesAreRecovered) {
  auto f = train_forest(shifted(30, 1, {0, 7, 12, 18}), params());
  EXPECT_EQ(f.unknown_class(), 20u);
  for (const auto& s : shifted(5, 2, {0, 7, 12, 18})) {
    auto scores = forest_predict(f, s);
    ASSERT_EQ(scores.size(), 20u);
    EXPECT_NEAR(std::accumulate(scores.begin(), scores.end(), 0.0), 1.0, 1e-12);
    if (s.qoe_faulty) {
      auto top = std::max_element(scores.begin(), scores.end()) - scores.begin();
      EXPECT_EQ(static_cast<std::size_t>(top), *s.truth_cause);
    } else {
      EXPECT_EQ(forest_classify(f, s), f.unknown_class());
    }
  }
}

TEST(Forest, UnknownVotesSpreadEvenly) {
  ForestModel f;
  f.features = 4;
  DecisionTree leaf;
  leaf.nodes.push_back({});
  leaf.nodes[0].vote = 4;
  DecisionTree cause;
  cause.nodes.push_back({});
  cause.nodes[0].vote = 2;
  f.trees = {leaf, leaf, leaf, cause};
  Sample s;
  s.x.assign(4, 0.0);
  auto v = forest_votes(f, s);
  EXPECT_EQ(v, (std::vector<double>{0, 0, 0.25, 0, 0.75}));
  auto p = forest_predict(f, s);
  EXPECT_EQ(p, (std::vector<double>{0.1875, 0.1875, 0.4375, 0.1875}));
}

TEST(Forest, DepthLimitHolds) {
  auto p = params(5);
  p.max_depth = 2;
  auto f = train_forest(shifted(20, 3, {0, 3, 9, 11, 15, 19}), p);
  for (const auto& t : f.trees) EXPECT_LE(t.depth(), 2u);
}

TEST(Forest, DeterministicForSeedAndSensitiveToIt) {
  auto data = shifted(10, 4, {1, 6});
  auto a = train_forest(data, params(10)), b = train_forest(data, params(10));
  EXPECT_EQ(to_json(a), to_json(b));
  auto q = params(10);
  q.seed = 99;
  EXPECT_NE(to_json(a), to_json(train_forest(data, q)));
}

TEST(Forest, JsonRoundTripPredictsIdentically) {
  auto f = train_forest(shifted(10, 5, {2, 8}), params(7));
  auto back = forest_from_json(to_json(f));
  for (const auto& s : shifted(3, 6, {2, 8})) EXPECT_EQ(forest_votes(back, s), forest_votes(f, s));
}

TEST(Forest, MalformedDocumentsAreRejected) {
  auto j = to_json(train_forest(shifted(5, 7, {3}), params(2)));
  auto bad = j;
  bad["trees"][0]["vote"].push_back(0);
  EXPECT_THROW(forest_from_json(bad), DataError);
  bad = j;
  bad["trees"] = json::array();
  EXPECT_THROW(forest_from_json(bad), DataError);
}

TEST(Forest, InputContracts) {
  EXPECT_THROW(train_forest(std::vector<Sample>{}, params()), DataError);
  auto p = params();
  p.trees = 0;
  EXPECT_THROW(train_forest(shifted(2, 8, {1}), p), ContractViolation);
  auto f = train_forest(shifted(4, 9, {1}), params(3));
  Sample narrow;
  narrow.x.assign(15, 0.0);
  narrow.present.assign(2, 1);
  EXPECT_THROW(forest_votes(f, narrow), SchemaMismatch);
}
