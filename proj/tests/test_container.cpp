#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "diagnet/container.hpp"

using namespace diagnet;

namespace {

FeatureSchema abc() { return FeatureSchema({"A", "B", "C"}); }

std::vector<Sample> labelled(const FeatureSchema& s, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample x;
    x.x.resize(s.feature_count());
    for (auto& v : x.x) v = g(rng);
    x.present.assign(s.landmark_count(), 1);
    if (i % 2) {
      x.qoe_faulty = true;
      x.truth_cause = i % s.feature_count();
      x.truth_family = s.family_of(*x.truth_cause);
      x.x[*x.truth_cause] += 4;
    }
    out.push_back(std::move(x));
  }
  return out;
}

CoarseModel small_model() {
  ModelShape shape;
  shape.filters = 3;
  shape.hidden = {6};
  auto m = init_model(shape, default_pools(), 5, false);
  m.trained_landmarks = {"A", "C"};
  m.norm.kind_mean = {1, 2, 3, 4, 5};
  return m;
}

}  // namespace

TEST(Container, CoarseModelRoundTripIsExact) {
  auto m = small_model();
  auto c = make_container(m, abc(), "cfg");
  auto back = container_from_json(json::parse(to_json(c).dump())).coarse();
  EXPECT_EQ(back.kernel, m.kernel);
  EXPECT_EQ(back.kernel_bias, m.kernel_bias);
  ASSERT_EQ(back.head.size(), m.head.size());
  for (std::size_t i = 0; i < m.head.size(); ++i) {
    EXPECT_EQ(back.head[i].weight, m.head[i].weight);
    EXPECT_EQ(back.head[i].bias, m.head[i].bias);
  }
  EXPECT_EQ(back.norm, m.norm);
  EXPECT_EQ(back.trained_landmarks, m.trained_landmarks);
  EXPECT_EQ(back.pools.size(), m.pools.size());
}

TEST(Container, ForestAndBayesRoundTrip) {
  auto s = abc();
  auto data = labelled(s, 40, 1);
  ForestParams fp;
  fp.trees = 4;
  auto f = train_forest(data, fp);
  auto b = fit_bayes(s, data);
  auto fc = container_from_json(to_json(make_container(f, s, "cfg")));
  auto bc = container_from_json(to_json(make_container(b, "cfg")));
  for (const auto& x : labelled(s, 4, 2)) {
    EXPECT_EQ(forest_predict(fc.forest(), x), forest_predict(f, x));
    EXPECT_EQ(bayes_predict(bc.bayes(), x), bayes_predict(b, x));
  }
}

TEST(Container, DigestIsStableAndPayloadSensitive) {
  auto m = small_model();
  auto a = make_container(m, abc(), "cfg");
  EXPECT_EQ(a.model_digest(), container_from_json(to_json(a)).model_digest());
  m.kernel(0, 0) += 1e-9;
  EXPECT_NE(a.model_digest(), make_container(m, abc(), "cfg").model_digest());
}

TEST(Container, WrongKindIsRejected) {
  auto c = make_container(small_model(), abc(), "cfg");
  EXPECT_THROW(c.forest(), DataError);
  EXPECT_THROW(c.bayes(), DataError);
}

TEST(Container, SchemaChecks) {
  auto c = make_container(small_model(), abc(), "cfg");
  EXPECT_NO_THROW(c.require_schema(abc(), "dataset"));
  EXPECT_THROW(c.require_schema(FeatureSchema({"A", "B"}), "dataset"), SchemaMismatch);
  auto j = to_json(c);
  j["schema_digest"] = "0000";
  EXPECT_THROW(container_from_json(j), SchemaMismatch);
}

TEST(Container, EnvelopeChecks) {
  auto j = to_json(make_container(small_model(), abc(), "cfg"));
  auto bad = j;
  bad["format"] = "other";
  EXPECT_THROW(container_from_json(bad), DataError);
  bad = j;
  bad["version"] = 99;
  EXPECT_THROW(container_from_json(bad), DataError);
  bad = j;
  bad["kind"] = "svm";
  EXPECT_THROW(container_from_json(bad), DataError);
  bad = j;
  bad["payload"]["kernel"][0].push_back(1.0);
  EXPECT_THROW(container_from_json(bad).coarse(), DataError);
}

TEST(Container, FileRoundTrip) {
  auto path = (std::filesystem::temp_directory_path() / "diagnet_container_test.json").string();
  auto c = make_container(small_model(), abc(), "cfg", {{"note", 1}});
  write_container(c, path);
  auto back = read_container(path);
  EXPECT_EQ(back.model_digest(), c.model_digest());
  EXPECT_EQ(back.training["note"], 1);
  std::filesystem::remove(path);
  EXPECT_THROW(read_container(path), DataError);
}

TEST(SampleJson, RoundTripAndDefaults) {
  auto s = abc();
  auto x = labelled(s, 2, 3)[1];
  x.present[1] = 0;
  auto back = sample_from_json(to_json(x, s), s);
  EXPECT_EQ(back.x, x.x);
  EXPECT_EQ(back.present, x.present);
  EXPECT_EQ(back.truth_cause, x.truth_cause);
  EXPECT_TRUE(back.qoe_faulty);

  json bare = {{"x", x.x}};
  auto b = sample_from_json(bare, s);
  EXPECT_EQ(b.present, (std::vector<std::uint8_t>{1, 1, 1}));
  EXPECT_FALSE(b.qoe_faulty);
}

TEST(SampleJson, ForeignLayoutIsRejected) {
  auto s = abc();
  auto j = to_json(labelled(s, 1, 4)[0], s);
  j["landmarks"] = {"A", "C", "B"};
  EXPECT_THROW(sample_from_json(j, s), SchemaMismatch);
  j = to_json(labelled(s, 1, 4)[0], s);
  j["x"].erase(0);
  EXPECT_THROW(sample_from_json(j, s), DataError);
}
