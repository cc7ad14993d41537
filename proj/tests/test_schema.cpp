#include <gtest/gtest.h>

#include "diagnet/schema.hpp"

using namespace diagnet;

namespace {

FeatureSchema ten_landmarks() {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("L" + std::to_string(i));
  return FeatureSchema(ids);
}

Sample full_sample(const FeatureSchema& s) {
  Sample out;
  out.x.assign(s.feature_count(), 1.0);
  out.present.assign(s.landmark_count(), 1);
  return out;
}

}  // namespace

TEST(Schema, FeatureCountForTenLandmarks) { EXPECT_EQ(ten_landmarks().feature_count(), 55u); }

TEST(Schema, FeatureIndexLayout) {
  auto s = ten_landmarks();
  EXPECT_EQ(s.feature_index(0, MeasureKind::Download), 0u);
  EXPECT_EQ(s.feature_index(9, MeasureKind::RetransmitRatio), 9u * 5 + 4);
  EXPECT_THROW(s.feature_index(10, MeasureKind::Rtt), IndexError);
}

TEST(Schema, IndexLayoutRoundTrips) {
  auto s = ten_landmarks();
  for (std::size_t l = 0; l < s.landmark_count(); ++l)
    for (std::size_t k = 0; k < kKindCount; ++k) {
      auto r = s.decode(s.feature_index(l, static_cast<MeasureKind>(k)));
      EXPECT_FALSE(r.local);
      EXPECT_EQ(r.landmark, l);
      EXPECT_EQ(r.kind, static_cast<MeasureKind>(k));
    }
  for (std::size_t k = 0; k < kLocalCount; ++k) {
    auto r = s.decode(s.local_index(static_cast<LocalFeature>(k)));
    EXPECT_TRUE(r.local);
    EXPECT_EQ(r.local_feature, static_cast<LocalFeature>(k));
  }
}

TEST(Schema, FamilyAssignment) {
  auto s = ten_landmarks();
  const std::size_t m = s.feature_count();
  EXPECT_EQ(s.family_of(s.feature_index(3, MeasureKind::Rtt)), FaultFamily::RemoteLatency);
  EXPECT_EQ(s.family_of(m - 1), FaultFamily::UplinkLatency);
  EXPECT_EQ(s.family_of(s.feature_index(0, MeasureKind::Download)), FaultFamily::DownloadBandwidth);
  EXPECT_EQ(s.family_of(s.feature_index(2, MeasureKind::Upload)), FaultFamily::DownloadBandwidth);
  EXPECT_EQ(s.family_of(s.feature_index(5, MeasureKind::ReorderRatio)), FaultFamily::Jitter);
  EXPECT_EQ(s.family_of(s.feature_index(7, MeasureKind::RetransmitRatio)), FaultFamily::Loss);
  for (auto l : {LocalFeature::TotalMemory, LocalFeature::AvailableMemory, LocalFeature::DiskLoad, LocalFeature::CpuLoad})
    EXPECT_EQ(s.family_of(s.local_index(l)), FaultFamily::LocalLoad);
  EXPECT_THROW(s.family_of(m), IndexError);
}

TEST(Schema, FamilyMapIsTotalAndNeverNominal) {
  auto s = ten_landmarks();
  ASSERT_EQ(s.family_map().size(), s.feature_count());
  for (std::size_t j = 0; j < s.feature_count(); ++j) EXPECT_NE(s.family_of(j), FaultFamily::Nominal);
}

TEST(Schema, JsonRoundTripAndDigest) {
  auto s = ten_landmarks();
  auto back = FeatureSchema::from_json(s.to_json());
  EXPECT_EQ(back, s);
  EXPECT_EQ(back.digest(), s.digest());
  EXPECT_NE(FeatureSchema({"A", "B"}).digest(), s.digest());
}

TEST(Schema, RejectsForeignLocalFeatures) {
  auto j = ten_landmarks().to_json();
  j["local_features"][0] = "swap";
  EXPECT_THROW(FeatureSchema::from_json(j), SchemaMismatch);
}

TEST(Schema, DuplicateLandmarkRejected) { EXPECT_THROW(FeatureSchema({"A", "A"}), DataError); }

TEST(Restrict, IdentityEmptyAndSingleton) {
  auto s = ten_landmarks();
  auto x = full_sample(s);
  std::vector<std::uint8_t> all(10, 1), none(10, 0), first(10, 0);
  first[0] = 1;
  EXPECT_EQ(restrict(x, all), x);
  auto e = restrict(x, none);
  EXPECT_EQ(e.present_count(), 0u);
  auto fp = feature_presence(e);
  std::size_t present = 0;
  for (auto p : fp) present += p;
  EXPECT_EQ(present, kLocalCount);
  auto f = restrict(x, first);
  EXPECT_EQ(f.present, first);
}

TEST(Restrict, IdempotentAndComposesAsIntersection) {
  auto s = ten_landmarks();
  auto x = full_sample(s);
  std::vector<std::uint8_t> a{1, 1, 0, 1, 0, 1, 1, 0, 1, 1}, b{0, 1, 1, 1, 0, 0, 1, 1, 1, 0}, ab(10);
  for (std::size_t i = 0; i < 10; ++i) ab[i] = a[i] && b[i];
  EXPECT_EQ(restrict(restrict(x, a), a), restrict(x, a));
  EXPECT_EQ(restrict(restrict(x, a), b), restrict(x, ab));
}

TEST(SampleValidation, CauseRequiresQoeFlagAndMatchingFamily) {
  auto s = ten_landmarks();
  auto x = full_sample(s);
  EXPECT_NO_THROW(validate(x, s));
  x.truth_cause = s.feature_index(1, MeasureKind::Rtt);
  EXPECT_THROW(validate(x, s), DataError);
  x.qoe_faulty = true;
  x.truth_family = FaultFamily::RemoteLatency;
  EXPECT_NO_THROW(validate(x, s));
  x.truth_family = FaultFamily::Loss;
  EXPECT_THROW(validate(x, s), DataError);
  x.truth_family.reset();
  x.x.pop_back();
  EXPECT_THROW(validate(x, s), DataError);
}
