#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "diagnet/digest.hpp"
#include "diagnet/error.hpp"

namespace diagnet {

using json = nlohmann::json;

/// Coarse fault families predicted by the coarse model. Order is the class
/// index order of the model output.
enum class FaultFamily : std::uint8_t {
  Nominal = 0,
  UplinkLatency,
  RemoteLatency,
  Jitter,
  Loss,
  DownloadBandwidth,
  LocalLoad,
};
inline constexpr std::size_t kFamilyCount = 7;

/// Per-landmark measurement kinds, in feature-offset order.
enum class MeasureKind : std::uint8_t {
  Download = 0,
  Upload,
  Rtt,
  ReorderRatio,
  RetransmitRatio,
};
inline constexpr std::size_t kKindCount = 5;

/// Client-local features, stored after all landmark features.
enum class LocalFeature : std::uint8_t {
  TotalMemory = 0,
  AvailableMemory,
  DiskLoad,
  CpuLoad,
  GatewayRtt,
};
inline constexpr std::size_t kLocalCount = 5;

inline constexpr std::array<std::string_view, kFamilyCount> kFamilyNames = {
    "nominal", "uplink_latency", "remote_latency", "jitter",
    "loss",    "download_bandwidth", "local_load"};
inline constexpr std::array<std::string_view, kKindCount> kKindNames = {
    "download", "upload", "rtt", "reorder_ratio", "retransmit_ratio"};
inline constexpr std::array<std::string_view, kLocalCount> kLocalNames = {
    "total_memory", "available_memory", "disk_load", "cpu_load", "gateway_rtt"};

inline std::string_view to_string(FaultFamily f) { return kFamilyNames[static_cast<std::size_t>(f)]; }
inline std::string_view to_string(MeasureKind k) { return kKindNames[static_cast<std::size_t>(k)]; }
inline std::string_view to_string(LocalFeature l) { return kLocalNames[static_cast<std::size_t>(l)]; }

inline FaultFamily parse_family(std::string_view s) {
  for (std::size_t i = 0; i < kFamilyCount; ++i)
    if (kFamilyNames[i] == s) return static_cast<FaultFamily>(i);
  throw DataError("unknown fault family '" + std::string(s) + "'");
}

inline std::size_t family_index(FaultFamily f) { return static_cast<std::size_t>(f); }

/// Family of each measurement kind. Upload shares the bandwidth family;
/// reordering and retransmission carry jitter and loss respectively.
inline constexpr FaultFamily family_of_kind(MeasureKind k) {
  switch (k) {
    case MeasureKind::Download:
    case MeasureKind::Upload:
      return FaultFamily::DownloadBandwidth;
    case MeasureKind::Rtt:
      return FaultFamily::RemoteLatency;
    case MeasureKind::ReorderRatio:
      return FaultFamily::Jitter;
    case MeasureKind::RetransmitRatio:
      return FaultFamily::Loss;
  }
  return FaultFamily::Nominal;
}

inline constexpr FaultFamily family_of_local(LocalFeature l) {
  return l == LocalFeature::GatewayRtt ? FaultFamily::UplinkLatency : FaultFamily::LocalLoad;
}

/// Decoded position of a feature index.
struct FeatureRef {
  bool local = false;
  std::size_t landmark = 0;                        // valid when !local
  MeasureKind kind = MeasureKind::Download;         // valid when !local
  LocalFeature local_feature = LocalFeature::TotalMemory;  // valid when local

  friend bool operator==(const FeatureRef&, const FeatureRef&) = default;
};

/// Feature layout: landmark-major then kind, local features last.
/// m = landmarks * 5 + 5.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<std::string> landmark_ids)
      : landmark_ids_(std::move(landmark_ids)) {
    for (std::size_t i = 0; i < landmark_ids_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (landmark_ids_[i] == landmark_ids_[j])
          throw DataError("duplicate landmark id '" + landmark_ids_[i] + "'");
    family_map_.reserve(feature_count());
    for (std::size_t j = 0; j < feature_count(); ++j) family_map_.push_back(compute_family(j));
  }

  std::size_t landmark_count() const { return landmark_ids_.size(); }
  std::size_t feature_count() const { return landmark_count() * kKindCount + kLocalCount; }
  std::size_t landmark_feature_count() const { return landmark_count() * kKindCount; }
  const std::vector<std::string>& landmark_ids() const { return landmark_ids_; }
  const std::vector<FaultFamily>& family_map() const { return family_map_; }

  std::size_t feature_index(std::size_t landmark, MeasureKind kind) const {
    if (landmark >= landmark_count())
      throw IndexError("landmark index " + std::to_string(landmark) + " out of range (" +
                       std::to_string(landmark_count()) + " landmarks)");
    return landmark * kKindCount + static_cast<std::size_t>(kind);
  }

  std::size_t local_index(LocalFeature l) const {
    return landmark_feature_count() + static_cast<std::size_t>(l);
  }

  FeatureRef decode(std::size_t j) const {
    check_feature(j);
    FeatureRef r;
    if (j >= landmark_feature_count()) {
      r.local = true;
      r.local_feature = static_cast<LocalFeature>(j - landmark_feature_count());
    } else {
      r.landmark = j / kKindCount;
      r.kind = static_cast<MeasureKind>(j % kKindCount);
    }
    return r;
  }

  FaultFamily family_of(std::size_t j) const {
    check_feature(j);
    return family_map_[j];
  }

  std::optional<std::size_t> find_landmark(std::string_view id) const {
    for (std::size_t i = 0; i < landmark_ids_.size(); ++i)
      if (landmark_ids_[i] == id) return i;
    return std::nullopt;
  }

  std::size_t landmark_index(std::string_view id) const {
    if (auto i = find_landmark(id)) return *i;
    throw DataError("unknown landmark id '" + std::string(id) + "'");
  }

  /// "landmark:GRAV/rtt" or "local/cpu_load".
  std::string feature_name(std::size_t j) const {
    auto r = decode(j);
    if (r.local) return "local/" + std::string(to_string(r.local_feature));
    return "landmark:" + landmark_ids_[r.landmark] + "/" + std::string(to_string(r.kind));
  }

  json to_json() const {
    json j;
    j["landmark_ids"] = landmark_ids_;
    j["kinds"] = std::vector<std::string>(kKindNames.begin(), kKindNames.end());
    j["local_features"] = std::vector<std::string>(kLocalNames.begin(), kLocalNames.end());
    std::vector<std::string> fam;
    fam.reserve(family_map_.size());
    for (auto f : family_map_) fam.emplace_back(to_string(f));
    j["family_map"] = fam;
    return j;
  }

  static FeatureSchema from_json(const json& j) {
    FeatureSchema s(j.at("landmark_ids").get<std::vector<std::string>>());
    auto kinds = j.at("kinds").get<std::vector<std::string>>();
    auto locals = j.at("local_features").get<std::vector<std::string>>();
    if (kinds != std::vector<std::string>(kKindNames.begin(), kKindNames.end()))
      throw SchemaMismatch("schema measure kinds differ from this build");
    if (locals != std::vector<std::string>(kLocalNames.begin(), kLocalNames.end()))
      throw SchemaMismatch("schema local features differ from this build");
    if (j.contains("family_map")) {
      auto fam = j.at("family_map").get<std::vector<std::string>>();
      if (fam.size() != s.feature_count()) throw SchemaMismatch("family map has wrong length");
      for (std::size_t i = 0; i < fam.size(); ++i)
        if (parse_family(fam[i]) != s.family_map_[i])
          throw SchemaMismatch("family map entry " + std::to_string(i) + " differs from this build");
    }
    return s;
  }

  std::string digest() const { return digest_hex(to_json().dump()); }

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.landmark_ids_ == b.landmark_ids_;
  }

 private:
  void check_feature(std::size_t j) const {
    if (j >= feature_count())
      throw IndexError("feature index " + std::to_string(j) + " out of range (m = " +
                       std::to_string(feature_count()) + ")");
  }

  FaultFamily compute_family(std::size_t j) const {
    if (j >= landmark_feature_count())
      return family_of_local(static_cast<LocalFeature>(j - landmark_feature_count()));
    return family_of_kind(static_cast<MeasureKind>(j % kKindCount));
  }

  std::vector<std::string> landmark_ids_;
  std::vector<FaultFamily> family_map_;
};

/// One client observation.
struct Sample {
  std::vector<double> x;                 // m raw measures
  std::vector<std::uint8_t> present;     // landmark availability, length = landmark count
  int service_id = -1;
  int client_region = -1;
  bool qoe_faulty = false;
  std::optional<std::size_t> truth_cause;
  std::optional<FaultFamily> truth_family;
  int scenario = -1;                     // generator scenario, -1 for fault-free

  std::size_t present_count() const {
    std::size_t n = 0;
    for (auto p : present) n += p != 0;
    return n;
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Checks the Sample invariants against a schema; throws DataError.
inline void validate(const Sample& s, const FeatureSchema& schema) {
  if (s.x.size() != schema.feature_count())
    throw DataError("sample has " + std::to_string(s.x.size()) + " features, schema expects " +
                    std::to_string(schema.feature_count()));
  if (s.present.size() != schema.landmark_count())
    throw DataError("sample presence mask has wrong length");
  if (s.truth_cause.has_value() != s.qoe_faulty)
    throw DataError("truth cause must be set exactly for faulty samples");
  if (s.truth_cause) {
    if (*s.truth_cause >= schema.feature_count()) throw DataError("truth cause out of range");
    if (s.truth_family && schema.family_of(*s.truth_cause) != *s.truth_family)
      throw DataError("truth family disagrees with the family map");
  }
}

/// Marks landmark features outside `available` absent. Local features are
/// never affected. `available` is a landmark mask of the schema's length.
inline Sample restrict(const Sample& s, std::span<const std::uint8_t> available) {
  if (available.size() != s.present.size())
    throw ContractViolation("restrict: availability mask length differs from sample");
  Sample out = s;
  for (std::size_t l = 0; l < out.present.size(); ++l)
    out.present[l] = static_cast<std::uint8_t>(out.present[l] && available[l]);
  return out;
}

/// Per-feature presence derived from the landmark mask.
inline std::vector<std::uint8_t> feature_presence(const Sample& s) {
  std::vector<std::uint8_t> out(s.x.size(), 1);
  for (std::size_t l = 0; l < s.present.size(); ++l)
    for (std::size_t k = 0; k < kKindCount; ++k) out[l * kKindCount + k] = s.present[l];
  return out;
}

}  // namespace diagnet
