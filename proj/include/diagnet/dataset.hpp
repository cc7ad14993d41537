#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "diagnet/schema.hpp"

namespace diagnet {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

/// Labeled samples plus the metadata needed to interpret them.
struct Dataset {
  FeatureSchema schema;
  std::vector<Sample> samples;
  std::vector<Split> split;                 // parallel to samples
  std::vector<std::string> service_names;   // indexed by Sample::service_id
  std::string config_digest;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }

  std::vector<Sample> select(Split which) const {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (split[i] == which) out.push_back(samples[i]);
    return out;
  }

  int service_index(std::string_view name) const {
    for (std::size_t i = 0; i < service_names.size(); ++i)
      if (service_names[i] == name) return static_cast<int>(i);
    throw DataError("unknown service '" + std::string(name) + "'");
  }
};

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("bad number '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("bad integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

inline constexpr std::string_view kDatasetFormat = "diagnet-dataset";
inline constexpr int kDatasetVersion = 1;

/// Header line ("# " + JSON), CSV column line, then one row per sample:
/// m feature columns, present mask as a 0/1 string, service_id,
/// client_region, qoe, truth_cause (-1 if none), scenario, split.
inline std::string serialize_dataset(const Dataset& d) {
  json header;
  header["format"] = kDatasetFormat;
  header["version"] = kDatasetVersion;
  header["schema"] = d.schema.to_json();
  header["schema_digest"] = d.schema.digest();
  header["config_digest"] = d.config_digest;
  header["seed"] = d.seed;
  header["services"] = d.service_names;

  std::string out = "# " + header.dump() + "\n";
  const std::size_t m = d.schema.feature_count();
  for (std::size_t j = 0; j < m; ++j) {
    out += d.schema.feature_name(j);
    out += ',';
  }
  out += "present,service_id,client_region,qoe,truth_cause,scenario,split\n";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    for (double v : s.x) {
      detail::append_double(out, v);
      out += ',';
    }
    for (auto p : s.present) out += p ? '1' : '0';
    out += ',';
    out += std::to_string(s.service_id) + ',' + std::to_string(s.client_region) + ',';
    out += s.qoe_faulty ? "1," : "0,";
    out += s.truth_cause ? std::to_string(*s.truth_cause) : std::string("-1");
    out += ',' + std::to_string(s.scenario) + ',';
    out += d.split[i] == Split::Train ? "train" : "test";
    out += '\n';
  }
  return out;
}

inline Dataset parse_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
    throw DataError("dataset file lacks a header line");
  json header;
  try {
    header = json::parse(line.substr(2));
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != kDatasetFormat) throw DataError("not a dataset file");
  if (header.value("version", 0) != kDatasetVersion) throw DataError("unsupported dataset version");

  Dataset d;
  d.schema = FeatureSchema::from_json(header.at("schema"));
  if (header.contains("schema_digest") && header["schema_digest"] != d.schema.digest())
    throw SchemaMismatch("dataset schema digest does not match its schema");
  d.config_digest = header.value("config_digest", "");
  d.seed = header.value("seed", std::uint64_t{0});
  d.service_names = header.value("services", std::vector<std::string>{});

  const std::size_t m = d.schema.feature_count();
  const std::size_t L = d.schema.landmark_count();
  if (!std::getline(in, line)) throw DataError("dataset file lacks a column line");
  if (detail::split_csv(line).size() != m + 7) throw DataError("dataset column count mismatch");

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cols = detail::split_csv(line);
    if (cols.size() != m + 7)
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(cols.size()) + " columns");
    Sample s;
    s.x.resize(m);
    for (std::size_t j = 0; j < m; ++j) s.x[j] = detail::parse_double(cols[j]);
    auto mask = cols[m];
    if (mask.size() != L) throw DataError("row " + std::to_string(row) + ": bad presence mask");
    s.present.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      if (mask[l] != '0' && mask[l] != '1') throw DataError("bad presence mask character");
      s.present[l] = mask[l] == '1';
    }
    s.service_id = static_cast<int>(detail::parse_int(cols[m + 1]));
    s.client_region = static_cast<int>(detail::parse_int(cols[m + 2]));
    s.qoe_faulty = detail::parse_int(cols[m + 3]) != 0;
    auto cause = detail::parse_int(cols[m + 4]);
    if (cause >= 0) {
      s.truth_cause = static_cast<std::size_t>(cause);
      if (s.truth_cause >= m) throw DataError("row " + std::to_string(row) + ": truth cause out of range");
      s.truth_family = d.schema.family_of(*s.truth_cause);
    }
    s.scenario = static_cast<int>(detail::parse_int(cols[m + 5]));
    validate(s, d.schema);
    if (cols[m + 6] == "train") {
      d.split.push_back(Split::Train);
    } else if (cols[m + 6] == "test") {
      d.split.push_back(Split::Test);
    } else {
      throw DataError("row " + std::to_string(row) + ": bad split tag");
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << serialize_dataset(d);
  if (!out) throw DataError("write failed for " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return parse_dataset(in);
}

}  // namespace diagnet
