#pragma once

// Versioned JSON envelope shared by every trained model, plus the
// CoarseModel and Sample documents.

#include <fstream>
#include <sstream>
#include <string>

#include "diagnet/bayes.hpp"
#include "diagnet/forest.hpp"
#include "diagnet/landpool.hpp"

namespace diagnet {

inline constexpr std::string_view kContainerFormat = "diagnet-model";
inline constexpr int kContainerVersion = 1;

enum class ModelKind : std::uint8_t { DiagNet, Forest, Bayes };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::DiagNet: return "diagnet";
    case ModelKind::Forest: return "forest";
    case ModelKind::Bayes: return "bayes";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "diagnet") return ModelKind::DiagNet;
  if (s == "forest") return ModelKind::Forest;
  if (s == "bayes") return ModelKind::Bayes;
  throw DataError("unknown model kind '" + std::string(s) + "'");
}

// --- CoarseModel -------------------------------------------------------------

namespace detail {

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, std::size_t cols_hint = 0) {
  if (!j.is_array()) throw DataError("matrix must be an array of rows");
  const auto rows = j.size();
  const std::size_t cols = rows ? j[0].size() : cols_hint;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) throw DataError("ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

inline json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline json to_json(const CoarseModel& m) {
  json pools = json::array();
  for (const auto& p : m.pools) pools.push_back(p.name());
  json head = json::array();
  for (const auto& l : m.head) head.push_back({{"weight", detail::matrix_json(l.weight)}, {"bias", detail::vector_json(l.bias)}});
  return {{"pools", pools},
          {"kernel", detail::matrix_json(m.kernel)},
          {"kernel_bias", detail::vector_json(m.kernel_bias)},
          {"head", head},
          {"norm", detail::normalizer_json(m.norm)},
          {"trained_landmarks", m.trained_landmarks}};
}

/// Rebuilds a model and checks that the layer shapes chain together.
inline CoarseModel coarse_from_json(const json& j) {
  CoarseModel m;
  m.pools.clear();
  for (const auto& p : j.at("pools")) m.pools.push_back(PoolOp::parse(p.get<std::string>()));
  m.kernel = detail::matrix_from_json(j.at("kernel"), kKindCount);
  m.kernel_bias = detail::vector_from_json(j.at("kernel_bias"));
  for (const auto& l : j.at("head"))
    m.head.push_back({detail::matrix_from_json(l.at("weight")), detail::vector_from_json(l.at("bias"))});
  m.norm = detail::normalizer_from_json(j.at("norm"));
  m.trained_landmarks = j.at("trained_landmarks").get<std::vector<std::string>>();

  if (m.pools.empty()) throw DataError("model has no pools");
  if (m.kernel.rows() == 0 || m.kernel.cols() != static_cast<Eigen::Index>(kKindCount))
    throw SchemaMismatch("kernel width must equal the number of measure kinds");
  if (m.kernel_bias.size() != m.kernel.rows()) throw DataError("kernel bias length differs from filter count");
  if (m.head.empty()) throw DataError("model has no head layers");
  auto width = static_cast<Eigen::Index>(m.head_input_width());
  for (const auto& l : m.head) {
    if (l.weight.cols() != width || l.bias.size() != l.weight.rows()) throw DataError("head layer shapes do not chain");
    width = l.weight.rows();
  }
  return m;
}

// --- Samples -----------------------------------------------------------------

/// Features in schema order; the landmark list lets readers refuse a sample
/// laid out for other landmarks.
inline json to_json(const Sample& s, const FeatureSchema& schema) {
  json j = {{"landmarks", schema.landmark_ids()},
            {"x", s.x},
            {"present", std::vector<int>(s.present.begin(), s.present.end())},
            {"service_id", s.service_id},
            {"qoe_faulty", s.qoe_faulty}};
  if (s.truth_cause) j["truth_cause"] = *s.truth_cause;
  return j;
}

inline Sample sample_from_json(const json& j, const FeatureSchema& schema) {
  if (j.contains("landmarks") && j.at("landmarks").get<std::vector<std::string>>() != schema.landmark_ids())
    throw SchemaMismatch("sample landmarks differ from the model schema");
  Sample s;
  s.x = j.at("x").get<std::vector<double>>();
  if (j.contains("present")) {
    for (int p : j.at("present").get<std::vector<int>>()) s.present.push_back(static_cast<std::uint8_t>(p != 0));
  } else {
    s.present.assign(schema.landmark_count(), 1);
  }
  s.service_id = j.value("service_id", -1);
  // The QoE flag follows the cause so the sample invariant holds; a
  // diagnosis request usually carries neither.
  if (j.contains("truth_cause") && !j.at("truth_cause").is_null()) {
    s.truth_cause = j.at("truth_cause").get<std::size_t>();
    s.qoe_faulty = true;
    if (*s.truth_cause < schema.feature_count()) s.truth_family = schema.family_of(*s.truth_cause);
  }
  validate(s, schema);
  return s;
}

// --- Container ---------------------------------------------------------------

struct ModelContainer {
  ModelKind kind = ModelKind::DiagNet;
  FeatureSchema schema;
  std::string config_digest;  // of the dataset the model was trained on
  json training;              // hyperparameters and protocol notes
  json payload;

  /// Digest of the payload alone, stable across reruns with the same inputs.
  std::string model_digest() const { return digest_hex(payload.dump()); }

  /// Refuses to pair this model with data or models of another layout.
  void require_schema(const FeatureSchema& other, std::string_view what) const {
    if (!(schema == other))
      throw SchemaMismatch(std::string(what) + ": schema digest " + other.digest() + " differs from model schema " +
                           schema.digest());
  }

  CoarseModel coarse() const {
    expect(ModelKind::DiagNet);
    return coarse_from_json(payload);
  }
  ForestModel forest() const {
    expect(ModelKind::Forest);
    auto f = forest_from_json(payload);
    if (f.features != schema.feature_count()) throw SchemaMismatch("forest feature count differs from schema");
    return f;
  }
  BayesModel bayes() const {
    expect(ModelKind::Bayes);
    return bayes_from_json(payload, schema);
  }

 private:
  void expect(ModelKind k) const {
    if (kind != k)
      throw DataError("container holds a " + std::string(to_string(kind)) + " model, expected " +
                      std::string(to_string(k)));
  }
};

inline json to_json(const ModelContainer& c) {
  return {{"format", kContainerFormat},
          {"version", kContainerVersion},
          {"kind", to_string(c.kind)},
          {"schema", c.schema.to_json()},
          {"schema_digest", c.schema.digest()},
          {"config_digest", c.config_digest},
          {"training", c.training},
          {"payload", c.payload}};
}

inline ModelContainer container_from_json(const json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kContainerFormat)
    throw DataError("not a model container");
  if (j.at("version").get<int>() != kContainerVersion)
    throw DataError("unsupported container version " + j.at("version").dump());
  ModelContainer c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.schema = FeatureSchema::from_json(j.at("schema"));
  if (c.schema.digest() != j.at("schema_digest").get<std::string>())
    throw SchemaMismatch("container schema does not match its recorded digest");
  c.config_digest = j.value("config_digest", std::string());
  c.training = j.value("training", json::object());
  c.payload = j.at("payload");
  return c;
}

inline ModelContainer make_container(const CoarseModel& m, const FeatureSchema& schema, std::string config_digest,
                                     json training = json::object()) {
  return {ModelKind::DiagNet, schema, std::move(config_digest), std::move(training), to_json(m)};
}

inline ModelContainer make_container(const ForestModel& f, const FeatureSchema& schema, std::string config_digest,
                                     json training = json::object()) {
  return {ModelKind::Forest, schema, std::move(config_digest), std::move(training), to_json(f)};
}

inline ModelContainer make_container(const BayesModel& b, std::string config_digest, json training = json::object()) {
  return {ModelKind::Bayes, b.schema, std::move(config_digest), std::move(training), to_json(b)};
}

inline void write_container(const ModelContainer& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(c).dump() << '\n';
  if (!out) throw DataError("write failed for " + path);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline ModelContainer read_container(const std::string& path) {
  try {
    return container_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace diagnet
