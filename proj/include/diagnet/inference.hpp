#pragma once

// Fine-grained localization on top of the coarse model: gradient attention,
// family-weighted rescaling of the attention, and blending with an auxiliary
// model according to how much attention falls on never-trained landmarks.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diagnet/forest.hpp"
#include "diagnet/landpool.hpp"
#include "diagnet/schema.hpp"

namespace diagnet {

struct AttentionScores {
  std::vector<double> scores;
  bool degenerate = false;  // gradient was all zero
};

/// gamma_j = |g_j| / sum |g|. An all-zero gradient yields uniform scores over
/// the features flagged in `present` (every feature when it is empty).
inline AttentionScores attention(std::span<const double> grad, std::span<const std::uint8_t> present = {}) {
  if (!present.empty() && present.size() != grad.size())
    throw ContractViolation("attention: presence mask length differs from gradient");
  AttentionScores out;
  out.scores.resize(grad.size());
  double total = 0;
  for (std::size_t j = 0; j < grad.size(); ++j) total += (out.scores[j] = std::abs(grad[j]));
  if (total > 0 && std::isfinite(total)) {
    for (auto& v : out.scores) v /= total;
    return out;
  }
  out.degenerate = true;
  std::size_t n = present.empty() ? grad.size() : static_cast<std::size_t>(std::count_if(present.begin(), present.end(), [](auto p) { return p != 0; }));
  for (std::size_t j = 0; j < grad.size(); ++j)
    out.scores[j] = (present.empty() || present[j]) && n ? 1.0 / static_cast<double>(n) : 0.0;
  return out;
}

struct TunedScores {
  std::vector<double> scores;
  std::size_t family = 0;      // argmax class of y
  double weight = 0;           // w = y_phi / sum y
  double family_mass = 0;      // s, attention mass on the family before tuning
  bool nominal = false;        // argmax was the nominal class; left untouched
  bool extreme = false;        // s was 0 or 1; left untouched
};

/// Multi-label score weighting. `feature_class[j]` is the class of y that
/// feature j belongs to. Features of the argmax class receive total mass
/// w = y_phi / sum(y), the others share 1 - w, each group keeping its
/// internal proportions.
inline TunedScores tune(std::span<const double> gamma, std::span<const double> y,
                        std::span<const std::size_t> feature_class, std::optional<std::size_t> nominal_class) {
  if (feature_class.size() != gamma.size()) throw ContractViolation("tune: family map length differs from scores");
  if (y.empty()) throw ContractViolation("tune: empty coarse vector");
  TunedScores out;
  out.scores.assign(gamma.begin(), gamma.end());
  out.family = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  if (nominal_class && out.family == *nominal_class) {
    out.nominal = true;
    return out;
  }
  double ysum = 0;
  for (double v : y) ysum += v;
  out.weight = y[out.family] / ysum;
  // Mass outside the family is summed directly rather than taken as 1 - s,
  // which loses all precision when s is within rounding of 1.
  double s = 0, rest = 0;
  for (std::size_t j = 0; j < gamma.size(); ++j) (feature_class[j] == out.family ? s : rest) += gamma[j];
  out.family_mass = s;
  if (s == 0.0 || rest == 0.0) {
    out.extreme = true;
    return out;
  }
  const double w = out.weight;
  for (std::size_t j = 0; j < gamma.size(); ++j)
    out.scores[j] = feature_class[j] == out.family ? gamma[j] * w / s : gamma[j] * (1.0 - w) / rest;
  return out;
}

/// Schema form: classes are fault families, Nominal is never tuned.
inline TunedScores tune(std::span<const double> gamma, std::span<const double> y, const FeatureSchema& schema) {
  std::vector<std::size_t> cls(schema.feature_count());
  for (std::size_t j = 0; j < cls.size(); ++j) cls[j] = family_index(schema.family_of(j));
  return tune(gamma, y, cls, family_index(FaultFamily::Nominal));
}

struct EnsembleScores {
  std::vector<double> scores;
  double w_unknown = 0;
};

/// w_U * gamma' + (1 - w_U) * alpha with w_U the tuned attention mass on the
/// unknown features `unknown` (a per-feature mask).
inline EnsembleScores ensemble(std::span<const double> gamma_tuned, std::span<const double> alpha,
                               std::span<const std::uint8_t> unknown) {
  if (gamma_tuned.size() != alpha.size() || unknown.size() != alpha.size())
    throw ContractViolation("ensemble: score vectors and unknown mask must have equal length");
  double in = 0, out_mass = 0;
  for (std::size_t j = 0; j < alpha.size(); ++j) (unknown[j] ? in : out_mass) += gamma_tuned[j];
  // With no mass outside U the weight is exactly one, whatever the rounding of the sum.
  double w = out_mass == 0.0 && in > 0 ? 1.0 : std::clamp(in, 0.0, 1.0);
  EnsembleScores r;
  r.w_unknown = w;
  r.scores.resize(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) r.scores[j] = w * gamma_tuned[j] + (1.0 - w) * alpha[j];
  return r;
}

/// (feature, score) pairs by descending score, ascending index on ties.
inline std::vector<std::pair<std::size_t, double>> rank_scores(std::span<const double> scores) {
  std::vector<std::pair<std::size_t, double>> r;
  r.reserve(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) r.emplace_back(j, scores[j]);
  std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return r;
}

struct DiagnosisFlags {
  bool argmax_tie = false;
  bool degenerate_gradient = false;
  bool nominal_coarse = false;  // coarse argmax was Nominal; tuning skipped
  bool extreme_case = false;    // tuning left the scores unchanged (s in {0, 1})
  bool pure_attention = false;  // no auxiliary model
};

struct Diagnosis {
  std::vector<std::pair<std::size_t, double>> ranking;
  std::vector<double> scores;  // final scores in feature order
  std::vector<double> coarse;  // y
  FaultFamily coarse_family = FaultFamily::Nominal;
  double w_unknown = 0;
  DiagnosisFlags flags;
};

/// Feature mask of landmarks the coarse model never saw during training.
inline std::vector<std::uint8_t> unknown_features(const CoarseModel& model, const FeatureSchema& schema) {
  std::vector<std::uint8_t> u(schema.feature_count(), 0);
  for (std::size_t l = 0; l < schema.landmark_count(); ++l) {
    const auto& id = schema.landmark_ids()[l];
    bool seen = std::find(model.trained_landmarks.begin(), model.trained_landmarks.end(), id) !=
                model.trained_landmarks.end();
    if (!seen)
      for (std::size_t k = 0; k < kKindCount; ++k) u[l * kKindCount + k] = 1;
  }
  return u;
}

/// Coarse prediction, attention, tuning and (when `aux` is given) ensemble
/// averaging with the forest's scores.
inline Diagnosis diagnose(const CoarseModel& model, const ForestModel* aux, const Sample& sample,
                          const FeatureSchema& schema) {
  validate(sample, schema);
  auto xn = model.norm.apply(sample);
  auto g = input_gradient(model, xn, sample.present);
  auto present = feature_presence(sample);
  auto att = attention(g.grad, present);
  std::vector<double> y(g.probs.data(), g.probs.data() + g.probs.size());
  auto tuned = tune(att.scores, y, schema);

  Diagnosis d;
  d.coarse = y;
  d.coarse_family = static_cast<FaultFamily>(g.target);
  d.flags.argmax_tie = g.tie;
  d.flags.degenerate_gradient = att.degenerate;
  d.flags.nominal_coarse = tuned.nominal;
  d.flags.extreme_case = tuned.extreme;

  auto unknown = unknown_features(model, schema);
  if (aux) {
    auto alpha = forest_predict(*aux, sample);
    auto e = ensemble(tuned.scores, alpha, unknown);
    d.scores = std::move(e.scores);
    d.w_unknown = e.w_unknown;
  } else {
    d.flags.pure_attention = true;
    for (std::size_t j = 0; j < unknown.size(); ++j)
      if (unknown[j]) d.w_unknown += tuned.scores[j];
    d.scores = std::move(tuned.scores);
  }
  d.ranking = rank_scores(d.scores);
  return d;
}

inline json to_json(const Diagnosis& d, const FeatureSchema& schema, std::size_t top = 0) {
  json causes = json::array();
  std::size_t n = top ? std::min(top, d.ranking.size()) : d.ranking.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto [j, s] = d.ranking[i];
    causes.push_back({{"rank", i + 1},
                      {"feature", j},
                      {"name", schema.feature_name(j)},
                      {"family", to_string(schema.family_of(j))},
                      {"score", s}});
  }
  json coarse = json::object();
  for (std::size_t c = 0; c < d.coarse.size() && c < kFamilyCount; ++c) coarse[std::string(kFamilyNames[c])] = d.coarse[c];
  return {{"causes", causes},
          {"coarse", coarse},
          {"coarse_family", to_string(d.coarse_family)},
          {"w_unknown", d.w_unknown},
          {"flags",
           {{"argmax_tie", d.flags.argmax_tie},
            {"degenerate_gradient", d.flags.degenerate_gradient},
            {"nominal_coarse", d.flags.nominal_coarse},
            {"extreme_case", d.flags.extreme_case},
            {"pure_attention", d.flags.pure_attention}}}};
}

}  // namespace diagnet
