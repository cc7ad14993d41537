#pragma once

// Extensible naive Bayes over root-cause classes (one class per feature).
// Likelihoods are 1-D Gaussian KDEs; every class gets prior 1. Pairs
// (feature, class) without enough training data fall back to generic KDEs
// that merge all training landmarks measuring the same kind.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "diagnet/landpool.hpp"
#include "diagnet/schema.hpp"

namespace diagnet {

/// Gaussian KDE over sorted points.
class KdeEstimator {
 public:
  static constexpr double kBandwidthFloor = 1e-6;

  KdeEstimator() = default;

  /// Silverman's rule: 0.9 * min(sd, IQR / 1.34) * n^(-1/5), floored.
  explicit KdeEstimator(std::vector<double> points) : points_(std::move(points)) {
    if (points_.empty()) throw ContractViolation("KDE needs at least one point");
    std::sort(points_.begin(), points_.end());
    h_ = std::max(silverman(points_), kBandwidthFloor);
  }

  KdeEstimator(std::vector<double> points, double bandwidth) : points_(std::move(points)), h_(bandwidth) {
    if (points_.empty()) throw ContractViolation("KDE needs at least one point");
    if (!(h_ > 0)) throw ContractViolation("KDE bandwidth must be positive");
    std::sort(points_.begin(), points_.end());
  }

  static double silverman(std::span<const double> sorted) {
    const std::size_t n = sorted.size();
    if (n < 2) return 0.0;
    double mean = 0;
    for (double v : sorted) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : sorted) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / static_cast<double>(n - 1));
    auto quantile = [&](double q) {
      double pos = q * static_cast<double>(n - 1);
      auto lo = static_cast<std::size_t>(std::floor(pos));
      std::size_t hi = std::min(lo + 1, n - 1);
      return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    double iqr = quantile(0.75) - quantile(0.25);
    double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  }

  /// Kernels further than 8 bandwidths away contribute below 1e-14 relative
  /// and are skipped.
  double density(double x) const {
    constexpr double kReach = 8.0;
    auto lo = std::lower_bound(points_.begin(), points_.end(), x - kReach * h_);
    auto hi = std::upper_bound(lo, points_.end(), x + kReach * h_);
    double acc = 0;
    for (auto it = lo; it != hi; ++it) {
      double u = (x - *it) / h_;
      acc += std::exp(-0.5 * u * u);
    }
    return acc / (static_cast<double>(points_.size()) * h_ * std::sqrt(2.0 * std::numbers::pi));
  }

  const std::vector<double>& points() const { return points_; }
  double bandwidth() const { return h_; }
  std::size_t size() const { return points_.size(); }

  friend bool operator==(const KdeEstimator&, const KdeEstimator&) = default;

 private:
  std::vector<double> points_;
  double h_ = 1.0;
};

struct BayesParams {
  bool normalize = true;            // z-score inputs with per-kind statistics
  std::size_t min_points = 2;       // fewer points than this use the generic estimator
  std::size_t generic_cap = 4000;   // generic pools are thinned to at most this many points
};

/// Measurement slot shared across landmarks: the 5 kinds, then the 5 locals.
inline constexpr std::size_t kMeasureSlots = kKindCount + kLocalCount;

inline std::size_t measure_slot(const FeatureSchema& schema, std::size_t j) {
  auto r = schema.decode(j);
  return r.local ? kKindCount + static_cast<std::size_t>(r.local_feature) : static_cast<std::size_t>(r.kind);
}

struct BayesModel {
  FeatureSchema schema;
  BayesParams params;
  Normalizer norm;
  // specific[k * m + j]: density of feature j under cause class k.
  std::vector<std::optional<KdeEstimator>> specific;
  // generic_cause[t]: values of slot t when that very feature is the cause.
  std::array<std::optional<KdeEstimator>, kMeasureSlots> generic_cause;
  // generic_background[t]: values of slot t when the cause is elsewhere.
  std::array<std::optional<KdeEstimator>, kMeasureSlots> generic_background;

  std::size_t features() const { return schema.feature_count(); }
  std::size_t classes() const { return schema.feature_count(); }

  /// Which estimator answers P(x_j | C_k): specific, else generic cause when
  /// j is the class's own feature, else generic background, else a standard
  /// normal stand-in.
  const KdeEstimator& resolve(std::size_t j, std::size_t k) const {
    const std::size_t m = features();
    if (const auto& s = specific[k * m + j]) return *s;
    const std::size_t t = measure_slot(schema, j);
    if (j == k && generic_cause[t]) return *generic_cause[t];
    if (generic_background[t]) return *generic_background[t];
    static const KdeEstimator flat(std::vector<double>{0.0}, 1.0);
    return flat;
  }
};

namespace detail {

inline std::optional<KdeEstimator> thinned_kde(std::vector<double> pts, std::size_t cap, std::size_t min_points) {
  if (pts.size() < min_points) return std::nullopt;
  if (pts.size() > cap) {
    std::sort(pts.begin(), pts.end());
    std::vector<double> kept;
    kept.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) kept.push_back(pts[i * pts.size() / cap]);
    pts = std::move(kept);
  }
  return KdeEstimator(std::move(pts));
}

}  // namespace detail

/// Fits on faulty samples (their truth cause is the class). Absent landmark
/// features contribute nothing, so hidden landmarks never enter any estimator.
inline BayesModel fit_bayes(const FeatureSchema& schema, std::span<const Sample> samples, const BayesParams& params = {}) {
  std::vector<Sample> faulty;
  for (const auto& s : samples)
    if (s.qoe_faulty) {
      validate(s, schema);
      faulty.push_back(s);
    }
  if (faulty.empty()) throw DataError("naive Bayes needs at least one faulty sample");

  BayesModel model;
  model.schema = schema;
  model.params = params;
  if (params.normalize) model.norm = Normalizer::fit(faulty);
  const std::size_t m = schema.feature_count();

  std::vector<std::vector<double>> values(m * m);
  std::array<std::vector<double>, kMeasureSlots> cause_pool, background_pool;
  for (const auto& s : faulty) {
    auto x = params.normalize ? model.norm.apply(s) : s.x;
    auto present = feature_presence(s);
    const std::size_t k = *s.truth_cause;
    for (std::size_t j = 0; j < m; ++j) {
      if (!present[j]) continue;
      values[k * m + j].push_back(x[j]);
      const std::size_t t = measure_slot(schema, j);
      (j == k ? cause_pool[t] : background_pool[t]).push_back(x[j]);
    }
  }

  model.specific.resize(m * m);
  for (std::size_t i = 0; i < m * m; ++i)
    if (values[i].size() >= params.min_points) model.specific[i] = KdeEstimator(std::move(values[i]));
  for (std::size_t t = 0; t < kMeasureSlots; ++t) {
    model.generic_cause[t] = detail::thinned_kde(std::move(cause_pool[t]), params.generic_cap, params.min_points);
    model.generic_background[t] =
        detail::thinned_kde(std::move(background_pool[t]), params.generic_cap, params.min_points);
  }
  return model;
}

/// Posterior over the m cause classes with uniform priors, computed in log
/// space over present features only. Densities are floored at 1e-300.
inline std::vector<double> bayes_predict(const BayesModel& model, const Sample& s) {
  const std::size_t m = model.features();
  if (s.x.size() != m || s.present.size() != model.schema.landmark_count())
    throw SchemaMismatch("sample does not match the naive Bayes schema");
  auto x = model.params.normalize ? model.norm.apply(s) : s.x;
  auto present = feature_presence(s);

  std::vector<double> logp(m, 0.0);
  std::size_t used = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (!present[j]) continue;
    ++used;
    // Classes without a specific estimator share the same fallback density.
    const KdeEstimator* cached_est = nullptr;
    double cached = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const KdeEstimator& est = model.resolve(j, k);
      double d;
      if (&est == cached_est) {
        d = cached;
      } else {
        d = est.density(x[j]);
        if (!model.specific[k * m + j] && k != j) {
          cached_est = &est;
          cached = d;
        }
      }
      logp[k] += std::log(std::max(d, 1e-300));
    }
  }
  std::vector<double> out(m, 1.0 / static_cast<double>(m));
  if (used == 0) return out;
  double mx = *std::max_element(logp.begin(), logp.end());
  double sum = 0;
  for (std::size_t k = 0; k < m; ++k) sum += (out[k] = std::exp(logp[k] - mx));
  for (auto& v : out) v /= sum;
  return out;
}

namespace detail {

inline json kde_json(const std::optional<KdeEstimator>& e) {
  if (!e) return nullptr;
  return {{"h", e->bandwidth()}, {"points", e->points()}};
}

inline std::optional<KdeEstimator> kde_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return KdeEstimator(j.at("points").get<std::vector<double>>(), j.at("h").get<double>());
}

inline json normalizer_json(const Normalizer& n) {
  return {{"kind_mean", n.kind_mean}, {"kind_scale", n.kind_scale}, {"local_mean", n.local_mean},
          {"local_scale", n.local_scale}};
}

inline Normalizer normalizer_from_json(const json& j) {
  Normalizer n;
  n.kind_mean = j.at("kind_mean").get<decltype(n.kind_mean)>();
  n.kind_scale = j.at("kind_scale").get<decltype(n.kind_scale)>();
  n.local_mean = j.at("local_mean").get<decltype(n.local_mean)>();
  n.local_scale = j.at("local_scale").get<decltype(n.local_scale)>();
  return n;
}

}  // namespace detail

inline json to_json(const BayesModel& b) {
  json j;
  j["params"] = {{"normalize", b.params.normalize},
                 {"min_points", b.params.min_points},
                 {"generic_cap", b.params.generic_cap}};
  j["norm"] = detail::normalizer_json(b.norm);
  const std::size_t m = b.features();
  json spec = json::array();
  for (std::size_t i = 0; i < b.specific.size(); ++i)
    if (b.specific[i]) spec.push_back({{"class", i / m}, {"feature", i % m}, {"kde", detail::kde_json(b.specific[i])}});
  j["specific"] = std::move(spec);
  json gc = json::array(), gb = json::array();
  for (std::size_t t = 0; t < kMeasureSlots; ++t) {
    gc.push_back(detail::kde_json(b.generic_cause[t]));
    gb.push_back(detail::kde_json(b.generic_background[t]));
  }
  j["generic_cause"] = std::move(gc);
  j["generic_background"] = std::move(gb);
  return j;
}

inline BayesModel bayes_from_json(const json& j, const FeatureSchema& schema) {
  BayesModel b;
  b.schema = schema;
  const auto& p = j.at("params");
  b.params.normalize = p.at("normalize").get<bool>();
  b.params.min_points = p.at("min_points").get<std::size_t>();
  b.params.generic_cap = p.at("generic_cap").get<std::size_t>();
  b.norm = detail::normalizer_from_json(j.at("norm"));
  const std::size_t m = schema.feature_count();
  b.specific.resize(m * m);
  for (const auto& e : j.at("specific")) {
    auto k = e.at("class").get<std::size_t>(), f = e.at("feature").get<std::size_t>();
    if (k >= m || f >= m) throw DataError("naive Bayes estimator index out of range");
    b.specific[k * m + f] = detail::kde_from_json(e.at("kde"));
  }
  const auto& gc = j.at("generic_cause");
  const auto& gb = j.at("generic_background");
  if (gc.size() != kMeasureSlots || gb.size() != kMeasureSlots) throw DataError("naive Bayes generic table has wrong size");
  for (std::size_t t = 0; t < kMeasureSlots; ++t) {
    b.generic_cause[t] = detail::kde_from_json(gc[t]);
    b.generic_background[t] = detail::kde_from_json(gb[t]);
  }
  return b;
}

}  // namespace diagnet
