#pragma once

// Evaluation protocol: hidden-landmark splits, Recall@k with bootstrap
// intervals, per-family and per-region breakdowns, the client-diversity sweep
// and service transfer curves.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "diagnet/bayes.hpp"
#include "diagnet/dataset.hpp"
#include "diagnet/forest.hpp"
#include "diagnet/inference.hpp"
#include "diagnet/landpool.hpp"
#include "diagnet/simnet.hpp"

namespace diagnet {

// --- metrics -----------------------------------------------------------------

/// 1-based rank of `truth` when sorting by descending score. Exact ties are
/// ordered uniformly at random with `rng`, so a flat score vector behaves as
/// a random ranking.
inline std::size_t rank_of(std::span<const double> scores, std::size_t truth, Rng& rng) {
  if (truth >= scores.size()) throw IndexError("truth cause outside the score vector");
  const double t = scores[truth];
  std::size_t greater = 0, ties = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == truth) continue;
    if (scores[j] > t) ++greater;
    else if (scores[j] == t) ++ties;
  }
  if (ties == 0) return greater + 1;
  std::uniform_int_distribution<std::size_t> pos(0, ties);
  return greater + 1 + pos(rng);
}

/// Fraction of ranks within the top k.
inline double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("Recall@k is undefined on an empty sample set");
  if (k == 0) throw ContractViolation("k must be at least 1");
  std::size_t hit = 0;
  for (auto r : ranks) hit += r <= k;
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

/// Fraction of rankings whose truth cause is among the first k entries.
inline double recall_at_k(std::span<const std::vector<std::pair<std::size_t, double>>> rankings,
                          std::span<const std::size_t> truths, std::size_t k) {
  if (rankings.size() != truths.size()) throw ContractViolation("one truth per ranking is required");
  std::vector<std::size_t> ranks;
  ranks.reserve(truths.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    std::size_t r = rankings[i].size() + 1;
    for (std::size_t p = 0; p < rankings[i].size(); ++p)
      if (rankings[i][p].first == truths[i]) {
        r = p + 1;
        break;
      }
    ranks.push_back(r);
  }
  return recall_from_ranks(ranks, k);
}

struct Interval {
  double lo = 0, hi = 0;
};

/// Percentile bootstrap (2.5%, 97.5%) of Recall@k over resampled samples.
inline Interval bootstrap_recall(std::span<const std::size_t> ranks, std::size_t k, std::size_t resamples,
                                 std::uint64_t seed) {
  if (ranks.empty()) throw DataError("Recall@k is undefined on an empty sample set");
  if (resamples == 0) {
    double r = recall_from_ranks(ranks, k);
    return {r, r};
  }
  auto rng = derive_rng(seed, {stream::kBootstrap, k, ranks.size()});
  std::uniform_int_distribution<std::size_t> pick(0, ranks.size() - 1);
  std::vector<double> stats(resamples);
  for (auto& s : stats) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) hit += ranks[pick(rng)] <= k;
    s = static_cast<double>(hit) / static_cast<double>(ranks.size());
  }
  std::sort(stats.begin(), stats.end());
  auto at = [&](double q) {
    double pos = q * static_cast<double>(resamples - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, resamples - 1);
    return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  return {at(0.025), at(0.975)};
}

// --- hidden-landmark split ---------------------------------------------------

enum class Cohort : std::uint8_t { Nominal, New, Known };

inline std::string_view to_string(Cohort c) {
  switch (c) {
    case Cohort::Nominal: return "nominal";
    case Cohort::New: return "new";
    case Cohort::Known: return "known";
  }
  return "?";
}

struct HiddenSplit {
  std::vector<std::uint8_t> known;  // landmark mask available to training
  std::vector<Sample> train;        // restricted to known landmarks
  std::vector<Sample> test;         // all features
  std::vector<Cohort> cohort;       // parallel to test
  std::size_t excluded = 0;         // training faults caused at hidden landmarks
};

/// Cohort of a faulty sample: New when its cause is a feature of a hidden
/// landmark, Known otherwise (local causes included).
inline Cohort cohort_of(const Sample& s, const FeatureSchema& schema, std::span<const std::uint8_t> known) {
  if (!s.qoe_faulty) return Cohort::Nominal;
  auto r = schema.decode(*s.truth_cause);
  if (r.local) return Cohort::Known;
  return known[r.landmark] ? Cohort::Known : Cohort::New;
}

/// Training samples are restricted to known landmarks and faults caused at a
/// hidden landmark are dropped from training altogether; the test view keeps
/// every feature.
inline HiddenSplit split_hidden(const Dataset& d, std::span<const std::string> hidden) {
  const auto& schema = d.schema;
  HiddenSplit out;
  out.known.assign(schema.landmark_count(), 1);
  for (const auto& id : hidden) {
    auto l = schema.find_landmark(id);
    if (!l) throw DataError("unknown hidden landmark '" + id + "'");
    out.known[*l] = 0;
  }
  if (std::none_of(out.known.begin(), out.known.end(), [](auto v) { return v != 0; }))
    throw ContractViolation("cannot hide every landmark");
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    if (d.split[i] == Split::Train) {
      if (cohort_of(s, schema, out.known) == Cohort::New) {
        ++out.excluded;
        continue;
      }
      out.train.push_back(restrict(s, out.known));
    } else {
      out.test.push_back(s);
      out.cohort.push_back(cohort_of(s, schema, out.known));
    }
  }
  return out;
}

// --- protocol ----------------------------------------------------------------

struct DiversityConfig {
  bool enabled = false;
  std::vector<std::size_t> sizes;  // empty: 1..R
  std::size_t max_subsets = 20;
  std::size_t max_epochs = 0;      // 0: same as the main training
};

struct TransferProtocol {
  bool enabled = true;
  std::vector<std::string> specialized;  // empty: services hosted in the last service region
  std::size_t max_epochs = 20;
  double min_delta = 0.01;  // a specialization has converged once gains fall below this
};

struct Protocol {
  sim::SimConfig sim = sim::default_sim_config();
  std::vector<std::string> hidden{"EAST", "GRAV", "SEAT"};
  std::vector<std::size_t> ks{1, 3, 5, 10};
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 2020;
  TrainConfig train;
  ForestParams forest;
  BayesParams bayes;
  DiversityConfig diversity;
  TransferProtocol transfer;
};

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"decay", c.decay},
          {"momentum", c.momentum},           {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"patience", c.patience},
          {"min_delta", c.min_delta},
          {"validation_fraction", c.validation_fraction}, {"seed", c.seed},
          {"filters", c.shape.filters},       {"hidden", c.shape.hidden}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay = j.value("decay", c.decay);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.min_delta = j.value("min_delta", c.min_delta);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.seed = j.value("seed", c.seed);
  c.shape.filters = j.value("filters", c.shape.filters);
  c.shape.hidden = j.value("hidden", c.shape.hidden);
  c.validate();
  return c;
}

inline json to_json(const ForestParams& p) {
  return {{"trees", p.trees}, {"max_depth", p.max_depth}, {"features_per_split", p.features_per_split},
          {"bootstrap", p.bootstrap}, {"seed", p.seed}};
}

inline ForestParams forest_params_from_json(const json& j) {
  ForestParams p;
  p.trees = j.value("trees", p.trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.features_per_split = j.value("features_per_split", p.features_per_split);
  p.bootstrap = j.value("bootstrap", p.bootstrap);
  p.seed = j.value("seed", p.seed);
  p.validate();
  return p;
}

inline json to_json(const BayesParams& p) {
  return {{"normalize", p.normalize}, {"min_points", p.min_points}, {"generic_cap", p.generic_cap}};
}

inline BayesParams bayes_params_from_json(const json& j) {
  BayesParams p;
  p.normalize = j.value("normalize", p.normalize);
  p.min_points = j.value("min_points", p.min_points);
  p.generic_cap = j.value("generic_cap", p.generic_cap);
  if (p.min_points < 1 || p.generic_cap < 2) throw DataError("bad naive Bayes parameters");
  return p;
}

inline json to_json(const Protocol& p) {
  return {{"sim", to_json(p.sim)},
          {"hidden", p.hidden},
          {"k", p.ks},
          {"bootstrap", p.bootstrap},
          {"seed", p.seed},
          {"train", to_json(p.train)},
          {"forest", to_json(p.forest)},
          {"bayes", to_json(p.bayes)},
          {"diversity",
           {{"enabled", p.diversity.enabled},
            {"sizes", p.diversity.sizes},
            {"max_subsets", p.diversity.max_subsets},
            {"max_epochs", p.diversity.max_epochs}}},
          {"transfer",
           {{"enabled", p.transfer.enabled},
            {"specialized", p.transfer.specialized},
            {"max_epochs", p.transfer.max_epochs},
            {"min_delta", p.transfer.min_delta}}}};
}

/// `sim` is an inline simulation config; anything absent takes its default.
inline Protocol protocol_from_json(const json& j) {
  try {
    Protocol p;
    if (j.contains("sim")) p.sim = sim::sim_config_from_json(j.at("sim"));
    p.hidden = j.value("hidden", p.hidden);
    p.ks = j.value("k", p.ks);
    if (p.ks.empty() || std::find(p.ks.begin(), p.ks.end(), 0u) != p.ks.end())
      throw DataError("k values must be at least 1");
    p.bootstrap = j.value("bootstrap", p.bootstrap);
    p.seed = j.value("seed", p.seed);
    if (j.contains("train")) p.train = train_config_from_json(j.at("train"));
    if (j.contains("forest")) p.forest = forest_params_from_json(j.at("forest"));
    if (j.contains("bayes")) p.bayes = bayes_params_from_json(j.at("bayes"));
    if (j.contains("diversity")) {
      const auto& d = j.at("diversity");
      p.diversity.enabled = d.value("enabled", p.diversity.enabled);
      p.diversity.sizes = d.value("sizes", p.diversity.sizes);
      p.diversity.max_subsets = d.value("max_subsets", p.diversity.max_subsets);
      p.diversity.max_epochs = d.value("max_epochs", p.diversity.max_epochs);
    }
    if (j.contains("transfer")) {
      const auto& t = j.at("transfer");
      p.transfer.enabled = t.value("enabled", p.transfer.enabled);
      p.transfer.specialized = t.value("specialized", p.transfer.specialized);
      p.transfer.max_epochs = t.value("max_epochs", p.transfer.max_epochs);
      p.transfer.min_delta = t.value("min_delta", p.transfer.min_delta);
    }
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid protocol: ") + e.what());
  }
}

// --- report ------------------------------------------------------------------

struct RecallRow {
  std::string model, cohort;
  std::size_t k = 0;
  double recall = 0;
  Interval ci;
  std::size_t n = 0;
};

struct GroupRow {
  std::string model, group, cohort;
  std::size_t k = 0;
  double recall = 0;
  std::size_t n = 0;
};

struct DiversityRow {
  std::string model, cohort;
  std::size_t regions = 0;
  double recall = 0;   // mean Recall@1 over subsets
  double spread = 0;   // standard deviation over subsets
  std::size_t subsets = 0;
};

struct TransferRow {
  std::string service;
  std::size_t best_epoch = 0;
  std::size_t argmin_epoch = 0;
  std::size_t samples = 0;
  bool kernel_unchanged = false;  // K and b bit-identical to the general model
};

struct Report {
  json meta;
  std::vector<RecallRow> recalls;
  std::vector<GroupRow> family;
  std::vector<GroupRow> region;
  std::vector<DiversityRow> diversity;
  std::vector<TransferRow> transfer;
  double transfer_median_best = 0;
  std::vector<std::pair<std::string, TrainHistory>> histories;

  const RecallRow& recall(std::string_view model, std::string_view cohort, std::size_t k) const {
    for (const auto& r : recalls)
      if (r.model == model && r.cohort == cohort && r.k == k) return r;
    throw DataError("no recall row for " + std::string(model) + "/" + std::string(cohort) + "@" + std::to_string(k));
  }
};

inline constexpr std::array<std::string_view, 3> kModelNames = {"diagnet", "forest", "bayes"};
inline constexpr double kReferenceCombinedRecall1 = 0.739;

/// Models trained on one training view.
struct TrainedModels {
  TrainResult diagnet;
  ForestModel forest;
  BayesModel bayes;
};

inline TrainedModels train_models(const FeatureSchema& schema, std::span<const Sample> train, const Protocol& p,
                                  const TrainConfig& tc) {
  TrainedModels m;
  m.diagnet = diagnet::train(schema, train, tc);
  m.forest = train_forest(train, p.forest);
  m.bayes = fit_bayes(schema, train, p.bayes);
  return m;
}

/// Rank of the truth cause per model (row-major: model, then faulty test
/// sample). Ties are broken at random with per-sample generators.
inline std::array<std::vector<std::size_t>, 3> rank_test(const TrainedModels& m, const FeatureSchema& schema,
                                                        std::span<const Sample> faulty, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 3> ranks;
  for (std::size_t i = 0; i < faulty.size(); ++i) {
    const auto& s = faulty[i];
    std::array<std::vector<double>, 3> scores{diagnose(m.diagnet.model, &m.forest, s, schema).scores,
                                              forest_predict(m.forest, s), bayes_predict(m.bayes, s)};
    for (std::size_t mi = 0; mi < 3; ++mi) {
      auto rng = derive_rng(seed, {stream::kTies, mi, i});
      ranks[mi].push_back(rank_of(scores[mi], *s.truth_cause, rng));
    }
  }
  return ranks;
}

inline std::vector<std::string> default_specialized(const sim::Topology& t) {
  std::vector<std::string> out;
  if (t.services.empty()) return out;
  const std::size_t host = t.services.back().host;
  for (const auto& s : t.services)
    if (s.host == host) out.push_back(s.name);
  return out;
}

/// Runs the full protocol on `data` (generated from `p.sim` when null).
inline Report run_benchmark(const Protocol& p, const Dataset* data = nullptr) {
  Dataset generated;
  if (!data) {
    generated = sim::generate_dataset(p.sim);
    data = &generated;
  } else if (data->config_digest != sim::config_digest(p.sim)) {
    throw SchemaMismatch("dataset was not generated from the protocol's simulation config");
  }
  const auto& schema = data->schema;
  auto split = split_hidden(*data, p.hidden);

  std::vector<Sample> faulty;
  std::vector<Cohort> cohort;
  for (std::size_t i = 0; i < split.test.size(); ++i)
    if (split.test[i].qoe_faulty) {
      faulty.push_back(split.test[i]);
      cohort.push_back(split.cohort[i]);
    }
  if (faulty.empty()) throw DataError("test split has no faulty samples");

  Report rep;
  auto models = train_models(schema, split.train, p, p.train);
  rep.histories.emplace_back("diagnet", models.diagnet.history);
  auto ranks = rank_test(models, schema, faulty, p.seed);

  auto cohort_ranks = [&](const std::vector<std::size_t>& r, std::string_view which) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < r.size(); ++i)
      if (which == "combined" || to_string(cohort[i]) == which) out.push_back(r[i]);
    return out;
  };

  const std::array<std::string_view, 3> cohorts = {"new", "known", "combined"};
  std::size_t n_new = 0, n_known = 0;
  for (auto c : cohort) (c == Cohort::New ? n_new : n_known)++;
  for (std::size_t mi = 0; mi < 3; ++mi)
    for (std::size_t ci = 0; ci < cohorts.size(); ++ci) {
      auto r = cohort_ranks(ranks[mi], cohorts[ci]);
      if (r.empty()) continue;
      for (auto k : p.ks) {
        RecallRow row{std::string(kModelNames[mi]), std::string(cohorts[ci]), k, recall_from_ranks(r, k), {}, r.size()};
        row.ci = bootstrap_recall(r, k, p.bootstrap, splitmix64(p.seed + 16 * mi + ci));
        rep.recalls.push_back(row);
      }
    }

  // Per-family and per-region Recall@3.
  const std::size_t kGroup = 3;
  for (std::size_t mi = 0; mi < 3; ++mi) {
    std::map<std::string, std::vector<std::size_t>> by_family, by_region;
    std::map<std::string, std::string> region_cohort;
    for (std::size_t i = 0; i < faulty.size(); ++i) {
      by_family[std::string(to_string(*faulty[i].truth_family))].push_back(ranks[mi][i]);
      const auto& sc = p.sim.scenarios.at(static_cast<std::size_t>(faulty[i].scenario));
      std::string region = p.sim.topology.regions[sc.location.region].id;
      by_region[region].push_back(ranks[mi][i]);
      auto l = schema.find_landmark(region);
      region_cohort[region] = l && !split.known[*l] ? "new" : "known";
    }
    for (auto& [f, r] : by_family)
      rep.family.push_back({std::string(kModelNames[mi]), f, "combined", kGroup, recall_from_ranks(r, kGroup), r.size()});
    for (auto& [g, r] : by_region)
      rep.region.push_back({std::string(kModelNames[mi]), g, region_cohort[g], kGroup, recall_from_ranks(r, kGroup), r.size()});
  }

  // Client-diversity sweep: retrain on clients from subsets of regions.
  if (p.diversity.enabled) {
    const std::size_t R = p.sim.topology.regions.size();
    std::vector<std::size_t> sizes = p.diversity.sizes;
    if (sizes.empty())
      for (std::size_t r = 1; r <= R; ++r) sizes.push_back(r);
    TrainConfig tc = p.train;
    if (p.diversity.max_epochs) tc.max_epochs = p.diversity.max_epochs;
    for (auto size : sizes) {
      if (size == 0 || size > R) throw DataError("diversity subset size out of range");
      std::set<std::vector<std::size_t>> subsets;
      auto rng = derive_rng(p.seed, {stream::kSubset, size});
      std::vector<std::size_t> regions(R);
      std::iota(regions.begin(), regions.end(), 0);
      for (std::size_t attempt = 0; attempt < 50 * p.diversity.max_subsets && subsets.size() < p.diversity.max_subsets;
           ++attempt) {
        std::shuffle(regions.begin(), regions.end(), rng);
        std::vector<std::size_t> pick(regions.begin(), regions.begin() + static_cast<std::ptrdiff_t>(size));
        std::sort(pick.begin(), pick.end());
        subsets.insert(pick);
      }
      std::array<std::array<std::vector<double>, 3>, 3> recalls;  // model, cohort
      for (const auto& subset : subsets) {
        std::vector<Sample> train;
        for (const auto& s : split.train)
          if (std::binary_search(subset.begin(), subset.end(), static_cast<std::size_t>(s.client_region)))
            train.push_back(s);
        TrainedModels sub;
        try {
          sub = train_models(schema, train, p, tc);
        } catch (const DataError&) {
          continue;  // subset without usable faults
        }
        auto r = rank_test(sub, schema, faulty, p.seed);
        for (std::size_t mi = 0; mi < 3; ++mi)
          for (std::size_t ci = 0; ci < 3; ++ci) {
            auto cr = cohort_ranks(r[mi], cohorts[ci]);
            if (!cr.empty()) recalls[mi][ci].push_back(recall_from_ranks(cr, 1));
          }
      }
      for (std::size_t mi = 0; mi < 3; ++mi)
        for (std::size_t ci = 0; ci < 3; ++ci) {
          const auto& v = recalls[mi][ci];
          if (v.empty()) continue;
          double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
          double var = 0;
          for (double x : v) var += (x - mean) * (x - mean);
          rep.diversity.push_back({std::string(kModelNames[mi]), std::string(cohorts[ci]), size, mean,
                                   std::sqrt(var / static_cast<double>(v.size())), v.size()});
        }
    }
  }

  // Transfer: a general model on the remaining services, then one frozen-
  // kernel specialization per held-out service.
  if (p.transfer.enabled) {
    auto specialized = p.transfer.specialized.empty() ? default_specialized(p.sim.topology) : p.transfer.specialized;
    std::vector<int> special_ids;
    for (const auto& name : specialized) special_ids.push_back(data->service_index(name));
    std::vector<Sample> general_train;
    for (const auto& s : split.train)
      if (std::find(special_ids.begin(), special_ids.end(), s.service_id) == special_ids.end()) general_train.push_back(s);
    auto general = diagnet::train(schema, general_train, p.train);
    rep.histories.emplace_back("general", general.history);
    TrainConfig tc = p.train;
    tc.max_epochs = p.transfer.max_epochs;
    tc.min_delta = p.transfer.min_delta;
    std::vector<double> best;
    for (std::size_t i = 0; i < specialized.size(); ++i) {
      std::vector<Sample> svc;
      for (const auto& s : split.train)
        if (s.service_id == special_ids[i]) svc.push_back(s);
      if (svc.size() < 2) continue;
      auto res = transfer(general.model, svc, tc);
      rep.histories.emplace_back("service:" + specialized[i], res.history);
      bool frozen = res.model.kernel == general.model.kernel && res.model.kernel_bias == general.model.kernel_bias;
      rep.transfer.push_back({specialized[i], res.history.best_epoch, res.history.argmin_epoch, svc.size(), frozen});
      best.push_back(static_cast<double>(res.history.best_epoch));
    }
    if (!best.empty()) {
      std::sort(best.begin(), best.end());
      std::size_t n = best.size();
      rep.transfer_median_best = n % 2 ? best[n / 2] : 0.5 * (best[n / 2 - 1] + best[n / 2]);
    }
  }

  rep.meta = {{"protocol_digest", digest_hex(to_json(p).dump())},
              {"config_digest", data->config_digest},
              {"schema_digest", schema.digest()},
              {"features", schema.feature_count()},
              {"hidden", p.hidden},
              {"samples", data->size()},
              {"train_samples", split.train.size()},
              {"excluded_train_faults", split.excluded},
              {"test_faulty", faulty.size()},
              {"test_new", n_new},
              {"test_known", n_known},
              {"reference_combined_recall1", kReferenceCombinedRecall1}};
  return rep;
}

// --- output ------------------------------------------------------------------

inline json history_json(const TrainHistory& h) {
  return {{"train_loss", h.train_loss}, {"val_loss", h.val_loss}, {"best_epoch", h.best_epoch},
          {"argmin_epoch", h.argmin_epoch}, {"degenerate", h.degenerate}};
}

inline json to_json(const Report& r) {
  json j;
  j["meta"] = r.meta;
  j["recalls"] = json::array();
  for (const auto& x : r.recalls)
    j["recalls"].push_back({{"model", x.model}, {"cohort", x.cohort}, {"k", x.k}, {"recall", x.recall},
                            {"ci_low", x.ci.lo}, {"ci_high", x.ci.hi}, {"n", x.n}});
  auto groups = [](const std::vector<GroupRow>& rows, const char* key) {
    json a = json::array();
    for (const auto& x : rows)
      a.push_back({{"model", x.model}, {key, x.group}, {"cohort", x.cohort}, {"k", x.k}, {"recall", x.recall}, {"n", x.n}});
    return a;
  };
  j["family_recall"] = groups(r.family, "family");
  j["region_recall"] = groups(r.region, "region");
  j["diversity"] = json::array();
  for (const auto& x : r.diversity)
    j["diversity"].push_back({{"model", x.model}, {"cohort", x.cohort}, {"regions", x.regions}, {"recall", x.recall},
                              {"spread", x.spread}, {"subsets", x.subsets}});
  j["transfer"] = {{"median_best_epoch", r.transfer_median_best}, {"services", json::array()}};
  for (const auto& t : r.transfer)
    j["transfer"]["services"].push_back({{"service", t.service}, {"best_epoch", t.best_epoch},
                                              {"argmin_epoch", t.argmin_epoch}, {"samples", t.samples},
                                              {"kernel_unchanged", t.kernel_unchanged}});
  j["histories"] = json::object();
  for (const auto& [name, h] : r.histories) j["histories"][name] = history_json(h);
  return j;
}

namespace detail {

inline std::string fmt(double v) {
  std::string s;
  append_double(s, v);
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace detail

/// report.json plus one CSV per table.
inline void write_report(const Report& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "report.json", to_json(r).dump(2) + "\n");

  std::string csv = "model,cohort,k,recall,ci_low,ci_high,n\n";
  for (const auto& x : r.recalls)
    csv += x.model + "," + x.cohort + "," + std::to_string(x.k) + "," + detail::fmt(x.recall) + "," +
           detail::fmt(x.ci.lo) + "," + detail::fmt(x.ci.hi) + "," + std::to_string(x.n) + "\n";
  detail::write_text(dir / "recalls.csv", csv);

  auto group_csv = [](const std::vector<GroupRow>& rows, const char* key) {
    std::string s = std::string("model,") + key + ",cohort,k,recall,n\n";
    for (const auto& x : rows)
      s += x.model + "," + x.group + "," + x.cohort + "," + std::to_string(x.k) + "," + detail::fmt(x.recall) + "," +
           std::to_string(x.n) + "\n";
    return s;
  };
  detail::write_text(dir / "family_recall.csv", group_csv(r.family, "family"));
  detail::write_text(dir / "region_recall.csv", group_csv(r.region, "region"));

  csv = "model,cohort,regions,recall,spread,subsets\n";
  for (const auto& x : r.diversity)
    csv += x.model + "," + x.cohort + "," + std::to_string(x.regions) + "," + detail::fmt(x.recall) + "," +
           detail::fmt(x.spread) + "," + std::to_string(x.subsets) + "\n";
  detail::write_text(dir / "diversity.csv", csv);

  csv = "model,epoch,train_loss,val_loss\n";
  for (const auto& [name, h] : r.histories)
    for (std::size_t e = 0; e < h.train_loss.size(); ++e)
      csv += name + "," + std::to_string(e) + "," + detail::fmt(h.train_loss[e]) + "," + detail::fmt(h.val_loss[e]) + "\n";
  detail::write_text(dir / "learning_history.csv", csv);

  csv = "service,best_epoch,argmin_epoch,samples,kernel_unchanged\n";
  for (const auto& t : r.transfer)
    csv += t.service + "," + std::to_string(t.best_epoch) + "," + std::to_string(t.argmin_epoch) + "," +
           std::to_string(t.samples) + "," + (t.kernel_unchanged ? "1" : "0") + "\n";
  detail::write_text(dir / "transfer.csv", csv);
}

}  // namespace diagnet
