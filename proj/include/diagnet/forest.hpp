#pragma once

// Extensible random forest. Input width is fixed at the full feature count m
// of the schema; features of landmarks that are absent are imputed as 0. The
// label space is the m root-cause features plus one "unknown" class that
// nominal samples train into. At prediction the unknown vote share is spread
// evenly over every cause.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "diagnet/rng.hpp"
#include "diagnet/schema.hpp"

namespace diagnet {

struct ForestParams {
  std::size_t trees = 100;
  std::size_t max_depth = 12;
  std::size_t features_per_split = 0;  // 0 = floor(sqrt(m))
  bool bootstrap = true;
  std::uint64_t seed = 11;

  void validate() const {
    if (trees == 0) throw ContractViolation("forest needs at least one tree");
  }
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0;       // go left when x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t vote = -1;                                  // leaf majority class
  std::vector<std::pair<std::int32_t, std::uint32_t>> histogram;  // leaf (class, count)
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  std::int32_t vote(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].vote;
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (nodes[i].feature >= 0) {
        stack.push_back({static_cast<std::size_t>(nodes[i].left), d + 1});
        stack.push_back({static_cast<std::size_t>(nodes[i].right), d + 1});
      }
    }
    return best;
  }
};

struct ForestModel {
  ForestParams params;
  std::size_t features = 0;  // m; class `features` is "unknown"
  std::vector<DecisionTree> trees;

  std::size_t unknown_class() const { return features; }
};

/// Class index of a labeled sample: its cause feature, or unknown if nominal.
inline std::size_t forest_label(const Sample& s) {
  if (s.qoe_faulty) {
    if (!s.truth_cause) throw DataError("faulty sample without a truth cause");
    return *s.truth_cause;
  }
  return s.x.size();
}

/// Raw features with absent landmark measures replaced by 0.
inline std::vector<double> zero_filled(const Sample& s) {
  std::vector<double> out = s.x;
  for (std::size_t l = 0; l < s.present.size(); ++l)
    if (!s.present[l])
      for (std::size_t k = 0; k < kKindCount; ++k) out[l * kKindCount + k] = 0.0;
  return out;
}

namespace detail {

struct TreeBuilder {
  const std::vector<double>& X;  // n x m, row-major
  const std::vector<std::int32_t>& y;
  std::size_t m;
  std::size_t classes;
  std::size_t max_depth;
  std::size_t mtry;
  Rng& rng;

  DecisionTree tree;
  std::vector<std::size_t> idx;
  std::vector<std::uint32_t> counts;
  std::vector<std::pair<double, std::int32_t>> column;
  std::vector<std::size_t> feature_pool;

  double at(std::size_t row, std::size_t j) const { return X[row * m + j]; }

  void make_leaf(std::size_t node, std::size_t lo, std::size_t hi) {
    std::fill(counts.begin(), counts.end(), 0u);
    for (std::size_t i = lo; i < hi; ++i) ++counts[static_cast<std::size_t>(y[idx[i]])];
    auto& n = tree.nodes[node];
    n.feature = -1;
    n.histogram.clear();
    std::uint32_t best = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (!counts[c]) continue;
      n.histogram.emplace_back(static_cast<std::int32_t>(c), counts[c]);
      if (counts[c] > best) {
        best = counts[c];
        n.vote = static_cast<std::int32_t>(c);
      }
    }
  }

  void grow(std::size_t node, std::size_t lo, std::size_t hi, std::size_t depth) {
    const std::size_t n = hi - lo;
    bool pure = true;
    for (std::size_t i = lo + 1; i < hi && pure; ++i) pure = y[idx[i]] == y[idx[lo]];
    if (pure || depth >= max_depth || n < 2) {
      make_leaf(node, lo, hi);
      return;
    }

    // Class counts of the whole node.
    std::vector<std::uint32_t> total(classes, 0u);
    for (std::size_t i = lo; i < hi; ++i) ++total[static_cast<std::size_t>(y[idx[i]])];
    double total_sq = 0;
    for (auto c : total) total_sq += static_cast<double>(c) * c;
    const double parent_score = total_sq / static_cast<double>(n);

    // Partial Fisher-Yates draw of mtry distinct features.
    std::iota(feature_pool.begin(), feature_pool.end(), 0);
    for (std::size_t i = 0; i < mtry; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, m - 1);
      std::swap(feature_pool[i], feature_pool[pick(rng)]);
    }

    // Maximizing sum_c L_c^2 / n_L + sum_c R_c^2 / n_R minimizes weighted Gini.
    double best_score = parent_score + 1e-12;
    std::int32_t best_feature = -1;
    double best_threshold = 0;
    std::vector<std::uint32_t> left(classes);
    for (std::size_t t = 0; t < mtry; ++t) {
      const std::size_t j = feature_pool[t];
      column.clear();
      for (std::size_t i = lo; i < hi; ++i) column.emplace_back(at(idx[i], j), y[idx[i]]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      std::fill(left.begin(), left.end(), 0u);
      double lsq = 0, rsq = total_sq;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        auto c = static_cast<std::size_t>(column[i].second);
        double lc = left[c], rc = total[c] - left[c];
        lsq += 2 * lc + 1;
        rsq -= 2 * rc - 1;
        ++left[c];
        if (column[i].first == column[i + 1].first) continue;
        double nl = static_cast<double>(i + 1), nr = static_cast<double>(n - i - 1);
        double score = lsq / nl + rsq / nr;
        if (score > best_score) {
          best_score = score;
          best_feature = static_cast<std::int32_t>(j);
          best_threshold = 0.5 * (column[i].first + column[i + 1].first);
          if (best_threshold == column[i + 1].first) best_threshold = column[i].first;
        }
      }
    }
    if (best_feature < 0) {
      make_leaf(node, lo, hi);
      return;
    }

    auto mid_it = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi),
                                 [&](std::size_t r) { return at(r, static_cast<std::size_t>(best_feature)) <= best_threshold; });
    const auto mid = static_cast<std::size_t>(mid_it - idx.begin());
    auto left_id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    tree.nodes[node].feature = best_feature;
    tree.nodes[node].threshold = best_threshold;
    tree.nodes[node].left = left_id;
    tree.nodes[node].right = left_id + 1;
    grow(static_cast<std::size_t>(left_id), lo, mid, depth + 1);
    grow(static_cast<std::size_t>(left_id + 1), mid, hi, depth + 1);
  }
};

}  // namespace detail

/// Grows the forest on labeled samples (faulty: cause feature, nominal:
/// unknown). Samples must share one feature width.
inline ForestModel train_forest(std::span<const Sample> samples, const ForestParams& params) {
  params.validate();
  if (samples.empty()) throw DataError("cannot train a forest on an empty dataset");
  const std::size_t m = samples.front().x.size();
  std::vector<double> X;
  X.reserve(samples.size() * m);
  std::vector<std::int32_t> y;
  for (const auto& s : samples) {
    if (s.x.size() != m) throw DataError("forest samples differ in feature width");
    auto row = zero_filled(s);
    X.insert(X.end(), row.begin(), row.end());
    y.push_back(static_cast<std::int32_t>(forest_label(s)));
  }

  ForestModel model;
  model.params = params;
  model.features = m;
  std::size_t mtry = params.features_per_split
                         ? params.features_per_split
                         : static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(m))));
  mtry = std::clamp<std::size_t>(mtry, 1, m);
  const std::size_t n = samples.size();
  for (std::size_t t = 0; t < params.trees; ++t) {
    auto rng = derive_rng(params.seed, {stream::kTree, t});
    detail::TreeBuilder b{X, y, m, m + 1, params.max_depth, mtry, rng, {}, {}, std::vector<std::uint32_t>(m + 1), {},
                          std::vector<std::size_t>(m)};
    b.idx.resize(n);
    if (params.bootstrap) {
      auto brng = derive_rng(params.seed, {stream::kBootstrap, t});
      std::uniform_int_distribution<std::size_t> draw(0, n - 1);
      for (auto& i : b.idx) i = draw(brng);
    } else {
      std::iota(b.idx.begin(), b.idx.end(), 0);
    }
    b.column.reserve(n);
    b.tree.nodes.emplace_back();
    b.grow(0, 0, n, 0);
    model.trees.push_back(std::move(b.tree));
  }
  return model;
}

/// Raw vote shares over the m + 1 classes.
inline std::vector<double> forest_votes(const ForestModel& f, const Sample& s) {
  if (s.x.size() != f.features) throw SchemaMismatch("sample width differs from the forest's feature count");
  auto x = zero_filled(s);
  std::vector<double> votes(f.features + 1, 0.0);
  for (const auto& t : f.trees) votes[static_cast<std::size_t>(t.vote(x))] += 1.0;
  for (auto& v : votes) v /= static_cast<double>(f.trees.size());
  return votes;
}

/// Class with the most votes (lowest index on ties), unknown included.
inline std::size_t forest_classify(const ForestModel& f, const Sample& s) {
  auto v = forest_votes(f, s);
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Scores over the m causes: vote shares with the unknown share u added as
/// u / m to each cause.
inline std::vector<double> forest_predict(const ForestModel& f, const Sample& s) {
  auto v = forest_votes(f, s);
  const double share = v.back() / static_cast<double>(f.features);
  v.pop_back();
  for (auto& x : v) x += share;
  return v;
}

inline json to_json(const ForestModel& f) {
  json j;
  j["params"] = {{"trees", f.params.trees},
                 {"max_depth", f.params.max_depth},
                 {"features_per_split", f.params.features_per_split},
                 {"bootstrap", f.params.bootstrap},
                 {"seed", f.params.seed}};
  j["features"] = f.features;
  json trees = json::array();
  for (const auto& t : f.trees) {
    // Flat columns keep the document compact.
    std::vector<std::int32_t> feature, left, right, vote;
    std::vector<double> threshold;
    json hist = json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      vote.push_back(n.vote);
      json h = json::array();
      for (auto [c, k] : n.histogram) h.push_back({c, k});
      hist.push_back(std::move(h));
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"vote", vote},
                     {"histogram", hist}});
  }
  j["trees"] = std::move(trees);
  return j;
}

inline ForestModel forest_from_json(const json& j) {
  ForestModel f;
  const auto& p = j.at("params");
  f.params.trees = p.at("trees").get<std::size_t>();
  f.params.max_depth = p.at("max_depth").get<std::size_t>();
  f.params.features_per_split = p.at("features_per_split").get<std::size_t>();
  f.params.bootstrap = p.at("bootstrap").get<bool>();
  f.params.seed = p.at("seed").get<std::uint64_t>();
  f.features = j.at("features").get<std::size_t>();
  for (const auto& t : j.at("trees")) {
    auto feature = t.at("feature").get<std::vector<std::int32_t>>();
    auto threshold = t.at("threshold").get<std::vector<double>>();
    auto left = t.at("left").get<std::vector<std::int32_t>>();
    auto right = t.at("right").get<std::vector<std::int32_t>>();
    auto vote = t.at("vote").get<std::vector<std::int32_t>>();
    const auto& hist = t.at("histogram");
    const std::size_t n = feature.size();
    if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || vote.size() != n || hist.size() != n)
      throw DataError("malformed tree in forest document");
    DecisionTree tree;
    tree.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& node = tree.nodes[i];
      node.feature = feature[i];
      node.threshold = threshold[i];
      node.left = left[i];
      node.right = right[i];
      node.vote = vote[i];
      for (const auto& h : hist[i]) node.histogram.emplace_back(h.at(0).get<std::int32_t>(), h.at(1).get<std::uint32_t>());
      bool leaf = node.feature < 0;
      if (leaf && (node.vote < 0 || static_cast<std::size_t>(node.vote) > f.features))
        throw DataError("forest leaf votes outside the class range");
      if (!leaf && (static_cast<std::size_t>(node.feature) >= f.features || node.left <= static_cast<std::int32_t>(i) ||
                    node.right <= static_cast<std::int32_t>(i) || static_cast<std::size_t>(node.left) >= n ||
                    static_cast<std::size_t>(node.right) >= n))
        throw DataError("forest node references are out of range");
    }
    f.trees.push_back(std::move(tree));
  }
  if (f.trees.empty()) throw DataError("forest document has no trees");
  return f;
}

}  // namespace diagnet
