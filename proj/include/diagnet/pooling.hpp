#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "diagnet/error.hpp"

namespace diagnet {

enum class PoolKind : std::uint8_t { Min, Max, Mean, Variance, Percentile };

/// One commutative reduction over the per-landmark filter responses.
struct PoolOp {
  PoolKind kind = PoolKind::Mean;
  double q = 0;  // percentile in (0, 1), only for Percentile

  std::string name() const {
    switch (kind) {
      case PoolKind::Min: return "min";
      case PoolKind::Max: return "max";
      case PoolKind::Mean: return "mean";
      case PoolKind::Variance: return "variance";
      case PoolKind::Percentile: {
        char buf[16];
        std::snprintf(buf, sizeof buf, "p%g", q * 100.0);
        return buf;
      }
    }
    return "?";
  }

  static PoolOp parse(const std::string& s) {
    if (s == "min") return {PoolKind::Min};
    if (s == "max") return {PoolKind::Max};
    if (s == "mean") return {PoolKind::Mean};
    if (s == "variance") return {PoolKind::Variance};
    if (s.size() > 1 && s[0] == 'p') {
      double pct = std::stod(s.substr(1));
      if (!(pct > 0 && pct < 100)) throw DataError("percentile pool out of range: " + s);
      return {PoolKind::Percentile, pct / 100.0};
    }
    throw DataError("unknown pool '" + s + "'");
  }

  friend bool operator==(const PoolOp&, const PoolOp&) = default;
};

using PoolSet = std::vector<PoolOp>;

/// min, max, mean, variance and the nine deciles.
inline PoolSet default_pools() {
  PoolSet p{{PoolKind::Min}, {PoolKind::Max}, {PoolKind::Mean}, {PoolKind::Variance}};
  for (int d = 1; d <= 9; ++d) p.push_back({PoolKind::Percentile, d / 10.0});
  return p;
}

// All reductions read their input in ascending order. Sorting first fixes the
// floating-point association order, so the result does not depend on the
// order in which landmarks were supplied.

inline double sorted_mean(std::span<const double> s) {
  double acc = 0;
  for (double v : s) acc += v;
  return acc / static_cast<double>(s.size());
}

inline double reduce_sorted(const PoolOp& op, std::span<const double> s) {
  if (s.empty()) throw ContractViolation("pooling undefined over zero landmarks");
  const std::size_t n = s.size();
  switch (op.kind) {
    case PoolKind::Min: return s.front();
    case PoolKind::Max: return s.back();
    case PoolKind::Mean: return sorted_mean(s);
    case PoolKind::Variance: {
      double mu = sorted_mean(s);
      double acc = 0;
      for (double v : s) acc += (v - mu) * (v - mu);
      return acc / static_cast<double>(n);  // population variance, 0 for one value
    }
    case PoolKind::Percentile: {
      // linear interpolation between order statistics
      double pos = op.q * static_cast<double>(n - 1);
      auto lo = static_cast<std::size_t>(std::floor(pos));
      std::size_t hi = lo + 1 < n ? lo + 1 : n - 1;
      double frac = pos - static_cast<double>(lo);
      return s[lo] + frac * (s[hi] - s[lo]);
    }
  }
  return 0;
}

/// Adds upstream gradient `g` times d(op)/d(s_i) into grad[i].
inline void reduce_sorted_backward(const PoolOp& op, std::span<const double> s, double g, std::span<double> grad) {
  const std::size_t n = s.size();
  switch (op.kind) {
    case PoolKind::Min:
      grad[0] += g;
      break;
    case PoolKind::Max:
      grad[n - 1] += g;
      break;
    case PoolKind::Mean:
      for (auto& v : grad) v += g / static_cast<double>(n);
      break;
    case PoolKind::Variance: {
      double mu = sorted_mean(s);
      for (std::size_t i = 0; i < n; ++i) grad[i] += g * 2.0 * (s[i] - mu) / static_cast<double>(n);
      break;
    }
    case PoolKind::Percentile: {
      double pos = op.q * static_cast<double>(n - 1);
      auto lo = static_cast<std::size_t>(std::floor(pos));
      std::size_t hi = lo + 1 < n ? lo + 1 : n - 1;
      double frac = pos - static_cast<double>(lo);
      grad[lo] += g * (1.0 - frac);
      grad[hi] += g * frac;
      break;
    }
  }
}

}  // namespace diagnet
