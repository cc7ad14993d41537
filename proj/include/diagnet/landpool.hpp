#pragma once

// Coarse fault-family classifier. Every present landmark's k measures go
// through one shared linear kernel (F = K x + b), the f responses are reduced
// across landmarks by each pool in the PoolSet, and a ReLU perceptron over
// [pooled, local features] produces softmax probabilities over the families.
// The network therefore accepts any number of landmarks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diagnet/pooling.hpp"
#include "diagnet/rng.hpp"
#include "diagnet/schema.hpp"

namespace diagnet {

/// z-score statistics shared by all landmarks of one measure kind, plus one
/// set per local feature. Sharing per kind lets unseen landmarks reuse them.
struct Normalizer {
  std::array<double, kKindCount> kind_mean{};
  std::array<double, kKindCount> kind_scale{1, 1, 1, 1, 1};
  std::array<double, kLocalCount> local_mean{};
  std::array<double, kLocalCount> local_scale{1, 1, 1, 1, 1};

  static Normalizer fit(std::span<const Sample> samples) {
    std::array<double, kKindCount> ks{}, kss{}, kn{};
    std::array<double, kLocalCount> ls{}, lss{};
    double ln = 0;
    for (const auto& s : samples) {
      const std::size_t L = s.present.size();
      for (std::size_t l = 0; l < L; ++l) {
        if (!s.present[l]) continue;
        for (std::size_t k = 0; k < kKindCount; ++k) {
          double v = s.x[l * kKindCount + k];
          ks[k] += v;
          kss[k] += v * v;
          kn[k] += 1;
        }
      }
      for (std::size_t k = 0; k < kLocalCount; ++k) {
        double v = s.x[L * kKindCount + k];
        ls[k] += v;
        lss[k] += v * v;
      }
      ln += 1;
    }
    auto finish = [](double sum, double sq, double n, double& mean, double& scale) {
      if (n == 0) return;
      mean = sum / n;
      double var = std::max(0.0, sq / n - mean * mean);
      double sd = std::sqrt(var);
      scale = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
    };
    Normalizer out;
    for (std::size_t k = 0; k < kKindCount; ++k) finish(ks[k], kss[k], kn[k], out.kind_mean[k], out.kind_scale[k]);
    for (std::size_t k = 0; k < kLocalCount; ++k) finish(ls[k], lss[k], ln, out.local_mean[k], out.local_scale[k]);
    return out;
  }

  /// Normalized copy of x; absent landmark features are set to 0.
  std::vector<double> apply(const Sample& s) const {
    const std::size_t L = s.present.size();
    if (s.x.size() != L * kKindCount + kLocalCount) throw DataError("sample length does not match its landmark mask");
    std::vector<double> out(s.x.size(), 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      if (!s.present[l]) continue;
      for (std::size_t k = 0; k < kKindCount; ++k) {
        std::size_t j = l * kKindCount + k;
        out[j] = (s.x[j] - kind_mean[k]) / kind_scale[k];
      }
    }
    for (std::size_t k = 0; k < kLocalCount; ++k) {
      std::size_t j = L * kKindCount + k;
      out[j] = (s.x[j] - local_mean[k]) / local_scale[k];
    }
    return out;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct ModelShape {
  std::size_t filters = 24;
  std::vector<std::size_t> hidden{512, 128};
};

struct CoarseModel {
  PoolSet pools = default_pools();
  Eigen::MatrixXd kernel;        // filters x kinds, shared by all landmarks
  Eigen::VectorXd kernel_bias;   // filters
  std::vector<DenseLayer> head;  // ReLU hidden layers, then the logit layer
  Normalizer norm;
  std::vector<std::string> trained_landmarks;

  std::size_t filters() const { return static_cast<std::size_t>(kernel.rows()); }
  std::size_t pooled_width() const { return pools.size() * filters(); }
  std::size_t head_input_width() const { return pooled_width() + kLocalCount; }
  std::size_t classes() const { return static_cast<std::size_t>(head.back().bias.size()); }
};

/// Uniform fan-in scaled weights (limit sqrt(6 / fan_in)), zero biases. With
/// `zero_output` the logit layer starts at zero, giving uniform predictions.
inline CoarseModel init_model(const ModelShape& shape, PoolSet pools, std::uint64_t seed, bool zero_output = true,
                              std::size_t classes = kFamilyCount) {
  if (shape.filters == 0) throw ContractViolation("model needs at least one filter");
  if (pools.empty()) throw ContractViolation("model needs at least one pool");
  auto rng = derive_rng(seed, {stream::kInit});
  auto uniform = [&rng](Eigen::MatrixXd& m, double fan_in) {
    double limit = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
  };
  CoarseModel m;
  m.pools = std::move(pools);
  m.kernel.resize(static_cast<Eigen::Index>(shape.filters), kKindCount);
  uniform(m.kernel, kKindCount);
  m.kernel_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.filters));
  std::size_t in = m.head_input_width();
  std::vector<std::size_t> widths = shape.hidden;
  widths.push_back(classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    DenseLayer layer;
    layer.weight.resize(static_cast<Eigen::Index>(widths[i]), static_cast<Eigen::Index>(in));
    layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(widths[i]));
    if (i + 1 == widths.size() && zero_output) {
      layer.weight.setZero();
    } else {
      uniform(layer.weight, static_cast<double>(in));
    }
    m.head.push_back(std::move(layer));
    in = widths[i];
  }
  return m;
}

// --- LandPooling -------------------------------------------------------------

/// Intermediate values of one LandPooling evaluation, kept for backprop.
struct PoolTrace {
  std::vector<std::size_t> landmarks;  // present landmark indices, ascending
  std::size_t n = 0;                   // landmarks.size()
  std::vector<double> responses;       // n x filters, F[landmark][filter]
  std::vector<double> sorted;          // filters x n, ascending per filter
  std::vector<std::uint32_t> order;    // filters x n, index into `landmarks`
};

inline void land_pool_forward(const Eigen::MatrixXd& kernel, const Eigen::VectorXd& bias, const PoolSet& pools,
                              std::span<const double> x, std::span<const std::uint8_t> present, PoolTrace& tr,
                              std::span<double> out) {
  const std::size_t f = static_cast<std::size_t>(kernel.rows());
  const std::size_t k = static_cast<std::size_t>(kernel.cols());
  if (x.size() < present.size() * k) throw ContractViolation("land_pool: input shorter than the landmark mask");
  tr.landmarks.clear();
  for (std::size_t l = 0; l < present.size(); ++l)
    if (present[l]) tr.landmarks.push_back(l);
  tr.n = tr.landmarks.size();
  if (tr.n == 0) throw ContractViolation("pooling undefined: no landmark present");
  const std::size_t n = tr.n;

  tr.responses.resize(n * f);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xl = x.data() + tr.landmarks[i] * k;
    for (std::size_t q = 0; q < f; ++q) {
      double acc = bias[static_cast<Eigen::Index>(q)];
      for (std::size_t c = 0; c < k; ++c) acc += kernel(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(c)) * xl[c];
      tr.responses[i * f + q] = acc;
    }
  }

  tr.sorted.resize(f * n);
  tr.order.resize(f * n);
  for (std::size_t q = 0; q < f; ++q) {
    std::uint32_t* ord = tr.order.data() + q * n;
    std::iota(ord, ord + n, 0u);
    std::sort(ord, ord + n, [&](std::uint32_t a, std::uint32_t b) {
      double va = tr.responses[a * f + q], vb = tr.responses[b * f + q];
      return va < vb || (va == vb && a < b);
    });
    for (std::size_t i = 0; i < n; ++i) tr.sorted[q * n + i] = tr.responses[ord[i] * f + q];
  }

  if (out.size() < pools.size() * f) throw ContractViolation("land_pool: output buffer too small");
  for (std::size_t p = 0; p < pools.size(); ++p)
    for (std::size_t q = 0; q < f; ++q)
      out[p * f + q] = reduce_sorted(pools[p], std::span<const double>(tr.sorted.data() + q * n, n));
}

/// Backprop of LandPooling. Accumulates into dkernel/dbias when non-null and
/// into dx (landmark part of the input) when non-empty.
inline void land_pool_backward(const Eigen::MatrixXd& kernel, const PoolSet& pools, std::span<const double> x,
                               const PoolTrace& tr, std::span<const double> dpooled, Eigen::MatrixXd* dkernel,
                               Eigen::VectorXd* dbias, std::span<double> dx) {
  const std::size_t f = static_cast<std::size_t>(kernel.rows());
  const std::size_t k = static_cast<std::size_t>(kernel.cols());
  const std::size_t n = tr.n;
  std::vector<double> dresp(n * f, 0.0);
  std::vector<double> gsorted(n);
  for (std::size_t q = 0; q < f; ++q) {
    std::fill(gsorted.begin(), gsorted.end(), 0.0);
    std::span<const double> s(tr.sorted.data() + q * n, n);
    for (std::size_t p = 0; p < pools.size(); ++p) {
      double g = dpooled[p * f + q];
      if (g != 0.0) reduce_sorted_backward(pools[p], s, g, gsorted);
    }
    for (std::size_t i = 0; i < n; ++i) dresp[tr.order[q * n + i] * f + q] += gsorted[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = tr.landmarks[i] * k;
    for (std::size_t q = 0; q < f; ++q) {
      double g = dresp[i * f + q];
      if (g == 0.0) continue;
      auto qi = static_cast<Eigen::Index>(q);
      if (dbias) (*dbias)[qi] += g;
      for (std::size_t c = 0; c < k; ++c) {
        auto ci = static_cast<Eigen::Index>(c);
        if (dkernel) (*dkernel)(qi, ci) += g * x[base + c];
        if (!dx.empty()) dx[base + c] += g * kernel(qi, ci);
      }
    }
  }
}

/// Pooled vector of length |pools| * filters, laid out pool-major.
inline std::vector<double> land_pool(std::span<const double> x, std::span<const std::uint8_t> present,
                                     const Eigen::MatrixXd& kernel, const Eigen::VectorXd& bias, const PoolSet& pools) {
  PoolTrace tr;
  std::vector<double> out(pools.size() * static_cast<std::size_t>(kernel.rows()));
  land_pool_forward(kernel, bias, pools, x, present, tr, out);
  return out;
}

// --- fully-connected head ----------------------------------------------------

struct HeadTrace {
  std::vector<Eigen::MatrixXd> act;  // act[0] is the input, act[i] feeds layer i
  std::vector<Eigen::MatrixXd> pre;  // pre-activation of layer i
  Eigen::MatrixXd probs;             // classes x batch
};

inline void softmax_columns(const Eigen::MatrixXd& logits, Eigen::MatrixXd& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    double mx = logits.col(c).maxCoeff();
    double sum = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      probs(r, c) = std::exp(logits(r, c) - mx);
      sum += probs(r, c);
    }
    probs.col(c) /= sum;
  }
}

inline void head_forward(const std::vector<DenseLayer>& head, Eigen::MatrixXd input, HeadTrace& tr) {
  tr.act.resize(head.size());
  tr.pre.resize(head.size());
  tr.act[0] = std::move(input);
  for (std::size_t i = 0; i < head.size(); ++i) {
    tr.pre[i].noalias() = head[i].weight * tr.act[i];
    tr.pre[i].colwise() += head[i].bias;
    if (i + 1 < head.size()) tr.act[i + 1] = tr.pre[i].cwiseMax(0.0);
  }
  softmax_columns(tr.pre.back(), tr.probs);
}

/// dlogits: classes x batch. Writes parameter gradients into `grads` (same
/// layout as head) when non-null, and the input gradient when non-null.
inline void head_backward(const std::vector<DenseLayer>& head, const HeadTrace& tr, Eigen::MatrixXd dlogits,
                          std::vector<DenseLayer>* grads, Eigen::MatrixXd* dinput) {
  Eigen::MatrixXd delta = std::move(dlogits);
  for (std::size_t li = head.size(); li-- > 0;) {
    if (grads) {
      (*grads)[li].weight.noalias() = delta * tr.act[li].transpose();
      (*grads)[li].bias = delta.rowwise().sum();
    }
    if (li == 0 && !dinput) break;
    Eigen::MatrixXd up = head[li].weight.transpose() * delta;
    if (li == 0) {
      *dinput = std::move(up);
      break;
    }
    delta = up.cwiseProduct((tr.pre[li - 1].array() > 0.0).cast<double>().matrix());
  }
}

// --- model-level API ---------------------------------------------------------

namespace detail {

inline void check_input(const CoarseModel& m, std::span<const double> xn, std::span<const std::uint8_t> present) {
  if (xn.size() != present.size() * kKindCount + kLocalCount)
    throw ContractViolation("input length does not match the landmark mask");
  for (double v : xn)
    if (std::isnan(v)) throw DataError("NaN in model input");
  if (static_cast<std::size_t>(m.kernel.cols()) != kKindCount) throw ContractViolation("kernel width differs from k");
}

inline void fill_head_input(const CoarseModel& m, std::span<const double> xn, std::span<const std::uint8_t> present,
                            PoolTrace& tr, double* col) {
  const std::size_t pw = m.pooled_width();
  land_pool_forward(m.kernel, m.kernel_bias, m.pools, xn, present, tr, std::span<double>(col, pw));
  const std::size_t local0 = present.size() * kKindCount;
  for (std::size_t k = 0; k < kLocalCount; ++k) col[pw + k] = xn[local0 + k];
}

}  // namespace detail

/// Family probabilities for a normalized input.
inline Eigen::VectorXd coarse_forward(const CoarseModel& m, std::span<const double> xn,
                                      std::span<const std::uint8_t> present) {
  detail::check_input(m, xn, present);
  PoolTrace tr;
  Eigen::MatrixXd in(static_cast<Eigen::Index>(m.head_input_width()), 1);
  detail::fill_head_input(m, xn, present, tr, in.data());
  HeadTrace ht;
  head_forward(m.head, std::move(in), ht);
  return ht.probs.col(0);
}

inline Eigen::VectorXd coarse_forward(const CoarseModel& m, const Sample& raw) {
  auto xn = m.norm.apply(raw);
  return coarse_forward(m, xn, raw.present);
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax_lowest(const Eigen::VectorXd& v, bool* tie = nullptr) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  if (tie) {
    *tie = false;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (static_cast<std::size_t>(i) != best && v[i] == v[static_cast<Eigen::Index>(best)]) *tie = true;
  }
  return best;
}

struct InputGradient {
  std::vector<double> grad;  // dL*/dx over the normalized input, 0 for absent landmarks
  Eigen::VectorXd probs;
  std::size_t target = 0;    // argmax of probs, the ideal label
  bool tie = false;          // argmax was not unique
  double loss = 0;           // L* = -log probs[target]
};

/// Gradient of the ideal-label loss L* = -log y_argmax(y) with respect to
/// every (normalized) input feature, by one backpropagation pass.
inline InputGradient input_gradient(const CoarseModel& m, std::span<const double> xn,
                                    std::span<const std::uint8_t> present) {
  detail::check_input(m, xn, present);
  PoolTrace tr;
  Eigen::MatrixXd in(static_cast<Eigen::Index>(m.head_input_width()), 1);
  detail::fill_head_input(m, xn, present, tr, in.data());
  HeadTrace ht;
  head_forward(m.head, std::move(in), ht);

  InputGradient out;
  out.probs = ht.probs.col(0);
  out.target = argmax_lowest(out.probs, &out.tie);
  out.loss = -std::log(out.probs[static_cast<Eigen::Index>(out.target)]);

  Eigen::MatrixXd dlogits = ht.probs;
  dlogits(static_cast<Eigen::Index>(out.target), 0) -= 1.0;
  Eigen::MatrixXd din;
  head_backward(m.head, ht, std::move(dlogits), nullptr, &din);

  out.grad.assign(xn.size(), 0.0);
  const std::size_t pw = m.pooled_width();
  land_pool_backward(m.kernel, m.pools, xn, tr, std::span<const double>(din.data(), pw), nullptr, nullptr, out.grad);
  const std::size_t local0 = present.size() * kKindCount;
  for (std::size_t k = 0; k < kLocalCount; ++k) out.grad[local0 + k] = din(static_cast<Eigen::Index>(pw + k), 0);
  return out;
}

/// Piecewise-linear regime of the network at an input: per-filter landmark
/// order, hidden ReLU on/off pattern and the output argmax. Within one regime
/// the ideal-label loss is smooth, so finite differences are only meaningful
/// between inputs that share a signature.
inline std::vector<std::uint32_t> activation_signature(const CoarseModel& m, std::span<const double> xn,
                                                       std::span<const std::uint8_t> present) {
  detail::check_input(m, xn, present);
  PoolTrace tr;
  Eigen::MatrixXd in(static_cast<Eigen::Index>(m.head_input_width()), 1);
  detail::fill_head_input(m, xn, present, tr, in.data());
  HeadTrace ht;
  head_forward(m.head, std::move(in), ht);
  std::vector<std::uint32_t> sig(tr.order.begin(), tr.order.end());
  for (std::size_t i = 0; i + 1 < ht.pre.size(); ++i)
    for (Eigen::Index r = 0; r < ht.pre[i].rows(); ++r) sig.push_back(ht.pre[i](r, 0) > 0.0 ? 1u : 0u);
  sig.push_back(static_cast<std::uint32_t>(argmax_lowest(ht.probs.col(0))));
  return sig;
}

// --- training ----------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.05;
  double decay = 0.001;  // lr_t = lr / (1 + decay * step)
  double momentum = 0.9; // Nesterov
  std::size_t batch_size = 256;
  std::size_t max_epochs = 40;
  std::size_t patience = 3;
  double min_delta = 0;  // validation improvements at or below this do not count
  double validation_fraction = 0.1;
  std::uint64_t seed = 7;
  ModelShape shape;

  void validate() const {
    if (!(learning_rate > 0) || decay < 0 || momentum < 0 || momentum >= 1)
      throw ContractViolation("learning rate must be positive, decay >= 0, momentum in [0, 1)");
    if (patience < 1) throw ContractViolation("patience must be at least 1");
    if (!(min_delta >= 0)) throw ContractViolation("min_delta must be non-negative");
    if (batch_size < 1) throw ContractViolation("batch size must be at least 1");
    if (!(validation_fraction > 0 && validation_fraction < 1)) throw ContractViolation("validation fraction in (0, 1)");
  }
};

/// Losses per epoch; index 0 is the model before any update.
struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;    // last epoch that improved by more than min_delta
  std::size_t argmin_epoch = 0;  // plain argmin of val_loss
  bool degenerate = false;  // fewer than two classes in the training data
};

struct TrainResult {
  CoarseModel model;
  TrainHistory history;
};

inline int coarse_label(const Sample& s) {
  if (!s.qoe_faulty) return static_cast<int>(family_index(FaultFamily::Nominal));
  if (!s.truth_family) throw DataError("faulty training sample without a fault family");
  return static_cast<int>(family_index(*s.truth_family));
}

namespace detail {

struct Prepared {
  std::vector<std::vector<double>> xn;
  std::vector<std::vector<std::uint8_t>> present;
  std::vector<int> label;
};

inline Prepared prepare(const CoarseModel& m, std::span<const Sample> samples) {
  Prepared p;
  for (const auto& s : samples) {
    if (s.present_count() == 0) throw DataError("training sample without any present landmark");
    p.xn.push_back(m.norm.apply(s));
    p.present.push_back(s.present);
    p.label.push_back(coarse_label(s));
  }
  return p;
}

struct Grads {
  Eigen::MatrixXd dkernel;
  Eigen::VectorXd dbias;
  std::vector<DenseLayer> dhead;
};

/// Mean cross-entropy over `idx`; fills mean gradients when `g` is non-null.
inline double batch_pass(const CoarseModel& m, const Prepared& data, std::span<const std::size_t> idx, Grads* g,
                         bool kernel_grad) {
  const auto B = static_cast<Eigen::Index>(idx.size());
  const auto D = static_cast<Eigen::Index>(m.head_input_width());
  Eigen::MatrixXd in(D, B);
  std::vector<PoolTrace> traces(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    fill_head_input(m, data.xn[idx[i]], data.present[idx[i]], traces[i], in.col(static_cast<Eigen::Index>(i)).data());
  HeadTrace ht;
  head_forward(m.head, std::move(in), ht);

  double loss = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    double p = ht.probs(data.label[idx[i]], static_cast<Eigen::Index>(i));
    loss -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  loss /= static_cast<double>(B);
  if (!g) return loss;

  Eigen::MatrixXd dlogits = ht.probs;
  for (std::size_t i = 0; i < idx.size(); ++i) dlogits(data.label[idx[i]], static_cast<Eigen::Index>(i)) -= 1.0;
  dlogits /= static_cast<double>(B);
  g->dhead.resize(m.head.size());
  Eigen::MatrixXd din;
  head_backward(m.head, ht, std::move(dlogits), &g->dhead, kernel_grad ? &din : nullptr);
  if (kernel_grad) {
    g->dkernel = Eigen::MatrixXd::Zero(m.kernel.rows(), m.kernel.cols());
    g->dbias = Eigen::VectorXd::Zero(m.kernel_bias.size());
    const std::size_t pw = m.pooled_width();
    for (std::size_t i = 0; i < idx.size(); ++i)
      land_pool_backward(m.kernel, m.pools, data.xn[idx[i]], traces[i],
                         std::span<const double>(din.col(static_cast<Eigen::Index>(i)).data(), pw), &g->dkernel,
                         &g->dbias, {});
  }
  return loss;
}

inline double mean_loss(const CoarseModel& m, const Prepared& data, std::span<const std::size_t> idx) {
  constexpr std::size_t kChunk = 1024;
  double total = 0;
  for (std::size_t s = 0; s < idx.size(); s += kChunk) {
    auto part = idx.subspan(s, std::min(kChunk, idx.size() - s));
    total += batch_pass(m, data, part, nullptr, false) * static_cast<double>(part.size());
  }
  return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
}

template <class P>
void nesterov_step(P& param, P& vel, const P& grad, double lr, double mu) {
  vel = mu * vel - lr * grad;
  param += mu * vel - lr * grad;
}

/// Mini-batch SGD with Nesterov momentum and per-step decay; keeps the
/// snapshot with the lowest validation loss and stops after `patience`
/// epochs without improvement.
inline TrainResult fit(CoarseModel model, std::span<const Sample> samples, const TrainConfig& cfg, bool freeze_kernel) {
  cfg.validate();
  if (samples.empty()) throw DataError("cannot train on an empty dataset");
  auto data = prepare(model, samples);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  auto vrng = derive_rng(cfg.seed, {stream::kValidation});
  std::shuffle(order.begin(), order.end(), vrng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(order.size())));
  if (order.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
  else n_val = 0;
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> tr(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  if (val.empty()) val = tr;

  TrainResult res;
  {
    std::vector<bool> seen(model.classes(), false);
    std::size_t distinct = 0;
    for (auto i : tr)
      if (!seen[static_cast<std::size_t>(data.label[i])]) {
        seen[static_cast<std::size_t>(data.label[i])] = true;
        ++distinct;
      }
    res.history.degenerate = distinct < 2;
  }

  res.history.train_loss.push_back(mean_loss(model, data, tr));
  res.history.val_loss.push_back(mean_loss(model, data, val));
  res.model = model;
  double best = res.history.val_loss[0];

  Eigen::MatrixXd vk = Eigen::MatrixXd::Zero(model.kernel.rows(), model.kernel.cols());
  Eigen::VectorXd vb = Eigen::VectorXd::Zero(model.kernel_bias.size());
  std::vector<DenseLayer> vh;
  for (const auto& l : model.head)
    vh.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});

  std::size_t step = 0;
  Grads g;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto srng = derive_rng(cfg.seed, {stream::kShuffle, epoch});
    std::shuffle(tr.begin(), tr.end(), srng);
    double running = 0;
    for (std::size_t s = 0; s < tr.size(); s += cfg.batch_size) {
      std::span<const std::size_t> batch(tr.data() + s, std::min(cfg.batch_size, tr.size() - s));
      running += batch_pass(model, data, batch, &g, !freeze_kernel) * static_cast<double>(batch.size());
      double lr = cfg.learning_rate / (1.0 + cfg.decay * static_cast<double>(step));
      for (std::size_t li = 0; li < model.head.size(); ++li) {
        nesterov_step(model.head[li].weight, vh[li].weight, g.dhead[li].weight, lr, cfg.momentum);
        nesterov_step(model.head[li].bias, vh[li].bias, g.dhead[li].bias, lr, cfg.momentum);
      }
      if (!freeze_kernel) {
        nesterov_step(model.kernel, vk, g.dkernel, lr, cfg.momentum);
        nesterov_step(model.kernel_bias, vb, g.dbias, lr, cfg.momentum);
      }
      ++step;
    }
    res.history.train_loss.push_back(running / static_cast<double>(tr.size()));
    double v = mean_loss(model, data, val);
    res.history.val_loss.push_back(v);
    if (v < res.history.val_loss[res.history.argmin_epoch]) res.history.argmin_epoch = epoch;
    if (v < best - cfg.min_delta) {
      best = v;
      res.history.best_epoch = epoch;
      res.model = model;
    } else if (epoch - res.history.best_epoch >= cfg.patience) {
      break;
    }
  }
  return res;
}

}  // namespace detail

/// Trains a fresh model. Samples must already be restricted to the known
/// landmarks; normalization statistics come from these samples.
inline TrainResult train(const FeatureSchema& schema, std::span<const Sample> samples, const TrainConfig& cfg,
                         const PoolSet& pools = default_pools()) {
  if (samples.empty()) throw DataError("cannot train on an empty dataset");
  CoarseModel m = init_model(cfg.shape, pools, cfg.seed);
  m.norm = Normalizer::fit(samples);
  std::vector<std::uint8_t> known(schema.landmark_count(), 0);
  for (const auto& s : samples) {
    if (s.present.size() != known.size()) throw SchemaMismatch("training sample does not match the schema");
    for (std::size_t l = 0; l < known.size(); ++l) known[l] |= s.present[l];
  }
  for (std::size_t l = 0; l < known.size(); ++l)
    if (known[l]) m.trained_landmarks.push_back(schema.landmark_ids()[l]);
  return detail::fit(std::move(m), samples, cfg, false);
}

/// Specializes a trained model: the kernel and its bias are frozen and only
/// the fully-connected head is optimized.
inline TrainResult transfer(const CoarseModel& general, std::span<const Sample> samples, const TrainConfig& cfg) {
  return detail::fit(general, samples, cfg, true);
}

}  // namespace diagnet
