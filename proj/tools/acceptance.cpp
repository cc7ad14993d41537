// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "diagnet/container.hpp"
#include "diagnet/eval.hpp"
#include "diagnet/inference.hpp"

namespace {

using namespace diagnet;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

int report_line(int id, const char* title, const Outcome& o) {
  std::printf("criterion %d %-28s %s  %s\n", id, title, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
  return o.pass ? 0 : 1;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Default-shape model with every layer and bias randomised.
CoarseModel random_model(std::uint64_t seed) {
  CoarseModel m = init_model(ModelShape{}, default_pools(), seed, false);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::normal_distribution<double> n(0.0, 0.2);
  for (Eigen::Index i = 0; i < m.kernel_bias.size(); ++i) m.kernel_bias[i] = n(rng);
  for (auto& l : m.head)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = n(rng);
  return m;
}

std::vector<double> random_input(std::mt19937_64& rng, std::size_t L) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(L * kKindCount + kLocalCount);
  for (auto& v : x) v = n(rng);
  return x;
}

// --- 1: gradient oracle ------------------------------------------------------

Outcome gradient_oracle() {
  auto t0 = Clock::now();
  Outcome o;
  const double h = 1e-3;
  const std::size_t L = 10;
  std::mt19937_64 rng(424242);
  std::size_t checked = 0, skipped = 0, worst_pair = 0, failures = 0;
  double worst = 0;
  for (std::size_t pair = 0; pair < 100; ++pair) {
    auto m = random_model(1000 + pair);
    auto x = random_input(rng, L);
    std::vector<std::uint8_t> present(L, 1);
    for (std::size_t l = 0; l < L; ++l) present[l] = (rng() % 5) != 0;
    present[pair % L] = 1;
    auto g = input_gradient(m, x, present);
    auto sig = activation_signature(m, x, present);
    auto loss = [&](const std::vector<double>& v) {
      auto y = coarse_forward(m, v, present);
      return -std::log(y[static_cast<Eigen::Index>(g.target)]);
    };
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (j < L * kKindCount && !present[j / kKindCount]) {
        if (g.grad[j] != 0.0) ++failures;
        continue;
      }
      auto xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      // A kink inside [x - h, x + h] makes the central difference meaningless.
      if (activation_signature(m, xp, present) != sig || activation_signature(m, xm, present) != sig) {
        ++skipped;
        continue;
      }
      double fd = (loss(xp) - loss(xm)) / (2 * h);
      double err = std::abs(g.grad[j] - fd) / (1 + std::abs(g.grad[j]));
      if (err > worst) {
        worst = err;
        worst_pair = pair;
      }
      if (err > 1e-4) ++failures;
      ++checked;
    }
  }
  double secs = seconds_since(t0);
  o.detail = "pairs=100 checked=" + std::to_string(checked) + " skipped_at_kinks=" + std::to_string(skipped) +
             fmt(" worst_rel=%.2e", worst) + " (pair " + std::to_string(worst_pair) + ")" + fmt(" time=%.1fs", secs);
  o.require(failures == 0, std::to_string(failures) + " coordinates outside tolerance");
  o.require(checked > 9 * skipped, "too many coordinates skipped");
  o.require(secs < 60, "runtime over one minute");
  return o;
}

// --- 2: permutation invariance -------------------------------------------------

Outcome permutation_invariance() {
  Outcome o;
  auto m = random_model(77);
  const std::size_t L = 10;
  std::mt19937_64 rng(99);
  auto x = random_input(rng, L);
  std::vector<std::uint8_t> present = {1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
  auto ref = coarse_forward(m, x, present);
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> xp(x.size());
    std::vector<std::uint8_t> pp(L);
    for (std::size_t l = 0; l < L; ++l) {
      pp[l] = present[perm[l]];
      for (std::size_t k = 0; k < kKindCount; ++k) xp[l * kKindCount + k] = x[perm[l] * kKindCount + k];
    }
    for (std::size_t k = 0; k < kLocalCount; ++k) xp[L * kKindCount + k] = x[L * kKindCount + k];
    auto y = coarse_forward(m, xp, pp);
    if (y.size() != ref.size() || std::memcmp(y.data(), ref.data(), sizeof(double) * static_cast<std::size_t>(y.size())))
      ++mismatches;
  }
  o.detail = "permutations=1000 mismatches=" + std::to_string(mismatches);
  o.require(mismatches == 0, "output changed under permutation");
  return o;
}

// --- 3: score weighting --------------------------------------------------------

Outcome tune_suite() {
  Outcome o;
  std::mt19937_64 rng(31337);
  std::gamma_distribution<double> gd(0.5, 1.0);
  double worst = 0;
  std::size_t negatives = 0;
  for (int t = 0; t < 10000; ++t) {
    std::size_t m = 2 + rng() % 60, c = 2 + rng() % 7;
    std::vector<double> gamma(m), y(c);
    std::vector<std::size_t> cls(m);
    double gs = 0, ys = 0;
    for (auto& v : gamma) gs += (v = gd(rng) + 1e-12);
    for (auto& v : gamma) v /= gs;
    for (auto& v : y) ys += (v = gd(rng) + 1e-12);
    for (auto& v : y) v /= ys;
    for (auto& k : cls) k = rng() % c;
    std::optional<std::size_t> nominal;
    if (t % 2) nominal = rng() % c;
    auto r = tune(gamma, y, cls, nominal);
    double sum = 0;
    for (double v : r.scores) {
      sum += v;
      if (v < 0) ++negatives;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  o.require(negatives == 0, "negative tuned score");
  o.require(worst <= 1e-9, fmt("sum off by %.2e", worst));

  std::vector<double> g{0.2, 0.3, 0.5}, y{0.6, 0.4};
  std::vector<std::size_t> cls{0, 1, 1};
  auto w = tune(g, y, cls, std::nullopt);
  bool exact = w.scores == std::vector<double>{0.6, 0.15, 0.25};
  o.require(exact, "worked example not exact");

  std::vector<std::size_t> none{1, 1, 1}, all{0, 0, 0};
  auto s0 = tune(g, y, none, std::nullopt);
  std::vector<double> one{0.0, 1.0, 0.0};
  auto s1 = tune(one, y, std::vector<std::size_t>{1, 0, 1}, std::nullopt);
  auto s1b = tune(g, y, all, std::nullopt);
  o.require(s0.extreme && s0.scores == g, "s = 0 changed the input");
  o.require(s1.extreme && s1.scores == one && s1b.extreme && s1b.scores == g, "s = 1 changed the input");
  o.detail = "random=10000" + fmt(" worst_sum_err=%.1e", worst) + " worked_example=" + (exact ? "exact" : "inexact");
  return o;
}

// --- 4: ensemble ---------------------------------------------------------------

Outcome ensemble_suite() {
  Outcome o;
  std::mt19937_64 rng(2718);
  std::gamma_distribution<double> gd(0.7, 1.0);
  auto simplex = [&](std::size_t m) {
    std::vector<double> v(m);
    double s = 0;
    for (auto& x : v) s += (x = gd(rng) + 1e-12);
    for (auto& x : v) x /= s;
    return v;
  };
  double worst = 0;
  std::size_t zero_bad = 0, one_bad = 0;
  for (int t = 0; t < 10000; ++t) {
    std::size_t m = 2 + rng() % 60;
    auto g = simplex(m), a = simplex(m);
    std::vector<std::uint8_t> u(m);
    for (auto& v : u) v = rng() % 3 == 0;
    auto r = ensemble(g, a, u);
    worst = std::max(worst, std::abs(std::accumulate(r.scores.begin(), r.scores.end(), 0.0) - 1.0));

    std::vector<std::uint8_t> empty(m, 0);
    if (ensemble(g, a, empty).scores != a) ++zero_bad;
    // Attention fully on U.
    auto gu = g;
    for (std::size_t j = 0; j < m; ++j) gu[j] = j < m / 2 ? 0.0 : gu[j];
    double s = std::accumulate(gu.begin(), gu.end(), 0.0);
    for (auto& v : gu) v /= s;
    std::vector<std::uint8_t> top(m);
    for (std::size_t j = 0; j < m; ++j) top[j] = j >= m / 2;
    auto r1 = ensemble(gu, a, top);
    if (r1.w_unknown != 1.0 || r1.scores != gu) ++one_bad;
  }
  auto ex = ensemble(std::vector<double>{0.4, 0.1, 0.5}, std::vector<double>{0, 0.5, 0.5},
                     std::vector<std::uint8_t>{1, 0, 0});
  bool example = std::abs(ex.w_unknown - 0.4) < 1e-15 && std::abs(ex.scores[0] - 0.16) < 1e-15 &&
                 std::abs(ex.scores[1] - 0.34) < 1e-15 && std::abs(ex.scores[2] - 0.5) < 1e-15;
  o.require(zero_bad == 0, "w_U = 0 did not return alpha exactly");
  o.require(one_bad == 0, "w_U = 1 did not return gamma' exactly");
  o.require(worst <= 1e-9, fmt("sum off by %.2e", worst));
  o.require(example, "worked example mismatch");
  o.detail = "random=10000" + fmt(" worst_sum_err=%.1e", worst);
  return o;
}

// --- 5 and 6: benchmark and transfer -------------------------------------------

Outcome benchmark_trend(const Report& r, double secs, std::size_t features) {
  Outcome o;
  const double chance = 1.0 / static_cast<double>(features);
  const auto& fk = r.recall("forest", "known", 1);
  const auto& fn = r.recall("forest", "new", 1);
  const auto& dk = r.recall("diagnet", "known", 1);
  const auto& dc = r.recall("diagnet", "combined", 1);
  o.require(fk.recall >= 0.90, fmt("(a) forest known R@1 %.3f < 0.90", fk.recall));
  o.require(fn.ci.lo <= chance && chance <= fn.ci.hi, "(a) forest new R@1 CI misses 1/m");
  for (std::size_t k : {1, 3, 5, 10}) {
    double d = r.recall("diagnet", "new", k).recall, f = r.recall("forest", "new", k).recall;
    o.require(d >= f, "(b) DiagNet below forest on new @" + std::to_string(k));
  }
  o.require(std::abs(dk.recall - fk.recall) <= 0.05, "(c) known R@1 gap over 5 points");
  o.require(dc.recall >= 0.60, fmt("(d) combined R@1 %.3f < 0.60", dc.recall));
  o.require(secs < 600, "runtime over 10 minutes");
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "forest known@1=%.3f new@1=%.3f CI=[%.3f,%.3f] 1/m=%.4f | diagnet known@1=%.3f new@1=%.3f "
                "combined@1=%.3f (reference 0.739) | time=%.0fs",
                fk.recall, fn.recall, fn.ci.lo, fn.ci.hi, chance, dk.recall, r.recall("diagnet", "new", 1).recall,
                dc.recall, secs);
  o.detail = buf;
  return o;
}

Outcome transfer_trend(const Report& r) {
  Outcome o;
  std::string epochs, argmins;
  bool frozen = true;
  for (const auto& t : r.transfer) {
    epochs += (epochs.empty() ? "" : ",") + std::to_string(t.best_epoch);
    argmins += (argmins.empty() ? "" : ",") + std::to_string(t.argmin_epoch);
    frozen = frozen && t.kernel_unchanged;
  }
  o.require(r.transfer.size() >= 4, "fewer than four specialised services");
  o.require(r.transfer_median_best <= 5, fmt("median best epoch %.1f > 5", r.transfer_median_best));
  o.require(frozen, "a transfer modified K or b");
  o.detail = "services=" + std::to_string(r.transfer.size()) + " best_epochs=[" + epochs + "]" +
             fmt(" median=%.1f", r.transfer_median_best) + " argmin_epochs=[" + argmins + "]" + " kernels_frozen=" + (frozen ? "yes" : "no");
  return o;
}

// --- 7: naive Bayes ------------------------------------------------------------

// Every cause class k places feature k in [10, 11]; all other values lie in
// [0, 1]. Each class gets `per_class` samples so no estimator falls back.
std::vector<Sample> disjoint_support(const FeatureSchema& schema, std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t m = schema.feature_count();
  std::vector<Sample> out;
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      Sample s;
      s.x.resize(m);
      for (auto& v : s.x) v = u(rng);
      s.x[k] += 10.0;
      s.present.assign(schema.landmark_count(), 1);
      s.qoe_faulty = true;
      s.truth_cause = k;
      s.truth_family = schema.family_of(k);
      out.push_back(std::move(s));
    }
  return out;
}

Outcome bayes_contract() {
  Outcome o;
  FeatureSchema schema({"A", "B", "C"});
  const std::size_t m = schema.feature_count();
  BayesParams raw;
  raw.normalize = false;
  auto train = disjoint_support(schema, 12, 5);
  auto model = fit_bayes(schema, train, raw);
  auto probe = disjoint_support(schema, 3, 6);
  double lowest = 1;
  for (const auto& s : probe) lowest = std::min(lowest, bayes_predict(model, s)[*s.truth_cause]);
  o.require(lowest > 0.99, fmt("correct-class score %.4f <= 0.99", lowest));

  // Relabel classes by a permutation; posteriors must move with the labels.
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(8);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabeled = train;
    for (auto& s : relabeled) {
      s.truth_cause = perm[*s.truth_cause];
      s.truth_family = schema.family_of(*s.truth_cause);
    }
    auto pm = fit_bayes(schema, relabeled, raw);
    for (const auto& s : probe) {
      auto a = bayes_predict(model, s), b = bayes_predict(pm, s);
      for (std::size_t k = 0; k < m; ++k) worst = std::max(worst, std::abs(a[k] - b[perm[k]]));
    }
  }
  o.require(worst <= 1e-12, fmt("label permutation changed scores by %.2e", worst));
  o.detail = fmt("min_correct_score=%.6f", lowest) + fmt(" permutation_max_diff=%.1e", worst);
  return o;
}

// --- 8: determinism ------------------------------------------------------------

Protocol small_protocol() {
  Protocol q;
  q.sim.topology = sim::default_topology(1);
  q.sim.scenarios = sim::default_scenarios(q.sim.topology);
  q.sim.samples_per_scenario_client = 6;
  q.sim.nominal_count = 600;
  q.train.max_epochs = 4;
  q.train.shape.hidden = {64, 32};
  q.forest.trees = 15;
  q.forest.max_depth = 8;
  q.bayes.generic_cap = 500;
  q.bootstrap = 100;
  q.transfer.max_epochs = 3;
  q.diversity.enabled = true;
  q.diversity.sizes = {2, 5};
  q.diversity.max_subsets = 2;
  q.diversity.max_epochs = 2;
  return q;
}

void produce_artifacts(const Protocol& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto data = sim::generate_dataset(p.sim);
  write_dataset(data, (dir / "data.csv").string());
  auto reread = read_dataset((dir / "data.csv").string());
  auto split = split_hidden(reread, p.hidden);
  auto models = train_models(reread.schema, split.train, p, p.train);
  write_container(make_container(models.diagnet.model, reread.schema, reread.config_digest),
                  (dir / "diagnet.json").string());
  write_container(make_container(models.forest, reread.schema, reread.config_digest), (dir / "forest.json").string());
  write_container(make_container(models.bayes, reread.config_digest), (dir / "bayes.json").string());
  write_report(run_benchmark(p, &reread), dir / "bench");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const std::filesystem::path& work) {
  Outcome o;
  auto p = small_protocol();
  std::filesystem::remove_all(work);
  produce_artifacts(p, work / "run1");
  produce_artifacts(p, work / "run2");
  std::size_t files = 0, differing = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(work / "run1")) {
    if (!e.is_regular_file()) continue;
    auto rel = std::filesystem::relative(e.path(), work / "run1");
    ++files;
    if (slurp(e.path()) != slurp(work / "run2" / rel)) {
      ++differing;
      o.require(false, rel.string() + " differs");
    }
  }
  o.require(files >= 10, "too few artifacts produced");
  std::filesystem::remove_all(work);
  o.detail = "artifacts=" + std::to_string(files) + " differing=" + std::to_string(differing);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiagNet acceptance criteria"};
  std::set<int> only;
  std::string work = (std::filesystem::temp_directory_path() / "diagnet_acceptance").string();
  std::string report_dir;
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  app.add_option("--work", work, "Scratch directory for the determinism run");
  app.add_option("--report-dir", report_dir, "Also write the benchmark report here");
  CLI11_PARSE(app, argc, argv);
  auto want = [&](int id) { return only.empty() || only.count(id); };

  int failed = 0;
  try {
    if (want(1)) failed += report_line(1, "gradient oracle", gradient_oracle());
    if (want(2)) failed += report_line(2, "permutation invariance", permutation_invariance());
    if (want(3)) failed += report_line(3, "score weighting", tune_suite());
    if (want(4)) failed += report_line(4, "ensemble averaging", ensemble_suite());
    if (want(5) || want(6)) {
      Protocol p;
      auto t0 = Clock::now();
      auto data = sim::generate_dataset(p.sim);
      auto rep = run_benchmark(p, &data);
      double secs = seconds_since(t0);
      if (!report_dir.empty()) write_report(rep, report_dir);
      if (want(5)) failed += report_line(5, "benchmark trend", benchmark_trend(rep, secs, data.schema.feature_count()));
      if (want(6)) failed += report_line(6, "transfer trend", transfer_trend(rep));
    }
    if (want(7)) failed += report_line(7, "naive Bayes contract", bayes_contract());
    if (want(8)) failed += report_line(8, "determinism", determinism(work));
  } catch (const std::exception& e) {
    std::printf("FAIL: aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%s: %d criteria failed\n", failed ? "FAIL" : "OK", failed);
  return failed ? 1 : 0;
}
