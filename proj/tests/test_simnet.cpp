#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "diagnet/simnet.hpp"

using namespace diagnet;
using namespace diagnet::sim;

namespace {

Client client_in(const Topology& t, std::string_view region, double access_km = 100) {
  Client c;
  c.region = t.region_index(region);
  c.access_km = access_km;
  return c;
}

NoiseParams quiet() {
  NoiseParams n;
  n.enabled = false;
  return n;
}

ActiveFault fault(const Topology& t, FaultFamily f, std::string_view where, double magnitude) {
  auto kind = FaultScenario::is_local_family(f) ? FaultLocation::Kind::ClientLocal : FaultLocation::Kind::Region;
  return {{f, {kind, t.region_index(where)}, magnitude}, magnitude};
}

const Service& service(const Topology& t, std::string_view name) {
  for (const auto& s : t.services)
    if (s.name == name) return s;
  throw std::runtime_error("no such service");
}

// One client in `region`, nobody else.
SimConfig single_client_config(std::string_view region) {
  SimConfig c = default_sim_config();
  for (auto& r : c.topology.regions) r.clients = r.id == region ? 1 : 0;
  c.scenarios.clear();
  c.nominal_count = 0;
  return c;
}

}  // namespace

TEST(Baseline, ZeroDistanceWithoutNoiseIsBaseLatency) {
  auto t = default_topology();
  PathModel pm;
  auto c = client_in(t, "GRAV", 0);
  Rng rng(1);
  auto m = baseline_measures(t, pm, quiet(), c, t.region_index("GRAV"), rng);
  EXPECT_DOUBLE_EQ(m[static_cast<std::size_t>(MeasureKind::Rtt)], pm.base_latency);
  for (double v : m) EXPECT_GT(v, 0);
}

TEST(Baseline, DeterministicUnderSeed) {
  auto t = default_topology();
  auto c = client_in(t, "SEAT");
  Rng a(99), b(99);
  EXPECT_EQ(baseline_measures(t, {}, {}, c, 4, a), baseline_measures(t, {}, {}, c, 4, b));
}

TEST(Baseline, RttGrowsWithDistance) {
  auto t = default_topology();
  PathModel pm;
  const auto rtt = static_cast<std::size_t>(MeasureKind::Rtt);
  Rng rng(0);
  auto near = baseline_measures(t, pm, quiet(), client_in(t, "GRAV", 200), t.region_index("GRAV"), rng);
  auto far = baseline_measures(t, pm, quiet(), client_in(t, "GRAV", 400), t.region_index("GRAV"), rng);
  EXPECT_GT(far[rtt], near[rtt]);
  EXPECT_DOUBLE_EQ(far[rtt], pm.base_latency + pm.rtt_per_km * 400);
}

TEST(ApplyFault, UntraversedPathUnchanged) {
  auto t = default_topology();
  auto c = client_in(t, "EAST");
  Measures m{5e6, 2e6, 0.1, 0.002, 0.003};
  auto f = fault(t, FaultFamily::RemoteLatency, "SING", 0.05);
  EXPECT_EQ(apply_fault(f, {}, c, t.region_index("GRAV"), m), m);
}

TEST(ApplyFault, BandwidthCapClampsDownload) {
  auto t = default_topology();
  auto c = client_in(t, "EAST");
  Measures m{5e6, 2e6, 0.1, 0.002, 0.003};
  auto f = fault(t, FaultFamily::DownloadBandwidth, "GRAV", default_magnitude(FaultFamily::DownloadBandwidth));
  auto out = apply_fault(f, {}, c, t.region_index("GRAV"), m);
  EXPECT_EQ(out[0], 1e6);  // 8 Mbit/s
  EXPECT_EQ(out[2], m[2]);
}

TEST(ApplyFault, CpuStressTouchesOnlyLocalLoad) {
  auto t = default_topology();
  auto c = client_in(t, "PARI");
  Measures m{5e6, 2e6, 0.1, 0.002, 0.003};
  auto f = fault(t, FaultFamily::LocalLoad, "PARI", 0.9);
  f.realized = 0.93;
  for (std::size_t l = 0; l < t.regions.size(); ++l) EXPECT_EQ(apply_fault(f, {}, c, l, m), m);
  LocalMeasures local{8e9, 4e9, 0.1, 0.2, 0.003};
  auto out = apply_fault_local(f, c, local);
  EXPECT_GE(out[static_cast<std::size_t>(LocalFeature::CpuLoad)], 0.9);
  for (auto k : {LocalFeature::TotalMemory, LocalFeature::AvailableMemory, LocalFeature::DiskLoad, LocalFeature::GatewayRtt})
    EXPECT_EQ(out[static_cast<std::size_t>(k)], local[static_cast<std::size_t>(k)]);
}

TEST(ApplyFault, GatewayLatencyShiftsEveryLandmarkRtt) {
  auto t = default_topology();
  auto c = client_in(t, "MIAM");
  Measures m{5e6, 2e6, 0.1, 0.002, 0.003};
  auto f = fault(t, FaultFamily::UplinkLatency, "MIAM", 0.05);
  for (std::size_t l = 0; l < t.regions.size(); ++l) EXPECT_DOUBLE_EQ(apply_fault(f, {}, c, l, m)[2], 0.15);
  LocalMeasures local{8e9, 4e9, 0.1, 0.2, 0.003};
  EXPECT_DOUBLE_EQ(apply_fault_local(f, c, local)[4], 0.053);
}

TEST(ApplyFault, LossRaisesRetransmitAndCutsThroughput) {
  auto t = default_topology();
  PathModel pm;
  auto c = client_in(t, "EAST");
  Measures m{5e6, 2e6, 0.1, 0.002, 0.003};
  auto out = apply_fault(fault(t, FaultFamily::Loss, "GRAV", 0.08), pm, c, t.region_index("GRAV"), m);
  EXPECT_DOUBLE_EQ(out[4], 0.083);
  // Mathis: sqrt(1.5) * 1460 / (0.1 * sqrt(0.08)) ~ 63 kB/s.
  EXPECT_NEAR(out[0], std::sqrt(1.5) * 1460 / (0.1 * std::sqrt(0.08)), 1e-6);
}

TEST(ApplyFault, NominalScenarioIsRejected) {
  auto t = default_topology();
  ActiveFault f;
  f.scenario.family = FaultFamily::Nominal;
  EXPECT_THROW(apply_fault(f, {}, client_in(t, "EAST"), 0, Measures{}), ContractViolation);
}

TEST(Qoe, NoFaultIsNominal) {
  auto t = default_topology();
  for (const auto& s : t.services) EXPECT_FALSE(qoe_label(t, {}, {}, 0.5, s, client_in(t, "AMST"), {}).faulty);
}

TEST(Qoe, BandwidthCapLeavesSmallHtmlPageNominal) {
  auto t = default_topology();
  std::array<ActiveFault, 1> f{fault(t, FaultFamily::DownloadBandwidth, "GRAV", 1e6)};
  EXPECT_FALSE(qoe_label(t, {}, {}, 0.5, service(t, "single@GRAV"), client_in(t, "PARI"), f).faulty);
  EXPECT_TRUE(qoe_label(t, {}, {}, 0.5, service(t, "image.local@GRAV"), client_in(t, "PARI"), f).faulty);
}

TEST(Qoe, LatencyOnFarImageDependencyIsFaulty) {
  auto t = default_topology();
  auto c = client_in(t, "EAST");
  const auto& svc = service(t, "image.far@GRAV");
  std::array<ActiveFault, 1> f{fault(t, FaultFamily::RemoteLatency, "BEAU", 0.05)};
  auto with = qoe_label(t, {}, {}, 0.5, svc, c, f);
  auto without = qoe_label(t, {}, {}, 0.5, svc, c, {});
  EXPECT_TRUE(with.faulty);
  EXPECT_EQ(with.baseline_time, without.load_time);
  EXPECT_GT(with.load_time, without.load_time);
}

TEST(Incidence, ServiceTouchesHostAndDependencies) {
  auto t = default_topology();
  auto c = client_in(t, "PARI");
  EXPECT_TRUE(service_touches(t, service(t, "image.far@SEAT"), c, t.region_index("BEAU")));
  EXPECT_TRUE(service_touches(t, service(t, "image.far@SEAT"), c, t.region_index("SEAT")));
  EXPECT_FALSE(service_touches(t, service(t, "single@SEAT"), c, t.region_index("BEAU")));
  // The CDN edge for a Paris client is Gravelines.
  EXPECT_TRUE(service_touches(t, service(t, "script.cdn@SING"), c, t.region_index("GRAV")));
}

TEST(Generate, SingleScenarioLabelsEverySampleWithItsCause) {
  auto cfg = single_client_config("EAST");
  cfg.samples_per_scenario_client = 10;
  cfg.scenarios.push_back({FaultFamily::RemoteLatency, {FaultLocation::Kind::Region, cfg.topology.region_index("GRAV")}, 2.0});
  auto d = generate_dataset(cfg);
  ASSERT_EQ(d.size(), 10u);
  for (const auto& s : d.samples) {
    EXPECT_TRUE(s.qoe_faulty);
    EXPECT_EQ(*s.truth_cause, d.schema.feature_index(cfg.topology.region_index("GRAV"), MeasureKind::Rtt));
  }
}

TEST(Generate, LocalScenariosPointAtLocalFeatures) {
  auto cfg = single_client_config("EAST");
  cfg.samples_per_scenario_client = 5;
  auto east = cfg.topology.region_index("EAST");
  cfg.scenarios.push_back({FaultFamily::UplinkLatency, {FaultLocation::Kind::ClientLocal, east}, 1.0});
  cfg.scenarios.push_back({FaultFamily::LocalLoad, {FaultLocation::Kind::ClientLocal, east}, 0.99});
  auto d = generate_dataset(cfg);
  for (const auto& s : d.samples) {
    if (!s.qoe_faulty) continue;
    auto want = s.scenario == 0 ? LocalFeature::GatewayRtt : LocalFeature::CpuLoad;
    EXPECT_EQ(*s.truth_cause, d.schema.local_index(want));
  }
}

TEST(Generate, DeterministicBytes) {
  auto cfg = default_sim_config();
  cfg.topology = default_topology(1);
  cfg.scenarios = default_scenarios(cfg.topology);
  cfg.samples_per_scenario_client = 2;
  cfg.nominal_count = 100;
  EXPECT_EQ(serialize_dataset(generate_dataset(cfg)), serialize_dataset(generate_dataset(cfg)));
  auto other = cfg;
  other.seed = 2;
  EXPECT_NE(serialize_dataset(generate_dataset(cfg)), serialize_dataset(generate_dataset(other)));
}

TEST(Generate, NominalCountControlsClassRatio) {
  auto cfg = single_client_config("EAST");
  cfg.samples_per_scenario_client = 30;
  cfg.scenarios.push_back({FaultFamily::RemoteLatency, {FaultLocation::Kind::Region, cfg.topology.region_index("GRAV")}, 2.0});
  cfg.nominal_count = 7 * 30;
  auto d = generate_dataset(cfg);
  std::size_t faulty = 0;
  for (const auto& s : d.samples) faulty += s.qoe_faulty;
  ASSERT_EQ(faulty, 30u);
  EXPECT_DOUBLE_EQ(static_cast<double>(d.size() - faulty) / static_cast<double>(faulty), 7.0);
}

TEST(Generate, EmptyConfigIsRejected) {
  auto cfg = single_client_config("EAST");
  EXPECT_THROW(generate_dataset(cfg), DataError);
}

TEST(Generate, SplitIsStratifiedPerScenario) {
  auto cfg = default_sim_config();
  cfg.topology = default_topology(1);
  cfg.scenarios = default_scenarios(cfg.topology);
  cfg.samples_per_scenario_client = 3;
  cfg.nominal_count = 200;
  auto d = generate_dataset(cfg);
  std::map<int, std::pair<int, int>> counts;  // scenario -> (train, total)
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& c = counts[d.samples[i].scenario];
    c.first += d.split[i] == Split::Train;
    c.second += 1;
  }
  for (const auto& [sc, c] : counts) {
    EXPECT_GT(c.first, 0) << sc;
    EXPECT_LT(c.first, c.second) << sc;
    EXPECT_LE(std::abs(c.first - 0.8 * c.second), 1.0 + 1e-9) << sc;
  }
}

TEST(Generate, NominalSamplesStayInsideNoiseEnvelope) {
  auto cfg = default_sim_config();
  cfg.scenarios.clear();
  cfg.nominal_count = 500;
  auto d = generate_dataset(cfg);
  auto clients = make_clients(cfg);
  const double band = std::exp(6 * std::max({cfg.noise.rtt_sigma, cfg.noise.bandwidth_sigma}));
  for (const auto& s : d.samples) {
    // Access distance is not stored per sample, so bound by the region's clients.
    for (std::size_t l = 0; l < d.schema.landmark_count(); ++l) {
      double rtt = s.x[d.schema.feature_index(l, MeasureKind::Rtt)];
      double lo = 1e300, hi = 0;
      for (const auto& c : clients) {
        if (static_cast<int>(c.region) != s.client_region) continue;
        double r = nominal_rtt(cfg.path, path_distance(cfg.topology, c, l));
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
      EXPECT_GE(rtt, lo / band);
      EXPECT_LE(rtt, hi * band);
    }
  }
}

TEST(Generate, CauseFeatureShiftsUnderItsScenario) {
  auto cfg = default_sim_config();
  cfg.topology = default_topology(1);
  cfg.scenarios = default_scenarios(cfg.topology);
  cfg.samples_per_scenario_client = 10;
  cfg.nominal_count = 1000;
  auto d = generate_dataset(cfg);
  const std::size_t m = d.schema.feature_count();
  std::vector<double> nominal_mean(m, 0.0);
  std::size_t n_nom = 0;
  for (const auto& s : d.samples)
    if (s.scenario < 0) {
      for (std::size_t j = 0; j < m; ++j) nominal_mean[j] += s.x[j];
      ++n_nom;
    }
  for (auto& v : nominal_mean) v /= static_cast<double>(n_nom);
  for (std::size_t sc = 0; sc < cfg.scenarios.size(); ++sc) {
    double sum = 0;
    std::size_t n = 0, cause = 0;
    for (const auto& s : d.samples)
      if (s.scenario == static_cast<int>(sc) && s.qoe_faulty) {
        cause = *s.truth_cause;
        sum += s.x[cause];
        ++n;
      }
    if (n == 0) continue;
    double mean = sum / static_cast<double>(n);
    EXPECT_GT(std::abs(mean - nominal_mean[cause]), 0.05 * std::abs(nominal_mean[cause])) << "scenario " << sc;
  }
}

TEST(Config, JsonRoundTripKeepsDigest) {
  auto cfg = default_sim_config();
  auto back = sim_config_from_json(to_json(cfg));
  EXPECT_EQ(config_digest(back), config_digest(cfg));
  cfg.qoe_delta = 0.4;
  EXPECT_NE(config_digest(back), config_digest(cfg));
}

TEST(Config, InvalidScenarioIsRejected) {
  auto j = to_json(default_sim_config());
  j["scenarios"][0]["magnitude"] = -1;
  EXPECT_THROW(sim_config_from_json(j), DataError);
}
