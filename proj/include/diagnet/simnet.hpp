#pragma once

// Deterministic stand-in for a multi-cloud deployment with injected faults:
// clients in regions probe one landmark per region and load mock-up services
// whose page-load time decides the QoE flag.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "diagnet/dataset.hpp"
#include "diagnet/rng.hpp"
#include "diagnet/schema.hpp"

namespace diagnet::sim {

struct Region {
  std::string id;
  double lat = 0;  // degrees
  double lon = 0;  // degrees
  int clients = 3;
};

enum class ServiceShape : std::uint8_t { Single, ScriptFar, ScriptCdn, ImageLocal, ImageFar, ImageCdn };
inline constexpr std::array<std::string_view, 6> kShapeNames = {
    "single", "script.far", "script.cdn", "image.local", "image.far", "image.cdn"};

inline ServiceShape parse_shape(std::string_view s) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == s) return static_cast<ServiceShape>(i);
  throw DataError("unknown service shape '" + std::string(s) + "'");
}

struct Service {
  std::string name;
  std::size_t host = 0;  // region index
  ServiceShape shape = ServiceShape::Single;
};

/// Regions with coordinates, one landmark per region, and hosted services.
struct Topology {
  std::vector<Region> regions;
  std::vector<Service> services;
  std::size_t far_region = 0;  // dependency host of the *.far services

  void validate() const {
    if (regions.empty()) throw DataError("topology has no regions");
    for (const auto& s : services)
      if (s.host >= regions.size()) throw DataError("service '" + s.name + "' references a missing region");
    if (far_region >= regions.size()) throw DataError("far dependency region missing");
    for (std::size_t i = 0; i < regions.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (regions[i].id == regions[j].id) throw DataError("duplicate region '" + regions[i].id + "'");
  }

  std::size_t region_index(std::string_view id) const {
    for (std::size_t i = 0; i < regions.size(); ++i)
      if (regions[i].id == id) return i;
    throw DataError("unknown region '" + std::string(id) + "'");
  }

  /// Great-circle distance in km.
  double distance_km(std::size_t a, std::size_t b) const {
    if (a == b) return 0.0;
    constexpr double kEarthRadius = 6371.0;
    constexpr double kDeg = std::numbers::pi / 180.0;
    const auto& p = regions[a];
    const auto& q = regions[b];
    double dlat = (q.lat - p.lat) * kDeg;
    double dlon = (q.lon - p.lon) * kDeg;
    double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
               std::cos(p.lat * kDeg) * std::cos(q.lat * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2 * kEarthRadius * std::asin(std::min(1.0, std::sqrt(h)));
  }

  /// Closest region hosting a service (CDN edge for the *.cdn services).
  std::size_t nearest_host_region(std::size_t from) const {
    std::size_t best = from;
    double best_d = -1;
    for (const auto& s : services) {
      double d = distance_km(from, s.host);
      if (best_d < 0 || d < best_d || (d == best_d && s.host < best)) {
        best = s.host;
        best_d = d;
      }
    }
    return best;
  }

  std::vector<std::string> landmark_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : regions) ids.push_back(r.id);
    return ids;
  }

  std::size_t client_count() const {
    std::size_t n = 0;
    for (const auto& r : regions) n += static_cast<std::size_t>(r.clients);
    return n;
  }
};

/// Static per-client attributes.
struct Client {
  std::size_t region = 0;
  double access_km = 0;        // extra distance of the last mile
  double total_memory = 8e9;   // bytes
  double free_memory = 0.5;    // fraction
  double disk_load = 0.1;
  double cpu_load = 0.2;
  double gateway_rtt = 0.002;  // s
};

struct PathModel {
  double base_latency = 0.002;          // s
  double rtt_per_km = 1.5e-5;           // s of round trip per km
  double download_max = 12.5e6;         // B/s at zero distance
  double download_far_fraction = 0.4;   // capacity fraction at kFarKm
  double upload_ratio = 0.5;
  double reorder_base = 0.002;
  double retransmit_base = 0.003;
  double reorder_per_jitter = 0.6;      // reorder ratio per second of jitter
  double mss = 1460;                    // bytes per segment, for loss-limited throughput
  static constexpr double kFarKm = 20000.0;
};

struct NoiseParams {
  bool enabled = true;
  double rtt_sigma = 0.1;        // log-normal, multiplicative
  double bandwidth_sigma = 0.1;
  double ratio_sigma = 0.3;
  double local_sigma = 0.1;
};

struct PageModel {
  double html_bytes = 10e3;
  double script_bytes = 100e3;
  double image_bytes = 5e6;
  double server_time = 0.03;       // s per request
  double init_window = 14600;      // bytes, 10 segments
  double render_fixed = 0.03;      // s, CPU-independent
  double render_cpu_base = 0.001;  // s at unit CPU factor
  double render_cpu_per_mb = 0.04;
};

using Measures = std::array<double, kKindCount>;
using LocalMeasures = std::array<double, kLocalCount>;

struct FaultLocation {
  enum class Kind : std::uint8_t { Region, ClientLocal };
  Kind kind = Kind::Region;
  std::size_t region = 0;  // faulted region, or region whose clients are faulted
};

/// One injected fault. Region faults act on servers (landmark and service
/// hosts) of the region; client-local faults act on the clients of a region.
struct FaultScenario {
  FaultFamily family = FaultFamily::RemoteLatency;
  FaultLocation location;
  double magnitude = 0;

  static bool is_local_family(FaultFamily f) {
    return f == FaultFamily::UplinkLatency || f == FaultFamily::LocalLoad;
  }

  void validate(const Topology& topo) const {
    if (family == FaultFamily::Nominal) throw ContractViolation("a fault scenario cannot be nominal");
    if (location.region >= topo.regions.size()) throw DataError("fault scenario references a missing region");
    bool local = location.kind == FaultLocation::Kind::ClientLocal;
    if (local != is_local_family(family))
      throw DataError(std::string("fault family ") + std::string(to_string(family)) +
                      (local ? " cannot be client-local" : " must be client-local"));
    if (!(magnitude > 0)) throw DataError("fault magnitude must be positive");
  }
};

/// Magnitudes used by the default scenarios.
inline double default_magnitude(FaultFamily f) {
  switch (f) {
    case FaultFamily::DownloadBandwidth: return 1e6;  // 8 Mbit/s in B/s
    case FaultFamily::RemoteLatency: return 0.05;
    case FaultFamily::UplinkLatency: return 0.05;
    case FaultFamily::Jitter: return 0.1;             // upper bound of uniform jitter
    case FaultFamily::Loss: return 0.08;
    case FaultFamily::LocalLoad: return 0.9;          // minimum CPU load under stress
    case FaultFamily::Nominal: break;
  }
  throw ContractViolation("nominal has no fault magnitude");
}

/// A scenario with its per-sample random draw resolved.
struct ActiveFault {
  FaultScenario scenario;
  double realized = 0;  // jitter amplitude, CPU load, or the magnitude itself
};

inline ActiveFault realize(const FaultScenario& sc, Rng& rng) {
  ActiveFault a{sc, sc.magnitude};
  if (sc.family == FaultFamily::Jitter) {
    a.realized = std::uniform_real_distribution<double>(0.0, sc.magnitude)(rng);
  } else if (sc.family == FaultFamily::LocalLoad) {
    a.realized = std::uniform_real_distribution<double>(std::min(sc.magnitude, 1.0), 1.0)(rng);
  }
  return a;
}

/// Whether loading `svc` from client `c` fetches anything from `region`.
inline bool service_touches(const Topology& topo, const Service& svc, const Client& c, std::size_t region) {
  if (svc.host == region) return true;
  switch (svc.shape) {
    case ServiceShape::ScriptFar:
    case ServiceShape::ImageFar:
      return topo.far_region == region;
    case ServiceShape::ScriptCdn:
    case ServiceShape::ImageCdn:
      return topo.nearest_host_region(c.region) == region;
    default:
      return false;
  }
}

inline bool hits_region(const FaultScenario& sc, std::size_t server_region) {
  return sc.location.kind == FaultLocation::Kind::Region && sc.location.region == server_region;
}

inline bool hits_client(const FaultScenario& sc, const Client& c) {
  return sc.location.kind == FaultLocation::Kind::ClientLocal && sc.location.region == c.region;
}

namespace detail {
inline double lognormal(Rng& rng, double sigma, bool enabled) {
  double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  return enabled ? std::exp(sigma * z) : 1.0;
}
}  // namespace detail

inline double path_distance(const Topology& topo, const Client& c, std::size_t region) {
  return topo.distance_km(c.region, region) + c.access_km;
}

inline double nominal_rtt(const PathModel& pm, double dist_km) {
  return pm.base_latency + pm.rtt_per_km * dist_km;
}

inline double nominal_download(const PathModel& pm, double dist_km) {
  double frac = std::min(dist_km, PathModel::kFarKm) / PathModel::kFarKm;
  return pm.download_max * (1.0 - (1.0 - pm.download_far_fraction) * frac);
}

/// Fault-free measures of one (client, landmark) pair. Every output is
/// strictly positive. The generator is always advanced by the same amount.
inline Measures baseline_measures(const Topology& topo, const PathModel& pm, const NoiseParams& noise,
                                  const Client& c, std::size_t landmark, Rng& rng) {
  if (landmark >= topo.regions.size()) throw IndexError("landmark outside topology");
  double dist = path_distance(topo, c, landmark);
  Measures m{};
  double down = nominal_download(pm, dist);
  m[0] = down * detail::lognormal(rng, noise.bandwidth_sigma, noise.enabled);
  m[1] = pm.upload_ratio * down * detail::lognormal(rng, noise.bandwidth_sigma, noise.enabled);
  m[2] = nominal_rtt(pm, dist) * detail::lognormal(rng, noise.rtt_sigma, noise.enabled);
  m[3] = pm.reorder_base * detail::lognormal(rng, noise.ratio_sigma, noise.enabled);
  m[4] = pm.retransmit_base * detail::lognormal(rng, noise.ratio_sigma, noise.enabled);
  return m;
}

inline LocalMeasures baseline_local(const NoiseParams& noise, const Client& c, Rng& rng) {
  LocalMeasures l{};
  l[0] = c.total_memory;
  l[1] = c.total_memory * std::clamp(c.free_memory * detail::lognormal(rng, noise.local_sigma, noise.enabled), 0.01, 1.0);
  l[2] = std::clamp(c.disk_load * detail::lognormal(rng, noise.local_sigma, noise.enabled), 0.001, 1.0);
  l[3] = std::clamp(c.cpu_load * detail::lognormal(rng, noise.local_sigma, noise.enabled), 0.001, 1.0);
  l[4] = c.gateway_rtt * detail::lognormal(rng, noise.rtt_sigma, noise.enabled);
  return l;
}

/// Steady-state TCP throughput under random loss p (Mathis et al.):
/// sqrt(3/2) * MSS / (RTT * sqrt(p)), never above the path capacity.
inline double loss_limited(const PathModel& pm, double bandwidth, double rtt, double p) {
  if (p <= 0) return bandwidth;
  return std::min(bandwidth, std::sqrt(1.5) * pm.mss / (rtt * std::sqrt(p)));
}

/// Perturbs the measures of the (client, landmark) path under a fault.
inline Measures apply_fault(const ActiveFault& f, const PathModel& pm, const Client& c,
                            std::size_t landmark, Measures m) {
  const auto& sc = f.scenario;
  auto& [down, up, rtt, reorder, retransmit] = m;
  switch (sc.family) {
    case FaultFamily::Nominal:
      throw ContractViolation("apply_fault called with a nominal scenario");
    case FaultFamily::RemoteLatency:
      if (hits_region(sc, landmark)) rtt += f.realized;
      break;
    case FaultFamily::UplinkLatency:
      if (hits_client(sc, c)) rtt += f.realized;
      break;
    case FaultFamily::DownloadBandwidth:
      if (hits_region(sc, landmark)) down = std::min(down, f.realized);
      break;
    case FaultFamily::Jitter:
      if (hits_region(sc, landmark)) {
        rtt += f.realized / 2;
        reorder += pm.reorder_per_jitter * f.realized;
      }
      break;
    case FaultFamily::Loss:
      if (hits_region(sc, landmark)) {
        retransmit += f.realized;
        down = loss_limited(pm, down, rtt, f.realized);
        up = loss_limited(pm, up, rtt, f.realized);
      }
      break;
    case FaultFamily::LocalLoad:
      break;
  }
  return m;
}

inline LocalMeasures apply_fault_local(const ActiveFault& f, const Client& c, LocalMeasures l) {
  const auto& sc = f.scenario;
  if (sc.family == FaultFamily::Nominal) throw ContractViolation("apply_fault called with a nominal scenario");
  if (!hits_client(sc, c)) return l;
  if (sc.family == FaultFamily::UplinkLatency) l[4] += f.realized;
  if (sc.family == FaultFamily::LocalLoad) l[3] = std::max(l[3], f.realized);
  return l;
}

/// Noise-free state of a client-to-region path, used by the page-load model.
struct PathState {
  double rtt = 0;
  double bandwidth = 0;
  double loss = 0;
};

inline PathState path_state(const Topology& topo, const PathModel& pm, const Client& c, std::size_t region,
                            std::span<const ActiveFault> faults) {
  double dist = path_distance(topo, c, region);
  PathState p{nominal_rtt(pm, dist), nominal_download(pm, dist), 0.0};
  for (const auto& f : faults) {
    const auto& sc = f.scenario;
    switch (sc.family) {
      case FaultFamily::RemoteLatency:
        if (hits_region(sc, region)) p.rtt += f.realized;
        break;
      case FaultFamily::UplinkLatency:
        if (hits_client(sc, c)) p.rtt += f.realized;
        break;
      case FaultFamily::DownloadBandwidth:
        if (hits_region(sc, region)) p.bandwidth = std::min(p.bandwidth, f.realized);
        break;
      case FaultFamily::Jitter:
        if (hits_region(sc, region)) p.rtt += f.realized / 2;
        break;
      case FaultFamily::Loss:
        if (hits_region(sc, region)) p.loss += f.realized;
        break;
      default:
        break;
    }
  }
  p.bandwidth = loss_limited(pm, p.bandwidth, p.rtt, p.loss);
  return p;
}

/// Slow-start then bandwidth-limited transfer. Lossy paths pay one extra
/// round trip per round with probability `loss`.
inline double transfer_time(double bytes, const PathState& p, double init_window) {
  double t = 0;
  double cwnd = init_window;
  double remaining = bytes;
  const double bdp = p.bandwidth * p.rtt;
  while (remaining > 0) {
    if (cwnd >= bdp) {
      t += remaining / p.bandwidth;
      break;
    }
    double sent = std::min(cwnd, remaining);
    t += p.rtt * (1.0 + p.loss);
    remaining -= sent;
    cwnd *= 2;
  }
  return t;
}

inline double fetch_time(double bytes, const PathState& p, const PageModel& page, bool new_connection) {
  return (new_connection ? 2 * p.rtt : 0.0) + page.server_time + transfer_time(bytes, p, page.init_window);
}

struct QoeResult {
  bool faulty = false;
  double load_time = 0;      // s, under the active faults
  double baseline_time = 0;  // s, same client and service without faults
};

namespace detail {

struct PageTimes {
  double page = 0;
  std::vector<double> resources;
};

inline PageTimes page_times(const Topology& topo, const PathModel& pm, const PageModel& page,
                            const Service& svc, const Client& c, std::span<const ActiveFault> faults) {
  PageTimes out;
  auto html_path = path_state(topo, pm, c, svc.host, faults);
  double html = fetch_time(page.html_bytes, html_path, page, true);
  out.resources.push_back(html);

  double dep = 0;
  double dep_bytes = 0;
  auto dependency = [&](double bytes, std::size_t region) {
    dep_bytes = bytes;
    dep = fetch_time(bytes, path_state(topo, pm, c, region, faults), page, true);
  };
  switch (svc.shape) {
    case ServiceShape::Single:
      break;
    case ServiceShape::ScriptFar:
      dependency(page.script_bytes, topo.far_region);
      break;
    case ServiceShape::ScriptCdn:
      dependency(page.script_bytes, topo.nearest_host_region(c.region));
      break;
    case ServiceShape::ImageLocal:
      dep_bytes = page.image_bytes;
      dep = page.server_time + transfer_time(page.image_bytes, html_path, page.init_window);
      break;
    case ServiceShape::ImageFar:
      dependency(page.image_bytes, topo.far_region);
      break;
    case ServiceShape::ImageCdn:
      dependency(page.image_bytes, topo.nearest_host_region(c.region));
      break;
  }
  if (dep_bytes > 0) out.resources.push_back(dep);

  double load = c.cpu_load;
  for (const auto& f : faults)
    if (f.scenario.family == FaultFamily::LocalLoad && hits_client(f.scenario, c)) load = std::max(load, f.realized);
  double cpu_factor = 1.0 / (1.0 - std::min(load, 0.95));
  double mb = (page.html_bytes + dep_bytes) / 1e6;
  double render = page.render_fixed + (page.render_cpu_base + page.render_cpu_per_mb * mb) * cpu_factor;
  out.page = html + dep + render;
  return out;
}

}  // namespace detail

/// Page-load model of one service for one client. Faulty when the full page
/// or any single resource takes more than (1 + delta) times its fault-free time.
inline QoeResult qoe_label(const Topology& topo, const PathModel& pm, const PageModel& page, double delta,
                           const Service& svc, const Client& c, std::span<const ActiveFault> faults) {
  auto base = detail::page_times(topo, pm, page, svc, c, {});
  auto cur = detail::page_times(topo, pm, page, svc, c, faults);
  QoeResult r{false, cur.page, base.page};
  if (cur.page > (1 + delta) * base.page) r.faulty = true;
  for (std::size_t i = 0; i < base.resources.size(); ++i)
    if (cur.resources[i] > (1 + delta) * base.resources[i]) r.faulty = true;
  return r;
}

/// Feature index labeling a scenario's root cause.
inline std::size_t cause_feature(const FeatureSchema& schema, const FaultScenario& sc) {
  switch (sc.family) {
    case FaultFamily::RemoteLatency: return schema.feature_index(sc.location.region, MeasureKind::Rtt);
    case FaultFamily::DownloadBandwidth: return schema.feature_index(sc.location.region, MeasureKind::Download);
    case FaultFamily::Jitter: return schema.feature_index(sc.location.region, MeasureKind::ReorderRatio);
    case FaultFamily::Loss: return schema.feature_index(sc.location.region, MeasureKind::RetransmitRatio);
    case FaultFamily::UplinkLatency: return schema.local_index(LocalFeature::GatewayRtt);
    case FaultFamily::LocalLoad: return schema.local_index(LocalFeature::CpuLoad);
    case FaultFamily::Nominal: break;
  }
  throw ContractViolation("nominal scenario has no cause");
}

struct SimConfig {
  Topology topology;
  std::vector<FaultScenario> scenarios;
  int samples_per_scenario_client = 50;
  int nominal_count = 12000;
  NoiseParams noise;
  PathModel path;
  PageModel page;
  double qoe_delta = 0.5;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  // Scenario draws pick a service whose resources cross the faulted region.
  bool reachable_services_only = true;

  void validate() const {
    topology.validate();
    for (const auto& s : scenarios) s.validate(topology);
    if (samples_per_scenario_client < 0 || nominal_count < 0) throw DataError("sample counts must be non-negative");
    if (!(train_fraction > 0 && train_fraction < 1)) throw DataError("train_fraction must lie in (0, 1)");
    if (!(qoe_delta > 0)) throw DataError("qoe_delta must be positive");
  }
};

/// Ten regions of the reference deployment; services in GRAV, SEAT and SING,
/// each hosting the six service shapes; far dependencies live in BEAU.
inline Topology default_topology(int clients_per_region = 3) {
  Topology t;
  t.regions = {
      {"EAST", 37.4, -79.0, clients_per_region},  {"WEST2", 47.2, -119.9, clients_per_region},
      {"ASIA", 1.28, 103.85, clients_per_region}, {"BEAU", 45.3, -73.9, clients_per_region},
      {"GRAV", 51.0, 2.1, clients_per_region},    {"SING", 1.35, 103.8, clients_per_region},
      {"PARI", 48.86, 2.35, clients_per_region},  {"AMST", 52.37, 4.9, clients_per_region},
      {"MIAM", 25.8, -80.2, clients_per_region},  {"SEAT", 47.6, -122.3, clients_per_region},
  };
  t.far_region = t.region_index("BEAU");
  for (std::string_view host : {"GRAV", "SEAT", "SING"})
    for (std::size_t shape = 0; shape < kShapeNames.size(); ++shape)
      t.services.push_back({std::string(kShapeNames[shape]) + "@" + std::string(host), t.region_index(host),
                            static_cast<ServiceShape>(shape)});
  return t;
}

/// Six families at four locations each.
inline std::vector<FaultScenario> default_scenarios(const Topology& t) {
  std::vector<FaultScenario> out;
  const std::array<std::string_view, 4> places = {"GRAV", "SEAT", "SING", "BEAU"};
  for (auto fam : {FaultFamily::DownloadBandwidth, FaultFamily::RemoteLatency, FaultFamily::Jitter, FaultFamily::Loss,
                   FaultFamily::UplinkLatency, FaultFamily::LocalLoad}) {
    auto kind = FaultScenario::is_local_family(fam) ? FaultLocation::Kind::ClientLocal : FaultLocation::Kind::Region;
    for (auto p : places) out.push_back({fam, {kind, t.region_index(p)}, default_magnitude(fam)});
  }
  return out;
}

inline SimConfig default_sim_config() {
  SimConfig c;
  c.topology = default_topology();
  c.scenarios = default_scenarios(c.topology);
  return c;
}

// --- JSON -----------------------------------------------------------------

inline json to_json(const SimConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["samples_per_scenario_client"] = c.samples_per_scenario_client;
  j["nominal_count"] = c.nominal_count;
  j["qoe_delta"] = c.qoe_delta;
  j["train_fraction"] = c.train_fraction;
  j["reachable_services_only"] = c.reachable_services_only;
  auto& regions = j["topology"]["regions"];
  regions = json::array();
  for (const auto& r : c.topology.regions)
    regions.push_back({{"id", r.id}, {"lat", r.lat}, {"lon", r.lon}, {"clients", r.clients}});
  auto& services = j["topology"]["services"];
  services = json::array();
  for (const auto& s : c.topology.services)
    services.push_back({{"name", s.name},
                        {"host", c.topology.regions[s.host].id},
                        {"shape", kShapeNames[static_cast<std::size_t>(s.shape)]}});
  j["topology"]["far_region"] = c.topology.regions[c.topology.far_region].id;
  j["scenarios"] = json::array();
  for (const auto& s : c.scenarios)
    j["scenarios"].push_back(
        {{"family", to_string(s.family)},
         {"location", s.location.kind == FaultLocation::Kind::Region ? "region" : "client"},
         {"region", c.topology.regions[s.location.region].id},
         {"magnitude", s.magnitude}});
  j["noise"] = {{"enabled", c.noise.enabled},
                {"rtt_sigma", c.noise.rtt_sigma},
                {"bandwidth_sigma", c.noise.bandwidth_sigma},
                {"ratio_sigma", c.noise.ratio_sigma},
                {"local_sigma", c.noise.local_sigma}};
  j["path"] = {{"base_latency", c.path.base_latency},
               {"rtt_per_km", c.path.rtt_per_km},
               {"download_max", c.path.download_max},
               {"download_far_fraction", c.path.download_far_fraction},
               {"upload_ratio", c.path.upload_ratio},
               {"reorder_base", c.path.reorder_base},
               {"retransmit_base", c.path.retransmit_base},
               {"reorder_per_jitter", c.path.reorder_per_jitter},
               {"mss", c.path.mss}};
  j["page"] = {{"html_bytes", c.page.html_bytes},
               {"script_bytes", c.page.script_bytes},
               {"image_bytes", c.page.image_bytes},
               {"server_time", c.page.server_time},
               {"init_window", c.page.init_window},
               {"render_fixed", c.page.render_fixed},
               {"render_cpu_base", c.page.render_cpu_base},
               {"render_cpu_per_mb", c.page.render_cpu_per_mb}};
  return j;
}

/// Missing keys fall back to the defaults; a missing topology or scenario
/// list means the reference deployment.
inline SimConfig sim_config_from_json(const json& j) {
  try {
    SimConfig c = default_sim_config();
    c.seed = j.value("seed", c.seed);
    c.samples_per_scenario_client = j.value("samples_per_scenario_client", c.samples_per_scenario_client);
    c.nominal_count = j.value("nominal_count", c.nominal_count);
    c.qoe_delta = j.value("qoe_delta", c.qoe_delta);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.reachable_services_only = j.value("reachable_services_only", c.reachable_services_only);
    if (j.contains("topology")) {
      const auto& t = j.at("topology");
      if (t.contains("regions")) {
        c.topology.regions.clear();
        for (const auto& r : t.at("regions"))
          c.topology.regions.push_back(
              {r.at("id").get<std::string>(), r.at("lat").get<double>(), r.at("lon").get<double>(), r.value("clients", 3)});
        c.topology.services.clear();
      }
      if (t.contains("far_region")) {
        c.topology.far_region = c.topology.region_index(t.at("far_region").get<std::string>());
      } else if (t.contains("regions")) {
        c.topology.far_region = 0;
      }
      if (t.contains("services")) {
        c.topology.services.clear();
        for (const auto& s : t.at("services"))
          c.topology.services.push_back({s.at("name").get<std::string>(),
                                         c.topology.region_index(s.at("host").get<std::string>()),
                                         parse_shape(s.at("shape").get<std::string>())});
      }
      if (t.contains("regions") && !j.contains("scenarios")) c.scenarios.clear();
    }
    if (j.contains("scenarios")) {
      c.scenarios.clear();
      for (const auto& s : j.at("scenarios")) {
        FaultScenario sc;
        sc.family = parse_family(s.at("family").get<std::string>());
        auto loc = s.value("location", std::string(FaultScenario::is_local_family(sc.family) ? "client" : "region"));
        if (loc == "region") {
          sc.location.kind = FaultLocation::Kind::Region;
        } else if (loc == "client") {
          sc.location.kind = FaultLocation::Kind::ClientLocal;
        } else {
          throw DataError("bad scenario location '" + loc + "'");
        }
        sc.location.region = c.topology.region_index(s.at("region").get<std::string>());
        sc.magnitude = sc.family == FaultFamily::Nominal ? 0.0 : s.value("magnitude", default_magnitude(sc.family));
        c.scenarios.push_back(sc);
      }
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      c.noise.enabled = n.value("enabled", c.noise.enabled);
      c.noise.rtt_sigma = n.value("rtt_sigma", c.noise.rtt_sigma);
      c.noise.bandwidth_sigma = n.value("bandwidth_sigma", c.noise.bandwidth_sigma);
      c.noise.ratio_sigma = n.value("ratio_sigma", c.noise.ratio_sigma);
      c.noise.local_sigma = n.value("local_sigma", c.noise.local_sigma);
    }
    if (j.contains("path")) {
      const auto& p = j.at("path");
      c.path.base_latency = p.value("base_latency", c.path.base_latency);
      c.path.rtt_per_km = p.value("rtt_per_km", c.path.rtt_per_km);
      c.path.download_max = p.value("download_max", c.path.download_max);
      c.path.download_far_fraction = p.value("download_far_fraction", c.path.download_far_fraction);
      c.path.upload_ratio = p.value("upload_ratio", c.path.upload_ratio);
      c.path.reorder_base = p.value("reorder_base", c.path.reorder_base);
      c.path.retransmit_base = p.value("retransmit_base", c.path.retransmit_base);
      c.path.reorder_per_jitter = p.value("reorder_per_jitter", c.path.reorder_per_jitter);
      c.path.mss = p.value("mss", c.path.mss);
    }
    if (j.contains("page")) {
      const auto& p = j.at("page");
      c.page.html_bytes = p.value("html_bytes", c.page.html_bytes);
      c.page.script_bytes = p.value("script_bytes", c.page.script_bytes);
      c.page.image_bytes = p.value("image_bytes", c.page.image_bytes);
      c.page.server_time = p.value("server_time", c.page.server_time);
      c.page.init_window = p.value("init_window", c.page.init_window);
      c.page.render_fixed = p.value("render_fixed", c.page.render_fixed);
      c.page.render_cpu_base = p.value("render_cpu_base", c.page.render_cpu_base);
      c.page.render_cpu_per_mb = p.value("render_cpu_per_mb", c.page.render_cpu_per_mb);
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid simulation config: ") + e.what());
  }
}

inline std::string config_digest(const SimConfig& c) { return digest_hex(to_json(c).dump()); }

// --- generation -------------------------------------------------------------

inline std::vector<Client> make_clients(const SimConfig& cfg) {
  std::vector<Client> out;
  for (std::size_t r = 0; r < cfg.topology.regions.size(); ++r) {
    for (int i = 0; i < cfg.topology.regions[r].clients; ++i) {
      auto rng = derive_rng(cfg.seed, {stream::kClient, out.size()});
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Client c;
      c.region = r;
      c.access_km = 50.0 + 250.0 * u(rng);
      c.total_memory = std::array<double, 4>{4e9, 8e9, 16e9, 32e9}[rng() % 4];
      c.free_memory = 0.3 + 0.4 * u(rng);
      c.disk_load = 0.05 + 0.2 * u(rng);
      c.cpu_load = 0.1 + 0.3 * u(rng);
      c.gateway_rtt = 0.001 + 0.004 * u(rng);
      out.push_back(c);
    }
  }
  return out;
}

namespace detail {

inline Sample observe(const SimConfig& cfg, const Client& c, int client_region, std::span<const ActiveFault> faults,
                      Rng& rng) {
  const auto& topo = cfg.topology;
  const std::size_t L = topo.regions.size();
  Sample s;
  s.x.resize(L * kKindCount + kLocalCount);
  s.present.assign(L, 1);
  s.client_region = client_region;
  for (std::size_t l = 0; l < L; ++l) {
    auto m = baseline_measures(topo, cfg.path, cfg.noise, c, l, rng);
    for (const auto& f : faults) m = apply_fault(f, cfg.path, c, l, m);
    std::copy(m.begin(), m.end(), s.x.begin() + static_cast<std::ptrdiff_t>(l * kKindCount));
  }
  auto local = baseline_local(cfg.noise, c, rng);
  for (const auto& f : faults) local = apply_fault_local(f, c, local);
  std::copy(local.begin(), local.end(), s.x.begin() + static_cast<std::ptrdiff_t>(L * kKindCount));
  return s;
}

}  // namespace detail

/// Nominal fault-free samples first, then every (scenario, client, repeat)
/// draw. A scenario draw whose QoE is not degraded is kept as a nominal
/// sample. Each sample owns a generator derived from its index, so the output
/// is a pure function of the config.
inline Dataset generate_dataset(const SimConfig& cfg) {
  cfg.validate();
  const bool no_scenarios = cfg.scenarios.empty() || cfg.samples_per_scenario_client == 0;
  if (no_scenarios && cfg.nominal_count == 0) throw DataError("configuration yields an empty dataset");
  const auto& topo = cfg.topology;
  if (topo.services.empty()) throw DataError("topology has no services");
  auto clients = make_clients(cfg);
  if (clients.empty()) throw DataError("topology has no clients");

  Dataset d;
  d.schema = FeatureSchema(topo.landmark_ids());
  d.config_digest = config_digest(cfg);
  d.seed = cfg.seed;
  for (const auto& s : topo.services) d.service_names.push_back(s.name);

  for (int i = 0; i < cfg.nominal_count; ++i) {
    auto rng = derive_rng(cfg.seed, {stream::kNominal, static_cast<std::uint64_t>(i)});
    const auto& c = clients[rng() % clients.size()];
    auto svc = static_cast<int>(rng() % topo.services.size());
    auto s = detail::observe(cfg, c, static_cast<int>(c.region), {}, rng);
    s.service_id = svc;
    d.samples.push_back(std::move(s));
  }

  for (std::size_t sc = 0; sc < cfg.scenarios.size(); ++sc) {
    const auto& scenario = cfg.scenarios[sc];
    const std::size_t cause = cause_feature(d.schema, scenario);
    std::vector<std::vector<std::size_t>> reachable(clients.size());
    if (cfg.reachable_services_only && scenario.location.kind == FaultLocation::Kind::Region)
      for (std::size_t ci = 0; ci < clients.size(); ++ci)
        for (std::size_t v = 0; v < topo.services.size(); ++v)
          if (service_touches(topo, topo.services[v], clients[ci], scenario.location.region)) reachable[ci].push_back(v);
    for (std::size_t ci = 0; ci < clients.size(); ++ci) {
      for (int rep = 0; rep < cfg.samples_per_scenario_client; ++rep) {
        auto rng = derive_rng(cfg.seed, {stream::kScenario, sc, ci, static_cast<std::uint64_t>(rep)});
        const auto& c = clients[ci];
        auto svc = reachable[ci].empty() ? rng() % topo.services.size() : reachable[ci][rng() % reachable[ci].size()];
        std::array<ActiveFault, 1> faults{realize(scenario, rng)};
        auto s = detail::observe(cfg, c, static_cast<int>(c.region), faults, rng);
        s.service_id = static_cast<int>(svc);
        s.scenario = static_cast<int>(sc);
        auto q = qoe_label(topo, cfg.path, cfg.page, cfg.qoe_delta, topo.services[svc], c, faults);
        if (q.faulty) {
          s.qoe_faulty = true;
          s.truth_cause = cause;
          s.truth_family = scenario.family;
        }
        d.samples.push_back(std::move(s));
      }
    }
  }

  // Stratified split by (scenario, qoe flag).
  d.split.assign(d.samples.size(), Split::Test);
  std::vector<std::vector<std::size_t>> strata(2 * (cfg.scenarios.size() + 1));
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    strata[2 * static_cast<std::size_t>(s.scenario + 1) + (s.qoe_faulty ? 1 : 0)].push_back(i);
  }
  for (std::size_t k = 0; k < strata.size(); ++k) {
    auto& idx = strata[k];
    auto rng = derive_rng(cfg.seed, {stream::kSplit, k});
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_train; ++i) d.split[idx[i]] = Split::Train;
  }
  return d;
}

}  // namespace diagnet::sim
