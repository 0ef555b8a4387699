#ifndef MATS_SIMNET_HPP_
#define MATS_SIMNET_HPP_

// Fluid-flow downlink simulator: N_u UEs, Wi-Fi access points and a single
// LTE base station, advanced in fixed measurement intervals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mats::sim {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  bool operator==(const Vec3&) const = default;
};

inline double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

enum class LinkType { wifi = 0, lte = 1 };
inline constexpr std::size_t kWifi = 0;
inline constexpr std::size_t kLte = 1;

struct SimConfig {
  std::size_t num_users = 4;
  Vec3 enb_location{40, 0, 3};
  std::vector<Vec3> ap_locations{{30, 0, 3}, {50, 0, 3}};
  double min_x = 0, max_x = 80;
  // Initial y is drawn uniformly in [min_y, max_y]; UEs only move along x.
  double min_y = 0, max_y = 0;
  double user_z = 1.5;
  double user_speed = 1.0;      // m/s
  double interval_s = 0.1;      // measurement interval
  std::size_t steps_per_episode = 10000;
  double input_rate_mbps = 6.0;  // per UE
  // Constant fluid input by default. When set, per-interval arrivals are a
  // Poisson number of fixed-size packets with the same mean.
  bool poisson_arrivals = false;
  double packet_size_bits = 12000;  // 1500-byte datagrams
  double wifi_peak_rate = 75.0;     // Mbps
  double lte_cell_rate = 37.0;      // Mbps, 50 resource blocks at 10 MHz
  double pathloss_exponent = 2.0;
  double reference_distance = 10.0;  // m
  double wifi_prop_delay_ms = 1.0;
  double lte_prop_delay_ms = 10.0;
  double dy_max_ms = 1000.0;
  double min_link_rate = 0.1;  // Mbps floor on any PHY rate
  std::uint64_t seed = 0;

  double prop_delay_ms(std::size_t link) const { return link == kWifi ? wifi_prop_delay_ms : lte_prop_delay_ms; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SimConfig: " + m); };
    if (num_users < 1) fail("num_users must be >= 1");
    if (ap_locations.empty()) fail("at least one Wi-Fi access point is required");
    if (!(min_x < max_x)) fail("min_x must be < max_x");
    if (min_y > max_y) fail("min_y must be <= max_y");
    if (!(interval_s > 0)) fail("interval must be > 0");
    if (!(dy_max_ms > 0)) fail("dy_max must be > 0");
    if (!(input_rate_mbps > 0) || !(wifi_peak_rate > 0) || !(lte_cell_rate > 0)) fail("rates must be > 0");
    if (!(min_link_rate > 0)) fail("min_link_rate must be > 0");
    if (!(reference_distance > 0)) fail("reference_distance must be > 0");
    if (poisson_arrivals && !(packet_size_bits > 0)) fail("packet_size_bits must be > 0");
    if (user_speed < 0) fail("user_speed must be >= 0");
    if (steps_per_episode < 1) fail("steps_per_episode must be >= 1");
  }
};

struct UeState {
  Vec3 position;
  int direction = +1;
  std::size_t attached_ap = 0;
  std::array<double, 2> backlog{0.0, 0.0};  // Mbit, indexed by kWifi / kLte
  double sr_wifi = 0.5;
  double sr_lte() const { return 1.0 - sr_wifi; }
};

// Per-link fluid bookkeeping for one interval (Mbit).
struct LinkFlow {
  double arrivals = 0, served = 0, backlog_before = 0, backlog_after = 0, dropped = 0;
  double residual() const { return arrivals - served - (backlog_after - backlog_before) - dropped; }
};

// One UE's measurement for an interval. The first fourteen fields are the
// observation tuple; `flow` is internal accounting.
struct Measurement {
  double lc_lte = 0, lc_wifi = 0;
  double tp_in = 0;
  double tp_out_lte = 0, tp_out_wifi = 0;
  double owd_lte = 0, owd_wifi = 0;
  double owd_max_lte = 0, owd_max_wifi = 0;
  double id_wifi = 0;
  double sr_lte = 0, sr_wifi = 0;
  double x = 0, y = 0;
  std::array<LinkFlow, 2> flow{};

  double dropped_wifi() const { return flow[kWifi].dropped; }
  double dropped_lte() const { return flow[kLte].dropped; }
};

struct SimState {
  SimConfig config;
  std::vector<UeState> ues;
  std::mt19937_64 rng;
  std::uint64_t intervals = 0;
};

inline std::size_t nearest_ap(const SimConfig& config, const Vec3& pos) {
  std::size_t best = 0;
  double best_d = distance(pos, config.ap_locations[0]);
  for (std::size_t k = 1; k < config.ap_locations.size(); ++k) {
    const double d = distance(pos, config.ap_locations[k]);
    if (d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

inline SimState init_episode(const SimConfig& config) {
  config.validate();
  SimState s{config, {}, std::mt19937_64(config.seed), 0};
  std::uniform_real_distribution<double> ux(config.min_x, config.max_x);
  s.ues.resize(config.num_users);
  for (auto& ue : s.ues) ue.position.x = ux(s.rng);
  if (config.max_y > config.min_y) {
    std::uniform_real_distribution<double> uy(config.min_y, config.max_y);
    for (auto& ue : s.ues) ue.position.y = uy(s.rng);
  } else {
    for (auto& ue : s.ues) ue.position.y = config.min_y;
  }
  for (auto& ue : s.ues) {
    ue.position.z = config.user_z;
    ue.direction = +1;
    ue.backlog = {0.0, 0.0};
    ue.sr_wifi = 0.5;
    ue.attached_ap = nearest_ap(config, ue.position);
  }
  return s;
}

// Elastic reflection at the ends of [min_x, max_x].
inline void move_ues(SimState& state, double dt) {
  const auto& c = state.config;
  for (auto& ue : state.ues) {
    double x = ue.position.x + ue.direction * c.user_speed * dt;
    while (x > c.max_x || x < c.min_x) {
      if (x > c.max_x) {
        x = 2 * c.max_x - x;
        ue.direction = -1;
      } else {
        x = 2 * c.min_x - x;
        ue.direction = +1;
      }
    }
    ue.position.x = x;
  }
}

inline double link_capacity(const SimConfig& config, const Vec3& ue_position, const Vec3& node_position,
                            LinkType link) {
  const double peak = link == LinkType::wifi ? config.wifi_peak_rate : config.lte_cell_rate;
  const double dist = distance(ue_position, node_position);
  double rate = peak;
  if (dist > config.reference_distance)
    rate = peak * std::pow(config.reference_distance / dist, config.pathloss_exponent);
  return std::max(rate, config.min_link_rate);
}

// Equal-airtime sharing: a UE attached to a node with k attached UEs gets
// phy_rate / k.
inline std::vector<double> shared_capacity(const std::vector<double>& phy_rates,
                                           const std::vector<std::size_t>& attachment) {
  if (phy_rates.size() != attachment.size()) throw std::invalid_argument("shared_capacity: size mismatch");
  std::vector<double> out(phy_rates.size());
  for (std::size_t i = 0; i < phy_rates.size(); ++i) {
    const auto k = std::count(attachment.begin(), attachment.end(), attachment[i]);
    out[i] = phy_rates[i] / double(k);
  }
  return out;
}

namespace detail {

inline double one_way_delay(const SimConfig& c, std::size_t link, double backlog, double lc) {
  if (lc <= c.min_link_rate) return c.dy_max_ms;
  return std::min(c.prop_delay_ms(link) + 1000.0 * backlog / lc, c.dy_max_ms);
}

inline double draw_arrivals(SimState& s) {
  const auto& c = s.config;
  const double mean_bits = c.input_rate_mbps * c.interval_s;
  if (!c.poisson_arrivals) return mean_bits;
  const double pkt = c.packet_size_bits * 1e-6;
  std::poisson_distribution<long long> pois(mean_bits / pkt);
  return double(pois(s.rng)) * pkt;
}

}  // namespace detail

// Advance one interval with per-UE Wi-Fi split ratios in [0,1]. Order:
// handover, capacities, fluid queues, delays, then UE movement.
inline std::vector<Measurement> advance_interval(SimState& state, const std::vector<double>& splits) {
  const auto& c = state.config;
  const std::size_t n = state.ues.size();
  if (splits.size() != n) throw std::invalid_argument("advance_interval: need one split per UE");
  for (double sr : splits)
    if (!(sr >= 0.0 && sr <= 1.0)) throw std::invalid_argument("advance_interval: split out of [0,1]");

  for (auto& ue : state.ues) ue.attached_ap = nearest_ap(c, ue.position);

  std::vector<double> wifi_phy(n), lte_phy(n);
  std::vector<std::size_t> wifi_att(n), lte_att(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ue = state.ues[i];
    wifi_att[i] = ue.attached_ap;
    wifi_phy[i] = link_capacity(c, ue.position, c.ap_locations[ue.attached_ap], LinkType::wifi);
    lte_phy[i] = link_capacity(c, ue.position, c.enb_location, LinkType::lte);
  }
  const auto lc_wifi = shared_capacity(wifi_phy, wifi_att);
  const auto lc_lte = shared_capacity(lte_phy, lte_att);

  std::vector<Measurement> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& ue = state.ues[i];
    auto& m = out[i];
    ue.sr_wifi = splits[i];
    const double total = detail::draw_arrivals(state);
    const std::array<double, 2> lc{lc_wifi[i], lc_lte[i]};
    const std::array<double, 2> share{ue.sr_wifi, ue.sr_lte()};
    std::array<double, 2> owd{}, owd_max{}, tp_out{};
    for (std::size_t k : {kWifi, kLte}) {
      LinkFlow& f = m.flow[k];
      f.backlog_before = ue.backlog[k];
      f.arrivals = share[k] * total;
      const double avail = f.backlog_before + f.arrivals;
      f.served = std::min(avail, lc[k] * c.interval_s);
      const double remaining = avail - f.served;
      const double cap = lc[k] * (c.dy_max_ms / 1000.0);
      f.backlog_after = std::min(remaining, cap);
      f.dropped = remaining - f.backlog_after;
      ue.backlog[k] = f.backlog_after;
      const double owd_start = detail::one_way_delay(c, k, f.backlog_before, lc[k]);
      owd[k] = detail::one_way_delay(c, k, f.backlog_after, lc[k]);
      owd_max[k] = std::max(owd_start, owd[k]);
      tp_out[k] = f.served / c.interval_s;
    }
    m.lc_wifi = lc[kWifi];
    m.lc_lte = lc[kLte];
    m.tp_in = total / c.interval_s;
    m.tp_out_wifi = tp_out[kWifi];
    m.tp_out_lte = tp_out[kLte];
    m.owd_wifi = owd[kWifi];
    m.owd_lte = owd[kLte];
    m.owd_max_wifi = owd_max[kWifi];
    m.owd_max_lte = owd_max[kLte];
    m.id_wifi = double(ue.attached_ap);
    m.sr_wifi = ue.sr_wifi;
    m.sr_lte = ue.sr_lte();
    m.x = ue.position.x;
    m.y = ue.position.y;
  }
  move_ues(state, c.interval_s);
  ++state.intervals;
  return out;
}

// --- JSON configuration --------------------------------------------------------
//
// Accepted keys (all optional):
//   enb_locations          {"x","y","z"}
//   ap_locations           [{"x","y","z"}, ...]
//   num_users              integer
//   user_location_range    {"min_x","max_x","min_y","max_y","z"}
//   steps_per_episode      integer
//   random_seed            integer
//   measurement_interval_ms number
//   min_udp_rate_per_user_mbps, max_udp_rate_per_user_mbps  (must be equal)
// Any other key is rejected.

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
}

inline Vec3 vec3_from_json(const nlohmann::json& j, const std::string& where) {
  check_keys(j, {"x", "y", "z"}, where);
  return {j.value("x", 0.0), j.value("y", 0.0), j.value("z", 0.0)};
}

}  // namespace detail

inline SimConfig config_from_json(const nlohmann::json& j, SimConfig base = {}) {
  detail::check_keys(j,
                     {"enb_locations", "ap_locations", "num_users", "user_location_range", "steps_per_episode",
                      "random_seed", "measurement_interval_ms", "min_udp_rate_per_user_mbps",
                      "max_udp_rate_per_user_mbps"},
                     "");
  SimConfig c = std::move(base);
  if (j.contains("enb_locations")) c.enb_location = detail::vec3_from_json(j["enb_locations"], "enb_locations.");
  if (j.contains("ap_locations")) {
    c.ap_locations.clear();
    for (const auto& ap : j["ap_locations"]) c.ap_locations.push_back(detail::vec3_from_json(ap, "ap_locations."));
  }
  if (j.contains("num_users")) c.num_users = j["num_users"].get<std::size_t>();
  if (j.contains("user_location_range")) {
    const auto& r = j["user_location_range"];
    detail::check_keys(r, {"min_x", "max_x", "min_y", "max_y", "z"}, "user_location_range.");
    c.min_x = r.value("min_x", c.min_x);
    c.max_x = r.value("max_x", c.max_x);
    c.min_y = r.value("min_y", c.min_y);
    c.max_y = r.value("max_y", c.max_y);
    c.user_z = r.value("z", c.user_z);
  }
  if (j.contains("steps_per_episode")) c.steps_per_episode = j["steps_per_episode"].get<std::size_t>();
  if (j.contains("random_seed")) c.seed = j["random_seed"].get<std::uint64_t>();
  if (j.contains("measurement_interval_ms")) c.interval_s = j["measurement_interval_ms"].get<double>() / 1000.0;
  const bool has_min = j.contains("min_udp_rate_per_user_mbps");
  const bool has_max = j.contains("max_udp_rate_per_user_mbps");
  if (has_min || has_max) {
    const double lo = has_min ? j["min_udp_rate_per_user_mbps"].get<double>() : j["max_udp_rate_per_user_mbps"].get<double>();
    const double hi = has_max ? j["max_udp_rate_per_user_mbps"].get<double>() : lo;
    if (lo != hi) throw ConfigError("min_udp_rate_per_user_mbps and max_udp_rate_per_user_mbps must be equal");
    c.input_rate_mbps = lo;
  }
  c.validate();
  return c;
}

inline SimConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  return config_from_json(nlohmann::json::parse(is));
}

// Full parameterization, used for dataset hashing and checkpoint records.
inline nlohmann::json config_to_json(const SimConfig& c) {
  auto v3 = [](const Vec3& v) { return nlohmann::json{{"x", v.x}, {"y", v.y}, {"z", v.z}}; };
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& ap : c.ap_locations) aps.push_back(v3(ap));
  return {{"num_users", c.num_users},
          {"enb_location", v3(c.enb_location)},
          {"ap_locations", aps},
          {"min_x", c.min_x},
          {"max_x", c.max_x},
          {"min_y", c.min_y},
          {"max_y", c.max_y},
          {"user_z", c.user_z},
          {"user_speed", c.user_speed},
          {"interval_s", c.interval_s},
          {"steps_per_episode", c.steps_per_episode},
          {"input_rate_mbps", c.input_rate_mbps},
          {"poisson_arrivals", c.poisson_arrivals},
          {"packet_size_bits", c.packet_size_bits},
          {"wifi_peak_rate", c.wifi_peak_rate},
          {"lte_cell_rate", c.lte_cell_rate},
          {"pathloss_exponent", c.pathloss_exponent},
          {"reference_distance", c.reference_distance},
          {"wifi_prop_delay_ms", c.wifi_prop_delay_ms},
          {"lte_prop_delay_ms", c.lte_prop_delay_ms},
          {"dy_max_ms", c.dy_max_ms},
          {"min_link_rate", c.min_link_rate},
          {"seed", c.seed}};
}

}  // namespace mats::sim

#endif  // MATS_SIMNET_HPP_
