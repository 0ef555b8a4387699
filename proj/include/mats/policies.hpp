#ifndef MATS_POLICIES_HPP_
#define MATS_POLICIES_HPP_

// Per-UE heuristic traffic-splitting policies. Each maps the previous
// interval's measurement of one UE to that UE's next Wi-Fi split ratio.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mats/env.hpp"
#include "mats/simnet.hpp"

namespace mats::policy {

enum class HeuristicKind { throughput_argmax, system_default, utility_logistic };

inline constexpr HeuristicKind kAllHeuristics[] = {HeuristicKind::throughput_argmax, HeuristicKind::system_default,
                                                   HeuristicKind::utility_logistic};

inline std::string to_string(HeuristicKind k) {
  switch (k) {
    case HeuristicKind::throughput_argmax: return "throughput_argmax";
    case HeuristicKind::system_default: return "system_default";
    case HeuristicKind::utility_logistic: return "utility_logistic";
  }
  throw std::logic_error("unreachable");
}

inline HeuristicKind heuristic_from_string(const std::string& s) {
  for (auto k : kAllHeuristics)
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown heuristic policy: " + s);
}

inline constexpr double kDelayGapMs = 10.0;
inline constexpr double kRatioStep = 1.0 / env::kActionLevels;

// Ties go to Wi-Fi.
inline double throughput_argmax(const sim::Measurement& m) { return m.lc_wifi >= m.lc_lte ? 1.0 : 0.0; }

inline double system_default(const sim::Measurement& m, double prev_sr, double delay_gap_ms = kDelayGapMs) {
  double sr = prev_sr;
  const double gap = m.owd_wifi - m.owd_lte;
  if (std::abs(gap) > delay_gap_ms) {
    sr += gap < 0 ? kRatioStep : -kRatioStep;
  } else if (m.dropped_wifi() != m.dropped_lte()) {
    sr += m.dropped_wifi() < m.dropped_lte() ? kRatioStep : -kRatioStep;
  }
  return env::quantize(sr);
}

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double link_utility(double tp_mbps, double owd_ms) { return std::log1p(tp_mbps) - std::log1p(owd_ms); }

inline double utility_logistic(const sim::Measurement& m) {
  return logistic(link_utility(m.tp_out_wifi, m.owd_wifi) - link_utility(m.tp_out_lte, m.owd_lte));
}

inline double decide(HeuristicKind kind, const sim::Measurement& m) {
  switch (kind) {
    case HeuristicKind::throughput_argmax: return throughput_argmax(m);
    case HeuristicKind::system_default: return system_default(m, m.sr_wifi);
    case HeuristicKind::utility_logistic: return utility_logistic(m);
  }
  throw std::logic_error("unreachable");
}

// Joint action: each UE decided independently.
inline std::vector<double> act(HeuristicKind kind, const std::vector<sim::Measurement>& ms) {
  std::vector<double> a(ms.size());
  for (std::size_t i = 0; i < ms.size(); ++i) a[i] = decide(kind, ms[i]);
  return a;
}

}  // namespace mats::policy

#endif  // MATS_POLICIES_HPP_
