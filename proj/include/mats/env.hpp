#ifndef MATS_ENV_HPP_
#define MATS_ENV_HPP_

// Episodic wrapper over the simulator: observation assembly, action
// quantization, reward and truncation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mats/simnet.hpp"

namespace mats::env {

inline constexpr std::size_t kFeaturesPerUe = 14;
inline constexpr int kActionLevels = 32;
inline constexpr double kRatioFloor = 1e-6;

// Column order of one observation row.
enum Feature : std::size_t {
  lc_lte = 0,
  lc_wifi,
  tp_in,
  tp_out_lte,
  tp_out_wifi,
  owd_lte,
  owd_wifi,
  owd_max_lte,
  owd_max_wifi,
  id_wifi,
  sr_lte,
  sr_wifi,
  pos_x,
  pos_y,
};

// N_u x 14; flattened row-major (UE-major) for learning.
using Observation = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Observation observation_from(const std::vector<sim::Measurement>& ms) {
  Observation o(Eigen::Index(ms.size()), Eigen::Index(kFeaturesPerUe));
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const auto& m = ms[i];
    o.row(Eigen::Index(i)) << m.lc_lte, m.lc_wifi, m.tp_in, m.tp_out_lte, m.tp_out_wifi, m.owd_lte, m.owd_wifi,
        m.owd_max_lte, m.owd_max_wifi, m.id_wifi, m.sr_lte, m.sr_wifi, m.x, m.y;
  }
  return o;
}

inline Eigen::VectorXd flatten(const Observation& o) {
  return Eigen::Map<const Eigen::VectorXd>(o.data(), o.size());
}

inline Observation unflatten(const Eigen::VectorXd& v, std::size_t num_users) {
  if (std::size_t(v.size()) != num_users * kFeaturesPerUe) throw std::invalid_argument("unflatten: bad length");
  return Eigen::Map<const Observation>(v.data(), Eigen::Index(num_users), Eigen::Index(kFeaturesPerUe));
}

// Clamp to [0,1], then snap to the nearest k/32 (halves round up).
inline double quantize(double raw) {
  if (std::isnan(raw)) throw std::invalid_argument("quantize: NaN action");
  const double v = std::clamp(raw, 0.0, 1.0);
  return std::floor(kActionLevels * v + 0.5) / kActionLevels;
}

// Served-traffic-weighted one-way delay across both links; plain mean when
// nothing was served.
inline double combined_delay(const sim::Measurement& m) {
  const double tp = m.tp_out_lte + m.tp_out_wifi;
  if (tp <= 0.0) return 0.5 * (m.owd_lte + m.owd_wifi);
  return (m.tp_out_lte * m.owd_lte + m.tp_out_wifi * m.owd_wifi) / tp;
}

inline double reward(const std::vector<sim::Measurement>& ms, double dy_max_ms) {
  if (ms.empty()) throw std::invalid_argument("reward: no measurements");
  double tp_ratio = 0.0, dy_ratio = 0.0;
  for (const auto& m : ms) {
    const double tp_max = m.lc_lte + m.lc_wifi;
    tp_ratio += tp_max > 0.0 ? (m.tp_out_lte + m.tp_out_wifi) / tp_max : 0.0;
    dy_ratio += combined_delay(m) / dy_max_ms;
  }
  const double n = double(ms.size());
  return std::log(std::max(tp_ratio / n, kRatioFloor)) - std::log(std::max(dy_ratio / n, kRatioFloor));
}

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool truncated = false;
  std::size_t step_index = 0;
  std::vector<sim::Measurement> measurements;
};

// reset() runs the first measurement interval under the initial split and
// counts as step index 1; step k of the agent produces index k + 1. The
// result whose index equals steps_per_episode is truncated, so an episode
// yields steps_per_episode - 1 transitions.
class Env {
 public:
  explicit Env(sim::SimConfig config) : config_(std::move(config)) { config_.validate(); }

  const sim::SimConfig& config() const { return config_; }
  std::size_t num_users() const { return config_.num_users; }
  std::size_t observation_dim() const { return config_.num_users * kFeaturesPerUe; }
  std::size_t action_dim() const { return config_.num_users; }

  StepResult reset() { return reset(config_.seed); }

  StepResult reset(std::uint64_t seed) {
    config_.seed = seed;
    state_ = sim::init_episode(config_);
    std::vector<double> splits;
    for (const auto& ue : state_.ues) splits.push_back(ue.sr_wifi);
    auto ms = sim::advance_interval(state_, splits);
    step_index_ = 1;
    started_ = true;
    return make_result(std::move(ms));
  }

  // Raw per-UE Wi-Fi ratios; each entry is quantized before use.
  StepResult step(const std::vector<double>& raw_action) {
    if (!started_) throw std::logic_error("step before reset");
    if (step_index_ >= config_.steps_per_episode) throw std::logic_error("step after truncation");
    if (raw_action.size() != num_users()) throw std::invalid_argument("step: action length != num_users");
    std::vector<double> splits(raw_action.size());
    std::transform(raw_action.begin(), raw_action.end(), splits.begin(), quantize);
    auto ms = sim::advance_interval(state_, splits);
    ++step_index_;
    return make_result(std::move(ms));
  }

  StepResult step(const Eigen::VectorXd& raw_action) {
    return step(std::vector<double>(raw_action.data(), raw_action.data() + raw_action.size()));
  }

  const sim::SimState& sim_state() const { return state_; }

 private:
  StepResult make_result(std::vector<sim::Measurement> ms) {
    StepResult r;
    r.observation = observation_from(ms);
    r.reward = reward(ms, config_.dy_max_ms);
    r.step_index = step_index_;
    r.truncated = step_index_ == config_.steps_per_episode;
    r.measurements = std::move(ms);
    return r;
  }

  sim::SimConfig config_;
  sim::SimState state_;
  std::size_t step_index_ = 0;
  bool started_ = false;
};

}  // namespace mats::env

#endif  // MATS_ENV_HPP_
