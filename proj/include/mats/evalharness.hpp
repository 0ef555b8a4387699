#ifndef MATS_EVALHARNESS_HPP_
#define MATS_EVALHARNESS_HPP_

// Seeded evaluation of heuristics and trained agents: one episode per seed,
// mean reward per step, and a 95% interval over the per-episode means.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mats/algorithms.hpp"
#include "mats/env.hpp"
#include "mats/policies.hpp"
#include "mats/simnet.hpp"

namespace mats::eval {

struct EvalReport {
  std::string policy;
  std::size_t episodes = 0;
  std::size_t steps_per_episode = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> episode_means;
  double grand_mean = 0.0;
  double ci95 = 0.0;
  bool ci95_defined = false;  // false with a single episode

  bool operator==(const EvalReport&) const = default;
};

// ci95 = 1.96 * sample std / sqrt(n).
inline void summarize(EvalReport& r) {
  const auto n = double(r.episode_means.size());
  if (n == 0) throw std::invalid_argument("summarize: no episodes");
  double sum = 0.0;
  for (double m : r.episode_means) sum += m;
  r.grand_mean = sum / n;
  r.ci95_defined = r.episode_means.size() > 1;
  r.ci95 = 0.0;
  if (r.ci95_defined) {
    double ss = 0.0;
    for (double m : r.episode_means) ss += (m - r.grand_mean) * (m - r.grand_mean);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
}

// Runs one episode per seed with make_env(steps) environments exposing
// reset(seed) and step(action); policy maps the latest step result to an
// action. The per-step return averages the rewards of the policy-driven
// steps. Episodes are independent, so workers only change the schedule.
template <class MakeEnv, class Policy>
EvalReport evaluate_with(MakeEnv make_env, const Policy& policy, std::string id, std::size_t episodes,
                         std::size_t steps, std::uint64_t seed_start, std::size_t workers = 1) {
  if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be >= 1");
  if (steps < 2) throw std::invalid_argument("evaluate: an episode needs at least 2 steps");
  EvalReport r;
  r.policy = std::move(id);
  r.episodes = episodes;
  r.steps_per_episode = steps;
  for (std::size_t i = 0; i < episodes; ++i) r.seeds.push_back(seed_start + i);
  r.episode_means.assign(episodes, 0.0);

  auto run_one = [&](std::size_t i) {
    auto env = make_env(steps);
    auto res = env.reset(r.seeds[i]);
    double total = 0.0;
    std::size_t n = 0;
    while (!res.truncated) {
      res = env.step(policy(res));
      total += res.reward;
      ++n;
    }
    r.episode_means[i] = total / double(n);
  };

  workers = std::clamp<std::size_t>(workers, 1, episodes);
  if (workers == 1) {
    for (std::size_t i = 0; i < episodes; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < episodes;) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  summarize(r);
  return r;
}

inline auto env_factory(const sim::SimConfig& config) {
  return [config](std::size_t steps) {
    auto c = config;
    c.steps_per_episode = steps;
    return env::Env(c);
  };
}

inline EvalReport evaluate(policy::HeuristicKind kind, const sim::SimConfig& config, std::size_t episodes,
                           std::size_t steps, std::uint64_t seed_start, std::size_t workers = 1) {
  auto act = [kind](const env::StepResult& res) { return policy::act(kind, res.measurements); };
  return evaluate_with(env_factory(config), act, policy::to_string(kind), episodes, steps, seed_start, workers);
}

// Actions are the quantized actor output; no exploration noise.
inline EvalReport evaluate(const algo::AgentBundle& agent, const sim::SimConfig& config, std::size_t episodes,
                           std::size_t steps, std::uint64_t seed_start, std::size_t workers = 1,
                           std::string id = {}) {
  if (agent.state_dim() != config.num_users * env::kFeaturesPerUe || agent.action_dim() != config.num_users)
    throw std::invalid_argument("evaluate: agent expects state/action dims " + std::to_string(agent.state_dim()) +
                                "/" + std::to_string(agent.action_dim()) + " but the environment has " +
                                std::to_string(config.num_users * env::kFeaturesPerUe) + "/" +
                                std::to_string(config.num_users));
  auto act = [&agent](const env::StepResult& res) {
    const Eigen::VectorXd a = agent.act(env::flatten(res.observation));
    std::vector<double> out(std::size_t(a.size()));
    for (Eigen::Index k = 0; k < a.size(); ++k) out[std::size_t(k)] = env::quantize(a[k]);
    return out;
  };
  if (id.empty()) id = algo::to_string(agent.algo);
  return evaluate_with(env_factory(config), act, std::move(id), episodes, steps, seed_start, workers);
}

// --- reports ----------------------------------------------------------------

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"policy", r.policy},
          {"episodes", r.episodes},
          {"steps_per_episode", r.steps_per_episode},
          {"seeds", r.seeds},
          {"episode_means", r.episode_means},
          {"grand_mean", r.grand_mean},
          {"ci95", r.ci95},
          {"ci95_defined", r.ci95_defined}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.policy = j.at("policy").get<std::string>();
  r.episodes = j.at("episodes").get<std::size_t>();
  r.steps_per_episode = j.at("steps_per_episode").get<std::size_t>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.episode_means = j.at("episode_means").get<std::vector<double>>();
  r.grand_mean = j.at("grand_mean").get<double>();
  r.ci95 = j.at("ci95").get<double>();
  r.ci95_defined = j.at("ci95_defined").get<bool>();
  if (r.episode_means.size() != r.episodes || r.seeds.size() != r.episodes)
    throw std::runtime_error("report: episode count disagrees with its lists");
  return r;
}

inline void save_report(const std::string& path, const EvalReport& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << to_json(r).dump(2) << '\n';
}

inline EvalReport load_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return report_from_json(nlohmann::json::parse(is));
}

struct CompareRow {
  std::string policy;
  double grand_mean = 0.0;
  double ci95 = 0.0;
  std::size_t episodes = 0;
  bool best = false;  // interval overlaps the top row's
};

// Sorted by grand mean, descending.
inline std::vector<CompareRow> compare(const std::vector<EvalReport>& reports) {
  std::vector<CompareRow> rows;
  for (const auto& r : reports) rows.push_back({r.policy, r.grand_mean, r.ci95, r.episodes, false});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CompareRow& a, const CompareRow& b) { return a.grand_mean > b.grand_mean; });
  if (!rows.empty()) {
    const double floor = rows.front().grand_mean - rows.front().ci95;
    for (auto& row : rows) row.best = row.grand_mean + row.ci95 >= floor;
  }
  return rows;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string to_markdown(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "| policy | mean reward per step | ci95 | episodes |\n|---|---:|---:|---:|\n";
  for (const auto& r : rows) {
    const auto mean = format_number(r.grand_mean);
    os << "| " << r.policy << " | " << (r.best ? "**" + mean + "**" : mean) << " | " << format_number(r.ci95)
       << " | " << r.episodes << " |\n";
  }
  return os.str();
}

inline std::string to_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "policy,grand_mean,ci95,episodes,best\n";
  for (const auto& r : rows)
    os << r.policy << ',' << format_number(r.grand_mean) << ',' << format_number(r.ci95) << ',' << r.episodes << ','
       << (r.best ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace mats::eval

#endif  // MATS_EVALHARNESS_HPP_
