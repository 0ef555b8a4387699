#ifndef MATS_DATA_HPP_
#define MATS_DATA_HPP_

// Offline datasets: collection with heuristic policies, episode files,
// state normalization and feature-covariance coverage diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mats/diffnet.hpp"
#include "mats/env.hpp"
#include "mats/policies.hpp"
#include "mats/simnet.hpp"

namespace mats::data {

struct Transition {
  Eigen::VectorXd s;
  Eigen::VectorXd a;
  double r = 0.0;
  Eigen::VectorXd s_next;
};

// One episode, one transition per column.
struct Episode {
  std::uint64_t seed = 0;
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;

  std::size_t size() const { return std::size_t(rewards.size()); }
  Transition at(std::size_t i) const {
    const auto k = Eigen::Index(i);
    return {states.col(k), actions.col(k), rewards[k], next_states.col(k)};
  }
  bool operator==(const Episode& o) const {
    return seed == o.seed && states == o.states && actions == o.actions && rewards == o.rewards &&
           next_states == o.next_states;
  }
};

struct Dataset {
  std::string policy;
  std::string config_hash;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<Episode> episodes;

  std::size_t num_transitions() const {
    std::size_t k = 0;
    for (const auto& e : episodes) k += e.size();
    return k;
  }
  bool operator==(const Dataset&) const = default;
};

// All transitions side by side; the layout training code samples from.
struct TransitionTable {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  std::size_t size() const { return std::size_t(rewards.size()); }
};

inline TransitionTable stack(const Dataset& d) {
  const auto k = Eigen::Index(d.num_transitions());
  TransitionTable t{Eigen::MatrixXd(Eigen::Index(d.state_dim), k), Eigen::MatrixXd(Eigen::Index(d.action_dim), k),
                    Eigen::VectorXd(k), Eigen::MatrixXd(Eigen::Index(d.state_dim), k)};
  Eigen::Index col = 0;
  for (const auto& e : d.episodes) {
    const auto n = Eigen::Index(e.size());
    t.states.middleCols(col, n) = e.states;
    t.actions.middleCols(col, n) = e.actions;
    t.rewards.segment(col, n) = e.rewards;
    t.next_states.middleCols(col, n) = e.next_states;
    col += n;
  }
  return t;
}

// FNV-1a over the canonical JSON of the configuration, seed excluded.
inline std::string config_hash(const sim::SimConfig& config) {
  auto j = sim::config_to_json(config);
  j.erase("seed");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Runs one seeded episode under a heuristic. The recorded action is the
// quantized split actually applied.
inline Episode collect_episode(const sim::SimConfig& config, policy::HeuristicKind kind, std::uint64_t seed) {
  env::Env e(config);
  auto res = e.reset(seed);
  const auto n = Eigen::Index(config.steps_per_episode > 0 ? config.steps_per_episode - 1 : 0);
  const auto sd = Eigen::Index(e.observation_dim());
  const auto ad = Eigen::Index(e.action_dim());
  Episode ep{seed, Eigen::MatrixXd(sd, n), Eigen::MatrixXd(ad, n), Eigen::VectorXd(n), Eigen::MatrixXd(sd, n)};
  Eigen::Index k = 0;
  while (!res.truncated) {
    auto action = policy::act(kind, res.measurements);
    for (auto& v : action) v = env::quantize(v);
    ep.states.col(k) = env::flatten(res.observation);
    res = e.step(action);
    ep.actions.col(k) = Eigen::Map<const Eigen::VectorXd>(action.data(), ad);
    ep.rewards[k] = res.reward;
    ep.next_states.col(k) = env::flatten(res.observation);
    ++k;
  }
  return ep;
}

inline Dataset collect(const sim::SimConfig& config, policy::HeuristicKind kind, std::size_t episodes,
                       std::uint64_t seed_start) {
  config.validate();
  Dataset d{policy::to_string(kind), config_hash(config), config.num_users * env::kFeaturesPerUe,
            config.num_users, {}};
  d.episodes.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) d.episodes.push_back(collect_episode(config, kind, seed_start + i));
  return d;
}

// --- episode files ---------------------------------------------------------------
//
// One file per episode named episode-<seed>.bin: a JSON header line, then
// per transition state_dim + action_dim + 1 + state_dim little-endian
// binary64 values (s, a, r, s').

inline constexpr int kEpisodeSchemaVersion = 1;

inline std::string episode_filename(std::uint64_t seed) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "episode-%06llu.bin", static_cast<unsigned long long>(seed));
  return buf;
}

inline void write_episode(std::ostream& os, const Dataset& meta, const Episode& ep) {
  nlohmann::json h{{"format", "mats-episode"},
                   {"schema_version", kEpisodeSchemaVersion},
                   {"state_dim", meta.state_dim},
                   {"action_dim", meta.action_dim},
                   {"policy", meta.policy},
                   {"seed", ep.seed},
                   {"config_hash", meta.config_hash},
                   {"transitions", ep.size()}};
  os << h.dump() << '\n';
  for (std::size_t i = 0; i < ep.size(); ++i) {
    const auto k = Eigen::Index(i);
    for (Eigen::Index r = 0; r < ep.states.rows(); ++r) nn::detail::write_f64_le(os, ep.states(r, k));
    for (Eigen::Index r = 0; r < ep.actions.rows(); ++r) nn::detail::write_f64_le(os, ep.actions(r, k));
    nn::detail::write_f64_le(os, ep.rewards[k]);
    for (Eigen::Index r = 0; r < ep.next_states.rows(); ++r) nn::detail::write_f64_le(os, ep.next_states(r, k));
  }
}

struct EpisodeHeader {
  std::size_t state_dim = 0, action_dim = 0, transitions = 0;
  std::string policy, config_hash;
  std::uint64_t seed = 0;
};

inline EpisodeHeader read_episode_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("episode file: missing header");
  auto h = nlohmann::json::parse(line);
  if (h.value("format", "") != "mats-episode") throw std::runtime_error("episode file: bad format tag");
  if (h.at("schema_version").get<int>() != kEpisodeSchemaVersion)
    throw std::runtime_error("episode file: unsupported schema version");
  return {h.at("state_dim").get<std::size_t>(), h.at("action_dim").get<std::size_t>(),
          h.at("transitions").get<std::size_t>(), h.at("policy").get<std::string>(),
          h.at("config_hash").get<std::string>(), h.at("seed").get<std::uint64_t>()};
}

inline Episode read_episode_body(std::istream& is, const EpisodeHeader& h) {
  const auto n = Eigen::Index(h.transitions);
  const auto sd = Eigen::Index(h.state_dim), ad = Eigen::Index(h.action_dim);
  Episode ep{h.seed, Eigen::MatrixXd(sd, n), Eigen::MatrixXd(ad, n), Eigen::VectorXd(n), Eigen::MatrixXd(sd, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index r = 0; r < sd; ++r) ep.states(r, k) = nn::detail::read_f64_le(is);
    for (Eigen::Index r = 0; r < ad; ++r) ep.actions(r, k) = nn::detail::read_f64_le(is);
    ep.rewards[k] = nn::detail::read_f64_le(is);
    for (Eigen::Index r = 0; r < sd; ++r) ep.next_states(r, k) = nn::detail::read_f64_le(is);
  }
  return ep;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& ep : d.episodes) {
    std::ofstream os(dir / episode_filename(ep.seed), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write episode file in " + dir.string());
    write_episode(os, d, ep);
  }
}

inline std::vector<std::filesystem::path> episode_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("episode-", 0) == 0 && entry.path().extension() == ".bin")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  const auto files = episode_files(dir);
  if (files.empty()) throw std::runtime_error("no episode files in " + dir.string());
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::ifstream is(files[i], std::ios::binary);
    const auto h = read_episode_header(is);
    if (i == 0) {
      d.policy = h.policy;
      d.config_hash = h.config_hash;
      d.state_dim = h.state_dim;
      d.action_dim = h.action_dim;
    } else if (h.state_dim != d.state_dim || h.action_dim != d.action_dim || h.config_hash != d.config_hash) {
      throw std::runtime_error("episode " + files[i].string() + " is inconsistent with the rest of the dataset");
    }
    d.episodes.push_back(read_episode_body(is, h));
  }
  return d;
}

// --- featurization and coverage -------------------------------------------------

inline Eigen::VectorXd featurize(const Eigen::VectorXd& s, const Eigen::VectorXd& a, std::size_t state_dim,
                                 std::size_t action_dim) {
  if (std::size_t(s.size()) != state_dim || std::size_t(a.size()) != action_dim)
    throw std::invalid_argument("featurize: shape mismatch");
  Eigen::VectorXd phi(s.size() + a.size());
  phi << s, a;
  return phi;
}

inline Eigen::VectorXd featurize(const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
  return featurize(s, a, 56, 4);
}

struct JacobiResult {
  Eigen::VectorXd eigenvalues;  // ascending
  int sweeps = 0;
  double off_norm = 0.0;
};

inline double off_diagonal_norm(const Eigen::MatrixXd& a) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

// Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal
// Frobenius norm drops below tol.
inline JacobiResult jacobi_eigenvalues(Eigen::MatrixXd a, double tol = 1e-10, int max_sweeps = 100) {
  if (a.rows() != a.cols()) throw std::invalid_argument("jacobi_eigenvalues: matrix is not square");
  const Eigen::Index n = a.rows();
  JacobiResult res;
  res.off_norm = off_diagonal_norm(a);
  while (res.off_norm >= tol) {
    if (res.sweeps == max_sweeps) throw std::runtime_error("jacobi_eigenvalues: no convergence");
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
      }
    }
    ++res.sweeps;
    res.off_norm = off_diagonal_norm(a);
  }
  res.eigenvalues = a.diagonal();
  std::sort(res.eigenvalues.begin(), res.eigenvalues.end());
  return res;
}

struct CoverageReport {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double condition_number = 0.0;  // +inf when lambda_min == 0
  std::size_t feature_dim = 0;
  std::size_t transitions = 0;
  int jacobi_sweeps = 0;
  // Diagnostics restricted to the numerical range of C: eigenvalues at or
  // below kRankTolerance * lambda_max count as null directions.
  std::size_t null_dim = 0;
  double lambda_min_range = 0.0;
  double condition_number_range = 0.0;
};

inline constexpr double kRankTolerance = 1e-12;

inline Eigen::MatrixXd feature_second_moment(const Dataset& d) {
  const std::size_t f = d.state_dim + d.action_dim;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(Eigen::Index(f), Eigen::Index(f));
  Eigen::MatrixXd phi(Eigen::Index(f), 0);
  for (const auto& e : d.episodes) {
    phi.resize(Eigen::Index(f), e.states.cols());
    phi.topRows(e.states.rows()) = e.states;
    phi.bottomRows(e.actions.rows()) = e.actions;
    c.selfadjointView<Eigen::Lower>().rankUpdate(phi);
  }
  c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
  return c / double(d.num_transitions());
}

inline CoverageReport coverage_from_matrix(const Eigen::MatrixXd& c) {
  const auto j = jacobi_eigenvalues(c);
  CoverageReport r;
  r.feature_dim = std::size_t(c.rows());
  r.lambda_min = std::max(0.0, j.eigenvalues[0]);
  r.lambda_max = std::max(0.0, j.eigenvalues[j.eigenvalues.size() - 1]);
  r.condition_number =
      r.lambda_min > 0.0 ? r.lambda_max / r.lambda_min : std::numeric_limits<double>::infinity();
  r.jacobi_sweeps = j.sweeps;
  const double cut = kRankTolerance * r.lambda_max;
  for (Eigen::Index i = 0; i < j.eigenvalues.size(); ++i) {
    if (j.eigenvalues[i] > cut) {
      r.lambda_min_range = j.eigenvalues[i];
      break;
    }
    ++r.null_dim;
  }
  r.condition_number_range = r.lambda_min_range > 0.0 ? r.lambda_max / r.lambda_min_range
                                                      : std::numeric_limits<double>::infinity();
  return r;
}

inline CoverageReport coverage(const Dataset& d) {
  const std::size_t f = d.state_dim + d.action_dim;
  if (d.num_transitions() == 0) throw std::invalid_argument("coverage: empty dataset");
  if (d.num_transitions() < f) throw std::invalid_argument("coverage: need at least as many transitions as features");
  auto r = coverage_from_matrix(feature_second_moment(d));
  r.transitions = d.num_transitions();
  return r;
}

inline nlohmann::json to_json(const CoverageReport& r) {
  nlohmann::json j{{"lambda_min", r.lambda_min},
                   {"lambda_max", r.lambda_max},
                   {"feature_dim", r.feature_dim},
                   {"transitions", r.transitions},
                   {"jacobi_sweeps", r.jacobi_sweeps},
                   {"null_dim", r.null_dim},
                   {"lambda_min_range", r.lambda_min_range}};
  // JSON has no infinity literal.
  auto finite_or_inf = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return "inf";
  };
  j["condition_number"] = finite_or_inf(r.condition_number);
  j["condition_number_range"] = finite_or_inf(r.condition_number_range);
  return j;
}

// --- normalization -------------------------------------------------------------

inline constexpr double kStdFloor = 1e-3;

struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& states) const {
    return (states.colwise() - mean).array().colwise() / std.array();
  }
  Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const {
    return ((z.array().colwise() * std.array()).matrix()).colwise() + mean;
  }
  bool operator==(const NormStats&) const = default;
};

inline NormStats compute_norm_stats(const Dataset& d) {
  const auto sd = Eigen::Index(d.state_dim);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(sd);
  const double k = double(d.num_transitions());
  if (k == 0) throw std::invalid_argument("compute_norm_stats: empty dataset");
  for (const auto& e : d.episodes) sum += e.states.rowwise().sum();
  NormStats st{sum / k, Eigen::VectorXd::Zero(sd)};
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(sd);
  for (const auto& e : d.episodes) sq += (e.states.colwise() - st.mean).array().square().rowwise().sum().matrix();
  st.std = (sq / k).cwiseSqrt().cwiseMax(kStdFloor);
  return st;
}

struct NormalizedDataset {
  Dataset dataset;
  NormStats stats;
};

// z-scores states and next states with statistics of the states.
inline NormalizedDataset normalize(const Dataset& d) {
  NormalizedDataset out{d, compute_norm_stats(d)};
  for (auto& e : out.dataset.episodes) {
    e.states = out.stats.apply(e.states);
    e.next_states = out.stats.apply(e.next_states);
  }
  return out;
}

inline nlohmann::json to_json(const NormStats& n) {
  return {{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
          {"std", std::vector<double>(n.std.data(), n.std.data() + n.std.size())}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  auto m = j.at("mean").get<std::vector<double>>();
  auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != s.size()) throw std::runtime_error("norm stats: mean/std length mismatch");
  return {Eigen::Map<Eigen::VectorXd>(m.data(), Eigen::Index(m.size())),
          Eigen::Map<Eigen::VectorXd>(s.data(), Eigen::Index(s.size()))};
}

}  // namespace mats::data

#endif  // MATS_DATA_HPP_
