#ifndef MATS_ALGORITHMS_HPP_
#define MATS_ALGORITHMS_HPP_

// Offline training loops: BC, TD3, TD3+BC and pessimistic TD3 (PTD3).
//
// Random streams. A run with seed S owns three generators:
//   init:   mt19937_64(S), drawn for actor, critic1, critic2 initialization;
//   main:   batch indices, then target-policy noise, every step;
//   fisher: the single Fisher transition, then the Fisher gradient noise,
//           on every delayed PTD3 step.
// Keeping the Fisher draws on their own stream is what makes PTD3 with
// beta = 0 reproduce TD3 exactly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mats/data.hpp"
#include "mats/diffnet.hpp"
#include "mats/fisher.hpp"

namespace mats::algo {

enum class Algo { bc, td3, td3bc, ptd3 };

inline std::string to_string(Algo a) {
  switch (a) {
    case Algo::bc: return "bc";
    case Algo::td3: return "td3";
    case Algo::td3bc: return "td3bc";
    case Algo::ptd3: return "ptd3";
  }
  throw std::logic_error("unreachable");
}

inline Algo algo_from_string(const std::string& s) {
  for (auto a : {Algo::bc, Algo::td3, Algo::td3bc, Algo::ptd3})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown algorithm: " + s);
}

struct Td3Hyper {
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t policy_delay = 2;
  double target_noise = 0.2;
  double noise_clip = 0.5;
  std::size_t batch_size = 256;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  std::size_t steps = 10000;
  std::vector<std::size_t> critic_hidden{64, 64};
  std::vector<std::size_t> actor_hidden{64, 64};
  bool normalize = false;
  double bc_alpha = 2.5;  // TD3+BC only

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0,1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in (0,1]");
    if (!(target_noise > 0.0) || !(noise_clip > 0.0)) throw std::invalid_argument("target noise and clip must be > 0");
    if (policy_delay == 0) throw std::invalid_argument("policy_delay must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw std::invalid_argument("learning rates must be > 0");
    if (!(bc_alpha >= 0.0)) throw std::invalid_argument("bc_alpha must be >= 0");
  }
};

struct PtD3Hyper : Td3Hyper {
  double fisher_alpha = 1.0;
  double beta = 10.0;
  bool pure_pessimism = false;
  double fisher_noise_variance = 1e-9;
  std::size_t recompute_period = 100;
  double mixed_step = nn::kMixedStep;

  void validate() const {
    Td3Hyper::validate();
    if (!(fisher_alpha > 0.0 && fisher_alpha <= 1.0)) throw std::invalid_argument("Fisher alpha must be in (0,1]");
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    if (!(fisher_noise_variance >= 0.0)) throw std::invalid_argument("Fisher noise must be >= 0");
    if (!(mixed_step > 0.0)) throw std::invalid_argument("mixed_step must be > 0");
  }
};

inline nlohmann::json to_json(const PtD3Hyper& h) {
  return {{"gamma", h.gamma},
          {"tau", h.tau},
          {"policy_delay", h.policy_delay},
          {"target_noise", h.target_noise},
          {"noise_clip", h.noise_clip},
          {"batch_size", h.batch_size},
          {"actor_lr", h.actor_lr},
          {"critic_lr", h.critic_lr},
          {"steps", h.steps},
          {"critic_hidden", h.critic_hidden},
          {"actor_hidden", h.actor_hidden},
          {"normalize", h.normalize},
          {"bc_alpha", h.bc_alpha},
          {"fisher_alpha", h.fisher_alpha},
          {"beta", h.beta},
          {"pure_pessimism", h.pure_pessimism},
          {"fisher_noise_variance", h.fisher_noise_variance},
          {"recompute_period", h.recompute_period},
          {"mixed_step", h.mixed_step}};
}

inline PtD3Hyper hyper_from_json(const nlohmann::json& j) {
  PtD3Hyper h;
  h.gamma = j.at("gamma").get<double>();
  h.tau = j.at("tau").get<double>();
  h.policy_delay = j.at("policy_delay").get<std::size_t>();
  h.target_noise = j.at("target_noise").get<double>();
  h.noise_clip = j.at("noise_clip").get<double>();
  h.batch_size = j.at("batch_size").get<std::size_t>();
  h.actor_lr = j.at("actor_lr").get<double>();
  h.critic_lr = j.at("critic_lr").get<double>();
  h.steps = j.at("steps").get<std::size_t>();
  h.critic_hidden = j.at("critic_hidden").get<std::vector<std::size_t>>();
  h.actor_hidden = j.at("actor_hidden").get<std::vector<std::size_t>>();
  h.normalize = j.at("normalize").get<bool>();
  h.bc_alpha = j.at("bc_alpha").get<double>();
  h.fisher_alpha = j.at("fisher_alpha").get<double>();
  h.beta = j.at("beta").get<double>();
  h.pure_pessimism = j.at("pure_pessimism").get<bool>();
  h.fisher_noise_variance = j.at("fisher_noise_variance").get<double>();
  h.recompute_period = j.at("recompute_period").get<std::size_t>();
  h.mixed_step = j.at("mixed_step").get<double>();
  h.validate();
  return h;
}

// Adam with PyTorch's defaults and bias-correction arithmetic.
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::uint64_t t = 0;

  Adam() = default;
  Adam(std::size_t dim, double learning_rate)
      : lr(learning_rate), m(Eigen::VectorXd::Zero(Eigen::Index(dim))), v(Eigen::VectorXd::Zero(Eigen::Index(dim))) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (grad.size() != params.size() || m.size() != params.size())
      throw std::invalid_argument("Adam: gradient/parameter length mismatch");
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    const double step_size = lr / bc1;
    const Eigen::ArrayXd denom = v.array().sqrt() / std::sqrt(bc2) + eps;
    params.array() -= step_size * (m.array() / denom);
  }

  bool operator==(const Adam& o) const {
    return lr == o.lr && beta1 == o.beta1 && beta2 == o.beta2 && eps == o.eps && m == o.m && v == o.v && t == o.t;
  }
};

struct AgentBundle {
  Algo algo = Algo::ptd3;
  PtD3Hyper hyper;
  std::uint64_t seed = 0;
  nn::MlpSpec actor_spec;
  nn::MlpSpec critic_spec;
  nn::ParamVector actor, critic1, critic2;
  nn::ParamVector actor_target, critic1_target, critic2_target;
  std::optional<data::NormStats> norm;

  std::size_t state_dim() const { return actor_spec.input_dim; }
  std::size_t action_dim() const { return actor_spec.output_dim; }

  // Raw (unnormalized) states in, one column per sample; unquantized actions out.
  Eigen::MatrixXd act_batch(const Eigen::MatrixXd& raw_states) const {
    if (std::size_t(raw_states.rows()) != state_dim())
      throw std::invalid_argument("agent: state dimension " + std::to_string(raw_states.rows()) + " != " +
                                  std::to_string(state_dim()));
    if (norm) return nn::forward_batch(actor_spec, actor, norm->apply(raw_states));
    return nn::forward_batch(actor_spec, actor, raw_states);
  }
  Eigen::VectorXd act(const Eigen::VectorXd& raw_state) const { return act_batch(raw_state).col(0); }

  bool operator==(const AgentBundle& o) const {
    return algo == o.algo && seed == o.seed && actor_spec == o.actor_spec && critic_spec == o.critic_spec &&
           actor == o.actor && critic1 == o.critic1 && critic2 == o.critic2 && actor_target == o.actor_target &&
           critic1_target == o.critic1_target && critic2_target == o.critic2_target && norm == o.norm;
  }
};

inline nn::MlpSpec actor_spec_for(std::size_t state_dim, std::size_t action_dim, const Td3Hyper& h) {
  return {state_dim, h.actor_hidden, action_dim, nn::OutputActivation::unit_interval};
}

inline nn::MlpSpec critic_spec_for(std::size_t state_dim, std::size_t action_dim, const Td3Hyper& h) {
  return {state_dim + action_dim, h.critic_hidden, 1, nn::OutputActivation::identity};
}

// Live networks drawn from the init stream; targets are copies.
inline AgentBundle make_bundle(Algo algo, std::size_t state_dim, std::size_t action_dim, const PtD3Hyper& h,
                               std::uint64_t seed) {
  h.validate();
  AgentBundle b;
  b.algo = algo;
  b.hyper = h;
  b.seed = seed;
  b.actor_spec = actor_spec_for(state_dim, action_dim, h);
  b.critic_spec = critic_spec_for(state_dim, action_dim, h);
  b.actor_spec.validate();
  b.critic_spec.validate();
  std::mt19937_64 init(seed);
  const auto s_actor = init(), s_c1 = init(), s_c2 = init();
  b.actor = nn::init_params(b.actor_spec, s_actor);
  b.critic1 = nn::init_params(b.critic_spec, s_c1);
  b.critic2 = nn::init_params(b.critic_spec, s_c2);
  b.actor_target = b.actor;
  b.critic1_target = b.critic1;
  b.critic2_target = b.critic2;
  return b;
}

inline std::mt19937_64 derive_stream(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), stream};
  return std::mt19937_64(seq);
}

// --- batches ----------------------------------------------------------------

struct Batch {
  Eigen::MatrixXd s;
  Eigen::MatrixXd a;
  Eigen::VectorXd r;
  Eigen::MatrixXd s_next;
  std::size_t size() const { return std::size_t(r.size()); }
};

// Uniform with replacement.
inline Batch sample_batch(const data::TransitionTable& t, std::size_t n, std::mt19937_64& rng) {
  if (t.size() == 0) throw std::invalid_argument("sample_batch: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
  Batch b{Eigen::MatrixXd(t.states.rows(), Eigen::Index(n)), Eigen::MatrixXd(t.actions.rows(), Eigen::Index(n)),
          Eigen::VectorXd(Eigen::Index(n)), Eigen::MatrixXd(t.next_states.rows(), Eigen::Index(n))};
  for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
    const auto k = Eigen::Index(pick(rng));
    b.s.col(i) = t.states.col(k);
    b.a.col(i) = t.actions.col(k);
    b.r[i] = t.rewards[k];
    b.s_next.col(i) = t.next_states.col(k);
  }
  return b;
}

inline Eigen::MatrixXd critic_input(const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
  Eigen::MatrixXd x(s.rows() + a.rows(), s.cols());
  x << s, a;
  return x;
}

// --- critic -----------------------------------------------------------------

// y = r + gamma * min_i Q'_i(s', clamp(pi'(s') + clip(noise), 0, 1)). Noise
// is drawn sample by sample, action dims inner.
inline Eigen::VectorXd td3_targets(const AgentBundle& b, const Batch& batch, const Td3Hyper& h,
                                   std::mt19937_64& rng) {
  Eigen::MatrixXd a_next = nn::forward_batch(b.actor_spec, b.actor_target, batch.s_next);
  std::normal_distribution<double> noise(0.0, h.target_noise);
  for (Eigen::Index i = 0; i < a_next.cols(); ++i)
    for (Eigen::Index k = 0; k < a_next.rows(); ++k) {
      const double e = std::clamp(noise(rng), -h.noise_clip, h.noise_clip);
      a_next(k, i) = std::clamp(a_next(k, i) + e, 0.0, 1.0);
    }
  const Eigen::MatrixXd x = critic_input(batch.s_next, a_next);
  const Eigen::RowVectorXd q1 = nn::forward_batch(b.critic_spec, b.critic1_target, x);
  const Eigen::RowVectorXd q2 = nn::forward_batch(b.critic_spec, b.critic2_target, x);
  return batch.r + h.gamma * q1.cwiseMin(q2).transpose();
}

struct CriticStats {
  double loss1 = 0.0;
  double loss2 = 0.0;
};

// One gradient step per critic on the mean squared error to y.
inline double critic_regression_step(const nn::MlpSpec& spec, nn::ParamVector& critic, Adam& opt,
                                     const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const auto trace = nn::forward_trace(spec, critic, x);
  const Eigen::RowVectorXd diff = trace.output().row(0) - y.transpose();
  const double n = double(y.size());
  const double loss = diff.squaredNorm() / n;
  if (!std::isfinite(loss)) throw std::runtime_error("critic update: non-finite loss");
  const auto back = nn::backward(spec, critic, trace, (2.0 / n) * diff);
  opt.step(critic.values, back.param_grad);
  return loss;
}

inline CriticStats td3_critic_update(AgentBundle& b, Adam& opt1, Adam& opt2, const Batch& batch, const Td3Hyper& h,
                                     std::mt19937_64& rng) {
  const Eigen::VectorXd y = td3_targets(b, batch, h, rng);
  const Eigen::MatrixXd x = critic_input(batch.s, batch.a);
  CriticStats st;
  st.loss1 = critic_regression_step(b.critic_spec, b.critic1, opt1, x, y);
  st.loss2 = critic_regression_step(b.critic_spec, b.critic2, opt2, x, y);
  return st;
}

// --- actor objectives -------------------------------------------------------
//
// Each returns the objective J(phi) averaged over the batch and the gradient
// of the loss -J with respect to the actor parameters.

struct ActorGradient {
  Eigen::VectorXd loss_grad;
  double objective = 0.0;
};

namespace detail {

// dj_da holds dJ_i/da per sample (unaveraged).
inline ActorGradient actor_gradient(const AgentBundle& b, const nn::ForwardTrace& actor_trace,
                                    const Eigen::MatrixXd& dj_da, double objective) {
  const double n = double(dj_da.cols());
  const Eigen::MatrixXd upstream = dj_da * (-1.0 / n);
  return {nn::backward(b.actor_spec, b.actor, actor_trace, upstream).param_grad, objective};
}

struct QAtPolicy {
  nn::ForwardTrace actor_trace;
  Eigen::RowVectorXd q;
  Eigen::MatrixXd dq_da;
};

inline QAtPolicy q_at_policy(const AgentBundle& b, const Eigen::MatrixXd& s) {
  QAtPolicy r{nn::forward_trace(b.actor_spec, b.actor, s), {}, {}};
  const auto x = critic_input(s, r.actor_trace.output());
  const auto ct = nn::forward_trace(b.critic_spec, b.critic1, x);
  r.q = ct.output().row(0);
  const auto back = nn::backward(b.critic_spec, b.critic1, ct, Eigen::MatrixXd::Ones(1, s.cols()));
  r.dq_da = back.input_grad.bottomRows(Eigen::Index(b.action_dim()));
  return r;
}

}  // namespace detail

// J = -(1/N) sum ||pi(s) - a||^2
inline ActorGradient bc_actor_gradient(const AgentBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
  const auto trace = nn::forward_trace(b.actor_spec, b.actor, s);
  const Eigen::MatrixXd diff = trace.output() - a;
  const double j = -diff.squaredNorm() / double(s.cols());
  return detail::actor_gradient(b, trace, -2.0 * diff, j);
}

// J = (1/N) sum Q1(s, pi(s))
inline ActorGradient td3_actor_gradient(const AgentBundle& b, const Eigen::MatrixXd& s) {
  auto qp = detail::q_at_policy(b, s);
  return detail::actor_gradient(b, qp.actor_trace, qp.dq_da, qp.q.mean());
}

// lambda = alpha_bc / mean |Q1(s, a)| over dataset actions; zero when every
// |Q1| is zero.
inline double td3bc_lambda(const AgentBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                           double alpha_bc) {
  const Eigen::RowVectorXd q = nn::forward_batch(b.critic_spec, b.critic1, critic_input(s, a));
  const double scale = q.cwiseAbs().mean();
  return scale > 0.0 ? alpha_bc / scale : 0.0;
}

// J = (1/N) sum [lambda Q1(s, pi(s)) - ||pi(s) - a||^2]
inline ActorGradient td3bc_actor_gradient(const AgentBundle& b, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                                          double alpha_bc) {
  const double lambda = td3bc_lambda(b, s, a, alpha_bc);
  auto qp = detail::q_at_policy(b, s);
  const Eigen::MatrixXd diff = qp.actor_trace.output() - a;
  const double j = lambda * qp.q.mean() - diff.squaredNorm() / double(s.cols());
  return detail::actor_gradient(b, qp.actor_trace, lambda * qp.dq_da - 2.0 * diff, j);
}

// Per-sample bonus beta * sqrt(g^T F^-1 g) with g = grad_theta1 Q1(s, a), and
// its gradient in a. d/da sqrt(q) = (F^-1 g)^T (dg/da) / sqrt(q), the mixed
// derivative dg/da_k taken by central differences.
struct Pessimism {
  Eigen::RowVectorXd bonus;
  Eigen::MatrixXd dbonus_da;
};

inline Pessimism pessimism(const nn::MlpSpec& critic_spec, const nn::ParamVector& critic,
                           const fisher::FisherState& f, const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                           double beta, double h = nn::kMixedStep) {
  const Eigen::Index n = s.cols(), na = a.rows();
  const Eigen::MatrixXd g = nn::per_sample_grad_params(critic_spec, critic, critic_input(s, a));
  const auto quad = f.batch_quadratic(g);
  Pessimism p{Eigen::RowVectorXd(n), Eigen::MatrixXd::Zero(na, n)};
  Eigen::VectorXd e = Eigen::VectorXd::Zero(na);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double root = std::sqrt(quad.quadratic[i]);
    p.bonus[i] = beta * root;
    if (root == 0.0) continue;
    for (Eigen::Index k = 0; k < na; ++k) {
      e.setZero();
      e[k] = 1.0;
      const auto dg = nn::mixed_grad_params_wrt_action(critic_spec, critic, s.col(i), a.col(i), e, h);
      p.dbonus_da(k, i) = beta * quad.solved.col(i).dot(dg.values) / root;
    }
  }
  return p;
}

// J = (1/N) sum [Q1(s, pi(s)) - bonus(s, pi(s))], or -(1/N) sum bonus under
// pure pessimism. The Fisher state is read only.
inline ActorGradient ptd3_actor_gradient(const AgentBundle& b, const fisher::FisherState& f, const Eigen::MatrixXd& s,
                                         double beta, bool pure_pessimism, double h = nn::kMixedStep) {
  auto qp = detail::q_at_policy(b, s);
  const auto pes = pessimism(b.critic_spec, b.critic1, f, s, qp.actor_trace.output(), beta, h);
  if (pure_pessimism) return detail::actor_gradient(b, qp.actor_trace, -pes.dbonus_da, -pes.bonus.mean());
  return detail::actor_gradient(b, qp.actor_trace, qp.dq_da - pes.dbonus_da, qp.q.mean() - pes.bonus.mean());
}

inline double ptd3_objective(const AgentBundle& b, const fisher::FisherState& f, const Eigen::MatrixXd& s,
                             double beta, bool pure_pessimism) {
  const Eigen::MatrixXd a = nn::forward_batch(b.actor_spec, b.actor, s);
  const Eigen::MatrixXd x = critic_input(s, a);
  const Eigen::MatrixXd g = nn::per_sample_grad_params(b.critic_spec, b.critic1, x);
  const double bonus = beta * f.batch_quadratic(g).quadratic.cwiseSqrt().mean();
  if (pure_pessimism) return -bonus;
  return nn::forward_batch(b.critic_spec, b.critic1, x).mean() - bonus;
}

// --- updates ----------------------------------------------------------------

inline void soft_update(nn::ParamVector& target, const nn::ParamVector& live, double tau) {
  target.values = tau * live.values + (1.0 - tau) * target.values;
}

inline void soft_update_targets(AgentBundle& b, double tau) {
  soft_update(b.critic1_target, b.critic1, tau);
  soft_update(b.critic2_target, b.critic2, tau);
  soft_update(b.actor_target, b.actor, tau);
}

// Draws one transition and folds grad_theta1 Q1(s_j, a_j) into the estimator.
inline void ptd3_fisher_update(const AgentBundle& b, fisher::FisherState& f, const data::TransitionTable& t,
                               std::mt19937_64& fisher_rng) {
  std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
  const auto j = Eigen::Index(pick(fisher_rng));
  Eigen::VectorXd x(t.states.rows() + t.actions.rows());
  x << t.states.col(j), t.actions.col(j);
  f.update(nn::grad_params(b.critic_spec, b.critic1, x), fisher_rng);
}

// --- orchestration ----------------------------------------------------------

struct TrainState {
  AgentBundle bundle;
  Adam actor_opt, critic1_opt, critic2_opt;
  std::optional<fisher::FisherState> fisher;
  std::mt19937_64 rng;
  std::mt19937_64 fisher_rng;
  std::uint64_t step = 0;
};

inline fisher::FisherOptions fisher_options(const PtD3Hyper& h) {
  fisher::FisherOptions o;
  o.alpha = h.fisher_alpha;
  o.noise_variance = h.fisher_noise_variance;
  o.recompute_period = h.recompute_period;
  return o;
}

inline TrainState init_train_state(Algo algo, const data::Dataset& d, const PtD3Hyper& h, std::uint64_t seed) {
  if (d.num_transitions() == 0) throw std::invalid_argument("training needs a non-empty dataset");
  TrainState st{make_bundle(algo, d.state_dim, d.action_dim, h, seed), {}, {}, {}, std::nullopt,
                derive_stream(seed, 1), derive_stream(seed, 2), 0};
  auto& b = st.bundle;
  if (h.normalize) b.norm = data::compute_norm_stats(d);
  st.actor_opt = Adam(b.actor_spec.param_count(), h.actor_lr);
  st.critic1_opt = Adam(b.critic_spec.param_count(), h.critic_lr);
  st.critic2_opt = Adam(b.critic_spec.param_count(), h.critic_lr);
  if (algo == Algo::ptd3) st.fisher.emplace(b.critic_spec.param_count(), fisher_options(h));
  return st;
}

// The table the networks see: states normalized when the bundle carries stats.
inline data::TransitionTable training_table(const data::Dataset& d, const AgentBundle& b) {
  auto t = data::stack(d);
  if (b.norm) {
    t.states = b.norm->apply(t.states);
    t.next_states = b.norm->apply(t.next_states);
  }
  return t;
}

inline void train_step(TrainState& st, const data::TransitionTable& table) {
  auto& b = st.bundle;
  const auto& h = b.hyper;
  ++st.step;
  const Batch batch = sample_batch(table, h.batch_size, st.rng);
  if (b.algo == Algo::bc) {
    st.actor_opt.step(b.actor.values, bc_actor_gradient(b, batch.s, batch.a).loss_grad);
    return;
  }
  td3_critic_update(b, st.critic1_opt, st.critic2_opt, batch, h, st.rng);
  if (st.step % h.policy_delay != 0) return;
  ActorGradient g;
  switch (b.algo) {
    case Algo::td3: g = td3_actor_gradient(b, batch.s); break;
    case Algo::td3bc: g = td3bc_actor_gradient(b, batch.s, batch.a, h.bc_alpha); break;
    case Algo::ptd3:
      ptd3_fisher_update(b, *st.fisher, table, st.fisher_rng);
      g = ptd3_actor_gradient(b, *st.fisher, batch.s, h.beta, h.pure_pessimism, h.mixed_step);
      break;
    case Algo::bc: break;
  }
  st.actor_opt.step(b.actor.values, g.loss_grad);
  soft_update_targets(b, h.tau);
}

class Trainer {
 public:
  Trainer(Algo algo, const data::Dataset& d, const PtD3Hyper& h, std::uint64_t seed)
      : state_(init_train_state(algo, d, h, seed)), table_(training_table(d, state_.bundle)) {}

  // Resume from a saved state; d must be the dataset it was trained on.
  Trainer(const data::Dataset& d, TrainState st) : state_(std::move(st)), table_(training_table(d, state_.bundle)) {
    if (std::size_t(table_.states.rows()) != state_.bundle.state_dim() ||
        std::size_t(table_.actions.rows()) != state_.bundle.action_dim())
      throw std::invalid_argument("resume: dataset dimensions differ from the checkpoint");
  }

  void run(std::size_t steps) {
    for (std::size_t i = 0; i < steps; ++i) train_step(state_, table_);
  }
  // Runs until the configured step count.
  void run_to_end() {
    if (state_.step < state_.bundle.hyper.steps) run(state_.bundle.hyper.steps - state_.step);
  }

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const AgentBundle& bundle() const { return state_.bundle; }
  const data::TransitionTable& table() const { return table_; }

 private:
  TrainState state_;
  data::TransitionTable table_;
};

inline AgentBundle train(Algo algo, const data::Dataset& d, const PtD3Hyper& h, std::uint64_t seed) {
  Trainer t(algo, d, h, seed);
  t.run(h.steps);
  return t.bundle();
}

inline AgentBundle bc_train(const data::Dataset& d, const PtD3Hyper& h, std::uint64_t seed) {
  return train(Algo::bc, d, h, seed);
}

// --- files ------------------------------------------------------------------
//
// Checkpoint: one JSON header line, then six parameter blocks in the order of
// kNetworkNames, each in the diffnet parameter format.

inline constexpr const char* kNetworkNames[] = {"actor",        "critic1",        "critic2",
                                                "actor_target", "critic1_target", "critic2_target"};

inline void write_checkpoint(std::ostream& os, const AgentBundle& b) {
  nlohmann::json header{{"format", "mats-agent"},
                        {"version", 1},
                        {"algo", to_string(b.algo)},
                        {"seed", b.seed},
                        {"hyper", to_json(b.hyper)},
                        {"networks", kNetworkNames}};
  header["normalization"] = b.norm ? data::to_json(*b.norm) : nlohmann::json(nullptr);
  os << header.dump() << '\n';
  nn::write_params(os, b.actor_spec, b.actor);
  nn::write_params(os, b.critic_spec, b.critic1);
  nn::write_params(os, b.critic_spec, b.critic2);
  nn::write_params(os, b.actor_spec, b.actor_target);
  nn::write_params(os, b.critic_spec, b.critic1_target);
  nn::write_params(os, b.critic_spec, b.critic2_target);
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline AgentBundle read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("checkpoint: missing header");
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "mats-agent") throw std::runtime_error("checkpoint: bad format tag");
  if (header.at("version").get<int>() != 1) throw std::runtime_error("checkpoint: unsupported version");
  AgentBundle b;
  b.algo = algo_from_string(header.at("algo").get<std::string>());
  b.seed = header.at("seed").get<std::uint64_t>();
  b.hyper = hyper_from_json(header.at("hyper"));
  if (!header.at("normalization").is_null()) b.norm = data::norm_stats_from_json(header.at("normalization"));
  auto actor = nn::read_params(is);
  auto c1 = nn::read_params(is);
  auto c2 = nn::read_params(is);
  auto actor_t = nn::read_params(is);
  auto c1_t = nn::read_params(is);
  auto c2_t = nn::read_params(is);
  if (!is) throw std::runtime_error("checkpoint: truncated");
  if (!(actor.spec == actor_t.spec) || !(c1.spec == c2.spec) || !(c1.spec == c1_t.spec) || !(c1.spec == c2_t.spec))
    throw std::runtime_error("checkpoint: network shapes disagree");
  if (c1.spec.input_dim != actor.spec.input_dim + actor.spec.output_dim)
    throw std::runtime_error("checkpoint: critic input is not state + action");
  if (b.norm && std::size_t(b.norm->mean.size()) != actor.spec.input_dim)
    throw std::runtime_error("checkpoint: normalization length != state dim");
  b.actor_spec = actor.spec;
  b.critic_spec = c1.spec;
  b.actor = std::move(actor.params);
  b.critic1 = std::move(c1.params);
  b.critic2 = std::move(c2.params);
  b.actor_target = std::move(actor_t.params);
  b.critic1_target = std::move(c1_t.params);
  b.critic2_target = std::move(c2_t.params);
  return b;
}

inline void save_checkpoint(const std::string& path, const AgentBundle& b) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(os, b);
}

inline AgentBundle load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(is);
}

// Full training state: a JSON header line with counters and generator
// states, the checkpoint, then Adam moments (actor, critic1, critic2; m then v)
// and, for PTD3, F followed by its inverse in column-major order.

namespace detail {

inline std::string engine_state(const std::mt19937_64& g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

inline std::mt19937_64 engine_from(const std::string& s) {
  std::istringstream is(s);
  std::mt19937_64 g;
  is >> g;
  if (!is) throw std::runtime_error("train state: bad generator state");
  return g;
}

inline void write_block(std::ostream& os, const double* p, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) nn::detail::write_f64_le(os, p[i]);
}

inline void read_block(std::istream& is, double* p, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) p[i] = nn::detail::read_f64_le(is);
}

}  // namespace detail

inline void save_train_state(const std::string& path, const TrainState& st) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  nlohmann::json adam = nlohmann::json::array();
  for (const Adam* o : {&st.actor_opt, &st.critic1_opt, &st.critic2_opt})
    adam.push_back({{"lr", o->lr}, {"beta1", o->beta1}, {"beta2", o->beta2}, {"eps", o->eps}, {"t", o->t}});
  nlohmann::json header{{"format", "mats-train-state"},
                        {"version", 1},
                        {"step", st.step},
                        {"rng", detail::engine_state(st.rng)},
                        {"fisher_rng", detail::engine_state(st.fisher_rng)},
                        {"adam", adam}};
  if (st.fisher) {
    header["fisher"] = {{"dim", st.fisher->dim()}, {"updates", st.fisher->updates()}};
  } else {
    header["fisher"] = nullptr;
  }
  os << header.dump() << '\n';
  write_checkpoint(os, st.bundle);
  for (const Adam* o : {&st.actor_opt, &st.critic1_opt, &st.critic2_opt}) {
    detail::write_block(os, o->m.data(), o->m.size());
    detail::write_block(os, o->v.data(), o->v.size());
  }
  if (st.fisher) {
    detail::write_block(os, st.fisher->matrix().data(), st.fisher->matrix().size());
    detail::write_block(os, st.fisher->inverse().data(), st.fisher->inverse().size());
  }
  if (!os) throw std::runtime_error("train state: write failed");
}

inline TrainState load_train_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("train state: missing header");
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "mats-train-state" || header.at("version").get<int>() != 1)
    throw std::runtime_error("train state: bad format");
  TrainState st{read_checkpoint(is),
                {},
                {},
                {},
                std::nullopt,
                detail::engine_from(header.at("rng").get<std::string>()),
                detail::engine_from(header.at("fisher_rng").get<std::string>()),
                header.at("step").get<std::uint64_t>()};
  const auto& b = st.bundle;
  Adam* opts[] = {&st.actor_opt, &st.critic1_opt, &st.critic2_opt};
  const std::size_t dims[] = {b.actor_spec.param_count(), b.critic_spec.param_count(), b.critic_spec.param_count()};
  for (int k = 0; k < 3; ++k) {
    const auto& a = header.at("adam").at(k);
    *opts[k] = Adam(dims[k], a.at("lr").get<double>());
    opts[k]->beta1 = a.at("beta1").get<double>();
    opts[k]->beta2 = a.at("beta2").get<double>();
    opts[k]->eps = a.at("eps").get<double>();
    opts[k]->t = a.at("t").get<std::uint64_t>();
    detail::read_block(is, opts[k]->m.data(), opts[k]->m.size());
    detail::read_block(is, opts[k]->v.data(), opts[k]->v.size());
  }
  if (!header.at("fisher").is_null()) {
    const auto d = header.at("fisher").at("dim").get<std::size_t>();
    if (d != b.critic_spec.param_count()) throw std::runtime_error("train state: Fisher dim != critic params");
    const auto n = Eigen::Index(d);
    Eigen::MatrixXd f(n, n), f_inv(n, n);
    detail::read_block(is, f.data(), f.size());
    detail::read_block(is, f_inv.data(), f_inv.size());
    st.fisher.emplace(d, fisher_options(b.hyper));
    st.fisher->restore(std::move(f), std::move(f_inv), header.at("fisher").at("updates").get<std::uint64_t>());
  }
  if (!is) throw std::runtime_error("train state: truncated");
  return st;
}

}  // namespace mats::algo

#endif  // MATS_ALGORITHMS_HPP_
