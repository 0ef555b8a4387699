#ifndef MATS_FISHER_HPP_
#define MATS_FISHER_HPP_

// Exponentially-weighted Fisher information estimator with a Sherman-Morrison
// inverse, the full-batch reference, and the pessimism bonus.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mats/diffnet.hpp"

namespace mats::fisher {

class FisherError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FisherOptions {
  double alpha = 1.0;
  // Gradients are perturbed with n ~ N(0, noise_variance * I).
  double noise_variance = 1e-9;
  std::size_t recompute_period = 100;  // 0 disables the periodic recompute
  double residual_tolerance = 1e-6;
  // Above this dimension the residual is measured on probe columns only.
  std::size_t full_residual_max_dim = 1024;
  std::size_t residual_probe_columns = 16;
};

// sum_k g_k g_k^T + lambda_r I.
inline Eigen::MatrixXd fisher_full_batch(const std::vector<nn::Gradient>& grads, double lambda_r,
                                         std::size_t dim = 0) {
  if (grads.empty() && lambda_r == 0.0) throw std::invalid_argument("fisher_full_batch: no gradients and lambda_r = 0");
  if (!grads.empty()) dim = std::size_t(grads.front().size());
  if (dim == 0) throw std::invalid_argument("fisher_full_batch: dimension unknown");
  const auto d = Eigen::Index(dim);
  Eigen::MatrixXd f = lambda_r * Eigen::MatrixXd::Identity(d, d);
  for (const auto& g : grads) {
    if (g.size() != d) throw std::invalid_argument("fisher_full_batch: gradient length mismatch");
    f.noalias() += g.values * g.values.transpose();
  }
  return f;
}

class FisherState {
 public:
  FisherState(std::size_t dim, FisherOptions opts = {}) : opts_(opts) {
    if (!(opts.alpha > 0.0 && opts.alpha <= 1.0)) throw std::invalid_argument("FisherState: alpha must be in (0,1]");
    if (opts.noise_variance < 0.0) throw std::invalid_argument("FisherState: noise variance must be >= 0");
    const auto d = Eigen::Index(dim);
    f_ = Eigen::MatrixXd::Identity(d, d);
    f_inv_ = Eigen::MatrixXd::Identity(d, d);
  }

  std::size_t dim() const { return std::size_t(f_.rows()); }
  const FisherOptions& options() const { return opts_; }
  const Eigen::MatrixXd& matrix() const { return f_; }
  const Eigen::MatrixXd& inverse() const { return f_inv_; }
  std::uint64_t updates() const { return t_; }
  double last_residual() const { return last_residual_; }
  double last_drift() const { return last_drift_; }
  std::size_t residual_violations() const { return residual_violations_; }

  // Perturb g with Gaussian noise drawn from rng, then rank_one_update.
  void update(const nn::Gradient& g, std::mt19937_64& rng) {
    check_dim(g.values);
    Eigen::VectorXd noisy = g.values;
    if (opts_.noise_variance > 0.0) {
      std::normal_distribution<double> noise(0.0, std::sqrt(opts_.noise_variance));
      for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy[i] += noise(rng);
    }
    rank_one_update(noisy);
  }

  // F <- alpha F + g g^T with the matching Sherman-Morrison step on the
  // inverse; every recompute_period updates the inverse is rebuilt from F.
  void rank_one_update(const Eigen::VectorXd& g) {
    check_dim(g);
    if (!g.allFinite()) throw FisherError("Fisher update: non-finite gradient");
    const double alpha = opts_.alpha;
    Eigen::VectorXd u = f_inv_ * g;
    const double quad = g.dot(u);
    const double denom = alpha * alpha + alpha * quad;
    if (!(denom > 0.0) || !std::isfinite(denom))
      throw FisherError("Sherman-Morrison denominator " + std::to_string(denom) +
                        " <= 0: estimator lost positive definiteness");
    if (alpha != 1.0) {
      f_ *= alpha;
      f_inv_ *= 1.0 / alpha;
    }
    f_.noalias() += g * g.transpose();
    u *= 1.0 / std::sqrt(denom);
    f_inv_.noalias() -= u * u.transpose();
    ++t_;
    if (opts_.recompute_period > 0 && t_ % opts_.recompute_period == 0) recompute_inverse();
  }

  void recompute_inverse() {
    last_drift_ = residual(f_inv_);
    Eigen::LLT<Eigen::MatrixXd> llt(f_);
    if (llt.info() != Eigen::Success) throw FisherError("Fisher matrix is not positive definite");
    f_inv_ = llt.solve(Eigen::MatrixXd::Identity(f_.rows(), f_.cols()));
    last_residual_ = residual(f_inv_);
    if (last_residual_ >= opts_.residual_tolerance) ++residual_violations_;
  }

  // max |F X - I|, exact for small d and on evenly spaced columns otherwise.
  double residual(const Eigen::MatrixXd& x) const {
    const Eigen::Index d = f_.rows();
    if (std::size_t(d) <= opts_.full_residual_max_dim)
      return (f_ * x - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
    const Eigen::Index probes = std::min<Eigen::Index>(d, Eigen::Index(opts_.residual_probe_columns));
    double worst = 0.0;
    for (Eigen::Index p = 0; p < probes; ++p) {
      const Eigen::Index c = p * (d - 1) / std::max<Eigen::Index>(probes - 1, 1);
      Eigen::VectorXd col = f_ * x.col(c);
      col[c] -= 1.0;
      worst = std::max(worst, col.cwiseAbs().maxCoeff());
    }
    return worst;
  }

  // beta * sqrt(g^T F^-1 g).
  double bonus(const nn::Gradient& g, double beta) const {
    check_dim(g.values);
    return beta * std::sqrt(clamp_radicand(g.values.dot(f_inv_ * g.values)));
  }

  // Quadratic forms g_i^T F^-1 g_i for every column, plus F^-1 G.
  struct BatchQuadratic {
    Eigen::MatrixXd solved;     // F^-1 G
    Eigen::VectorXd quadratic;  // clamped at zero
  };
  BatchQuadratic batch_quadratic(const Eigen::MatrixXd& grads) const {
    if (grads.rows() != f_.rows()) throw std::invalid_argument("batch_quadratic: gradient length mismatch");
    BatchQuadratic out;
    out.solved.noalias() = f_inv_ * grads;
    out.quadratic = grads.cwiseProduct(out.solved).colwise().sum().transpose();
    for (Eigen::Index i = 0; i < out.quadratic.size(); ++i) out.quadratic[i] = clamp_radicand(out.quadratic[i]);
    return out;
  }

  // Restores a previously saved state.
  void restore(Eigen::MatrixXd f, Eigen::MatrixXd f_inv, std::uint64_t updates) {
    if (f.rows() != f_.rows() || f.cols() != f_.cols() || f_inv.rows() != f_.rows() || f_inv.cols() != f_.cols())
      throw std::invalid_argument("FisherState::restore: dimension mismatch");
    f_ = std::move(f);
    f_inv_ = std::move(f_inv);
    t_ = updates;
  }

 private:
  void check_dim(const Eigen::VectorXd& g) const {
    if (g.size() != f_.rows())
      throw std::invalid_argument("Fisher: gradient length " + std::to_string(g.size()) + " != " +
                                  std::to_string(f_.rows()));
  }

  static double clamp_radicand(double q) {
    if (q < -1e-12) throw FisherError("negative quadratic form " + std::to_string(q) + ": inverse is broken");
    return q < 0.0 ? 0.0 : q;
  }

  FisherOptions opts_;
  Eigen::MatrixXd f_;
  Eigen::MatrixXd f_inv_;
  std::uint64_t t_ = 0;
  double last_residual_ = 0.0;
  double last_drift_ = 0.0;
  std::size_t residual_violations_ = 0;
};

}  // namespace mats::fisher

#endif  // MATS_FISHER_HPP_
