#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "mats/data.hpp"

using namespace mats;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mats_test_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

sim::SimConfig short_config(std::size_t steps) {
  sim::SimConfig c;
  c.steps_per_episode = steps;
  return c;
}

// A dataset whose features are exactly the given 60-dim columns.
data::Dataset from_features(const Eigen::MatrixXd& phi) {
  data::Dataset d{"synthetic", "0", 56, 4, {}};
  const auto n = phi.cols();
  data::Episode e{0, phi.topRows(56), phi.bottomRows(4), Eigen::VectorXd::Zero(n), phi.topRows(56)};
  d.episodes.push_back(e);
  return d;
}

// Characteristic polynomial by Faddeev-LeVerrier; coefficients c[0..n] of
// det(xI - A) = x^n + c[1] x^{n-1} + ... + c[n].
std::vector<double> char_poly(const Eigen::MatrixXd& a) {
  const auto n = a.rows();
  std::vector<double> c(std::size_t(n) + 1, 0.0);
  c[0] = 1.0;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    m = a * m + c[std::size_t(k - 1)] * Eigen::MatrixXd::Identity(n, n);
    c[std::size_t(k)] = -(a * m).trace() / double(k);
  }
  return c;
}

double eval_poly(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (double ck : c) v = v * x + ck;
  return v;
}

// Real roots by sign-change scan plus bisection inside a Gershgorin bound.
std::vector<double> real_roots(const std::vector<double>& c, double bound) {
  std::vector<double> roots;
  const int grid = 200000;
  double x0 = -bound, f0 = eval_poly(c, x0);
  for (int i = 1; i <= grid; ++i) {
    const double x1 = -bound + 2 * bound * i / grid, f1 = eval_poly(c, x1);
    if ((f0 < 0) != (f1 < 0)) {
      double lo = x0, hi = x1;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        ((eval_poly(c, mid) < 0) == (eval_poly(c, lo) < 0) ? lo : hi) = mid;
      }
      roots.push_back(0.5 * (lo + hi));
    }
    x0 = x1;
    f0 = f1;
  }
  return roots;
}

}  // namespace

TEST(Collect, FencepostAndShapes) {
  auto d = data::collect(short_config(100), policy::HeuristicKind::utility_logistic, 1, 0);
  ASSERT_EQ(d.episodes.size(), 1u);
  EXPECT_EQ(d.num_transitions(), 99u);
  EXPECT_EQ(d.episodes[0].states.rows(), 56);
  EXPECT_EQ(d.episodes[0].actions.rows(), 4);
  // s' of one row is s of the next
  EXPECT_EQ(d.episodes[0].next_states.col(10), d.episodes[0].states.col(11));
}

TEST(Collect, ArgmaxActionsAreExtreme) {
  auto d = data::collect(short_config(300), policy::HeuristicKind::throughput_argmax, 2, 5);
  for (const auto& e : d.episodes) EXPECT_TRUE((e.actions.array() == 0.0 || e.actions.array() == 1.0).all());
}

TEST(Collect, RecordedActionIsAppliedSplit) {
  auto d = data::collect(short_config(200), policy::HeuristicKind::utility_logistic, 1, 3);
  const auto& e = d.episodes[0];
  for (Eigen::Index k = 0; k < Eigen::Index(e.size()); ++k)
    for (Eigen::Index i = 0; i < 4; ++i) {
      ASSERT_EQ(e.actions(i, k), e.next_states(i * 14 + env::sr_wifi, k));
      ASSERT_EQ(e.actions(i, k), env::quantize(e.actions(i, k)));
    }
}

TEST(Collect, ByteIdenticalFiles) {
  TempDir a("a"), b("b");
  auto cfg = short_config(150);
  data::save_dataset(data::collect(cfg, policy::HeuristicKind::utility_logistic, 2, 0), a.path);
  data::save_dataset(data::collect(cfg, policy::HeuristicKind::utility_logistic, 2, 0), b.path);
  const auto fa = data::episode_files(a.path), fb = data::episode_files(b.path);
  ASSERT_EQ(fa.size(), 2u);
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_EQ(slurp(fa[i]), slurp(fb[i]));
}

TEST(DatasetFiles, RoundTripExact) {
  TempDir dir("rt");
  auto d = data::collect(short_config(120), policy::HeuristicKind::system_default, 3, 10);
  data::save_dataset(d, dir.path);
  EXPECT_EQ(data::load_dataset(dir.path), d);
}

TEST(DatasetFiles, RejectsMixedConfigs) {
  TempDir dir("mix");
  data::save_dataset(data::collect(short_config(50), policy::HeuristicKind::system_default, 1, 0), dir.path);
  auto other = short_config(50);
  other.input_rate_mbps = 8;
  data::save_dataset(data::collect(other, policy::HeuristicKind::system_default, 1, 1), dir.path);
  EXPECT_THROW(data::load_dataset(dir.path), std::runtime_error);
  EXPECT_THROW(data::load_dataset(dir.path / "missing"), std::runtime_error);
}

TEST(ConfigHash, IgnoresSeedOnly) {
  sim::SimConfig a, b;
  b.seed = 123;
  EXPECT_EQ(data::config_hash(a), data::config_hash(b));
  b.num_users = 3;
  EXPECT_NE(data::config_hash(a), data::config_hash(b));
  EXPECT_EQ(data::config_hash(a).size(), 16u);
}

TEST(Featurize, Examples) {
  EXPECT_TRUE(data::featurize(Eigen::VectorXd::Zero(56), Eigen::VectorXd::Zero(4)).isZero(0.0));
  Eigen::VectorXd s = Eigen::VectorXd::Zero(56);
  s[0] = 2.5;
  auto phi = data::featurize(s, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(phi.size(), 60);
  EXPECT_EQ(phi[0], 2.5);
  EXPECT_EQ(phi.tail(59).cwiseAbs().sum(), 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < 56; ++i) s[i] = n(rng);
  EXPECT_EQ(data::featurize(s, Eigen::VectorXd::Ones(4)).head(56), s);
  EXPECT_THROW(data::featurize(Eigen::VectorXd::Zero(55), Eigen::VectorXd::Zero(4)), std::invalid_argument);
}

TEST(Coverage, RankOneFeatures) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(60, 80);
  phi.row(0).setOnes();
  auto r = data::coverage(from_features(phi));
  EXPECT_EQ(r.lambda_min, 0.0);
  EXPECT_NEAR(r.lambda_max, 1.0, 1e-12);
  EXPECT_TRUE(std::isinf(r.condition_number));
  EXPECT_EQ(r.null_dim, 59u);
  EXPECT_EQ(r.feature_dim, 60u);
}

TEST(Coverage, SignedBasisGivesScaledIdentity) {
  Eigen::MatrixXd phi(60, 120);
  phi << Eigen::MatrixXd::Identity(60, 60), -Eigen::MatrixXd::Identity(60, 60);
  auto r = data::coverage(from_features(phi));
  EXPECT_NEAR(r.lambda_min, 1.0 / 60, 1e-15);
  EXPECT_NEAR(r.lambda_max, 1.0 / 60, 1e-15);
  EXPECT_NEAR(r.condition_number, 1.0, 1e-12);
  EXPECT_EQ(r.null_dim, 0u);
}

TEST(Coverage, Errors) {
  data::Dataset empty{"x", "0", 56, 4, {}};
  EXPECT_THROW(data::coverage(empty), std::invalid_argument);
  EXPECT_THROW(data::coverage(from_features(Eigen::MatrixXd::Ones(60, 10))), std::invalid_argument);
}

TEST(Jacobi, MatchesCharacteristicPolynomialRoots) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd b(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) b.data()[i] = n(rng);
    const Eigen::MatrixXd a = b * b.transpose();
    double bound = 0.0;
    for (Eigen::Index i = 0; i < 4; ++i) bound = std::max(bound, a.row(i).cwiseAbs().sum());
    auto roots = real_roots(char_poly(a), bound * 1.01 + 1e-3);
    auto jac = data::jacobi_eigenvalues(a);
    ASSERT_EQ(roots.size(), 4u) << "trial " << trial;
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(jac.eigenvalues[i], roots[std::size_t(i)], 1e-8);
    EXPECT_LT(jac.off_norm, 1e-10);
  }
}

TEST(Jacobi, RejectsNonSquare) { EXPECT_THROW(data::jacobi_eigenvalues(Eigen::MatrixXd(3, 4)), std::invalid_argument); }

TEST(Coverage, RayleighQuotientsBoundedBelowByLambdaMin) {
  auto d = data::collect(short_config(400), policy::HeuristicKind::utility_logistic, 1, 2);
  const Eigen::MatrixXd c = data::feature_second_moment(d);
  auto r = data::coverage_from_matrix(c);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int k = 0; k < 10000; ++k) {
    Eigen::VectorXd v(60);
    for (Eigen::Index i = 0; i < 60; ++i) v[i] = n(rng);
    v.normalize();
    ASSERT_GE(v.dot(c * v), r.lambda_min - 1e-8);
    ASSERT_LE(v.dot(c * v), r.lambda_max * (1 + 1e-9));
  }
}

TEST(Coverage, SecondMomentMatchesDirectSum) {
  auto d = data::collect(short_config(90), policy::HeuristicKind::system_default, 2, 0);
  Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(60, 60);
  for (const auto& e : d.episodes)
    for (std::size_t k = 0; k < e.size(); ++k) {
      auto t = e.at(k);
      auto phi = data::featurize(t.s, t.a);
      direct += phi * phi.transpose();
    }
  direct /= double(d.num_transitions());
  const auto c = data::feature_second_moment(d);
  EXPECT_LT((c - direct).cwiseAbs().maxCoeff(), 1e-9 * direct.cwiseAbs().maxCoeff());
  EXPECT_EQ(c, c.transpose());
}

TEST(Coverage, JsonEncodesInfinity) {
  data::CoverageReport r;
  r.condition_number = std::numeric_limits<double>::infinity();
  r.condition_number_range = 3.0;
  auto j = data::to_json(r);
  EXPECT_EQ(j["condition_number"], "inf");
  EXPECT_EQ(j["condition_number_range"], 3.0);
}

TEST(Normalize, ConstantFeatureAndMoments) {
  auto d = data::collect(short_config(300), policy::HeuristicKind::utility_logistic, 2, 0);
  auto nd = data::normalize(d);
  const auto t = data::stack(nd.dataset);
  const double k = double(t.size());
  for (Eigen::Index r = 0; r < t.states.rows(); ++r) {
    const double mean = t.states.row(r).sum() / k;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    if (nd.stats.std[r] > data::kStdFloor) {
      EXPECT_NEAR((t.states.row(r).array() - mean).square().sum() / k, 1.0, 1e-9);
    } else {
      EXPECT_LT(t.states.row(r).cwiseAbs().maxCoeff(), 1e-6) << "row " << r;
    }
  }
  // pos_y is identically zero in the default configuration
  EXPECT_EQ(nd.stats.std[env::pos_y], data::kStdFloor);
  EXPECT_TRUE(t.states.row(env::pos_y).isZero(0.0));
}

TEST(Normalize, InvertAndIdempotence) {
  auto d = data::collect(short_config(200), policy::HeuristicKind::system_default, 1, 4);
  auto nd = data::normalize(d);
  const auto& raw = d.episodes[0].states;
  EXPECT_LT((nd.stats.invert(nd.stats.apply(raw)) - raw).cwiseAbs().maxCoeff(), 1e-12 * raw.cwiseAbs().maxCoeff());
  auto twice = data::normalize(nd.dataset);
  EXPECT_LT((twice.dataset.episodes[0].states - nd.dataset.episodes[0].states).cwiseAbs().maxCoeff(), 1e-12);
  auto j = data::to_json(nd.stats);
  EXPECT_EQ(data::norm_stats_from_json(j), nd.stats);
}
