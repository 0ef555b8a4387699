#include <gtest/gtest.h>

#include "mats/policies.hpp"

using namespace mats;
using mats::sim::Measurement;

TEST(ThroughputArgmax, PicksLargerCapacity) {
  Measurement m;
  m.lc_wifi = 30;
  m.lc_lte = 10;
  EXPECT_EQ(policy::throughput_argmax(m), 1.0);
  m.lc_wifi = 5;
  m.lc_lte = 9;
  EXPECT_EQ(policy::throughput_argmax(m), 0.0);
  m.lc_wifi = 9;
  EXPECT_EQ(policy::throughput_argmax(m), 1.0);
}

TEST(SystemDefault, DelayRuleLossRuleAndHold) {
  Measurement m;
  m.owd_wifi = 20;
  m.owd_lte = 80;
  EXPECT_EQ(policy::system_default(m, 0.5), 0.53125);
  m.owd_wifi = 80;
  m.owd_lte = 20;
  EXPECT_EQ(policy::system_default(m, 0.5), 0.46875);
  m.owd_wifi = 25;
  EXPECT_EQ(policy::system_default(m, 0.5), 0.5);
  m.flow[sim::kLte].dropped = 0.2;
  EXPECT_EQ(policy::system_default(m, 0.5), 0.53125);
  m.flow[sim::kWifi].dropped = 0.4;
  EXPECT_EQ(policy::system_default(m, 0.5), 0.46875);
}

TEST(SystemDefault, ClampsAtOne) {
  Measurement m;
  m.owd_wifi = 1;
  m.owd_lte = 100;
  EXPECT_EQ(policy::system_default(m, 1.0), 1.0);
  m.owd_wifi = 100;
  m.owd_lte = 1;
  EXPECT_EQ(policy::system_default(m, 0.0), 0.0);
}

TEST(UtilityLogistic, Examples) {
  Measurement m;
  m.tp_out_wifi = m.tp_out_lte = 3.3;
  m.owd_wifi = m.owd_lte = 42;
  EXPECT_EQ(policy::utility_logistic(m), 0.5);
  m.tp_out_wifi = 9;
  m.owd_wifi = 0;
  m.tp_out_lte = 0;
  m.owd_lte = 9;
  EXPECT_NEAR(policy::utility_logistic(m), 0.990099, 1e-6);  // 100/101
  EXPECT_NEAR(policy::utility_logistic(m), 1.0 / (1.0 + std::exp(-2 * std::log(10.0))), 1e-15);
  EXPECT_NEAR(policy::logistic(800), 1.0, 1e-15);
  EXPECT_GT(policy::logistic(-800), -1e-300);
}

TEST(UtilityLogistic, MonotoneAndStrictlyInside) {
  Measurement m;
  m.tp_out_lte = 2;
  m.owd_lte = 20;
  m.owd_wifi = 20;
  double prev = 0.0;
  for (double tp = 0; tp < 40; tp += 0.5) {
    m.tp_out_wifi = tp;
    const double v = policy::utility_logistic(m);
    EXPECT_GT(v, prev);
    EXPECT_LT(v, 1.0);
    prev = v;
  }
  m.tp_out_wifi = 2;
  prev = 1.0;
  for (double d = 1; d < 1000; d *= 1.5) {
    m.owd_wifi = d;
    const double v = policy::utility_logistic(m);
    EXPECT_LT(v, prev);
    EXPECT_GT(v, 0.0);
    prev = v;
  }
}

TEST(Heuristics, NamesRoundTrip) {
  for (auto k : policy::kAllHeuristics) EXPECT_EQ(policy::heuristic_from_string(policy::to_string(k)), k);
  EXPECT_THROW(policy::heuristic_from_string("greedy"), std::invalid_argument);
}

TEST(Heuristics, RolloutProperties) {
  sim::SimConfig c;
  c.seed = 4;
  for (auto kind : policy::kAllHeuristics) {
    env::Env e(c);
    auto r = e.reset();
    std::vector<double> prev(4, 0.5);
    for (int t = 0; t < 2000; ++t) {
      auto a = policy::act(kind, r.measurements);
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (kind == policy::HeuristicKind::throughput_argmax) ASSERT_TRUE(a[i] == 0.0 || a[i] == 1.0);
        if (kind == policy::HeuristicKind::system_default) ASSERT_LE(std::abs(a[i] - prev[i]), 1.0 / 32 + 1e-15);
        if (kind == policy::HeuristicKind::utility_logistic) ASSERT_TRUE(a[i] > 0.0 && a[i] < 1.0);
      }
      prev = a;
      r = e.step(a);
    }
  }
}
