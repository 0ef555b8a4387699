#include <gtest/gtest.h>

#include <random>

#include "mats/simnet.hpp"

using namespace mats::sim;

namespace {

// One UE parked right under the first AP, fluid input.
SimState single_ue_state(SimConfig c = {}) {
  c.num_users = 1;
  c.user_speed = 0.0;
  auto s = init_episode(c);
  s.ues[0].position = {30, 0, 1.5};
  return s;
}

}  // namespace

TEST(InitEpisode, DeterministicPerSeed) {
  SimConfig c;
  c.seed = 42;
  auto a = init_episode(c), b = init_episode(c);
  for (std::size_t i = 0; i < a.ues.size(); ++i) {
    EXPECT_EQ(a.ues[i].position, b.ues[i].position);
    EXPECT_EQ(a.ues[i].direction, 1);
    EXPECT_EQ(a.ues[i].sr_wifi, 0.5);
    EXPECT_EQ(a.ues[i].backlog[kWifi], 0.0);
    EXPECT_GE(a.ues[i].position.x, c.min_x);
    EXPECT_LE(a.ues[i].position.x, c.max_x);
  }
}

TEST(NearestAp, RuleAndTieBreak) {
  SimConfig c;
  EXPECT_EQ(nearest_ap(c, {31, 0, 1.5}), 0u);
  EXPECT_EQ(nearest_ap(c, {49, 0, 1.5}), 1u);
  EXPECT_EQ(nearest_ap(c, {40, 0, 1.5}), 0u);
}

TEST(MoveUes, StepAndReflection) {
  SimConfig c;
  c.num_users = 3;
  auto s = init_episode(c);
  s.ues[0].position.x = 10;
  s.ues[1].position.x = 79.95;
  s.ues[2].position.x = 0;
  s.ues[2].direction = -1;
  move_ues(s, 0.1);
  EXPECT_DOUBLE_EQ(s.ues[0].position.x, 10.1);
  EXPECT_NEAR(s.ues[1].position.x, 79.95, 1e-12);
  EXPECT_EQ(s.ues[1].direction, -1);
  EXPECT_EQ(s.ues[2].direction, 1);
  EXPECT_NEAR(s.ues[2].position.x, 0.1, 1e-12);
}

TEST(MoveUes, StaysInRangeForAMillionSteps) {
  SimConfig c;
  c.seed = 3;
  auto s = init_episode(c);
  for (int t = 0; t < 1000000; ++t) {
    move_ues(s, c.interval_s);
    for (const auto& ue : s.ues) ASSERT_TRUE(ue.position.x >= c.min_x && ue.position.x <= c.max_x);
  }
}

TEST(LinkCapacity, PowerLawClampAndFloor) {
  SimConfig c;
  EXPECT_EQ(link_capacity(c, {0, 0, 0}, {5, 0, 0}, LinkType::wifi), 75.0);
  EXPECT_EQ(link_capacity(c, {0, 0, 0}, {10, 0, 0}, LinkType::lte), 37.0);
  EXPECT_DOUBLE_EQ(link_capacity(c, {0, 0, 0}, {20, 0, 0}, LinkType::wifi), 18.75);
  EXPECT_EQ(link_capacity(c, {0, 0, 0}, {1e6, 0, 0}, LinkType::wifi), 0.1);
}

TEST(SharedCapacity, EqualAirtime) {
  EXPECT_EQ(shared_capacity({42.0}, {0}), std::vector<double>{42.0});
  EXPECT_EQ(shared_capacity({40.0, 20.0}, {1, 1}), (std::vector<double>{20.0, 10.0}));
  EXPECT_EQ(shared_capacity({37, 37, 37, 37}, {0, 0, 0, 0}), (std::vector<double>(4, 9.25)));
  EXPECT_EQ(shared_capacity({40.0, 20.0}, {0, 1}), (std::vector<double>{40.0, 20.0}));
}

TEST(AdvanceInterval, UncongestedWifi) {
  auto s = single_ue_state();
  auto m = advance_interval(s, {1.0})[0];
  EXPECT_DOUBLE_EQ(m.tp_out_wifi, 6.0);
  EXPECT_DOUBLE_EQ(m.owd_wifi, 1.0);
  EXPECT_EQ(m.tp_out_lte, 0.0);
  EXPECT_EQ(m.sr_wifi, 1.0);
  EXPECT_EQ(m.sr_lte, 0.0);
}

TEST(AdvanceInterval, HalfServedQueueDelay) {
  SimConfig c;
  c.wifi_peak_rate = 3.0;
  auto s = single_ue_state(c);
  auto m = advance_interval(s, {1.0})[0];
  EXPECT_DOUBLE_EQ(m.lc_wifi, 3.0);
  EXPECT_NEAR(m.flow[kWifi].arrivals, 0.6, 1e-15);
  EXPECT_NEAR(m.flow[kWifi].served, 0.3, 1e-15);
  EXPECT_NEAR(m.flow[kWifi].backlog_after, 0.3, 1e-15);
  EXPECT_NEAR(m.owd_wifi, 1.0 + 100.0, 1e-9);
  EXPECT_NEAR(m.owd_max_wifi, 101.0, 1e-9);  // start of interval was 1 ms
}

TEST(AdvanceInterval, BacklogCapDrops) {
  SimConfig c;
  c.wifi_peak_rate = 3.0;
  auto s = single_ue_state(c);
  double dropped = 0.0;
  Measurement m;
  for (int t = 0; t < 200; ++t) {
    m = advance_interval(s, {1.0})[0];
    dropped += m.dropped_wifi();
    ASSERT_LE(s.ues[0].backlog[kWifi], 3.0 + 1e-12);
  }
  EXPECT_NEAR(s.ues[0].backlog[kWifi], 3.0, 1e-12);
  EXPECT_GT(dropped, 0.0);
  EXPECT_NEAR(m.dropped_wifi(), 0.3, 1e-12);
  EXPECT_EQ(m.owd_wifi, 1000.0);
}

TEST(AdvanceInterval, FloorCapacityMeansMaxDelay) {
  SimConfig c;
  c.num_users = 1;
  auto s = init_episode(c);
  s.ues[0].position = {1e7, 0, 1.5};
  s.config.max_x = 2e7;
  auto m = advance_interval(s, {0.5})[0];
  EXPECT_EQ(m.lc_wifi, c.min_link_rate);
  EXPECT_EQ(m.owd_wifi, c.dy_max_ms);
}

TEST(AdvanceInterval, RejectsBadSplits) {
  SimConfig c;
  auto s = init_episode(c);
  EXPECT_THROW(advance_interval(s, {0.5, 0.5, 1.5, 0.0}), std::invalid_argument);
  EXPECT_THROW(advance_interval(s, {0.5, -0.1, 0.5, 0.0}), std::invalid_argument);
  EXPECT_THROW(advance_interval(s, {0.5}), std::invalid_argument);
}

class Conservation : public ::testing::TestWithParam<bool> {};

TEST_P(Conservation, HoldsEveryIntervalWithBoundedDelays) {
  SimConfig c;
  c.poisson_arrivals = GetParam();
  c.seed = 11;
  auto s = init_episode(c);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20000; ++t) {
    std::vector<double> sr(c.num_users);
    for (auto& v : sr) v = u(rng);
    for (const auto& m : advance_interval(s, sr)) {
      for (auto k : {kWifi, kLte}) {
        ASSERT_LT(std::abs(m.flow[k].residual()), 1e-9);
        ASSERT_GE(m.flow[k].dropped, 0.0);
      }
      ASSERT_GE(m.owd_wifi, c.wifi_prop_delay_ms);
      ASSERT_GE(m.owd_lte, c.lte_prop_delay_ms);
      ASSERT_LE(m.owd_max_wifi, c.dy_max_ms);
      ASSERT_LE(m.owd_max_lte, c.dy_max_ms);
      ASSERT_LE(m.owd_wifi, m.owd_max_wifi);
      ASSERT_LE(m.tp_out_wifi, m.lc_wifi + 1e-12);
      ASSERT_LE(m.tp_out_lte, m.lc_lte + 1e-12);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Arrivals, Conservation, ::testing::Values(false, true));

TEST(AdvanceInterval, BitIdenticalReplay) {
  for (bool poisson : {false, true}) {
    SimConfig c;
    c.poisson_arrivals = poisson;
    c.seed = 77;
    auto a = init_episode(c), b = init_episode(c);
    for (int t = 0; t < 2000; ++t) {
      const double v = (t % 33) / 32.0;
      std::vector<double> sr{v, 1 - v, 0.5, v};
      auto ma = advance_interval(a, sr), mb = advance_interval(b, sr);
      for (std::size_t i = 0; i < ma.size(); ++i) {
        ASSERT_EQ(ma[i].owd_wifi, mb[i].owd_wifi);
        ASSERT_EQ(ma[i].tp_in, mb[i].tp_in);
        ASSERT_EQ(ma[i].x, mb[i].x);
      }
    }
  }
}

TEST(AdvanceInterval, WifiArrivalsMonotoneInSplit) {
  SimConfig c;
  c.poisson_arrivals = true;
  c.seed = 8;
  double prev = -1.0;
  for (int k = 0; k <= 32; ++k) {
    auto s = init_episode(c);
    auto m = advance_interval(s, std::vector<double>(c.num_users, k / 32.0));
    EXPECT_GE(m[0].flow[kWifi].arrivals, prev);
    prev = m[0].flow[kWifi].arrivals;
  }
}

TEST(Config, JsonSubset) {
  auto j = nlohmann::json::parse(R"({
    "enb_locations": {"x": 40, "y": 0, "z": 3},
    "ap_locations": [{"x": 30, "y": 0, "z": 3}, {"x": 50, "y": 0, "z": 3}],
    "num_users": 4,
    "user_location_range": {"min_x": 0, "max_x": 80, "min_y": 0, "max_y": 0, "z": 1.5},
    "steps_per_episode": 3200,
    "random_seed": 129,
    "measurement_interval_ms": 100,
    "min_udp_rate_per_user_mbps": 6,
    "max_udp_rate_per_user_mbps": 6
  })");
  auto c = config_from_json(j);
  EXPECT_EQ(c.steps_per_episode, 3200u);
  EXPECT_EQ(c.seed, 129u);
  EXPECT_DOUBLE_EQ(c.interval_s, 0.1);
  EXPECT_EQ(c.ap_locations.size(), 2u);
  EXPECT_EQ(c.enb_location, (Vec3{40, 0, 3}));
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    config_from_json(nlohmann::json::parse(R"({"num_users": 2, "qos_flows": 1})"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("qos_flows"), std::string::npos);
  }
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"user_location_range": {"w": 1}})")), ConfigError);
}

TEST(Config, RejectsUnequalRatesAndInvalidValues) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(
                   R"({"min_udp_rate_per_user_mbps": 2, "max_udp_rate_per_user_mbps": 6})")),
               ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"num_users": 0})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"user_location_range": {"min_x": 5, "max_x": 5}})")),
               std::invalid_argument);
}
