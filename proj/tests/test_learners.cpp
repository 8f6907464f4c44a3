#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dmfg/envs.hpp"
#include "dmfg/learners.hpp"
#include "support/oracles.hpp"

using namespace dmfg;
using namespace dmfg::learners;

namespace {

/// Linear IL agent on a one-dimensional observation: Q(x) = x W + b.
LearnerConfig scalar_config() {
  LearnerConfig c;
  c.hidden = {};
  c.batch_size = 1;
  c.max_grad_norm = 0.0;
  return c;
}

std::vector<double> random_obs(int n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> o(static_cast<std::size_t>(n));
  for (double& v : o) v = u(rng);
  return o;
}

double chi_square(const std::vector<int>& counts, double expected) {
  double s = 0.0;
  for (int c : counts) s += (c - expected) * (c - expected) / expected;
  return s;
}

}  // namespace

TEST(Algorithm, TagsRoundTripAndErrorsListChoices) {
  for (Algorithm a : {Algorithm::dmfg_ql, Algorithm::dmfg_ac, Algorithm::il, Algorithm::mfq, Algorithm::mfac,
                      Algorithm::scripted}) {
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  }
  try {
    parse_algorithm("dqn");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("dmfg-ql"), std::string::npos) << e.what();
  }
}

TEST(Learner, NetworkOwnershipPerAlgorithm) {
  const LearnerConfig c;
  const AgentLearner ql(Algorithm::dmfg_ql, c, 10, 9, 9, 1);
  EXPECT_TRUE(ql.qnet() && ql.target() && ql.estimator());
  EXPECT_FALSE(ql.actor() || ql.critic());
  EXPECT_EQ(ql.qnet()->input_size(), 19);
  const AgentLearner il(Algorithm::il, c, 10, 9, 9, 1);
  EXPECT_FALSE(il.estimator().has_value());
  EXPECT_EQ(il.qnet()->input_size(), 10);
  const AgentLearner mfq(Algorithm::mfq, c, 10, 9, 9, 1);
  EXPECT_FALSE(mfq.estimator().has_value());
  EXPECT_EQ(mfq.qnet()->input_size(), 19);
  const AgentLearner ac(Algorithm::dmfg_ac, c, 10, 9, 9, 1);
  EXPECT_TRUE(ac.actor() && ac.critic() && ac.estimator());
  EXPECT_EQ(ac.actor()->input_size(), 10);
  EXPECT_EQ(ac.critic()->input_size(), 19);
  const AgentLearner mfac(Algorithm::mfac, c, 10, 9, 9, 1);
  EXPECT_FALSE(mfac.estimator().has_value());
  // Estimator: 2 x 50 relu then softmax over the mean-field width.
  const auto& layers = ql.estimator()->net().layers();
  ASSERT_EQ(layers.size(), 3u);
  EXPECT_EQ(layers[0].weights.cols(), 50);
  EXPECT_EQ(layers[1].weights.cols(), 50);
  EXPECT_EQ(layers[2].activation, nn::Activation::softmax);
  EXPECT_DOUBLE_EQ(ql.estimator()->net().learning_rate(), 1e-2);
}

TEST(ReplayBuffer, UniformSampling) {
  ReplayBuffer buf(100, 77);
  for (int i = 0; i < 100; ++i) buf.push(Experience{{static_cast<double>(i)}, 0, 0.0, {}, Distribution::uniform(1),
                                                    Distribution::uniform(1), true});
  std::vector<int> counts(100, 0);
  for (int draw = 0; draw < 10000; ++draw) {
    const auto idx = buf.sample_indices(10);
    std::set<std::size_t> distinct(idx.begin(), idx.end());
    ASSERT_EQ(distinct.size(), 10u);
    for (std::size_t i : idx) ++counts[i];
  }
  // 1e5 samples, each index expected 1000 times.
  const double sigma = std::sqrt(1e5 * 0.01 * 0.99);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(counts[static_cast<std::size_t>(i)], 1000.0, 3.0 * sigma) << "index " << i;
}

TEST(ReplayBuffer, RingOverwritesOldest) {
  ReplayBuffer buf(3, 1);
  for (int i = 0; i < 5; ++i) {
    buf.push(Experience{{static_cast<double>(i)}, 0, 0.0, {}, Distribution::uniform(1), Distribution::uniform(1), true});
  }
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.at(0).obs[0], 3.0);
  EXPECT_EQ(buf.at(1).obs[0], 4.0);
  EXPECT_EQ(buf.at(2).obs[0], 2.0);
  EXPECT_THROW(buf.sample_indices(4), InvalidInput);
  EXPECT_THROW(ReplayBuffer(0, 1), InvalidInput);
}

TEST(Estimator, ZeroWeightsGiveUniform) {
  MeanFieldEstimator est(6, 4, {50, 50}, 1e-2, 3);
  est.net().fill(0.0);
  Rng rng(1);
  const auto m = est.estimate(random_obs(6, rng), Distribution({0.1, 0.2, 0.3, 0.4}));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(m[i], 0.25);
}

TEST(Estimator, HandComputedLoss) {
  MeanFieldEstimator est(2, 4, {50, 50}, 1e-2, 3);
  est.net().fill(0.0);
  const std::vector<double> obs{0.5, 0.5};
  // Uniform prediction against a point mass: (0.75^2 + 3 * 0.25^2) / 4.
  EXPECT_DOUBLE_EQ(est.train(obs, Distribution::uniform(4), Distribution::point_mass(4, 0)), 0.1875);
  MeanFieldEstimator same(2, 4, {50, 50}, 1e-2, 3);
  same.net().fill(0.0);
  EXPECT_DOUBLE_EQ(same.train(obs, Distribution::uniform(4), Distribution::uniform(4)), 0.0);
}

TEST(Estimator, FitsAConstantMeanField) {
  MeanFieldEstimator est(8, 5, {50, 50}, 1e-2, 11);
  const Distribution c({0.5, 0.2, 0.1, 0.1, 0.1});
  Rng rng(2);
  const auto obs = random_obs(8, rng);
  std::vector<double> losses;
  for (int step = 0; step < 2000; ++step) losses.push_back(est.train(obs, c, c));
  const auto m = est.estimate(obs, c);
  EXPECT_LT(l1_distance(m, c), 0.05);
  double total = 0.0;
  for (double w : m.weights()) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
  // Window-10 means fall across the first 100 steps.
  for (int w = 1; w < 10; ++w) {
    double prev = 0.0, cur = 0.0;
    for (int i = 0; i < 10; ++i) {
      prev += losses[static_cast<std::size_t>((w - 1) * 10 + i)];
      cur += losses[static_cast<std::size_t>(w * 10 + i)];
    }
    EXPECT_LT(cur, prev) << "window " << w;
  }
}

TEST(Epsilon, ScheduleEndpoints) {
  const EpsilonSchedule s{0.2, 0.01, 300};
  EXPECT_DOUBLE_EQ(s.value(0), 0.2);
  EXPECT_DOUBLE_EQ(s.value(299), 0.01);
  EXPECT_DOUBLE_EQ(s.value(1000), 0.01);
  EXPECT_NEAR(s.value(150), 0.2 - 0.19 * 150.0 / 299.0, 1e-15);

  LearnerConfig c;
  c.epsilon.episodes = 4;
  AgentLearner agent(Algorithm::il, c, 3, 2, 2, 1);
  EXPECT_DOUBLE_EQ(agent.epsilon(), 0.2);
  for (int e = 0; e < 3; ++e) agent.end_episode();
  EXPECT_DOUBLE_EQ(agent.epsilon(), 0.01);
  agent.end_episode();
  EXPECT_DOUBLE_EQ(agent.epsilon(), 0.01);
}

TEST(Act, FullExplorationIsUniform) {
  LearnerConfig c;
  c.epsilon = {1.0, 1.0, 10};
  AgentLearner agent(Algorithm::dmfg_ql, c, 5, 9, 9, 4);
  agent.begin_episode();
  std::vector<int> counts(9, 0);
  const std::vector<double> obs{0.1, 0.2, 0.3, 0.4, 0.5};
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(agent.act(obs))];
  // Chi-square with 8 degrees of freedom; 20.09 is the 0.01 critical value.
  EXPECT_LT(chi_square(counts, 10000.0 / 9), 20.09);
}

TEST(Act, GreedyLimitPicksArgmax) {
  LearnerConfig c = scalar_config();
  c.epsilon = {0.0, 0.0, 10};
  c.boltzmann_beta = 1e3;
  AgentLearner agent(Algorithm::il, c, 1, 3, 3, 4);
  agent.qnet()->set_parameters(std::vector<double>{0.1, 0.3, 0.2, 0.0, 0.0, 0.0});
  const std::vector<double> obs{1.0};
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += agent.act(obs) == 1;
  EXPECT_GT(hits / 10000.0, 0.99);
  EXPECT_EQ(agent.act_greedy(obs), 1);
}

TEST(Act, PolicyFollowsTheQOutputsForEachMeanField) {
  LearnerConfig c;
  c.boltzmann_beta = 2.0;
  AgentLearner agent(Algorithm::mfq, c, 4, 5, 5, 9);
  agent.begin_episode();
  const std::vector<double> obs{0.2, 0.4, 0.6, 0.8};
  const Distribution a({0.6, 0.1, 0.1, 0.1, 0.1});
  const Distribution b({0.0, 0.0, 0.0, 0.0, 1.0});
  for (const auto* mf : {&a, &b}) {
    agent.advance(obs, *mf);
    ASSERT_TRUE(std::ranges::equal(agent.policy_mean_field().weights(), mf->weights()));
    const auto q = agent.q_values(obs, *mf);
    const auto soft = oracle::softmax(q, 2.0);
    const auto p = agent.action_distribution(obs);
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(p[k], 0.2 / 5 + 0.8 * soft[static_cast<std::size_t>(k)], 1e-12);
  }
  EXPECT_NE(agent.q_values(obs, a), agent.q_values(obs, b));
}

TEST(Act, ActorCriticSamplesTheActor) {
  AgentLearner agent(Algorithm::mfac, LearnerConfig{}, 3, 4, 4, 2);
  const std::vector<double> obs{0.3, 0.1, 0.9};
  const auto p = agent.action_distribution(obs);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 20000; ++i) ++counts[static_cast<std::size_t>(agent.act(obs))];
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(counts[static_cast<std::size_t>(k)] / 20000.0, p[k], 0.02);
}

TEST(Learn, ZeroDiscountTargetIsTheReward) {
  LearnerConfig c;
  c.gamma = 0.0;
  const AgentLearner agent(Algorithm::dmfg_ql, c, 3, 2, 2, 1);
  Experience e{{0.1, 0.2, 0.3}, 1, 0.75, {0.3, 0.2, 0.1}, Distribution::uniform(2), Distribution::uniform(2), false};
  EXPECT_EQ(agent.td_target(e), 0.75);
}

TEST(Learn, ZeroTargetNetworkGivesTheReward) {
  AgentLearner agent(Algorithm::mfq, LearnerConfig{}, 3, 2, 2, 1);
  agent.target()->fill(0.0);
  Experience e{{0.1, 0.2, 0.3}, 1, -1.25, {0.3, 0.2, 0.1}, Distribution::uniform(2), Distribution::uniform(2), false};
  EXPECT_EQ(agent.td_target(e), -1.25);
  e.terminal = true;
  agent.target()->fill(3.0);
  EXPECT_EQ(agent.td_target(e), -1.25);
}

TEST(Learn, ScalarToyMatchesHandUpdate) {
  AgentLearner agent(Algorithm::il, scalar_config(), 1, 2, 2, 1);
  // Parameter order: W00 W01 b0 b1.
  agent.qnet()->set_parameters(std::vector<double>{0.5, -0.3, 0.1, 0.2});
  agent.target()->set_parameters(std::vector<double>{1.0, 2.0, 0.0, 0.0});
  agent.begin_episode();
  const std::vector<double> obs{1.0}, next{0.5};
  agent.observe(obs, 1, 0.5, next, std::nullopt, false);
  // y = 0.5 + 0.9 * max(0.5, 1.0) = 1.4; Q(s, 1) = -0.1; dL/dQ = 2 * (-1.5).
  const auto loss = agent.learn();
  ASSERT_TRUE(loss.has_value());
  EXPECT_NEAR(*loss, 2.25, 1e-12);
  const auto p = agent.qnet()->parameters();
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], -0.3 + 1e-2 * 3.0, 1e-12);
  EXPECT_NEAR(p[2], 0.1, 1e-15);
  EXPECT_NEAR(p[3], 0.2 + 1e-2 * 3.0, 1e-12);
}

TEST(Learn, SkipsUntilTheBufferHoldsABatch) {
  AgentLearner agent(Algorithm::dmfg_ql, LearnerConfig{}, 2, 2, 2, 1);
  agent.begin_episode();
  const std::vector<double> obs{0.1, 0.2};
  for (int i = 0; i < 63; ++i) agent.observe(obs, 0, 0.0, obs, std::nullopt, false);
  EXPECT_FALSE(agent.learn().has_value());
  agent.observe(obs, 0, 0.0, obs, std::nullopt, false);
  EXPECT_TRUE(agent.learn().has_value());
}

TEST(EndEpisode, FullTauCopiesOnline) {
  LearnerConfig c;
  c.batch_size = 4;
  AgentLearner agent(Algorithm::dmfg_ql, c, 2, 3, 3, 5);
  agent.begin_episode();
  Rng rng(1);
  for (int i = 0; i < 10; ++i) agent.observe(random_obs(2, rng), i % 3, 1.0, random_obs(2, rng), std::nullopt, false);
  agent.learn();
  EXPECT_NE(agent.qnet()->parameters(), agent.target()->parameters());
  agent.end_episode();
  EXPECT_EQ(agent.qnet()->parameters(), agent.target()->parameters());
}

TEST(Decentralization, DmfgActsOnTheCurrentEstimateMfqOnThePreviousObservation) {
  LearnerConfig c;
  c.mf_learning_rate = 0.05;
  AgentLearner dmfg(Algorithm::dmfg_ql, c, 1, 3, 3, 21);
  AgentLearner mfq(Algorithm::mfq, c, 1, 3, 3, 21);
  const Distribution m0({0.8, 0.1, 0.1});
  const Distribution m1({0.1, 0.1, 0.8});
  // The observation reveals the regime; the estimator learns to map it to
  // the mean field of that same tick.
  auto& est = *dmfg.estimator();
  const std::vector<double> lo{0.0}, hi{1.0};
  for (int i = 0; i < 3000; ++i) {
    est.train(lo, m0, m0);
    est.train(hi, m0, m1);
    est.train(hi, m1, m1);
  }
  const int change = 5;
  dmfg.begin_episode();
  mfq.begin_episode();
  for (int t = 0; t < 10; ++t) {
    const Distribution& truth = t < change ? m0 : m1;
    if (t >= 1) {
      const Distribution& last = t - 1 < change ? m0 : m1;
      EXPECT_TRUE(std::ranges::equal(mfq.policy_mean_field().weights(), last.weights())) << "t=" << t;
      EXPECT_LT(l1_distance(dmfg.policy_mean_field(), truth), 0.1) << "t=" << t;
    }
    if (t == change) {
      EXPECT_GT(l1_distance(dmfg.policy_mean_field(), mfq.policy_mean_field()), 1.0);
    }
    if (t == change + 1) {
      EXPECT_LT(l1_distance(dmfg.policy_mean_field(), mfq.policy_mean_field()), 0.1);
    }
    const auto& next = t + 1 < change ? lo : hi;
    dmfg.advance(next, truth);
    mfq.advance(next, truth);
  }
}

TEST(Decentralization, EmptyNeighbourhoodReusesThePreviousObservation) {
  AgentLearner mfq(Algorithm::mfq, LearnerConfig{}, 2, 3, 3, 1);
  mfq.begin_episode();
  const std::vector<double> obs{0.1, 0.2};
  const Distribution seen({0.0, 1.0, 0.0});
  mfq.observe(obs, 0, 0.0, obs, seen, false);
  mfq.observe(obs, 0, 0.0, obs, std::nullopt, false);
  EXPECT_TRUE(std::ranges::equal(mfq.policy_mean_field().weights(), seen.weights()));
  EXPECT_TRUE(std::ranges::equal(mfq.previous_observed().weights(), seen.weights()));
}

TEST(Decentralization, PerAgentSizeIndependentOfPopulation) {
  for (Algorithm a : {Algorithm::dmfg_ql, Algorithm::dmfg_ac, Algorithm::il, Algorithm::mfq, Algorithm::mfac}) {
    std::vector<std::size_t> counts;
    for (int team : {5, 10}) {
      auto grid = envs::default_config(envs::EnvName::battle);
      grid.teams = {{{{envs::Kind::soldier, team}}}, {{{envs::Kind::soldier, team}}}};
      const envs::Env env(envs::EnvName::battle, grid, 1);
      for (const auto& s : env.specs()) {
        const AgentLearner agent(a, LearnerConfig{}, envs::observation_size(s.view_radius), s.action_count,
                                 env.mean_field_width(), derive_seed(1, static_cast<std::uint64_t>(s.id)));
        counts.push_back(agent.parameter_count());
      }
    }
    for (std::size_t k : counts) EXPECT_EQ(k, counts.front()) << to_string(a);
  }
}

TEST(Determinism, SameSeedSameActionsAndWeights) {
  LearnerConfig c;
  c.batch_size = 8;
  for (Algorithm alg : {Algorithm::dmfg_ql, Algorithm::dmfg_ac}) {
    AgentLearner a(alg, c, 4, 3, 3, 99), b(alg, c, 4, 3, 3, 99);
    Rng rng(5);
    a.begin_episode();
    b.begin_episode();
    for (int t = 0; t < 40; ++t) {
      const auto obs = random_obs(4, rng);
      const auto next = random_obs(4, rng);
      const int x = a.act(obs);
      ASSERT_EQ(x, b.act(obs));
      const Distribution seen = Distribution::point_mass(3, t % 3);
      a.observe(obs, x, 0.1 * t, next, seen, false);
      b.observe(obs, x, 0.1 * t, next, seen, false);
    }
    a.end_episode();
    b.end_episode();
    EXPECT_EQ(a.checksum(), b.checksum());
  }
}

TEST(ActorCritic, OnlineUpdateMovesCriticTowardTheTarget) {
  LearnerConfig c;
  c.critic_learning_rate = 0.05;
  AgentLearner agent(Algorithm::dmfg_ac, c, 3, 4, 4, 7);
  agent.begin_episode();
  const std::vector<double> obs{0.5, 0.1, 0.7};
  const auto actor_before = agent.actor()->parameters();
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    agent.begin_episode();
    const auto r = agent.observe(obs, 2, 1.0, {}, Distribution::uniform(4), true);
    ASSERT_TRUE(r.critic_loss.has_value());
    ASSERT_TRUE(r.mf_loss.has_value());
    if (i == 0) first = *r.critic_loss;
    last = *r.critic_loss;
  }
  EXPECT_LT(last, 0.01 * first);
  EXPECT_NE(agent.actor()->parameters(), actor_before);
  // Positive TD errors at action 2 raise its probability.
  EXPECT_GT(agent.action_distribution(obs)[2], 0.25);
  EXPECT_FALSE(agent.learn().has_value());
}

TEST(Scripted, FixedOrRandom) {
  LearnerConfig c;
  c.scripted_action = 3;
  AgentLearner fixed(Algorithm::scripted, c, 2, 9, 9, 1);
  const std::vector<double> obs{0.0, 0.0};
  EXPECT_EQ(fixed.act(obs), 3);
  EXPECT_EQ(fixed.act_greedy(obs), 3);
  EXPECT_EQ(fixed.parameter_count(), 0u);
  c.scripted_action = 9;
  EXPECT_THROW(AgentLearner(Algorithm::scripted, c, 2, 9, 9, 1), InvalidInput);
}

TEST(Checkpoint, RoundTripEveryAlgorithm) {
  const std::filesystem::path dir = std::filesystem::path(DMFG_SCRATCH) / "ckpt";
  std::filesystem::remove_all(dir);
  LearnerConfig c;
  c.batch_size = 4;
  int id = 0;
  Rng rng(3);
  for (Algorithm alg : {Algorithm::dmfg_ql, Algorithm::dmfg_ac, Algorithm::il, Algorithm::mfq, Algorithm::mfac,
                        Algorithm::scripted}) {
    AgentLearner agent(alg, c, 4, 5, 9, 40 + static_cast<std::uint64_t>(id));
    agent.begin_episode();
    for (int t = 0; t < 10; ++t) {
      const auto obs = random_obs(4, rng);
      agent.observe(obs, agent.act(obs), 0.5, random_obs(4, rng), Distribution::uniform(9), false);
    }
    agent.end_episode();
    agent.save(dir, id);
    AgentLearner back = AgentLearner::load(dir, id, c);
    EXPECT_EQ(back.algorithm(), alg);
    EXPECT_EQ(back.checksum(), agent.checksum()) << to_string(alg);
    EXPECT_EQ(back.episodes_done(), 1);
    EXPECT_EQ(back.mf_width(), 9);
    const auto obs = random_obs(4, rng);
    EXPECT_EQ(back.act_greedy(obs), agent.act_greedy(obs));
    ++id;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "agent000.qnet.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "agent000.mf.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "agent001.actor.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "agent001.critic.txt"));
  EXPECT_THROW(AgentLearner::load(dir, 42, c), ConfigError);
}
