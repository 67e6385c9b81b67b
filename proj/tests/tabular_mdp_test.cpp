#include "simground/tabular_mdp.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "simground/rng.hpp"
#include "test_support.hpp"

using namespace simground;
using simground::testing::iterative_policy_evaluation;
using simground::testing::monte_carlo_marginal;
using simground::testing::random_mdp;
using simground::testing::random_policy;

namespace {

TabularMdp single_state_mdp(double reward_value, double gamma) {
  Tensor3 t(1, 1, 1);
  t(0, 0, 0) = 1.0;
  Tensor3 r(1, 1, 1);
  r(0, 0, 0) = reward_value;
  Eigen::VectorXd rho0(1);
  rho0 << 1.0;
  return TabularMdp(std::move(t), std::move(r), gamma, std::move(rho0));
}

}  // namespace

TEST(TabularMdp, RejectsNonStochasticRows) {
  Tensor3 t(2, 1, 2);
  t(0, 0, 0) = 0.7;
  t(0, 0, 1) = 0.2;  // sums to 0.9
  t(1, 0, 1) = 1.0;
  Tensor3 r(2, 1, 2);
  Eigen::VectorXd rho0(2);
  rho0 << 1.0, 0.0;
  EXPECT_THROW(TabularMdp(std::move(t), std::move(r), 0.9, std::move(rho0)),
               std::invalid_argument);
}

TEST(TabularMdp, RenormalizesNearStochasticRows) {
  Tensor3 t(1, 1, 1);
  t(0, 0, 0) = 1.0 + 5e-10;  // within the renormalization tolerance
  Tensor3 r(1, 1, 1);
  Eigen::VectorXd rho0(1);
  rho0 << 1.0;
  TabularMdp mdp(std::move(t), std::move(r), 0.5, std::move(rho0));
  EXPECT_DOUBLE_EQ(mdp.transition(0, 0, 0), 1.0);
}

TEST(TabularMdp, RejectsDiscountOfOne) {
  Tensor3 t(1, 1, 1);
  t(0, 0, 0) = 1.0;
  Tensor3 r(1, 1, 1);
  Eigen::VectorXd rho0(1);
  rho0 << 1.0;
  EXPECT_THROW(TabularMdp(std::move(t), std::move(r), 1.0, std::move(rho0)),
               std::invalid_argument);
}

TEST(Marginal, SingleStateIsPointMass) {
  const TabularMdp mdp = single_state_mdp(0.0, 0.7);
  const auto rho = marginal_transition_distribution(mdp, TabularPolicy::uniform(1, 1));
  EXPECT_NEAR(rho.rho(0, 0, 0), 1.0, 1e-12);
}

TEST(Marginal, TwoStateChainSplitsGeometrically) {
  // Both states feed into s1; with gamma = 0.5 and all mass starting at s0,
  // the first transition carries (1-gamma) * 1 = 0.5 of the mass and the
  // rest accumulates on the self-loop at s1.
  Tensor3 t(2, 1, 2);
  t(0, 0, 1) = 1.0;
  t(1, 0, 1) = 1.0;
  Tensor3 r(2, 1, 2);
  Eigen::VectorXd rho0(2);
  rho0 << 1.0, 0.0;
  TabularMdp mdp(std::move(t), std::move(r), 0.5, std::move(rho0));
  const auto rho = marginal_transition_distribution(mdp, TabularPolicy::uniform(2, 1));
  EXPECT_NEAR(rho.rho(0, 0, 1), 0.5, 1e-12);
  EXPECT_NEAR(rho.rho(1, 0, 1), 0.5, 1e-12);
  EXPECT_NEAR(rho.rho(0, 0, 0), 0.0, 1e-12);
}

TEST(Marginal, SumsToOneOnRandomInstances) {
  Rng rng(20240801);
  for (int i = 0; i < 100; ++i) {
    const TabularMdp mdp = random_mdp(rng, 2 + rng.randint(5), 1 + rng.randint(3),
                                      rng.uniform(0.2, 0.97));
    const auto policy = random_policy(rng, mdp.n_states, mdp.n_actions);
    const auto rho = marginal_transition_distribution(mdp, policy);
    EXPECT_NEAR(rho.rho.sum(), 1.0, 1e-9);
    for (double x : rho.rho.flat()) EXPECT_GE(x, 0.0);
  }
}

TEST(Marginal, MatchesMonteCarloEstimate) {
  Rng rng(7);
  const TabularMdp mdp = random_mdp(rng, 4, 2, 0.9);
  const auto policy = random_policy(rng, 4, 2);
  const auto rho = marginal_transition_distribution(mdp, policy);
  Rng sample_rng(99);
  const Tensor3 estimate = monte_carlo_marginal(mdp, policy, 100000, sample_rng);
  EXPECT_LT(tv_distance(rho.rho, estimate), 0.01);
}

TEST(Marginal, MonteCarloConvergesWithSampleCount) {
  Rng rng(13);
  const TabularMdp mdp = random_mdp(rng, 3, 2, 0.85);
  const auto policy = random_policy(rng, 3, 2);
  const auto rho = marginal_transition_distribution(mdp, policy);
  Rng r1(5), r2(5);
  const double tv_small = tv_distance(rho.rho, monte_carlo_marginal(mdp, policy, 1000, r1));
  const double tv_large = tv_distance(rho.rho, monte_carlo_marginal(mdp, policy, 100000, r2));
  EXPECT_LT(tv_large, tv_small);
}

TEST(ExpectedReturn, ConstantRewardGivesGeometricSum) {
  Rng rng(3);
  const TabularMdp mdp = random_mdp(rng, 3, 2, 0.9);
  const auto policy = random_policy(rng, 3, 2);
  const auto rho = marginal_transition_distribution(mdp, policy);
  Tensor3 ones(3, 2, 3, 1.0);
  EXPECT_NEAR(expected_return_from_marginal(rho, ones, 0.9), 10.0, 1e-9);
  Tensor3 zeros(3, 2, 3, 0.0);
  EXPECT_NEAR(expected_return_from_marginal(rho, zeros, 0.9), 0.0, 1e-12);
}

TEST(ExpectedReturn, AgreesWithPolicyEvaluation) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const TabularMdp mdp = random_mdp(rng, 4, 2, 0.9);
    const auto policy = random_policy(rng, 4, 2);
    const auto rho = marginal_transition_distribution(mdp, policy);
    const double from_marginal = expected_return_from_marginal(rho, mdp.reward, mdp.discount);
    const Eigen::VectorXd v = policy_evaluation(mdp, policy);
    const double from_values = mdp.initial_dist.dot(v);
    EXPECT_NEAR(from_marginal, from_values, 1e-9);
  }
}

TEST(PolicyEvaluation, ZeroRewardGivesZeroValues) {
  Rng rng(17);
  TabularMdp mdp = random_mdp(rng, 4, 3, 0.95);
  for (auto& r : mdp.reward.flat()) r = 0.0;
  const Eigen::VectorXd v = policy_evaluation(mdp, random_policy(rng, 4, 3));
  EXPECT_LT(v.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PolicyEvaluation, SingleStateClosedForm) {
  const TabularMdp mdp = single_state_mdp(0.3, 0.9);
  const Eigen::VectorXd v = policy_evaluation(mdp, TabularPolicy::uniform(1, 1));
  EXPECT_NEAR(v[0], 0.3 / (1.0 - 0.9), 1e-10);
}

TEST(PolicyEvaluation, MatchesIterativeOracle) {
  Rng rng(23);
  const TabularMdp mdp = random_mdp(rng, 5, 3, 0.9);
  const auto policy = random_policy(rng, 5, 3);
  const Eigen::VectorXd exact = policy_evaluation(mdp, policy);
  const Eigen::VectorXd iterated = iterative_policy_evaluation(mdp, policy, 10000);
  EXPECT_LT((exact - iterated).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PolicyEvaluation, BellmanResidualIsTiny) {
  Rng rng(29);
  const TabularMdp mdp = random_mdp(rng, 6, 2, 0.97);
  const auto policy = random_policy(rng, 6, 2);
  const Eigen::VectorXd v = policy_evaluation(mdp, policy);
  const Eigen::VectorXd once = iterative_policy_evaluation(mdp, policy, 1).cwiseAbs();
  // apply one Bellman backup starting from v and compare
  Eigen::VectorXd backup = Eigen::VectorXd::Zero(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        backup[s] += policy.probs(s, a) * mdp.transition(s, a, s2) *
                     (mdp.reward(s, a, s2) + mdp.discount * v[s2]);
  EXPECT_LT((backup - v).cwiseAbs().maxCoeff(), 1e-10);
  (void)once;
}

TEST(OptimalPolicy, PicksStrictlyDominantAction) {
  // action 1 pays 1 in every transition, action 0 pays 0, dynamics identical
  Tensor3 t(3, 2, 3);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) t(s, a, (s + 1) % 3) = 1.0;
  Tensor3 r(3, 2, 3);
  for (int s = 0; s < 3; ++s) r(s, 1, (s + 1) % 3) = 1.0;
  Eigen::VectorXd rho0 = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  const TabularMdp mdp(std::move(t), std::move(r), 0.9, std::move(rho0));
  const TabularPolicy greedy = optimal_policy(mdp);
  for (int s = 0; s < 3; ++s) EXPECT_DOUBLE_EQ(greedy.probs(s, 1), 1.0);
}

TEST(OptimalPolicy, DeterministicAcrossIdenticalInputs) {
  Rng rng(31);
  const TabularMdp mdp = random_mdp(rng, 5, 4, 0.9);
  const TabularPolicy p1 = optimal_policy(mdp);
  const TabularPolicy p2 = optimal_policy(mdp);
  EXPECT_EQ((p1.probs - p2.probs).cwiseAbs().maxCoeff(), 0.0);
}

TEST(OptimalPolicy, BeatsRandomPolicies) {
  Rng rng(37);
  const TabularMdp mdp = random_mdp(rng, 4, 3, 0.9);
  const TabularPolicy best = optimal_policy(mdp);
  const double best_return = mdp.initial_dist.dot(policy_evaluation(mdp, best));
  for (int i = 0; i < 100; ++i) {
    const auto contender = random_policy(rng, 4, 3);
    const double contender_return = mdp.initial_dist.dot(policy_evaluation(mdp, contender));
    EXPECT_GE(best_return, contender_return - 1e-10);
  }
}

TEST(GreedyActionSets, IdenticalTensorsShareOptima) {
  Rng rng(41);
  for (int i = 0; i < 20; ++i) {
    const TabularMdp a = random_mdp(rng, 4, 3, 0.9);
    const TabularMdp b = a;  // same transition, reward, discount
    EXPECT_EQ(greedy_action_sets(a), greedy_action_sets(b));
  }
}

TEST(RecoverTransition, RoundTripsThroughMarginal) {
  Rng rng(43);
  for (int i = 0; i < 50; ++i) {
    const TabularMdp mdp = random_mdp(rng, 2 + rng.randint(4), 1 + rng.randint(3),
                                      rng.uniform(0.3, 0.95));
    const auto policy = random_policy(rng, mdp.n_states, mdp.n_actions);
    const auto rho = marginal_transition_distribution(mdp, policy);
    const auto recovered = recover_transition(rho, policy);
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        ASSERT_TRUE(recovered.visited[s][a]);
        for (int s2 = 0; s2 < mdp.n_states; ++s2)
          EXPECT_NEAR(recovered.transition(s, a, s2), mdp.transition(s, a, s2), 1e-8);
      }
  }
}

TEST(RecoverTransition, SingleStateIsIdentity) {
  const TabularMdp mdp = single_state_mdp(0.0, 0.5);
  const auto rho = marginal_transition_distribution(mdp, TabularPolicy::uniform(1, 1));
  const auto recovered = recover_transition(rho, TabularPolicy::uniform(1, 1));
  EXPECT_DOUBLE_EQ(recovered.transition(0, 0, 0), 1.0);
}

TEST(RecoverTransition, FlagsUnvisitedPairs) {
  Rng rng(47);
  const TabularMdp mdp = random_mdp(rng, 3, 2, 0.9);
  // policy never takes action 1 in state 0
  Eigen::MatrixXd probs(3, 2);
  probs << 1.0, 0.0, 0.5, 0.5, 0.5, 0.5;
  const TabularPolicy policy(std::move(probs));
  const auto rho = marginal_transition_distribution(mdp, policy);
  const auto recovered = recover_transition(rho, policy);
  EXPECT_FALSE(recovered.visited[0][1]);
  EXPECT_TRUE(recovered.visited[0][0]);
  // unvisited rows are filled uniform, not zero
  EXPECT_NEAR(recovered.transition(0, 1, 0), 1.0 / 3.0, 1e-12);
}

TEST(MdpJson, RoundTripIsBitStable) {
  Rng rng(53);
  const TabularMdp mdp = random_mdp(rng, 4, 2, 0.913);
  const std::string text = mdp_to_json(mdp).dump();
  const TabularMdp back = mdp_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(mdp.n_states, back.n_states);
  EXPECT_EQ(mdp.n_actions, back.n_actions);
  EXPECT_EQ(mdp.discount, back.discount);
  for (std::size_t i = 0; i < mdp.transition.flat().size(); ++i) {
    EXPECT_EQ(mdp.transition.flat()[i], back.transition.flat()[i]);
    EXPECT_EQ(mdp.reward.flat()[i], back.reward.flat()[i]);
  }
  // emitting again yields the identical document
  EXPECT_EQ(text, mdp_to_json(back).dump());
}
