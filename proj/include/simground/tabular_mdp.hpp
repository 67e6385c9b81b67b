#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/tensor.hpp"

namespace simground {

inline constexpr double kRowSumTol = 1e-12;       // exact-construction tolerance
inline constexpr double kRenormalizeTol = 1e-9;   // rows this close to 1 are rescaled

/// Rescales each length-`dim2` row of t to sum to 1. Rows whose sum deviates
/// from 1 by more than `tol` are rejected; negative entries are always
/// rejected.
inline void normalize_stochastic_rows(Tensor3& t, double tol = kRenormalizeTol,
                                      const std::string& what = "tensor") {
  for (int i = 0; i < t.dim0(); ++i) {
    for (int j = 0; j < t.dim1(); ++j) {
      auto row = t.row(i, j);
      double s = 0.0;
      for (double x : row) {
        if (x < 0.0 || !std::isfinite(x))
          throw std::invalid_argument(what + ": row entries must be finite and >= 0");
        s += x;
      }
      if (std::abs(s - 1.0) > tol)
        throw std::invalid_argument(what + ": row sum " + std::to_string(s) +
                                    " is not within tolerance of 1");
      // Rows already exact at machine precision are left untouched so that
      // serialized tensors reload bit-identically.
      if (std::abs(s - 1.0) > 1e-13)
        for (double& x : row) x /= s;
    }
  }
}

/// Finite MDP with explicit dynamics. Immutable after construction; the
/// constructor validates and renormalizes all stochastic data.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  Tensor3 transition;           // T[s][a][s']
  Tensor3 reward;               // R[s][a][s']
  double discount = 0.0;        // gamma in [0, 1)
  Eigen::VectorXd initial_dist; // rho0 over states

  TabularMdp() = default;

  TabularMdp(Tensor3 transition_in, Tensor3 reward_in, double discount_in,
             Eigen::VectorXd initial_dist_in)
      : n_states(transition_in.dim0()),
        n_actions(transition_in.dim1()),
        transition(std::move(transition_in)),
        reward(std::move(reward_in)),
        discount(discount_in),
        initial_dist(std::move(initial_dist_in)) {
    validate();
  }

  void validate() {
    if (transition.dim0() != n_states || transition.dim2() != n_states ||
        transition.dim1() != n_actions)
      throw std::invalid_argument("TabularMdp: transition must be S x A x S");
    if (!reward.same_shape(transition))
      throw std::invalid_argument("TabularMdp: reward shape must match transition");
    if (!(discount >= 0.0 && discount < 1.0))
      throw std::invalid_argument("TabularMdp: discount must lie in [0, 1)");
    if (initial_dist.size() != n_states)
      throw std::invalid_argument("TabularMdp: initial_dist must have n_states entries");
    normalize_stochastic_rows(transition, kRenormalizeTol, "TabularMdp transition");
    double s0 = 0.0;
    for (int s = 0; s < n_states; ++s) {
      if (initial_dist[s] < 0.0 || !std::isfinite(initial_dist[s]))
        throw std::invalid_argument("TabularMdp: initial_dist entries must be >= 0");
      s0 += initial_dist[s];
    }
    if (std::abs(s0 - 1.0) > kRenormalizeTol)
      throw std::invalid_argument("TabularMdp: initial_dist must sum to 1");
    if (std::abs(s0 - 1.0) > 1e-13) initial_dist /= s0;
    for (double r : reward.flat())
      if (!std::isfinite(r)) throw std::invalid_argument("TabularMdp: reward must be finite");
  }
};

/// Stationary stochastic policy pi[s][a]. Rows validated to sum to 1.
struct TabularPolicy {
  Eigen::MatrixXd probs;  // S x A

  TabularPolicy() = default;

  explicit TabularPolicy(Eigen::MatrixXd probs_in) : probs(std::move(probs_in)) {
    for (int s = 0; s < probs.rows(); ++s) {
      double sum = 0.0;
      for (int a = 0; a < probs.cols(); ++a) {
        if (probs(s, a) < 0.0 || !std::isfinite(probs(s, a)))
          throw std::invalid_argument("TabularPolicy: probabilities must be >= 0");
        sum += probs(s, a);
      }
      if (std::abs(sum - 1.0) > kRenormalizeTol)
        throw std::invalid_argument("TabularPolicy: row " + std::to_string(s) +
                                    " does not sum to 1");
      if (std::abs(sum - 1.0) > 1e-13) probs.row(s) /= sum;
    }
  }

  int n_states() const { return static_cast<int>(probs.rows()); }
  int n_actions() const { return static_cast<int>(probs.cols()); }

  static TabularPolicy uniform(int n_states, int n_actions) {
    return TabularPolicy(Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions));
  }

  static TabularPolicy deterministic(int n_states, int n_actions,
                                     const std::vector<int>& actions) {
    if (static_cast<int>(actions.size()) != n_states)
      throw std::invalid_argument("TabularPolicy: one action per state required");
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) p(s, actions[s]) = 1.0;
    return TabularPolicy(std::move(p));
  }
};

/// Discounted joint distribution over (s, a, s') under a fixed policy and
/// dynamics: rho(s,a,s') = (1-gamma) sum_t gamma^t p(s_t=s) pi(a|s) T(s'|s,a).
/// Normalized to total mass 1 by the (1-gamma) factor.
struct MarginalTransitionDistribution {
  Tensor3 rho;      // rho[s][a][s']
  double discount;  // gamma used to build it
};

namespace detail {

inline void check_dims(const TabularMdp& mdp, const TabularPolicy& policy) {
  if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions)
    throw std::invalid_argument("policy dimensions do not match MDP");
}

/// State-to-state chain P[s][s'] = sum_a pi(a|s) T(s'|s,a).
inline Eigen::MatrixXd policy_chain(const TabularMdp& mdp, const TabularPolicy& policy) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        P(s, s2) += policy.probs(s, a) * mdp.transition(s, a, s2);
  return P;
}

/// Unnormalized discounted state occupancy mu(s) = sum_t gamma^t p(s_t = s),
/// solved exactly from (I - gamma P^T) mu = rho0.
inline Eigen::VectorXd discounted_occupancy(const TabularMdp& mdp,
                                            const TabularPolicy& policy) {
  const Eigen::MatrixXd P = policy_chain(mdp, policy);
  const Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.discount * P.transpose();
  return A.partialPivLu().solve(mdp.initial_dist);
}

}  // namespace detail

/// Exact marginal transition distribution via a linear solve of the
/// discounted occupancy system; no truncated sums.
inline MarginalTransitionDistribution marginal_transition_distribution(
    const TabularMdp& mdp, const TabularPolicy& policy) {
  detail::check_dims(mdp, policy);
  const Eigen::VectorXd mu = detail::discounted_occupancy(mdp, policy);
  Tensor3 rho(mdp.n_states, mdp.n_actions, mdp.n_states);
  const double norm = 1.0 - mdp.discount;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        rho(s, a, s2) = norm * mu[s] * policy.probs(s, a) * mdp.transition(s, a, s2);
  return {std::move(rho), mdp.discount};
}

/// Expected discounted return written against the marginal distribution:
/// (1/(1-gamma)) sum_{s,a,s'} rho(s,a,s') R(s,a,s').
inline double expected_return_from_marginal(const MarginalTransitionDistribution& rho,
                                            const Tensor3& reward, double discount) {
  if (!rho.rho.same_shape(reward))
    throw std::invalid_argument("expected_return_from_marginal: shape mismatch");
  double acc = 0.0;
  auto r = reward.flat();
  auto p = rho.rho.flat();
  for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * r[i];
  return acc / (1.0 - discount);
}

/// Exact policy evaluation: solves the Bellman expectation equation
/// (I - gamma P_pi) V = r_pi by LU decomposition.
inline Eigen::VectorXd policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy) {
  detail::check_dims(mdp, policy);
  const Eigen::MatrixXd P = detail::policy_chain(mdp, policy);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        r_pi[s] += policy.probs(s, a) * mdp.transition(s, a, s2) * mdp.reward(s, a, s2);
  const Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.discount * P;
  return A.partialPivLu().solve(r_pi);
}

/// Action values Q[s][a] for a given state-value vector.
inline Eigen::MatrixXd action_values(const TabularMdp& mdp, const Eigen::VectorXd& values) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        q(s, a) += mdp.transition(s, a, s2) * (mdp.reward(s, a, s2) + mdp.discount * values[s2]);
  return q;
}

/// Optimal state values by value iteration, run to sup-norm residual below
/// `residual_tol`.
inline Eigen::VectorXd optimal_values(const TabularMdp& mdp, double residual_tol = 1e-10) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.n_states);
  // gamma^k contraction gives a hard iteration bound; guard against gamma ~ 1
  const int max_iters = 1000000;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd q = action_values(mdp, v);
    Eigen::VectorXd v_next = q.rowwise().maxCoeff();
    const double residual = (v_next - v).cwiseAbs().maxCoeff();
    v = std::move(v_next);
    if (residual < residual_tol) return v;
  }
  throw std::runtime_error("optimal_values: value iteration did not converge");
}

/// Greedy deterministic policy from value iteration; ties broken by lowest
/// action index so repeated runs are identical.
inline TabularPolicy optimal_policy(const TabularMdp& mdp, double residual_tol = 1e-10) {
  const Eigen::VectorXd v = optimal_values(mdp, residual_tol);
  const Eigen::MatrixXd q = action_values(mdp, v);
  std::vector<int> greedy(mdp.n_states, 0);
  for (int s = 0; s < mdp.n_states; ++s) {
    int best = 0;
    for (int a = 1; a < mdp.n_actions; ++a)
      if (q(s, a) > q(s, best)) best = a;
    greedy[s] = best;
  }
  return TabularPolicy::deterministic(mdp.n_states, mdp.n_actions, greedy);
}

/// All actions within `tol` of the best action value, per state. Used to
/// compare optima of two MDPs without depending on tie-breaking.
inline std::vector<std::vector<int>> greedy_action_sets(const TabularMdp& mdp,
                                                        double tol = 1e-9,
                                                        double residual_tol = 1e-10) {
  const Eigen::VectorXd v = optimal_values(mdp, residual_tol);
  const Eigen::MatrixXd q = action_values(mdp, v);
  std::vector<std::vector<int>> sets(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    const double best = q.row(s).maxCoeff();
    for (int a = 0; a < mdp.n_actions; ++a)
      if (q(s, a) >= best - tol) sets[s].push_back(a);
  }
  return sets;
}

/// Result of inverting a marginal back into dynamics. Rows with no visitation
/// mass carry no information; they are returned uniform and flagged.
struct RecoveredTransition {
  Tensor3 transition;                       // T[s][a][s']
  std::vector<std::vector<bool>> visited;   // visited[s][a]
};

/// Inverts rho into the unique transition function that generated it:
/// T(s'|s,a) = rho(s,a,s') / sum_{s''} rho(s,a,s''). Unvisited (s,a) pairs
/// are reported in the mask rather than silently filled.
inline RecoveredTransition recover_transition(const MarginalTransitionDistribution& marginal,
                                              const TabularPolicy& policy) {
  const Tensor3& rho = marginal.rho;
  if (policy.n_states() != rho.dim0() || policy.n_actions() != rho.dim1())
    throw std::invalid_argument("recover_transition: policy dimensions do not match rho");
  RecoveredTransition out{Tensor3(rho.dim0(), rho.dim1(), rho.dim2()),
                          std::vector<std::vector<bool>>(
                              rho.dim0(), std::vector<bool>(rho.dim1(), false))};
  for (int s = 0; s < rho.dim0(); ++s) {
    for (int a = 0; a < rho.dim1(); ++a) {
      double mass = 0.0;
      for (int s2 = 0; s2 < rho.dim2(); ++s2) mass += rho(s, a, s2);
      if (mass > 0.0) {
        out.visited[s][a] = true;
        for (int s2 = 0; s2 < rho.dim2(); ++s2)
          out.transition(s, a, s2) = rho(s, a, s2) / mass;
      } else {
        for (int s2 = 0; s2 < rho.dim2(); ++s2)
          out.transition(s, a, s2) = 1.0 / rho.dim2();
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::json tensor_to_json(const Tensor3& t) {
  nlohmann::json out = nlohmann::json::array();
  for (int i = 0; i < t.dim0(); ++i) {
    nlohmann::json mi = nlohmann::json::array();
    for (int j = 0; j < t.dim1(); ++j) {
      nlohmann::json row = nlohmann::json::array();
      for (int k = 0; k < t.dim2(); ++k) row.push_back(t(i, j, k));
      mi.push_back(std::move(row));
    }
    out.push_back(std::move(mi));
  }
  return out;
}

inline Tensor3 tensor_from_json(const nlohmann::json& j) {
  const int d0 = static_cast<int>(j.size());
  if (d0 == 0) throw std::invalid_argument("tensor_from_json: empty tensor");
  const int d1 = static_cast<int>(j[0].size());
  const int d2 = static_cast<int>(j[0][0].size());
  Tensor3 t(d0, d1, d2);
  for (int i = 0; i < d0; ++i)
    for (int jj = 0; jj < d1; ++jj)
      for (int k = 0; k < d2; ++k) t(i, jj, k) = j[i][jj][k].get<double>();
  return t;
}

inline nlohmann::json mdp_to_json(const TabularMdp& mdp) {
  nlohmann::json j;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  j["gamma"] = mdp.discount;
  j["rho0"] = std::vector<double>(mdp.initial_dist.data(),
                                  mdp.initial_dist.data() + mdp.initial_dist.size());
  j["T"] = tensor_to_json(mdp.transition);
  j["R"] = tensor_to_json(mdp.reward);
  return j;
}

inline TabularMdp mdp_from_json(const nlohmann::json& j) {
  const auto rho0 = j.at("rho0").get<std::vector<double>>();
  Eigen::VectorXd init(static_cast<int>(rho0.size()));
  for (std::size_t i = 0; i < rho0.size(); ++i) init[static_cast<int>(i)] = rho0[i];
  TabularMdp mdp(tensor_from_json(j.at("T")), tensor_from_json(j.at("R")),
                 j.at("gamma").get<double>(), std::move(init));
  if (mdp.n_states != j.at("n_states").get<int>() ||
      mdp.n_actions != j.at("n_actions").get<int>())
    throw std::invalid_argument("mdp_from_json: declared sizes do not match tensors");
  return mdp;
}

}  // namespace simground
