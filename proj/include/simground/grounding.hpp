#pragma once

#include <memory>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/env.hpp"
#include "simground/gridworld.hpp"
#include "simground/policy.hpp"
#include "simground/tabular_mdp.hpp"

namespace simground {

/// Stochastic mapping (state, agent action) -> simulator action. The learned
/// grounding object: composing it with the simulator changes the simulator's
/// effective transition function.
class ActionTransformer {
 public:
  virtual ~ActionTransformer() = default;

  virtual Eigen::VectorXd transform(const Eigen::VectorXd& state, const Eigen::VectorXd& obs,
                                    const Eigen::VectorXd& agent_action, Rng& rng) const = 0;

  /// Deterministic deployment variant (mean action for Gaussian transformers,
  /// argmax for categorical ones).
  virtual Eigen::VectorXd transform_mean(const Eigen::VectorXd& state,
                                         const Eigen::VectorXd& obs,
                                         const Eigen::VectorXd& agent_action) const = 0;

  virtual std::unique_ptr<ActionTransformer> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class IdentityTransformer : public ActionTransformer {
 public:
  Eigen::VectorXd transform(const Eigen::VectorXd&, const Eigen::VectorXd&,
                            const Eigen::VectorXd& a, Rng&) const override {
    return a;
  }
  Eigen::VectorXd transform_mean(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                 const Eigen::VectorXd& a) const override {
    return a;
  }
  std::unique_ptr<ActionTransformer> clone() const override {
    return std::make_unique<IdentityTransformer>();
  }
  nlohmann::json to_json() const override {
    return {{"kind", "action_transformer"}, {"variant", "identity"}};
  }
};

/// Explicit tabular transformer pi_g[s][a][a~]; rows are distributions.
class TabularTransformer : public ActionTransformer {
 public:
  explicit TabularTransformer(Tensor3 probs) : probs_(std::move(probs)) {
    normalize_stochastic_rows(probs_, kRenormalizeTol, "TabularTransformer");
  }

  static TabularTransformer identity(int n_states, int n_actions) {
    Tensor3 t(n_states, n_actions, n_actions);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) t(s, a, a) = 1.0;
    return TabularTransformer(std::move(t));
  }

  const Tensor3& probs() const { return probs_; }

  Eigen::VectorXd transform(const Eigen::VectorXd& state, const Eigen::VectorXd&,
                            const Eigen::VectorXd& agent_action, Rng& rng) const override {
    const int s = static_cast<int>(state[0]);
    const int a = static_cast<int>(agent_action[0]);
    Eigen::VectorXd out(1);
    out[0] = rng.categorical(probs_.row(s, a));
    return out;
  }

  Eigen::VectorXd transform_mean(const Eigen::VectorXd& state, const Eigen::VectorXd&,
                                 const Eigen::VectorXd& agent_action) const override {
    const int s = static_cast<int>(state[0]);
    const int a = static_cast<int>(agent_action[0]);
    const auto row = probs_.row(s, a);
    int best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[best]) best = static_cast<int>(k);
    Eigen::VectorXd out(1);
    out[0] = best;
    return out;
  }

  std::unique_ptr<ActionTransformer> clone() const override {
    return std::make_unique<TabularTransformer>(*this);
  }

  nlohmann::json to_json() const override {
    return {{"kind", "action_transformer"},
            {"variant", "tabular"},
            {"probs", tensor_to_json(probs_)}};
  }

 private:
  Tensor3 probs_;
};

/// Transformer backed by a learned stochastic policy over the concatenated
/// (state features, action features) input. Continuous variant is a Gaussian
/// over a residual: a~ = clip(a + delta), so the zero-parameter point is the
/// identity grounding. Discrete variant is a categorical over actions.
class PolicyTransformer : public ActionTransformer {
 public:
  PolicyTransformer(std::unique_ptr<StochasticPolicy> policy, SpaceSpec env_action_space,
                    bool residual)
      : policy_(std::move(policy)),
        env_action_space_(std::move(env_action_space)),
        residual_(residual) {
    if (env_action_space_.is_discrete() && residual_)
      throw std::invalid_argument("PolicyTransformer: residual form needs a box space");
  }

  PolicyTransformer(const PolicyTransformer& o)
      : policy_(o.policy_->clone()),
        env_action_space_(o.env_action_space_),
        residual_(o.residual_) {}

  const StochasticPolicy& policy() const { return *policy_; }
  StochasticPolicy& policy() { return *policy_; }
  bool residual() const { return residual_; }

  /// The transformer-policy input: state features followed by the agent
  /// action's features.
  Eigen::VectorXd joint_input(const Eigen::VectorXd& obs,
                              const Eigen::VectorXd& agent_action) const {
    const Eigen::VectorXd af = env_action_space_.features(agent_action);
    Eigen::VectorXd x(obs.size() + af.size());
    x << obs, af;
    return x;
  }

  Eigen::VectorXd transform(const Eigen::VectorXd&, const Eigen::VectorXd& obs,
                            const Eigen::VectorXd& agent_action, Rng& rng) const override {
    const auto sample = policy_->act(joint_input(obs, agent_action), rng);
    return apply(sample.exec, agent_action);
  }

  Eigen::VectorXd transform_mean(const Eigen::VectorXd&, const Eigen::VectorXd& obs,
                                 const Eigen::VectorXd& agent_action) const override {
    return apply(policy_->mean_act(joint_input(obs, agent_action)), agent_action);
  }

  /// Maps a policy output to the executed simulator action.
  Eigen::VectorXd apply(const Eigen::VectorXd& policy_action,
                        const Eigen::VectorXd& agent_action) const {
    if (!residual_) return policy_action;
    return env_action_space_.clip(agent_action + policy_action);
  }

  std::unique_ptr<ActionTransformer> clone() const override {
    return std::make_unique<PolicyTransformer>(*this);
  }

  nlohmann::json to_json() const override {
    nlohmann::json j = policy_->to_json();
    j["policy_kind"] = j["kind"];
    j["kind"] = "action_transformer";
    j["variant"] = "policy";
    j["residual"] = residual_;
    if (!env_action_space_.is_discrete()) {
      j["env_action_low"] = std::vector<double>(
          env_action_space_.low.data(),
          env_action_space_.low.data() + env_action_space_.low.size());
      j["env_action_high"] = std::vector<double>(
          env_action_space_.high.data(),
          env_action_space_.high.data() + env_action_space_.high.size());
    } else {
      j["env_n_actions"] = env_action_space_.n;
    }
    return j;
  }

 private:
  std::unique_ptr<StochasticPolicy> policy_;
  SpaceSpec env_action_space_;
  bool residual_;
};

inline std::unique_ptr<ActionTransformer> transformer_from_json(const nlohmann::json& j) {
  if (j.at("kind").get<std::string>() != "action_transformer")
    throw std::invalid_argument("transformer_from_json: not a transformer checkpoint");
  const std::string variant = j.value("variant", "policy");
  if (variant == "identity") return std::make_unique<IdentityTransformer>();
  if (variant == "tabular")
    return std::make_unique<TabularTransformer>(tensor_from_json(j.at("probs")));
  nlohmann::json pj = j;
  pj["kind"] = j.at("policy_kind");
  auto policy = policy_from_json(pj);
  SpaceSpec space;
  if (j.contains("env_n_actions")) {
    space = SpaceSpec::discrete(j.at("env_n_actions").get<int>());
  } else {
    const auto low = j.at("env_action_low").get<std::vector<double>>();
    const auto high = j.at("env_action_high").get<std::vector<double>>();
    space = SpaceSpec::box(Eigen::Map<const Eigen::VectorXd>(low.data(), low.size()),
                           Eigen::Map<const Eigen::VectorXd>(high.data(), high.size()));
  }
  return std::make_unique<PolicyTransformer>(std::move(policy), std::move(space),
                                             j.at("residual").get<bool>());
}

/// Fresh policy-backed transformer for an environment: categorical over
/// actions for discrete spaces, residual Gaussian for box spaces.
inline std::unique_ptr<PolicyTransformer> make_policy_transformer(
    const Environment& env, const std::vector<int>& hidden, Rng& rng,
    double residual_halfwidth = 2.0) {
  const SpaceSpec& aspace = env.action_space();
  const int in_dim = env.observation_space().feature_dim() + aspace.feature_dim();
  if (aspace.is_discrete()) {
    auto policy = std::make_unique<CategoricalPolicy>(in_dim, aspace, hidden, rng);
    return std::make_unique<PolicyTransformer>(std::move(policy), aspace, false);
  }
  const int adim = aspace.dim();
  const SpaceSpec delta_space =
      SpaceSpec::box(Eigen::VectorXd::Constant(adim, -residual_halfwidth),
                     Eigen::VectorXd::Constant(adim, residual_halfwidth));
  auto policy = std::make_unique<GaussianPolicy>(in_dim, delta_space, hidden, rng);
  return std::make_unique<PolicyTransformer>(std::move(policy), aspace, true);
}

/// Simulator with an action transformation bolted between agent and
/// dynamics. Trajectories through this environment record the agent's
/// action, never the transformed one; the transformed action is available
/// only through the diagnostics side-channel when enabled.
class GroundedEnvironment : public Environment {
 public:
  GroundedEnvironment(std::unique_ptr<Environment> inner,
                      std::unique_ptr<ActionTransformer> transformer,
                      bool stochastic_transform = true,
                      bool expose_transformed_action = false)
      : inner_(std::move(inner)),
        transformer_(std::move(transformer)),
        stochastic_(stochastic_transform),
        expose_transformed_(expose_transformed_action) {}

  GroundedEnvironment(const GroundedEnvironment& o)
      : inner_(o.inner_->clone()),
        transformer_(o.transformer_->clone()),
        stochastic_(o.stochastic_),
        expose_transformed_(o.expose_transformed_),
        last_transformed_(o.last_transformed_) {}

  const SpaceSpec& state_space() const override { return inner_->state_space(); }
  const SpaceSpec& observation_space() const override { return inner_->observation_space(); }
  const SpaceSpec& action_space() const override { return inner_->action_space(); }
  int horizon() const override { return inner_->horizon(); }

  Eigen::VectorXd reset(Rng& rng) override { return inner_->reset(rng); }

  StepResult step(const Eigen::VectorXd& action, Rng& rng) override {
    const Eigen::VectorXd state = inner_->state();
    const Eigen::VectorXd obs = inner_->observe(state);
    const Eigen::VectorXd transformed =
        stochastic_ ? transformer_->transform(state, obs, action, rng)
                    : transformer_->transform_mean(state, obs, action);
    if (expose_transformed_) last_transformed_ = transformed;
    return inner_->step(transformed, rng);
  }

  Eigen::VectorXd state() const override { return inner_->state(); }
  void set_state(const Eigen::VectorXd& s) override { inner_->set_state(s); }
  Eigen::VectorXd observe(const Eigen::VectorXd& s) const override {
    return inner_->observe(s);
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<GroundedEnvironment>(*this);
  }

  const TabularMdp* tabular_view() const override { return inner_->tabular_view(); }
  const std::vector<bool>* terminal_states() const override {
    return inner_->terminal_states();
  }

  const ActionTransformer& transformer() const { return *transformer_; }

  /// Diagnostics side-channel; empty unless expose_transformed_action is set.
  const Eigen::VectorXd& last_transformed_action() const { return last_transformed_; }

 private:
  std::unique_ptr<Environment> inner_;
  std::unique_ptr<ActionTransformer> transformer_;
  bool stochastic_;
  bool expose_transformed_;
  Eigen::VectorXd last_transformed_;
};

// ---------------------------------------------------------------------------
// Exact tabular machinery
// ---------------------------------------------------------------------------

/// Effective grounded dynamics: T_g(s'|s,a) = sum_a~ T_sim(s'|s,a~) pi_g(a~|s,a).
inline Tensor3 grounded_transition(const Tensor3& t_sim, const Tensor3& transformer_probs) {
  const int n_states = t_sim.dim0();
  const int n_actions = t_sim.dim1();
  if (transformer_probs.dim0() != n_states || transformer_probs.dim1() != n_actions ||
      transformer_probs.dim2() != n_actions)
    throw std::invalid_argument("grounded_transition: transformer shape mismatch");
  Tensor3 t_g(n_states, n_actions, n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      for (int at = 0; at < n_actions; ++at) {
        const double w = transformer_probs(s, a, at);
        if (w == 0.0) continue;
        for (int s2 = 0; s2 < n_states; ++s2) t_g(s, a, s2) += w * t_sim(s, at, s2);
      }
  return t_g;
}

/// Exact marginal transition distribution of the grounded simulator under a
/// fixed agent policy.
inline MarginalTransitionDistribution grounded_marginal(const TabularMdp& sim,
                                                        const TabularPolicy& agent_policy,
                                                        const Tensor3& transformer_probs) {
  TabularMdp grounded(grounded_transition(sim.transition, transformer_probs), sim.reward,
                      sim.discount, sim.initial_dist);
  return marginal_transition_distribution(grounded, agent_policy);
}

/// The action-transformation MDP: joint states x = (s, a) with the agent
/// policy folded into the dynamics. The reward tensor and discount are
/// carried only for completeness -- transformer training uses the
/// discriminator reward, not these.
struct AtMdp {
  TabularMdp mdp;  // over |S|*|A| joint states, |A| actions
  int n_states = 0;
  int n_actions = 0;
  Eigen::MatrixXd agent_policy;

  int x_index(int s, int a) const { return s * n_actions + a; }
};

inline AtMdp build_at_mdp(const TabularMdp& sim, const TabularPolicy& agent_policy) {
  detail::check_dims(sim, agent_policy);
  const int ns = sim.n_states, na = sim.n_actions;
  const int nx = ns * na;
  Tensor3 tx(nx, na, nx);
  Tensor3 rx(nx, na, nx);  // placeholder reward, identically zero
  Eigen::VectorXd rho0x(nx);
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a) {
      const int x = s * na + a;
      rho0x[x] = sim.initial_dist[s] * agent_policy.probs(s, a);
      for (int at = 0; at < na; ++at)
        for (int s2 = 0; s2 < ns; ++s2)
          for (int a2 = 0; a2 < na; ++a2)
            tx(x, at, s2 * na + a2) = sim.transition(s, at, s2) * agent_policy.probs(s2, a2);
    }
  AtMdp out{TabularMdp(std::move(tx), std::move(rx), sim.discount, std::move(rho0x)), ns, na,
            agent_policy.probs};
  return out;
}

/// Simulation view of the AT-MDP whose elementary draws line up one-for-one
/// with a GroundedEnvironment rollout: reset draws (s0, a0), each step draws
/// s' then, if s' is not terminal, a'. Observations are the concatenated
/// one-hots of s and a -- the same features a PolicyTransformer sees.
class AtMdpEnv : public Environment {
 public:
  AtMdpEnv(const TabularMdp& sim, const TabularPolicy& agent_policy,
           std::vector<bool> terminal, int horizon)
      : sim_(sim),
        policy_(agent_policy),
        terminal_(std::move(terminal)),
        horizon_(horizon),
        state_space_(SpaceSpec::discrete(sim.n_states * sim.n_actions)),
        action_space_(SpaceSpec::discrete(sim.n_actions)),
        obs_space_(SpaceSpec::box(
            Eigen::VectorXd::Zero(sim.n_states + sim.n_actions),
            Eigen::VectorXd::Ones(sim.n_states + sim.n_actions))),
        state_(Eigen::VectorXd::Zero(1)) {
    if (static_cast<int>(terminal_.size()) != sim_.n_states)
      throw std::invalid_argument("AtMdpEnv: terminal mask size mismatch");
  }

  const SpaceSpec& state_space() const override { return state_space_; }
  const SpaceSpec& observation_space() const override { return obs_space_; }
  const SpaceSpec& action_space() const override { return action_space_; }
  int horizon() const override { return horizon_; }

  Eigen::VectorXd reset(Rng& rng) override {
    std::vector<double> rho0(sim_.initial_dist.data(),
                             sim_.initial_dist.data() + sim_.initial_dist.size());
    const int s = rng.categorical(rho0);
    const int a = sample_agent_action(s, rng);
    state_[0] = s * sim_.n_actions + a;
    return state_;
  }

  StepResult step(const Eigen::VectorXd& action, Rng& rng) override {
    const int s = static_cast<int>(state_[0]) / sim_.n_actions;
    const int at = static_cast<int>(action[0]);
    const int s2 = rng.categorical(sim_.transition.row(s, at));
    const bool done = terminal_[s2];
    const int a2 = done ? 0 : sample_agent_action(s2, rng);
    state_[0] = s2 * sim_.n_actions + a2;
    return {state_, 0.0, done};
  }

  Eigen::VectorXd state() const override { return state_; }

  void set_state(const Eigen::VectorXd& s) override {
    check_state_in_bounds(s);
    state_ = s;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& state) const override {
    const int x = static_cast<int>(state[0]);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(sim_.n_states + sim_.n_actions);
    f[x / sim_.n_actions] = 1.0;
    f[sim_.n_states + x % sim_.n_actions] = 1.0;
    return f;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<AtMdpEnv>(*this);
  }

 private:
  int sample_agent_action(int s, Rng& rng) {
    std::vector<double> row(policy_.probs.cols());
    for (int a = 0; a < policy_.probs.cols(); ++a) row[a] = policy_.probs(s, a);
    return rng.categorical(row);
  }

  TabularMdp sim_;
  TabularPolicy policy_;
  std::vector<bool> terminal_;
  int horizon_;
  SpaceSpec state_space_;
  SpaceSpec action_space_;
  SpaceSpec obs_space_;
  Eigen::VectorXd state_;
};

/// Samples a tabular policy as an action source (reads the one-hot state).
class TabularPolicyActions : public ActionSource {
 public:
  explicit TabularPolicyActions(const TabularPolicy& policy) : policy_(policy) {}

  Eigen::VectorXd sample_action(const Eigen::VectorXd& obs, Rng& rng) const override {
    int s = 0;
    obs.maxCoeff(&s);
    std::vector<double> row(policy_.probs.cols());
    for (int a = 0; a < policy_.probs.cols(); ++a) row[a] = policy_.probs(s, a);
    Eigen::VectorXd out(1);
    out[0] = rng.categorical(row);
    return out;
  }

 private:
  const TabularPolicy& policy_;
};

/// Evaluates a policy-backed discrete transformer at every (s, a) one-hot to
/// produce its exact tabular distribution.
inline Tensor3 extract_tabular_transformer(const PolicyTransformer& transformer,
                                           int n_states, int n_actions) {
  const auto* categorical = dynamic_cast<const CategoricalPolicy*>(&transformer.policy());
  if (!categorical)
    throw std::invalid_argument("extract_tabular_transformer: categorical policy required");
  Tensor3 probs(n_states, n_actions, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(n_states + n_actions);
      x[s] = 1.0;
      x[n_states + a] = 1.0;
      const Eigen::VectorXd p = categorical->action_probs(x);
      for (int at = 0; at < n_actions; ++at) probs(s, a, at) = p[at];
    }
  return probs;
}

}  // namespace simground
