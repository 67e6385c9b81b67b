#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/discriminator.hpp"
#include "simground/env.hpp"
#include "simground/gridworld.hpp"
#include "simground/grounding.hpp"
#include "simground/ppo.hpp"
#include "simground/tabular_mdp.hpp"

namespace simground {

/// Settings for the adversarial grounding loop.
struct GaratConfig {
  int transformer_updates = 50;  // N inner iterations per outer iteration
  int discriminator_updates_per_policy_update = 1;
  PpoConfig transformer_ppo;  // Table defaults: 2 minibatches, 1 epoch, clip 0.1
  double gp_coef = 10.0;
  double l2_coef = 1e-4;
  double disc_learning_rate = 3e-4;
  int disc_minibatch = 512;
  std::vector<int> disc_hidden = {64, 64};
  std::vector<int> transformer_hidden = {64, 64};
  bool standardize_inputs = true;
  bool stochastic_deploy = false;  // deploy mean transformer action by default
  // linear learning-rate decay across the N updates; 1.0 keeps rates constant
  double transformer_lr_final_fraction = 1.0;
  double disc_lr_final_fraction = 1.0;
  // exponential moving average of the transformer-policy parameters; the
  // averaged policy is what ground() returns. 0 disables averaging.
  double policy_ema_decay = 0.0;
  // linear decay of the transformer entropy bonus across the N updates
  double entropy_final_fraction = 1.0;

  void validate() const {
    if (transformer_updates < 1)
      throw std::invalid_argument("GaratConfig: transformer_updates must be >= 1");
    if (discriminator_updates_per_policy_update < 1)
      throw std::invalid_argument("GaratConfig: discriminator updates must be >= 1");
    if (gp_coef < 0.0 || l2_coef < 0.0)
      throw std::invalid_argument("GaratConfig: regularizer coefficients must be >= 0");
    transformer_ppo.validate();
  }

  nlohmann::json to_json() const {
    return {{"transformer_updates", transformer_updates},
            {"discriminator_updates_per_policy_update",
             discriminator_updates_per_policy_update},
            {"transformer_ppo", transformer_ppo.to_json()},
            {"gp_coef", gp_coef},
            {"l2_coef", l2_coef},
            {"disc_learning_rate", disc_learning_rate},
            {"disc_minibatch", disc_minibatch},
            {"disc_hidden", disc_hidden},
            {"transformer_hidden", transformer_hidden},
            {"standardize_inputs", standardize_inputs},
            {"stochastic_deploy", stochastic_deploy}};
  }

  static GaratConfig from_json(const nlohmann::json& j) {
    GaratConfig c;
    c.transformer_updates = j.value("transformer_updates", c.transformer_updates);
    c.discriminator_updates_per_policy_update =
        j.value("discriminator_updates_per_policy_update",
                c.discriminator_updates_per_policy_update);
    if (j.contains("transformer_ppo")) {
      nlohmann::json merged = c.transformer_ppo.to_json();
      merged.update(j.at("transformer_ppo"));
      c.transformer_ppo = PpoConfig::from_json(merged);
    }
    c.gp_coef = j.value("gp_coef", c.gp_coef);
    c.l2_coef = j.value("l2_coef", c.l2_coef);
    c.disc_learning_rate = j.value("disc_learning_rate", c.disc_learning_rate);
    c.disc_minibatch = j.value("disc_minibatch", c.disc_minibatch);
    c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
    c.transformer_hidden = j.value("transformer_hidden", c.transformer_hidden);
    c.standardize_inputs = j.value("standardize_inputs", c.standardize_inputs);
    c.stochastic_deploy = j.value("stochastic_deploy", c.stochastic_deploy);
    c.transformer_lr_final_fraction =
        j.value("transformer_lr_final_fraction", c.transformer_lr_final_fraction);
    c.disc_lr_final_fraction = j.value("disc_lr_final_fraction", c.disc_lr_final_fraction);
    c.policy_ema_decay = j.value("policy_ema_decay", c.policy_ema_decay);
    c.entropy_final_fraction = j.value("entropy_final_fraction", c.entropy_final_fraction);
    c.validate();
    return c;
  }
};

/// Labeled transition batch fed to the discriminator.
struct TransitionBatch {
  Eigen::MatrixXd gsim_features;  // columns of (s, a, s') features
  Eigen::MatrixXd real_features;

  void require_usable() const {
    if (gsim_features.cols() == 0 || real_features.cols() == 0)
      throw std::invalid_argument("TransitionBatch: both sources must be non-empty");
  }
};

struct GroundIterationRow {
  int iteration = 0;
  double disc_loss = 0.0;    // data term of the discriminator loss
  double mean_reward = 0.0;  // mean -log D over the gsim batch
  std::optional<double> js_divergence;  // exact, tabular instances only
  double wall_ms = 0.0;
};

struct GroundResult {
  std::unique_ptr<ActionTransformer> transformer;
  std::vector<GroundIterationRow> diagnostics;
  long sim_transitions_used = 0;
};

/// Exact-diagnostics hooks for tabular instances: every iteration the
/// transformer is read out as a tensor and compared against rho_real.
struct TabularGroundSpec {
  const TabularMdp* sim = nullptr;
  const TabularPolicy* agent_policy = nullptr;
  Tensor3 rho_real;
};

namespace detail {

/// The transformer's training environment: state is (inner state, pending
/// agent action), actions are transformer outputs, the agent policy is folded
/// into the dynamics. Rewards are zero here; the adversarial reward is filled
/// in after each discriminator update.
class TransformerView : public Environment {
 public:
  TransformerView(std::unique_ptr<Environment> inner, const ActionSource& agent,
                  const PolicyTransformer& transformer)
      : inner_(std::move(inner)),
        agent_(&agent),
        transformer_(&transformer),
        state_space_(joint_state_space(*inner_)),
        obs_space_(joint_obs_space(*inner_)) {}

  const SpaceSpec& state_space() const override { return state_space_; }
  const SpaceSpec& observation_space() const override { return obs_space_; }
  const SpaceSpec& action_space() const override {
    return transformer_->policy().action_space();
  }
  int horizon() const override { return inner_->horizon(); }

  Eigen::VectorXd reset(Rng& rng) override {
    const Eigen::VectorXd s = inner_->reset(rng);
    pending_action_ = agent_->sample_action(inner_->observe(s), rng);
    return joint_state(s, pending_action_);
  }

  StepResult step(const Eigen::VectorXd& policy_action, Rng& rng) override {
    const Eigen::VectorXd s = inner_->state();
    const Eigen::VectorXd agent_action = pending_action_;
    const Eigen::VectorXd sim_action = transformer_->apply(policy_action, agent_action);
    const StepResult inner_result = inner_->step(sim_action, rng);
    last_transition_ = transition_features(s, agent_action, inner_result.next_state);
    if (inner_result.done) {
      pending_action_ = Eigen::VectorXd::Zero(agent_action.size());
    } else {
      pending_action_ = agent_->sample_action(inner_->observe(inner_result.next_state), rng);
    }
    return {joint_state(inner_result.next_state, pending_action_), 0.0, inner_result.done};
  }

  Eigen::VectorXd state() const override {
    return joint_state(inner_->state(), pending_action_);
  }

  void set_state(const Eigen::VectorXd& s) override {
    const int d = inner_->state().size();
    inner_->set_state(s.head(d));
    pending_action_ = s.tail(s.size() - d);
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& state) const override {
    const int d = inner_->state().size();
    const Eigen::VectorXd inner_obs = inner_->observe(state.head(d));
    const Eigen::VectorXd act_feat =
        inner_->action_space().features(state.tail(state.size() - d));
    Eigen::VectorXd out(inner_obs.size() + act_feat.size());
    out << inner_obs, act_feat;
    return out;
  }

  std::unique_ptr<Environment> clone() const override {
    auto copy = std::make_unique<TransformerView>(inner_->clone(), *agent_, *transformer_);
    copy->pending_action_ = pending_action_;
    return copy;
  }

  /// Feature triple (s, a, s') of the transition taken by the last step.
  const Eigen::VectorXd& last_transition_features() const { return last_transition_; }

  Eigen::VectorXd transition_features(const Eigen::VectorXd& s,
                                      const Eigen::VectorXd& agent_action,
                                      const Eigen::VectorXd& s2) const {
    const Eigen::VectorXd so = inner_->observe(s);
    const Eigen::VectorXd af = inner_->action_space().features(agent_action);
    const Eigen::VectorXd so2 = inner_->observe(s2);
    Eigen::VectorXd out(so.size() + af.size() + so2.size());
    out << so, af, so2;
    return out;
  }

 private:
  static SpaceSpec joint_state_space(const Environment& inner) {
    const int sd = inner.state().size() > 0 ? static_cast<int>(inner.state().size())
                                            : inner.state_space().dim();
    const int ad = inner.action_space().dim();
    return SpaceSpec::box(Eigen::VectorXd::Constant(sd + ad, -1e18),
                          Eigen::VectorXd::Constant(sd + ad, 1e18));
  }

  static SpaceSpec joint_obs_space(const Environment& inner) {
    const int d =
        inner.observation_space().feature_dim() + inner.action_space().feature_dim();
    return SpaceSpec::box(Eigen::VectorXd::Constant(d, -1e18),
                          Eigen::VectorXd::Constant(d, 1e18));
  }

  static Eigen::VectorXd joint_state(const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    Eigen::VectorXd out(s.size() + a.size());
    out << s, a;
    return out;
  }

  std::unique_ptr<Environment> inner_;
  const ActionSource* agent_;
  const PolicyTransformer* transformer_;
  SpaceSpec state_space_;
  SpaceSpec obs_space_;
  Eigen::VectorXd pending_action_;
  Eigen::VectorXd last_transition_;
};

inline Eigen::MatrixXd real_transition_features(const Environment& env,
                                                const std::vector<Trajectory>& real) {
  long total = 0;
  for (const auto& t : real) total += static_cast<long>(t.records.size());
  if (total == 0) throw std::invalid_argument("ground: empty real data");
  const int d = env.observation_space().feature_dim() + env.action_space().feature_dim() +
                env.observation_space().feature_dim();
  Eigen::MatrixXd out(d, total);
  long at = 0;
  for (const auto& t : real)
    for (const auto& rec : t.records) {
      const Eigen::VectorXd so = env.observe(rec.state);
      const Eigen::VectorXd af = env.action_space().features(rec.action);
      const Eigen::VectorXd so2 = env.observe(rec.next_state);
      Eigen::VectorXd col(d);
      col << so, af, so2;
      out.col(at++) = col;
    }
  return out;
}

}  // namespace detail

/// Adversarial grounding: N rounds of {roll the frozen agent policy through
/// the transformer-grounded simulator, one discriminator step, one
/// policy-gradient step on the transformer with reward -log D}.
inline GroundResult ground(Environment& sim_env, const std::vector<Trajectory>& real_trajs,
                           const ActionSource& agent_actions, const GaratConfig& cfg,
                           std::uint64_t seed, const TabularGroundSpec* tabular = nullptr) {
  cfg.validate();
  Rng master(seed);
  Rng init_rng = master.fork(1);
  Rng train_rng = master.fork(2);

  auto transformer = make_policy_transformer(sim_env, cfg.transformer_hidden, init_rng);
  detail::TransformerView view(sim_env.clone(), agent_actions, *transformer);

  std::vector<int> vsizes{view.observation_space().feature_dim()};
  vsizes.insert(vsizes.end(), cfg.transformer_ppo.hidden.begin(),
                cfg.transformer_ppo.hidden.end());
  vsizes.push_back(1);
  Mlp value_net(vsizes, init_rng);

  const Eigen::MatrixXd real_features = detail::real_transition_features(sim_env, real_trajs);
  const Standardizer standardizer =
      cfg.standardize_inputs ? Standardizer::fit(real_features)
                             : Standardizer::identity(static_cast<int>(real_features.rows()));
  Discriminator disc(static_cast<int>(real_features.rows()), cfg.disc_hidden, init_rng,
                     standardizer);

  Adam disc_opt(disc.net().n_params(), cfg.disc_learning_rate);
  Adam policy_opt(transformer->policy().n_params(), cfg.transformer_ppo.learning_rate);
  Adam value_opt(value_net.n_params(), cfg.transformer_ppo.vf_learning_rate);

  const int obs_dim = sim_env.observation_space().feature_dim();
  const int act_feat_dim = sim_env.action_space().feature_dim();
  Eigen::VectorXd ema_params;

  GroundResult result;
  for (int iteration = 0; iteration < cfg.transformer_updates; ++iteration) {
    const auto started = std::chrono::steady_clock::now();

    const double progress =
        cfg.transformer_updates > 1
            ? static_cast<double>(iteration) / (cfg.transformer_updates - 1)
            : 0.0;
    policy_opt.set_lr(cfg.transformer_ppo.learning_rate *
                      (1.0 + (cfg.transformer_lr_final_fraction - 1.0) * progress));
    disc_opt.set_lr(cfg.disc_learning_rate *
                    (1.0 + (cfg.disc_lr_final_fraction - 1.0) * progress));

    RolloutBatch batch =
        collect_batch(view, transformer->policy(), cfg.transformer_ppo.batch_timesteps,
                      train_rng);
    result.sim_transitions_used += batch.size();

    // (s, a, s') features of the grounded rollout: joint obs carries
    // [obs(s), feat(a)] and the next joint obs starts with obs(s')
    Eigen::MatrixXd gsim_features(2 * obs_dim + act_feat_dim, batch.size());
    gsim_features.topRows(obs_dim + act_feat_dim) = batch.obs;
    gsim_features.bottomRows(obs_dim) = batch.next_obs.topRows(obs_dim);

    TransitionBatch tb{gsim_features, real_features};
    tb.require_usable();

    double data_loss = 0.0;
    for (int du = 0; du < cfg.discriminator_updates_per_policy_update; ++du) {
      const int mg = std::min<int>(cfg.disc_minibatch, static_cast<int>(gsim_features.cols()));
      const int mr = std::min<int>(cfg.disc_minibatch, static_cast<int>(real_features.cols()));
      Eigen::MatrixXd gs(gsim_features.rows(), mg);
      for (int j = 0; j < mg; ++j)
        gs.col(j) = gsim_features.col(train_rng.randint(static_cast<int>(gsim_features.cols())));
      Eigen::MatrixXd rs(real_features.rows(), mr);
      for (int j = 0; j < mr; ++j)
        rs.col(j) = real_features.col(train_rng.randint(static_cast<int>(real_features.cols())));
      const DiscriminatorLoss loss =
          discriminator_loss(disc, gs, rs, cfg.gp_coef, cfg.l2_coef, train_rng);
      Eigen::VectorXd params = disc.net().flatten();
      disc_opt.step(params, loss.grad);
      disc.net().set_from_flat(params);
      data_loss = loss.data_term;
    }

    // adversarial reward with the freshly updated discriminator
    batch.rewards = disc.rewards(gsim_features);
    PpoConfig ppo_cfg = cfg.transformer_ppo;
    ppo_cfg.entropy_coef *= 1.0 + (cfg.entropy_final_fraction - 1.0) * progress;
    ppo_update(transformer->policy(), value_net, batch, ppo_cfg, policy_opt, value_opt,
               train_rng);

    if (cfg.policy_ema_decay > 0.0) {
      if (ema_params.size() == 0) {
        ema_params = transformer->policy().params();
      } else {
        ema_params = cfg.policy_ema_decay * ema_params +
                     (1.0 - cfg.policy_ema_decay) * transformer->policy().params();
      }
    }

    GroundIterationRow row;
    row.iteration = iteration;
    row.disc_loss = data_loss;
    row.mean_reward = batch.rewards.mean();
    if (tabular) {
      // diagnostics reflect the transformer that would be returned now
      auto readout = transformer->clone();
      auto* readout_policy = dynamic_cast<PolicyTransformer*>(readout.get());
      if (cfg.policy_ema_decay > 0.0) readout_policy->policy().set_params(ema_params);
      const Tensor3 pi_g = extract_tabular_transformer(
          *readout_policy, tabular->sim->n_states, tabular->sim->n_actions);
      const auto rho_g = grounded_marginal(*tabular->sim, *tabular->agent_policy, pi_g);
      row.js_divergence = js_divergence(rho_g.rho, tabular->rho_real);
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - started)
                      .count();
    result.diagnostics.push_back(row);
  }

  if (cfg.policy_ema_decay > 0.0 && ema_params.size() > 0)
    transformer->policy().set_params(ema_params);
  result.transformer = std::move(transformer);
  return result;
}

// ---------------------------------------------------------------------------
// Exact divergence minimization (tabular oracle)
// ---------------------------------------------------------------------------

/// Analytic gradient of JS(rho_g(pi_g), rho_real) with respect to the
/// transformer tensor, differentiating through the occupancy linear solve.
inline Tensor3 js_gradient_wrt_transformer(const TabularMdp& sim,
                                           const TabularPolicy& agent_policy,
                                           const Tensor3& pi_g, const Tensor3& rho_real) {
  const int ns = sim.n_states, na = sim.n_actions;
  const Tensor3 t_g = grounded_transition(sim.transition, pi_g);
  TabularMdp grounded(t_g, sim.reward, sim.discount, sim.initial_dist);
  const Eigen::VectorXd mu = detail::discounted_occupancy(grounded, agent_policy);
  const double norm = 1.0 - sim.discount;

  // dJS/drho_g, with mass-zero entries treated through a floored log
  Tensor3 g_rho(ns, na, ns);
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a)
      for (int s2 = 0; s2 < ns; ++s2) {
        const double p = norm * mu[s] * agent_policy.probs(s, a) * t_g(s, a, s2);
        const double q = rho_real(s, a, s2);
        const double m = 0.5 * (p + q);
        if (m <= 0.0) continue;
        g_rho(s, a, s2) = 0.5 * std::log(std::max(p, 1e-300) / m);
      }

  // adjoint of the occupancy through (I - gamma P^T) mu = rho0
  Eigen::VectorXd c = Eigen::VectorXd::Zero(ns);  // dJS/dmu
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a)
      for (int s2 = 0; s2 < ns; ++s2)
        c[s] += g_rho(s, a, s2) * norm * agent_policy.probs(s, a) * t_g(s, a, s2);
  const Eigen::MatrixXd chain = detail::policy_chain(grounded, agent_policy);
  const Eigen::MatrixXd lhs =
      Eigen::MatrixXd::Identity(ns, ns) - sim.discount * chain;
  const Eigen::VectorXd y = lhs.partialPivLu().solve(c);

  // dJS/dT_g then chain through T_g = sum_a~ pi_g T_sim
  Tensor3 g_tg(ns, na, ns);
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a)
      for (int s2 = 0; s2 < ns; ++s2)
        g_tg(s, a, s2) = agent_policy.probs(s, a) *
                         (norm * mu[s] * g_rho(s, a, s2) + sim.discount * mu[s] * y[s2]);

  Tensor3 grad(ns, na, na);
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a)
      for (int at = 0; at < na; ++at) {
        double acc = 0.0;
        for (int s2 = 0; s2 < ns; ++s2) acc += g_tg(s, a, s2) * sim.transition(s, at, s2);
        grad(s, a, at) = acc;
      }
  return grad;
}

struct DivergenceMinimizerResult {
  TabularTransformer transformer;
  double js = 0.0;
  Tensor3 rho_g;
};

/// Projected gradient descent over transformer rows with random restarts:
/// the executable right-hand side of the distribution-matching equivalence.
/// Restart 0 starts from the identity transformer, restart 1 from uniform.
inline DivergenceMinimizerResult exact_divergence_minimizer(
    const TabularMdp& sim, const TabularPolicy& agent_policy, const Tensor3& rho_real,
    std::uint64_t seed = 0, int restarts = 20, int max_iters = 3000) {
  if (sim.n_states * sim.n_actions > 64)
    throw std::invalid_argument("exact_divergence_minimizer: instance too large");
  detail::check_dims(sim, agent_policy);
  const int ns = sim.n_states, na = sim.n_actions;
  Rng rng(seed);

  const auto js_of = [&](const Tensor3& pi_g) {
    const auto rho = grounded_marginal(sim, agent_policy, pi_g);
    return js_divergence(rho.rho, rho_real);
  };

  Tensor3 best_pi = TabularTransformer::identity(ns, na).probs();
  double best_js = js_of(best_pi);

  for (int restart = 0; restart < restarts; ++restart) {
    Tensor3 pi(ns, na, na);
    if (restart == 0) {
      pi = TabularTransformer::identity(ns, na).probs();
    } else if (restart == 1) {
      pi = Tensor3(ns, na, na, 1.0 / na);
    } else {
      for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
          double sum = 0.0;
          auto row = pi.row(s, a);
          for (auto& x : row) {
            x = 0.05 + rng.uniform();
            sum += x;
          }
          for (auto& x : row) x /= sum;
        }
    }

    double js = js_of(pi);
    double step = 1.0;
    for (int it = 0; it < max_iters; ++it) {
      const Tensor3 grad = js_gradient_wrt_transformer(sim, agent_policy, pi, rho_real);
      bool improved = false;
      while (step > 1e-13) {
        Tensor3 candidate = pi;
        for (int s = 0; s < ns; ++s)
          for (int a = 0; a < na; ++a) {
            auto row = candidate.row(s, a);
            const auto grow = grad.row(s, a);
            for (std::size_t k = 0; k < row.size(); ++k) row[k] -= step * grow[k];
            project_to_simplex(row);
          }
        const double js_candidate = js_of(candidate);
        if (js_candidate < js - 1e-15) {
          pi = std::move(candidate);
          js = js_candidate;
          improved = true;
          step *= 1.3;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    if (js < best_js) {
      best_js = js;
      best_pi = pi;
    }
  }

  DivergenceMinimizerResult out{TabularTransformer(best_pi), best_js,
                                grounded_marginal(sim, agent_policy, best_pi).rho};
  return out;
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

struct OuterLoopConfig {
  GaratConfig garat;
  AgentTrainConfig agent;
  long real_budget_per_iteration = 2000;
  long retrain_timesteps = 100000;
  int real_eval_episodes = 50;
  std::uint64_t real_eval_seed_offset = 777777;
};

struct OuterIterationRow {
  int iteration = 0;
  long real_transitions_used = 0;
  double real_return_after_retrain = 0.0;
};

struct OuterLoopResult {
  std::unique_ptr<StochasticPolicy> best_policy;  // best by real evaluation
  std::unique_ptr<StochasticPolicy> last_policy;  // after the final retrain
  std::unique_ptr<ActionTransformer> transformer; // from the final grounding
  std::vector<OuterIterationRow> iterations;
  long real_transitions_used = 0;
  double best_real_return = 0.0;
  double input_policy_real_return = 0.0;
};

/// The full grounding-and-retraining cycle. `agent_policy` is the
/// sim-pretrained policy; each outer iteration collects real data with it,
/// grounds the simulator adversarially, and retrains the policy in the
/// grounded simulator. Real-environment evaluation picks the returned
/// policy; evaluation episodes are not charged against the budget.
inline OuterLoopResult garat_outer_loop(const EnvironmentPair& pair,
                                        const StochasticPolicy& agent_policy,
                                        const OuterLoopConfig& cfg, int outer_iterations,
                                        std::uint64_t seed) {
  if (outer_iterations > 0 && cfg.real_budget_per_iteration <= 0)
    throw std::invalid_argument("garat_outer_loop: real budget must be positive");

  OuterLoopResult result;
  auto policy = agent_policy.clone();
  auto real_env = pair.real->clone();
  result.input_policy_real_return =
      evaluate_policy(*real_env, *policy, cfg.real_eval_episodes,
                      seed + cfg.real_eval_seed_offset)
          .mean_return;
  result.best_real_return = result.input_policy_real_return;
  result.best_policy = policy->clone();

  std::vector<int> vsizes{pair.sim->observation_space().feature_dim()};
  vsizes.insert(vsizes.end(), cfg.agent.ppo.hidden.begin(), cfg.agent.ppo.hidden.end());
  vsizes.push_back(1);
  Rng master(seed);
  Mlp value_net(vsizes, master);

  for (int outer = 0; outer < outer_iterations; ++outer) {
    // collect real data with the current policy
    PolicyActions behavior(*policy, false);
    auto collect_env = pair.real->clone();
    const CollectResult real_data = collect_transitions(
        *collect_env, behavior, cfg.real_budget_per_iteration, seed + 13 * outer + 1);
    result.real_transitions_used += real_data.transitions_used;

    // ground the simulator against it
    auto sim_env = pair.sim->clone();
    GroundResult grounding = ground(*sim_env, real_data.trajectories, behavior, cfg.garat,
                                    seed + 13 * outer + 2);

    // retrain the agent in the grounded simulator
    GroundedEnvironment grounded(pair.sim->clone(), grounding.transformer->clone(),
                                 cfg.garat.stochastic_deploy, false);
    const AgentTrainResult retrained = train_policy(
        grounded, *policy, value_net, cfg.agent, cfg.retrain_timesteps, seed + 13 * outer + 3);
    policy = retrained.policy->clone();

    const double real_return =
        evaluate_policy(*real_env, *policy, cfg.real_eval_episodes,
                        seed + cfg.real_eval_seed_offset)
            .mean_return;
    result.iterations.push_back({outer, result.real_transitions_used, real_return});
    if (real_return > result.best_real_return) {
      result.best_real_return = real_return;
      result.best_policy = policy->clone();
    }
    result.transformer = std::move(grounding.transformer);
  }
  result.last_policy = std::move(policy);
  return result;
}

// ---------------------------------------------------------------------------
// Bundled tabular suite
// ---------------------------------------------------------------------------

/// A small sim/real tabular pair with a fixed full-support agent policy; the
/// desk-scale instances every exact oracle runs on.
struct TabularSuiteInstance {
  std::string name;
  TabularMdp sim;
  TabularMdp real;
  TabularPolicy agent_policy;
  std::vector<bool> terminal;
  int horizon = 40;
};

inline std::vector<TabularSuiteInstance> bundled_tabular_suite() {
  std::vector<TabularSuiteInstance> suite;

  const auto uniform_rho = [](int n) {
    return Eigen::VectorXd::Constant(n, 1.0 / n);
  };

  // two states, two actions; real dynamics are an exact action mixture of sim
  {
    Tensor3 t_sim(2, 2, 2);
    t_sim(0, 0, 0) = 0.9;  t_sim(0, 0, 1) = 0.1;
    t_sim(0, 1, 0) = 0.15; t_sim(0, 1, 1) = 0.85;
    t_sim(1, 0, 0) = 0.2;  t_sim(1, 0, 1) = 0.8;
    t_sim(1, 1, 0) = 0.75; t_sim(1, 1, 1) = 0.25;
    Tensor3 t_real(2, 2, 2);
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a)
        for (int s2 = 0; s2 < 2; ++s2)
          t_real(s, a, s2) = 0.7 * t_sim(s, a, s2) + 0.3 * t_sim(s, 1 - a, s2);
    Tensor3 reward(2, 2, 2);
    Eigen::MatrixXd pi(2, 2);
    pi << 0.6, 0.4, 0.3, 0.7;
    suite.push_back({"two_state_mixture",
                     TabularMdp(t_sim, reward, 0.9, uniform_rho(2)),
                     TabularMdp(t_real, reward, 0.9, uniform_rho(2)),
                     TabularPolicy(pi),
                     {false, false},
                     40});
  }

  // two states, two actions; real lies outside the sim mixture hull
  {
    Tensor3 t_sim(2, 2, 2);
    t_sim(0, 0, 0) = 0.8;  t_sim(0, 0, 1) = 0.2;
    t_sim(0, 1, 0) = 0.55; t_sim(0, 1, 1) = 0.45;
    t_sim(1, 0, 0) = 0.35; t_sim(1, 0, 1) = 0.65;
    t_sim(1, 1, 0) = 0.6;  t_sim(1, 1, 1) = 0.4;
    Tensor3 t_real(2, 2, 2);
    t_real(0, 0, 0) = 0.3;  t_real(0, 0, 1) = 0.7;   // below the sim hull at (0, .)
    t_real(0, 1, 0) = 0.9;  t_real(0, 1, 1) = 0.1;   // above it
    t_real(1, 0, 0) = 0.5;  t_real(1, 0, 1) = 0.5;
    t_real(1, 1, 0) = 0.45; t_real(1, 1, 1) = 0.55;
    Tensor3 reward(2, 2, 2);
    Eigen::MatrixXd pi(2, 2);
    pi << 0.5, 0.5, 0.55, 0.45;
    suite.push_back({"two_state_unrealizable",
                     TabularMdp(t_sim, reward, 0.85, uniform_rho(2)),
                     TabularMdp(t_real, reward, 0.85, uniform_rho(2)),
                     TabularPolicy(pi),
                     {false, false},
                     40});
  }

  // three-state drift chain: the real world drifts right more aggressively
  {
    Tensor3 t_sim(3, 2, 3);
    // action 0: tend to stay, action 1: tend to advance
    t_sim(0, 0, 0) = 0.85; t_sim(0, 0, 1) = 0.15;
    t_sim(0, 1, 1) = 0.9;  t_sim(0, 1, 0) = 0.1;
    t_sim(1, 0, 1) = 0.8;  t_sim(1, 0, 0) = 0.1; t_sim(1, 0, 2) = 0.1;
    t_sim(1, 1, 2) = 0.85; t_sim(1, 1, 1) = 0.15;
    t_sim(2, 0, 2) = 0.9;  t_sim(2, 0, 1) = 0.1;
    t_sim(2, 1, 0) = 0.7;  t_sim(2, 1, 2) = 0.3;
    Tensor3 t_real(3, 2, 3);
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 2; ++a)
        for (int s2 = 0; s2 < 3; ++s2)
          t_real(s, a, s2) = 0.55 * t_sim(s, a, s2) + 0.45 * t_sim(s, 1 - a, s2);
    Tensor3 reward(3, 2, 3);
    Eigen::MatrixXd pi(3, 2);
    pi << 0.65, 0.35, 0.5, 0.5, 0.4, 0.6;
    suite.push_back({"three_state_drift",
                     TabularMdp(t_sim, reward, 0.9, uniform_rho(3)),
                     TabularMdp(t_real, reward, 0.9, uniform_rho(3)),
                     TabularPolicy(pi),
                     {false, false, false},
                     40});
  }

  // two states, three actions; realizable through the extra action
  {
    Tensor3 t_sim(2, 3, 2);
    t_sim(0, 0, 0) = 0.95; t_sim(0, 0, 1) = 0.05;
    t_sim(0, 1, 0) = 0.5;  t_sim(0, 1, 1) = 0.5;
    t_sim(0, 2, 0) = 0.05; t_sim(0, 2, 1) = 0.95;
    t_sim(1, 0, 0) = 0.9;  t_sim(1, 0, 1) = 0.1;
    t_sim(1, 1, 0) = 0.45; t_sim(1, 1, 1) = 0.55;
    t_sim(1, 2, 0) = 0.1;  t_sim(1, 2, 1) = 0.9;
    Tensor3 t_real(2, 3, 2);
    for (int s = 0; s < 2; ++s) {
      // each real action is a fixed blend of the three sim actions
      const double w[3][3] = {{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.1, 0.2, 0.7}};
      for (int a = 0; a < 3; ++a)
        for (int s2 = 0; s2 < 2; ++s2)
          for (int at = 0; at < 3; ++at)
            t_real(s, a, s2) += w[a][at] * t_sim(s, at, s2);
    }
    Tensor3 reward(2, 3, 2);
    Eigen::MatrixXd pi(2, 3);
    pi << 0.4, 0.35, 0.25, 0.3, 0.3, 0.4;
    suite.push_back({"two_state_three_action",
                     TabularMdp(t_sim, reward, 0.88, uniform_rho(2)),
                     TabularMdp(t_real, reward, 0.88, uniform_rho(2)),
                     TabularPolicy(pi),
                     {false, false},
                     40});
  }

  // 2x2 gridworld with slip mismatch (|S| * |A| = 16). Starts spread over
  // the whole grid and a moderate discount keep the transient rows visible
  // next to the absorbing goal's self-loop mass.
  {
    GridworldParams params;
    params.size = 2;
    params.gamma = 0.65;
    const EnvironmentPair pair = make_gridworld_pair(2, 0.0, 0.4, 0, params);
    TabularMdp sim = *pair.sim->tabular_view();
    TabularMdp real = *pair.real->tabular_view();
    sim.initial_dist = uniform_rho(4);
    real.initial_dist = uniform_rho(4);
    Eigen::MatrixXd pi(4, 4);
    pi << 0.4, 0.3, 0.2, 0.1,
          0.25, 0.25, 0.25, 0.25,
          0.1, 0.2, 0.3, 0.4,
          0.25, 0.25, 0.25, 0.25;
    // the goal is absorbing in the dynamics; rollouts continue through it so
    // the sampled visitation matches the infinite-horizon marginal exactly
    suite.push_back({"gridworld_2x2",
                     std::move(sim),
                     std::move(real),
                     TabularPolicy(pi),
                     std::vector<bool>(4, false),
                     40});
  }

  return suite;
}

}  // namespace simground
