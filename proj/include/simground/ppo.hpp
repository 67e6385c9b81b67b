#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/env.hpp"
#include "simground/mlp.hpp"
#include "simground/policy.hpp"
#include "simground/rng.hpp"

namespace simground {

/// Clipped-surrogate optimizer settings. Defaults are the transformer-policy
/// values; see AgentTrainConfig for the agent-side defaults.
struct PpoConfig {
  int minibatches = 2;
  int epochs = 1;
  double lambda = 0.95;
  double gamma = 0.99;
  double clip_ratio = 0.1;
  int batch_timesteps = 5000;
  double learning_rate = 0.0003;
  double vf_learning_rate = 0.0003;
  int vf_iters = 1;
  double entropy_coef = 0.0;
  std::vector<int> hidden = {64, 64};

  void validate() const {
    if (!(clip_ratio > 0.0 && clip_ratio < 1.0))
      throw std::invalid_argument("PpoConfig: clip_ratio must lie in (0, 1)");
    if (!(gamma >= 0.0 && gamma < 1.0) || !(lambda >= 0.0 && lambda <= 1.0))
      throw std::invalid_argument("PpoConfig: gamma in [0,1), lambda in [0,1]");
    if (minibatches < 1 || epochs < 1 || batch_timesteps < 1 || vf_iters < 0)
      throw std::invalid_argument("PpoConfig: counts must be positive");
  }

  nlohmann::json to_json() const {
    return {{"minibatches", minibatches},   {"epochs", epochs},
            {"lambda", lambda},             {"gamma", gamma},
            {"clip_ratio", clip_ratio},     {"batch_timesteps", batch_timesteps},
            {"learning_rate", learning_rate}, {"vf_learning_rate", vf_learning_rate},
            {"vf_iters", vf_iters},         {"entropy_coef", entropy_coef},
            {"hidden", hidden}};
  }

  static PpoConfig from_json(const nlohmann::json& j) {
    PpoConfig c;
    c.minibatches = j.value("minibatches", c.minibatches);
    c.epochs = j.value("epochs", c.epochs);
    c.lambda = j.value("lambda", c.lambda);
    c.gamma = j.value("gamma", c.gamma);
    c.clip_ratio = j.value("clip_ratio", c.clip_ratio);
    c.batch_timesteps = j.value("batch_timesteps", c.batch_timesteps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.vf_learning_rate = j.value("vf_learning_rate", c.vf_learning_rate);
    c.vf_iters = j.value("vf_iters", c.vf_iters);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.hidden = j.value("hidden", c.hidden);
    c.validate();
    return c;
  }
};

/// Agent-side training settings: discount/GAE/batch and the value-function
/// schedule keep their published defaults; the optimizer itself is the same
/// clipped-surrogate update used everywhere else in the repo.
struct AgentTrainConfig {
  PpoConfig ppo = default_ppo();
  int eval_episodes = 20;
  std::uint64_t eval_seed_offset = 1000003;  // eval stream kept apart from training

  static PpoConfig default_ppo() {
    PpoConfig c;
    c.gamma = 0.995;
    c.lambda = 0.97;
    c.batch_timesteps = 5000;
    c.learning_rate = 0.0004;
    c.vf_learning_rate = 0.001;
    c.vf_iters = 5;
    c.epochs = 10;
    c.minibatches = 16;
    c.clip_ratio = 0.2;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"ppo", ppo.to_json()}, {"eval_episodes", eval_episodes}};
  }

  static AgentTrainConfig from_json(const nlohmann::json& j) {
    AgentTrainConfig c;
    if (j.contains("ppo")) {
      nlohmann::json merged = c.ppo.to_json();
      merged.update(j.at("ppo"));
      c.ppo = PpoConfig::from_json(merged);
    }
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    return c;
  }
};

/// One on-policy batch. Column j of the matrices is timestep j; `truncs`
/// marks artificial episode ends (horizon or batch boundary) that should
/// bootstrap rather than terminate.
struct RolloutBatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd next_obs;
  Eigen::MatrixXd actions_raw;
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;
  Eigen::VectorXd truncs;
  Eigen::VectorXd logp;

  int size() const { return static_cast<int>(rewards.size()); }
};

struct EpisodeStats {
  std::vector<double> returns;

  double mean_return() const {
    if (returns.empty()) return 0.0;
    return std::accumulate(returns.begin(), returns.end(), 0.0) / returns.size();
  }
};

/// Collects exactly `timesteps` transitions on-policy, resetting the
/// environment at terminations and horizon ends.
inline RolloutBatch collect_batch(Environment& env, const StochasticPolicy& policy,
                                  int timesteps, Rng& rng, EpisodeStats* stats = nullptr) {
  const int obs_dim = env.observation_space().feature_dim();
  const int act_dim = env.action_space().dim();
  RolloutBatch batch;
  batch.obs.resize(obs_dim, timesteps);
  batch.next_obs.resize(obs_dim, timesteps);
  batch.actions_raw.resize(act_dim, timesteps);
  batch.rewards.resize(timesteps);
  batch.dones.resize(timesteps);
  batch.truncs.resize(timesteps);
  batch.logp.resize(timesteps);

  Eigen::VectorXd state = env.reset(rng);
  int t_in_episode = 0;
  double episode_return = 0.0;
  for (int t = 0; t < timesteps; ++t) {
    const Eigen::VectorXd obs = env.observe(state);
    const auto sample = policy.act(obs, rng);
    const StepResult r = env.step(sample.exec, rng);
    ++t_in_episode;
    episode_return += r.reward;

    const bool horizon_end = t_in_episode >= env.horizon();
    const bool batch_end = t + 1 == timesteps;
    batch.obs.col(t) = obs;
    batch.next_obs.col(t) = env.observe(r.next_state);
    batch.actions_raw.col(t) = sample.raw;
    batch.rewards[t] = r.reward;
    batch.logp[t] = sample.logp;
    batch.dones[t] = r.done ? 1.0 : 0.0;
    batch.truncs[t] = (!r.done && (horizon_end || batch_end)) ? 1.0 : 0.0;

    if (r.done || horizon_end) {
      if (stats) stats->returns.push_back(episode_return);
      episode_return = 0.0;
      t_in_episode = 0;
      state = env.reset(rng);
    } else {
      state = r.next_state;
    }
  }
  return batch;
}

/// Generalized advantage estimation. With lambda = 1 this reduces to the
/// Monte-Carlo advantage, with lambda = 0 to the one-step TD error.
inline Eigen::VectorXd gae_advantages(const Eigen::VectorXd& rewards,
                                      const Eigen::VectorXd& dones,
                                      const Eigen::VectorXd& truncs,
                                      const Eigen::VectorXd& values,
                                      const Eigen::VectorXd& next_values, double gamma,
                                      double lambda) {
  const int n = static_cast<int>(rewards.size());
  Eigen::VectorXd adv(n);
  double running = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double nonterminal = 1.0 - dones[t];
    const double delta = rewards[t] + gamma * nonterminal * next_values[t] - values[t];
    const double carry = nonterminal * (1.0 - truncs[t]);
    running = delta + gamma * lambda * carry * running;
    adv[t] = running;
  }
  return adv;
}

struct PpoDiagnostics {
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double mean_entropy = 0.0;
  double mean_reward = 0.0;
};

/// One PPO update: clipped surrogate on normalized GAE advantages, value
/// regression to the lambda-returns.
inline PpoDiagnostics ppo_update(StochasticPolicy& policy, Mlp& value_net,
                                 const RolloutBatch& batch, const PpoConfig& cfg,
                                 Adam& policy_opt, Adam& value_opt, Rng& rng) {
  cfg.validate();
  const int n = batch.size();
  if (n == 0) throw std::invalid_argument("ppo_update: empty batch");
  if (!batch.rewards.allFinite() || !batch.obs.allFinite() || !batch.actions_raw.allFinite())
    throw std::invalid_argument("ppo_update: non-finite data in batch");

  const Eigen::VectorXd values = value_net.forward(batch.obs).transpose();
  const Eigen::VectorXd next_values = value_net.forward(batch.next_obs).transpose();
  Eigen::VectorXd adv = gae_advantages(batch.rewards, batch.dones, batch.truncs, values,
                                       next_values, cfg.gamma, cfg.lambda);
  const Eigen::VectorXd lambda_returns = adv + values;

  // normalize advantages per batch
  const double mean = adv.mean();
  const double stddev = std::sqrt((adv.array() - mean).square().sum() / n);
  adv = (adv.array() - mean) / (stddev + 1e-8);

  PpoDiagnostics diag;
  diag.mean_reward = batch.rewards.mean();

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  long kl_terms = 0;
  double kl_sum = 0.0, clip_sum = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the caller's stream; deterministic under the seed
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.randint(i + 1)]);
    const int per_mb = (n + cfg.minibatches - 1) / cfg.minibatches;
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int lo = mb * per_mb;
      const int hi = std::min(n, lo + per_mb);
      if (lo >= hi) continue;
      const int m = hi - lo;
      Eigen::MatrixXd mb_obs(batch.obs.rows(), m);
      Eigen::MatrixXd mb_act(batch.actions_raw.rows(), m);
      Eigen::VectorXd mb_adv(m), mb_logp_old(m);
      for (int k = 0; k < m; ++k) {
        const int idx = order[lo + k];
        mb_obs.col(k) = batch.obs.col(idx);
        mb_act.col(k) = batch.actions_raw.col(idx);
        mb_adv[k] = adv[idx];
        mb_logp_old[k] = batch.logp[idx];
      }
      const Eigen::VectorXd logp_new = policy.logp_batch(mb_obs, mb_act);
      Eigen::VectorXd weights(m);
      for (int k = 0; k < m; ++k) {
        const double ratio = std::exp(logp_new[k] - mb_logp_old[k]);
        const double clipped =
            std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        const bool use_unclipped = ratio * mb_adv[k] <= clipped * mb_adv[k];
        // d/dlogp of -min(r A, clip(r) A): the clipped branch is flat
        weights[k] = use_unclipped ? -(ratio * mb_adv[k]) / m : 0.0;
        kl_sum += mb_logp_old[k] - logp_new[k];
        ++kl_terms;
        if (std::abs(ratio - 1.0) > cfg.clip_ratio) clip_sum += 1.0;
      }
      Eigen::VectorXd grad = policy.grad_weighted_logp(mb_obs, mb_act, weights);
      if (cfg.entropy_coef != 0.0)
        grad -= cfg.entropy_coef * policy.grad_mean_entropy(mb_obs);
      Eigen::VectorXd params = policy.params();
      policy_opt.step(params, grad);
      policy.set_params(params);
    }
  }
  if (kl_terms > 0) diag.mean_kl = kl_sum / kl_terms;
  diag.clip_fraction = kl_terms > 0 ? clip_sum / kl_terms : 0.0;

  // value regression to lambda-returns
  for (int it = 0; it < cfg.vf_iters; ++it) {
    Mlp::Cache cache;
    const Eigen::MatrixXd pred = value_net.forward(batch.obs, &cache);
    const Eigen::MatrixXd err = pred - lambda_returns.transpose();
    diag.value_loss = err.array().square().mean();
    const auto grads = value_net.backward(cache, (2.0 / n) * err);
    Eigen::VectorXd vparams = value_net.flatten();
    value_opt.step(vparams, Mlp::flatten_grads(grads));
    value_net.set_from_flat(vparams);
  }
  diag.mean_entropy = policy.mean_entropy(batch.obs);
  return diag;
}

/// Mean and standard deviation of episode returns under a policy.
struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  int episodes = 0;
};

inline EvalResult evaluate_policy(Environment& env, const StochasticPolicy& policy,
                                  int episodes, std::uint64_t seed,
                                  bool deterministic = true) {
  PolicyActions source(policy, deterministic);
  const auto trajectories = rollout(env, source, episodes, seed);
  EvalResult res;
  res.episodes = episodes;
  for (const auto& t : trajectories) res.mean_return += t.total_reward();
  res.mean_return /= episodes;
  for (const auto& t : trajectories) {
    const double d = t.total_reward() - res.mean_return;
    res.std_return += d * d;
  }
  res.std_return = std::sqrt(res.std_return / episodes);
  return res;
}

struct LearningCurvePoint {
  long timestep = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

struct AgentTrainResult {
  std::unique_ptr<StochasticPolicy> policy;  // best-so-far by evaluation
  Mlp value_net;
  std::vector<LearningCurvePoint> curve;
  double best_return = 0.0;
};

/// Trains `policy`/`value_net` in place for `total_timesteps`, snapshotting
/// the best policy by deterministic evaluation return.
inline AgentTrainResult train_policy(Environment& env, StochasticPolicy& policy,
                                     Mlp& value_net, const AgentTrainConfig& cfg,
                                     long total_timesteps, std::uint64_t seed) {
  cfg.ppo.validate();
  Rng master(seed);
  master.fork(1);  // keep the stream layout of fresh-policy training
  Rng train_rng = master.fork(2);

  AgentTrainResult result;
  auto env_copy = env.clone();
  const EvalResult initial =
      evaluate_policy(*env_copy, policy, cfg.eval_episodes, seed + cfg.eval_seed_offset);
  result.best_return = initial.mean_return;
  result.policy = policy.clone();
  result.curve.push_back({0, initial.mean_return, initial.std_return});

  Adam policy_opt(policy.n_params(), cfg.ppo.learning_rate);
  Adam value_opt(value_net.n_params(), cfg.ppo.vf_learning_rate);

  long steps = 0;
  while (steps < total_timesteps) {
    EpisodeStats stats;
    const RolloutBatch batch =
        collect_batch(env, policy, cfg.ppo.batch_timesteps, train_rng, &stats);
    steps += batch.size();
    ppo_update(policy, value_net, batch, cfg.ppo, policy_opt, value_opt, train_rng);

    const EvalResult eval =
        evaluate_policy(*env_copy, policy, cfg.eval_episodes, seed + cfg.eval_seed_offset);
    result.curve.push_back({steps, eval.mean_return, eval.std_return});
    if (eval.mean_return > result.best_return) {
      result.best_return = eval.mean_return;
      result.policy = policy.clone();
    }
  }
  result.value_net = value_net;
  return result;
}

/// Trains a fresh policy in `env` for `total_timesteps`, returning the
/// best-so-far policy by deterministic evaluation return.
inline AgentTrainResult train_agent(Environment& env, const AgentTrainConfig& cfg,
                                    long total_timesteps, std::uint64_t seed) {
  cfg.ppo.validate();
  Rng master(seed);
  Rng init_rng = master.fork(1);

  auto policy = make_policy(env, cfg.ppo.hidden, init_rng);
  std::vector<int> vsizes{env.observation_space().feature_dim()};
  vsizes.insert(vsizes.end(), cfg.ppo.hidden.begin(), cfg.ppo.hidden.end());
  vsizes.push_back(1);
  Mlp value_net(vsizes, init_rng);

  return train_policy(env, *policy, value_net, cfg, total_timesteps, seed);
}

}  // namespace simground
