#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "simground/env.hpp"
#include "simground/ppo.hpp"

namespace simground {

/// Adds zero-mean Gaussian noise to executed actions, clipping afterwards.
/// With std 0 the wrapper consumes no random draws, so training through it
/// is bit-identical to training on the bare environment.
class NoisyActionEnv : public Environment {
 public:
  NoisyActionEnv(std::unique_ptr<Environment> inner, double noise_std)
      : inner_(std::move(inner)), noise_std_(noise_std) {
    if (noise_std < 0.0) throw std::invalid_argument("NoisyActionEnv: std must be >= 0");
    if (inner_->action_space().is_discrete())
      throw std::invalid_argument("NoisyActionEnv: box action space required");
  }

  NoisyActionEnv(const NoisyActionEnv& o)
      : inner_(o.inner_->clone()), noise_std_(o.noise_std_) {}

  const SpaceSpec& state_space() const override { return inner_->state_space(); }
  const SpaceSpec& observation_space() const override { return inner_->observation_space(); }
  const SpaceSpec& action_space() const override { return inner_->action_space(); }
  int horizon() const override { return inner_->horizon(); }

  Eigen::VectorXd reset(Rng& rng) override { return inner_->reset(rng); }

  StepResult step(const Eigen::VectorXd& action, Rng& rng) override {
    if (noise_std_ == 0.0) return inner_->step(action, rng);
    Eigen::VectorXd noisy = action;
    for (int i = 0; i < noisy.size(); ++i) noisy[i] += rng.normal(0.0, noise_std_);
    return inner_->step(action_space().clip(noisy), rng);
  }

  Eigen::VectorXd state() const override { return inner_->state(); }
  void set_state(const Eigen::VectorXd& s) override { inner_->set_state(s); }
  Eigen::VectorXd observe(const Eigen::VectorXd& s) const override {
    return inner_->observe(s);
  }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<NoisyActionEnv>(*this);
  }

 private:
  std::unique_ptr<Environment> inner_;
  double noise_std_;
};

struct AneConfig {
  std::vector<double> stds = {0.1, 0.3, 0.5};
  int eval_episodes = 50;

  void validate() const {
    if (stds.empty()) throw std::invalid_argument("AneConfig: std list must be non-empty");
    for (double s : stds)
      if (s < 0.0) throw std::invalid_argument("AneConfig: stds must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"stds", stds}, {"eval_episodes", eval_episodes}};
  }

  static AneConfig from_json(const nlohmann::json& j) {
    AneConfig c;
    c.stds = j.value("stds", c.stds);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.validate();
    return c;
  }
};

struct AneSweepRow {
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  double real_return = 0.0;
  double sim_return = 0.0;
  long real_transitions_used = 0;  // training uses none; evaluation is not charged
};

struct AneResult {
  std::unique_ptr<StochasticPolicy> best_policy;
  double best_std = 0.0;
  double best_mean_real_return = 0.0;
  std::vector<AneSweepRow> sweep;
};

/// Trains one policy per (noise std, seed) cell in the noise-wrapped
/// simulator, evaluates each in the real environment, and reports the best
/// hyperparameter by mean real return across seeds.
inline AneResult ane_train(const EnvironmentPair& pair, const AneConfig& cfg,
                           const AgentTrainConfig& agent_cfg, long total_timesteps,
                           const std::vector<std::uint64_t>& seeds,
                           std::uint64_t eval_seed = 424242) {
  cfg.validate();
  if (seeds.empty()) throw std::invalid_argument("ane_train: seeds must be non-empty");

  AneResult result;
  double best_mean = -1e300;
  int best_std_index = -1;
  std::vector<std::vector<std::unique_ptr<StochasticPolicy>>> policies(cfg.stds.size());

  for (std::size_t si = 0; si < cfg.stds.size(); ++si) {
    double mean_real = 0.0;
    for (std::uint64_t seed : seeds) {
      NoisyActionEnv noisy(pair.sim->clone(), cfg.stds[si]);
      AgentTrainResult trained = train_agent(noisy, agent_cfg, total_timesteps, seed);
      auto real_env = pair.real->clone();
      auto sim_env = pair.sim->clone();
      const double real_return =
          evaluate_policy(*real_env, *trained.policy, cfg.eval_episodes, eval_seed)
              .mean_return;
      const double sim_return =
          evaluate_policy(*sim_env, *trained.policy, cfg.eval_episodes, eval_seed)
              .mean_return;
      result.sweep.push_back({cfg.stds[si], seed, real_return, sim_return, 0});
      mean_real += real_return;
      policies[si].push_back(std::move(trained.policy));
    }
    mean_real /= seeds.size();
    if (mean_real > best_mean) {
      best_mean = mean_real;
      best_std_index = static_cast<int>(si);
    }
  }

  result.best_std = cfg.stds[best_std_index];
  result.best_mean_real_return = best_mean;
  // within the best hyperparameter, hand back the best seed's policy
  double best_row = -1e300;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const auto& row = result.sweep[best_std_index * seeds.size() + k];
    if (row.real_return > best_row) {
      best_row = row.real_return;
      result.best_policy = policies[best_std_index][k]->clone();
    }
  }
  return result;
}

}  // namespace simground
