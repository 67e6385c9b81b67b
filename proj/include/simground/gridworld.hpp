#pragma once

#include <memory>
#include <string>
#include <vector>

#include "simground/env.hpp"
#include "simground/tabular_mdp.hpp"

namespace simground {

/// Environment backed by an explicit TabularMdp. States and actions are
/// indices; observations are one-hot.
class TabularEnv : public Environment {
 public:
  TabularEnv(TabularMdp mdp, std::vector<bool> terminal, int horizon)
      : mdp_(std::move(mdp)),
        terminal_(std::move(terminal)),
        horizon_(horizon),
        state_space_(SpaceSpec::discrete(mdp_.n_states)),
        action_space_(SpaceSpec::discrete(mdp_.n_actions)),
        state_(Eigen::VectorXd::Zero(1)) {
    if (static_cast<int>(terminal_.size()) != mdp_.n_states)
      throw std::invalid_argument("TabularEnv: terminal mask size mismatch");
  }

  const SpaceSpec& state_space() const override { return state_space_; }
  const SpaceSpec& observation_space() const override { return state_space_; }
  const SpaceSpec& action_space() const override { return action_space_; }
  int horizon() const override { return horizon_; }

  Eigen::VectorXd reset(Rng& rng) override {
    std::vector<double> rho0(mdp_.initial_dist.data(),
                             mdp_.initial_dist.data() + mdp_.initial_dist.size());
    state_[0] = rng.categorical(rho0);
    return state_;
  }

  StepResult step(const Eigen::VectorXd& action, Rng& rng) override {
    const int s = static_cast<int>(state_[0]);
    const int a = static_cast<int>(action[0]);
    if (a < 0 || a >= mdp_.n_actions)
      throw std::invalid_argument("TabularEnv: action index out of range");
    const int s2 = rng.categorical(mdp_.transition.row(s, a));
    const double reward = mdp_.reward(s, a, s2);
    state_[0] = s2;
    return {state_, reward, terminal_[s2]};
  }

  Eigen::VectorXd state() const override { return state_; }

  void set_state(const Eigen::VectorXd& s) override {
    check_state_in_bounds(s);
    state_ = s;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<TabularEnv>(*this);
  }

  const TabularMdp* tabular_view() const override { return &mdp_; }
  const std::vector<bool>* terminal_states() const override { return &terminal_; }

 private:
  TabularMdp mdp_;
  std::vector<bool> terminal_;
  int horizon_;
  SpaceSpec state_space_;
  SpaceSpec action_space_;
  Eigen::VectorXd state_;
};

/// Builds the gridworld transition tensor: a size x size grid, four moves
/// (up, down, left, right) that bounce off walls, a slip probability with
/// which the commanded move is replaced by a uniformly random one, and an
/// absorbing goal in the bottom-right corner paying 1 on entry.
inline TabularMdp gridworld_mdp(int size, double slip, double gamma) {
  if (size < 2) throw std::invalid_argument("gridworld: size must be >= 2");
  if (slip < 0.0 || slip > 1.0)
    throw std::invalid_argument("gridworld: slip must be a probability");
  const int n = size * size;
  const int goal = n - 1;
  const auto moved = [size](int s, int move) {
    int r = s / size, c = s % size;
    switch (move) {
      case 0: r = std::max(r - 1, 0); break;
      case 1: r = std::min(r + 1, size - 1); break;
      case 2: c = std::max(c - 1, 0); break;
      default: c = std::min(c + 1, size - 1); break;
    }
    return r * size + c;
  };

  Tensor3 t(n, 4, n);
  Tensor3 reward(n, 4, n);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {
        t(s, a, goal) = 1.0;
        continue;
      }
      t(s, a, moved(s, a)) += 1.0 - slip;
      for (int m = 0; m < 4; ++m) t(s, a, moved(s, m)) += slip / 4.0;
      for (int s2 = 0; s2 < n; ++s2)
        if (s2 == goal) reward(s, a, s2) = 1.0;
    }
  }
  Eigen::VectorXd rho0 = Eigen::VectorXd::Zero(n);
  rho0[0] = 1.0;
  return TabularMdp(std::move(t), std::move(reward), gamma, std::move(rho0));
}

struct GridworldParams {
  int size = 4;
  double gamma = 0.95;
  int horizon = 0;  // 0 picks 4 * size * size
};

inline std::unique_ptr<TabularEnv> make_gridworld(int size, double slip,
                                                  const GridworldParams& params = {}) {
  TabularMdp mdp = gridworld_mdp(size, slip, params.gamma);
  std::vector<bool> terminal(mdp.n_states, false);
  terminal[mdp.n_states - 1] = true;
  const int horizon = params.horizon > 0 ? params.horizon : 4 * size * size;
  return std::make_unique<TabularEnv>(std::move(mdp), std::move(terminal), horizon);
}

inline EnvironmentPair make_gridworld_pair(int size, double sim_slip, double real_slip,
                                           std::uint64_t seed = 0,
                                           const GridworldParams& params = {}) {
  (void)seed;  // layout is fixed; stochasticity enters at rollout time
  return EnvironmentPair(make_gridworld(size, sim_slip, params),
                         make_gridworld(size, real_slip, params),
                         {"slip", sim_slip, real_slip});
}

}  // namespace simground
