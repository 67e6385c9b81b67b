#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/rng.hpp"
#include "simground/tabular_mdp.hpp"

namespace simground {

/// Descriptor for a state, observation or action space. Discrete spaces are
/// index-valued (vectors of length 1); box spaces carry per-dimension bounds.
struct SpaceSpec {
  enum class Kind { Discrete, Box };

  Kind kind = Kind::Discrete;
  int n = 0;                 // number of elements, discrete only
  Eigen::VectorXd low, high; // bounds, box only

  static SpaceSpec discrete(int n) {
    SpaceSpec s;
    s.kind = Kind::Discrete;
    s.n = n;
    return s;
  }

  static SpaceSpec box(Eigen::VectorXd low, Eigen::VectorXd high) {
    if (low.size() != high.size())
      throw std::invalid_argument("SpaceSpec: bound sizes differ");
    SpaceSpec s;
    s.kind = Kind::Box;
    s.low = std::move(low);
    s.high = std::move(high);
    return s;
  }

  bool is_discrete() const { return kind == Kind::Discrete; }

  /// Length of the raw vector representation.
  int dim() const { return is_discrete() ? 1 : static_cast<int>(low.size()); }

  /// Length of the feature encoding (one-hot for discrete).
  int feature_dim() const { return is_discrete() ? n : static_cast<int>(low.size()); }

  bool contains(const Eigen::VectorXd& v) const {
    if (v.size() != dim()) return false;
    if (is_discrete()) {
      const int i = static_cast<int>(v[0]);
      return i >= 0 && i < n && v[0] == static_cast<double>(i);
    }
    for (int i = 0; i < v.size(); ++i)
      if (v[i] < low[i] || v[i] > high[i]) return false;
    return true;
  }

  Eigen::VectorXd clip(const Eigen::VectorXd& v) const {
    if (is_discrete()) return v;
    return v.cwiseMax(low).cwiseMin(high);
  }

  /// Feature encoding used by function approximators.
  Eigen::VectorXd features(const Eigen::VectorXd& v) const {
    if (!is_discrete()) return v;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    f[static_cast<int>(v[0])] = 1.0;
    return f;
  }

  friend bool operator==(const SpaceSpec& a, const SpaceSpec& b) {
    if (a.kind != b.kind) return false;
    if (a.is_discrete()) return a.n == b.n;
    return a.low == b.low && a.high == b.high;
  }
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool done = false;
};

/// A single-threaded stateful environment. All stochasticity flows through
/// the Rng argument, so (state, action, rng state) fully determines a step.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const SpaceSpec& state_space() const = 0;
  virtual const SpaceSpec& observation_space() const = 0;
  virtual const SpaceSpec& action_space() const = 0;
  virtual int horizon() const = 0;

  virtual Eigen::VectorXd reset(Rng& rng) = 0;
  virtual StepResult step(const Eigen::VectorXd& action, Rng& rng) = 0;

  virtual Eigen::VectorXd state() const = 0;

  /// Jump to an arbitrary in-bounds state; the next step proceeds from it.
  /// Real robots cannot do this -- it exists for the per-step transition
  /// error protocol, which replays recorded states through a simulator.
  virtual void set_state(const Eigen::VectorXd& s) = 0;

  /// Feature encoding of a state for function approximators.
  virtual Eigen::VectorXd observe(const Eigen::VectorXd& state) const {
    return observation_space().features(state);
  }

  virtual std::unique_ptr<Environment> clone() const = 0;

  /// Exact finite-MDP view, if one exists for this environment.
  virtual const TabularMdp* tabular_view() const { return nullptr; }
  /// Terminal-state mask accompanying the tabular view.
  virtual const std::vector<bool>* terminal_states() const { return nullptr; }

 protected:
  void check_state_in_bounds(const Eigen::VectorXd& s) const {
    if (!state_space().contains(s))
      throw std::invalid_argument("set_state: state out of bounds");
  }
};

struct TransitionRecord {
  Eigen::VectorXd state;
  Eigen::VectorXd action;      // the agent's action as executed
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool done = false;
};

/// One episode worth of transitions plus the stream id that generated it.
struct Trajectory {
  std::vector<TransitionRecord> records;
  std::uint64_t seed = 0;

  double total_reward() const {
    double s = 0.0;
    for (const auto& r : records) s += r.reward;
    return s;
  }
};

/// Minimal policy surface needed by rollouts: draw an executable action.
class ActionSource {
 public:
  virtual ~ActionSource() = default;
  virtual Eigen::VectorXd sample_action(const Eigen::VectorXd& obs, Rng& rng) const = 0;
};

/// Uniform-random action source for any action space.
class UniformRandomActions : public ActionSource {
 public:
  explicit UniformRandomActions(SpaceSpec action_space) : space_(std::move(action_space)) {}

  Eigen::VectorXd sample_action(const Eigen::VectorXd&, Rng& rng) const override {
    if (space_.is_discrete()) {
      Eigen::VectorXd a(1);
      a[0] = rng.randint(space_.n);
      return a;
    }
    Eigen::VectorXd a(space_.dim());
    for (int i = 0; i < a.size(); ++i) a[i] = rng.uniform(space_.low[i], space_.high[i]);
    return a;
  }

 private:
  SpaceSpec space_;
};

/// Rolls `n_episodes` episodes. Each episode runs on its own derived stream
/// (seed, episode index), so episodes are independent of each other's length.
inline std::vector<Trajectory> rollout(Environment& env, const ActionSource& policy,
                                       int n_episodes, std::uint64_t seed) {
  std::vector<Trajectory> out;
  out.reserve(n_episodes);
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng(seed, static_cast<std::uint64_t>(ep));
    Trajectory traj;
    traj.seed = seed;
    Eigen::VectorXd s = env.reset(rng);
    for (int t = 0; t < env.horizon(); ++t) {
      const Eigen::VectorXd a = policy.sample_action(env.observe(s), rng);
      const StepResult r = env.step(a, rng);
      traj.records.push_back({s, a, r.next_state, r.reward, r.done});
      s = r.next_state;
      if (r.done) break;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

/// Rolls episodes until `budget` transitions have been consumed, truncating
/// the final episode exactly at the budget. Used for real-world collection
/// where every transition counts.
struct CollectResult {
  std::vector<Trajectory> trajectories;
  long transitions_used = 0;
};

inline CollectResult collect_transitions(Environment& env, const ActionSource& policy,
                                         long budget, std::uint64_t seed) {
  if (budget <= 0) throw std::invalid_argument("collect_transitions: budget must be > 0");
  CollectResult result;
  for (std::uint64_t ep = 0; result.transitions_used < budget; ++ep) {
    Rng rng(seed, ep);
    Trajectory traj;
    traj.seed = seed;
    Eigen::VectorXd s = env.reset(rng);
    for (int t = 0; t < env.horizon() && result.transitions_used < budget; ++t) {
      const Eigen::VectorXd a = policy.sample_action(env.observe(s), rng);
      const StepResult r = env.step(a, rng);
      traj.records.push_back({s, a, r.next_state, r.reward, r.done});
      ++result.transitions_used;
      s = r.next_state;
      if (r.done) break;
    }
    result.trajectories.push_back(std::move(traj));
  }
  return result;
}

/// Ends each episode with probability (1 - continue_prob) after every step.
/// Rolling out through this wrapper makes the batch's visitation frequencies
/// an unbiased sample of the discounted marginal transition distribution,
/// which is what the exact tabular oracles are defined over.
class GeometricHorizonEnv : public Environment {
 public:
  GeometricHorizonEnv(std::unique_ptr<Environment> inner, double continue_prob)
      : inner_(std::move(inner)), continue_prob_(continue_prob) {
    if (!(continue_prob > 0.0 && continue_prob < 1.0))
      throw std::invalid_argument("GeometricHorizonEnv: continue_prob in (0, 1)");
  }

  GeometricHorizonEnv(const GeometricHorizonEnv& o)
      : inner_(o.inner_->clone()), continue_prob_(o.continue_prob_) {}

  const SpaceSpec& state_space() const override { return inner_->state_space(); }
  const SpaceSpec& observation_space() const override { return inner_->observation_space(); }
  const SpaceSpec& action_space() const override { return inner_->action_space(); }
  int horizon() const override { return inner_->horizon(); }

  Eigen::VectorXd reset(Rng& rng) override { return inner_->reset(rng); }

  StepResult step(const Eigen::VectorXd& action, Rng& rng) override {
    StepResult r = inner_->step(action, rng);
    if (!r.done && rng.uniform() >= continue_prob_) r.done = true;
    return r;
  }

  Eigen::VectorXd state() const override { return inner_->state(); }
  void set_state(const Eigen::VectorXd& s) override { inner_->set_state(s); }
  Eigen::VectorXd observe(const Eigen::VectorXd& s) const override {
    return inner_->observe(s);
  }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<GeometricHorizonEnv>(*this);
  }
  const TabularMdp* tabular_view() const override { return inner_->tabular_view(); }
  const std::vector<bool>* terminal_states() const override {
    return inner_->terminal_states();
  }

 private:
  std::unique_ptr<Environment> inner_;
  double continue_prob_;
};

/// Which dynamics property differs between the two halves of a pair.
struct ModificationRecord {
  std::string property_name;
  double default_value = 0.0;
  double modified_value = 0.0;
};

/// Simulator plus "real" environment sharing identical space descriptors but
/// differing in one dynamics property.
struct EnvironmentPair {
  std::unique_ptr<Environment> sim;
  std::unique_ptr<Environment> real;
  ModificationRecord modification;

  EnvironmentPair(std::unique_ptr<Environment> sim_in, std::unique_ptr<Environment> real_in,
                  ModificationRecord mod)
      : sim(std::move(sim_in)), real(std::move(real_in)), modification(std::move(mod)) {
    if (!(sim->observation_space() == real->observation_space()) ||
        !(sim->action_space() == real->action_space()) ||
        !(sim->state_space() == real->state_space()))
      throw std::invalid_argument("EnvironmentPair: sim and real must share spaces");
  }

  EnvironmentPair(const EnvironmentPair& o)
      : sim(o.sim->clone()), real(o.real->clone()), modification(o.modification) {}
};

}  // namespace simground
