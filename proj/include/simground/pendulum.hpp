#pragma once

#include <cmath>
#include <memory>

#include "simground/env.hpp"

namespace simground {

/// Torque-controlled inverted pendulum. State is (angle, angular velocity)
/// with angle 0 pointing straight up; gravity pushes away from the top. The
/// normalized action in [-1, 1] scales to a saturated torque. Heavier
/// pendulums feel the same gravity lean but far less torque authority, which
/// is the dynamics gap the grounding methods have to close.
struct PendulumParams {
  double mass = 4.89;
  double dt = 0.02;
  int horizon = 200;
  double gravity = 9.81;
  double length = 1.0;
  double max_torque = 350.0;
  double fall_angle = 0.25;   // |angle| >= this ends the episode
  double start_range = 0.05;  // initial angle/velocity drawn from +/- this
};

class PendulumEnv : public Environment {
 public:
  explicit PendulumEnv(PendulumParams params) : params_(params), state_(2) {
    if (params_.mass <= 0.0) throw std::invalid_argument("pendulum: mass must be > 0");
    if (params_.dt <= 0.0 || params_.dt > 0.1)
      throw std::invalid_argument("pendulum: dt must lie in (0, 0.1]");
    state_space_ = SpaceSpec::box(Eigen::Vector2d(-50.0, -50.0), Eigen::Vector2d(50.0, 50.0));
    action_space_ = SpaceSpec::box(Eigen::VectorXd::Constant(1, -1.0),
                                   Eigen::VectorXd::Constant(1, 1.0));
    state_.setZero();
  }

  const PendulumParams& params() const { return params_; }

  const SpaceSpec& state_space() const override { return state_space_; }
  const SpaceSpec& observation_space() const override { return state_space_; }
  const SpaceSpec& action_space() const override { return action_space_; }
  int horizon() const override { return params_.horizon; }

  Eigen::VectorXd reset(Rng& rng) override {
    state_[0] = rng.uniform(-params_.start_range, params_.start_range);
    state_[1] = rng.uniform(-params_.start_range, params_.start_range);
    return state_;
  }

  StepResult step(const Eigen::VectorXd& action, Rng&) override {
    const double a = std::clamp(action[0], -1.0, 1.0);
    const double torque = a * params_.max_torque;
    const double inertia = params_.mass * params_.length * params_.length;
    // semi-implicit Euler: velocity first, then position with the new velocity
    const double accel =
        (params_.gravity / params_.length) * std::sin(state_[0]) + torque / inertia;
    state_[1] += params_.dt * accel;
    state_[0] += params_.dt * state_[1];
    const bool upright = std::abs(state_[0]) < params_.fall_angle;
    return {state_, upright ? 1.0 : 0.0, !upright};
  }

  Eigen::VectorXd state() const override { return state_; }

  void set_state(const Eigen::VectorXd& s) override {
    check_state_in_bounds(s);
    state_ = s;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<PendulumEnv>(*this);
  }

  /// Total mechanical energy; used to sanity-check the integrator.
  double energy() const {
    const double i = params_.mass * params_.length * params_.length;
    return 0.5 * i * state_[1] * state_[1] +
           params_.mass * params_.gravity * params_.length * std::cos(state_[0]);
  }

 private:
  PendulumParams params_;
  SpaceSpec state_space_;
  SpaceSpec action_space_;
  Eigen::VectorXd state_;
};

inline EnvironmentPair make_pendulum_pair(double sim_mass = 4.89, double real_mass = 100.0,
                                          double dt = 0.02, int horizon = 200) {
  PendulumParams sim;
  sim.mass = sim_mass;
  sim.dt = dt;
  sim.horizon = horizon;
  PendulumParams real = sim;
  real.mass = real_mass;
  return EnvironmentPair(std::make_unique<PendulumEnv>(sim),
                         std::make_unique<PendulumEnv>(real),
                         {"mass", sim_mass, real_mass});
}

}  // namespace simground
