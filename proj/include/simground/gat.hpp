#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "simground/discriminator.hpp"
#include "simground/env.hpp"
#include "simground/grounding.hpp"
#include "simground/mlp.hpp"
#include "simground/rng.hpp"

namespace simground {

struct GatConfig {
  double alpha = 0.95;  // smoothing weight toward the transformed action
  std::vector<int> model_hidden = {64, 64};
  int epochs = 250;
  int minibatch = 256;
  double learning_rate = 1e-3;
  long sim_transitions = 20000;  // budget for the inverse model's sim data
  double laplace = 1e-3;         // tabular count smoothing

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0)
      throw std::invalid_argument("GatConfig: alpha must lie in [0, 1]");
    if (epochs < 1 || minibatch < 1 || sim_transitions < 1)
      throw std::invalid_argument("GatConfig: counts must be positive");
  }

  nlohmann::json to_json() const {
    return {{"alpha", alpha},           {"model_hidden", model_hidden},
            {"epochs", epochs},         {"minibatch", minibatch},
            {"learning_rate", learning_rate}, {"sim_transitions", sim_transitions},
            {"laplace", laplace}};
  }

  static GatConfig from_json(const nlohmann::json& j) {
    GatConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.model_hidden = j.value("model_hidden", c.model_hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.sim_transitions = j.value("sim_transitions", c.sim_transitions);
    c.laplace = j.value("laplace", c.laplace);
    c.validate();
    return c;
  }
};

/// MLP regressor with input/output standardization, trained on squared error.
class MlpRegressor {
 public:
  MlpRegressor() = default;

  static MlpRegressor fit(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                          const std::vector<int>& hidden, int epochs, int minibatch,
                          double learning_rate, Rng& rng) {
    if (inputs.cols() != targets.cols() || inputs.cols() == 0)
      throw std::invalid_argument("MlpRegressor: bad training data");
    MlpRegressor model;
    model.in_std_ = Standardizer::fit(inputs);
    model.out_std_ = Standardizer::fit(targets);
    std::vector<int> sizes{static_cast<int>(inputs.rows())};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(static_cast<int>(targets.rows()));
    model.net_ = Mlp(sizes, rng);

    const Eigen::MatrixXd x = model.in_std_.apply(inputs);
    const Eigen::MatrixXd y = model.out_std_.apply(targets);
    const int n = static_cast<int>(x.cols());
    Adam opt(model.net_.n_params(), learning_rate);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.randint(i + 1)]);
      for (int lo = 0; lo < n; lo += minibatch) {
        const int m = std::min(minibatch, n - lo);
        Eigen::MatrixXd xb(x.rows(), m), yb(y.rows(), m);
        for (int k = 0; k < m; ++k) {
          xb.col(k) = x.col(order[lo + k]);
          yb.col(k) = y.col(order[lo + k]);
        }
        Mlp::Cache cache;
        const Eigen::MatrixXd pred = model.net_.forward(xb, &cache);
        const auto grads = model.net_.backward(cache, (2.0 / m) * (pred - yb));
        Eigen::VectorXd params = model.net_.flatten();
        opt.step(params, Mlp::flatten_grads(grads));
        model.net_.set_from_flat(params);
      }
    }
    return model;
  }

  Eigen::VectorXd predict(const Eigen::VectorXd& input) const {
    const Eigen::VectorXd x =
        (input - in_std_.mean).cwiseProduct(in_std_.inv_std);
    const Eigen::VectorXd y = net_.forward_one(x);
    return y.cwiseQuotient(out_std_.inv_std) + out_std_.mean;
  }

  double mse(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) const {
    double acc = 0.0;
    for (int j = 0; j < inputs.cols(); ++j)
      acc += (predict(inputs.col(j)) - targets.col(j)).squaredNorm();
    return acc / inputs.cols();
  }

 private:
  Mlp net_;
  Standardizer in_std_, out_std_;
};

/// Continuous GAT transformer: forward real-dynamics model composed with an
/// inverse sim-dynamics model, smoothed toward the original action. Both
/// models are deterministic point estimates, so deployment is deterministic.
class GatTransformer : public ActionTransformer {
 public:
  GatTransformer(MlpRegressor forward_real, MlpRegressor inverse_sim, double alpha,
                 SpaceSpec action_space)
      : forward_real_(std::move(forward_real)),
        inverse_sim_(std::move(inverse_sim)),
        alpha_(alpha),
        action_space_(std::move(action_space)) {}

  Eigen::VectorXd transform(const Eigen::VectorXd& state, const Eigen::VectorXd& obs,
                            const Eigen::VectorXd& agent_action, Rng&) const override {
    return transform_mean(state, obs, agent_action);
  }

  Eigen::VectorXd transform_mean(const Eigen::VectorXd&, const Eigen::VectorXd& obs,
                                 const Eigen::VectorXd& agent_action) const override {
    Eigen::VectorXd fwd_in(obs.size() + agent_action.size());
    fwd_in << obs, agent_action;
    const Eigen::VectorXd predicted_delta = forward_real_.predict(fwd_in);
    Eigen::VectorXd inv_in(obs.size() + predicted_delta.size());
    inv_in << obs, predicted_delta;
    const Eigen::VectorXd transformed = inverse_sim_.predict(inv_in);
    return action_space_.clip(alpha_ * transformed + (1.0 - alpha_) * agent_action);
  }

  std::unique_ptr<ActionTransformer> clone() const override {
    return std::make_unique<GatTransformer>(*this);
  }

  nlohmann::json to_json() const override {
    return {{"kind", "action_transformer"}, {"variant", "gat"}, {"alpha", alpha_}};
  }

 private:
  MlpRegressor forward_real_;
  MlpRegressor inverse_sim_;
  double alpha_;
  SpaceSpec action_space_;
};

namespace detail {

inline long total_transitions(const std::vector<Trajectory>& trajs) {
  long n = 0;
  for (const auto& t : trajs) n += static_cast<long>(t.records.size());
  return n;
}

/// Tabular GAT: empirical forward model of the real world with Laplace
/// smoothing, empirical inverse conditional of the simulator, composed and
/// blended with the identity by the smoothing weight.
inline std::unique_ptr<TabularTransformer> gat_tabular(
    const TabularMdp& sim_view, const std::vector<Trajectory>& real_trajs,
    const std::vector<Trajectory>& sim_trajs, const GatConfig& cfg) {
  const int ns = sim_view.n_states, na = sim_view.n_actions;

  Tensor3 fwd_counts(ns, na, ns, cfg.laplace);
  for (const auto& t : real_trajs)
    for (const auto& rec : t.records)
      fwd_counts(static_cast<int>(rec.state[0]), static_cast<int>(rec.action[0]),
                 static_cast<int>(rec.next_state[0])) += 1.0;

  // inverse: counts of (s, s') -> action taken in sim
  Tensor3 inv_counts(ns, ns, na, cfg.laplace);
  for (const auto& t : sim_trajs)
    for (const auto& rec : t.records)
      inv_counts(static_cast<int>(rec.state[0]), static_cast<int>(rec.next_state[0]),
                 static_cast<int>(rec.action[0])) += 1.0;

  Tensor3 pi(ns, na, na);
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a) {
      double fwd_mass = 0.0;
      for (int s2 = 0; s2 < ns; ++s2) fwd_mass += fwd_counts(s, a, s2);
      for (int s2 = 0; s2 < ns; ++s2) {
        const double p_next = fwd_counts(s, a, s2) / fwd_mass;
        double inv_mass = 0.0;
        for (int at = 0; at < na; ++at) inv_mass += inv_counts(s, s2, at);
        for (int at = 0; at < na; ++at)
          pi(s, a, at) += p_next * inv_counts(s, s2, at) / inv_mass;
      }
      // deploy the composed action with probability alpha, else keep a
      auto row = pi.row(s, a);
      for (auto& x : row) x *= cfg.alpha;
      row[a] += 1.0 - cfg.alpha;
    }
  return std::make_unique<TabularTransformer>(std::move(pi));
}

}  // namespace detail

/// Fits the GAT grounding from real trajectories (forward model) and sim
/// trajectories (inverse model). Dispatches on the environment family.
inline std::unique_ptr<ActionTransformer> gat_ground(const Environment& sim_env,
                                                     const std::vector<Trajectory>& real_trajs,
                                                     const std::vector<Trajectory>& sim_trajs,
                                                     const GatConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (detail::total_transitions(real_trajs) < 1 || detail::total_transitions(sim_trajs) < 1)
    throw std::invalid_argument("gat_ground: insufficient data");

  if (const TabularMdp* view = sim_env.tabular_view())
    return detail::gat_tabular(*view, real_trajs, sim_trajs, cfg);

  const int obs_dim = sim_env.observation_space().feature_dim();
  const int act_dim = sim_env.action_space().dim();
  const long n_real = detail::total_transitions(real_trajs);
  const long n_sim = detail::total_transitions(sim_trajs);

  Eigen::MatrixXd fwd_in(obs_dim + act_dim, n_real), fwd_out(obs_dim, n_real);
  long at = 0;
  for (const auto& t : real_trajs)
    for (const auto& rec : t.records) {
      const Eigen::VectorXd obs = sim_env.observe(rec.state);
      fwd_in.col(at) << obs, rec.action;
      fwd_out.col(at) = sim_env.observe(rec.next_state) - obs;
      ++at;
    }

  Eigen::MatrixXd inv_in(2 * obs_dim, n_sim), inv_out(act_dim, n_sim);
  at = 0;
  for (const auto& t : sim_trajs)
    for (const auto& rec : t.records) {
      const Eigen::VectorXd obs = sim_env.observe(rec.state);
      inv_in.col(at) << obs, sim_env.observe(rec.next_state) - obs;
      inv_out.col(at) = rec.action;
      ++at;
    }

  Rng rng(seed);
  MlpRegressor forward_real =
      MlpRegressor::fit(fwd_in, fwd_out, cfg.model_hidden, cfg.epochs, cfg.minibatch,
                        cfg.learning_rate, rng);
  MlpRegressor inverse_sim =
      MlpRegressor::fit(inv_in, inv_out, cfg.model_hidden, cfg.epochs, cfg.minibatch,
                        cfg.learning_rate, rng);
  return std::make_unique<GatTransformer>(std::move(forward_real), std::move(inverse_sim),
                                          cfg.alpha, sim_env.action_space());
}

}  // namespace simground
