#pragma once

#include <memory>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/env.hpp"
#include "simground/mlp.hpp"
#include "simground/rng.hpp"

namespace simground {

inline constexpr double kLogStdInit = -0.6931471805599453;  // ln(0.5)
inline constexpr double kHalfLog2Pi = 0.9189385332046727;   // 0.5 ln(2 pi)

/// Stochastic policy over an action space, with the gradient surface the
/// policy-gradient optimizer needs: batched log-probabilities and the
/// parameter gradient of a weighted sum of log-probabilities.
class StochasticPolicy {
 public:
  struct Sample {
    Eigen::VectorXd raw;   // pre-clip sample, used for gradients
    Eigen::VectorXd exec;  // action as executed in the environment
    double logp = 0.0;
  };

  virtual ~StochasticPolicy() = default;

  virtual int obs_dim() const = 0;
  virtual const SpaceSpec& action_space() const = 0;

  virtual Sample act(const Eigen::VectorXd& obs, Rng& rng) const = 0;
  virtual Eigen::VectorXd mean_act(const Eigen::VectorXd& obs) const = 0;

  virtual Eigen::VectorXd logp_batch(const Eigen::MatrixXd& obs,
                                     const Eigen::MatrixXd& raw_actions) const = 0;
  /// Flat-parameter gradient of sum_j weights[j] * log pi(a_j | s_j).
  virtual Eigen::VectorXd grad_weighted_logp(const Eigen::MatrixXd& obs,
                                             const Eigen::MatrixXd& raw_actions,
                                             const Eigen::VectorXd& weights) const = 0;
  virtual double mean_entropy(const Eigen::MatrixXd& obs) const = 0;
  virtual Eigen::VectorXd grad_mean_entropy(const Eigen::MatrixXd& obs) const = 0;

  virtual Eigen::VectorXd params() const = 0;
  virtual void set_params(const Eigen::VectorXd& p) = 0;
  virtual long n_params() const = 0;
  virtual std::unique_ptr<StochasticPolicy> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

/// Diagonal Gaussian over a box action space: MLP mean, one global learned
/// log-std per dimension. Samples are clipped to the bounds on execution but
/// log-probabilities are of the unclipped draw.
class GaussianPolicy : public StochasticPolicy {
 public:
  GaussianPolicy(int obs_dim, SpaceSpec action_space, const std::vector<int>& hidden,
                 Rng& rng, double log_std_init = kLogStdInit)
      : action_space_(std::move(action_space)) {
    if (!(action_space_.kind == SpaceSpec::Kind::Box))
      throw std::invalid_argument("GaussianPolicy: box action space required");
    std::vector<int> sizes{obs_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(action_space_.dim());
    mean_net_ = Mlp(sizes, rng, 1.0, 0.01);
    log_std_ = Eigen::VectorXd::Constant(action_space_.dim(), log_std_init);
  }

  int obs_dim() const override { return mean_net_.in_dim(); }
  const SpaceSpec& action_space() const override { return action_space_; }
  const Mlp& mean_net() const { return mean_net_; }
  const Eigen::VectorXd& log_std() const { return log_std_; }

  Sample act(const Eigen::VectorXd& obs, Rng& rng) const override {
    const Eigen::VectorXd mu = mean_net_.forward_one(obs);
    Eigen::VectorXd raw(mu.size());
    for (int i = 0; i < mu.size(); ++i)
      raw[i] = mu[i] + std::exp(log_std_[i]) * rng.normal();
    return {raw, action_space_.clip(raw), logp_one(mu, raw)};
  }

  Eigen::VectorXd mean_act(const Eigen::VectorXd& obs) const override {
    return action_space_.clip(mean_net_.forward_one(obs));
  }

  Eigen::VectorXd logp_batch(const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& raw_actions) const override {
    const Eigen::MatrixXd mu = mean_net_.forward(obs);
    Eigen::VectorXd out(obs.cols());
    for (int j = 0; j < obs.cols(); ++j) out[j] = logp_one(mu.col(j), raw_actions.col(j));
    return out;
  }

  Eigen::VectorXd grad_weighted_logp(const Eigen::MatrixXd& obs,
                                     const Eigen::MatrixXd& raw_actions,
                                     const Eigen::VectorXd& weights) const override {
    Mlp::Cache cache;
    const Eigen::MatrixXd mu = mean_net_.forward(obs, &cache);
    const Eigen::ArrayXd inv_var = (-2.0 * log_std_).array().exp();
    // d logp / d mu = (a - mu) / sigma^2, weighted per sample
    Eigen::MatrixXd d_mu = raw_actions - mu;
    d_mu.array().colwise() *= inv_var;
    d_mu *= weights.asDiagonal();
    const auto net_grads = mean_net_.backward(cache, d_mu);
    // d logp / d log_std_k = ((a - mu)^2 / sigma^2 - 1), weighted
    Eigen::VectorXd d_log_std = Eigen::VectorXd::Zero(log_std_.size());
    const Eigen::MatrixXd diff = raw_actions - mu;
    for (int j = 0; j < obs.cols(); ++j)
      d_log_std +=
          weights[j] *
          ((diff.col(j).array().square() * inv_var) - 1.0).matrix();
    Eigen::VectorXd flat(n_params());
    flat << Mlp::flatten_grads(net_grads), d_log_std;
    return flat;
  }

  double mean_entropy(const Eigen::MatrixXd&) const override {
    return log_std_.sum() + 0.5 * log_std_.size() * (1.0 + 2.0 * kHalfLog2Pi);
  }

  Eigen::VectorXd grad_mean_entropy(const Eigen::MatrixXd&) const override {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_params());
    g.tail(log_std_.size()).setOnes();
    return g;
  }

  Eigen::VectorXd params() const override {
    Eigen::VectorXd p(n_params());
    p << mean_net_.flatten(), log_std_;
    return p;
  }

  void set_params(const Eigen::VectorXd& p) override {
    mean_net_.set_from_flat(p.head(mean_net_.n_params()));
    log_std_ = p.tail(log_std_.size());
  }

  long n_params() const override { return mean_net_.n_params() + log_std_.size(); }

  std::unique_ptr<StochasticPolicy> clone() const override {
    return std::make_unique<GaussianPolicy>(*this);
  }

  nlohmann::json to_json() const override {
    nlohmann::json j = mean_net_.to_json();
    j["kind"] = "gaussian_policy";
    j["log_std"] = std::vector<double>(log_std_.data(), log_std_.data() + log_std_.size());
    j["action_low"] = std::vector<double>(action_space_.low.data(),
                                          action_space_.low.data() + action_space_.low.size());
    j["action_high"] = std::vector<double>(
        action_space_.high.data(), action_space_.high.data() + action_space_.high.size());
    return j;
  }

  static GaussianPolicy from_json(const nlohmann::json& j) {
    const auto low = j.at("action_low").get<std::vector<double>>();
    const auto high = j.at("action_high").get<std::vector<double>>();
    GaussianPolicy p(SpaceSpec::box(
        Eigen::Map<const Eigen::VectorXd>(low.data(), low.size()),
        Eigen::Map<const Eigen::VectorXd>(high.data(), high.size())));
    p.mean_net_ = Mlp::from_json(j);
    const auto ls = j.at("log_std").get<std::vector<double>>();
    p.log_std_ = Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size());
    return p;
  }

 private:
  explicit GaussianPolicy(SpaceSpec space) : action_space_(std::move(space)) {}

  double logp_one(const Eigen::VectorXd& mu, const Eigen::VectorXd& raw) const {
    double lp = 0.0;
    for (int i = 0; i < mu.size(); ++i) {
      const double z = (raw[i] - mu[i]) * std::exp(-log_std_[i]);
      lp += -0.5 * z * z - log_std_[i] - kHalfLog2Pi;
    }
    return lp;
  }

  SpaceSpec action_space_;
  Mlp mean_net_;
  Eigen::VectorXd log_std_;
};

/// Softmax policy over a discrete action space.
class CategoricalPolicy : public StochasticPolicy {
 public:
  CategoricalPolicy(int obs_dim, SpaceSpec action_space, const std::vector<int>& hidden,
                    Rng& rng)
      : action_space_(std::move(action_space)) {
    if (!action_space_.is_discrete())
      throw std::invalid_argument("CategoricalPolicy: discrete action space required");
    std::vector<int> sizes{obs_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(action_space_.n);
    logits_net_ = Mlp(sizes, rng, 1.0, 0.01);
  }

  int obs_dim() const override { return logits_net_.in_dim(); }
  const SpaceSpec& action_space() const override { return action_space_; }

  /// Action distribution at one observation; also the tabular extraction
  /// surface for exact diagnostics.
  Eigen::VectorXd action_probs(const Eigen::VectorXd& obs) const {
    return softmax(logits_net_.forward_one(obs));
  }

  Sample act(const Eigen::VectorXd& obs, Rng& rng) const override {
    const Eigen::VectorXd probs = action_probs(obs);
    const int a = rng.categorical({probs.data(), static_cast<std::size_t>(probs.size())});
    Eigen::VectorXd av(1);
    av[0] = a;
    return {av, av, std::log(probs[a])};
  }

  Eigen::VectorXd mean_act(const Eigen::VectorXd& obs) const override {
    const Eigen::VectorXd probs = action_probs(obs);
    int best = 0;
    for (int i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    Eigen::VectorXd av(1);
    av[0] = best;
    return av;
  }

  Eigen::VectorXd logp_batch(const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& raw_actions) const override {
    const Eigen::MatrixXd logits = logits_net_.forward(obs);
    Eigen::VectorXd out(obs.cols());
    for (int j = 0; j < obs.cols(); ++j) {
      const Eigen::VectorXd p = softmax(logits.col(j));
      out[j] = std::log(p[static_cast<int>(raw_actions(0, j))]);
    }
    return out;
  }

  Eigen::VectorXd grad_weighted_logp(const Eigen::MatrixXd& obs,
                                     const Eigen::MatrixXd& raw_actions,
                                     const Eigen::VectorXd& weights) const override {
    Mlp::Cache cache;
    const Eigen::MatrixXd logits = logits_net_.forward(obs, &cache);
    Eigen::MatrixXd d_logits(logits.rows(), logits.cols());
    for (int j = 0; j < obs.cols(); ++j) {
      const Eigen::VectorXd p = softmax(logits.col(j));
      Eigen::VectorXd g = -p;
      g[static_cast<int>(raw_actions(0, j))] += 1.0;
      d_logits.col(j) = weights[j] * g;
    }
    return Mlp::flatten_grads(logits_net_.backward(cache, d_logits));
  }

  double mean_entropy(const Eigen::MatrixXd& obs) const override {
    const Eigen::MatrixXd logits = logits_net_.forward(obs);
    double h = 0.0;
    for (int j = 0; j < obs.cols(); ++j) {
      const Eigen::VectorXd p = softmax(logits.col(j));
      for (int k = 0; k < p.size(); ++k)
        if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
    }
    return h / obs.cols();
  }

  Eigen::VectorXd grad_mean_entropy(const Eigen::MatrixXd& obs) const override {
    Mlp::Cache cache;
    const Eigen::MatrixXd logits = logits_net_.forward(obs, &cache);
    Eigen::MatrixXd d_logits(logits.rows(), logits.cols());
    for (int j = 0; j < obs.cols(); ++j) {
      const Eigen::VectorXd p = softmax(logits.col(j));
      double h = 0.0;
      for (int k = 0; k < p.size(); ++k)
        if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
      for (int k = 0; k < p.size(); ++k) {
        const double logp = p[k] > 0.0 ? std::log(p[k]) : 0.0;
        d_logits(k, j) = -p[k] * (logp + h) / obs.cols();
      }
    }
    return Mlp::flatten_grads(logits_net_.backward(cache, d_logits));
  }

  Eigen::VectorXd params() const override { return logits_net_.flatten(); }
  void set_params(const Eigen::VectorXd& p) override { logits_net_.set_from_flat(p); }
  long n_params() const override { return logits_net_.n_params(); }

  std::unique_ptr<StochasticPolicy> clone() const override {
    return std::make_unique<CategoricalPolicy>(*this);
  }

  nlohmann::json to_json() const override {
    nlohmann::json j = logits_net_.to_json();
    j["kind"] = "categorical_policy";
    j["n_actions"] = action_space_.n;
    return j;
  }

  static CategoricalPolicy from_json(const nlohmann::json& j) {
    CategoricalPolicy p(SpaceSpec::discrete(j.at("n_actions").get<int>()));
    p.logits_net_ = Mlp::from_json(j);
    return p;
  }

 private:
  explicit CategoricalPolicy(SpaceSpec space) : action_space_(std::move(space)) {}

  static Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
    Eigen::ArrayXd e = shifted.exp();
    return (e / e.sum()).matrix();
  }

  SpaceSpec action_space_;
  Mlp logits_net_;
};

/// Adapter so a StochasticPolicy can drive rollouts.
class PolicyActions : public ActionSource {
 public:
  explicit PolicyActions(const StochasticPolicy& policy, bool deterministic = false)
      : policy_(policy), deterministic_(deterministic) {}

  Eigen::VectorXd sample_action(const Eigen::VectorXd& obs, Rng& rng) const override {
    return deterministic_ ? policy_.mean_act(obs) : policy_.act(obs, rng).exec;
  }

 private:
  const StochasticPolicy& policy_;
  bool deterministic_;
};

inline std::unique_ptr<StochasticPolicy> policy_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian_policy")
    return std::make_unique<GaussianPolicy>(GaussianPolicy::from_json(j));
  if (kind == "categorical_policy")
    return std::make_unique<CategoricalPolicy>(CategoricalPolicy::from_json(j));
  throw std::invalid_argument("policy_from_json: unknown kind '" + kind + "'");
}

/// Fresh policy of the right family for an environment's spaces.
inline std::unique_ptr<StochasticPolicy> make_policy(const Environment& env,
                                                     const std::vector<int>& hidden,
                                                     Rng& rng) {
  const int obs_dim = env.observation_space().feature_dim();
  if (env.action_space().is_discrete())
    return std::make_unique<CategoricalPolicy>(obs_dim, env.action_space(), hidden, rng);
  return std::make_unique<GaussianPolicy>(obs_dim, env.action_space(), hidden, rng);
}

}  // namespace simground
