#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "simground/grounding.hpp"
#include "simground/mlp.hpp"
#include "simground/rng.hpp"
#include "simground/tabular_mdp.hpp"

namespace simground {

inline constexpr double kDiscriminatorEps = 1e-7;  // sigmoid outputs clamped to [eps, 1-eps]

/// Per-feature affine normalization fit on the real batch. Applied to both
/// data sources so the classifier sees comparable scales.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;

  static Standardizer identity(int dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  static Standardizer fit(const Eigen::MatrixXd& columns) {
    Standardizer s;
    s.mean = columns.rowwise().mean();
    Eigen::VectorXd var = Eigen::VectorXd::Zero(columns.rows());
    for (int j = 0; j < columns.cols(); ++j)
      var += (columns.col(j) - s.mean).cwiseAbs2();
    var /= std::max<int>(1, static_cast<int>(columns.cols()));
    s.inv_std = (var.cwiseSqrt() + Eigen::VectorXd::Constant(columns.rows(), 1e-8))
                    .cwiseInverse();
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& columns) const {
    return (columns.colwise() - mean).array().colwise() * inv_std.array();
  }
};

/// Binary classifier over (s, a, s') feature triples. Outputs live strictly
/// inside (0, 1) so the log terms in the loss and the transformer reward stay
/// finite.
class Discriminator {
 public:
  Discriminator(int feature_dim, const std::vector<int>& hidden, Rng& rng,
                Standardizer standardizer)
      : standardizer_(std::move(standardizer)) {
    std::vector<int> sizes{feature_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    net_ = Mlp(sizes, rng);
  }

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const Standardizer& standardizer() const { return standardizer_; }

  /// D(s, a, s') for a batch of feature columns.
  Eigen::VectorXd probabilities(const Eigen::MatrixXd& features) const {
    const Eigen::MatrixXd logits = net_.forward(standardizer_.apply(features));
    Eigen::VectorXd out(features.cols());
    for (int j = 0; j < features.cols(); ++j) out[j] = clamped_sigmoid(logits(0, j));
    return out;
  }

  double probability(const Eigen::VectorXd& feature) const {
    Eigen::MatrixXd m(feature.size(), 1);
    m.col(0) = feature;
    return probabilities(m)[0];
  }

  /// Transformer reward -log D: bounded in [-ln(1-eps), -ln eps], higher when
  /// the transition looks real to the classifier.
  Eigen::VectorXd rewards(const Eigen::MatrixXd& features) const {
    return (-probabilities(features).array().log()).matrix();
  }

  static double clamped_sigmoid(double logit) {
    const double p = 1.0 / (1.0 + std::exp(-logit));
    return std::min(std::max(p, kDiscriminatorEps), 1.0 - kDiscriminatorEps);
  }

 private:
  Mlp net_;
  Standardizer standardizer_;
};

struct DiscriminatorLoss {
  double data_term = 0.0;      // -(mean log D on gsim + mean log(1-D) on real)
  double gradient_penalty = 0.0;
  double l2_term = 0.0;
  Eigen::VectorXd grad;        // flat gradient of the full loss

  double total() const { return data_term + gradient_penalty + l2_term; }
};

/// Full discriminator loss: the classification term from the minimax
/// objective, a one-sided gradient penalty on interpolates between the two
/// sources, and L2 weight decay. The penalty acts on the pre-sigmoid logit
/// gradient in the standardized input space.
inline DiscriminatorLoss discriminator_loss(const Discriminator& disc,
                                            const Eigen::MatrixXd& gsim_features,
                                            const Eigen::MatrixXd& real_features,
                                            double gp_coef, double l2_coef, Rng& rng) {
  if (gsim_features.cols() == 0 || real_features.cols() == 0)
    throw std::invalid_argument("discriminator_loss: both batches must be non-empty");
  if (!gsim_features.allFinite() || !real_features.allFinite())
    throw std::invalid_argument("discriminator_loss: non-finite features");

  const Mlp& net = disc.net();
  const Standardizer& std_ = disc.standardizer();
  auto grads = net.zero_grads();
  DiscriminatorLoss out;

  // gsim side: -mean log D
  {
    Mlp::Cache cache;
    const Eigen::MatrixXd x = std_.apply(gsim_features);
    const Eigen::MatrixXd logits = net.forward(x, &cache);
    const int n = static_cast<int>(x.cols());
    Eigen::MatrixXd dlogit(1, n);
    for (int j = 0; j < n; ++j) {
      const double p = Discriminator::clamped_sigmoid(logits(0, j));
      out.data_term += -std::log(p) / n;
      // d(-log sigmoid)/dlogit = sigmoid - 1; zero where the clamp is active
      const bool clamped = p <= kDiscriminatorEps || p >= 1.0 - kDiscriminatorEps;
      dlogit(0, j) = clamped ? 0.0 : (p - 1.0) / n;
    }
    grads.add_scaled(net.backward(cache, dlogit), 1.0);
  }

  // real side: -mean log(1 - D)
  {
    Mlp::Cache cache;
    const Eigen::MatrixXd x = std_.apply(real_features);
    const Eigen::MatrixXd logits = net.forward(x, &cache);
    const int n = static_cast<int>(x.cols());
    Eigen::MatrixXd dlogit(1, n);
    for (int j = 0; j < n; ++j) {
      const double p = Discriminator::clamped_sigmoid(logits(0, j));
      out.data_term += -std::log(1.0 - p) / n;
      const bool clamped = p <= kDiscriminatorEps || p >= 1.0 - kDiscriminatorEps;
      dlogit(0, j) = clamped ? 0.0 : p / n;
    }
    grads.add_scaled(net.backward(cache, dlogit), 1.0);
  }

  // one-sided gradient penalty on interpolates
  if (gp_coef > 0.0) {
    const int n = static_cast<int>(std::min(gsim_features.cols(), real_features.cols()));
    Eigen::MatrixXd interp(gsim_features.rows(), n);
    for (int j = 0; j < n; ++j) {
      const double u = rng.uniform();
      interp.col(j) =
          u * gsim_features.col(j) + (1.0 - u) * real_features.col(j);
    }
    Mlp::Cache cache;
    const Eigen::MatrixXd x = std_.apply(interp);
    net.forward(x, &cache);
    const Eigen::MatrixXd input_grads = net.input_gradients(cache);
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(x.rows(), n);
    Eigen::RowVectorXd coeff = Eigen::RowVectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
      const double norm = input_grads.col(j).norm();
      const double excess = norm - 1.0;
      if (excess > 0.0) {
        out.gradient_penalty += gp_coef * excess * excess / n;
        // d/dg of (|g| - 1)^2 = 2 (|g| - 1) g / |g|
        v.col(j) = (2.0 * excess / norm) * input_grads.col(j);
        coeff[j] = gp_coef / n;
      }
    }
    net.directional_derivative_backward(cache, v, coeff, grads);
  }

  Eigen::VectorXd flat_grad = Mlp::flatten_grads(grads);
  const Eigen::VectorXd params = net.flatten();
  if (l2_coef > 0.0) {
    out.l2_term = l2_coef * params.squaredNorm();
    flat_grad += 2.0 * l2_coef * params;
  }
  out.grad = std::move(flat_grad);
  return out;
}

/// One-hot feature vector for a tabular transition (s, a, s').
inline Eigen::VectorXd tabular_transition_features(int n_states, int n_actions, int s, int a,
                                                   int s2) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(2 * n_states + n_actions);
  f[s] = 1.0;
  f[n_states + a] = 1.0;
  f[n_states + n_actions + s2] = 1.0;
  return f;
}

struct OptimalDiscriminatorCheck {
  double sup_norm_gap = 0.0;  // max |D - rho_g/(rho_g+rho_real)| over the support
  double loss_gap = 0.0;      // |data loss - (2 ln 2 - 2 JS)|
  double js = 0.0;
  double final_loss = 0.0;
};

/// Trains a classifier on the *exact* tabular densities (full-batch weighted
/// loss, no regularizers) and compares it against the closed-form optimum
/// rho_g / (rho_g + rho_real) and the loss value 2 ln 2 - 2 JS.
inline OptimalDiscriminatorCheck check_optimal_discriminator(
    const TabularMdp& sim, const TabularPolicy& agent_policy, const Tensor3& transformer_probs,
    const Tensor3& rho_real, std::uint64_t seed, int iters = 6000, double lr = 5e-3) {
  const auto rho_g = grounded_marginal(sim, agent_policy, transformer_probs).rho;
  const int ns = sim.n_states, na = sim.n_actions;

  std::vector<double> pg, pr;
  std::vector<Eigen::VectorXd> feats;
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a)
      for (int s2 = 0; s2 < ns; ++s2) {
        const double g = rho_g(s, a, s2);
        const double r = rho_real(s, a, s2);
        if (g + r <= 0.0) continue;
        pg.push_back(g);
        pr.push_back(r);
        feats.push_back(tabular_transition_features(ns, na, s, a, s2));
      }
  const int m = static_cast<int>(feats.size());
  Eigen::MatrixXd x(2 * ns + na, m);
  for (int i = 0; i < m; ++i) x.col(i) = feats[i];

  Rng rng(seed);
  Mlp net({2 * ns + na, 64, 64, 1}, rng);
  Adam opt(net.n_params(), lr);
  double final_loss = 0.0;
  for (int it = 0; it < iters; ++it) {
    Mlp::Cache cache;
    const Eigen::MatrixXd logits = net.forward(x, &cache);
    Eigen::MatrixXd dlogit(1, m);
    final_loss = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = Discriminator::clamped_sigmoid(logits(0, i));
      final_loss += -pg[i] * std::log(d) - pr[i] * std::log(1.0 - d);
      dlogit(0, i) = -pg[i] * (1.0 - d) + pr[i] * d;
    }
    Eigen::VectorXd params = net.flatten();
    opt.step(params, Mlp::flatten_grads(net.backward(cache, dlogit)));
    net.set_from_flat(params);
  }

  OptimalDiscriminatorCheck out;
  out.final_loss = final_loss;
  out.js = js_divergence(rho_g, rho_real);
  out.loss_gap = std::abs(final_loss - (2.0 * std::log(2.0) - 2.0 * out.js));
  const Eigen::MatrixXd logits = net.forward(x);
  for (int i = 0; i < m; ++i) {
    const double d = Discriminator::clamped_sigmoid(logits(0, i));
    out.sup_norm_gap = std::max(out.sup_norm_gap, std::abs(d - pg[i] / (pg[i] + pr[i])));
  }
  return out;
}

}  // namespace simground
