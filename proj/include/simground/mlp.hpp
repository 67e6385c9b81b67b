#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "simground/rng.hpp"

namespace simground {

/// Orthogonal weight init: QR of a Gaussian matrix with the sign of R's
/// diagonal folded in, scaled by `gain`.
inline Eigen::MatrixXd orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  const int n = std::max(rows, cols);
  const int m = std::min(rows, cols);
  Eigen::MatrixXd a(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  for (int j = 0; j < m; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return gain * w;
}

/// Fully-connected network, tanh hidden layers, linear output head. Batches
/// are column-major: each column of an input matrix is one sample. Forward,
/// backward and the double-backward path used by gradient penalties are all
/// hand-written; finite-difference tests pin them down.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, acts[l+1] = phi(z_l)
    std::vector<Eigen::MatrixXd> zs;    // pre-activations per weight layer
  };

  struct Grads {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;

    void add_scaled(const Grads& o, double scale) {
      for (std::size_t l = 0; l < w.size(); ++l) {
        w[l] += scale * o.w[l];
        b[l] += scale * o.b[l];
      }
    }
  };

  Mlp() = default;

  /// `sizes` = {input, hidden..., output}. Hidden layers use `hidden_gain`,
  /// the output layer `out_gain` (small gains give near-zero initial heads).
  Mlp(std::vector<int> sizes, Rng& rng, double hidden_gain = 1.0, double out_gain = 1.0)
      : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output");
    const int layers = static_cast<int>(sizes_.size()) - 1;
    w_.reserve(layers);
    b_.reserve(layers);
    for (int l = 0; l < layers; ++l) {
      const double gain = l + 1 == layers ? out_gain : hidden_gain;
      w_.push_back(orthogonal_init(sizes_[l + 1], sizes_[l], gain, rng));
      b_.push_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  int n_layers() const { return static_cast<int>(w_.size()); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const {
    if (x.rows() != in_dim()) throw std::invalid_argument("Mlp: input dimension mismatch");
    if (!x.allFinite()) throw std::invalid_argument("Mlp: non-finite input");
    if (cache) {
      cache->acts.assign(1, x);
      cache->zs.clear();
    }
    Eigen::MatrixXd h = x;
    for (int l = 0; l < n_layers(); ++l) {
      Eigen::MatrixXd z = (w_[l] * h).colwise() + b_[l];
      if (cache) cache->zs.push_back(z);
      h = l + 1 == n_layers() ? z : Eigen::MatrixXd(z.array().tanh());
      if (cache) cache->acts.push_back(h);
    }
    return h;
  }

  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const { return forward(x); }

  /// Backpropagates dL/dY through the recorded forward pass. Returns
  /// parameter gradients; optionally also the gradient with respect to the
  /// input batch.
  Grads backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                 Eigen::MatrixXd* d_input = nullptr) const {
    if (cache.zs.size() != w_.size())
      throw std::invalid_argument("Mlp::backward: cache does not match a forward pass");
    Grads g = zero_grads();
    Eigen::MatrixXd dz = d_out;
    for (int l = n_layers() - 1; l >= 0; --l) {
      g.w[l] = dz * cache.acts[l].transpose();
      g.b[l] = dz.rowwise().sum();
      Eigen::MatrixXd da = w_[l].transpose() * dz;
      if (l > 0) {
        // act = tanh(z), so d tanh/dz = 1 - act^2
        dz = da.array() * (1.0 - cache.acts[l].array().square());
      } else if (d_input) {
        *d_input = std::move(da);
      }
    }
    return g;
  }

  /// Per-sample input gradients of a scalar-output network.
  Eigen::MatrixXd input_gradients(const Cache& cache) const {
    if (out_dim() != 1)
      throw std::invalid_argument("Mlp::input_gradients: scalar output required");
    Eigen::MatrixXd d_input;
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, cache.acts[0].cols());
    backward(cache, ones, &d_input);
    return d_input;
  }

  /// Double-backward used by gradient penalties. For scalar output y(x),
  /// s_j = v_j . grad_x y(x_j) is the directional derivative along v_j; this
  /// accumulates d( sum_j coeff_j s_j ) / d(params) into `g`. Implemented as
  /// a reverse pass through the forward-tangent computation of s.
  void directional_derivative_backward(const Cache& cache, const Eigen::MatrixXd& v,
                                       const Eigen::RowVectorXd& coeff, Grads& g) const {
    if (out_dim() != 1)
      throw std::invalid_argument("Mlp: directional derivative needs scalar output");
    const int layers = n_layers();

    // forward tangent: t_0 = v, u_l = W_l t_l, t_{l+1} = phi'(z_l) .* u_l
    std::vector<Eigen::MatrixXd> t(layers + 1), u(layers);
    t[0] = v;
    for (int l = 0; l < layers; ++l) {
      u[l] = w_[l] * t[l];
      if (l + 1 < layers)
        t[l + 1] = ((1.0 - cache.acts[l + 1].array().square()) * u[l].array()).matrix();
    }

    // reverse through the tangent chain; gu is the adjoint of u_l
    std::vector<Eigen::MatrixXd> gz_tan(layers);  // adjoints hitting z_l via phi'(z_l)
    Eigen::MatrixXd gu = coeff;                   // adjoint of u_{L-1} = s
    for (int l = layers - 1; l >= 0; --l) {
      g.w[l] += gu * t[l].transpose();
      if (l == 0) break;
      const Eigen::MatrixXd gt = w_[l].transpose() * gu;  // adjoint of t_l
      const auto act = cache.acts[l].array();             // tanh(z_{l-1})
      gu = (gt.array() * (1.0 - act.square())).matrix();
      // d phi'(z)/dz = -2 tanh(z)(1 - tanh(z)^2)
      gz_tan[l - 1] =
          (gt.array() * u[l - 1].array() * (-2.0 * act * (1.0 - act.square()))).matrix();
    }

    // reverse through the primal z chain that feeds the phi'(z_l) factors
    Eigen::MatrixXd gz;
    for (int l = layers - 2; l >= 0; --l) {
      if (l == layers - 2) {
        gz = gz_tan[l];
      } else {
        const Eigen::MatrixXd from_above = w_[l + 1].transpose() * gz;
        gz = gz_tan[l] +
             (from_above.array() * (1.0 - cache.acts[l + 1].array().square())).matrix();
      }
      g.w[l] += gz * cache.acts[l].transpose();
      g.b[l] += gz.rowwise().sum();
    }
  }

  Grads zero_grads() const {
    Grads g;
    for (int l = 0; l < n_layers(); ++l) {
      g.w.push_back(Eigen::MatrixXd::Zero(w_[l].rows(), w_[l].cols()));
      g.b.push_back(Eigen::VectorXd::Zero(b_[l].size()));
    }
    return g;
  }

  long n_params() const {
    long n = 0;
    for (int l = 0; l < n_layers(); ++l) n += w_[l].size() + b_[l].size();
    return n;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(n_params());
    long at = 0;
    for (int l = 0; l < n_layers(); ++l) {
      out.segment(at, w_[l].size()) = Eigen::Map<const Eigen::VectorXd>(w_[l].data(), w_[l].size());
      at += w_[l].size();
      out.segment(at, b_[l].size()) = b_[l];
      at += b_[l].size();
    }
    return out;
  }

  void set_from_flat(const Eigen::VectorXd& flat) {
    if (flat.size() != n_params()) throw std::invalid_argument("Mlp: flat size mismatch");
    long at = 0;
    for (int l = 0; l < n_layers(); ++l) {
      Eigen::Map<Eigen::VectorXd>(w_[l].data(), w_[l].size()) = flat.segment(at, w_[l].size());
      at += w_[l].size();
      b_[l] = flat.segment(at, b_[l].size());
      at += b_[l].size();
    }
  }

  static Eigen::VectorXd flatten_grads(const Grads& g) {
    long n = 0;
    for (std::size_t l = 0; l < g.w.size(); ++l) n += g.w[l].size() + g.b[l].size();
    Eigen::VectorXd out(n);
    long at = 0;
    for (std::size_t l = 0; l < g.w.size(); ++l) {
      out.segment(at, g.w[l].size()) =
          Eigen::Map<const Eigen::VectorXd>(g.w[l].data(), g.w[l].size());
      at += g.w[l].size();
      out.segment(at, g.b[l].size()) = g.b[l];
      at += g.b[l].size();
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["layer_sizes"] = sizes_;
    const Eigen::VectorXd flat = flatten();
    j["params"] = std::vector<double>(flat.data(), flat.data() + flat.size());
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp net;
    net.sizes_ = j.at("layer_sizes").get<std::vector<int>>();
    for (std::size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
      net.w_.push_back(Eigen::MatrixXd::Zero(net.sizes_[l + 1], net.sizes_[l]));
      net.b_.push_back(Eigen::VectorXd::Zero(net.sizes_[l + 1]));
    }
    const auto params = j.at("params").get<std::vector<double>>();
    net.set_from_flat(Eigen::Map<const Eigen::VectorXd>(params.data(), params.size()));
    return net;
  }

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> b_;
};

/// Plain Adam on a flat parameter vector.
class Adam {
 public:
  Adam(long dim, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Eigen::VectorXd::Zero(dim)), v_(Eigen::VectorXd::Zero(dim)) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (grad.size() != m_.size()) throw std::invalid_argument("Adam: gradient size mismatch");
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const Eigen::VectorXd denom =
        (v_ / bc2).cwiseSqrt() + Eigen::VectorXd::Constant(m_.size(), eps_);
    params -= (lr_ / bc1) * m_.cwiseQuotient(denom);
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

}  // namespace simground
