#include "simground/mlp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "simground/rng.hpp"

using namespace simground;

namespace {

/// Central finite differences of a scalar function of the flat parameters.
Eigen::VectorXd finite_difference_grad(Mlp& net, const std::function<double()>& loss,
                                       double eps = 1e-5) {
  Eigen::VectorXd theta = net.flatten();
  Eigen::VectorXd grad(theta.size());
  for (long i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd plus = theta, minus = theta;
    plus[i] += eps;
    minus[i] -= eps;
    net.set_from_flat(plus);
    const double up = loss();
    net.set_from_flat(minus);
    const double down = loss();
    grad[i] = (up - down) / (2.0 * eps);
  }
  net.set_from_flat(theta);
  return grad;
}

double max_rel_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  double worst = 0.0;
  for (long i = 0; i < got.size(); ++i) {
    const double scale = std::max({std::abs(got[i]), std::abs(want[i]), 1e-6});
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst;
}

/// Straight-line re-computation of the 2x64x64x1 forward pass, independent
/// of the Mlp code path.
double straight_line_forward(const Mlp& net, const Eigen::VectorXd& x) {
  const Eigen::VectorXd flat = net.flatten();
  const auto& sizes = net.sizes();
  long at = 0;
  Eigen::VectorXd h = x;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int rows = sizes[l + 1], cols = sizes[l];
    Eigen::MatrixXd w(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) w(r, c) = flat[at++];
    Eigen::VectorXd b(rows);
    for (int r = 0; r < rows; ++r) b[r] = flat[at++];
    Eigen::VectorXd z(rows);
    for (int r = 0; r < rows; ++r) {
      double acc = b[r];
      for (int c = 0; c < cols; ++c) acc += w(r, c) * h[c];
      z[r] = acc;
    }
    if (l + 2 < sizes.size())
      for (int r = 0; r < rows; ++r) z[r] = std::tanh(z[r]);
    h = z;
  }
  return h[0];
}

}  // namespace

TEST(Mlp, ZeroParametersGiveZeroOutput) {
  Rng rng(1);
  Mlp net({3, 8, 2}, rng);
  net.set_from_flat(Eigen::VectorXd::Zero(net.n_params()));
  const Eigen::VectorXd y = net.forward_one(Eigen::Vector3d(0.3, -1.0, 2.0));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Mlp, SingleLinearIdentityLayer) {
  Rng rng(2);
  Mlp net({3, 3}, rng);
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(net.n_params());
  // column-major W then b: identity weights
  flat[0] = flat[4] = flat[8] = 1.0;
  net.set_from_flat(flat);
  const Eigen::Vector3d x(0.5, -2.0, 3.14);
  EXPECT_EQ(net.forward_one(x), x);
}

TEST(Mlp, ParameterCountMatchesFormula) {
  Rng rng(3);
  Mlp net({5, 64, 64, 2}, rng);
  EXPECT_EQ(net.n_params(), (5 + 1) * 64 + (64 + 1) * 64 + (64 + 1) * 2);
}

TEST(Mlp, ForwardMatchesStraightLineOracle) {
  Rng rng(4);
  Mlp net({2, 64, 64, 1}, rng);
  for (int i = 0; i < 10; ++i) {
    const Eigen::Vector2d x(rng.normal(), rng.normal());
    EXPECT_NEAR(net.forward_one(x)[0], straight_line_forward(net, x), 1e-12);
  }
}

TEST(Mlp, ForwardIsDeterministicAndRejectsBadInput) {
  Rng rng(5);
  Mlp net({3, 16, 1}, rng);
  const Eigen::Vector3d x(1.0, 2.0, 3.0);
  EXPECT_EQ(net.forward_one(x), net.forward_one(x));
  EXPECT_THROW(net.forward_one(Eigen::Vector2d(1.0, 2.0)), std::invalid_argument);
  Eigen::Vector3d bad(1.0, std::nan(""), 0.0);
  EXPECT_THROW(net.forward_one(bad), std::invalid_argument);
}

TEST(Mlp, BackwardConstantLossIsZero) {
  Rng rng(6);
  Mlp net({4, 8, 1}, rng);
  Mlp::Cache cache;
  net.forward(Eigen::MatrixXd::Random(4, 5), &cache);
  const auto g = net.backward(cache, Eigen::MatrixXd::Zero(1, 5));
  EXPECT_EQ(Mlp::flatten_grads(g).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, BackwardMatchesClosedFormLinearRegression) {
  // single linear layer, squared error: dL/dW = 2 (Wx - y) x^T
  Rng rng(7);
  Mlp net({3, 2}, rng);
  const Eigen::Vector3d x(0.4, -0.7, 1.1);
  const Eigen::Vector2d target(0.25, -1.5);
  Mlp::Cache cache;
  const Eigen::MatrixXd out = net.forward(x, &cache);
  const Eigen::Vector2d resid = out.col(0) - target;
  const auto g = net.backward(cache, 2.0 * resid);
  const Eigen::MatrixXd expected_dw = 2.0 * resid * x.transpose();
  EXPECT_LT((g.w[0] - expected_dw).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.b[0] - 2.0 * resid).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  for (const auto& sizes : std::vector<std::vector<int>>{
           {2, 8, 1}, {3, 16, 16, 2}, {5, 4, 4, 4, 1}}) {
    Mlp net(sizes, rng);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(sizes.front(), 7);
    const Eigen::MatrixXd target = Eigen::MatrixXd::Random(sizes.back(), 7);

    Mlp::Cache cache;
    const Eigen::MatrixXd out = net.forward(x, &cache);
    const auto g = net.backward(cache, 2.0 * (out - target));
    const Eigen::VectorXd flat_g = Mlp::flatten_grads(g);

    const auto loss = [&]() { return (net.forward(x) - target).squaredNorm(); };
    const Eigen::VectorXd fd = finite_difference_grad(net, loss);
    EXPECT_LT(max_rel_error(flat_g, fd), 1e-4) << "sizes " << sizes.front();
  }
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  Rng rng(9);
  Mlp net({3, 12, 12, 1}, rng);
  const Eigen::Vector3d x(0.2, -0.4, 0.9);
  Mlp::Cache cache;
  net.forward(x, &cache);
  const Eigen::MatrixXd g = net.input_gradients(cache);
  const double eps = 1e-6;
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d plus = x, minus = x;
    plus[i] += eps;
    minus[i] -= eps;
    const double fd = (net.forward_one(plus)[0] - net.forward_one(minus)[0]) / (2.0 * eps);
    EXPECT_NEAR(g(i, 0), fd, 1e-6);
  }
}

TEST(Mlp, DirectionalDerivativeBackwardMatchesFiniteDifferences) {
  // the double-backward path behind the gradient penalty: loss is
  // sum_j coeff_j * (v_j . grad_x y(x_j))
  Rng rng(10);
  for (const auto& sizes : std::vector<std::vector<int>>{{2, 8, 1}, {4, 10, 6, 1}}) {
    Mlp net(sizes, rng);
    const int batch = 5;
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(sizes.front(), batch);
    const Eigen::MatrixXd v = Eigen::MatrixXd::Random(sizes.front(), batch);
    Eigen::RowVectorXd coeff(batch);
    for (int j = 0; j < batch; ++j) coeff[j] = rng.uniform(-1.0, 1.0);

    Mlp::Cache cache;
    net.forward(x, &cache);
    auto g = net.zero_grads();
    net.directional_derivative_backward(cache, v, coeff, g);
    const Eigen::VectorXd flat_g = Mlp::flatten_grads(g);

    const auto loss = [&]() {
      Mlp::Cache c;
      net.forward(x, &c);
      const Eigen::MatrixXd grads = net.input_gradients(c);
      double s = 0.0;
      for (int j = 0; j < batch; ++j) s += coeff[j] * v.col(j).dot(grads.col(j));
      return s;
    };
    const Eigen::VectorXd fd = finite_difference_grad(net, loss);
    EXPECT_LT(max_rel_error(flat_g, fd), 1e-4);
  }
}

TEST(Mlp, OrthogonalInitHasOrthonormalColumns) {
  Rng rng(11);
  const Eigen::MatrixXd w = orthogonal_init(64, 16, 1.0, rng);
  const Eigen::MatrixXd gram = w.transpose() * w;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::MatrixXd wide = orthogonal_init(8, 32, 0.5, rng);
  const Eigen::MatrixXd gram2 = wide * wide.transpose();
  EXPECT_LT((gram2 - 0.25 * Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Mlp, JsonCheckpointRoundTrip) {
  Rng rng(12);
  Mlp net({3, 9, 2}, rng);
  const Mlp back = Mlp::from_json(nlohmann::json::parse(net.to_json().dump()));
  EXPECT_EQ(net.flatten(), back.flatten());
  EXPECT_EQ(net.sizes(), back.sizes());
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Adam opt(4, 0.1);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 1.5);
  const Eigen::VectorXd before = p;
  opt.step(p, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(p, before);
}

TEST(Adam, ConvergesOnQuadratic) {
  Adam opt(2, 0.05);
  Eigen::VectorXd p(2);
  p << 4.0, -3.0;
  for (int i = 0; i < 2000; ++i) opt.step(p, 2.0 * p);
  EXPECT_LT(p.cwiseAbs().maxCoeff(), 1e-4);
}
