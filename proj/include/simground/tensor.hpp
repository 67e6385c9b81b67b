#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace simground {

/// Dense rank-3 tensor of doubles with contiguous storage, innermost index
/// fastest. Used for transition tensors T[s][a][s'], rewards R[s][a][s'],
/// marginal distributions rho[s][a][s'] and tabular action transformers.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int d0, int d1, int d2, double fill = 0.0)
      : d0_(d0), d1_(d1), d2_(d2), data_(static_cast<std::size_t>(d0) * d1 * d2, fill) {
    if (d0 <= 0 || d1 <= 0 || d2 <= 0)
      throw std::invalid_argument("Tensor3: dimensions must be positive");
  }

  int dim0() const { return d0_; }
  int dim1() const { return d1_; }
  int dim2() const { return d2_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  /// Contiguous slice over the last index.
  std::span<double> row(int i, int j) {
    return {data_.data() + index(i, j, 0), static_cast<std::size_t>(d2_)};
  }
  std::span<const double> row(int i, int j) const {
    return {data_.data() + index(i, j, 0), static_cast<std::size_t>(d2_)};
  }

  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool same_shape(const Tensor3& o) const {
    return d0_ == o.d0_ && d1_ == o.d1_ && d2_ == o.d2_;
  }

  double max_abs_diff(const Tensor3& o) const {
    if (!same_shape(o)) throw std::invalid_argument("Tensor3: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i)
      m = std::max(m, std::abs(data_[i] - o.data_[i]));
    return m;
  }

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * d1_ + j) * d2_ + k;
  }

  int d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<double> data_;
};

/// Total variation distance between two distributions given as flat arrays.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_distance(const Tensor3& p, const Tensor3& q) {
  return tv_distance(p.flat(), q.flat());
}

/// Jensen-Shannon divergence in nats, with the 0 log 0 = 0 convention.
/// Bounded by ln 2.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_divergence: size mismatch");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(js, 0.0);
}

inline double js_divergence(const Tensor3& p, const Tensor3& q) {
  return js_divergence(p.flat(), q.flat());
}

/// Euclidean projection of v onto the probability simplex (Duchi et al.).
inline void project_to_simplex(std::span<double> v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  for (int i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / (i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  for (auto& x : v) x = std::max(x - theta, 0.0);
}

}  // namespace simground
