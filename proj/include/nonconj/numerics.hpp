#pragma once

// Special functions, Cholesky-based SPD algebra and finite-difference
// helpers shared by every model.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "nonconj/error.hpp"

namespace nonconj {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

namespace detail {

inline void check_positive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": argument must be positive and finite, got " +
                      std::to_string(x));
  }
}

// Below this the recurrences shift the argument upward before the
// asymptotic series is applied.
inline constexpr double kAsymptoticFrom = 6.0;

}  // namespace detail

/// ln Gamma(x) for x > 0.
inline double log_gamma(double x) {
  detail::check_positive(x, "log_gamma");
  // lnG(x) = lnG(x+n) - ln(x (x+1) ... (x+n-1))
  double shift = 0.0;
  double prod = 1.0;
  while (x < detail::kAsymptoticFrom) {
    prod *= x;
    x += 1.0;
    if (prod > 1e280) {
      shift += std::log(prod);
      prod = 1.0;
    }
  }
  shift += std::log(prod);
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Stirling series with Bernoulli coefficients B_2k / (2k (2k-1)).
  const double series =
      inv * (1.0 / 12.0 +
             inv2 * (-1.0 / 360.0 +
                     inv2 * (1.0 / 1260.0 +
                             inv2 * (-1.0 / 1680.0 +
                                     inv2 * (1.0 / 1188.0 +
                                             inv2 * (-691.0 / 360360.0 + inv2 * (1.0 / 156.0)))))));
  constexpr double half_log_two_pi = 0.91893853320467274178;
  return (x - 0.5) * std::log(x) - x + half_log_two_pi + series - shift;
}

/// Psi(x) = d/dx ln Gamma(x).
inline double digamma(double x) {
  detail::check_positive(x, "digamma");
  double acc = 0.0;
  while (x < detail::kAsymptoticFrom) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv2 = 1.0 / (x * x);
  const double series =
      inv2 * (-1.0 / 12.0 +
              inv2 * (1.0 / 120.0 +
                      inv2 * (-1.0 / 252.0 +
                              inv2 * (1.0 / 240.0 +
                                      inv2 * (-1.0 / 132.0 +
                                              inv2 * (691.0 / 32760.0 + inv2 * (-1.0 / 12.0)))))));
  return acc + std::log(x) - 0.5 / x + series;
}

/// Psi'(x).
inline double trigamma(double x) {
  detail::check_positive(x, "trigamma");
  double acc = 0.0;
  while (x < detail::kAsymptoticFrom) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 +
                                       inv2 * (-1.0 / 30.0 +
                                               inv2 * (1.0 / 42.0 +
                                                       inv2 * (-1.0 / 30.0 +
                                                               inv2 * (5.0 / 66.0 +
                                                                       inv2 * (-691.0 / 2730.0 +
                                                                               inv2 * (7.0 / 6.0)))))))));
  return acc + series;
}

/// Psi''(x); needed by third-derivative terms of the delta method.
inline double tetragamma(double x) {
  detail::check_positive(x, "tetragamma");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 2.0 / (x * x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      -inv2 * (1.0 + inv * (1.0 + inv * (0.5 +
                                         inv2 * (-1.0 / 6.0 +
                                                 inv2 * (1.0 / 6.0 +
                                                         inv2 * (-3.0 / 10.0 +
                                                                 inv2 * (5.0 / 6.0 +
                                                                         inv2 * (-691.0 / 210.0 +
                                                                                 inv2 * (35.0 / 2.0)))))))));
  return acc + series;
}

/// Stable log(sum(exp(v))).
inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Softmax, shifted by the maximum before exponentiating.
inline Vector softmax(const Vector& v) {
  const Vector e = (v.array() - v.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Numerically stable log sigma(y) = -log(1 + exp(-y)).
inline double log_sigmoid(double y) {
  return y >= 0.0 ? -std::log1p(std::exp(-y)) : y - std::log1p(std::exp(y));
}

inline double sigmoid(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

/// Cholesky factorization of a symmetric positive-definite matrix. Only the
/// lower triangle of the input is read. No pivoting; a nonpositive pivot
/// raises NotPositiveDefinite carrying its index.
class SpdFactor {
 public:
  explicit SpdFactor(const Matrix& m) : lower_(m.rows(), m.cols()) {
    if (m.rows() != m.cols() || m.rows() == 0) {
      throw InputError("spd_factorize: matrix must be square and non-empty");
    }
    const Index n = m.rows();
    lower_.setZero();
    for (Index j = 0; j < n; ++j) {
      double diag = m(j, j);
      for (Index k = 0; k < j; ++k) diag -= lower_(j, k) * lower_(j, k);
      if (!(diag > 0.0) || !std::isfinite(diag)) throw NotPositiveDefinite(j);
      const double ljj = std::sqrt(diag);
      lower_(j, j) = ljj;
      for (Index i = j + 1; i < n; ++i) {
        double s = m(i, j);
        for (Index k = 0; k < j; ++k) s -= lower_(i, k) * lower_(j, k);
        lower_(i, j) = s / ljj;
      }
    }
  }

  Index dim() const { return lower_.rows(); }

  double log_det() const { return 2.0 * lower_.diagonal().array().log().sum(); }

  Vector solve(const Vector& b) const {
    if (b.size() != dim()) throw InputError("spd solve: dimension mismatch");
    const auto l = lower_.triangularView<Eigen::Lower>();
    Vector y = l.solve(b);
    return l.transpose().solve(y);
  }

  Matrix solve(const Matrix& b) const {
    if (b.rows() != dim()) throw InputError("spd solve: dimension mismatch");
    const auto l = lower_.triangularView<Eigen::Lower>();
    Matrix y = l.solve(b);
    return l.transpose().solve(y);
  }

  Matrix inverse() const {
    Matrix inv = solve(Matrix(Matrix::Identity(dim(), dim())));
    return 0.5 * (inv + inv.transpose());
  }

  const Matrix& lower() const { return lower_; }

 private:
  Matrix lower_;
};

inline SpdFactor spd_factorize(const Matrix& m) { return SpdFactor(m); }

inline double fd_step(double xi) { return 1e-5 * std::max(1.0, std::abs(xi)); }

/// Central-difference gradient. A nonpositive h selects the per-coordinate
/// default 1e-5 * max(1, |x_i|).
template <class F>
Vector finite_diff_gradient(F&& f, const Vector& x, double h = 0.0) {
  Vector g(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double step = h > 0.0 ? h : fd_step(x[i]);
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DomainError("finite_diff_gradient: non-finite evaluation at coordinate " +
                        std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Central-difference Jacobian of a vector-valued function; column j holds
/// the derivative with respect to x_j.
template <class F>
Matrix finite_diff_jacobian(F&& f, const Vector& x, double h = 0.0) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Vector probe = x;
  for (Index j = 0; j < x.size(); ++j) {
    const double step = h > 0.0 ? h : fd_step(x[j]);
    probe[j] = x[j] + step;
    const Vector up = f(probe);
    probe[j] = x[j] - step;
    const Vector down = f(probe);
    probe[j] = x[j];
    jac.col(j) = (up - down) / (2.0 * step);
  }
  return jac;
}

}  // namespace nonconj
