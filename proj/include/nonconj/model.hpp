#pragma once

// The model contract consumed by the inference engine.
//
// A model binds its observations at construction and exposes the function
//   f(theta) = eta(theta)^T E_q(z)[t(z)] - a(eta(theta)) + log p(theta)
// together with its derivatives. The expected sufficient statistics are
// passed in rather than recomputed so the engine can compute them once per
// outer iteration.

#include <concepts>
#include <string>

#include "nonconj/error.hpp"
#include "nonconj/numerics.hpp"

namespace nonconj {

/// q(theta) = N(mu, sigma).
struct GaussianVariational {
  Vector mu;
  Matrix sigma;

  Index dim() const { return mu.size(); }

  /// Throws if mu is non-finite, shapes disagree, or sigma is not PD.
  void validate() const {
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) {
      throw InputError("GaussianVariational: covariance shape does not match mean");
    }
    if (!mu.allFinite()) throw InputError("GaussianVariational: non-finite mean");
    (void)SpdFactor(sigma);
  }

  static GaussianVariational standard(Index dim) {
    return {Vector::Zero(dim), Matrix::Identity(dim, dim)};
  }
};

/// Everything laplace_step and delta_step need: f, its gradient and Hessian,
/// and the gradient of theta -> Tr{Hessian(theta) Sigma}.
template <class M>
concept TaylorModel = requires(const M& m, const Vector& theta, const Matrix& sigma,
                               const Vector& stats, Vector& grad) {
  { m.dim() } -> std::convertible_to<Index>;
  { m.f_value_grad(theta, stats, grad) } -> std::convertible_to<double>;
  { m.f_hessian(theta, stats) } -> std::convertible_to<Matrix>;
  { m.trace_grad(theta, sigma, stats) } -> std::convertible_to<Vector>;
};

/// Full coordinate-ascent contract: a conjugate factor q(z) with natural
/// parameters of type ConjState.
///
///   expected_stats(qz)       E_q(z)[t(z)]
///   conjugate_update(e)      q(z) from E_q(theta)[eta(theta)] + t(x)
///   conjugate_terms(qz)      E_q(z)[log h(z) + log p(x|z)] - E_q(z)[log q(z)]
///   log_prior_constant()     theta-free normalizer of log p(theta)
///
/// E_q(theta)[eta(theta)] comes from exact_eta_expectation(q) when present,
/// otherwise from a second-order expansion using eta(theta) and
/// eta_hessian(theta, i).
template <class M>
concept ConjugateModel =
    TaylorModel<M> && requires(const M& m, const typename M::ConjState& qz, const Vector& e) {
      typename M::ConjState;
      { m.expected_stats(qz) } -> std::convertible_to<Vector>;
      { m.conjugate_update(e) } -> std::convertible_to<typename M::ConjState>;
      { m.conjugate_terms(qz) } -> std::convertible_to<double>;
      { m.log_prior_constant() } -> std::convertible_to<double>;
    };

template <class M>
concept HasExactEta = requires(const M& m, const GaussianVariational& q) {
  { m.exact_eta_expectation(q) } -> std::convertible_to<Vector>;
};

template <class M>
concept HasEtaDerivatives = requires(const M& m, const Vector& theta, Index i) {
  { m.eta(theta) } -> std::convertible_to<Vector>;
  { m.eta_hessian(theta, i) } -> std::convertible_to<Matrix>;
};

/// Models whose delta-method covariance is restricted to the diagonal
/// declare `static constexpr bool diagonal_delta_covariance = true`.
template <class M>
constexpr bool diagonal_delta_covariance() {
  if constexpr (requires { M::diagonal_delta_covariance; }) {
    return M::diagonal_delta_covariance;
  } else {
    return false;
  }
}

enum class Family { dirichlet, categorical };

/// E[t(z)] = grad a(phi). Dirichlet: psi(phi_i) - psi(sum phi), phi > 0.
/// Categorical with natural parameters phi (unnormalized log-probabilities):
/// softmax(phi).
inline Vector expected_stats_from_natural(Family family, const Vector& phi) {
  if (phi.size() == 0) throw InputError("expected_stats_from_natural: empty parameter");
  switch (family) {
    case Family::dirichlet: {
      for (Index i = 0; i < phi.size(); ++i) {
        if (!(phi[i] > 0.0) || !std::isfinite(phi[i])) {
          throw DomainError("Dirichlet parameter " + std::to_string(i) + " must be positive");
        }
      }
      const double total = digamma(phi.sum());
      Vector out(phi.size());
      for (Index i = 0; i < phi.size(); ++i) out[i] = digamma(phi[i]) - total;
      return out;
    }
    case Family::categorical:
      if (!phi.allFinite()) throw DomainError("categorical natural parameter must be finite");
      return softmax(phi);
  }
  throw InputError("unknown family");
}

}  // namespace nonconj
