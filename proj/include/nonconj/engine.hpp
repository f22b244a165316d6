#pragma once

// Coordinate-ascent variational inference for nonconjugate models:
// Laplace and delta-method updates of q(theta), the conjugate update of
// q(z), and the approximate objective used as a convergence monitor.

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <locale>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nonconj/error.hpp"
#include "nonconj/model.hpp"
#include "nonconj/numerics.hpp"
#include "nonconj/optimizer.hpp"

namespace nonconj {

enum class Method { laplace, delta };

inline const char* to_string(Method m) { return m == Method::laplace ? "laplace" : "delta"; }

inline Method parse_method(const std::string& s) {
  if (s == "laplace") return Method::laplace;
  if (s == "delta") return Method::delta;
  throw InputError("unknown inference method '" + s + "' (expected laplace or delta)");
}

struct InferenceConfig {
  Method method = Method::laplace;
  /// Stop once ||mu(t) - mu(t-1)||_2 < conv_tol.
  double conv_tol = 1e-4;
  int max_outer_iters = 100;
  double jitter_init = 1e-6;
  double jitter_max = 1e-2;
  int delta_inner_rounds = 10;
  /// Inner alternation stops early when the delta objective moves less than this.
  double delta_inner_tol = 1e-8;
  OptimizerConfig opt;

  void validate() const {
    if (!(conv_tol > 0.0)) throw InputError("conv_tol must be positive");
    if (max_outer_iters < 1) throw InputError("max_outer_iters must be >= 1");
    if (!(jitter_init > 0.0 && jitter_init <= jitter_max)) {
      throw InputError("jitter must satisfy 0 < jitter_init <= jitter_max");
    }
    if (delta_inner_rounds < 1) throw InputError("delta_inner_rounds must be >= 1");
  }
};

struct TraceRecord {
  int iter = 0;
  double objective = 0.0;
  double mean_change = 0.0;
  double seconds = 0.0;
};

struct InferenceTrace {
  std::vector<TraceRecord> records;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  const TraceRecord& back() const { return records.back(); }
};

/// Whether the trace CSV carries measured wall-clock seconds. Omitting them
/// (all zeros) keeps repeated runs byte-identical.
enum class TraceTiming { omit, wall_clock };

/// Writes "iter,objective,mean_change,seconds" with a header line.
inline void write_trace_csv(std::ostream& os, const InferenceTrace& trace,
                            TraceTiming timing = TraceTiming::omit) {
  std::ostringstream buf;
  buf.imbue(std::locale::classic());
  buf << "iter,objective,mean_change,seconds\n";
  buf << std::setprecision(17);
  for (const auto& r : trace.records) {
    buf << r.iter << ',' << r.objective << ',' << r.mean_change << ','
        << (timing == TraceTiming::wall_clock ? r.seconds : 0.0) << '\n';
  }
  os << buf.str();
}

/// A failure inside coordinate ascent, with the trace recorded so far.
class InferenceFailure : public Error {
 public:
  InferenceFailure(const Error& cause, InferenceTrace trace)
      : Error(cause.kind(), std::string("inference failed after ") +
                                std::to_string(trace.size()) + " iteration(s): " + cause.what()),
        trace_(std::move(trace)) {}

  const InferenceTrace& trace() const noexcept { return trace_; }

 private:
  InferenceTrace trace_;
};

/// Diagnostics from a single q(theta) update.
struct StepReport {
  OptimResult optim;
  double jitter = 0.0;
  int inner_rounds = 0;
  /// Delta method: objective after each inner round, preceded by the value at the input.
  std::vector<double> objective_log;
};

struct CovarianceFromHessian {
  Matrix sigma;
  double jitter = 0.0;
};

/// Sigma = (-H + lambda I)^{-1}, lambda = 0 first and then doubling from
/// jitter_init up to jitter_max until the factorization succeeds. With
/// diagonal_only, Sigma_ii = 1 / (-H_ii + lambda).
inline CovarianceFromHessian covariance_from_hessian(const Matrix& hessian,
                                                     const InferenceConfig& cfg,
                                                     bool diagonal_only = false) {
  const Index n = hessian.rows();
  Matrix neg = -0.5 * (hessian + hessian.transpose());
  double lambda = 0.0;
  while (true) {
    if (diagonal_only) {
      const Vector d = neg.diagonal().array() + lambda;
      if ((d.array() > 0.0).all() && d.allFinite()) {
        return {Matrix(d.cwiseInverse().asDiagonal()), lambda};
      }
    } else {
      try {
        const SpdFactor fac(neg + lambda * Matrix::Identity(n, n));
        return {fac.inverse(), lambda};
      } catch (const NotPositiveDefinite&) {
      }
    }
    lambda = lambda == 0.0 ? cfg.jitter_init : 2.0 * lambda;
    if (lambda > cfg.jitter_max * (1.0 + 1e-12)) {
      throw NonConcaveError("negative Hessian is not positive definite even with jitter " +
                            std::to_string(cfg.jitter_max));
    }
  }
}

/// Laplace update: q(theta) = N(theta_hat, -H(theta_hat)^{-1}) with
/// theta_hat = argmax f(.; stats), searched from init.
template <TaylorModel M>
GaussianVariational laplace_step(const M& model, const Vector& stats, const Vector& init,
                                 const InferenceConfig& cfg, StepReport* report = nullptr) {
  if (init.size() != model.dim()) throw InputError("laplace_step: init has wrong dimension");
  if (!init.allFinite()) throw InputError("laplace_step: init is not finite");
  auto objective = [&](const Vector& theta, Vector& grad) {
    return model.f_value_grad(theta, stats, grad);
  };
  OptimResult opt = maximize(objective, init, cfg.opt);
  const Matrix hessian = model.f_hessian(opt.argmax, stats);
  auto cov = covariance_from_hessian(hessian, cfg);
  if (report) {
    report->jitter = cov.jitter;
    report->inner_rounds = 1;
    report->optim = opt;
  }
  return {std::move(opt.argmax), std::move(cov.sigma)};
}

/// f(mu) + 1/2 Tr{H(mu) Sigma} + 1/2 log|Sigma|.
template <TaylorModel M>
double delta_objective(const M& model, const Vector& stats, const Vector& mu, const Matrix& sigma) {
  Vector grad(mu.size());
  const double f = model.f_value_grad(mu, stats, grad);
  const Matrix h = model.f_hessian(mu, stats);
  return f + 0.5 * h.cwiseProduct(sigma).sum() + 0.5 * SpdFactor(sigma).log_det();
}

/// Delta-method update. Alternates: mu <- argmax f(mu) + 1/2 Tr{H(mu) Sigma}
/// with Sigma fixed, then Sigma <- -H(mu)^{-1}; each half-step cannot lower
/// the delta objective.
template <TaylorModel M>
GaussianVariational delta_step(const M& model, const Vector& stats, const GaussianVariational& init_q,
                               const InferenceConfig& cfg, StepReport* report = nullptr) {
  constexpr bool diagonal = diagonal_delta_covariance<M>();
  if (init_q.dim() != model.dim()) throw InputError("delta_step: init has wrong dimension");
  GaussianVariational q = init_q;
  if (diagonal) q.sigma = Matrix(q.sigma.diagonal().asDiagonal());
  q.validate();

  std::vector<double> log;
  double previous = delta_objective(model, stats, q.mu, q.sigma);
  log.push_back(previous);
  OptimResult last_opt;
  double jitter = 0.0;
  int rounds = 0;
  for (int round = 0; round < cfg.delta_inner_rounds; ++round) {
    const Matrix& sigma = q.sigma;
    auto objective = [&](const Vector& mu, Vector& grad) {
      const double f = model.f_value_grad(mu, stats, grad);
      const Matrix h = model.f_hessian(mu, stats);
      grad += 0.5 * model.trace_grad(mu, sigma, stats);
      return f + 0.5 * h.cwiseProduct(sigma).sum();
    };
    last_opt = maximize(objective, q.mu, cfg.opt);
    q.mu = last_opt.argmax;
    auto cov = covariance_from_hessian(model.f_hessian(q.mu, stats), cfg, diagonal);
    jitter = std::max(jitter, cov.jitter);
    q.sigma = std::move(cov.sigma);
    ++rounds;
    const double value = delta_objective(model, stats, q.mu, q.sigma);
    log.push_back(value);
    const bool settled = std::abs(value - previous) < cfg.delta_inner_tol;
    previous = value;
    if (settled) break;
  }
  if (report) {
    report->optim = last_opt;
    report->jitter = jitter;
    report->inner_rounds = rounds;
    report->objective_log = std::move(log);
  }
  return q;
}

/// E_q[eta_i(theta)] ~= eta_i(mu) + 1/2 Tr{grad^2 eta_i(mu) Sigma}.
template <HasEtaDerivatives M>
Vector eta_taylor_expectation(const M& model, const GaussianVariational& q) {
  Vector e = model.eta(q.mu);
  for (Index i = 0; i < e.size(); ++i) {
    e[i] += 0.5 * Matrix(model.eta_hessian(q.mu, i)).cwiseProduct(q.sigma).sum();
  }
  if (!e.allFinite()) throw DomainError("eta expectation is not finite");
  return e;
}

/// Exact expectation when the model provides one, otherwise the Taylor form.
template <class M>
Vector eta_expectation(const M& model, const GaussianVariational& q) {
  if constexpr (HasExactEta<M>) {
    return model.exact_eta_expectation(q);
  } else {
    static_assert(HasEtaDerivatives<M>, "model must provide an exact or Taylor eta expectation");
    return eta_taylor_expectation(model, q);
  }
}

template <ConjugateModel M>
typename M::ConjState conjugate_step(const M& model, const GaussianVariational& q_theta) {
  return model.conjugate_update(eta_expectation(model, q_theta));
}

/// Second-order expansion of E_q(theta)[f] around theta_hat plus the Gaussian
/// entropy (without its constant).
template <TaylorModel M>
double taylor_objective(const M& model, const Vector& stats, const GaussianVariational& q,
                        const Vector& theta_hat) {
  Vector grad(theta_hat.size());
  const double f = model.f_value_grad(theta_hat, stats, grad);
  const Matrix h = model.f_hessian(theta_hat, stats);
  const Vector d = q.mu - theta_hat;
  const double log_det = SpdFactor(q.sigma).log_det();
  return f + grad.dot(d) + 0.5 * d.dot(h * d) + 0.5 * (h.cwiseProduct(q.sigma).sum() + log_det);
}

/// Approximate variational objective used as a monitor:
/// the Taylor expansion of E[f] around theta_hat, the Gaussian entropy, the
/// q(z) terms E[log h(z) + log p(x|z)] - E[log q(z)] and the prior normalizer.
template <ConjugateModel M>
double approx_objective(const M& model, const GaussianVariational& q_theta,
                        const typename M::ConjState& q_z, const Vector& theta_hat) {
  const Vector stats = model.expected_stats(q_z);
  return taylor_objective(model, stats, q_theta, theta_hat) + model.conjugate_terms(q_z) +
         model.log_prior_constant();
}

template <ConjugateModel M>
struct CoordinateAscentResult {
  GaussianVariational q_theta;
  typename M::ConjState q_z;
  InferenceTrace trace;
  bool converged = false;
  /// Largest jitter applied to any covariance during the run.
  double max_jitter = 0.0;
};

/// Alternates expected statistics, the q(theta) update, the eta expectation
/// and the q(z) update until the mean moves less than cfg.conv_tol.
template <ConjugateModel M>
CoordinateAscentResult<M> run_coordinate_ascent(const M& model, GaussianVariational q_theta,
                                                typename M::ConjState q_z,
                                                const InferenceConfig& cfg) {
  cfg.validate();
  q_theta.validate();
  if (q_theta.dim() != model.dim()) throw InputError("initial q(theta) has wrong dimension");

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  CoordinateAscentResult<M> out;
  try {
    for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
      const Vector stats = model.expected_stats(q_z);
      StepReport report;
      GaussianVariational next =
          cfg.method == Method::laplace ? laplace_step(model, stats, q_theta.mu, cfg, &report)
                                        : delta_step(model, stats, q_theta, cfg, &report);
      out.max_jitter = std::max(out.max_jitter, report.jitter);
      const double change = (next.mu - q_theta.mu).norm();
      q_theta = std::move(next);
      q_z = conjugate_step(model, q_theta);

      TraceRecord rec;
      rec.iter = iter;
      rec.objective = approx_objective(model, q_theta, q_z, q_theta.mu);
      rec.mean_change = change;
      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      out.trace.records.push_back(rec);
      if (change < cfg.conv_tol) {
        out.converged = true;
        break;
      }
    }
  } catch (const Error& e) {
    throw InferenceFailure(e, std::move(out.trace));
  }
  out.q_theta = std::move(q_theta);
  out.q_z = std::move(q_z);
  return out;
}

}  // namespace nonconj
