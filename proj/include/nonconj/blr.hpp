#pragma once

// Bayesian logistic regression and its hierarchical extension.
//
//   theta ~ N(mu0, Sigma0)
//   z_n | theta, t_n ~ Bernoulli(sigma(theta^T t_n))
//
// The labels are observed, so coordinate ascent reduces to a single
// q(theta) update with the labels as sufficient statistics.

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "nonconj/engine.hpp"
#include "nonconj/error.hpp"
#include "nonconj/model.hpp"
#include "nonconj/numerics.hpp"
#include "nonconj/parallel.hpp"

namespace nonconj {

struct LabeledInstance {
  Vector covariates;
  /// z = (1, 0) when true, (0, 1) otherwise.
  bool positive = false;

  double z1() const { return positive ? 1.0 : 0.0; }
};

using LabeledData = std::vector<LabeledInstance>;

struct BlrPrior {
  Vector mu0;
  Matrix sigma0;

  static BlrPrior standard(Index p) { return {Vector::Zero(p), Matrix::Identity(p, p)}; }
};

struct HierPrior {
  double nu = 0.0;
  Matrix phi0;
  Matrix phi1;

  /// nu = p + nu_offset, Phi0 = phi0 I, Phi1 = phi1 I.
  static HierPrior scaled(Index p, double nu_offset, double phi0, double phi1) {
    return {static_cast<double>(p) + nu_offset, phi0 * Matrix::Identity(p, p), phi1 * Matrix::Identity(p, p)};
  }

  void validate(Index p) const {
    if (phi0.rows() != p || phi0.cols() != p || phi1.rows() != p || phi1.cols() != p) {
      throw InputError("hierarchical prior: scale matrices must be p x p");
    }
    if (!(nu > static_cast<double>(p) - 1.0)) throw ConfigError("hierarchical prior: nu must exceed p - 1");
    (void)SpdFactor(phi0);
    (void)SpdFactor(phi1);
  }
};

/// Clamp for log predictive likelihoods.
inline constexpr double kMinLogLik = -690.7755278982137;  // ln 1e-300

struct BlrF {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// Labeled data plus a Gaussian prior, realized as a TaylorModel. The
/// statistics vector passed to f holds z_{n,1} for every instance.
class BlrModel {
 public:
  BlrModel(const LabeledData& data, BlrPrior prior) : data_(&data), prior_(std::move(prior)) {
    const Index p = prior_.mu0.size();
    if (p == 0) throw InputError("BLR: empty coefficient vector");
    if (prior_.sigma0.rows() != p || prior_.sigma0.cols() != p) {
      throw InputError("BLR: prior covariance does not match prior mean");
    }
    for (std::size_t n = 0; n < data.size(); ++n) {
      if (data[n].covariates.size() != p) {
        throw InputError("BLR: instance " + std::to_string(n) + " has " +
                         std::to_string(data[n].covariates.size()) + " covariates, expected " +
                         std::to_string(p));
      }
      if (!data[n].covariates.allFinite()) throw InputError("BLR: non-finite covariates");
    }
    const SpdFactor fac(prior_.sigma0);
    precision_ = fac.inverse();
    prior_log_det_ = fac.log_det();
  }

  Index dim() const { return prior_.mu0.size(); }
  const BlrPrior& prior() const { return prior_; }
  const LabeledData& data() const { return *data_; }

  Vector labels() const {
    Vector z(static_cast<Index>(data_->size()));
    for (std::size_t n = 0; n < data_->size(); ++n) z[static_cast<Index>(n)] = (*data_)[n].z1();
    return z;
  }

  BlrF evaluate(const Vector& theta, const Vector& labels, bool with_hessian) const {
    if (theta.size() != dim()) throw InputError("BLR: theta has wrong dimension");
    if (labels.size() != static_cast<Index>(data_->size())) throw InputError("BLR: label count mismatch");
    const Vector centered = theta - prior_.mu0;
    const Vector prec_c = precision_ * centered;
    BlrF out;
    out.value = -0.5 * centered.dot(prec_c);
    out.gradient = -prec_c;
    if (with_hessian) out.hessian = -precision_;
    for (std::size_t n = 0; n < data_->size(); ++n) {
      const Vector& t = (*data_)[n].covariates;
      const double a = theta.dot(t);
      const double z1 = labels[static_cast<Index>(n)];
      const double s = sigmoid(a);
      out.value += z1 * log_sigmoid(a) + (1.0 - z1) * log_sigmoid(-a);
      out.gradient += (z1 - s) * t;
      if (with_hessian) out.hessian.noalias() -= (s * sigmoid(-a)) * (t * t.transpose());
    }
    return out;
  }

  double f_value_grad(const Vector& theta, const Vector& labels, Vector& grad) const {
    BlrF f = evaluate(theta, labels, false);
    grad = std::move(f.gradient);
    return f.value;
  }

  Matrix f_hessian(const Vector& theta, const Vector& labels) const {
    return evaluate(theta, labels, true).hessian;
  }

  /// d/dtheta_i Tr{H Sigma} = -sum_n s_n (1 - s_n)(1 - 2 s_n) t_ni (t_n^T Sigma t_n).
  Vector trace_grad(const Vector& theta, const Matrix& sigma, const Vector& /*labels*/) const {
    Vector out = Vector::Zero(dim());
    for (const auto& inst : *data_) {
      const Vector& t = inst.covariates;
      const double s = sigmoid(theta.dot(t));
      out -= s * (1.0 - s) * (1.0 - 2.0 * s) * t.dot(sigma * t) * t;
    }
    return out;
  }

  double log_prior_constant() const {
    return -0.5 * prior_log_det_ - 0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  const LabeledData* data_;
  BlrPrior prior_;
  Matrix precision_;
  double prior_log_det_ = 0.0;
};

inline BlrF blr_f(const Vector& theta, const LabeledData& data, const BlrPrior& prior) {
  const BlrModel model(data, prior);
  return model.evaluate(theta, model.labels(), true);
}

inline Vector blr_trace_grad(const Vector& theta, const Matrix& sigma, const LabeledData& data) {
  const BlrModel model(data, BlrPrior::standard(theta.size()));
  if (sigma.rows() != theta.size() || sigma.cols() != theta.size()) {
    throw InputError("blr_trace_grad: Sigma has wrong shape");
  }
  return model.trace_grad(theta, sigma, model.labels());
}

struct BlrFit {
  GaussianVariational q;
  StepReport report;
  InferenceTrace trace;
};

/// One Laplace or delta update of q(theta) starting from N(0, I).
inline BlrFit blr_fit(const LabeledData& data, const BlrPrior& prior, const InferenceConfig& cfg) {
  cfg.validate();
  const BlrModel model(data, prior);
  const Vector labels = model.labels();
  const GaussianVariational init = GaussianVariational::standard(model.dim());
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  BlrFit fit;
  fit.q = cfg.method == Method::laplace ? laplace_step(model, labels, init.mu, cfg, &fit.report)
                                        : delta_step(model, labels, init, cfg, &fit.report);
  TraceRecord rec;
  rec.iter = 1;
  rec.objective = taylor_objective(model, labels, fit.q, fit.q.mu) + model.log_prior_constant();
  rec.mean_change = (fit.q.mu - init.mu).norm();
  rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  fit.trace.records.push_back(rec);
  return fit;
}

/// Plug-in log likelihood z1 log sigma(mu^T t) + z2 log sigma(-mu^T t), clamped at ln 1e-300.
inline double blr_predict_loglik(const GaussianVariational& q, const LabeledInstance& inst) {
  if (inst.covariates.size() != q.mu.size()) throw InputError("blr_predict_loglik: dimension mismatch");
  const double a = q.mu.dot(inst.covariates);
  const double ll = inst.positive ? log_sigmoid(a) : log_sigmoid(-a);
  return std::max(ll, kMinLogLik);
}

/// Label 1 iff sigma(mu^T t) >= 0.5.
inline bool blr_predict_label(const GaussianVariational& q, const Vector& covariates) {
  return sigmoid(q.mu.dot(covariates)) >= 0.5;
}

struct HyperParams {
  Vector mu0;
  Matrix sigma0;
};

/// Sigma0 = (Phi0^{-1} + sum_m (mu_m - mu0)(mu_m - mu0)^T) / (M + nu - p - 1).
inline Matrix hblr_update_cov(const std::vector<GaussianVariational>& tasks, const HierPrior& hier,
                              const Vector& mu0) {
  const Index p = mu0.size();
  const double denom = static_cast<double>(tasks.size()) + hier.nu - static_cast<double>(p) - 1.0;
  if (!(denom > 0.0)) {
    throw ConfigError("hierarchical update: M + nu - p - 1 must be positive (got " + std::to_string(denom) + ")");
  }
  Matrix s = SpdFactor(hier.phi0).inverse();
  for (const auto& q : tasks) {
    const Vector c = q.mu - mu0;
    s += c * c.transpose();
  }
  s /= denom;
  return 0.5 * (s + s.transpose());
}

/// mu0 = (Sigma0 Phi1^{-1} / M + I)^{-1} mean_m(mu_m).
inline Vector hblr_update_mean(const std::vector<GaussianVariational>& tasks, const HierPrior& hier,
                               const Matrix& sigma0) {
  const Index p = sigma0.rows();
  const double m = static_cast<double>(tasks.size());
  Vector mean = Vector::Zero(p);
  for (const auto& q : tasks) mean += q.mu;
  mean /= m;
  const Matrix a = sigma0 * SpdFactor(hier.phi1).inverse() / m + Matrix::Identity(p, p);
  return a.partialPivLu().solve(mean);
}

/// MAP update of (mu0, Sigma0): Sigma0 from the current mu0, then mu0 from the new Sigma0.
inline HyperParams hblr_hyper_update(const std::vector<GaussianVariational>& tasks, const HierPrior& hier,
                                     const Vector& current_mu0) {
  if (tasks.empty()) throw InputError("hierarchical update needs at least one task");
  const Index p = current_mu0.size();
  hier.validate(p);
  for (const auto& q : tasks) {
    if (q.mu.size() != p) throw InputError("hierarchical update: task dimension mismatch");
  }
  HyperParams out;
  out.sigma0 = hblr_update_cov(tasks, hier, current_mu0);
  out.mu0 = hblr_update_mean(tasks, hier, out.sigma0);
  return out;
}

struct HblrFit {
  std::vector<GaussianVariational> tasks;
  Vector mu0;
  Matrix sigma0;
  InferenceTrace trace;
  bool converged = false;
};

struct HblrOptions {
  int em_iters = 50;
  int threads = 1;
  /// When false the hyperparameters stay at their initial values.
  bool update_hyper = true;
  /// Initial (mu0, Sigma0); defaults to (0, I).
  const HyperParams* init = nullptr;
};

/// Variational EM: per-task q(theta_m) updates under the shared prior, then
/// the MAP hyperparameter update, until ||delta mu0|| < cfg.conv_tol.
inline HblrFit hblr_fit_em(const std::vector<LabeledData>& tasks, const HierPrior& hier,
                           const InferenceConfig& cfg, const HblrOptions& opts = {}) {
  if (tasks.empty()) throw InputError("hierarchical fit needs at least one task");
  Index p = -1;
  for (const auto& t : tasks) {
    if (!t.empty()) {
      p = t.front().covariates.size();
      break;
    }
  }
  if (opts.init) p = opts.init->mu0.size();
  if (p <= 0) throw InputError("hierarchical fit: cannot determine the covariate dimension");
  hier.validate(p);

  HblrFit fit;
  fit.mu0 = opts.init ? opts.init->mu0 : Vector::Zero(p);
  fit.sigma0 = opts.init ? opts.init->sigma0 : Matrix::Identity(p, p);
  fit.tasks.resize(tasks.size());
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  for (int round = 1; round <= std::max(1, opts.em_iters); ++round) {
    const BlrPrior prior{fit.mu0, fit.sigma0};
    std::vector<double> objectives(tasks.size());
    parallel_for(tasks.size(), opts.threads, [&](std::size_t m) {
      BlrFit f = blr_fit(tasks[m], prior, cfg);
      objectives[m] = f.trace.back().objective;
      fit.tasks[m] = std::move(f.q);
    });
    double total = 0.0;
    for (double o : objectives) total += o;
    double change = 0.0;
    if (opts.update_hyper) {
      HyperParams next = hblr_hyper_update(fit.tasks, hier, fit.mu0);
      change = (next.mu0 - fit.mu0).norm();
      fit.mu0 = std::move(next.mu0);
      fit.sigma0 = std::move(next.sigma0);
    }
    fit.trace.records.push_back(
        {round, total, change, std::chrono::duration<double>(Clock::now() - start).count()});
    if (!opts.update_hyper || change < cfg.conv_tol) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

}  // namespace nonconj
