#pragma once

// Hierarchical unigram language model.
//
//   theta ~ N(0, I)                        (log Dirichlet parameters, length V)
//   z_d | theta ~ Dirichlet(exp(theta))    d = 1..D
//   x_d | z_d ~ Multinomial(N_d, z_d)
//
// theta is the nonconjugate variable; each q(z_d) is Dirichlet.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "nonconj/document.hpp"
#include "nonconj/engine.hpp"
#include "nonconj/error.hpp"
#include "nonconj/model.hpp"
#include "nonconj/numerics.hpp"

namespace nonconj {

namespace detail {

inline constexpr double kMaxLogParam = 700.0;

inline Vector checked_exp(const Vector& v, const char* what) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw InputError(std::string(what) + ": non-finite input");
    if (v[i] > kMaxLogParam) {
      throw OverflowError(std::string(what) + ": exp overflow at component " + std::to_string(i));
    }
  }
  return v.array().exp().matrix();
}

}  // namespace detail

struct UnigramF {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// f(theta) = exp(theta)^T S - D (sum_i lnG(e^theta_i) - lnG(sum_i e^theta_i)) - theta^T theta / 2
/// where S = E_q[t(z)] summed over documents. num_docs may be zero.
inline UnigramF unigram_f(const Vector& theta, const Vector& stats, int num_docs,
                          bool with_hessian = true) {
  if (stats.size() != theta.size()) throw InputError("unigram_f: stats dimension mismatch");
  if (num_docs < 0) throw InputError("unigram_f: negative document count");
  const Vector alpha = detail::checked_exp(theta, "unigram_f");
  const double d = num_docs;
  const double total = alpha.sum();
  UnigramF out;
  double lg = 0.0;
  out.gradient.resize(theta.size());
  Vector psi(theta.size());
  const double psi_total = num_docs > 0 ? digamma(total) : 0.0;
  for (Index i = 0; i < theta.size(); ++i) {
    if (num_docs > 0) {
      lg += log_gamma(alpha[i]);
      psi[i] = digamma(alpha[i]);
    } else {
      psi[i] = 0.0;
    }
    out.gradient[i] = alpha[i] * stats[i] - d * alpha[i] * (psi[i] - psi_total) - theta[i];
  }
  const double normalizer = num_docs > 0 ? lg - log_gamma(total) : 0.0;
  out.value = alpha.dot(stats) - d * normalizer - 0.5 * theta.squaredNorm();
  if (with_hessian) {
    const double tri_total = num_docs > 0 ? trigamma(total) : 0.0;
    out.hessian = d * tri_total * alpha * alpha.transpose();
    for (Index i = 0; i < theta.size(); ++i) {
      const double tri = num_docs > 0 ? trigamma(alpha[i]) : 0.0;
      out.hessian(i, i) += alpha[i] * stats[i] - d * alpha[i] * (psi[i] - psi_total) -
                           d * alpha[i] * alpha[i] * tri - 1.0;
    }
  }
  return out;
}

/// Gradient of theta -> Tr{grad^2 f(theta) Sigma} for the unigram f.
inline Vector unigram_trace_grad(const Vector& theta, const Matrix& sigma, const Vector& stats,
                                 int num_docs) {
  const Vector alpha = detail::checked_exp(theta, "unigram_trace_grad");
  const Index n = theta.size();
  Vector out(n);
  if (num_docs == 0) {
    for (Index k = 0; k < n; ++k) out[k] = sigma(k, k) * alpha[k] * stats[k];
    return out;
  }
  const double d = num_docs;
  const double total = alpha.sum();
  const double psi_total = digamma(total);
  const double tri_total = trigamma(total);
  const double tetra_total = tetragamma(total);
  const Vector sigma_alpha = sigma * alpha;
  const double quad = alpha.dot(sigma_alpha);
  const double diag_weighted = sigma.diagonal().dot(alpha);
  for (Index k = 0; k < n; ++k) {
    const double a = alpha[k];
    const double own = a * stats[k] - d * a * (digamma(a) - psi_total) -
                       3.0 * d * a * a * trigamma(a) - d * a * a * a * tetragamma(a);
    out[k] = sigma(k, k) * own + d * a * tri_total * diag_weighted + d * tetra_total * a * quad +
             2.0 * d * tri_total * a * sigma_alpha[k];
  }
  return out;
}

/// Sum over documents of psi(phi_d) - psi(sum_i phi_di); rows of phis are documents.
inline Vector unigram_expected_stats(const Matrix& phis) {
  Vector out = Vector::Zero(phis.cols());
  for (Index d = 0; d < phis.rows(); ++d) {
    out += expected_stats_from_natural(Family::dirichlet, phis.row(d).transpose());
  }
  return out;
}

/// E[exp(theta)] = exp(mu + diag(Sigma)/2) under q(theta) = N(mu, Sigma).
inline Vector unigram_eta_expectation(const GaussianVariational& q) {
  return detail::checked_exp(q.mu + 0.5 * q.sigma.diagonal(), "unigram_eta_expectation");
}

/// q(z_d) = Dirichlet(exp(mu + diag(Sigma)/2) + x_d).
inline Vector unigram_conjugate_update(const GaussianVariational& q, const Document& doc) {
  Vector phi = unigram_eta_expectation(q);
  phi += doc.dense(static_cast<int>(phi.size()));
  for (Index i = 0; i < phi.size(); ++i) {
    if (!(phi[i] > 0.0)) {
      throw DomainError("unigram update produced nonpositive Dirichlet parameter at " +
                        std::to_string(i));
    }
  }
  return phi;
}

class UnigramModel {
 public:
  /// Rows are per-document Dirichlet parameters.
  using ConjState = Matrix;

  UnigramModel(int vocab_size, std::vector<Document> docs)
      : vocab_size_(vocab_size), docs_(std::move(docs)) {
    if (vocab_size_ < 2) throw InputError("unigram model needs V >= 2");
    if (docs_.empty()) throw InputError("unigram model needs at least one document");
    counts_.resize(static_cast<Index>(docs_.size()), vocab_size_);
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      if (docs_[d].max_term() >= vocab_size_) {
        throw InputError("document " + std::to_string(d) + " has a term index >= V");
      }
      counts_.row(static_cast<Index>(d)) = docs_[d].dense(vocab_size_).transpose();
    }
  }

  Index dim() const { return vocab_size_; }
  int num_docs() const { return static_cast<int>(docs_.size()); }
  const std::vector<Document>& docs() const { return docs_; }

  double f_value_grad(const Vector& theta, const Vector& stats, Vector& grad) const {
    UnigramF f = unigram_f(theta, stats, num_docs(), false);
    grad = std::move(f.gradient);
    return f.value;
  }

  Matrix f_hessian(const Vector& theta, const Vector& stats) const {
    return unigram_f(theta, stats, num_docs(), true).hessian;
  }

  Vector trace_grad(const Vector& theta, const Matrix& sigma, const Vector& stats) const {
    return unigram_trace_grad(theta, sigma, stats, num_docs());
  }

  Vector expected_stats(const ConjState& phis) const { return unigram_expected_stats(phis); }

  Vector exact_eta_expectation(const GaussianVariational& q) const {
    return unigram_eta_expectation(q);
  }

  ConjState conjugate_update(const Vector& eta_expect) const {
    Matrix phis = counts_.rowwise() + eta_expect.transpose();
    for (Index d = 0; d < phis.rows(); ++d) {
      for (Index i = 0; i < phis.cols(); ++i) {
        if (!(phis(d, i) > 0.0) || !std::isfinite(phis(d, i))) {
          throw DomainError("nonpositive Dirichlet parameter for document " + std::to_string(d) +
                            ", term " + std::to_string(i));
        }
      }
    }
    return phis;
  }

  /// sum_d E[log h(z_d) + log p(x_d|z_d)] - E[log q(z_d)], dropping the
  /// multinomial coefficient.
  double conjugate_terms(const ConjState& phis) const {
    double total = 0.0;
    for (Index d = 0; d < phis.rows(); ++d) {
      const Vector phi = phis.row(d).transpose();
      const Vector elog = expected_stats_from_natural(Family::dirichlet, phi);
      double neg_entropy = log_gamma(phi.sum());
      for (Index i = 0; i < phi.size(); ++i) {
        neg_entropy += -log_gamma(phi[i]) + (phi[i] - 1.0) * elog[i];
      }
      const double carrier_and_lik = (counts_.row(d).transpose().array() - 1.0).matrix().dot(elog);
      total += carrier_and_lik - neg_entropy;
    }
    return total;
  }

  double log_prior_constant() const {
    return -0.5 * vocab_size_ * std::log(2.0 * std::numbers::pi);
  }

  /// q(theta) = N(0, I) and the matching q(z).
  std::pair<GaussianVariational, ConjState> initial_state() const {
    GaussianVariational q = GaussianVariational::standard(vocab_size_);
    return {q, conjugate_update(exact_eta_expectation(q))};
  }

 private:
  int vocab_size_;
  std::vector<Document> docs_;
  Matrix counts_;
};

struct UnigramResult {
  GaussianVariational q_theta;
  Matrix q_z;
  InferenceTrace trace;
  bool converged = false;
};

inline UnigramResult infer_unigram(const Corpus& corpus, const InferenceConfig& cfg) {
  const UnigramModel model(corpus.vocab_size, corpus.docs);
  auto [q, qz] = model.initial_state();
  auto res = run_coordinate_ascent(model, std::move(q), std::move(qz), cfg);
  return {std::move(res.q_theta), std::move(res.q_z), std::move(res.trace), res.converged};
}

}  // namespace nonconj
