#pragma once

// Correlated topic model.
//
//   theta ~ N(mu0, Sigma0)                  (log topic proportions, length K)
//   z_n | theta ~ Mult(softmax(theta))
//   x_n | z_n ~ Mult(beta_{z_n})
//
// Per-document inference runs the generic coordinate ascent with q(theta)
// Gaussian and q(z_n) categorical. Tokens of the same term share one q(z).

#include <chrono>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nonconj/document.hpp"
#include "nonconj/engine.hpp"
#include "nonconj/error.hpp"
#include "nonconj/model.hpp"
#include "nonconj/numerics.hpp"
#include "nonconj/parallel.hpp"

namespace nonconj {

struct CtmParams {
  /// K x V, each row a distribution over terms.
  Matrix topics;
  Vector prior_mean;
  Matrix prior_cov;

  int num_topics() const { return static_cast<int>(topics.rows()); }
  int vocab_size() const { return static_cast<int>(topics.cols()); }

  void validate() const {
    const Index k = topics.rows();
    if (k < 1 || topics.cols() < 1) throw InputError("CTM: empty topic matrix");
    if (prior_mean.size() != k || prior_cov.rows() != k || prior_cov.cols() != k) {
      throw InputError("CTM: prior dimensions do not match the number of topics");
    }
    for (Index r = 0; r < k; ++r) {
      if ((topics.row(r).array() < 0.0).any() || !topics.row(r).allFinite()) {
        throw InputError("CTM: topic " + std::to_string(r) + " has negative or non-finite entries");
      }
      if (std::abs(topics.row(r).sum() - 1.0) > 1e-8) {
        throw InputError("CTM: topic " + std::to_string(r) + " does not sum to one");
      }
    }
    (void)SpdFactor(prior_cov);
  }
};

/// Quantities shared by every document under fixed parameters.
class CtmContext {
 public:
  explicit CtmContext(const CtmParams& params)
      : params_(&params),
        log_topics_(params.topics.array().max(1e-300).log().matrix()),
        prior_factor_(params.prior_cov),
        prior_precision_(prior_factor_.inverse()) {}

  const CtmParams& params() const { return *params_; }
  const Matrix& log_topics() const { return log_topics_; }
  const Matrix& prior_precision() const { return prior_precision_; }
  double prior_log_det() const { return prior_factor_.log_det(); }

 private:
  const CtmParams* params_;
  Matrix log_topics_;
  SpdFactor prior_factor_;
  Matrix prior_precision_;
};

struct CtmF {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// f(theta) = eta(theta)^T S - (theta - mu0)^T Sigma0^{-1} (theta - mu0) / 2 with
/// eta(theta) = theta - log sum_k exp(theta_k) and S the expected topic counts.
inline CtmF ctm_f(const Vector& theta, const Vector& stats, const Vector& prior_mean,
                  const Matrix& prior_precision, bool with_hessian = true) {
  if (!theta.allFinite()) throw InputError("ctm_f: non-finite theta");
  if (stats.size() != theta.size()) throw InputError("ctm_f: stats dimension mismatch");
  const double n = stats.sum();
  const double lse = log_sum_exp(theta);
  const Vector pi = (theta.array() - lse).exp().matrix();
  const Vector centered = theta - prior_mean;
  const Vector prec_c = prior_precision * centered;
  CtmF out;
  out.value = stats.dot(theta) - n * lse - 0.5 * centered.dot(prec_c);
  out.gradient = stats - n * pi - prec_c;
  if (with_hessian) {
    out.hessian = n * (pi * pi.transpose());
    out.hessian.diagonal() -= n * pi;
    out.hessian -= prior_precision;
  }
  return out;
}

/// Gradient of theta -> Tr{grad^2 f(theta) Sigma}. Works for any symmetric
/// Sigma; the delta method passes a diagonal one.
inline Vector ctm_trace_grad(const Vector& theta, const Matrix& sigma, const Vector& stats) {
  const double n = stats.sum();
  const Vector pi = softmax(theta);
  const Vector diag = sigma.diagonal();
  const Vector sigma_pi = sigma * pi;
  const double pi_diag = pi.dot(diag);
  const double quad = pi.dot(sigma_pi);
  Vector out(theta.size());
  for (Index i = 0; i < theta.size(); ++i) {
    out[i] = n * (-pi[i] * (diag[i] - pi_diag) + 2.0 * pi[i] * (sigma_pi[i] - quad));
  }
  return out;
}

inline Vector ctm_trace_grad_diag(const Vector& theta, const Vector& sigma_diag, const Vector& stats) {
  if ((sigma_diag.array() <= 0.0).any()) throw InputError("ctm_trace_grad: variances must be positive");
  return ctm_trace_grad(theta, Matrix(sigma_diag.asDiagonal()), stats);
}

/// Per-document CTM contract. Holds references to the shared context and
/// the document; both must outlive the model.
class CtmDocModel {
 public:
  /// Rows follow doc.entries(); each row is q(z) for that term.
  using ConjState = Matrix;
  static constexpr bool diagonal_delta_covariance = true;

  CtmDocModel(const CtmContext& ctx, const Document& doc) : ctx_(&ctx), doc_(&doc) {
    if (doc.max_term() >= ctx.params().vocab_size()) {
      throw InputError("document term index exceeds CTM vocabulary size");
    }
  }

  Index dim() const { return ctx_->params().num_topics(); }

  double f_value_grad(const Vector& theta, const Vector& stats, Vector& grad) const {
    CtmF f = ctm_f(theta, stats, ctx_->params().prior_mean, ctx_->prior_precision(), false);
    grad = std::move(f.gradient);
    return f.value;
  }

  Matrix f_hessian(const Vector& theta, const Vector& stats) const {
    return ctm_f(theta, stats, ctx_->params().prior_mean, ctx_->prior_precision(), true).hessian;
  }

  Vector trace_grad(const Vector& theta, const Matrix& sigma, const Vector& stats) const {
    return ctm_trace_grad(theta, sigma, stats);
  }

  Vector eta(const Vector& theta) const { return (theta.array() - log_sum_exp(theta)).matrix(); }

  /// Every component shares the Hessian -(diag(pi) - pi pi^T).
  Matrix eta_hessian(const Vector& theta, Index) const {
    const Vector pi = softmax(theta);
    Matrix h = pi * pi.transpose();
    h.diagonal() -= pi;
    return h;
  }

  Vector expected_stats(const ConjState& phi) const {
    Vector s = Vector::Zero(dim());
    const auto& entries = doc_->entries();
    for (std::size_t u = 0; u < entries.size(); ++u) {
      s += entries[u].count * phi.row(static_cast<Index>(u)).transpose();
    }
    return s;
  }

  /// phi_uk proportional to exp(E[eta_k]) beta_{k, w_u}.
  ConjState conjugate_update(const Vector& eta_expect) const {
    const auto& entries = doc_->entries();
    Matrix phi(static_cast<Index>(entries.size()), dim());
    for (std::size_t u = 0; u < entries.size(); ++u) {
      Vector logp = eta_expect + ctx_->log_topics().col(entries[u].term);
      phi.row(static_cast<Index>(u)) = softmax(logp).transpose();
    }
    return phi;
  }

  /// sum_n E[log p(x_n | z_n)] - E[log q(z_n)].
  double conjugate_terms(const ConjState& phi) const {
    const auto& entries = doc_->entries();
    double total = 0.0;
    for (std::size_t u = 0; u < entries.size(); ++u) {
      double acc = 0.0;
      for (Index k = 0; k < dim(); ++k) {
        const double p = phi(static_cast<Index>(u), k);
        if (p > 0.0) acc += p * (ctx_->log_topics()(k, entries[u].term) - std::log(p));
      }
      total += entries[u].count * acc;
    }
    return total;
  }

  double log_prior_constant() const {
    return -0.5 * ctx_->prior_log_det() - 0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi);
  }

  /// mu = 0, Sigma = I and the corresponding q(z).
  std::pair<GaussianVariational, ConjState> initial_state() const {
    GaussianVariational q = GaussianVariational::standard(dim());
    return {q, conjugate_update(eta_taylor_expectation(*this, q))};
  }

 private:
  const CtmContext* ctx_;
  const Document* doc_;
};

struct CtmDocState {
  GaussianVariational q_theta;
  /// One row per distinct term of the document.
  Matrix phi;
  InferenceTrace trace;
  bool converged = false;

  double final_objective() const { return trace.empty() ? 0.0 : trace.back().objective; }
};

inline CtmDocState ctm_infer_doc(const CtmContext& ctx, const Document& doc, const InferenceConfig& cfg) {
  const CtmParams& params = ctx.params();
  if (doc.empty()) {
    // Nothing observed: the prior is its own Laplace approximation.
    return {GaussianVariational{params.prior_mean, params.prior_cov}, Matrix(0, params.num_topics()), {}, true};
  }
  const CtmDocModel model(ctx, doc);
  auto [q, phi] = model.initial_state();
  auto res = run_coordinate_ascent(model, std::move(q), std::move(phi), cfg);
  return {std::move(res.q_theta), std::move(res.q_z), std::move(res.trace), res.converged};
}

inline CtmDocState ctm_infer_doc(const CtmParams& params, const Document& doc, const InferenceConfig& cfg) {
  const CtmContext ctx(params);
  return ctm_infer_doc(ctx, doc, cfg);
}

/// p(w) = sum_k beta_kw pi_k with pi = softmax(E_q[theta]).
inline Vector ctm_predictive(const CtmParams& params, const GaussianVariational& q) {
  if (q.mu.size() != params.num_topics()) throw InputError("ctm_predictive: dimension mismatch");
  const Vector pi = softmax(q.mu);
  Vector p = params.topics.transpose() * pi;
  p /= p.sum();
  return p;
}

struct EmRecord {
  int iter = 0;
  /// Approximate bound summed over documents, computed in this iteration's E-step.
  double bound = 0.0;
  double per_word_bound = 0.0;
  double prior_mean_change = 0.0;
  double seconds = 0.0;
};

struct CtmFit {
  CtmParams params;
  std::vector<EmRecord> history;
  long total_words = 0;

  InferenceTrace as_trace() const {
    InferenceTrace t;
    for (const auto& r : history) t.records.push_back({r.iter, r.bound, r.prior_mean_change, r.seconds});
    return t;
  }
};

struct CtmEmOptions {
  int num_topics = 10;
  int em_iters = 20;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Added to every topic-word accumulator before normalizing.
  double topic_smoothing = 1e-8;
  /// Added to the diagonal of the re-estimated prior covariance.
  double cov_regularizer = 1e-6;
  /// Optional starting parameters; seeded uniform-Dirichlet topics otherwise.
  const CtmParams* init = nullptr;
};

/// Topics drawn from a uniform Dirichlet, mu0 = 0, Sigma0 = I.
inline CtmParams ctm_random_init(int num_topics, int vocab_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> unit(1.0);
  CtmParams p;
  p.topics.resize(num_topics, vocab_size);
  for (int k = 0; k < num_topics; ++k) {
    for (int w = 0; w < vocab_size; ++w) p.topics(k, w) = unit(rng);
    p.topics.row(k) /= p.topics.row(k).sum();
  }
  p.prior_mean = Vector::Zero(num_topics);
  p.prior_cov = Matrix::Identity(num_topics, num_topics);
  return p;
}

/// E-step over a corpus under fixed parameters; results in document order.
inline std::vector<CtmDocState> ctm_e_step(const CtmParams& params, const std::vector<Document>& docs,
                                           const InferenceConfig& cfg, int threads) {
  const CtmContext ctx(params);
  std::vector<CtmDocState> states(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t d) { states[d] = ctm_infer_doc(ctx, docs[d], cfg); });
  return states;
}

/// Closed-form M-step given per-document posteriors.
inline CtmParams ctm_m_step(const std::vector<Document>& docs, const std::vector<CtmDocState>& states,
                            int num_topics, int vocab_size, double topic_smoothing, double cov_regularizer) {
  CtmParams p;
  p.topics = Matrix::Constant(num_topics, vocab_size, topic_smoothing);
  Vector mean = Vector::Zero(num_topics);
  int used = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].empty()) continue;
    const auto& entries = docs[d].entries();
    for (std::size_t u = 0; u < entries.size(); ++u) {
      p.topics.col(entries[u].term) += entries[u].count * states[d].phi.row(static_cast<Index>(u)).transpose();
    }
    mean += states[d].q_theta.mu;
    ++used;
  }
  for (int k = 0; k < num_topics; ++k) p.topics.row(k) /= p.topics.row(k).sum();
  if (used == 0) throw InputError("CTM M-step: corpus has no nonempty documents");
  mean /= used;
  Matrix cov = Matrix::Zero(num_topics, num_topics);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].empty()) continue;
    const Vector c = states[d].q_theta.mu - mean;
    cov += states[d].q_theta.sigma + c * c.transpose();
  }
  cov /= used;
  cov = 0.5 * (cov + cov.transpose());
  cov.diagonal().array() += cov_regularizer;
  p.prior_mean = std::move(mean);
  p.prior_cov = std::move(cov);
  return p;
}

/// Variational EM for the CTM.
inline CtmFit ctm_em_fit(const Corpus& corpus, const InferenceConfig& cfg, const CtmEmOptions& opts) {
  if (corpus.docs.empty()) throw InputError("ctm_em_fit: empty corpus");
  if (opts.num_topics < 1) throw InputError("ctm_em_fit: number of topics must be positive");
  if (opts.em_iters < 1) throw InputError("ctm_em_fit: em_iters must be positive");
  std::vector<bool> seen(static_cast<std::size_t>(corpus.vocab_size), false);
  long distinct = 0;
  for (const auto& d : corpus.docs) {
    if (d.max_term() >= corpus.vocab_size) throw InputError("ctm_em_fit: term index exceeds vocabulary");
    for (const auto& e : d.entries()) {
      if (!seen[static_cast<std::size_t>(e.term)]) {
        seen[static_cast<std::size_t>(e.term)] = true;
        ++distinct;
      }
    }
  }
  if (distinct == 0) throw InputError("ctm_em_fit: corpus has no words");
  if (opts.num_topics > distinct) {
    throw InputError("ctm_em_fit: more topics (" + std::to_string(opts.num_topics) +
                     ") than distinct terms in use (" + std::to_string(distinct) + ")");
  }

  CtmFit fit;
  fit.params = opts.init ? *opts.init : ctm_random_init(opts.num_topics, corpus.vocab_size, opts.seed);
  fit.params.validate();
  fit.total_words = corpus.total_words();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  for (int iter = 1; iter <= opts.em_iters; ++iter) {
    const auto states = ctm_e_step(fit.params, corpus.docs, cfg, opts.threads);
    double bound = 0.0;
    for (const auto& s : states) bound += s.final_objective();
    CtmParams next = ctm_m_step(corpus.docs, states, opts.num_topics, corpus.vocab_size,
                                opts.topic_smoothing, opts.cov_regularizer);
    EmRecord rec;
    rec.iter = iter;
    rec.bound = bound;
    rec.per_word_bound = bound / static_cast<double>(std::max(1L, fit.total_words));
    rec.prior_mean_change = (next.prior_mean - fit.params.prior_mean).norm();
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    fit.history.push_back(rec);
    fit.params = std::move(next);
  }
  return fit;
}

}  // namespace nonconj
