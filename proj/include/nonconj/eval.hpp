#pragma once

// Held-out evaluation: document completion likelihood for the CTM,
// accuracy and log predictive likelihood for logistic regression, and the
// one-sided paired t-test used to compare methods.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <locale>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "nonconj/blr.hpp"
#include "nonconj/ctm.hpp"
#include "nonconj/document.hpp"
#include "nonconj/error.hpp"
#include "nonconj/parallel.hpp"

namespace nonconj {

inline constexpr std::uint64_t kDefaultSplitSeed = 42;

struct MetricReport {
  std::string metric;
  std::vector<std::string> unit_ids;
  std::vector<double> values;
  double mean = 0.0;
  std::size_t count = 0;

  void add(std::string id, double v) {
    unit_ids.push_back(std::move(id));
    values.push_back(v);
  }

  void finalize() {
    count = values.size();
    double s = 0.0;
    for (double v : values) s += v;
    mean = count ? s / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
  }
};

/// "unit_id,metric,value" rows for every report, then one "mean,<metric>,<value>"
/// summary row per report.
inline void write_metric_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
  std::ostringstream buf;
  buf.imbue(std::locale::classic());
  buf << std::setprecision(17) << "unit_id,metric,value\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      buf << r.unit_ids[i] << ',' << r.metric << ',' << r.values[i] << '\n';
    }
  }
  for (const auto& r : reports) buf << "mean," << r.metric << ',' << r.mean << '\n';
  os << buf.str();
}

/// Partitions the document's tokens into two halves by a seeded shuffle; the
/// first half receives the extra token when the count is odd. Returns nothing
/// for documents with fewer than two tokens.
inline std::optional<std::pair<Document, Document>> split_document(const Document& doc, std::uint64_t seed) {
  std::vector<int> tokens = doc.tokens();
  if (tokens.size() < 2) return std::nullopt;
  std::mt19937_64 rng(seed);
  std::shuffle(tokens.begin(), tokens.end(), rng);
  const auto half = static_cast<std::ptrdiff_t>((tokens.size() + 1) / 2);
  std::vector<int> first(tokens.begin(), tokens.begin() + half);
  std::vector<int> second(tokens.begin() + half, tokens.end());
  return std::make_pair(Document::from_tokens(first), Document::from_tokens(second));
}

/// Seed used for document d of a corpus under a run-level seed.
inline std::uint64_t document_seed(std::uint64_t seed, std::size_t d) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(d)};
  std::uint64_t out[1];
  std::uint32_t parts[2];
  seq.generate(parts, parts + 2);
  out[0] = (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
  return out[0];
}

struct HeldoutScore {
  double log_lik = 0.0;  // summed over held-out tokens
  long words = 0;
  InferenceTrace trace;

  double per_word() const { return log_lik / static_cast<double>(words); }
};

/// Log probability of held-out tokens under the predictive distribution
/// formed by inference on the observed half.
inline double heldout_log_lik(const CtmParams& params, const GaussianVariational& q, const Document& heldout) {
  const Vector p = ctm_predictive(params, q);
  double ll = 0.0;
  for (const auto& e : heldout.entries()) {
    if (e.term >= p.size()) throw InputError("held-out term index exceeds vocabulary");
    ll += e.count * std::log(p[e.term]);
  }
  return ll;
}

inline std::optional<HeldoutScore> heldout_doc_score(const CtmContext& ctx, const Document& doc,
                                                     const InferenceConfig& cfg, std::uint64_t seed) {
  auto halves = split_document(doc, seed);
  if (!halves || halves->second.empty()) return std::nullopt;
  CtmDocState state = ctm_infer_doc(ctx, halves->first, cfg);
  HeldoutScore s;
  s.log_lik = heldout_log_lik(ctx.params(), state.q_theta, halves->second);
  s.words = halves->second.total();
  s.trace = std::move(state.trace);
  return s;
}

/// Per-word held-out log likelihood of one document, or nothing when the
/// document cannot be split.
inline std::optional<double> heldout_doc_loglik(const CtmParams& params, const Document& doc,
                                                const InferenceConfig& cfg, std::uint64_t seed = kDefaultSplitSeed) {
  const CtmContext ctx(params);
  auto s = heldout_doc_score(ctx, doc, cfg, seed);
  if (!s) return std::nullopt;
  return s->per_word();
}

struct CorpusHeldout {
  MetricReport per_doc;  // per-word value for each evaluated document
  double total_log_lik = 0.0;
  long total_words = 0;
  std::size_t skipped = 0;
  /// Document-summed objective per outer iteration; finished documents keep
  /// their final value.
  InferenceTrace combined_trace;

  double per_word() const { return total_log_lik / static_cast<double>(total_words); }
};

/// Combines per-problem traces into one row per iteration index.
inline InferenceTrace combine_traces(const std::vector<const InferenceTrace*>& traces) {
  std::size_t longest = 0;
  for (const auto* t : traces) longest = std::max(longest, t->size());
  InferenceTrace out;
  for (std::size_t i = 0; i < longest; ++i) {
    TraceRecord rec;
    rec.iter = static_cast<int>(i + 1);
    for (const auto* t : traces) {
      if (t->empty()) continue;
      const TraceRecord& r = t->records[std::min(i, t->size() - 1)];
      rec.objective += r.objective;
      if (i < t->size()) {
        rec.mean_change = std::max(rec.mean_change, r.mean_change);
        rec.seconds += r.seconds;
      }
    }
    out.records.push_back(rec);
  }
  return out;
}

inline CorpusHeldout heldout_corpus(const CtmParams& params, const std::vector<Document>& docs,
                                    const InferenceConfig& cfg, std::uint64_t seed = kDefaultSplitSeed,
                                    int threads = 1) {
  const CtmContext ctx(params);
  std::vector<std::optional<HeldoutScore>> scores(docs.size());
  parallel_for(docs.size(), threads,
               [&](std::size_t d) { scores[d] = heldout_doc_score(ctx, docs[d], cfg, document_seed(seed, d)); });
  CorpusHeldout out;
  out.per_doc.metric = "heldout_loglik_per_word";
  std::vector<const InferenceTrace*> traces;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (!scores[d]) {
      ++out.skipped;
      continue;
    }
    out.per_doc.add(std::to_string(d), scores[d]->per_word());
    out.total_log_lik += scores[d]->log_lik;
    out.total_words += scores[d]->words;
    traces.push_back(&scores[d]->trace);
  }
  out.per_doc.finalize();
  out.combined_trace = combine_traces(traces);
  return out;
}

/// Fraction of matching labels.
inline double accuracy(const std::vector<bool>& predictions, const std::vector<bool>& truth) {
  if (predictions.size() != truth.size()) throw InputError("accuracy: length mismatch");
  if (truth.empty()) throw InputError("accuracy: no instances");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Accuracy of the sigma(mu^T t) >= 0.5 rule on one problem.
inline double blr_accuracy(const GaussianVariational& q, const LabeledData& test) {
  std::vector<bool> pred;
  std::vector<bool> truth;
  for (const auto& inst : test) {
    pred.push_back(blr_predict_label(q, inst.covariates));
    truth.push_back(inst.positive);
  }
  return accuracy(pred, truth);
}

/// Log predictive likelihood of every test instance across problems; the
/// mean is over all instances.
inline MetricReport avg_log_pred(const std::vector<GaussianVariational>& posteriors,
                                 const std::vector<LabeledData>& tests) {
  if (posteriors.size() != tests.size()) throw InputError("avg_log_pred: one posterior per problem required");
  MetricReport r;
  r.metric = "log_pred";
  for (std::size_t m = 0; m < tests.size(); ++m) {
    for (std::size_t n = 0; n < tests[m].size(); ++n) {
      r.add(std::to_string(m) + ":" + std::to_string(n), blr_predict_loglik(posteriors[m], tests[m][n]));
    }
  }
  r.finalize();
  return r;
}

/// Accuracy pooled over all instances of all problems.
inline double pooled_accuracy(const std::vector<GaussianVariational>& posteriors,
                              const std::vector<LabeledData>& tests) {
  std::vector<bool> pred;
  std::vector<bool> truth;
  for (std::size_t m = 0; m < tests.size(); ++m) {
    for (const auto& inst : tests[m]) {
      pred.push_back(blr_predict_label(posteriors[m], inst.covariates));
      truth.push_back(inst.positive);
    }
  }
  return accuracy(pred, truth);
}

struct TTestResult {
  double t_statistic = 0.0;
  double critical_value = 0.0;
  bool significant = false;
};

/// One-sided paired t-test of mean(a - b) > 0 at the given level.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b, double level = 0.05) {
  if (a.size() != b.size()) throw InputError("paired_t_test: length mismatch");
  if (a.size() < 2) throw InputError("paired_t_test: need at least two pairs");
  if (!(level > 0.0 && level < 1.0)) throw InputError("paired_t_test: level must lie in (0,1)");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  double sd = std::sqrt(ss / (n - 1.0));
  // Spread at rounding level counts as zero variance.
  if (sd <= 64.0 * std::numeric_limits<double>::epsilon() * scale) sd = 0.0;
  TTestResult r;
  const boost::math::students_t dist(n - 1.0);
  r.critical_value = boost::math::quantile(boost::math::complement(dist, level));
  if (sd == 0.0) {
    r.t_statistic = mean > 0.0 ? std::numeric_limits<double>::infinity()
                               : (mean < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0);
  } else {
    r.t_statistic = mean / (sd / std::sqrt(n));
  }
  r.significant = r.t_statistic > r.critical_value;
  return r;
}

}  // namespace nonconj
