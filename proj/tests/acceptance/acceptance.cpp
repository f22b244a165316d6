// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// nonzero only when a criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fd_check.hpp"
#include "nonconj/nonconj.hpp"
#include "synth.hpp"
#include "test_models.hpp"

using namespace nonconj;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string trace_csv(const InferenceTrace& t) {
  std::ostringstream os;
  write_trace_csv(os, t);
  return os.str();
}

InferenceConfig config(Method m) {
  InferenceConfig c;
  c.method = m;
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Traces gathered by the first pass of each property run, compared byte for
// byte against a second pass.
std::map<std::string, std::string> g_traces;

// ---------------------------------------------------------------------------

Outcome conjugate_exactness() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (Method m : {Method::laplace, Method::delta}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Index n = 1 + trial % 6;
      const Matrix sigma0 = testkit::random_spd(rng, n, 0.3);
      const Vector mu0 = testkit::random_vector(rng, n, 2.0);
      const Matrix prec = SpdFactor(sigma0).inverse();
      const testkit::QuadraticModel model{prec};
      InferenceConfig cfg = config(m);
      cfg.opt.grad_tol = 1e-10;
      const Vector stats = prec * mu0;
      const GaussianVariational q = m == Method::laplace
                                        ? laplace_step(model, stats, Vector::Zero(n), cfg)
                                        : delta_step(model, stats, GaussianVariational::standard(n), cfg);
      worst = std::max({worst, (q.mu - mu0).cwiseAbs().maxCoeff(), (q.sigma - sigma0).cwiseAbs().maxCoeff()});
    }
  }
  return {worst <= 1e-8 ? Status::pass : Status::fail, "max abs error " + fmt(worst) + " (tol 1e-8)"};
}

Outcome derivative_correctness() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::exponential_distribution<double> ex(0.5);
  testkit::DerivativeErrors worst[3];
  auto track = [&](int i, const testkit::DerivativeErrors& e) {
    worst[i].gradient = std::max(worst[i].gradient, e.gradient);
    worst[i].hessian = std::max(worst[i].hessian, e.hessian);
    worst[i].trace_grad = std::max(worst[i].trace_grad, e.trace_grad);
  };
  for (int trial = 0; trial < 100; ++trial) {
    // Unigram: expected log-proportion statistics are negative.
    const int v = 2 + trial % 7;
    const int d = 1 + trial % 5;
    const UnigramModel uni(v, std::vector<Document>(static_cast<std::size_t>(d)));
    Vector theta(v), stats(v);
    for (int i = 0; i < v; ++i) {
      theta[i] = u(rng);
      stats[i] = -d * ex(rng);
    }
    track(0, testkit::derivative_errors(uni, theta, stats, testkit::random_spd(rng, v, 0.2)));

    // CTM, alternating full and diagonal covariances.
    const int k = 2 + trial % 6;
    CtmParams p;
    p.topics = Matrix::Constant(k, 2, 0.5);
    p.prior_mean = testkit::random_vector(rng, k, 0.5);
    p.prior_cov = testkit::random_spd(rng, k, 0.3);
    const CtmContext ctx(p);
    const Document empty;
    const CtmDocModel ctm(ctx, empty);
    Vector t2(k), s2(k);
    for (int i = 0; i < k; ++i) {
      t2[i] = u(rng);
      s2[i] = 5.0 * ex(rng);
    }
    Matrix sig = testkit::random_spd(rng, k, 0.2);
    if (trial % 2) sig = Matrix(sig.diagonal().asDiagonal());
    track(1, testkit::derivative_errors(ctm, t2, s2, sig));

    // BLR.
    const Index pdim = 1 + trial % 5;
    const LabeledData data = testkit::make_blr_data(testkit::random_vector(rng, pdim), 20, rng);
    const BlrModel blr(data, {testkit::random_vector(rng, pdim, 0.5), testkit::random_spd(rng, pdim, 0.5)});
    track(2, testkit::derivative_errors(blr, testkit::random_vector(rng, pdim, 1.5), blr.labels(),
                                        testkit::random_spd(rng, pdim, 0.1)));
  }
  bool ok = true;
  std::string detail;
  const char* names[3] = {"unigram", "ctm", "blr"};
  for (int i = 0; i < 3; ++i) {
    ok = ok && worst[i].gradient <= 1e-5 && worst[i].hessian <= 1e-4 && worst[i].trace_grad <= 1e-3;
    detail += std::string(i ? "; " : "") + names[i] + " grad " + fmt(worst[i].gradient, 2) + " hess " +
              fmt(worst[i].hessian, 2) + " trace " + fmt(worst[i].trace_grad, 2);
  }
  return {ok ? Status::pass : Status::fail, detail + " (100 points each)"};
}

double blr_value(const Vector& theta, const LabeledData& data, const BlrPrior& prior) {
  const BlrModel m(data, prior);
  Vector g;
  return m.f_value_grad(theta, m.labels(), g);
}

/// Grid maximizer at step 1e-4: a full grid in 1-D, coarse-to-fine in 2-D
/// each stage searching +-4 steps of the previous one.
Vector grid_map(const LabeledData& data, const BlrPrior& prior) {
  const Index p = prior.mu0.size();
  Vector best = Vector::Zero(p);
  double best_value = -std::numeric_limits<double>::infinity();
  if (p == 1) {
    for (int i = 0; i <= 100000; ++i) {
      const Vector t = Vector::Constant(1, -5.0 + 1e-4 * i);
      const double v = blr_value(t, data, prior);
      if (v > best_value) {
        best_value = v;
        best = t;
      }
    }
    return best;
  }
  double half = 5.0;
  for (double step : {0.05, 1e-3, 1e-4}) {
    const Vector centre = best;
    const int n = static_cast<int>(std::lround(half / step));
    for (int i = -n; i <= n; ++i) {
      for (int j = -n; j <= n; ++j) {
        Vector t(2);
        t << centre[0] + i * step, centre[1] + j * step;
        const double v = blr_value(t, data, prior);
        if (v > best_value) {
          best_value = v;
          best = t;
        }
      }
    }
    half = 4.0 * step;
  }
  return best;
}

Outcome small_instance_oracle() {
  auto inst = [](std::initializer_list<double> t, bool z) {
    LabeledInstance i;
    i.covariates = Vector(static_cast<Index>(t.size()));
    Index k = 0;
    for (double v : t) i.covariates[k++] = v;
    i.positive = z;
    return i;
  };
  const std::vector<LabeledData> cases{
      {inst({1.0}, true)},
      {inst({1.0}, true), inst({-0.5}, true), inst({2.0}, false), inst({0.3}, true)},
      {inst({1.0, 0.5}, true), inst({-0.3, 1.0}, false), inst({0.8, -1.2}, true), inst({-1.0, -0.2}, false),
       inst({0.2, 0.9}, true)},
      {inst({2.0, -1.0}, false), inst({0.4, 0.4}, true), inst({-1.5, 0.7}, true)},
  };
  double worst_mean = 0.0, worst_var = 0.0, worst_var_grid = 0.0;
  InferenceConfig cfg = config(Method::laplace);
  cfg.opt.grad_tol = 1e-10;
  for (const auto& data : cases) {
    const Index p = data.front().covariates.size();
    const BlrPrior prior = BlrPrior::standard(p);
    const Vector grid = grid_map(data, prior);
    const BlrFit fit = blr_fit(data, prior, cfg);
    worst_mean = std::max(worst_mean, (fit.q.mu - grid).cwiseAbs().maxCoeff());
    const BlrModel m(data, prior);
    const Matrix expect = SpdFactor(Matrix(-m.f_hessian(fit.q.mu, m.labels()))).inverse();
    worst_var = std::max(worst_var, (fit.q.sigma - expect).cwiseAbs().maxCoeff());
    // Informational: the grid point itself sits up to half a step off the mode.
    const Matrix at_grid = SpdFactor(Matrix(-m.f_hessian(grid, m.labels()))).inverse();
    worst_var_grid = std::max(worst_var_grid, (fit.q.sigma - at_grid).cwiseAbs().maxCoeff());
  }
  const bool ok = worst_mean <= 2e-4 && worst_var <= 1e-6;
  return {ok ? Status::pass : Status::fail,
          "max |mean - grid MAP| " + fmt(worst_mean, 3) + " (tol 2e-4); max |Sigma - (-f'')^-1| " +
              fmt(worst_var, 3) + " at the mode (tol 1e-6; " + fmt(worst_var_grid, 3) +
              " at the grid point); 2 one-dim and 2 two-dim datasets"};
}

// ---------------------------------------------------------------------------
// Dataset criteria. Layout under --data-dir:
//   <name>/train/<problem>.txt and <name>/test/<problem>.txt   (yeast, scene)
//   school/<split>/train/<task>.txt and school/<split>/test/<task>.txt

struct Problems {
  std::vector<std::string> names;
  std::vector<LabeledData> train;
  std::vector<LabeledData> test;
  Index dim = 0;
};

std::optional<Problems> load_problems(const fs::path& dir) {
  if (!fs::is_directory(dir / "train") || !fs::is_directory(dir / "test")) return std::nullopt;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir / "train")) {
    if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path().filename());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) return std::nullopt;
  Problems out;
  for (const auto& f : files) {
    const LabeledFile tr = read_labeled((dir / "train" / f).string());
    const LabeledFile te = read_labeled((dir / "test" / f).string());
    if (tr.dim != te.dim || (out.dim && tr.dim != out.dim)) throw InputError(f.string() + ": dimension mismatch");
    out.dim = tr.dim;
    out.names.push_back(f.stem().string());
    out.train.push_back(tr.data);
    out.test.push_back(te.data);
  }
  return out;
}

struct Scores {
  double accuracy = 0.0;
  double log_pred = 0.0;
};

Scores separate_scores(const Problems& p, Method m) {
  std::vector<GaussianVariational> q;
  for (const auto& tr : p.train) q.push_back(blr_fit(tr, BlrPrior::standard(p.dim), config(m)).q);
  return {pooled_accuracy(q, p.test), avg_log_pred(q, p.test).mean};
}

Outcome table1(const std::optional<std::string>& data_dir, const Outcome& c3, const Outcome& c6) {
  const std::string substitute = std::string("substitutes: criterion 3 ") + (c3.status == Status::pass ? "PASS" : "FAIL") +
                                 ", criterion 6 " + (c6.status == Status::pass ? "PASS" : "FAIL");
  if (!data_dir) return {Status::skip, "Yeast/Scene files not supplied (--data-dir); " + substitute};
  struct Row {
    const char* name;
    Method method;
    double acc, lp;
  };
  const Row rows[] = {{"yeast", Method::laplace, 0.801, -0.449},
                      {"yeast", Method::delta, 0.802, -0.450},
                      {"scene", Method::laplace, 0.894, -0.259},
                      {"scene", Method::delta, 0.895, -0.265}};
  std::map<std::string, Problems> sets;
  for (const char* name : {"yeast", "scene"}) {
    auto p = load_problems(fs::path(*data_dir) / name);
    if (!p) return {Status::skip, std::string(name) + " not found under " + *data_dir + "; " + substitute};
    sets.emplace(name, std::move(*p));
  }
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    const Scores s = separate_scores(sets.at(r.name), r.method);
    ok = ok && std::abs(s.accuracy - r.acc) <= 0.010 && std::abs(s.log_pred - r.lp) <= 0.03;
    detail += std::string(detail.empty() ? "" : "; ") + r.name + "/" + to_string(r.method) + " acc " +
              fmt(s.accuracy) + " (" + fmt(r.acc) + ") lp " + fmt(s.log_pred) + " (" + fmt(r.lp) + ")";
  }
  return {ok ? Status::pass : Status::fail, detail};
}

Outcome table2(const std::optional<std::string>& data_dir) {
  if (!data_dir) return {Status::skip, "School files not supplied (--data-dir); no substitute is defined"};
  const fs::path root = fs::path(*data_dir) / "school";
  if (!fs::is_directory(root)) return {Status::skip, "school not found under " + *data_dir};
  std::vector<fs::path> splits;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) splits.push_back(e.path());
  }
  std::sort(splits.begin(), splits.end());
  if (splits.empty()) return {Status::skip, "no split directories under " + root.string()};
  Scores hier, pooled, separate;
  for (const auto& dir : splits) {
    const auto p = load_problems(dir);
    if (!p) return {Status::skip, dir.string() + " lacks train/ and test/"};
    const HblrFit h = hblr_fit_em(p->train, HierPrior::scaled(p->dim, 100.0, 0.01, 0.01), config(Method::laplace));
    hier.accuracy += pooled_accuracy(h.tasks, p->test);
    hier.log_pred += avg_log_pred(h.tasks, p->test).mean;
    LabeledData all;
    for (const auto& t : p->train) all.insert(all.end(), t.begin(), t.end());
    const GaussianVariational shared = blr_fit(all, BlrPrior::standard(p->dim), config(Method::laplace)).q;
    const std::vector<GaussianVariational> qs(p->test.size(), shared);
    pooled.accuracy += pooled_accuracy(qs, p->test);
    pooled.log_pred += avg_log_pred(qs, p->test).mean;
    const Scores s = separate_scores(*p, Method::laplace);
    separate.accuracy += s.accuracy;
    separate.log_pred += s.log_pred;
  }
  const double n = static_cast<double>(splits.size());
  for (Scores* s : {&hier, &pooled, &separate}) {
    s->accuracy /= n;
    s->log_pred /= n;
  }
  const bool ok = std::abs(hier.accuracy - 0.719) <= 0.010 && std::abs(hier.log_pred + 0.549) <= 0.03 &&
                  hier.log_pred > pooled.log_pred && pooled.log_pred > separate.log_pred;
  return {ok ? Status::pass : Status::fail,
          "hierarchical acc " + fmt(hier.accuracy) + " lp " + fmt(hier.log_pred) + "; pooled lp " +
              fmt(pooled.log_pred) + "; separate lp " + fmt(separate.log_pred) + " over " +
              std::to_string(splits.size()) + " splits"};
}

// ---------------------------------------------------------------------------

Outcome monotone_monitor(const std::string& tag) {
  const auto syn = testkit::make_ctm_corpus(5, 50, 20, 100, 606);
  long total = 0, strict = 0;
  double worst_drop = 0.0;
  for (Method m : {Method::laplace, Method::delta}) {
    for (std::size_t d = 0; d < syn.corpus.docs.size(); ++d) {
      const CtmDocState s = ctm_infer_doc(syn.truth, syn.corpus.docs[d], config(m));
      g_traces[tag + "/c6/" + to_string(m) + "/" + std::to_string(d)] = trace_csv(s.trace);
      for (std::size_t i = 1; i < s.trace.size(); ++i) {
        const double diff = s.trace.records[i].objective - s.trace.records[i - 1].objective;
        ++total;
        strict += diff > 0.0 ? 1 : 0;
        worst_drop = std::max(worst_drop, -diff);
      }
    }
  }
  const double frac = total ? static_cast<double>(strict) / static_cast<double>(total) : 0.0;
  const bool ok = total > 0 && worst_drop <= 1e-6 && frac >= 0.95;
  return {ok ? Status::pass : Status::fail,
          "20 docs x 2 methods: largest decrease " + fmt(std::max(worst_drop, 0.0), 3) +
              " (tol 1e-6); strictly increasing on " + std::to_string(strict) + "/" + std::to_string(total) +
              " iterations (" + fmt(100.0 * frac, 4) + "%, need 95%)"};
}

struct EmRun {
  CtmFit fit;
  double heldout = 0.0;
};

struct EmSetup {
  testkit::CtmSynthetic syn;
  Corpus train;
  std::vector<Document> test;
};

EmSetup em_setup() {
  EmSetup s{testkit::make_ctm_corpus(5, 100, 250, 100, 707), {}, {}};
  s.train.vocab_size = 100;
  s.train.docs.assign(s.syn.corpus.docs.begin(), s.syn.corpus.docs.begin() + 200);
  s.test.assign(s.syn.corpus.docs.begin() + 200, s.syn.corpus.docs.end());
  return s;
}

EmRun run_em(const EmSetup& s, Method m) {
  CtmEmOptions opts;
  opts.num_topics = 5;
  opts.em_iters = 20;
  opts.seed = 17;
  EmRun r{ctm_em_fit(s.train, config(m), opts), 0.0};
  r.heldout = heldout_corpus(r.fit.params, s.test, config(Method::laplace)).per_word();
  return r;
}

Outcome em_convergence(const EmSetup& s, const EmRun& laplace, const std::string& tag) {
  const double words = static_cast<double>(laplace.fit.total_words);
  double worst_drop = 0.0;
  for (std::size_t i = 1; i < laplace.fit.history.size(); ++i) {
    worst_drop = std::max(worst_drop, (laplace.fit.history[i - 1].bound - laplace.fit.history[i].bound) / words);
  }
  const double truth = heldout_corpus(s.syn.truth, s.test, config(Method::laplace)).per_word();
  const double rel = std::abs(laplace.heldout - truth) / std::abs(truth);
  g_traces[tag + "/c7/em"] = trace_csv(laplace.fit.as_trace());
  const bool ok = laplace.fit.history.size() == 20 && worst_drop <= 1e-4 && rel <= 0.05;
  return {ok ? Status::pass : Status::fail,
          "D=200 K=5 V=100, 20 EM iterations: largest per-word bound decrease " + fmt(std::max(worst_drop, 0.0), 3) +
              " (tol 1e-4); held-out per word fitted " + fmt(laplace.heldout, 6) + " vs truth " + fmt(truth, 6) +
              " (" + fmt(100.0 * rel, 3) + "%, tol 5%)"};
}

Outcome speed_ordering(const EmRun& laplace, const EmRun& delta) {
  const auto& l = laplace.fit.history;
  const auto& d = delta.fit.history;
  const double start = std::min(l.front().per_word_bound, d.front().per_word_bound);
  const double end = std::min(l.back().per_word_bound, d.back().per_word_bound);
  // 95% of the way from the first recorded bound to the weaker final bound.
  const double threshold = start + 0.95 * (end - start);
  auto time_to = [&](const std::vector<EmRecord>& h) {
    for (const auto& r : h) {
      if (r.per_word_bound >= threshold) return r.seconds;
    }
    return std::numeric_limits<double>::infinity();
  };
  const double tl = time_to(l), td = time_to(d);
  return {tl < td ? Status::pass : Status::fail,
          "time to per-word bound " + fmt(threshold, 6) + ": laplace " + fmt(tl, 3) + " s, delta " + fmt(td, 3) +
              " s (final bounds " + fmt(l.back().per_word_bound, 6) + " / " + fmt(d.back().per_word_bound, 6) + ")"};
}

Outcome determinism(const std::map<std::string, std::string>& first, const std::map<std::string, std::string>& second) {
  std::size_t mismatched = 0;
  for (const auto& [key, text] : first) {
    const auto it = second.find(key);
    if (it == second.end() || it->second != text) ++mismatched;
  }
  const bool ok = mismatched == 0 && first.size() == second.size() && !first.empty();
  return {ok ? Status::pass : Status::fail,
          std::to_string(first.size()) + " trace CSVs from criteria 6, 7 and a hierarchical BLR run regenerated; " +
              std::to_string(mismatched) + " differ (second pass uses 2 threads)"};
}

std::string hblr_trace(int threads) {
  const auto syn = testkit::make_hier_tasks(8, 4, 60, 10, 0.4, 808);
  HblrOptions opts;
  opts.threads = threads;
  return trace_csv(hblr_fit_em(syn.train, HierPrior::scaled(4, 100.0, 0.01, 0.01), config(Method::delta), opts).trace);
}

void report(int id, const char* name, const Outcome& o, double secs, double budget, int& failures) {
  Status st = o.status;
  std::string detail = o.detail;
  if (st == Status::pass && budget > 0.0 && secs > budget) {
    st = Status::fail;
    detail += "; over the " + fmt(budget) + " s budget";
  }
  if (st == Status::fail) ++failures;
  const char* label = st == Status::pass ? "PASS" : (st == Status::fail ? "FAIL" : "SKIP");
  std::cout << label << "  criterion " << id << " (" << name << "): " << detail << " [" << fmt(secs, 3) << " s]"
            << std::endl;
}

template <class F>
auto timed(F&& f, double& secs) {
  const auto t0 = std::chrono::steady_clock::now();
  auto out = f();
  secs = seconds_since(t0);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string data_dir_arg;
  app.add_option("--data-dir", data_dir_arg, "directory holding yeast/, scene/ and school/ in the labeled format");
  CLI11_PARSE(app, argc, argv);
  const std::optional<std::string> data_dir =
      data_dir_arg.empty() ? std::nullopt : std::optional<std::string>(data_dir_arg);

  int failures = 0;
  double t = 0.0;
  try {
    const Outcome c1 = timed(conjugate_exactness, t);
    report(1, "conjugate exactness", c1, t, 1.0, failures);
    const Outcome c2 = timed(derivative_correctness, t);
    report(2, "derivative correctness", c2, t, 30.0, failures);
    const Outcome c3 = timed(small_instance_oracle, t);
    report(3, "small-instance oracle", c3, t, 10.0, failures);

    double t6 = 0.0;
    const Outcome c6 = timed([] { return monotone_monitor("first"); }, t6);
    const Outcome c4 = timed([&] { return table1(data_dir, c3, c6); }, t);
    report(4, "Yeast/Scene benchmark", c4, t, 0.0, failures);
    const Outcome c5 = timed([&] { return table2(data_dir); }, t);
    report(5, "School benchmark", c5, t, 0.0, failures);
    report(6, "monotone monitor", c6, t6, 60.0, failures);

    const auto t0 = std::chrono::steady_clock::now();
    const EmSetup setup = em_setup();
    const EmRun laplace = run_em(setup, Method::laplace);
    const EmRun delta = run_em(setup, Method::delta);
    const Outcome c7 = em_convergence(setup, laplace, "first");
    const double t7 = seconds_since(t0);
    report(7, "EM convergence", c7, t7, 300.0, failures);
    report(8, "speed ordering", speed_ordering(laplace, delta), t7, 0.0, failures);

    g_traces["first/hblr"] = hblr_trace(1);
    const auto first = g_traces;
    g_traces.clear();
    const auto t9 = std::chrono::steady_clock::now();
    monotone_monitor("first");
    CtmEmOptions opts;
    opts.num_topics = 5;
    opts.em_iters = 20;
    opts.seed = 17;
    opts.threads = 2;
    g_traces["first/c7/em"] = trace_csv(ctm_em_fit(setup.train, config(Method::laplace), opts).as_trace());
    g_traces["first/hblr"] = hblr_trace(2);
    report(9, "determinism", determinism(first, g_traces), seconds_since(t9), 0.0, failures);
  } catch (const std::exception& e) {
    std::cout << "FAIL  aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: ok")
            << std::endl;
  return failures ? 1 : 0;
}
