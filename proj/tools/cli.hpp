#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nonconj/nonconj.hpp"

namespace nonconj::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kNumericalError = 2 };

struct RunConfig {
  std::string method = "laplace";
  double conv_tol = 1e-4;
  int max_outer_iters = 100;
  double grad_tol = 1e-6;
  int max_opt_iters = 1000;
  int threads = 1;
  std::uint64_t seed = 0;
  bool record_time = false;

  InferenceConfig inference() const {
    InferenceConfig c;
    c.method = parse_method(method);
    c.conv_tol = conv_tol;
    c.max_outer_iters = max_outer_iters;
    c.opt.grad_tol = grad_tol;
    c.opt.max_iters = max_opt_iters;
    c.validate();
    if (!(grad_tol > 0.0)) throw ConfigError("--grad-tol must be positive");
    if (max_opt_iters < 1) throw ConfigError("--max-opt-iters must be >= 1");
    if (threads < 1) throw ConfigError("--threads must be >= 1");
    return c;
  }

  TraceTiming timing() const { return record_time ? TraceTiming::wall_clock : TraceTiming::omit; }
};

inline void add_common(CLI::App* cmd, RunConfig& rc, bool with_method = true) {
  if (with_method) cmd->add_option("--method", rc.method, "laplace or delta")->capture_default_str();
  cmd->add_option("--conv-tol", rc.conv_tol, "outer convergence tolerance on ||delta mu||")->capture_default_str();
  cmd->add_option("--max-iters", rc.max_outer_iters, "maximum coordinate-ascent iterations")->capture_default_str();
  cmd->add_option("--grad-tol", rc.grad_tol, "optimizer gradient tolerance")->capture_default_str();
  cmd->add_option("--max-opt-iters", rc.max_opt_iters, "optimizer iteration cap")->capture_default_str();
  cmd->add_option("--threads", rc.threads, "worker threads for per-document or per-task work")
      ->capture_default_str();
  cmd->add_flag("--record-time", rc.record_time, "write measured seconds into the trace CSV");
}

inline void save_trace(const std::string& path, const InferenceTrace& trace, TraceTiming timing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_trace_csv(out, trace, timing);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

/// Runs the command line; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Nonconjugate variational inference: Laplace and delta-method updates"};
  app.require_subcommand(1);
  RunConfig rc;

  struct {
    std::string corpus, out, model, data, posterior, tasks;
    int k = 10;
    int em_iters = 20;
    std::uint64_t split_seed = kDefaultSplitSeed;
    double prior_var = 1.0;
    double nu_offset = 100.0, phi0 = 0.01, phi1 = 0.01;
  } a;

  auto* fit_ctm = app.add_subcommand("fit-ctm", "fit a correlated topic model by variational EM");
  fit_ctm->add_option("--corpus", a.corpus, "corpus file")->required();
  fit_ctm->add_option("--k", a.k, "number of topics")->required();
  fit_ctm->add_option("--out", a.out, "model output file")->required();
  fit_ctm->add_option("--em-iters", a.em_iters, "EM iterations")->capture_default_str();
  fit_ctm->add_option("--seed", rc.seed, "topic initialization seed")->capture_default_str();
  add_common(fit_ctm, rc);

  auto* eval_ctm = app.add_subcommand("eval-ctm", "held-out per-word log likelihood of a CTM");
  eval_ctm->add_option("--model", a.model, "model file")->required();
  eval_ctm->add_option("--corpus", a.corpus, "held-out corpus file")->required();
  eval_ctm->add_option("--out", a.out, "metrics CSV")->required();
  eval_ctm->add_option("--seed", a.split_seed, "document split seed")->capture_default_str();
  add_common(eval_ctm, rc);

  auto* fit_blr = app.add_subcommand("fit-blr", "posterior of Bayesian logistic regression");
  fit_blr->add_option("--data", a.data, "labeled data file")->required();
  fit_blr->add_option("--out", a.out, "posterior output file")->required();
  fit_blr->add_option("--prior-var", a.prior_var, "prior variance, Sigma0 = v I")->capture_default_str();
  add_common(fit_blr, rc);

  auto* fit_hblr = app.add_subcommand("fit-hblr", "hierarchical logistic regression over a task directory");
  fit_hblr->add_option("--tasks", a.tasks, "directory with one labeled file per task")->required();
  fit_hblr->add_option("--nu-offset", a.nu_offset, "nu = p + offset")->capture_default_str();
  fit_hblr->add_option("--phi0", a.phi0, "Phi0 = phi0 I")->capture_default_str();
  fit_hblr->add_option("--phi1", a.phi1, "Phi1 = phi1 I")->capture_default_str();
  fit_hblr->add_option("--em-iters", a.em_iters, "maximum EM rounds")->capture_default_str();
  fit_hblr->add_option("--out", a.out, "output directory")->required();
  add_common(fit_hblr, rc);

  auto* eval_blr = app.add_subcommand("eval-blr", "accuracy and log predictive likelihood");
  eval_blr->add_option("--posterior", a.posterior, "posterior file")->required();
  eval_blr->add_option("--data", a.data, "labeled test file")->required();
  eval_blr->add_option("--out", a.out, "metrics CSV")->required();

  auto* unigram = app.add_subcommand("infer-unigram", "posterior of the hierarchical unigram model");
  unigram->add_option("--corpus", a.corpus, "corpus file")->required();
  unigram->add_option("--out", a.out, "per-term posterior CSV")->required();
  add_common(unigram, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kInputError;
  }

  try {
    if (fit_ctm->parsed()) {
      const InferenceConfig cfg = rc.inference();
      const ParsedCorpus pc = read_corpus(a.corpus);
      CtmEmOptions opts;
      opts.num_topics = a.k;
      opts.em_iters = a.em_iters;
      opts.seed = rc.seed;
      opts.threads = rc.threads;
      const CtmFit fit = ctm_em_fit(pc.corpus, cfg, opts);
      save_ctm_params(a.out, fit.params);
      save_trace(a.out + ".trace.csv", fit.as_trace(), rc.timing());
      std::ostringstream msg;
      msg.imbue(std::locale::classic());
      msg << std::setprecision(10) << "fit-ctm: K=" << a.k << " docs=" << pc.corpus.docs.size()
          << " empty_docs=" << pc.empty_docs.size() << " final_bound=" << fit.history.back().bound << '\n';
      out << msg.str();
    } else if (eval_ctm->parsed()) {
      const InferenceConfig cfg = rc.inference();
      const CtmParams params = load_ctm_params(a.model);
      const ParsedCorpus pc = read_corpus(a.corpus);
      if (pc.corpus.vocab_size != params.vocab_size()) {
        throw InputError("corpus V = " + std::to_string(pc.corpus.vocab_size) + " but model V = " +
                         std::to_string(params.vocab_size()));
      }
      CorpusHeldout h = heldout_corpus(params, pc.corpus.docs, cfg, a.split_seed, rc.threads);
      if (h.total_words == 0) throw InputError("no document has at least two tokens to split");
      MetricReport corpus_level;
      corpus_level.metric = "heldout_loglik_per_word_corpus";
      corpus_level.add("all", h.per_word());
      corpus_level.finalize();
      MetricReport seed;
      seed.metric = "split_seed";
      seed.add("all", static_cast<double>(a.split_seed));
      seed.finalize();
      {
        auto f = open_out(a.out);
        write_metric_csv(f, {h.per_doc, corpus_level, seed});
      }
      save_trace(a.out + ".trace.csv", h.combined_trace, rc.timing());
      std::ostringstream msg;
      msg.imbue(std::locale::classic());
      msg << std::setprecision(10) << "eval-ctm: per_word=" << h.per_word() << " docs=" << h.per_doc.count
          << " skipped=" << h.skipped << " split_seed=" << a.split_seed << '\n';
      out << msg.str();
    } else if (fit_blr->parsed()) {
      const InferenceConfig cfg = rc.inference();
      if (!(a.prior_var > 0.0)) throw ConfigError("--prior-var must be positive");
      const LabeledFile lf = read_labeled(a.data);
      BlrPrior prior = BlrPrior::standard(lf.dim);
      prior.sigma0 *= a.prior_var;
      const BlrFit fit = blr_fit(lf.data, prior, cfg);
      save_posterior(a.out, fit.q);
      save_trace(a.out + ".trace.csv", fit.trace, rc.timing());
      out << "fit-blr: p=" << lf.dim << " n=" << lf.data.size() << '\n';
    } else if (fit_hblr->parsed()) {
      const InferenceConfig cfg = rc.inference();
      namespace fs = std::filesystem;
      if (!fs::is_directory(a.tasks)) throw InputError("'" + a.tasks + "' is not a directory");
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(a.tasks)) {
        if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw InputError("task directory '" + a.tasks + "' has no files");
      std::vector<LabeledData> tasks;
      Index p = -1;
      for (const auto& f : files) {
        LabeledFile lf;
        try {
          lf = read_labeled(f.string());
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::input) throw InputError(f.filename().string() + ": " + e.what());
          throw;
        }
        if (p >= 0 && lf.dim != p) throw InputError(f.filename().string() + ": dimension differs from other tasks");
        p = lf.dim;
        tasks.push_back(std::move(lf.data));
      }
      const HierPrior hier = HierPrior::scaled(p, a.nu_offset, a.phi0, a.phi1);
      HblrOptions opts;
      opts.em_iters = a.em_iters;
      opts.threads = rc.threads;
      const HyperParams init{Vector::Zero(p), Matrix::Identity(p, p)};
      opts.init = &init;
      const HblrFit fit = hblr_fit_em(tasks, hier, cfg, opts);
      fs::create_directories(a.out);
      for (std::size_t m = 0; m < files.size(); ++m) {
        save_posterior((fs::path(a.out) / (files[m].stem().string() + ".posterior")).string(), fit.tasks[m]);
      }
      save_posterior((fs::path(a.out) / "hyper.txt").string(), GaussianVariational{fit.mu0, fit.sigma0});
      save_trace((fs::path(a.out) / "trace.csv").string(), fit.trace, rc.timing());
      out << "fit-hblr: tasks=" << tasks.size() << " p=" << p << " rounds=" << fit.trace.size()
          << " converged=" << (fit.converged ? "yes" : "no") << '\n';
    } else if (eval_blr->parsed()) {
      const GaussianVariational q = load_posterior(a.posterior);
      const LabeledFile lf = read_labeled(a.data);
      if (lf.dim != q.dim()) throw InputError("posterior dimension does not match data");
      if (lf.data.empty()) throw InputError("'" + a.data + "' has no instances");
      MetricReport acc;
      acc.metric = "accuracy";
      acc.add("all", blr_accuracy(q, lf.data));
      acc.finalize();
      const MetricReport lp = avg_log_pred({q}, {lf.data});
      {
        auto f = open_out(a.out);
        write_metric_csv(f, {lp, acc});
      }
      save_trace(a.out + ".trace.csv", InferenceTrace{}, rc.timing());
      std::ostringstream msg;
      msg.imbue(std::locale::classic());
      msg << std::setprecision(10) << "eval-blr: accuracy=" << acc.mean << " avg_log_pred=" << lp.mean << '\n';
      out << msg.str();
    } else if (unigram->parsed()) {
      const InferenceConfig cfg = rc.inference();
      const ParsedCorpus pc = read_corpus(a.corpus);
      const UnigramResult res = infer_unigram(pc.corpus, cfg);
      {
        std::ostringstream buf;
        buf.imbue(std::locale::classic());
        buf << std::setprecision(17) << "term,mu,var\n";
        for (Index i = 0; i < res.q_theta.dim(); ++i) {
          buf << i << ',' << res.q_theta.mu[i] << ',' << res.q_theta.sigma(i, i) << '\n';
        }
        auto f = open_out(a.out);
        f << buf.str();
      }
      save_trace(a.out + ".trace.csv", res.trace, rc.timing());
      out << "infer-unigram: iterations=" << res.trace.size() << " converged=" << (res.converged ? "yes" : "no")
          << '\n';
    }
  } catch (const InferenceFailure& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return e.kind() == ErrorKind::input ? kInputError : kNumericalError;
  } catch (const Error& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return e.kind() == ErrorKind::input ? kInputError : kNumericalError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kNumericalError;
  }
  return kOk;
}

}  // namespace nonconj::cli
