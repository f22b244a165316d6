#pragma once

// Text formats.
//
//   corpus:     "V <int>" then one document per line: "N idx:count ..."
//   labeled:    "P <int>" then one instance per line: "label idx:value ..."
//   ctm model:  "K V", K topic rows, the prior mean row, K prior covariance rows
//   posterior:  "p", the mean row, p covariance rows

#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <locale>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "nonconj/blr.hpp"
#include "nonconj/ctm.hpp"
#include "nonconj/document.hpp"
#include "nonconj/error.hpp"
#include "nonconj/model.hpp"

namespace nonconj {

namespace io_detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

inline std::string field_msg(std::size_t field, const std::string& what, std::string_view tok) {
  return "field " + std::to_string(field) + ": " + what + " '" + std::string(tok) + "'";
}

template <class T>
T number_at(std::size_t line, std::size_t field, std::string_view tok, const char* what) {
  T v{};
  if (!parse_number(tok, v)) throw ParseError(line, field_msg(field, std::string("expected ") + what, tok));
  return v;
}

/// Splits "a:b" at the colon.
inline std::pair<std::string_view, std::string_view> pair_at(std::size_t line, std::size_t field,
                                                             std::string_view tok) {
  const auto colon = tok.find(':');
  if (colon == std::string_view::npos) throw ParseError(line, field_msg(field, "expected idx:value", tok));
  return {tok.substr(0, colon), tok.substr(colon + 1)};
}

inline bool blank(std::string_view line) { return split_ws(line).empty(); }

/// Reads the "<tag> <int>" header from the first nonblank line.
inline int read_header(std::istream& in, std::size_t& lineno, char tag) {
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto toks = split_ws(line);
    if (toks.size() != 2 || toks[0] != std::string_view(&tag, 1)) {
      throw ParseError(lineno, std::string("expected header '") + tag + " <int>'");
    }
    const int n = number_at<int>(lineno, 2, toks[1], "integer");
    if (n < 1) throw ParseError(lineno, std::string("header ") + tag + " must be positive");
    return n;
  }
  throw ParseError(lineno == 0 ? 1 : lineno, std::string("missing header '") + tag + " <int>'");
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

inline void write_row(std::ostream& os, const auto& row) {
  for (Index j = 0; j < row.size(); ++j) {
    if (j) os << ' ';
    os << row[j];
  }
  os << '\n';
}

inline Vector read_row(std::istream& in, std::size_t& lineno, Index n, const char* what) {
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto toks = split_ws(line);
    if (static_cast<Index>(toks.size()) != n) {
      throw ParseError(lineno, std::string(what) + ": expected " + std::to_string(n) + " values, got " +
                                   std::to_string(toks.size()));
    }
    Vector v(n);
    for (Index j = 0; j < n; ++j) {
      v[j] = number_at<double>(lineno, static_cast<std::size_t>(j + 1), toks[static_cast<std::size_t>(j)], "number");
    }
    return v;
  }
  throw ParseError(lineno + 1, std::string(what) + ": unexpected end of file");
}

inline void expect_end(std::istream& in, std::size_t& lineno) {
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!blank(line)) throw ParseError(lineno, "unexpected trailing content");
  }
}

}  // namespace io_detail

struct ParsedCorpus {
  Corpus corpus;
  /// 0-based indices of documents read from "0" lines.
  std::vector<std::size_t> empty_docs;
};

inline ParsedCorpus parse_corpus(std::istream& in) {
  using namespace io_detail;
  std::size_t lineno = 0;
  ParsedCorpus out;
  out.corpus.vocab_size = read_header(in, lineno, 'V');
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    const int n = number_at<int>(lineno, 1, toks[0], "unique-term count");
    if (n < 0 || static_cast<std::size_t>(n) != toks.size() - 1) {
      throw ParseError(lineno, "unique-term count " + std::string(toks[0]) + " does not match " +
                                   std::to_string(toks.size() - 1) + " entries");
    }
    std::vector<Document::Entry> entries;
    entries.reserve(static_cast<std::size_t>(n));
    for (std::size_t f = 1; f < toks.size(); ++f) {
      const auto [a, b] = pair_at(lineno, f + 1, toks[f]);
      const int idx = number_at<int>(lineno, f + 1, a, "term index");
      const int count = number_at<int>(lineno, f + 1, b, "count");
      if (idx < 0) throw ParseError(lineno, field_msg(f + 1, "negative term index", toks[f]));
      if (count <= 0) throw ParseError(lineno, field_msg(f + 1, "count must be positive", toks[f]));
      if (idx >= out.corpus.vocab_size) {
        throw InputError("line " + std::to_string(lineno) + ": term index " + std::to_string(idx) +
                         " >= V = " + std::to_string(out.corpus.vocab_size));
      }
      for (const auto& e : entries) {
        if (e.term == idx) throw ParseError(lineno, field_msg(f + 1, "duplicate term index", toks[f]));
      }
      entries.push_back({idx, count});
    }
    if (entries.empty()) out.empty_docs.push_back(out.corpus.docs.size());
    out.corpus.docs.emplace_back(std::move(entries));
  }
  return out;
}

inline ParsedCorpus read_corpus(const std::string& path) {
  auto in = io_detail::open_input(path);
  return parse_corpus(in);
}

struct LabeledFile {
  Index dim = 0;
  LabeledData data;
};

inline LabeledFile parse_labeled(std::istream& in) {
  using namespace io_detail;
  std::size_t lineno = 0;
  LabeledFile out;
  out.dim = read_header(in, lineno, 'P');
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    LabeledInstance inst;
    if (toks[0] == "1") {
      inst.positive = true;
    } else if (toks[0] == "0") {
      inst.positive = false;
    } else {
      throw ParseError(lineno, field_msg(1, "label must be 0 or 1", toks[0]));
    }
    inst.covariates = Vector::Zero(out.dim);
    std::vector<bool> seen(static_cast<std::size_t>(out.dim), false);
    for (std::size_t f = 1; f < toks.size(); ++f) {
      const auto [a, b] = pair_at(lineno, f + 1, toks[f]);
      const int idx = number_at<int>(lineno, f + 1, a, "covariate index");
      const double v = number_at<double>(lineno, f + 1, b, "number");
      if (idx < 0) throw ParseError(lineno, field_msg(f + 1, "negative covariate index", toks[f]));
      if (idx >= out.dim) {
        throw InputError("line " + std::to_string(lineno) + ": covariate index " + std::to_string(idx) +
                         " >= P = " + std::to_string(out.dim));
      }
      if (!std::isfinite(v)) throw ParseError(lineno, field_msg(f + 1, "non-finite value", toks[f]));
      if (seen[static_cast<std::size_t>(idx)]) {
        throw ParseError(lineno, field_msg(f + 1, "duplicate covariate index", toks[f]));
      }
      seen[static_cast<std::size_t>(idx)] = true;
      inst.covariates[idx] = v;
    }
    out.data.push_back(std::move(inst));
  }
  return out;
}

inline LabeledFile read_labeled(const std::string& path) {
  auto in = io_detail::open_input(path);
  return parse_labeled(in);
}

inline void write_ctm_params(std::ostream& os, const CtmParams& params) {
  std::ostringstream buf;
  buf.imbue(std::locale::classic());
  buf << std::setprecision(17);
  buf << params.num_topics() << ' ' << params.vocab_size() << '\n';
  for (Index k = 0; k < params.topics.rows(); ++k) io_detail::write_row(buf, params.topics.row(k));
  io_detail::write_row(buf, params.prior_mean);
  for (Index k = 0; k < params.prior_cov.rows(); ++k) io_detail::write_row(buf, params.prior_cov.row(k));
  os << buf.str();
}

inline CtmParams parse_ctm_params(std::istream& in) {
  using namespace io_detail;
  std::size_t lineno = 0;
  std::string line;
  int k = 0;
  int v = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto toks = split_ws(line);
    if (toks.size() != 2) throw ParseError(lineno, "expected header 'K V'");
    k = number_at<int>(lineno, 1, toks[0], "integer");
    v = number_at<int>(lineno, 2, toks[1], "integer");
    if (k < 1 || v < 1) throw ParseError(lineno, "K and V must be positive");
    break;
  }
  if (k == 0) throw ParseError(1, "missing header 'K V'");
  CtmParams p;
  p.topics.resize(k, v);
  for (int r = 0; r < k; ++r) p.topics.row(r) = read_row(in, lineno, v, "topic row").transpose();
  p.prior_mean = read_row(in, lineno, k, "prior mean");
  p.prior_cov.resize(k, k);
  for (int r = 0; r < k; ++r) p.prior_cov.row(r) = read_row(in, lineno, k, "prior covariance row").transpose();
  expect_end(in, lineno);
  try {
    p.validate();
  } catch (const NotPositiveDefinite&) {
    throw InputError("model file: prior covariance is not positive definite");
  }
  return p;
}

inline void save_ctm_params(const std::string& path, const CtmParams& params) {
  auto out = io_detail::open_output(path);
  write_ctm_params(out, params);
}

inline CtmParams load_ctm_params(const std::string& path) {
  auto in = io_detail::open_input(path);
  return parse_ctm_params(in);
}

inline void write_posterior(std::ostream& os, const GaussianVariational& q) {
  std::ostringstream buf;
  buf.imbue(std::locale::classic());
  buf << std::setprecision(17);
  buf << q.dim() << '\n';
  io_detail::write_row(buf, q.mu);
  for (Index r = 0; r < q.sigma.rows(); ++r) io_detail::write_row(buf, q.sigma.row(r));
  os << buf.str();
}

inline GaussianVariational parse_posterior(std::istream& in) {
  using namespace io_detail;
  std::size_t lineno = 0;
  std::string line;
  int p = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto toks = split_ws(line);
    if (toks.size() != 1) throw ParseError(lineno, "expected header 'p'");
    p = number_at<int>(lineno, 1, toks[0], "integer");
    if (p < 1) throw ParseError(lineno, "dimension must be positive");
    break;
  }
  if (p == 0) throw ParseError(1, "missing header 'p'");
  GaussianVariational q;
  q.mu = read_row(in, lineno, p, "mean");
  q.sigma.resize(p, p);
  for (int r = 0; r < p; ++r) q.sigma.row(r) = read_row(in, lineno, p, "covariance row").transpose();
  expect_end(in, lineno);
  try {
    q.validate();
  } catch (const NotPositiveDefinite&) {
    throw InputError("posterior file: covariance is not positive definite");
  }
  return q;
}

inline void save_posterior(const std::string& path, const GaussianVariational& q) {
  auto out = io_detail::open_output(path);
  write_posterior(out, q);
}

inline GaussianVariational load_posterior(const std::string& path) {
  auto in = io_detail::open_input(path);
  return parse_posterior(in);
}

}  // namespace nonconj
