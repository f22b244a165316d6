#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "nonconj/error.hpp"
#include "nonconj/numerics.hpp"

namespace nonconj {

/// Sparse bag of words: distinct term indices in increasing order with
/// positive counts.
class Document {
 public:
  struct Entry {
    int term = 0;
    int count = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  Document() = default;

  /// Builds from (term, count) pairs; merges repeated terms and drops zeros.
  explicit Document(std::vector<Entry> entries) : entries_(std::move(entries)) {
    for (const auto& e : entries_) {
      if (e.term < 0) throw InputError("document term index must be nonnegative");
      if (e.count < 0) throw InputError("document counts must be nonnegative");
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& a, const Entry& b) { return a.term < b.term; });
    std::vector<Entry> merged;
    for (const auto& e : entries_) {
      if (e.count == 0) continue;
      if (!merged.empty() && merged.back().term == e.term) {
        merged.back().count += e.count;
      } else {
        merged.push_back(e);
      }
    }
    entries_ = std::move(merged);
  }

  /// One entry per token occurrence.
  static Document from_tokens(const std::vector<int>& tokens) {
    std::vector<Entry> entries;
    entries.reserve(tokens.size());
    for (int t : tokens) entries.push_back({t, 1});
    return Document(std::move(entries));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t unique_terms() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  long total() const {
    long n = 0;
    for (const auto& e : entries_) n += e.count;
    return n;
  }

  int max_term() const { return entries_.empty() ? -1 : entries_.back().term; }

  int count(int term) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), term,
                               [](const Entry& e, int t) { return e.term < t; });
    return it != entries_.end() && it->term == term ? it->count : 0;
  }

  /// Dense count vector of length vocab_size.
  Vector dense(int vocab_size) const {
    Vector v = Vector::Zero(vocab_size);
    for (const auto& e : entries_) {
      if (e.term >= vocab_size) throw InputError("term index exceeds vocabulary size");
      v[e.term] = e.count;
    }
    return v;
  }

  /// Expanded token list in term order.
  std::vector<int> tokens() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(total()));
    for (const auto& e : entries_) out.insert(out.end(), static_cast<std::size_t>(e.count), e.term);
    return out;
  }

  friend bool operator==(const Document&, const Document&) = default;

 private:
  std::vector<Entry> entries_;
};

struct Corpus {
  int vocab_size = 0;
  std::vector<Document> docs;

  long total_words() const {
    long n = 0;
    for (const auto& d : docs) n += d.total();
    return n;
  }
};

}  // namespace nonconj
