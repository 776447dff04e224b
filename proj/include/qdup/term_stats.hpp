#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qdup/text.hpp"

namespace qdup {

// Sorted by term index; values already L2-normalized when produced by
// TermStats::tfidf.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

inline double dot(const SparseVector& a, const SparseVector& b) {
  double s = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) ++i;
    else if (a[i].first > b[j].first) ++j;
    else s += a[i++].second * b[j++].second;
  }
  return s;
}

inline double norm(const SparseVector& a) {
  double s = 0;
  for (const auto& [k, v] : a) s += v * v;
  return std::sqrt(s);
}

// Cosine of two sparse vectors; 0 when either is zero.
inline double cosine(const SparseVector& a, const SparseVector& b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0 || nb == 0) return 0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Document frequencies over a corpus of token sequences.
class TermStats {
 public:
  void add_document(std::span<const Token> doc) {
    std::unordered_set<std::uint32_t> seen;
    for (const auto& t : doc) {
      if (t == kSeparator) continue;
      const auto [it, inserted] = index_.try_emplace(t, static_cast<std::uint32_t>(terms_.size()));
      if (inserted) {
        terms_.push_back(t);
        df_.push_back(0);
      }
      if (seen.insert(it->second).second) ++df_[it->second];
    }
    ++documents_;
    total_length_ += doc.size();
  }

  std::optional<std::uint32_t> index(const std::string& term) const {
    const auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t vocabulary_size() const { return terms_.size(); }
  std::uint64_t documents() const { return documents_; }
  const std::string& term(std::uint32_t i) const { return terms_[i]; }
  std::uint64_t df(std::uint32_t i) const { return df_[i]; }

  double average_length() const {
    return documents_ == 0 ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(documents_);
  }

  // Smoothed IDF: ln((1 + D) / (1 + df)) + 1, always >= 1 for seen terms.
  double idf(std::uint32_t i) const {
    return std::log((1.0 + static_cast<double>(documents_)) / (1.0 + static_cast<double>(df_[i]))) + 1.0;
  }

  // Okapi IDF in its non-negative form.
  double bm25_idf(std::uint32_t i) const {
    const double n = static_cast<double>(documents_), d = static_cast<double>(df_[i]);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
  }

  // Raw term frequency times IDF, L2-normalized; OOV terms are dropped.
  SparseVector tfidf(std::span<const Token> tokens) const {
    std::unordered_map<std::uint32_t, double> tf;
    for (const auto& t : tokens) {
      const auto it = index_.find(t);
      if (it != index_.end()) tf[it->second] += 1.0;
    }
    SparseVector v;
    v.reserve(tf.size());
    for (const auto& [k, c] : tf) v.emplace_back(k, c * idf(k));
    std::sort(v.begin(), v.end());
    const double n = norm(v);
    if (n > 0)
      for (auto& [k, x] : v) x /= n;
    return v;
  }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> terms_;
  std::vector<std::uint64_t> df_;
  std::uint64_t documents_ = 0;
  std::uint64_t total_length_ = 0;
};

}  // namespace qdup
