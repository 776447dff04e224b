#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qdup/corpus.hpp"
#include "qdup/term_stats.hpp"
#include "qdup/text.hpp"
#include "qdup/trainset.hpp"

namespace qdup {

struct Overlap {
  double jaccard = 0;
  double tfidf = 0;
};

namespace detail {

inline Tokens overlap_tokens(std::span<const Token> t) {
  Tokens out;
  out.reserve(t.size());
  for (const auto& tok : t)
    if (tok != kSeparator && tok != "?") out.push_back(stem(tok));
  return out;
}

inline double stable_mean_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline Tokens title_part(std::span<const Token> t) {
  const auto sep = std::find(t.begin(), t.end(), kSeparator);
  return Tokens(t.begin(), sep);
}

}  // namespace detail

// Statistics over stemmed question texts (title and body) and answers.
inline TermStats fit_overlap_stats(const Corpus& corpus) {
  TermStats stats;
  for (const auto& [id, q] : corpus.questions()) stats.add_document(detail::overlap_tokens(tokenize(q.title + "\n" + q.body_text)));
  for (const auto& [id, a] : corpus.answers()) stats.add_document(detail::overlap_tokens(tokenize(a.body_text)));
  return stats;
}

// Jaccard of stemmed token sets and cosine of stemmed TF-IDF vectors.
inline Overlap overlap(std::span<const Token> a, std::span<const Token> b, const TermStats& stats) {
  const Tokens sa = detail::overlap_tokens(a), sb = detail::overlap_tokens(b);
  if (sa.empty() && sb.empty()) return {};
  const std::set<Token> x(sa.begin(), sa.end()), y(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (const auto& t : x) inter += y.count(t);
  Overlap o;
  o.jaccard = static_cast<double>(inter) / static_cast<double>(x.size() + y.size() - inter);
  o.tfidf = std::clamp(cosine(stats.tfidf(sa), stats.tfidf(sb)), 0.0, 1.0);
  return o;
}

struct OverlapRow {
  std::string label;
  double mean_jaccard = 0;
  double mean_tfidf = 0;
  std::size_t n = 0;
};

struct OverlapReport {
  std::vector<OverlapRow> rows;
  bool stemmed = true;
};

// Averages over positive instances, one row per strategy present. Supervised
// pairs are compared as full title + body when `corpus` is given. Question-
// answer positives add a row using only the title on the question side.
inline OverlapReport analyze(const TrainingSet& ts, const TermStats& stats, const Corpus* corpus = nullptr) {
  struct Acc {
    std::vector<double> j, t;
  };
  std::map<std::string, Acc> acc;
  std::vector<std::string> order;
  auto add = [&](const std::string& label, const Overlap& o) {
    auto [it, inserted] = acc.try_emplace(label);
    if (inserted) order.push_back(label);
    it->second.j.push_back(o.jaccard);
    it->second.t.push_back(o.tfidf);
  };
  auto full_text = [&](PostId id, const Tokens& fallback) -> Tokens {
    if (corpus)
      if (const Question* q = corpus->question(id)) return tokenize(q->title + "\n" + q->body_text);
    return fallback;
  };
  for (const auto& inst : ts.instances) {
    if (inst.label <= 0) continue;
    const std::string label(to_string(inst.strategy));
    if (inst.strategy == Strategy::kSupervised) {
      add(label, overlap(full_text(inst.left_source, inst.left), full_text(inst.right_source, inst.right), stats));
    } else {
      add(label, overlap(inst.left, inst.right, stats));
    }
    if (inst.strategy == Strategy::kWsQa) add(label + " (title-only)", overlap(detail::title_part(inst.left), inst.right, stats));
  }
  OverlapReport rep;
  for (const auto& label : order) {
    auto& a = acc[label];
    OverlapRow row;
    row.label = label;
    row.n = a.j.size();
    row.mean_jaccard = detail::stable_mean_of(a.j);
    row.mean_tfidf = detail::stable_mean_of(a.t);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline std::string render_table(const OverlapReport& r) {
  std::ostringstream os;
  os << "# overlap of positive pairs; tokens " << (r.stemmed ? "stemmed and lowercased" : "lowercased")
     << "; tfidf = cosine of TF-IDF vectors\n";
  os << std::fixed << std::setprecision(4);
  os << "strategy\tjaccard\ttfidf\tn\n";
  for (const auto& row : r.rows) os << row.label << '\t' << row.mean_jaccard << '\t' << row.mean_tfidf << '\t' << row.n << '\n';
  return os.str();
}

// Writes `<out>` (table) and `<out>.tsv` (plot data: one bar per line).
inline void write_overlap(const OverlapReport& r, const std::filesystem::path& out, const std::vector<std::string>& header = {}) {
  {
    std::ofstream t(out, std::ios::binary);
    for (const auto& h : header) t << "# " << h << '\n';
    t << render_table(r);
  }
  std::ofstream d(out.string() + ".tsv", std::ios::binary);
  for (const auto& h : header) d << "# " << h << '\n';
  d << "strategy\tmeasure\tvalue\n";
  for (const auto& row : r.rows) {
    d << row.label << "\tjaccard\t" << format_double(row.mean_jaccard) << '\n';
    d << row.label << "\ttfidf\t" << format_double(row.mean_tfidf) << '\n';
  }
}

}  // namespace qdup
