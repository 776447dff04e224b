#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qdup/preprocess.hpp"
#include "qdup/random.hpp"
#include "qdup/term_stats.hpp"
#include "qdup/text.hpp"

namespace qdup {

// ---------------------------------------------------------------------------
// BLEU

class BleuError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct BleuStats {
  std::array<std::uint64_t, 4> matches{};
  std::array<std::uint64_t, 4> totals{};
  std::uint64_t candidate_length = 0;
  std::uint64_t reference_length = 0;
};

namespace detail {

inline std::map<std::vector<std::string_view>, std::uint64_t> ngram_counts(std::span<const Token> s, std::size_t n) {
  std::map<std::vector<std::string_view>, std::uint64_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::vector<std::string_view> g;
    g.reserve(n);
    for (std::size_t k = 0; k < n; ++k) g.emplace_back(s[i + k]);
    ++out[g];
  }
  return out;
}

}  // namespace detail

inline void accumulate_bleu(BleuStats& st, std::span<const Token> cand, std::span<const Token> ref) {
  st.candidate_length += cand.size();
  st.reference_length += ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto c = detail::ngram_counts(cand, n);
    const auto r = detail::ngram_counts(ref, n);
    for (const auto& [g, count] : c) {
      const auto it = r.find(g);
      st.matches[n - 1] += it == r.end() ? 0 : std::min(count, it->second);
      st.totals[n - 1] += count;
    }
  }
}

// BLEU-4 in [0, 100] with uniform weights and brevity penalty. Without
// smoothing, any zero n-gram precision gives 0. With smoothing, orders 2-4
// use add-one precisions (m + 1) / (t + 1).
inline double bleu_from_stats(const BleuStats& st, bool smooth = false) {
  if (st.candidate_length == 0) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(st.matches[n]), t = static_cast<double>(st.totals[n]);
    if (smooth && n > 0) {
      m += 1;
      t += 1;
    }
    if (m == 0 || t == 0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double c = static_cast<double>(st.candidate_length), r = static_cast<double>(st.reference_length);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return std::clamp(100.0 * bp * std::exp(log_sum / 4.0), 0.0, 100.0);
}

inline double corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, bool smooth = false) {
  if (candidates.size() != references.size())
    throw BleuError("corpus_bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                    std::to_string(references.size()) + " references");
  if (candidates.empty()) throw BleuError("corpus_bleu: empty input");
  BleuStats st;
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate_bleu(st, candidates[i], references[i]);
  return bleu_from_stats(st, smooth);
}

// ---------------------------------------------------------------------------
// Generators

// Produces a title-like token sequence from a question's selected
// paragraph. The interface only ever sees the paragraph, never the title.
class TitleGenerator {
 public:
  virtual ~TitleGenerator() = default;
  virtual Tokens generate(const Paragraph& paragraph) const = 0;
};

inline Tokens generate(const TitleGenerator& gen, const ProcessedQuestion& pq) {
  return gen.generate(pq.selected());
}

inline constexpr std::size_t kFeatureCount = 5;
using FeatureWeights = std::array<double, kFeatureCount>;

// Feature order: position, length fit, wh-word, question mark, IDF density.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "position", "length_ratio", "wh_word", "question_mark", "mean_idf"};

inline bool is_wh_word(std::string_view t) {
  static constexpr std::string_view kWh[] = {"how", "what", "why", "when", "where", "which", "who", "whom", "whose"};
  for (auto w : kWh)
    if (t == w) return true;
  return false;
}

// Extractive copy generator: scores every sentence of the paragraph with
// five title-likeness features and returns the best one, truncated.
class ExtractiveGenerator final : public TitleGenerator {
 public:
  ExtractiveGenerator() { weights_.fill(1.0); }

  Tokens generate(const Paragraph& paragraph) const override {
    if (paragraph.sentences.empty()) return {};
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < paragraph.sentences.size(); ++i) {
      const auto f = features(paragraph.sentences, i);
      double s = 0;
      for (std::size_t k = 0; k < kFeatureCount; ++k) s += weights_[k] * f[k];
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    const auto& sent = paragraph.sentences[best];
    return Tokens(sent.begin(), sent.begin() + static_cast<std::ptrdiff_t>(std::min(sent.size(), max_len_)));
  }

  std::array<double, kFeatureCount> features(std::span<const Tokens> sentences, std::size_t i) const {
    const auto& s = sentences[i];
    std::array<double, kFeatureCount> f{};
    f[0] = 1.0 / (1.0 + static_cast<double>(i));
    const double ratio = static_cast<double>(s.size()) / std::max(1.0, median_title_length_);
    f[1] = -std::abs(ratio - 1.0);
    double idf_sum = 0;
    std::size_t counted = 0;
    for (const auto& t : s) {
      if (is_wh_word(t)) f[2] = 1.0;
      if (t == "?") f[3] = 1.0;
      if (t == "?") continue;
      const auto it = idf_.find(t);
      idf_sum += it == idf_.end() ? max_idf_ : it->second;
      ++counted;
    }
    f[4] = counted == 0 || max_idf_ <= 0 ? 0.0 : idf_sum / static_cast<double>(counted) / max_idf_;
    return f;
  }

  const FeatureWeights& weights() const { return weights_; }
  void set_weights(const FeatureWeights& w) {
    for (double x : w)
      if (!std::isfinite(x)) throw std::invalid_argument("generator weights must be finite");
    weights_ = w;
  }
  std::size_t max_len() const { return max_len_; }
  void set_max_len(std::size_t n) {
    if (n < 1) throw std::invalid_argument("max_len must be >= 1");
    max_len_ = n;
  }
  double median_title_length() const { return median_title_length_; }
  const std::string& source_site() const { return source_site_; }
  const std::map<std::string, double>& idf() const { return idf_; }

  bool operator==(const ExtractiveGenerator& o) const {
    return weights_ == o.weights_ && max_len_ == o.max_len_ && median_title_length_ == o.median_title_length_ &&
           source_site_ == o.source_site_ && idf_ == o.idf_;
  }

  friend struct GeneratorAccess;

 private:
  FeatureWeights weights_{};
  std::size_t max_len_ = 20;
  double median_title_length_ = 8.0;
  double max_idf_ = 1.0;
  std::string source_site_;
  std::map<std::string, double> idf_;
};

struct GeneratorAccess {
  static void set_idf(ExtractiveGenerator& g, std::map<std::string, double> idf) {
    g.max_idf_ = 1.0;
    for (const auto& [t, v] : idf) g.max_idf_ = std::max(g.max_idf_, v);
    g.idf_ = std::move(idf);
  }
  static void set_median(ExtractiveGenerator& g, double m) { g.median_title_length_ = m; }
  static void set_site(ExtractiveGenerator& g, std::string s) { g.source_site_ = std::move(s); }
};

struct FitOptions {
  std::uint64_t seed = 0;
  std::size_t max_fit_questions = 2000;
  std::size_t rounds = 3;
  std::size_t max_len = 20;
  std::string source_site;
};

class GeneratorError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const std::vector<double>& weight_grid() {
  static const std::vector<double> kGrid = {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0};
  return kGrid;
}

// Fits IDF on the source questions (title + paragraphs as one document each)
// and the feature weights by coordinate ascent on smoothed corpus BLEU of
// the selected sentence against the gold titles of a seeded subsample.
inline ExtractiveGenerator fit_generator(const ProcessedSet& source, const FitOptions& opt = {}) {
  if (source.empty()) throw GeneratorError("cannot fit a generator on zero questions");
  ExtractiveGenerator gen;
  gen.set_max_len(opt.max_len);
  GeneratorAccess::set_site(gen, opt.source_site);

  TermStats stats;
  std::vector<std::size_t> title_lengths;
  for (const auto& [id, pq] : source) {
    Tokens doc = pq.title_tokens;
    for (const auto& p : pq.paragraphs)
      for (const auto& s : p.sentences) doc.insert(doc.end(), s.begin(), s.end());
    stats.add_document(doc);
    title_lengths.push_back(pq.title_tokens.size());
  }
  std::map<std::string, double> idf;
  for (std::uint32_t i = 0; i < stats.vocabulary_size(); ++i) idf.emplace(stats.term(i), stats.idf(i));
  GeneratorAccess::set_idf(gen, std::move(idf));
  std::sort(title_lengths.begin(), title_lengths.end());
  const std::size_t n = title_lengths.size();
  const double median = n % 2 == 1 ? static_cast<double>(title_lengths[n / 2])
                                   : 0.5 * static_cast<double>(title_lengths[n / 2 - 1] + title_lengths[n / 2]);
  GeneratorAccess::set_median(gen, std::max(1.0, median));

  // Seeded subsample, ordered by keyed hash so it is stable under growth.
  std::vector<std::pair<std::uint64_t, const ProcessedQuestion*>> order;
  for (const auto& [id, pq] : source) order.emplace_back(mix_key(opt.seed, id), &pq);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->question_id < b.second->question_id;
  });
  if (order.size() > opt.max_fit_questions) order.resize(opt.max_fit_questions);

  std::vector<Tokens> refs;
  refs.reserve(order.size());
  for (const auto& [k, pq] : order) refs.push_back(pq->title_tokens);
  auto objective = [&](const ExtractiveGenerator& g) {
    BleuStats st;
    for (std::size_t i = 0; i < order.size(); ++i) accumulate_bleu(st, g.generate(order[i].second->selected()), refs[i]);
    return bleu_from_stats(st, true);
  };

  double best = objective(gen);
  for (std::size_t round = 0; round < opt.rounds; ++round) {
    bool improved = false;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      for (double v : weight_grid()) {
        auto w = gen.weights();
        if (w[f] == v) continue;
        w[f] = v;
        ExtractiveGenerator trial = gen;
        trial.set_weights(w);
        const double score = objective(trial);
        if (score > best) {
          best = score;
          gen = std::move(trial);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  return gen;
}

// Named-field text record: header, scalar fields, weights, then IDF table.
inline void save_generator(const ExtractiveGenerator& g, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  out << "qdup-qg-model 1\n";
  out << "source_site " << g.source_site() << '\n';
  out << "max_len " << g.max_len() << '\n';
  out << "median_title_length " << format_double(g.median_title_length()) << '\n';
  out << "weights";
  for (double w : g.weights()) out << ' ' << format_double(w);
  out << '\n';
  out << "idf_size " << g.idf().size() << '\n';
  for (const auto& [t, v] : g.idf()) out << t << '\t' << format_double(v) << '\n';
  if (!out) throw GeneratorError("failed writing " + file.string());
}

inline ExtractiveGenerator load_generator(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw GeneratorError("cannot open " + file.string());
  std::string line;
  auto field = [&](std::string_view name) -> std::string {
    if (!std::getline(in, line)) throw GeneratorError("model file: missing field '" + std::string(name) + "'");
    if (line == name) return {};
    const std::string prefix = std::string(name) + " ";
    if (line.rfind(prefix, 0) != 0) throw GeneratorError("model file: expected field '" + std::string(name) + "'");
    return line.substr(prefix.size());
  };
  if (!std::getline(in, line) || line != "qdup-qg-model 1") throw GeneratorError("not a qg model file");
  ExtractiveGenerator g;
  GeneratorAccess::set_site(g, field("source_site"));
  g.set_max_len(std::stoul(field("max_len")));
  GeneratorAccess::set_median(g, parse_double(field("median_title_length")));
  const Tokens ws = split_ws(field("weights"));
  if (ws.size() != kFeatureCount) throw GeneratorError("model file: expected 5 weights");
  FeatureWeights w{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) w[i] = parse_double(ws[i]);
  g.set_weights(w);
  const std::size_t n = std::stoul(field("idf_size"));
  std::map<std::string, double> idf;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw GeneratorError("model file: truncated IDF table");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw GeneratorError("model file: bad IDF row");
    idf.emplace(line.substr(0, tab), parse_double(std::string_view(line).substr(tab + 1)));
  }
  GeneratorAccess::set_idf(g, std::move(idf));
  return g;
}

// ---------------------------------------------------------------------------
// Evaluation and leakage guard

struct GenerationReport {
  double corpus_bleu = 0;
  double empty_rate = 0;
  double mean_length = 0;
  double exact_match_rate = 0;
  std::size_t questions = 0;
};

inline GenerationReport evaluate_generator(const TitleGenerator& gen, std::span<const ProcessedQuestion* const> sample) {
  GenerationReport r;
  r.questions = sample.size();
  if (sample.empty()) return r;
  BleuStats st;
  std::size_t empty = 0, exact = 0, total_len = 0;
  for (const ProcessedQuestion* pq : sample) {
    const Tokens g = generate(gen, *pq);
    empty += g.empty() ? 1 : 0;
    exact += !g.empty() && g == pq->title_tokens ? 1 : 0;
    total_len += g.size();
    accumulate_bleu(st, g, pq->title_tokens);
  }
  const double n = static_cast<double>(sample.size());
  r.corpus_bleu = bleu_from_stats(st, false);
  r.empty_rate = static_cast<double>(empty) / n;
  r.exact_match_rate = static_cast<double>(exact) / n;
  r.mean_length = static_cast<double>(total_len) / n;
  return r;
}

struct LeakageThresholds {
  double max_exact_match_rate = 0.05;
  double max_bleu = 60.0;
  double max_empty_rate = 0.5;
};

struct LeakageReport {
  bool passed = true;
  GenerationReport generation;
  std::vector<std::string> failures;
};

// Generated duplicates must differ from the gold titles (exact-match rate,
// BLEU) and must exist (empty rate).
inline LeakageReport leakage_check(const TitleGenerator& gen, std::span<const ProcessedQuestion* const> sample,
                                   const LeakageThresholds& th = {}) {
  LeakageReport rep;
  rep.generation = evaluate_generator(gen, sample);
  const auto& g = rep.generation;
  if (g.exact_match_rate > th.max_exact_match_rate)
    rep.failures.push_back("exact-match rate " + format_double(g.exact_match_rate) + " exceeds " +
                           format_double(th.max_exact_match_rate));
  if (g.corpus_bleu > th.max_bleu)
    rep.failures.push_back("BLEU " + format_double(g.corpus_bleu) + " exceeds " + format_double(th.max_bleu));
  if (g.empty_rate > th.max_empty_rate)
    rep.failures.push_back("empty rate " + format_double(g.empty_rate) + " exceeds " + format_double(th.max_empty_rate));
  rep.passed = rep.failures.empty();
  return rep;
}

inline std::vector<const ProcessedQuestion*> pointers(const ProcessedSet& set) {
  std::vector<const ProcessedQuestion*> out;
  out.reserve(set.size());
  for (const auto& [id, pq] : set) out.push_back(&pq);
  return out;
}

}  // namespace qdup
