#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qdup/corpus.hpp"
#include "qdup/html.hpp"
#include "qdup/term_stats.hpp"
#include "qdup/text.hpp"

namespace qdup {

struct Paragraph {
  std::vector<Tokens> sentences;
  // [begin, end) byte offsets into html_to_text(body_html).
  std::pair<std::size_t, std::size_t> char_span{0, 0};

  Tokens tokens() const {
    Tokens out;
    for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  bool operator==(const Paragraph&) const = default;
};

struct ProcessedQuestion {
  PostId question_id = 0;
  Tokens title_tokens;
  std::vector<Paragraph> paragraphs;
  std::size_t selected_paragraph = 0;

  const Paragraph& selected() const { return paragraphs.at(selected_paragraph); }

  // title ⊕ [SEP] ⊕ selected paragraph: the question text used for
  // question-to-question and question-to-answer instances.
  Tokens question_text() const {
    Tokens out = title_tokens;
    out.emplace_back(kSeparator);
    for (const auto& s : selected().sentences) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  bool operator==(const ProcessedQuestion&) const = default;
};

using ProcessedSet = std::map<PostId, ProcessedQuestion>;

// ---------------------------------------------------------------------------
// Filtering

enum class FilterMode { kDedup, kQuestionGeneration };

enum class DiscardReason { kKept, kShortBody, kDownvoted, kSingleSentence, kNoParagraph };

inline constexpr std::size_t kMinBodyWords = 10;
inline constexpr std::size_t kMinQgSentences = 2;

inline std::string_view to_string(DiscardReason r) {
  switch (r) {
    case DiscardReason::kKept: return "kept";
    case DiscardReason::kShortBody: return "short-body";
    case DiscardReason::kDownvoted: return "downvoted";
    case DiscardReason::kSingleSentence: return "single-sentence";
    case DiscardReason::kNoParagraph: return "no-paragraph";
  }
  return "unknown";
}

inline std::string_view to_string(FilterMode m) { return m == FilterMode::kDedup ? "dedup" : "qg"; }

inline FilterMode parse_filter_mode(std::string_view s) {
  if (s == "dedup") return FilterMode::kDedup;
  if (s == "qg") return FilterMode::kQuestionGeneration;
  throw std::invalid_argument("unknown preprocess mode: " + std::string(s));
}

// Words exclude the '?' pseudo-token.
inline std::size_t count_words(std::span<const Token> tokens) {
  std::size_t n = 0;
  for (const auto& t : tokens) n += t == "?" ? 0 : 1;
  return n;
}

// Sentences counted line by line, the way paragraph extraction sees them.
inline std::size_t count_sentences(std::string_view text) {
  std::size_t n = 0, b = 0;
  while (b <= text.size()) {
    std::size_t e = text.find('\n', b);
    if (e == std::string_view::npos) e = text.size();
    n += sentence_spans(text.substr(b, e - b)).size();
    b = e + 1;
  }
  return n;
}

inline DiscardReason filter_question(const Question& q, FilterMode mode) {
  if (count_words(tokenize(q.body_text)) < kMinBodyWords) return DiscardReason::kShortBody;
  if (q.score < 0) return DiscardReason::kDownvoted;
  if (mode == FilterMode::kQuestionGeneration && count_sentences(q.body_text) < kMinQgSentences)
    return DiscardReason::kSingleSentence;
  return DiscardReason::kKept;
}

// ---------------------------------------------------------------------------
// Paragraph extraction

// Reads the flattened body line by line: the first line opens paragraph 1,
// a line with one sentence joins the previous paragraph, a line with two or
// more sentences opens a new one.
inline std::vector<Paragraph> extract_paragraphs(std::string_view body_html) {
  const std::string text = html_to_text(body_html);
  std::vector<Paragraph> out;
  std::size_t b = 0;
  while (b <= text.size()) {
    std::size_t e = text.find('\n', b);
    if (e == std::string::npos) e = text.size();
    const std::string_view line = std::string_view(text).substr(b, e - b);
    const auto spans = sentence_spans(line);
    if (!spans.empty()) {
      std::vector<Tokens> sentences;
      for (const auto& [sb, se] : spans) sentences.push_back(tokenize(line.substr(sb, se - sb)));
      const std::size_t begin = b + spans.front().first, end = b + spans.back().second;
      if (out.empty() || sentences.size() >= 2) {
        out.push_back({std::move(sentences), {begin, end}});
      } else {
        auto& last = out.back();
        for (auto& s : sentences) last.sentences.push_back(std::move(s));
        last.char_span.second = end;
      }
    }
    b = e + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sentence encoder and paragraph selection

// Cosine-comparable sentence encoder. The default is L2-normalized TF·IDF
// over the question corpus; subclasses may plug in dense encoders.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual double similarity(std::span<const Token> a, std::span<const Token> b) const = 0;
};

class TfidfSentenceEncoder final : public SentenceEncoder {
 public:
  TfidfSentenceEncoder() = default;
  explicit TfidfSentenceEncoder(TermStats stats) : stats_(std::move(stats)) {}

  // One document per question: title tokens followed by body tokens.
  static TfidfSentenceEncoder fit(const Corpus& corpus) {
    TermStats stats;
    for (const auto& [id, q] : corpus.questions()) {
      Tokens doc = tokenize(q.title);
      const Tokens body = tokenize(q.body_text);
      doc.insert(doc.end(), body.begin(), body.end());
      stats.add_document(doc);
    }
    return TfidfSentenceEncoder(std::move(stats));
  }

  SparseVector encode(std::span<const Token> sentence) const { return stats_.tfidf(sentence); }

  double similarity(std::span<const Token> a, std::span<const Token> b) const override {
    return cosine(encode(a), encode(b));
  }

  const TermStats& stats() const { return stats_; }

 private:
  TermStats stats_;
};

inline SparseVector encode_sentence(const TfidfSentenceEncoder& enc, std::span<const Token> s) {
  return enc.encode(s);
}

// f(p, t) = max over sentences s of cos(enc(s), enc(t)).
inline double score_paragraph(const SentenceEncoder& enc, const Paragraph& p, std::span<const Token> title) {
  if (p.sentences.empty()) return 0;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : p.sentences) best = std::max(best, enc.similarity(s, title));
  return best;
}

class UnusableQuestion : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argmax of score_paragraph; ties go to the lowest index.
inline std::size_t best_paragraph(const SentenceEncoder& enc, std::span<const Paragraph> paragraphs,
                                  std::span<const Token> title) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    const double s = score_paragraph(enc, paragraphs[i], title);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

inline ProcessedQuestion select_paragraph(const SentenceEncoder& enc, const Question& q) {
  ProcessedQuestion pq;
  pq.question_id = q.id;
  pq.title_tokens = tokenize(q.title);
  pq.paragraphs = extract_paragraphs(q.body_html);
  if (pq.paragraphs.empty()) throw UnusableQuestion("question " + std::to_string(q.id) + " has no text paragraphs");
  pq.selected_paragraph = best_paragraph(enc, pq.paragraphs, pq.title_tokens);
  return pq;
}

// ---------------------------------------------------------------------------
// Whole-corpus pass

struct PreprocessReport {
  FilterMode mode = FilterMode::kDedup;
  std::uint64_t total = 0;
  std::uint64_t kept = 0;
  std::map<std::string, std::uint64_t> discarded;

  double discard_rate() const {
    return total == 0 ? 0.0 : static_cast<double>(total - kept) / static_cast<double>(total);
  }
};

struct PreprocessResult {
  ProcessedSet processed;
  PreprocessReport report;
};

inline PreprocessResult preprocess(const Corpus& corpus, FilterMode mode, const SentenceEncoder& enc) {
  PreprocessResult out;
  out.report.mode = mode;
  for (const auto& [id, q] : corpus.questions()) {
    ++out.report.total;
    DiscardReason reason = filter_question(q, mode);
    if (reason == DiscardReason::kKept) {
      auto paragraphs = extract_paragraphs(q.body_html);
      if (paragraphs.empty()) {
        reason = DiscardReason::kNoParagraph;
      } else {
        ProcessedQuestion pq;
        pq.question_id = id;
        pq.title_tokens = tokenize(q.title);
        pq.paragraphs = std::move(paragraphs);
        pq.selected_paragraph = best_paragraph(enc, pq.paragraphs, pq.title_tokens);
        out.processed.emplace(id, std::move(pq));
        ++out.report.kept;
        continue;
      }
    }
    ++out.report.discarded[std::string(to_string(reason))];
  }
  return out;
}

inline PreprocessResult preprocess(const Corpus& corpus, FilterMode mode) {
  return preprocess(corpus, mode, TfidfSentenceEncoder::fit(corpus));
}

// ---------------------------------------------------------------------------
// Persistence: processed.jsonl + report.json

inline ordered_json to_json(const ProcessedQuestion& pq) {
  ordered_json j;
  j["id"] = pq.question_id;
  j["title"] = join(pq.title_tokens);
  ordered_json paras = ordered_json::array();
  for (const auto& p : pq.paragraphs) {
    ordered_json pj;
    pj["span"] = {p.char_span.first, p.char_span.second};
    ordered_json sents = ordered_json::array();
    for (const auto& s : p.sentences) sents.push_back(join(s));
    pj["sentences"] = std::move(sents);
    paras.push_back(std::move(pj));
  }
  j["paragraphs"] = std::move(paras);
  j["selected"] = pq.selected_paragraph;
  return j;
}

inline ProcessedQuestion processed_from_json(const ordered_json& j) {
  ProcessedQuestion pq;
  pq.question_id = j.at("id").get<PostId>();
  pq.title_tokens = split_ws(j.at("title").get<std::string>());
  for (const auto& pj : j.at("paragraphs")) {
    Paragraph p;
    p.char_span = {pj.at("span").at(0).get<std::size_t>(), pj.at("span").at(1).get<std::size_t>()};
    for (const auto& s : pj.at("sentences")) p.sentences.push_back(split_ws(s.get<std::string>()));
    pq.paragraphs.push_back(std::move(p));
  }
  pq.selected_paragraph = j.at("selected").get<std::size_t>();
  if (pq.paragraphs.empty() || pq.selected_paragraph >= pq.paragraphs.size())
    throw CorpusError("processed question " + std::to_string(pq.question_id) + " has invalid paragraph selection");
  return pq;
}

inline ordered_json to_json(const PreprocessReport& r) {
  ordered_json j;
  j["mode"] = to_string(r.mode);
  j["total"] = r.total;
  j["kept"] = r.kept;
  ordered_json hist = ordered_json::object();
  for (const auto& [k, v] : r.discarded) hist[k] = v;
  j["discarded"] = std::move(hist);
  j["discard_rate"] = r.discard_rate();
  return j;
}

inline void save_processed(const PreprocessResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "processed.jsonl", std::ios::binary);
  for (const auto& [id, pq] : r.processed) out << dump_line(to_json(pq)) << '\n';
  std::ofstream rep(dir / "report.json", std::ios::binary);
  rep << to_json(r.report).dump(2) << '\n';
  if (!out || !rep) throw CorpusError("failed writing processed questions to " + dir.string());
}

inline ProcessedSet load_processed(const std::filesystem::path& dir) {
  ProcessedSet out;
  for_each_json_line(dir / "processed.jsonl", [&](const ordered_json& j) {
    auto pq = processed_from_json(j);
    const PostId id = pq.question_id;
    out.emplace(id, std::move(pq));
  });
  return out;
}

}  // namespace qdup
