#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "qdup/corpus.hpp"
#include "qdup/html.hpp"
#include "qdup/random.hpp"
#include "qdup/text.hpp"

namespace qdup {

// Generated forum: questions drawn from topics, each built around a small
// set of content terms and padded with filler words that carry no signal.
// Planted duplicates reuse most of their original's content terms.
struct SyntheticSpec {
  std::size_t questions = 2000;
  std::size_t topics = 100;
  std::size_t topic_vocabulary = 30;
  std::size_t content_terms = 10;      // per question
  std::size_t duplicate_shared = 8;    // content terms a duplicate keeps
  std::size_t duplicate_pairs = 300;
  std::size_t filler_vocabulary = 3000;
  std::size_t title_content = 5;
  std::size_t title_filler = 10;
  std::size_t body_sentences = 5;
  std::size_t sentence_content = 2;
  std::size_t sentence_filler = 16;
  bool answers = true;
  std::uint64_t seed = 0;
  std::string site = "synthetic";

  void validate() const {
    if (questions == 0 || topics == 0) throw std::invalid_argument("synthetic corpus needs questions and topics");
    if (content_terms > topic_vocabulary) throw std::invalid_argument("content_terms exceeds topic vocabulary");
    if (duplicate_shared > content_terms) throw std::invalid_argument("duplicate_shared exceeds content_terms");
    if (title_content > content_terms) throw std::invalid_argument("title_content exceeds content_terms");
    if (2 * duplicate_pairs > questions) throw std::invalid_argument("too many duplicate pairs");
    if (body_sentences * sentence_content < content_terms)
      throw std::invalid_argument("body too short to carry every content term");
  }
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<DuplicateLink> planted;
  // Content terms per question id, for property checks.
  std::map<PostId, std::set<std::string>> content;
  std::set<std::string> filler;
};

namespace detail {

inline constexpr std::string_view kConsonants = "bcdfgklmnprstvz";
inline constexpr std::string_view kVowels = "aeiou";
inline constexpr std::string_view kCommonWords[] = {"how", "to", "the", "is", "in", "my", "with", "a", "i", "can"};

inline std::string pseudo_word(KeyedRng& rng, std::size_t syllables) {
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  w += kConsonants[rng.below(kConsonants.size())];
  return w;
}

inline std::vector<std::string> make_words(std::uint64_t seed, std::uint64_t stream, std::size_t n,
                                           std::unordered_set<std::string>& taken) {
  KeyedRng rng(seed, stream);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w = pseudo_word(rng, 3);
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

template <class T>
std::vector<T> sample_without_replacement(const std::vector<T>& from, std::size_t k, KeyedRng& rng) {
  std::vector<T> pool = from;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(k);
  return pool;
}

template <class T>
void shuffle(std::vector<T>& v, KeyedRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::unordered_set<std::string> taken;
  for (auto w : detail::kCommonWords) taken.emplace(w);
  std::vector<std::vector<std::string>> topic_words;
  for (std::size_t t = 0; t < spec.topics; ++t)
    topic_words.push_back(detail::make_words(spec.seed, 0x100000 + t, spec.topic_vocabulary, taken));
  const auto filler = detail::make_words(spec.seed, 0x1, spec.filler_vocabulary, taken);

  SyntheticCorpus out;
  out.filler.insert(filler.begin(), filler.end());

  // Content sets: originals first, duplicates copy `duplicate_shared` terms
  // of their original and draw the rest from the same topic.
  struct Plan {
    std::size_t topic;
    std::vector<std::string> terms;
  };
  std::vector<Plan> plans(spec.questions);
  const std::size_t singles = spec.questions - 2 * spec.duplicate_pairs;
  const std::size_t originals = singles + spec.duplicate_pairs;
  for (std::size_t i = 0; i < originals; ++i) {
    KeyedRng rng(spec.seed, 0x200000 + i);
    plans[i].topic = rng.below(spec.topics);
    plans[i].terms = detail::sample_without_replacement(topic_words[plans[i].topic], spec.content_terms, rng);
  }
  for (std::size_t p = 0; p < spec.duplicate_pairs; ++p) {
    const std::size_t orig = singles + p, dup = originals + p;
    KeyedRng rng(spec.seed, 0x300000 + p);
    plans[dup].topic = plans[orig].topic;
    auto kept = detail::sample_without_replacement(plans[orig].terms, spec.duplicate_shared, rng);
    std::vector<std::string> fresh;
    for (const auto& w : topic_words[plans[dup].topic])
      if (std::find(plans[orig].terms.begin(), plans[orig].terms.end(), w) == plans[orig].terms.end()) fresh.push_back(w);
    auto extra = detail::sample_without_replacement(fresh, spec.content_terms - spec.duplicate_shared, rng);
    kept.insert(kept.end(), extra.begin(), extra.end());
    plans[dup].terms = std::move(kept);
  }

  // Question ids interleave originals and duplicates so neither sits at the
  // end of the id range.
  std::vector<PostId> ids(spec.questions);
  {
    std::vector<PostId> perm(spec.questions);
    for (std::size_t i = 0; i < spec.questions; ++i) perm[i] = 1 + 2 * i;
    KeyedRng rng(spec.seed, 0x400000);
    detail::shuffle(perm, rng);
    ids = std::move(perm);
  }

  auto pick = [](const std::vector<std::string>& from, KeyedRng& rng) -> const std::string& {
    return from[rng.below(from.size())];
  };
  auto sentence = [&](std::vector<std::string> content_words, KeyedRng& rng, std::size_t n_filler) {
    std::vector<std::string> words = std::move(content_words);
    for (std::size_t f = 0; f < n_filler; ++f) words.push_back(pick(filler, rng));
    words.emplace_back(detail::kCommonWords[rng.below(std::size(detail::kCommonWords))]);
    detail::shuffle(words, rng);
    return words;
  };

  std::vector<Question> questions;
  std::vector<Answer> answers;
  for (std::size_t i = 0; i < spec.questions; ++i) {
    const PostId id = ids[i];
    KeyedRng rng(spec.seed, 0x500000 + i);
    const auto& terms = plans[i].terms;
    out.content[id] = std::set<std::string>(terms.begin(), terms.end());

    auto title_terms = detail::sample_without_replacement(terms, spec.title_content, rng);
    auto title_words = sentence(title_terms, rng, spec.title_filler);
    std::string title = "how " + join(title_words) + " ?";

    // Every content term appears in the body; sentences carry them in turn.
    std::vector<std::string> order = terms;
    detail::shuffle(order, rng);
    std::string html = "<p>";
    for (std::size_t s = 0; s < spec.body_sentences; ++s) {
      std::vector<std::string> cw;
      for (std::size_t c = 0; c < spec.sentence_content; ++c) {
        const std::size_t k = s * spec.sentence_content + c;
        cw.push_back(k < order.size() ? order[k] : pick(terms, rng));
      }
      auto words = sentence(std::move(cw), rng, spec.sentence_filler);
      if (s > 0) html += ' ';
      html += join(words) + '.';
    }
    html += "</p>";

    Question q;
    q.id = id;
    q.title = std::move(title);
    q.body_html = std::move(html);
    q.body_text = html_to_text(q.body_html);
    q.score = static_cast<std::int64_t>(rng.below(5));
    q.site = spec.site;
    if (spec.answers) {
      Answer a;
      a.id = id + 1;
      a.parent_id = id;
      std::vector<std::string> cw = detail::sample_without_replacement(terms, 3, rng);
      auto words = sentence(std::move(cw), rng, spec.sentence_filler);
      a.body_text = "you can " + join(words) + '.';
      a.accepted = true;
      q.accepted_answer_id = a.id;
      answers.push_back(std::move(a));
    }
    questions.push_back(std::move(q));
  }
  for (std::size_t p = 0; p < spec.duplicate_pairs; ++p)
    out.planted.push_back({ids[originals + p], ids[singles + p]});
  out.corpus = seal(spec.site, std::move(questions), std::move(answers), out.planted);
  return out;
}

// Fraction of a's content terms present in b.
inline double content_share(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& t : a) n += b.count(t);
  return static_cast<double>(n) / static_cast<double>(a.size());
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\n': out += "&#xA;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Writes Posts.xml and PostLinks.xml in the data-dump layout.
inline void write_dump_xml(const Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "Posts.xml", std::ios::binary);
    out << "\xEF\xBB\xBF<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n";
    for (const auto& [id, q] : c.questions()) {
      out << "  <row Id=\"" << id << "\" PostTypeId=\"1\"";
      if (q.accepted_answer_id) out << " AcceptedAnswerId=\"" << *q.accepted_answer_id << '"';
      out << " Score=\"" << q.score << "\" Body=\"" << detail::xml_escape(q.body_html) << "\" Title=\""
          << detail::xml_escape(q.title) << "\" />\n";
    }
    for (const auto& [id, a] : c.answers())
      out << "  <row Id=\"" << id << "\" PostTypeId=\"2\" ParentId=\"" << a.parent_id << "\" Score=\"0\" Body=\"&lt;p&gt;"
          << detail::xml_escape(a.body_text) << "&lt;/p&gt;\" />\n";
    out << "</posts>\n";
  }
  std::ofstream out(dir / "PostLinks.xml", std::ios::binary);
  out << "\xEF\xBB\xBF<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<postlinks>\n";
  std::size_t n = 1;
  for (const auto& l : c.duplicates())
    out << "  <row Id=\"" << n++ << "\" PostId=\"" << l.source_id << "\" RelatedPostId=\"" << l.target_id
        << "\" LinkTypeId=\"3\" />\n";
  out << "</postlinks>\n";
}

}  // namespace qdup
