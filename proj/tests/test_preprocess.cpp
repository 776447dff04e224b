#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "qdup/preprocess.hpp"
#include "qdup/random.hpp"
#include "qdup/synthetic.hpp"

using namespace qdup;

namespace {

Question make_question(PostId id, std::string title, std::string html, std::int64_t score = 0) {
  Question q;
  q.id = id;
  q.title = std::move(title);
  q.body_html = std::move(html);
  q.body_text = html_to_text(q.body_html);
  q.score = score;
  return q;
}

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

// Similarity looked up by the first token of the sentence.
struct TableEncoder final : SentenceEncoder {
  std::map<std::string, double> table;
  double similarity(std::span<const Token> a, std::span<const Token>) const override {
    return a.empty() ? 0.0 : table.at(a[0]);
  }
};

Paragraph para(std::initializer_list<const char*> first_tokens) {
  Paragraph p;
  for (const char* t : first_tokens) p.sentences.push_back({t});
  return p;
}

}  // namespace

TEST(TokenizeExamples, FromDocumentation) {
  EXPECT_EQ(tokenize("How to echo contents?"), (Tokens{"how", "to", "echo", "contents", "?"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Grub2 not updating"), (Tokens{"grub2", "not", "updating"}));
}

TEST(SplitSentencesExamples, FromDocumentation) {
  EXPECT_EQ(split_sentences("A b. C d?").size(), 2u);
  EXPECT_EQ(split_sentences("no terminator").size(), 1u);
  EXPECT_EQ(split_sentences("x. y. z.").size(), 3u);
}

TEST(Filter, ShortBodyBoundary) {
  EXPECT_EQ(filter_question(make_question(1, "t", "<p>" + words(9) + "</p>", 5), FilterMode::kDedup),
            DiscardReason::kShortBody);
  EXPECT_EQ(filter_question(make_question(1, "t", "<p>" + words(10) + "</p>", 5), FilterMode::kDedup),
            DiscardReason::kKept);
}

TEST(Filter, QuestionMarksAreNotWords) {
  EXPECT_EQ(filter_question(make_question(1, "t", "<p>" + words(9) + " ?</p>"), FilterMode::kDedup),
            DiscardReason::kShortBody);
}

TEST(Filter, ScoreBoundary) {
  EXPECT_EQ(filter_question(make_question(1, "t", "<p>" + words(50) + "</p>", -1), FilterMode::kDedup),
            DiscardReason::kDownvoted);
  EXPECT_EQ(filter_question(make_question(1, "t", "<p>" + words(50) + "</p>", 0), FilterMode::kDedup),
            DiscardReason::kKept);
}

TEST(Filter, SentenceRuleOnlyInGenerationMode) {
  const auto one = make_question(1, "t", "<p>" + words(20) + ".</p>");
  const auto two = make_question(2, "t", "<p>" + words(10) + ". " + words(10) + ".</p>");
  EXPECT_EQ(filter_question(one, FilterMode::kDedup), DiscardReason::kKept);
  EXPECT_EQ(filter_question(one, FilterMode::kQuestionGeneration), DiscardReason::kSingleSentence);
  EXPECT_EQ(filter_question(two, FilterMode::kQuestionGeneration), DiscardReason::kKept);
}

TEST(Filter, ThreeSentencesKeptInBothModes) {
  const auto q = make_question(1, "t", "<p>" + words(20) + ". " + words(20) + ". " + words(10) + ".</p>", 0);
  EXPECT_EQ(filter_question(q, FilterMode::kDedup), DiscardReason::kKept);
  EXPECT_EQ(filter_question(q, FilterMode::kQuestionGeneration), DiscardReason::kKept);
}

TEST(Paragraphs, SingleSentenceLineMerges) {
  const auto ps = extract_paragraphs("<p>S1 a. S2 b.</p><p>S3 c.</p>");
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps[0].sentences.size(), 3u);
}

TEST(Paragraphs, MultiSentenceLineStartsNew) {
  const auto ps = extract_paragraphs("<p>S1 a. S2 b.</p><p>S3 c. S4 d.</p>");
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[1].sentences[0], (Tokens{"s3", "c"}));
  EXPECT_EQ(ps[1].sentences.size(), 2u);
}

TEST(Paragraphs, FirstLineAlwaysOpens) {
  const auto ps = extract_paragraphs("<p>Only one.</p><p>Then two here. And more.</p>");
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].sentences.size(), 1u);
}

TEST(Paragraphs, CodeOnlyBodyIsEmpty) {
  EXPECT_TRUE(extract_paragraphs("<pre><code>x=1</code></pre>").empty());
  EXPECT_TRUE(extract_paragraphs("").empty());
}

TEST(Paragraphs, ListItemsAreLines) {
  const auto ps = extract_paragraphs("<p>Intro one. Intro two.</p><ul><li>item a.</li><li>item b. more b.</li></ul>");
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].sentences.size(), 3u);
}

TEST(Paragraphs, CharSpanCoversText) {
  const std::string html = "<p>Alpha one. Beta two.</p><p>Gamma three. Delta four.</p>";
  const std::string text = html_to_text(html);
  for (const auto& p : extract_paragraphs(html)) {
    ASSERT_LE(p.char_span.second, text.size());
    Tokens from_span = tokenize(std::string_view(text).substr(p.char_span.first, p.char_span.second - p.char_span.first));
    EXPECT_EQ(from_span, p.tokens());
  }
}

TEST(Paragraphs, NeverEmptyAndSubsequenceOfBody) {
  KeyedRng rng(11, 0);
  const char* pieces[] = {"<p>", "</p>", "<br>", "<li>", "</li>", "<code>c</code>", "word", "other", ". ", "? ", "x.y", "\n"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string html;
    const auto n = 5 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) html += std::string(pieces[rng.below(std::size(pieces))]) + " ";
    const Tokens body = tokenize(html_to_text(html));
    Tokens cat;
    for (const auto& p : extract_paragraphs(html)) {
      ASSERT_FALSE(p.sentences.empty());
      for (const auto& s : p.sentences) {
        ASSERT_FALSE(s.empty());
        cat.insert(cat.end(), s.begin(), s.end());
      }
    }
    std::size_t j = 0;
    for (const auto& t : body)
      if (j < cat.size() && cat[j] == t) ++j;
    EXPECT_EQ(j, cat.size()) << html;
  }
}

TEST(Encoder, ZeroIdentityDisjoint) {
  TermStats st;
  st.add_document(tokenize("alpha beta gamma"));
  st.add_document(tokenize("delta epsilon"));
  const TfidfSentenceEncoder enc(st);
  EXPECT_TRUE(encode_sentence(enc, Tokens{}).empty());
  EXPECT_TRUE(encode_sentence(enc, Tokens{"unknown"}).empty());
  EXPECT_NEAR(enc.similarity(tokenize("alpha beta"), tokenize("alpha beta")), 1.0, 1e-12);
  EXPECT_EQ(enc.similarity(tokenize("alpha"), tokenize("delta")), 0.0);
}

TEST(Encoder, IdfFormulaMatchesOracle) {
  TermStats st;
  oracle::Tfidf ref;
  for (const char* d : {"a b c", "a b", "a", "d e f a"}) {
    st.add_document(tokenize(d));
    ref.add(tokenize(d));
  }
  const TfidfSentenceEncoder enc(st);
  for (const auto& [x, y] : {std::pair{"a b", "b c"}, {"d e", "a f"}, {"c c a", "c"}})
    EXPECT_NEAR(enc.similarity(tokenize(x), tokenize(y)), ref.cosine(tokenize(x), tokenize(y)), 1e-12);
}

TEST(ScoreParagraph, MaxOverSentences) {
  TableEncoder enc;
  enc.table = {{"s0", 0.2}, {"s1", 0.7}, {"s2", 0.4}};
  EXPECT_DOUBLE_EQ(score_paragraph(enc, para({"s0", "s1", "s2"}), Tokens{"t"}), 0.7);
}

TEST(ScoreParagraph, VerbatimTitleGivesOne) {
  TermStats st;
  st.add_document(tokenize("install canon driver on ubuntu"));
  st.add_document(tokenize("printer not found"));
  const TfidfSentenceEncoder enc(st);
  Paragraph p;
  p.sentences = {tokenize("printer not found."), tokenize("install canon driver")};
  EXPECT_NEAR(score_paragraph(enc, p, tokenize("install canon driver")), 1.0, 1e-12);
  Paragraph q;
  q.sentences = {tokenize("printer not found.")};
  EXPECT_EQ(score_paragraph(enc, q, tokenize("install canon driver")), 0.0);
}

TEST(SelectParagraph, ArgmaxAndTies) {
  TableEncoder enc;
  enc.table = {{"a", 0.1}, {"b", 0.9}, {"c", 0.3}, {"d", 0.5}, {"e", 0.5}};
  const std::vector<Paragraph> three = {para({"a"}), para({"b"}), para({"c"})};
  EXPECT_EQ(best_paragraph(enc, three, Tokens{"t"}), 1u);
  const std::vector<Paragraph> tie = {para({"d"}), para({"e"})};
  EXPECT_EQ(best_paragraph(enc, tie, Tokens{"t"}), 0u);
  const std::vector<Paragraph> one = {para({"a"})};
  EXPECT_EQ(best_paragraph(enc, one, Tokens{"t"}), 0u);
}

TEST(SelectParagraph, NoParagraphsIsUnusable) {
  TfidfSentenceEncoder enc;
  EXPECT_THROW(select_paragraph(enc, make_question(1, "t", "<pre>x</pre>")), UnusableQuestion);
}

TEST(SelectParagraph, MatchesBruteForceOnFuzz) {
  const char* vocab[] = {"apt", "grub", "boot", "wifi", "driver", "kernel", "disk", "mount", "sound", "update"};
  KeyedRng rng(5, 0);
  std::vector<Question> qs;
  for (PostId id = 1; id <= 200; ++id) {
    auto sentence = [&] {
      std::string s;
      const auto n = 1 + rng.below(5);
      for (std::size_t i = 0; i < n; ++i) s += std::string(vocab[rng.below(10)]) + " ";
      return s + ".";
    };
    std::string html, title = sentence();
    const auto n_par = 1 + rng.below(8);
    for (std::size_t p = 0; p < n_par; ++p) html += "<p>" + sentence() + " " + sentence() + "</p>";
    qs.push_back(make_question(id, title, html));
  }
  const auto corpus = seal("s", qs, {}, {});
  const auto enc = TfidfSentenceEncoder::fit(corpus);
  oracle::Tfidf ref;
  for (const auto& q : qs) {
    Tokens doc = tokenize(q.title);
    const Tokens body = tokenize(q.body_text);
    doc.insert(doc.end(), body.begin(), body.end());
    ref.add(doc);
  }
  for (const auto& q : qs) {
    const auto pq = select_paragraph(enc, q);
    std::size_t best = 0;
    double best_score = -1;
    for (std::size_t i = 0; i < pq.paragraphs.size(); ++i) {
      double f = -1;
      for (const auto& s : pq.paragraphs[i].sentences) f = std::max(f, ref.cosine(s, pq.title_tokens));
      if (f > best_score + 1e-12) {
        best_score = f;
        best = i;
      }
    }
    EXPECT_EQ(pq.selected_paragraph, best) << q.id;
    const double got = score_paragraph(enc, pq.selected(), pq.title_tokens);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Preprocess, ReportCountsAndRoundTrip) {
  std::vector<Question> qs = {make_question(1, "alpha title", "<p>" + words(12) + ". more words here.</p>", 1),
                              make_question(2, "beta title", "<p>too short</p>", 1),
                              make_question(3, "gamma title", "<p>" + words(12) + ".</p>", -3),
                              make_question(4, "delta", "<p>" + words(12) + "</p><pre>x</pre>", 0)};
  const auto c = seal("s", qs, {}, {});
  const auto dedup = preprocess(c, FilterMode::kDedup);
  EXPECT_EQ(dedup.report.total, 4u);
  EXPECT_EQ(dedup.report.kept, 2u);
  EXPECT_EQ(dedup.report.discarded.at(std::string(to_string(DiscardReason::kShortBody))), 1u);
  EXPECT_EQ(dedup.report.discarded.at(std::string(to_string(DiscardReason::kDownvoted))), 1u);
  EXPECT_DOUBLE_EQ(dedup.report.discard_rate(), 0.5);
  const auto qg = preprocess(c, FilterMode::kQuestionGeneration);
  EXPECT_EQ(qg.report.kept, 1u);

  const auto dir = std::filesystem::temp_directory_path() / "qdup_test_processed";
  std::filesystem::remove_all(dir);
  save_processed(dedup, dir);
  EXPECT_EQ(load_processed(dir), dedup.processed);
}

TEST(Preprocess, QuestionTextJoinsTitleAndSelection) {
  const auto c = seal("s", {make_question(1, "Grub fails", "<p>" + words(12) + ". grub fails at boot.</p>")}, {}, {});
  const auto r = preprocess(c, FilterMode::kDedup);
  const auto& pq = r.processed.at(1);
  const Tokens text = pq.question_text();
  ASSERT_GT(text.size(), pq.title_tokens.size());
  EXPECT_EQ(text[pq.title_tokens.size()], kSeparator);
}

TEST(Preprocess, SyntheticCorpusNearlyAllKept) {
  SyntheticSpec spec;
  spec.questions = 300;
  spec.duplicate_pairs = 30;
  const auto syn = make_synthetic_corpus(spec);
  const auto r = preprocess(syn.corpus, FilterMode::kDedup);
  EXPECT_EQ(r.report.kept, 300u);
}
