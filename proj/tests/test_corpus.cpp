#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qdup/corpus.hpp"
#include "qdup/synthetic.hpp"
#include "qdup/xml_rows.hpp"

using namespace qdup;
namespace fs = std::filesystem;

namespace {

PostsParseResult posts(const std::string& xml) {
  std::istringstream in(xml);
  return parse_posts(in, "test");
}

LinksParseResult links(const std::string& xml) {
  std::istringstream in(xml);
  return parse_postlinks(in);
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qdup_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(XmlRows, ReadsAttributesAndDecodesEntities) {
  std::istringstream in("<?xml version=\"1.0\"?>\n<posts>\n  <row Id=\"1\" Body=\"&lt;p&gt;a &amp; b&lt;/p&gt;\" />\n</posts>");
  RowReader reader(in);
  XmlRow row;
  ASSERT_TRUE(reader.next(row));
  ASSERT_NE(row.find("Body"), nullptr);
  EXPECT_EQ(*row.find("Body"), "<p>a & b</p>");
  EXPECT_EQ(row.find("Missing"), nullptr);
  EXPECT_FALSE(reader.next(row));
}

TEST(XmlRows, SkipsBomCommentsAndDoctype) {
  std::istringstream in("\xEF\xBB\xBF<?xml version=\"1.0\"?><!DOCTYPE posts><!-- c --><posts><row Id='7'/></posts>");
  RowReader reader(in);
  XmlRow row;
  ASSERT_TRUE(reader.next(row));
  EXPECT_EQ(*row.find("Id"), "7");
}

TEST(XmlRows, SmallChunksGiveSameRows) {
  std::string xml = "<posts>";
  for (int i = 0; i < 200; ++i) xml += "<row Id=\"" + std::to_string(i) + "\" Body=\"&lt;p&gt;text " + std::to_string(i) + "&lt;/p&gt;\"/>";
  xml += "</posts>";
  std::istringstream a(xml), b(xml);
  RowReader big(a), tiny(b, "row", 7);
  XmlRow ra, rb;
  int n = 0;
  while (big.next(ra)) {
    ASSERT_TRUE(tiny.next(rb));
    EXPECT_EQ(ra.attributes, rb.attributes);
    ++n;
  }
  EXPECT_FALSE(tiny.next(rb));
  EXPECT_EQ(n, 200);
}

TEST(XmlRows, MalformedReportsOffset) {
  for (const std::string bad : {"<posts><row Id=\"1\" </posts>", "<posts><row Id=1/></posts>",
                                "<posts><row Id=\"1\" Id=\"2\"/></posts>", "<posts><row A=\"&bogus;\"/></posts>",
                                "<posts><row Id=\"1\"/>", "<posts></post>", "<a/><b/>"}) {
    std::istringstream in(bad);
    RowReader reader(in);
    XmlRow row;
    try {
      while (reader.next(row)) {
      }
      ADD_FAILURE() << "accepted: " << bad;
    } catch (const XmlError& e) {
      EXPECT_LE(e.offset(), bad.size()) << bad;
    }
  }
}

TEST(ParsePosts, QuestionFieldMapping) {
  const auto r = posts("<posts><row Id=\"1\" PostTypeId=\"1\" Title=\"A\" Body=\"&lt;p&gt;b c&lt;/p&gt;\" Score=\"3\"/></posts>");
  ASSERT_EQ(r.questions.size(), 1u);
  const auto& q = r.questions[0];
  EXPECT_EQ(q.id, 1u);
  EXPECT_EQ(q.title, "A");
  EXPECT_EQ(q.score, 3);
  EXPECT_EQ(q.body_html, "<p>b c</p>");
  EXPECT_EQ(q.body_text, "b c");
  EXPECT_EQ(q.site, "test");
  EXPECT_FALSE(q.accepted_answer_id.has_value());
}

TEST(ParsePosts, OtherPostTypesIgnored) {
  const auto r = posts("<posts><row Id=\"1\" PostTypeId=\"4\" Body=\"wiki\"/></posts>");
  EXPECT_TRUE(r.questions.empty());
  EXPECT_TRUE(r.answers.empty());
  EXPECT_EQ(r.stats.ignored, 1u);
}

TEST(ParsePosts, MissingRequiredAttributesSkipped) {
  const auto r = posts(
      "<posts><row PostTypeId=\"1\" Title=\"x\"/><row Id=\"2\" Title=\"x\"/><row Id=\"abc\" PostTypeId=\"1\" Title=\"x\"/>"
      "<row Id=\"3\" PostTypeId=\"1\" Title=\"  \"/><row Id=\"4\" PostTypeId=\"2\"/></posts>");
  EXPECT_EQ(r.stats.skipped, 5u);
  EXPECT_EQ(r.stats.row_errors.size(), 5u);
  EXPECT_TRUE(r.questions.empty());
}

TEST(ParsePosts, AcceptedFlagFollowsParent) {
  const auto r = posts(
      "<posts><row Id=\"1\" PostTypeId=\"1\" Title=\"q\" AcceptedAnswerId=\"3\"/>"
      "<row Id=\"2\" PostTypeId=\"2\" ParentId=\"1\" Body=\"no\"/>"
      "<row Id=\"3\" PostTypeId=\"2\" ParentId=\"1\" Body=\"yes\"/></posts>");
  ASSERT_EQ(r.answers.size(), 2u);
  EXPECT_FALSE(r.answers[0].accepted);
  EXPECT_TRUE(r.answers[1].accepted);
}

TEST(ParsePosts, CountsAddUpToRows) {
  const auto r = posts(
      "<posts><row Id=\"1\" PostTypeId=\"1\" Title=\"q\"/><row Id=\"1\" PostTypeId=\"1\" Title=\"dup\"/>"
      "<row Id=\"2\" PostTypeId=\"2\" ParentId=\"1\"/><row Id=\"5\" PostTypeId=\"5\"/><row Id=\"6\"/></posts>");
  const auto& s = r.stats;
  EXPECT_EQ(s.total_rows, 5u);
  EXPECT_EQ(s.questions + s.answers + s.ignored + s.skipped, s.total_rows);
}

TEST(ParsePostLinks, OnlyDistinctDuplicateLinks) {
  const auto r = links(
      "<postlinks><row Id=\"1\" PostId=\"5\" RelatedPostId=\"9\" LinkTypeId=\"3\"/>"
      "<row Id=\"2\" PostId=\"5\" RelatedPostId=\"9\" LinkTypeId=\"1\"/>"
      "<row Id=\"3\" PostId=\"5\" RelatedPostId=\"5\" LinkTypeId=\"3\"/>"
      "<row Id=\"4\" RelatedPostId=\"5\" LinkTypeId=\"3\"/></postlinks>");
  ASSERT_EQ(r.links.size(), 1u);
  EXPECT_EQ(r.links[0], (DuplicateLink{5, 9}));
  EXPECT_EQ(r.stats.other_links, 1u);
  EXPECT_EQ(r.stats.self_links, 1u);
  EXPECT_EQ(r.stats.skipped, 1u);
  EXPECT_EQ(r.stats.duplicates + r.stats.other_links + r.stats.self_links + r.stats.skipped, r.stats.total_rows);
}

TEST(Seal, DropsDanglingLinksAndOrphans) {
  std::vector<Question> qs = {{5, "five", "", "", 0, std::nullopt, "s"}, {6, "six", "", "", 0, 99, "s"}};
  std::vector<Answer> as = {{7, 5, "ok", false}, {8, 42, "orphan", false}};
  const auto c = seal("s", qs, as, {{5, 9}, {5, 6}, {6, 5}, {5, 5}});
  EXPECT_EQ(c.seal_report().dangling_links, 2u);
  EXPECT_EQ(c.seal_report().repeated_links, 1u);
  EXPECT_EQ(c.seal_report().orphan_answers, 1u);
  EXPECT_EQ(c.seal_report().dangling_accepted, 1u);
  ASSERT_EQ(c.duplicates().size(), 1u);
  EXPECT_EQ(c.duplicates()[0], (DuplicateLink{5, 6}));
  EXPECT_EQ(c.answers().size(), 1u);
  EXPECT_FALSE(c.question(6)->accepted_answer_id.has_value());
}

TEST(Seal, LinklessCorpusIsValid) {
  const auto c = seal("s", {{1, "t", "", "", 0, std::nullopt, "s"}}, {}, {});
  EXPECT_TRUE(c.duplicates().empty());
  EXPECT_EQ(c.questions().size(), 1u);
}

TEST(Seal, LinksResolve) {
  SyntheticSpec spec;
  spec.questions = 300;
  spec.duplicate_pairs = 40;
  const auto syn = make_synthetic_corpus(spec);
  for (const auto& l : syn.corpus.duplicates()) {
    EXPECT_NE(l.source_id, l.target_id);
    EXPECT_NE(syn.corpus.question(l.source_id), nullptr);
    EXPECT_NE(syn.corpus.question(l.target_id), nullptr);
  }
}

TEST(Persistence, RoundTripIsExact) {
  SyntheticSpec spec;
  spec.questions = 200;
  spec.duplicate_pairs = 20;
  const auto c = make_synthetic_corpus(spec).corpus;
  const auto dir = temp_dir("roundtrip");
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  EXPECT_EQ(back, c);
  const auto dir2 = temp_dir("roundtrip2");
  save_corpus(back, dir2);
  for (const char* f : {"questions.jsonl", "answers.jsonl", "links.jsonl", "manifest.json"}) {
    std::ifstream a(dir / f, std::ios::binary), b(dir2 / f, std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str()) << f;
  }
}

TEST(Persistence, UnicodeAndSpecialCharactersSurvive) {
  Question q{3, "caf\xC3\xA9 \"quoted\" \\ tab\t", "<p>x</p>", "x\nline", -2, 4, "s"};
  const auto c = seal("s", {q}, {{4, 3, "ans \xE2\x9C\x93", true}}, {});
  const auto dir = temp_dir("unicode");
  save_corpus(c, dir);
  EXPECT_EQ(load_corpus(dir), c);
}

TEST(Persistence, DumpXmlParsesBackToSameCorpus) {
  SyntheticSpec spec;
  spec.questions = 120;
  spec.duplicate_pairs = 15;
  const auto c = make_synthetic_corpus(spec).corpus;
  const auto dir = temp_dir("dumpxml");
  write_dump_xml(c, dir);
  std::ifstream p(dir / "Posts.xml", std::ios::binary), l(dir / "PostLinks.xml", std::ios::binary);
  auto pr = parse_posts(p, c.site());
  auto lr = parse_postlinks(l);
  const auto back = seal(c.site(), pr.questions, pr.answers, lr.links);
  EXPECT_EQ(back, c);
}

TEST(Persistence, ParsingIsDeterministic) {
  const std::string xml =
      "<posts><row Id=\"1\" PostTypeId=\"1\" Title=\"q\" Body=\"&lt;p&gt;x y&lt;/p&gt;\"/>"
      "<row Id=\"2\" PostTypeId=\"2\" ParentId=\"1\" Body=\"a\"/></posts>";
  const auto a = posts(xml), b = posts(xml);
  EXPECT_EQ(a.questions, b.questions);
  EXPECT_EQ(a.answers, b.answers);
}

TEST(Persistence, LoadRejectsMissingDirectory) {
  EXPECT_THROW(load_corpus(fs::temp_directory_path() / "qdup_definitely_missing"), CorpusError);
}

TEST(Ingest, DumpFilesGiveSealedCorpus) {
  SyntheticSpec spec;
  spec.questions = 80;
  spec.duplicate_pairs = 10;
  const auto c = make_synthetic_corpus(spec).corpus;
  const auto dir = temp_dir("ingest");
  write_dump_xml(c, dir);
  const auto r = ingest_dump(dir / "Posts.xml", dir / "PostLinks.xml", c.site());
  EXPECT_EQ(r.corpus, c);
  EXPECT_EQ(r.posts.questions, 80u);
  EXPECT_EQ(r.links.duplicates, 10u);
  const auto no_links = ingest_dump(dir / "Posts.xml", std::nullopt, c.site());
  EXPECT_TRUE(no_links.corpus.duplicates().empty());
  EXPECT_THROW(ingest_dump(dir / "Missing.xml", std::nullopt, "x"), CorpusError);
}
