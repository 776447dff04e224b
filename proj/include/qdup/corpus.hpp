#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qdup/html.hpp"
#include "qdup/xml_rows.hpp"

namespace qdup {

using PostId = std::uint64_t;

struct Question {
  PostId id = 0;
  std::string title;
  std::string body_html;
  std::string body_text;
  std::int64_t score = 0;
  std::optional<PostId> accepted_answer_id;
  std::string site;

  bool operator==(const Question&) const = default;
};

struct Answer {
  PostId id = 0;
  PostId parent_id = 0;
  std::string body_text;
  bool accepted = false;

  bool operator==(const Answer&) const = default;
};

struct DuplicateLink {
  PostId source_id = 0;
  PostId target_id = 0;

  auto operator<=>(const DuplicateLink&) const = default;
};

struct PostsParseStats {
  std::uint64_t total_rows = 0;
  std::uint64_t questions = 0;
  std::uint64_t answers = 0;
  std::uint64_t ignored = 0;  // post types other than question/answer
  std::uint64_t skipped = 0;  // rows with missing/invalid required fields
  std::vector<std::string> row_errors;  // first few, for diagnostics
};

struct PostsParseResult {
  std::vector<Question> questions;
  std::vector<Answer> answers;
  PostsParseStats stats;
};

struct LinksParseStats {
  std::uint64_t total_rows = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t other_links = 0;
  std::uint64_t self_links = 0;
  std::uint64_t skipped = 0;
};

struct LinksParseResult {
  std::vector<DuplicateLink> links;
  LinksParseStats stats;
};

struct SealReport {
  std::uint64_t dangling_links = 0;
  std::uint64_t repeated_links = 0;
  std::uint64_t orphan_answers = 0;
  std::uint64_t dangling_accepted = 0;

  bool operator==(const SealReport&) const = default;
};

namespace detail {

inline std::optional<std::int64_t> parse_int(const std::string* s) {
  if (s == nullptr || s->empty()) return std::nullopt;
  std::int64_t v = 0;
  const auto res = std::from_chars(s->data(), s->data() + s->size(), v);
  if (res.ec != std::errc{} || res.ptr != s->data() + s->size()) return std::nullopt;
  return v;
}

inline std::optional<PostId> parse_id(const std::string* s) {
  const auto v = parse_int(s);
  if (!v || *v <= 0) return std::nullopt;
  return static_cast<PostId>(*v);
}

inline bool blank(std::string_view s) {
  for (char c : s)
    if (!(c == ' ' || c == '\t' || c == '\n' || c == '\r')) return false;
  return true;
}

inline constexpr std::size_t kMaxRowErrors = 20;

}  // namespace detail

// Streams Posts.xml. PostTypeId 1 rows with a non-blank title become
// questions, PostTypeId 2 rows become answers; other types are counted as
// ignored. Rows lacking a valid Id or PostTypeId are skipped and counted.
// Malformed XML throws XmlError with the byte offset.
inline PostsParseResult parse_posts(std::istream& in, std::string_view site = {}) {
  PostsParseResult out;
  auto& st = out.stats;
  RowReader reader(in);
  XmlRow row;
  std::set<PostId> seen;
  auto skip = [&](const XmlRow& r, std::string why) {
    ++st.skipped;
    if (st.row_errors.size() < detail::kMaxRowErrors)
      st.row_errors.push_back("row at byte " + std::to_string(r.offset) + ": " + std::move(why));
  };

  while (reader.next(row)) {
    ++st.total_rows;
    const auto id = detail::parse_id(row.find("Id"));
    const auto type = detail::parse_int(row.find("PostTypeId"));
    if (!id) {
      skip(row, "missing or invalid Id");
      continue;
    }
    if (!type) {
      skip(row, "missing or invalid PostTypeId");
      continue;
    }
    if (*type != 1 && *type != 2) {
      ++st.ignored;
      continue;
    }
    if (!seen.insert(*id).second) {
      skip(row, "duplicate Id " + std::to_string(*id));
      continue;
    }
    const std::string* body = row.find("Body");
    if (*type == 1) {
      const std::string* title = row.find("Title");
      if (title == nullptr || detail::blank(*title)) {
        seen.erase(*id);
        skip(row, "question without title");
        continue;
      }
      Question q;
      q.id = *id;
      q.title = *title;
      q.body_html = body ? *body : std::string();
      q.body_text = html_to_text(q.body_html);
      q.score = detail::parse_int(row.find("Score")).value_or(0);
      q.accepted_answer_id = detail::parse_id(row.find("AcceptedAnswerId"));
      q.site = std::string(site);
      out.questions.push_back(std::move(q));
      ++st.questions;
    } else {
      const auto parent = detail::parse_id(row.find("ParentId"));
      if (!parent) {
        seen.erase(*id);
        skip(row, "answer without ParentId");
        continue;
      }
      Answer a;
      a.id = *id;
      a.parent_id = *parent;
      a.body_text = html_to_text(body ? *body : std::string());
      out.answers.push_back(std::move(a));
      ++st.answers;
    }
  }

  std::map<PostId, PostId> accepted_of;
  for (const auto& q : out.questions)
    if (q.accepted_answer_id) accepted_of.emplace(q.id, *q.accepted_answer_id);
  for (auto& a : out.answers) {
    const auto it = accepted_of.find(a.parent_id);
    a.accepted = it != accepted_of.end() && it->second == a.id;
  }
  return out;
}

// Streams PostLinks.xml and keeps LinkTypeId 3 (duplicate) rows whose two
// ids differ.
inline LinksParseResult parse_postlinks(std::istream& in) {
  LinksParseResult out;
  auto& st = out.stats;
  RowReader reader(in);
  XmlRow row;
  while (reader.next(row)) {
    ++st.total_rows;
    const auto post = detail::parse_id(row.find("PostId"));
    const auto related = detail::parse_id(row.find("RelatedPostId"));
    const auto type = detail::parse_int(row.find("LinkTypeId"));
    if (!post || !related || !type) {
      ++st.skipped;
      continue;
    }
    if (*type != 3) {
      ++st.other_links;
      continue;
    }
    if (*post == *related) {
      ++st.self_links;
      continue;
    }
    out.links.push_back({*post, *related});
    ++st.duplicates;
  }
  return out;
}

class CorpusError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A sealed, immutable corpus: every link joins two distinct existing
// questions, every answer's parent exists.
class Corpus {
 public:
  Corpus() = default;

  const std::string& site() const { return site_; }
  const std::map<PostId, Question>& questions() const { return questions_; }
  const std::map<PostId, Answer>& answers() const { return answers_; }
  const std::vector<DuplicateLink>& duplicates() const { return duplicates_; }
  const SealReport& seal_report() const { return report_; }

  const Question* question(PostId id) const {
    const auto it = questions_.find(id);
    return it == questions_.end() ? nullptr : &it->second;
  }
  const Answer* answer(PostId id) const {
    const auto it = answers_.find(id);
    return it == answers_.end() ? nullptr : &it->second;
  }
  const Answer* accepted_answer(const Question& q) const {
    if (!q.accepted_answer_id) return nullptr;
    const Answer* a = answer(*q.accepted_answer_id);
    return a != nullptr && a->accepted ? a : nullptr;
  }

  bool operator==(const Corpus&) const = default;

  friend Corpus seal(std::string site, std::vector<Question> questions, std::vector<Answer> answers,
                     std::vector<DuplicateLink> links);
  friend Corpus load_corpus(const std::filesystem::path& dir);

 private:
  std::string site_;
  std::map<PostId, Question> questions_;
  std::map<PostId, Answer> answers_;
  std::vector<DuplicateLink> duplicates_;
  SealReport report_;
};

// Repairs referential problems instead of failing: dangling and repeated
// links (either direction) and orphan answers are dropped, accepted-answer
// ids pointing nowhere are cleared. Counts land in the seal report.
inline Corpus seal(std::string site, std::vector<Question> questions, std::vector<Answer> answers,
                   std::vector<DuplicateLink> links) {
  Corpus c;
  c.site_ = std::move(site);
  for (auto& q : questions) {
    const PostId id = q.id;
    c.questions_.insert_or_assign(id, std::move(q));
  }
  for (auto& a : answers) {
    if (!c.questions_.count(a.parent_id)) {
      ++c.report_.orphan_answers;
      continue;
    }
    const PostId id = a.id;
    c.answers_.insert_or_assign(id, std::move(a));
  }
  for (auto& [id, q] : c.questions_) {
    if (!q.accepted_answer_id) continue;
    const auto it = c.answers_.find(*q.accepted_answer_id);
    if (it == c.answers_.end() || it->second.parent_id != id) {
      q.accepted_answer_id.reset();
      ++c.report_.dangling_accepted;
    } else {
      it->second.accepted = true;
    }
  }
  for (auto& [id, a] : c.answers_) {
    const auto& parent = c.questions_.at(a.parent_id);
    a.accepted = parent.accepted_answer_id && *parent.accepted_answer_id == id;
  }
  std::set<std::pair<PostId, PostId>> seen;
  for (const auto& l : links) {
    if (l.source_id == l.target_id || !c.questions_.count(l.source_id) || !c.questions_.count(l.target_id)) {
      ++c.report_.dangling_links;
      continue;
    }
    const auto key = std::minmax(l.source_id, l.target_id);
    if (!seen.insert(key).second) {
      ++c.report_.repeated_links;
      continue;
    }
    c.duplicates_.push_back(l);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Persistence: one JSON record per line, plus manifest.json.

using ordered_json = nlohmann::ordered_json;

inline std::string dump_line(const ordered_json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline ordered_json to_json(const Question& q) {
  ordered_json j;
  j["id"] = q.id;
  j["title"] = q.title;
  j["body_html"] = q.body_html;
  j["body_text"] = q.body_text;
  j["score"] = q.score;
  j["accepted_answer_id"] = q.accepted_answer_id ? ordered_json(*q.accepted_answer_id) : ordered_json(nullptr);
  j["site"] = q.site;
  return j;
}

inline ordered_json to_json(const Answer& a) {
  ordered_json j;
  j["id"] = a.id;
  j["parent_id"] = a.parent_id;
  j["body_text"] = a.body_text;
  j["accepted"] = a.accepted;
  return j;
}

inline Question question_from_json(const ordered_json& j) {
  Question q;
  q.id = j.at("id").get<PostId>();
  q.title = j.at("title").get<std::string>();
  q.body_html = j.at("body_html").get<std::string>();
  q.body_text = j.at("body_text").get<std::string>();
  q.score = j.at("score").get<std::int64_t>();
  if (!j.at("accepted_answer_id").is_null()) q.accepted_answer_id = j.at("accepted_answer_id").get<PostId>();
  q.site = j.at("site").get<std::string>();
  return q;
}

inline Answer answer_from_json(const ordered_json& j) {
  Answer a;
  a.id = j.at("id").get<PostId>();
  a.parent_id = j.at("parent_id").get<PostId>();
  a.body_text = j.at("body_text").get<std::string>();
  a.accepted = j.at("accepted").get<bool>();
  return a;
}

inline ordered_json manifest_json(const Corpus& c) {
  ordered_json m;
  m["format"] = "qdup-corpus";
  m["version"] = 1;
  m["site"] = c.site();
  std::uint64_t accepted = 0;
  for (const auto& [id, a] : c.answers()) accepted += a.accepted ? 1 : 0;
  m["counts"] = {{"questions", c.questions().size()},
                 {"answers", c.answers().size()},
                 {"accepted_answers", accepted},
                 {"duplicate_links", c.duplicates().size()}};
  const auto& r = c.seal_report();
  m["seal"] = {{"dangling_links", r.dangling_links},
               {"repeated_links", r.repeated_links},
               {"orphan_answers", r.orphan_answers},
               {"dangling_accepted", r.dangling_accepted}};
  return m;
}

// Writes questions.jsonl, answers.jsonl, links.jsonl and manifest.json.
// `extra` is merged into the manifest (e.g. parse statistics).
inline void save_corpus(const Corpus& c, const std::filesystem::path& dir, const ordered_json& extra = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "questions.jsonl", std::ios::binary);
    for (const auto& [id, q] : c.questions()) out << dump_line(to_json(q)) << '\n';
  }
  {
    std::ofstream out(dir / "answers.jsonl", std::ios::binary);
    for (const auto& [id, a] : c.answers()) out << dump_line(to_json(a)) << '\n';
  }
  {
    std::ofstream out(dir / "links.jsonl", std::ios::binary);
    for (const auto& l : c.duplicates()) {
      ordered_json j;
      j["source"] = l.source_id;
      j["target"] = l.target_id;
      out << dump_line(j) << '\n';
    }
  }
  ordered_json m = manifest_json(c);
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << m.dump(2) << '\n';
  if (!out) throw CorpusError("failed writing corpus to " + dir.string());
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& file, Fn&& fn) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(ordered_json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json", std::ios::binary);
  if (!min) throw CorpusError("no manifest.json in " + dir.string());
  const auto manifest = ordered_json::parse(min);
  if (manifest.value("format", "") != "qdup-corpus") throw CorpusError("not a corpus directory: " + dir.string());

  Corpus c;
  c.site_ = manifest.at("site").get<std::string>();
  for_each_json_line(dir / "questions.jsonl", [&](const ordered_json& j) {
    auto q = question_from_json(j);
    const PostId id = q.id;
    c.questions_.emplace(id, std::move(q));
  });
  for_each_json_line(dir / "answers.jsonl", [&](const ordered_json& j) {
    auto a = answer_from_json(j);
    const PostId id = a.id;
    c.answers_.emplace(id, std::move(a));
  });
  for_each_json_line(dir / "links.jsonl", [&](const ordered_json& j) {
    c.duplicates_.push_back({j.at("source").get<PostId>(), j.at("target").get<PostId>()});
  });
  const auto& s = manifest.at("seal");
  c.report_ = {s.at("dangling_links").get<std::uint64_t>(), s.at("repeated_links").get<std::uint64_t>(),
               s.at("orphan_answers").get<std::uint64_t>(), s.at("dangling_accepted").get<std::uint64_t>()};

  for (const auto& l : c.duplicates_)
    if (!c.questions_.count(l.source_id) || !c.questions_.count(l.target_id) || l.source_id == l.target_id)
      throw CorpusError("corpus link does not resolve: " + std::to_string(l.source_id) + " -> " +
                        std::to_string(l.target_id));
  for (const auto& [id, a] : c.answers_)
    if (!c.questions_.count(a.parent_id)) throw CorpusError("orphan answer " + std::to_string(id));
  return c;
}

// Parses Posts.xml and, when given, PostLinks.xml, then seals the result.
struct IngestResult {
  Corpus corpus;
  PostsParseStats posts;
  LinksParseStats links;
};

inline IngestResult ingest_dump(const std::filesystem::path& posts_file, const std::optional<std::filesystem::path>& links_file,
                                const std::string& site) {
  std::ifstream posts(posts_file, std::ios::binary);
  if (!posts) throw CorpusError("cannot open " + posts_file.string());
  auto p = parse_posts(posts, site);
  LinksParseResult l;
  if (links_file) {
    std::ifstream links(*links_file, std::ios::binary);
    if (!links) throw CorpusError("cannot open " + links_file->string());
    l = parse_postlinks(links);
  }
  IngestResult r;
  r.posts = std::move(p.stats);
  r.links = l.stats;
  r.corpus = seal(site, std::move(p.questions), std::move(p.answers), std::move(l.links));
  return r;
}

}  // namespace qdup
