#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qdup/text.hpp"

namespace qdup {

class XmlError : public std::runtime_error {
 public:
  XmlError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

struct XmlRow {
  std::uint64_t offset = 0;
  std::vector<std::pair<std::string, std::string>> attributes;

  const std::string* find(std::string_view name) const {
    for (const auto& [k, v] : attributes)
      if (k == name) return &v;
    return nullptr;
  }
};

// Pull reader for the flat `<root><row .../>...</root>` layout of
// StackExchange dumps. Holds at most one markup construct in memory at a
// time, so memory is bounded by the longest single tag rather than the file.
// Checks well-formedness of the whole stream (tag nesting, attribute syntax,
// entity references) and reports the byte offset of the first violation.
class RowReader {
 public:
  explicit RowReader(std::istream& in, std::string row_name = "row",
                     std::size_t chunk_size = 1 << 16)
      : in_(in), row_name_(std::move(row_name)), chunk_size_(chunk_size) {}

  // Next element named row_name that is a direct child of the root.
  // Returns false at a clean end of document.
  bool next(XmlRow& row) {
    if (offset() == 0 && starts_with("\xEF\xBB\xBF")) pos_ += 3;
    for (;;) {
      skip_text();
      if (!ensure(1)) {
        finish();
        return false;
      }
      const std::uint64_t at = offset();
      if (starts_with("<?")) {
        consume_until("?>", "unterminated processing instruction");
      } else if (starts_with("<!--")) {
        consume_until("-->", "unterminated comment");
      } else if (starts_with("<![CDATA[")) {
        if (stack_.empty()) throw XmlError("CDATA outside root element", at);
        consume_until("]]>", "unterminated CDATA section");
      } else if (starts_with("<!")) {
        if (seen_root_) throw XmlError("declaration after root element", at);
        consume_until(">", "unterminated declaration");
      } else if (starts_with("</")) {
        close_tag(at);
      } else {
        if (open_tag(at, row)) return true;
      }
    }
  }

  std::uint64_t offset() const { return base_ + pos_; }

 private:
  bool fill() {
    if (eof_) return false;
    if (pos_ > 0 && pos_ * 2 >= buf_.size()) {
      base_ += pos_;
      buf_.erase(0, pos_);
      pos_ = 0;
    }
    const std::size_t old = buf_.size();
    buf_.resize(old + chunk_size_);
    in_.read(buf_.data() + old, static_cast<std::streamsize>(chunk_size_));
    const auto got = static_cast<std::size_t>(in_.gcount());
    buf_.resize(old + got);
    if (got == 0) eof_ = true;
    return got > 0;
  }

  bool ensure(std::size_t n) {
    while (buf_.size() - pos_ < n)
      if (!fill()) return false;
    return true;
  }

  bool starts_with(std::string_view s) {
    if (!ensure(s.size())) return false;
    return std::string_view(buf_).substr(pos_, s.size()) == s;
  }

  // Finds `s` at or after pos_ (reading more input as needed); returns index.
  std::size_t find_ahead(std::string_view s, std::size_t from_rel, const char* err) {
    const std::uint64_t at = offset();
    std::size_t search = pos_ + from_rel;
    for (;;) {
      const std::size_t hit = buf_.find(s, search);
      if (hit != std::string::npos) return hit;
      const std::size_t keep = buf_.size() >= s.size() ? buf_.size() - s.size() + 1 : 0;
      const std::size_t rel = search - pos_;
      const std::size_t keep_rel = keep > pos_ ? keep - pos_ : 0;
      if (!fill()) throw XmlError(err, at);
      search = pos_ + std::max(rel, keep_rel);
    }
  }

  void consume_until(std::string_view terminator, const char* err) {
    const std::size_t hit = find_ahead(terminator, 1, err);
    pos_ = hit + terminator.size();
  }

  void skip_text() {
    for (;;) {
      while (pos_ < buf_.size() && buf_[pos_] != '<') {
        const char c = buf_[pos_];
        if (stack_.empty() && !(c == ' ' || c == '\t' || c == '\r' || c == '\n'))
          throw XmlError("character data outside root element", offset());
        if (c == '&' && !stack_.empty()) check_reference(pos_);
        ++pos_;
      }
      if (pos_ < buf_.size()) return;
      if (!fill()) return;
    }
  }

  // Validates an entity/character reference starting at buf_[i].
  void check_reference(std::size_t i) {
    const std::uint64_t at = base_ + i;
    const std::size_t rel = i - pos_;
    const std::size_t semi = find_ahead(";", rel, "unterminated entity reference");
    i = pos_ + rel;
    const std::string_view name = std::string_view(buf_).substr(i + 1, semi - i - 1);
    if (!valid_reference(name)) throw XmlError("invalid entity reference '&" + std::string(name) + ";'", at);
  }

  static bool valid_reference(std::string_view name) {
    if (name == "amp" || name == "lt" || name == "gt" || name == "quot" || name == "apos") return true;
    if (name.size() < 2 || name[0] != '#') return false;
    const bool hex = name[1] == 'x' || name[1] == 'X';
    const std::string_view digits = name.substr(hex ? 2 : 1);
    if (digits.empty() || digits.size() > 8) return false;
    for (char c : digits) {
      const bool ok = (c >= '0' && c <= '9') ||
                      (hex && ((c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F')));
      if (!ok) return false;
    }
    return true;
  }

  static bool name_char(char c, bool first) {
    const auto u = static_cast<unsigned char>(c);
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == ':' || u >= 0x80) return true;
    return !first && ((c >= '0' && c <= '9') || c == '-' || c == '.');
  }

  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

  // Returns the index one past the closing '>' of the tag at pos_, skipping
  // '>' inside quoted attribute values.
  std::size_t tag_end(std::uint64_t at) {
    std::size_t i = pos_ + 1;
    char quote = 0;
    for (;;) {
      while (i < buf_.size()) {
        const char c = buf_[i];
        if (quote) {
          if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
          quote = c;
        } else if (c == '>') {
          return i + 1;
        } else if (c == '<') {
          throw XmlError("'<' inside tag", base_ + i);
        }
        ++i;
      }
      const std::size_t rel = i - pos_;
      if (!fill()) throw XmlError("unterminated tag", at);
      i = pos_ + rel;
    }
  }

  void close_tag(std::uint64_t at) {
    const std::size_t end = tag_end(at);
    std::string_view body = std::string_view(buf_).substr(pos_ + 2, end - pos_ - 3);
    while (!body.empty() && is_space(body.back())) body.remove_suffix(1);
    if (stack_.empty()) throw XmlError("unexpected closing tag </" + std::string(body) + ">", at);
    if (body != stack_.back())
      throw XmlError("mismatched closing tag </" + std::string(body) + ">, expected </" + stack_.back() + ">", at);
    stack_.pop_back();
    pos_ = end;
  }

  bool open_tag(std::uint64_t at, XmlRow& row) {
    const std::size_t end = tag_end(at);
    const std::string_view tag = std::string_view(buf_).substr(pos_ + 1, end - pos_ - 2);
    std::size_t i = 0;
    if (tag.empty() || !name_char(tag[0], true)) throw XmlError("invalid element name", at);
    while (i < tag.size() && name_char(tag[i], i == 0)) ++i;
    const std::string_view name = tag.substr(0, i);
    if (stack_.empty() && seen_root_) throw XmlError("second root element <" + std::string(name) + ">", at);

    const bool capture = stack_.size() == 1 && name == row_name_;
    if (capture) {
      row.offset = at;
      row.attributes.clear();
    }
    bool self_closing = false;
    for (;;) {
      const std::size_t before = i;
      while (i < tag.size() && is_space(tag[i])) ++i;
      if (i == tag.size()) break;
      if (tag[i] == '/') {
        if (i + 1 != tag.size()) throw XmlError("unexpected '/' in tag", at);
        self_closing = true;
        break;
      }
      if (i == before) throw XmlError("missing whitespace between attributes", at);
      const std::size_t name_begin = i;
      if (!name_char(tag[i], true)) throw XmlError("invalid attribute name", at);
      while (i < tag.size() && name_char(tag[i], false)) ++i;
      const std::string_view attr = tag.substr(name_begin, i - name_begin);
      while (i < tag.size() && is_space(tag[i])) ++i;
      if (i == tag.size() || tag[i] != '=') throw XmlError("attribute '" + std::string(attr) + "' without value", at);
      ++i;
      while (i < tag.size() && is_space(tag[i])) ++i;
      if (i == tag.size() || (tag[i] != '"' && tag[i] != '\'')) throw XmlError("unquoted attribute value", at);
      const char quote = tag[i++];
      const std::size_t close = tag.find(quote, i);
      if (close == std::string_view::npos) throw XmlError("unterminated attribute value", at);
      const std::string_view raw = tag.substr(i, close - i);
      for (std::size_t k = 0; k < raw.size(); ++k) {
        if (raw[k] == '<') throw XmlError("'<' in attribute value", at);
        if (raw[k] == '&') {
          const std::size_t semi = raw.find(';', k);
          if (semi == std::string_view::npos || !valid_reference(raw.substr(k + 1, semi - k - 1)))
            throw XmlError("invalid entity reference in attribute '" + std::string(attr) + "'", at);
        }
      }
      i = close + 1;
      if (capture) {
        for (const auto& existing : row.attributes)
          if (existing.first == attr) throw XmlError("duplicate attribute '" + std::string(attr) + "'", at);
        row.attributes.emplace_back(std::string(attr), decode_entities(raw));
      }
    }
    if (!self_closing) stack_.emplace_back(name);
    seen_root_ = true;
    pos_ = end;
    return capture;
  }

  void finish() {
    if (!stack_.empty()) throw XmlError("unexpected end of document inside <" + stack_.back() + ">", offset());
    if (!seen_root_) throw XmlError("document has no root element", offset());
  }

  std::istream& in_;
  std::string row_name_;
  std::size_t chunk_size_;
  std::string buf_;
  std::size_t pos_ = 0;
  std::uint64_t base_ = 0;
  bool eof_ = false;
  bool seen_root_ = false;
  std::vector<std::string> stack_;
};

}  // namespace qdup
