#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "qdup/text.hpp"

namespace qdup {

namespace detail {

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline bool is_block_tag(std::string_view name) {
  static constexpr std::string_view kBlocks[] = {"div", "ul", "ol", "blockquote", "h1", "h2", "h3",
                                                 "h4", "h5", "h6", "table", "tr", "hr", "dl", "dt", "dd"};
  for (auto b : kBlocks)
    if (name == b) return true;
  return false;
}

inline bool is_dropped_tag(std::string_view name) {
  return name == "pre" || name == "code" || name == "script" || name == "style";
}

}  // namespace detail

// Flattens a post body to plain text lines. Code and images are removed;
// paragraph and list-item contents each end with a newline; newlines inside
// paragraphs survive; entities are decoded. Lines are trimmed and empty
// lines dropped, so the result holds exactly the lines the paragraph folder
// reads.
inline std::string html_to_text(std::string_view html) {
  std::string raw;
  raw.reserve(html.size());
  int dropped_depth = 0;
  auto newline = [&] {
    if (!raw.empty() && raw.back() != '\n') raw.push_back('\n');
  };

  std::size_t i = 0;
  while (i < html.size()) {
    if (html[i] != '<') {
      const std::size_t next = html.find('<', i);
      const std::size_t end = next == std::string_view::npos ? html.size() : next;
      if (dropped_depth == 0) raw += decode_entities(html.substr(i, end - i));
      i = end;
      continue;
    }
    if (html.substr(i, 4) == "<!--") {
      const std::size_t close = html.find("-->", i + 4);
      i = close == std::string_view::npos ? html.size() : close + 3;
      continue;
    }
    std::size_t j = i + 1;
    const bool closing = j < html.size() && html[j] == '/';
    if (closing) ++j;
    const std::size_t name_begin = j;
    while (j < html.size() && ((html[j] >= 'a' && html[j] <= 'z') || (html[j] >= 'A' && html[j] <= 'Z') ||
                               (html[j] >= '0' && html[j] <= '9')))
      ++j;
    if (j == name_begin) {
      // A bare '<' that does not start a tag is text.
      if (dropped_depth == 0) raw.push_back('<');
      ++i;
      continue;
    }
    const std::string name = detail::lower_ascii(html.substr(name_begin, j - name_begin));
    const std::size_t gt = html.find('>', j);
    const std::size_t tag_end = gt == std::string_view::npos ? html.size() : gt + 1;
    const bool self_closing = gt != std::string_view::npos && gt > 0 && html[gt - 1] == '/';
    i = tag_end;

    if (detail::is_dropped_tag(name)) {
      if (closing) {
        if (dropped_depth > 0) --dropped_depth;
      } else if (!self_closing) {
        ++dropped_depth;
      }
      continue;
    }
    if (dropped_depth > 0 || name == "img") continue;
    if (name == "br") {
      raw.push_back('\n');
    } else if (name == "p" || name == "li") {
      if (closing) raw.push_back('\n');
      else newline();
    } else if (detail::is_block_tag(name)) {
      newline();
    }
  }

  // No-break spaces count as ordinary spaces.
  for (std::size_t k = 0; (k = raw.find("\xC2\xA0", k)) != std::string::npos;) raw.replace(k, 2, " ");

  std::string out;
  out.reserve(raw.size());
  std::size_t b = 0;
  while (b <= raw.size()) {
    std::size_t e = raw.find('\n', b);
    if (e == std::string::npos) e = raw.size();
    std::size_t lb = b, le = e;
    auto blank = [](char c) {
      return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
    };
    while (lb < le && blank(raw[lb])) ++lb;
    while (le > lb && blank(raw[le - 1])) --le;
    if (le > lb) {
      if (!out.empty()) out.push_back('\n');
      out.append(raw, lb, le - lb);
    }
    b = e + 1;
  }
  return out;
}

}  // namespace qdup
