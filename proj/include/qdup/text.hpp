#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qdup {

using Token = std::string;
using Tokens = std::vector<Token>;

// Joins the question title and its selected paragraph. The tokenizer can
// never produce it, so it never collides with a real word.
inline constexpr std::string_view kSeparator = "[SEP]";

namespace detail {

// Decodes one UTF-8 code point starting at text[i]; advances i. Invalid
// sequences yield the raw byte as a code point so nothing is lost.
inline char32_t next_code_point(std::string_view text, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= text.size()) return -1;
    const auto b = static_cast<unsigned char>(text[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) {
      i += 2;
      return (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      i += 3;
      return (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      i += 4;
      return (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) |
             (char32_t(c2) << 6) | char32_t(c3);
    }
  }
  ++i;
  return b0;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

enum class CharClass { kWord, kDigit, kApostrophe, kPeriod, kComma, kQuestion, kOther };

inline bool is_ascii_alpha(char32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
}

inline CharClass classify(char32_t cp) {
  if (cp >= '0' && cp <= '9') return CharClass::kDigit;
  if (is_ascii_alpha(cp) || cp == '_') return CharClass::kWord;
  if (cp == '\'' || cp == 0x2019) return CharClass::kApostrophe;
  if (cp == '.') return CharClass::kPeriod;
  if (cp == ',') return CharClass::kComma;
  if (cp == '?') return CharClass::kQuestion;
  if (cp < 0x80) return CharClass::kOther;
  // Latin-1 punctuation block, general punctuation, CJK punctuation.
  if ((cp >= 0x80 && cp <= 0xBF) || cp == 0xD7 || cp == 0xF7) return CharClass::kOther;
  if (cp >= 0x2000 && cp <= 0x206F) return CharClass::kOther;
  if (cp >= 0x3000 && cp <= 0x303F) return CharClass::kOther;
  if (cp == 0xFEFF || cp == 0xFFFD) return CharClass::kOther;
  return CharClass::kWord;
}

inline bool is_wordish(CharClass c) { return c == CharClass::kWord || c == CharClass::kDigit; }

}  // namespace detail

// Lowercased word tokens. Apostrophes and periods join two word characters
// ("can't", "12.04", "grub.cfg"), commas join two digits. Every '?' becomes
// its own token; all other punctuation separates tokens and is dropped.
inline Tokens tokenize(std::string_view text) {
  using detail::CharClass;
  struct Cp {
    char32_t cp;
    CharClass cls;
  };
  std::vector<Cp> cps;
  cps.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const char32_t cp = detail::next_code_point(text, i);
    cps.push_back({cp, detail::classify(cp)});
  }

  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t k = 0; k < cps.size(); ++k) {
    const auto [cp, cls] = cps[k];
    if (detail::is_wordish(cls)) {
      if (cp < 0x80) {
        cur.push_back(static_cast<char>(cp >= 'A' && cp <= 'Z' ? cp - 'A' + 'a' : cp));
      } else {
        detail::append_utf8(cur, cp);
      }
      continue;
    }
    const bool prev_word = !cur.empty() && k > 0 && detail::is_wordish(cps[k - 1].cls);
    const bool next_word = k + 1 < cps.size() && detail::is_wordish(cps[k + 1].cls);
    if (prev_word && next_word) {
      if (cls == CharClass::kApostrophe || cls == CharClass::kPeriod) {
        cur.push_back(cls == CharClass::kPeriod ? '.' : '\'');
        continue;
      }
      if (cls == CharClass::kComma && cps[k - 1].cls == CharClass::kDigit &&
          cps[k + 1].cls == CharClass::kDigit) {
        cur.push_back(',');
        continue;
      }
    }
    flush();
    if (cls == CharClass::kQuestion) out.emplace_back("?");
  }
  flush();
  return out;
}

// Character spans [begin, end) of sentences. A sentence ends at '.', '!' or
// '?' followed by whitespace or end of text. Spans whose text yields no
// tokens are dropped.
inline std::vector<std::pair<std::size_t, std::size_t>> sentence_spans(std::string_view text) {
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    if (b < e && !tokenize(text.substr(b, e - b)).empty()) spans.emplace_back(b, e);
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || is_space(text[i + 1]))) {
      emit(start, i + 1);
      start = i + 1;
    }
  }
  emit(start, text.size());
  return spans;
}

inline std::vector<Tokens> split_sentences(std::string_view text) {
  std::vector<Tokens> out;
  for (const auto& [b, e] : sentence_spans(text)) out.push_back(tokenize(text.substr(b, e - b)));
  return out;
}

// Decodes named (amp, lt, gt, quot, apos, nbsp) and numeric character
// references. Unknown references are kept verbatim.
inline std::string decode_entities(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size();) {
    if (in[i] != '&') {
      out.push_back(in[i++]);
      continue;
    }
    const std::size_t semi = in.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out.push_back(in[i++]);
      continue;
    }
    const std::string_view name = in.substr(i + 1, semi - i - 1);
    char32_t cp = 0;
    bool ok = true;
    if (name == "amp") cp = '&';
    else if (name == "lt") cp = '<';
    else if (name == "gt") cp = '>';
    else if (name == "quot") cp = '"';
    else if (name == "apos") cp = '\'';
    else if (name == "nbsp") cp = 0xA0;
    else if (name.size() > 1 && name[0] == '#') {
      std::uint32_t value = 0;
      const bool hex = name[1] == 'x' || name[1] == 'X';
      const std::string_view digits = name.substr(hex ? 2 : 1);
      const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), value, hex ? 16 : 10);
      ok = !digits.empty() && res.ec == std::errc{} && res.ptr == digits.data() + digits.size() &&
           value > 0 && value <= 0x10FFFF;
      cp = value;
    } else {
      ok = false;
    }
    if (!ok) {
      out.push_back(in[i++]);
      continue;
    }
    detail::append_utf8(out, cp);
    i = semi + 1;
  }
  return out;
}

// Rule-based suffix stripper (plural, -ed/-ing, -ly, final -y). Only
// purely alphabetic tokens are touched.
inline std::string stem(std::string_view word) {
  std::string w(word);
  if (w.size() < 3) return w;
  for (char c : w)
    if (c < 'a' || c > 'z') return w;

  auto is_vowel_at = [&](std::size_t i) {
    const char c = w[i];
    if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return true;
    return c == 'y' && i > 0 && !(w[i - 1] == 'a' || w[i - 1] == 'e' || w[i - 1] == 'i' ||
                                  w[i - 1] == 'o' || w[i - 1] == 'u');
  };
  auto has_vowel = [&](std::size_t len) {
    for (std::size_t i = 0; i < len; ++i)
      if (is_vowel_at(i)) return true;
    return false;
  };
  auto ends = [&](std::string_view s) {
    return w.size() >= s.size() && std::string_view(w).substr(w.size() - s.size()) == s;
  };

  if (ends("sses")) w.resize(w.size() - 2);
  else if (ends("ies")) w.resize(w.size() - 2);
  else if (ends("ss")) {}
  else if (ends("s") && w.size() > 3 && !ends("us") && !ends("is")) w.pop_back();

  bool strip_fix = false;
  if (ends("eed")) {
    if (w.size() > 4) w.pop_back();
  } else if (ends("ed") && w.size() > 4 && has_vowel(w.size() - 2)) {
    w.resize(w.size() - 2);
    strip_fix = true;
  } else if (ends("ing") && w.size() > 5 && has_vowel(w.size() - 3)) {
    w.resize(w.size() - 3);
    strip_fix = true;
  }
  if (strip_fix) {
    if (ends("at") || ends("bl") || ends("iz")) {
      w.push_back('e');
    } else if (w.size() >= 2 && w[w.size() - 1] == w[w.size() - 2] && !is_vowel_at(w.size() - 1) &&
               w.back() != 'l' && w.back() != 's' && w.back() != 'z') {
      w.pop_back();
    }
  }
  if (ends("ly") && w.size() > 4) w.resize(w.size() - 2);
  if (ends("y") && w.size() > 2 && has_vowel(w.size() - 1)) w.back() = 'i';
  return w;
}

inline Tokens stem_all(std::span<const Token> tokens) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(stem(t));
  return out;
}

inline std::string join(std::span<const Token> tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

// Splits on ASCII whitespace. Inverse of join() for tokenizer output.
inline Tokens split_ws(std::string_view s) {
  Tokens out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
    const std::size_t b = i;
    while (i < s.size() && !(s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
    if (i > b) out.emplace_back(s.substr(b, i - b));
  }
  return out;
}

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::array<char, 17> buf{};
  static constexpr char kDigits[] = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return std::string(buf.data(), 16);
}

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: " + std::string(s));
  return v;
}

}  // namespace qdup
