#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dexter {

// Porter's 1980 suffix-stripping algorithm, original rule set. Operates on
// lowercase ASCII letter strings; callers pass anything else through
// unchanged. Within a step the longest matching suffix decides; if its
// condition fails no other suffix of that step is tried.
namespace porter {

inline bool is_vowel_letter(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

// y counts as a consonant at position 0 or after a vowel.
inline bool is_consonant(std::string_view w, size_t i) {
  char c = w[i];
  if (is_vowel_letter(c)) return false;
  if (c == 'y') return i == 0 || !is_consonant(w, i - 1);
  return true;
}

// Measure m: number of VC sequences in the stem.
inline int measure(std::string_view stem) {
  int m = 0;
  size_t i = 0;
  size_t n = stem.size();
  while (i < n && is_consonant(stem, i)) ++i;
  while (i < n) {
    while (i < n && !is_consonant(stem, i)) ++i;
    if (i == n) break;
    ++m;
    while (i < n && is_consonant(stem, i)) ++i;
  }
  return m;
}

inline bool contains_vowel(std::string_view stem) {
  for (size_t i = 0; i < stem.size(); ++i)
    if (!is_consonant(stem, i)) return true;
  return false;
}

inline bool double_consonant(std::string_view w) {
  size_t n = w.size();
  if (n < 2 || w[n - 1] != w[n - 2]) return false;
  return is_consonant(w, n - 1);
}

// *o: stem ends cvc where the final consonant is not w, x or y.
inline bool ends_cvc(std::string_view w) {
  size_t n = w.size();
  if (n < 3) return false;
  if (!is_consonant(w, n - 3) || is_consonant(w, n - 2) || !is_consonant(w, n - 1))
    return false;
  char c = w[n - 1];
  return c != 'w' && c != 'x' && c != 'y';
}

inline bool ends_with(std::string_view w, std::string_view suf) {
  return w.size() >= suf.size() && w.substr(w.size() - suf.size()) == suf;
}

struct Rule {
  const char* suffix;
  const char* replacement;
};

// Longest matching suffix wins; condition is m(stem) > threshold.
inline bool apply_table(std::string& w, const Rule* rules, size_t count, int m_min) {
  size_t best = count;
  size_t best_len = 0;
  for (size_t i = 0; i < count; ++i) {
    std::string_view suf = rules[i].suffix;
    if (suf.size() > best_len && ends_with(w, suf)) {
      best = i;
      best_len = suf.size();
    }
  }
  if (best == count) return false;
  std::string stem = w.substr(0, w.size() - best_len);
  if (measure(stem) > m_min) w = stem + rules[best].replacement;
  return true;
}

inline std::string stem(std::string word) {
  if (word.size() <= 2) return word;
  std::string& w = word;

  // Step 1a
  if (ends_with(w, "sses")) {
    w.erase(w.size() - 2);
  } else if (ends_with(w, "ies")) {
    w.erase(w.size() - 2);
  } else if (!ends_with(w, "ss") && ends_with(w, "s")) {
    w.pop_back();
  }

  // Step 1b
  if (ends_with(w, "eed")) {
    if (measure(std::string_view(w).substr(0, w.size() - 3)) > 0) w.pop_back();
  } else {
    bool stripped = false;
    if (ends_with(w, "ed") && contains_vowel(std::string_view(w).substr(0, w.size() - 2))) {
      w.erase(w.size() - 2);
      stripped = true;
    } else if (ends_with(w, "ing") &&
               contains_vowel(std::string_view(w).substr(0, w.size() - 3))) {
      w.erase(w.size() - 3);
      stripped = true;
    }
    if (stripped) {
      if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
        w.push_back('e');
      } else if (double_consonant(w) && w.back() != 'l' && w.back() != 's' &&
                 w.back() != 'z') {
        w.pop_back();
      } else if (measure(w) == 1 && ends_cvc(w)) {
        w.push_back('e');
      }
    }
  }

  // Step 1c
  if (ends_with(w, "y") && contains_vowel(std::string_view(w).substr(0, w.size() - 1)))
    w.back() = 'i';

  // Step 2
  static const Rule step2[] = {
      {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
      {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},   {"entli", "ent"},
      {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
      {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
      {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}};
  apply_table(w, step2, sizeof(step2) / sizeof(step2[0]), 0);

  // Step 3
  static const Rule step3[] = {{"icate", "ic"}, {"ative", ""}, {"alize", "al"},
                               {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""},
                               {"ness", ""}};
  apply_table(w, step3, sizeof(step3) / sizeof(step3[0]), 0);

  // Step 4; "ion" additionally requires the stem to end in s or t.
  {
    static const char* step4[] = {"ement", "ance", "ence", "able", "ible", "ment",
                                  "ant",   "ent",  "ism",  "ate",  "iti",  "ous",
                                  "ive",   "ize",  "ion",  "al",   "er",   "ic",
                                  "ou"};
    const size_t n4 = sizeof(step4) / sizeof(step4[0]);
    size_t best = n4;
    size_t best_len = 0;
    for (size_t i = 0; i < n4; ++i) {
      std::string_view suf = step4[i];
      if (suf.size() > best_len && ends_with(w, suf)) {
        best = i;
        best_len = suf.size();
      }
    }
    if (best < n4) {
      std::string stem_part = w.substr(0, w.size() - best_len);
      bool cond = measure(stem_part) > 1;
      if (cond && std::string_view(step4[best]) == "ion")
        cond = !stem_part.empty() && (stem_part.back() == 's' || stem_part.back() == 't');
      if (cond) w = stem_part;
    }
  }

  // Step 5a
  if (ends_with(w, "e")) {
    std::string_view stem_part = std::string_view(w).substr(0, w.size() - 1);
    int m = measure(stem_part);
    if (m > 1 || (m == 1 && !ends_cvc(stem_part))) w.pop_back();
  }

  // Step 5b
  if (measure(w) > 1 && double_consonant(w) && w.back() == 'l') w.pop_back();

  return word;
}

}  // namespace porter

// Harman's S-stemmer: three ordered plural-stripping rules, first match
// wins. Mild by design; singular/plural conflation is what entity alias
// matching needs, and unlike heavier stemmers it leaves forms like
// "international" intact.
inline std::string s_stem(const std::string& w) {
  auto ends = [&](const char* suf) {
    size_t n = std::char_traits<char>::length(suf);
    return w.size() > n && w.compare(w.size() - n, n, suf) == 0;
  };
  if (ends("ies")) {
    if (!ends("eies") && !ends("aies")) return w.substr(0, w.size() - 3) + "y";
    return w;
  }
  if (ends("es")) {
    if (!ends("aes") && !ends("ees") && !ends("oes")) return w.substr(0, w.size() - 1);
    return w;
  }
  if (ends("s")) {
    if (!ends("us") && !ends("ss")) return w.substr(0, w.size() - 1);
    return w;
  }
  return w;
}

enum class Stemmer { none, s_stemmer, porter };

inline Stemmer stemmer_from_string(const std::string& s) {
  if (s == "none") return Stemmer::none;
  if (s == "s" || s == "s_stemmer") return Stemmer::s_stemmer;
  if (s == "porter") return Stemmer::porter;
  throw std::invalid_argument("unknown stemmer: " + s);
}

inline std::string stemmer_to_string(Stemmer s) {
  switch (s) {
    case Stemmer::none: return "none";
    case Stemmer::s_stemmer: return "s";
    case Stemmer::porter: return "porter";
  }
  return "none";
}

struct NormalizeOptions {
  Stemmer stemmer = Stemmer::s_stemmer;
};

inline bool all_ascii_letters(const std::string& s) {
  for (char c : s)
    if (c < 'a' || c > 'z') return false;
  return true;
}

// Stemming to a fixpoint keeps normalize() idempotent even where a single
// pass of the underlying stemmer is not. Converges within a few rounds.
inline std::string stem_token(const std::string& tok, Stemmer which) {
  if (which == Stemmer::none || !all_ascii_letters(tok)) return tok;
  std::string cur = tok;
  for (int round = 0; round < 8; ++round) {
    std::string next = which == Stemmer::porter ? porter::stem(cur) : s_stem(cur);
    if (next == cur) break;
    cur = std::move(next);
  }
  return cur;
}

// Lower-cases, strips punctuation (any byte outside [a-z0-9] after folding;
// removed in place, so "don't" becomes "dont"), splits on whitespace and
// stems all-letter tokens. Idempotent; empty input yields an empty list.
inline std::vector<std::string> normalize(const std::string& text,
                                          const NormalizeOptions& opt = {}) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(stem_token(cur, opt.stemmer));
      cur.clear();
    }
  };
  for (unsigned char uc : text) {
    if (std::isspace(uc)) {
      flush();
      continue;
    }
    char c = static_cast<char>(std::tolower(uc));
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) cur.push_back(c);
  }
  flush();
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) s.push_back(' ');
    s += toks[i];
  }
  return s;
}

inline std::vector<std::string> split_tokens(const std::string& joined) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : joined) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Every contiguous n-gram (arity <= max_len) of every alias, as a multiset
// keyed by the space-joined token string. Multiplicity across aliases is
// preserved; this multiset is the tf corpus.
inline std::map<std::string, int> extract_ngrams(const std::vector<std::string>& aliases,
                                                 int max_len,
                                                 const NormalizeOptions& opt = {}) {
  std::map<std::string, int> bag;
  for (const auto& alias : aliases) {
    std::vector<std::string> toks = normalize(alias, opt);
    int n = static_cast<int>(toks.size());
    for (int len = 1; len <= std::min(max_len, n); ++len) {
      for (int start = 0; start + len <= n; ++start) {
        std::string key = toks[start];
        for (int i = 1; i < len; ++i) {
          key.push_back(' ');
          key += toks[start + i];
        }
        bag[key] += 1;
      }
    }
  }
  return bag;
}

}  // namespace dexter
