#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dexter {

// Tokens with gold/predicted tags. For NER the labels are BIO over the
// output ontology; for the parser they are per-word semantic labels and
// intent is set.
struct TaggedUtterance {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
  std::string intent;
  std::string domain;

  bool operator==(const TaggedUtterance&) const = default;
};

using Dataset = std::vector<TaggedUtterance>;

inline bool is_bio_label(const std::string& lab) {
  return lab == "O" ||
         (lab.size() > 2 && (lab[0] == 'B' || lab[0] == 'I') && lab[1] == '-');
}

inline std::string bio_entity(const std::string& lab) {
  return lab.size() > 2 ? lab.substr(2) : std::string();
}

// I-x may only follow B-x or I-x.
inline bool bio_well_formed(const std::vector<std::string>& labels) {
  for (size_t i = 0; i < labels.size(); ++i) {
    const std::string& lab = labels[i];
    if (!is_bio_label(lab)) return false;
    if (lab[0] == 'I') {
      if (i == 0) return false;
      const std::string& prev = labels[i - 1];
      if (prev == "O" || bio_entity(prev) != bio_entity(lab)) return false;
    }
  }
  return true;
}

// CoNLL-eval convention: a leading I-x (after O, after a different entity,
// or at the start) is treated as B-x. Used on predictions when the decoder
// runs unmasked; gold data is required to be well-formed instead.
inline std::vector<std::string> bio_repair(const std::vector<std::string>& labels) {
  std::vector<std::string> out = labels;
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i].empty() || out[i][0] != 'I') continue;
    bool legal = i > 0 && (out[i - 1][0] == 'B' || out[i - 1][0] == 'I') &&
                 bio_entity(out[i - 1]) == bio_entity(out[i]);
    if (!legal) out[i] = "B-" + bio_entity(out[i]);
  }
  return out;
}

struct Span {
  int start = 0;
  int end = 0;  // exclusive
  std::string label;
  bool operator==(const Span&) const = default;
};

// Maximal BIO spans. Input must be repaired or well-formed.
inline std::vector<Span> bio_spans(const std::vector<std::string>& labels) {
  std::vector<Span> spans;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty() || labels[i][0] != 'B') continue;
    Span s;
    s.start = static_cast<int>(i);
    s.label = bio_entity(labels[i]);
    size_t j = i + 1;
    while (j < labels.size() && labels[j][0] == 'I' && bio_entity(labels[j]) == s.label)
      ++j;
    s.end = static_cast<int>(j);
    spans.push_back(std::move(s));
  }
  return spans;
}

// CoNLL-style file: token <TAB> tag, blank line between utterances, with
// optional "# domain: ..." / "# intent: ..." comment headers per utterance.
inline Dataset read_conll(std::istream& in, bool validate_bio = true) {
  Dataset data;
  TaggedUtterance cur;
  std::string line;
  int line_no = 0;
  auto flush = [&] {
    if (cur.tokens.empty()) {
      cur = TaggedUtterance{};
      return;
    }
    if (validate_bio && !bio_well_formed(cur.labels))
      throw std::runtime_error("utterance ending at line " + std::to_string(line_no) +
                               ": malformed BIO label sequence");
    data.push_back(std::move(cur));
    cur = TaggedUtterance{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      auto grab = [&](const char* key) -> std::string {
        std::string prefix = std::string("# ") + key + ":";
        if (line.rfind(prefix, 0) != 0) return "";
        std::string v = line.substr(prefix.size());
        size_t b = v.find_first_not_of(' ');
        return b == std::string::npos ? "" : v.substr(b);
      };
      std::string d = grab("domain");
      std::string i = grab("intent");
      if (!d.empty()) cur.domain = d;
      if (!i.empty()) cur.intent = i;
      continue;
    }
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected token<TAB>tag");
    cur.tokens.push_back(line.substr(0, tab));
    cur.labels.push_back(line.substr(tab + 1));
  }
  flush();
  return data;
}

inline Dataset read_conll(const std::string& path, bool validate_bio = true) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  return read_conll(in, validate_bio);
}

inline void write_conll(const Dataset& data, std::ostream& out) {
  for (const auto& u : data) {
    if (!u.domain.empty()) out << "# domain: " << u.domain << "\n";
    if (!u.intent.empty()) out << "# intent: " << u.intent << "\n";
    for (size_t i = 0; i < u.tokens.size(); ++i)
      out << u.tokens[i] << "\t" << u.labels[i] << "\n";
    out << "\n";
  }
}

inline void write_conll(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  write_conll(data, out);
}

// Token, character, label and intent inventories built from training data.
// Id 0 of the token and character tables is the UNK row.
struct Vocab {
  std::vector<std::string> words{"<unk>"};
  std::vector<std::string> chars{"<unk>"};
  std::vector<std::string> labels;
  std::vector<std::string> intents;

  std::unordered_map<std::string, int> word_ids{{"<unk>", 0}};
  std::unordered_map<std::string, int> char_ids{{"<unk>", 0}};
  std::unordered_map<std::string, int> label_ids;
  std::unordered_map<std::string, int> intent_ids;

  int word_id(const std::string& w) const {
    auto it = word_ids.find(w);
    return it == word_ids.end() ? 0 : it->second;
  }
  int char_id(char c) const {
    auto it = char_ids.find(std::string(1, c));
    return it == char_ids.end() ? 0 : it->second;
  }
  int label_id(const std::string& lab) const {
    auto it = label_ids.find(lab);
    if (it == label_ids.end()) throw std::runtime_error("unknown label: " + lab);
    return it->second;
  }
  int intent_id(const std::string& intent) const {
    auto it = intent_ids.find(intent);
    if (it == intent_ids.end()) throw std::runtime_error("unknown intent: " + intent);
    return it->second;
  }

  void rebuild_maps() {
    word_ids.clear();
    char_ids.clear();
    label_ids.clear();
    intent_ids.clear();
    for (size_t i = 0; i < words.size(); ++i) word_ids[words[i]] = static_cast<int>(i);
    for (size_t i = 0; i < chars.size(); ++i) char_ids[chars[i]] = static_cast<int>(i);
    for (size_t i = 0; i < labels.size(); ++i) label_ids[labels[i]] = static_cast<int>(i);
    for (size_t i = 0; i < intents.size(); ++i)
      intent_ids[intents[i]] = static_cast<int>(i);
  }

  static Vocab build(const Dataset& train) {
    Vocab v;
    for (const auto& u : train) {
      for (const auto& tok : u.tokens) {
        if (v.word_ids.emplace(tok, static_cast<int>(v.words.size())).second)
          v.words.push_back(tok);
        for (char c : tok) {
          std::string key(1, c);
          if (v.char_ids.emplace(key, static_cast<int>(v.chars.size())).second)
            v.chars.push_back(key);
        }
      }
      for (const auto& lab : u.labels)
        if (v.label_ids.emplace(lab, -1).second) v.labels.push_back(lab);
      if (!u.intent.empty() && v.intent_ids.emplace(u.intent, -1).second)
        v.intents.push_back(u.intent);
    }
    // "O" must exist even if the training sample happens to lack it.
    if (!v.label_ids.count("O")) v.labels.push_back("O");
    v.rebuild_maps();
    return v;
  }
};

}  // namespace dexter
