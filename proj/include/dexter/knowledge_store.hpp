#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dexter/text.hpp"

namespace dexter {

// One knowledge-graph entity. Aliases are stored normalized (space-joined
// token strings); index 0 is always the normalized canonical name. The raw
// canonical name is kept for display and round-trip serialization.
struct EntityRecord {
  std::string id;
  std::string class_label;
  std::string canonical_name;
  std::vector<std::string> aliases;
  double popularity = 0.0;

  bool operator==(const EntityRecord&) const = default;
};

struct StoreOptions {
  int max_ngram_len = 5;
  Stemmer stemmer = Stemmer::s_stemmer;
  // When set, ingest rejects records whose class is not listed and fixes
  // the class order; otherwise classes are collected in first-seen order.
  std::optional<std::vector<std::string>> class_set;
};

class KnowledgeStore {
 public:
  std::vector<EntityRecord> entities;
  // Aligned with `entities`: multiset of normalized n-grams per entity,
  // keyed by the space-joined token string.
  std::vector<std::map<std::string, int>> ngram_bags;
  std::vector<std::string> class_set;
  StoreOptions options;

  size_t size() const { return entities.size(); }

  const EntityRecord* find(const std::string& id) const {
    auto it = id_to_idx_.find(id);
    return it == id_to_idx_.end() ? nullptr : &entities[it->second];
  }

  int index_of(const std::string& id) const {
    auto it = id_to_idx_.find(id);
    return it == id_to_idx_.end() ? -1 : static_cast<int>(it->second);
  }

  int class_index(const std::string& label) const {
    for (size_t i = 0; i < class_set.size(); ++i)
      if (class_set[i] == label) return static_cast<int>(i);
    return -1;
  }

  void add(EntityRecord rec) {
    if (id_to_idx_.count(rec.id))
      throw std::runtime_error("duplicate entity id: " + rec.id);
    id_to_idx_[rec.id] = entities.size();
    NormalizeOptions nopt{options.stemmer};
    std::vector<std::string> sources;
    sources.push_back(join_tokens(normalize(rec.canonical_name, nopt)));
    for (const auto& a : rec.aliases) {
      std::string norm = join_tokens(normalize(a, nopt));
      if (!norm.empty()) sources.push_back(norm);
    }
    // Repeated alias strings are kept: the n-gram multiset counts them per
    // occurrence, and dropping them would break serialization round-trips.
    rec.aliases = sources;
    ngram_bags.push_back(extract_ngrams(sources, options.max_ngram_len, nopt));
    entities.push_back(std::move(rec));
  }

  void rebuild_lookup() {
    id_to_idx_.clear();
    for (size_t i = 0; i < entities.size(); ++i) id_to_idx_[entities[i].id] = i;
  }

 private:
  std::unordered_map<std::string, size_t> id_to_idx_;
};

// Line-delimited JSON, one entity per line:
//   {"id": "...", "class": "...", "name": "...", "aliases": [...], "popularity": 0.7}
// Popularity values outside [0,1] trigger a min-max rescale over the whole
// file. Errors carry the 1-based line number.
inline KnowledgeStore ingest_stream(std::istream& in, const StoreOptions& opt = {}) {
  struct Raw {
    std::string id, cls, name;
    std::vector<std::string> aliases;
    double popularity;
    int line;
  };
  std::vector<Raw> raws;
  std::unordered_map<std::string, int> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed JSON (" + e.what() + ")");
    }
    Raw r;
    r.line = line_no;
    try {
      r.id = j.at("id").get<std::string>();
      r.cls = j.at("class").get<std::string>();
      r.name = j.at("name").get<std::string>();
      r.popularity = j.at("popularity").get<double>();
      if (j.contains("aliases"))
        r.aliases = j.at("aliases").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing or mistyped field (" + e.what() + ")");
    }
    auto it = seen_ids.find(r.id);
    if (it != seen_ids.end())
      throw std::runtime_error("line " + std::to_string(line_no) + ": duplicate id '" +
                               r.id + "' (first seen on line " +
                               std::to_string(it->second) + ")");
    seen_ids[r.id] = line_no;
    raws.push_back(std::move(r));
  }

  KnowledgeStore store;
  store.options = opt;
  if (opt.class_set) store.class_set = *opt.class_set;

  // Min-max rescale only if some value leaves [0,1].
  bool needs_rescale = false;
  double lo = 0.0, hi = 1.0;
  if (!raws.empty()) {
    lo = hi = raws[0].popularity;
    for (const auto& r : raws) {
      lo = std::min(lo, r.popularity);
      hi = std::max(hi, r.popularity);
      if (r.popularity < 0.0 || r.popularity > 1.0) needs_rescale = true;
    }
  }

  for (auto& r : raws) {
    if (opt.class_set) {
      bool known = false;
      for (const auto& c : *opt.class_set) known = known || c == r.cls;
      if (!known) {
        std::string classes;
        for (const auto& c : *opt.class_set) classes += (classes.empty() ? "" : ", ") + c;
        throw std::runtime_error("line " + std::to_string(r.line) + ": unknown class '" +
                                 r.cls + "' (configured classes: " + classes + ")");
      }
    } else if (store.class_index(r.cls) < 0) {
      store.class_set.push_back(r.cls);
    }
    EntityRecord rec;
    rec.id = std::move(r.id);
    rec.class_label = std::move(r.cls);
    rec.canonical_name = std::move(r.name);
    rec.aliases = std::move(r.aliases);
    rec.popularity =
        needs_rescale ? (hi > lo ? (r.popularity - lo) / (hi - lo) : 1.0) : r.popularity;
    store.add(std::move(rec));
  }
  return store;
}

inline KnowledgeStore ingest(const std::string& path, const StoreOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open entity file: " + path);
  return ingest_stream(in, opt);
}

// Canonical JSONL form; re-ingesting the output reproduces the store
// field-by-field (normalization is idempotent and popularity is already
// in [0,1], so no rescale fires on the second pass).
inline void serialize_store(const KnowledgeStore& store, std::ostream& out) {
  for (const auto& e : store.entities) {
    nlohmann::json j;
    j["id"] = e.id;
    j["class"] = e.class_label;
    j["name"] = e.canonical_name;
    // aliases[0] is the normalized canonical name, re-derived at ingest.
    j["aliases"] = std::vector<std::string>(e.aliases.begin() + 1, e.aliases.end());
    j["popularity"] = e.popularity;
    out << j.dump() << "\n";
  }
}

inline void serialize_store(const KnowledgeStore& store, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write store file: " + path);
  serialize_store(store, out);
}

}  // namespace dexter
