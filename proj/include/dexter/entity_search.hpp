#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dexter/knowledge_store.hpp"
#include "dexter/text.hpp"

namespace dexter {

struct Posting {
  int entity_idx;  // index into KnowledgeStore::entities
  double tfidf;    // > 0 by construction
};

// Exact rewrite table plus the fuzzy-match threshold. Keys and values are
// normalized space-joined n-gram strings. Chains are collapsed at build time
// so that every stored correction maps to itself.
struct CorrectionTable {
  std::map<std::string, std::string> exact;
  double fuzzy_threshold = 0.6;
};

struct ScorerWeights {
  double alpha = 1.0;  // query-local min-max normalized tf-idf
  double beta = 1.0;   // popularity prior
};

struct Candidate {
  std::string entity_id;
  std::string class_label;
  double tfidf = 0.0;
  double popularity = 0.0;
  double rank_score = 0.0;
};

class EntityIndex {
 public:
  // gram (joined tokens) -> postings sorted by tfidf desc, entity_id asc.
  std::unordered_map<std::string, std::vector<Posting>> postings;
  int num_entities = 0;
  CorrectionTable correction;
  ScorerWeights scorer;

  // doc_freq(g) == |postings[g]|: tf aggregates duplicates, so an entity
  // appears at most once per posting list.
  int doc_freq(const std::string& gram) const {
    auto it = postings.find(gram);
    return it == postings.end() ? 0 : static_cast<int>(it->second.size());
  }

  bool has(const std::string& gram) const { return postings.count(gram) > 0; }

  // All indexed grams of a given arity; built lazily for fuzzy correction.
  const std::vector<std::string>& grams_of_arity(int arity) const {
    if (by_arity_.empty() && !postings.empty()) {
      for (const auto& [gram, _] : postings) {
        size_t a = 1 + static_cast<size_t>(std::count(gram.begin(), gram.end(), ' '));
        if (by_arity_.size() < a + 1) by_arity_.resize(a + 1);
        by_arity_[a].push_back(gram);
      }
      for (auto& v : by_arity_) std::sort(v.begin(), v.end());
    }
    static const std::vector<std::string> empty;
    if (arity < 0 || static_cast<size_t>(arity) >= by_arity_.size()) return empty;
    return by_arity_[arity];
  }

 private:
  mutable std::vector<std::vector<std::string>> by_arity_;
};

// tf over the concatenation of an entity's n-grams, smoothed idf over the
// entity set: idf(g) = ln((1+N)/(1+df(g))) + 1, tfidf = tf * idf.
inline EntityIndex build_index(const KnowledgeStore& store) {
  if (store.entities.empty()) throw std::runtime_error("build_index: empty store");
  EntityIndex index;
  index.num_entities = static_cast<int>(store.entities.size());

  std::unordered_map<std::string, std::vector<std::pair<int, int>>> tf;  // gram -> (entity, tf)
  for (size_t e = 0; e < store.entities.size(); ++e)
    for (const auto& [gram, count] : store.ngram_bags[e])
      tf[gram].emplace_back(static_cast<int>(e), count);

  const double n = static_cast<double>(index.num_entities);
  index.postings.reserve(tf.size());
  for (auto& [gram, hits] : tf) {
    double idf = std::log((1.0 + n) / (1.0 + static_cast<double>(hits.size()))) + 1.0;
    std::vector<Posting> list;
    list.reserve(hits.size());
    for (auto [e, count] : hits) list.push_back({e, static_cast<double>(count) * idf});
    std::sort(list.begin(), list.end(), [&](const Posting& a, const Posting& b) {
      if (a.tfidf != b.tfidf) return a.tfidf > b.tfidf;
      return store.entities[a.entity_idx].id < store.entities[b.entity_idx].id;
    });
    index.postings.emplace(gram, std::move(list));
  }
  return index;
}

// Character trigram set; strings shorter than 3 contribute themselves.
inline std::set<std::string> char_trigrams(const std::string& s) {
  std::set<std::string> out;
  if (s.size() < 3) {
    if (!s.empty()) out.insert(s);
    return out;
  }
  for (size_t i = 0; i + 3 <= s.size(); ++i) out.insert(s.substr(i, 3));
  return out;
}

inline double trigram_jaccard(const std::set<std::string>& a,
                              const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& g : a) inter += b.count(g);
  size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// One rewrite step: exact table, then indexed-as-is, then the best
// equal-arity fuzzy match above threshold. Ties on similarity go to the
// lexicographically smaller gram.
inline std::vector<std::string> correct_step(const std::vector<std::string>& query,
                                             const EntityIndex& index) {
  std::string joined = join_tokens(query);
  auto it = index.correction.exact.find(joined);
  if (it != index.correction.exact.end()) return split_tokens(it->second);
  if (index.has(joined)) return query;

  const auto& candidates = index.grams_of_arity(static_cast<int>(query.size()));
  if (candidates.empty()) return query;
  std::set<std::string> qt = char_trigrams(joined);
  double best_sim = -1.0;
  const std::string* best = nullptr;
  for (const auto& gram : candidates) {
    double sim = trigram_jaccard(qt, char_trigrams(gram));
    if (sim > best_sim) {
      best_sim = sim;
      best = &gram;
    }
  }
  if (best && best_sim >= index.correction.fuzzy_threshold) return split_tokens(*best);
  return query;
}

}  // namespace detail

// Correction never fails; it degrades to identity. The single rewrite step
// is iterated to a fixpoint so correct(correct(q)) == correct(q) holds even
// when a table target is itself out of vocabulary; a rewrite cycle resolves
// to its lexicographically smallest member.
inline std::vector<std::string> correct(const std::vector<std::string>& query,
                                        const EntityIndex& index) {
  std::vector<std::string> cur = query;
  std::vector<std::string> seen;
  seen.push_back(join_tokens(cur));
  for (int step = 0; step < 16; ++step) {
    std::vector<std::string> next = detail::correct_step(cur, index);
    std::string key = join_tokens(next);
    if (key == seen.back()) return next;
    auto cycle_start = std::find(seen.begin(), seen.end(), key);
    if (cycle_start != seen.end()) {
      std::string smallest = *std::min_element(cycle_start, seen.end());
      return split_tokens(std::min(smallest, key));
    }
    seen.push_back(key);
    cur = std::move(next);
  }
  return cur;
}

// Highest count wins per observed string (ties by lexicographic corrected
// string); identity entries are dropped and chains are path-compressed so
// corrected strings map to themselves. Rewrite cycles are discarded.
inline CorrectionTable learn_corrections(
    const std::vector<std::tuple<std::string, std::string, int>>& pairs,
    double fuzzy_threshold = 0.6, const NormalizeOptions& nopt = {}) {
  std::map<std::string, std::map<std::string, long long>> counts;
  for (const auto& [observed, corrected, count] : pairs) {
    if (count < 1) throw std::runtime_error("learn_corrections: count must be >= 1");
    std::string o = join_tokens(normalize(observed, nopt));
    std::string c = join_tokens(normalize(corrected, nopt));
    counts[o][c] += count;
  }

  std::map<std::string, std::string> table;
  for (const auto& [observed, options] : counts) {
    long long best_count = -1;
    std::string best;
    for (const auto& [corrected, count] : options) {
      if (count > best_count) {  // map order makes ties lexicographic-first
        best_count = count;
        best = corrected;
      }
    }
    if (best != observed) table[observed] = best;
  }

  // Path-compress chains; drop edges that sit on a cycle.
  CorrectionTable out;
  out.fuzzy_threshold = fuzzy_threshold;
  for (const auto& [observed, _] : table) {
    std::vector<std::string> path{observed};
    std::string cur = observed;
    bool cycle = false;
    while (true) {
      auto it = table.find(cur);
      if (it == table.end()) break;
      cur = it->second;
      if (std::find(path.begin(), path.end(), cur) != path.end()) {
        cycle = true;
        break;
      }
      path.push_back(cur);
    }
    if (!cycle && cur != observed) out.exact[observed] = cur;
  }
  return out;
}

// Tab-separated: observed <TAB> corrected <TAB> count.
inline CorrectionTable load_corrections(const std::string& path,
                                        double fuzzy_threshold = 0.6,
                                        const NormalizeOptions& nopt = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corrections file: " + path);
  std::vector<std::tuple<std::string, std::string, int>> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw std::runtime_error("corrections line " + std::to_string(line_no) +
                               ": expected observed<TAB>corrected<TAB>count");
    int count = 0;
    try {
      count = std::stoi(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw std::runtime_error("corrections line " + std::to_string(line_no) +
                               ": bad count");
    }
    pairs.emplace_back(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), count);
  }
  return learn_corrections(pairs, fuzzy_threshold, nopt);
}

// Applies correction, scores the posting list with the linear scorer over
// query-local min-max normalized tf-idf plus popularity, and keeps the
// top-k per class. Output order: store class order, then rank_score desc,
// then entity_id asc.
inline std::vector<Candidate> search(const std::vector<std::string>& query,
                                     const EntityIndex& index,
                                     const KnowledgeStore& store, int k) {
  if (k < 1) throw std::runtime_error("search: k must be >= 1");
  std::vector<std::string> corrected = correct(query, index);
  auto it = index.postings.find(join_tokens(corrected));
  if (it == index.postings.end()) return {};
  const std::vector<Posting>& list = it->second;

  double lo = list.front().tfidf, hi = list.front().tfidf;
  for (const Posting& p : list) {
    lo = std::min(lo, p.tfidf);
    hi = std::max(hi, p.tfidf);
  }

  std::vector<Candidate> scored;
  scored.reserve(list.size());
  for (const Posting& p : list) {
    const EntityRecord& e = store.entities[p.entity_idx];
    double tfidf_norm = hi > lo ? (p.tfidf - lo) / (hi - lo) : 1.0;
    Candidate c;
    c.entity_id = e.id;
    c.class_label = e.class_label;
    c.tfidf = p.tfidf;
    c.popularity = e.popularity;
    c.rank_score = index.scorer.alpha * tfidf_norm + index.scorer.beta * e.popularity;
    scored.push_back(std::move(c));
  }

  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.rank_score != b.rank_score) return a.rank_score > b.rank_score;
    return a.entity_id < b.entity_id;
  };

  std::vector<Candidate> out;
  for (const std::string& cls : store.class_set) {
    std::vector<Candidate> of_class;
    for (const Candidate& c : scored)
      if (c.class_label == cls) of_class.push_back(c);
    std::sort(of_class.begin(), of_class.end(), better);
    if (static_cast<int>(of_class.size()) > k) of_class.resize(k);
    for (auto& c : of_class) out.push_back(std::move(c));
  }
  return out;
}

// --- index file -----------------------------------------------------------
//
// The on-disk index is self-contained: it embeds the per-entity attribute
// table (id, class, popularity) so `dexter search` needs no separate store.

inline void save_index(const EntityIndex& index, const KnowledgeStore& store,
                       const std::string& path) {
  nlohmann::json j;
  j["format"] = "dexter-index-v1";
  j["num_entities"] = index.num_entities;
  j["max_ngram_len"] = store.options.max_ngram_len;
  j["stemmer"] = stemmer_to_string(store.options.stemmer);
  j["classes"] = store.class_set;
  nlohmann::json ents = nlohmann::json::array();
  for (const auto& e : store.entities) {
    ents.push_back({{"id", e.id},
                    {"class", e.class_label},
                    {"name", e.canonical_name},
                    {"aliases", e.aliases},
                    {"popularity", e.popularity}});
  }
  j["entities"] = std::move(ents);

  std::map<std::string, nlohmann::json> ordered;  // deterministic output
  for (const auto& [gram, list] : index.postings) {
    nlohmann::json rows = nlohmann::json::array();
    for (const Posting& p : list) rows.push_back({p.entity_idx, p.tfidf});
    ordered[gram] = std::move(rows);
  }
  j["postings"] = ordered;
  j["corrections"] = index.correction.exact;
  j["fuzzy_threshold"] = index.correction.fuzzy_threshold;
  j["scorer"] = {{"alpha", index.scorer.alpha}, {"beta", index.scorer.beta}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index file: " + path);
  out << j.dump() << "\n";
}

struct LoadedIndex {
  KnowledgeStore store;  // records only; n-gram bags are not persisted
  EntityIndex index;
};

inline LoadedIndex load_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open index file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != std::string("dexter-index-v1"))
    throw std::runtime_error("not a dexter index file: " + path);

  LoadedIndex out;
  out.store.options.max_ngram_len = j.at("max_ngram_len").get<int>();
  out.store.options.stemmer = stemmer_from_string(j.at("stemmer").get<std::string>());
  out.store.class_set = j.at("classes").get<std::vector<std::string>>();
  for (const auto& ej : j.at("entities")) {
    EntityRecord e;
    e.id = ej.at("id").get<std::string>();
    e.class_label = ej.at("class").get<std::string>();
    e.canonical_name = ej.at("name").get<std::string>();
    e.aliases = ej.at("aliases").get<std::vector<std::string>>();
    e.popularity = ej.at("popularity").get<double>();
    out.store.entities.push_back(std::move(e));
    out.store.ngram_bags.emplace_back();
  }
  out.store.rebuild_lookup();

  out.index.num_entities = static_cast<int>(out.store.entities.size());
  for (const auto& [gram, rows] : j.at("postings").items()) {
    std::vector<Posting> list;
    for (const auto& row : rows) list.push_back({row[0].get<int>(), row[1].get<double>()});
    out.index.postings.emplace(gram, std::move(list));
  }
  out.index.correction.exact =
      j.at("corrections").get<std::map<std::string, std::string>>();
  out.index.correction.fuzzy_threshold = j.at("fuzzy_threshold").get<double>();
  out.index.scorer.alpha = j.at("scorer").at("alpha").get<double>();
  out.index.scorer.beta = j.at("scorer").at("beta").get<double>();
  return out;
}

}  // namespace dexter
