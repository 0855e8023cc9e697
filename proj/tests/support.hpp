#pragma once

// Shared test fixtures: randomized knowledge stores, an independent
// brute-force retrieval oracle (works from the n-gram bags, never touching
// the inverted index), and the synthetic-store builder used by the
// separability experiments.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dexter/entity_search.hpp"
#include "dexter/knowledge_store.hpp"
#include "dexter/rng.hpp"
#include "dexter/text.hpp"

namespace testsupport {

using namespace dexter;

// Pronounceable-ish random token; avoids stemmer-active suffixes so surface
// forms equal their normalized forms.
inline std::string random_token(Rng& rng) {
  static const char* cons = "bcdfgklmnprt";
  static const char* vow = "aeiou";
  int syllables = static_cast<int>(rng.uniform_int(1, 3));
  std::string t;
  for (int s = 0; s < syllables; ++s) {
    t.push_back(cons[rng.uniform_int(0, 11)]);
    t.push_back(vow[rng.uniform_int(0, 4)]);
  }
  if (rng.bernoulli(0.3)) t.push_back(cons[rng.uniform_int(0, 11)]);
  return t;
}

inline std::string random_phrase(Rng& rng, int min_toks, int max_toks,
                                 const std::vector<std::string>& lexicon) {
  int n = static_cast<int>(rng.uniform_int(min_toks, max_toks));
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s.push_back(' ');
    s += lexicon[rng.uniform_int(0, static_cast<int64_t>(lexicon.size()) - 1)];
  }
  return s;
}

// Random store for oracle-equivalence trials: shared lexicon so n-grams
// collide across entities, popularity already in [0,1].
inline KnowledgeStore random_store(Rng& rng, int max_entities = 200,
                                   int max_classes = 40) {
  int n_classes = static_cast<int>(rng.uniform_int(2, max_classes));
  int n_entities = static_cast<int>(rng.uniform_int(2, max_entities));
  std::vector<std::string> lexicon;
  int lex_size = static_cast<int>(rng.uniform_int(8, 40));
  for (int i = 0; i < lex_size; ++i) lexicon.push_back(random_token(rng));

  KnowledgeStore store;
  store.options.max_ngram_len = 5;
  for (int e = 0; e < n_entities; ++e) {
    EntityRecord rec;
    rec.id = "e" + std::to_string(1000 + e);
    rec.class_label = "class" + std::to_string(rng.uniform_int(0, n_classes - 1));
    rec.canonical_name = random_phrase(rng, 1, 4, lexicon);
    int n_alias = static_cast<int>(rng.uniform_int(0, 2));
    for (int a = 0; a < n_alias; ++a)
      rec.aliases.push_back(random_phrase(rng, 1, 3, lexicon));
    rec.popularity = rng.uniform();
    if (store.class_index(rec.class_label) < 0)
      store.class_set.push_back(rec.class_label);
    store.add(std::move(rec));
  }
  return store;
}

// Brute-force retrieval: scans every entity's n-gram bag, recomputes tf-idf
// from first principles and ranks with its own loops. Must equal search()
// in content and order.
inline std::vector<Candidate> brute_force_search(const std::vector<std::string>& query,
                                                 const EntityIndex& index,
                                                 const KnowledgeStore& store, int k) {
  std::vector<std::string> corrected = correct(query, index);
  std::string key = join_tokens(corrected);

  int df = 0;
  for (const auto& bag : store.ngram_bags) df += bag.count(key) > 0;
  if (df == 0) return {};
  double n = static_cast<double>(store.entities.size());
  double idf = std::log((1.0 + n) / (1.0 + df)) + 1.0;

  struct Hit {
    int entity;
    double tfidf;
  };
  std::vector<Hit> hits;
  for (size_t e = 0; e < store.entities.size(); ++e) {
    auto it = store.ngram_bags[e].find(key);
    if (it == store.ngram_bags[e].end()) continue;
    hits.push_back({static_cast<int>(e), it->second * idf});
  }
  double lo = hits[0].tfidf, hi = hits[0].tfidf;
  for (const Hit& h : hits) {
    lo = std::min(lo, h.tfidf);
    hi = std::max(hi, h.tfidf);
  }

  std::vector<Candidate> out;
  for (const std::string& cls : store.class_set) {
    std::vector<Candidate> of_class;
    for (const Hit& h : hits) {
      const EntityRecord& rec = store.entities[h.entity];
      if (rec.class_label != cls) continue;
      Candidate c;
      c.entity_id = rec.id;
      c.class_label = rec.class_label;
      c.tfidf = h.tfidf;
      c.popularity = rec.popularity;
      double norm = hi > lo ? (h.tfidf - lo) / (hi - lo) : 1.0;
      c.rank_score = index.scorer.alpha * norm + index.scorer.beta * rec.popularity;
      of_class.push_back(std::move(c));
    }
    std::sort(of_class.begin(), of_class.end(), [](const Candidate& a, const Candidate& b) {
      if (a.rank_score != b.rank_score) return a.rank_score > b.rank_score;
      return a.entity_id < b.entity_id;
    });
    if (static_cast<int>(of_class.size()) > k) of_class.resize(k);
    for (auto& c : of_class) out.push_back(std::move(c));
  }
  return out;
}

inline bool candidates_equal(const std::vector<Candidate>& a,
                             const std::vector<Candidate>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].entity_id != b[i].entity_id || a[i].class_label != b[i].class_label)
      return false;
    if (std::abs(a[i].tfidf - b[i].tfidf) > 1e-12) return false;
    if (std::abs(a[i].rank_score - b[i].rank_score) > 1e-12) return false;
  }
  return true;
}

// All indexed grams, for sampling queries in property tests.
inline std::vector<std::string> all_grams(const KnowledgeStore& store) {
  std::set<std::string> grams;
  for (const auto& bag : store.ngram_bags)
    for (const auto& [g, _] : bag) grams.insert(g);
  return {grams.begin(), grams.end()};
}

// Store for the separability experiment: `n_entities` across song / movie /
// artist / app plus `n_ambiguous` alias pairs shared between a song and a
// movie entity with a decisive popularity gap. Movie names run long (3-5
// tokens) so span deletion has something to delete.
struct SeparabilityStore {
  KnowledgeStore store;
  std::vector<std::string> ambiguous_surfaces;
};

inline SeparabilityStore make_separability_store(int n_entities, int n_ambiguous,
                                                 Rng& rng) {
  SeparabilityStore out;
  KnowledgeStore& store = out.store;
  store.options.max_ngram_len = 5;
  store.class_set = {"song", "movie", "artist", "app"};

  std::vector<std::string> lexicon;
  std::set<std::string> lexicon_set;
  while (lexicon.size() < 1500) {
    std::string t = random_token(rng);
    if (lexicon_set.insert(t).second) lexicon.push_back(t);
  }
  std::set<std::string> used;
  auto fresh_phrase = [&](int lo, int hi) {
    for (int tries = 0; tries < 200; ++tries) {
      std::string p = random_phrase(rng, lo, hi, lexicon);
      if (used.insert(p).second) return p;
    }
    std::string p = random_phrase(rng, lo, hi + 2, lexicon) + " " + random_token(rng);
    used.insert(p);
    return p;
  };
  // Ambiguous surfaces get dedicated tokens, like real distinctive titles:
  // their n-grams retrieve (mostly) just the two entities sharing the name.
  auto fresh_distinct_token = [&] {
    for (int tries = 0; tries < 500; ++tries) {
      std::string a = random_token(rng);
      std::string b = random_token(rng);
      std::string t = a + b.substr(0, 2);
      if (!lexicon_set.count(t) && used.insert(t).second) return t;
    }
    throw std::runtime_error("could not build a distinct ambiguous token");
  };
  // Single distinctive token, like "godzilla": immune to in-span deletion
  // and its unigram retrieves exactly the sharing pair.
  auto fresh_ambiguous_surface = [&] { return fresh_distinct_token(); };

  int next_id = 0;
  auto add_entity = [&](const std::string& cls, const std::string& name, double pop,
                        std::vector<std::string> aliases = {}) {
    EntityRecord rec;
    std::string id = "e" + std::to_string(100000 + next_id++);
    rec.id = id;
    rec.class_label = cls;
    rec.canonical_name = name;
    rec.aliases = std::move(aliases);
    rec.popularity = pop;
    store.add(std::move(rec));
    return id;
  };

  // Ambiguous pairs: identical surface, one class clearly more popular.
  for (int i = 0; i < n_ambiguous; ++i) {
    std::string surface = fresh_ambiguous_surface();
    bool movie_wins = rng.bernoulli(0.5);
    double hi_pop = rng.uniform(0.85, 0.95);
    double lo_pop = rng.uniform(0.05, 0.15);
    add_entity("song", surface, movie_wins ? lo_pop : hi_pop);
    add_entity("movie", surface, movie_wins ? hi_pop : lo_pop);
    out.ambiguous_surfaces.push_back(surface);
  }

  // Fillers: short song/artist/app names against long movie titles, so
  // span length and word sequence carry real signal for a text-only model
  // until deletion noise disturbs them.
  int remaining = n_entities - 2 * n_ambiguous;
  for (int i = 0; i < remaining; ++i) {
    double which = rng.uniform();
    if (which < 0.3) {
      add_entity("song", fresh_phrase(1, 2), rng.uniform(0.4, 0.7));
    } else if (which < 0.7) {
      add_entity("movie", fresh_phrase(3, 6), rng.uniform(0.4, 0.7));
    } else if (which < 0.85) {
      add_entity("artist", fresh_phrase(1, 2), rng.uniform(0.4, 0.7));
    } else {
      add_entity("app", fresh_phrase(1, 2), rng.uniform(0.4, 0.7));
    }
  }
  return out;
}

}  // namespace testsupport
