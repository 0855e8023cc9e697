#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dexter/dataset.hpp"
#include "dexter/knowledge_store.hpp"
#include "dexter/rng.hpp"
#include "dexter/tagger.hpp"
#include "dexter/text.hpp"

namespace dexter {

// Character-level ASR-style confusions, loaded from an editable text file of
// "from<TAB>to" lines (single characters).
struct ConfusionTable {
  std::map<char, std::vector<char>> subs;

  static ConfusionTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open confusion table: " + path);
    ConfusionTable t;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      size_t tab = line.find('\t');
      if (tab != 1 || line.size() < 3)
        throw std::runtime_error("confusion table: expected single-char<TAB>single-char");
      t.subs[line[0]].push_back(line[2]);
    }
    return t;
  }
};

// Deletes each token inside an entity span with the given probability,
// always keeping at least one token per span, and repairs the BIO tags of
// what remains. Emulates dropped words in noisy transcriptions.
inline TaggedUtterance apply_span_deletion(const TaggedUtterance& u, double rate,
                                           Rng& rng) {
  std::vector<Span> spans = bio_spans(u.labels);
  std::vector<bool> drop(u.tokens.size(), false);
  for (const Span& s : spans) {
    int kept = s.end - s.start;
    for (int t = s.start; t < s.end; ++t) {
      if (kept > 1 && rng.bernoulli(rate)) {
        drop[t] = true;
        --kept;
      }
    }
  }
  TaggedUtterance out;
  out.intent = u.intent;
  out.domain = u.domain;
  std::string prev_entity;
  for (size_t t = 0; t < u.tokens.size(); ++t) {
    if (drop[t]) continue;
    out.tokens.push_back(u.tokens[t]);
    std::string lab = u.labels[t];
    if (lab.size() > 2 && lab[0] == 'I') {
      std::string ent = bio_entity(lab);
      if (out.labels.empty() || bio_entity(out.labels.back()) != ent ||
          out.labels.back() == "O")
        lab = "B-" + ent;
    }
    out.labels.push_back(std::move(lab));
  }
  return out;
}

inline Dataset apply_span_deletion(const Dataset& data, double rate, Rng& rng) {
  Dataset out;
  out.reserve(data.size());
  for (const auto& u : data) out.push_back(apply_span_deletion(u, rate, rng));
  return out;
}

// Substitutes one confusable character per hit token.
inline TaggedUtterance apply_char_substitution(const TaggedUtterance& u,
                                               const ConfusionTable& table, double rate,
                                               Rng& rng) {
  TaggedUtterance out = u;
  for (auto& tok : out.tokens) {
    if (!rng.bernoulli(rate)) continue;
    std::vector<size_t> positions;
    for (size_t i = 0; i < tok.size(); ++i)
      if (table.subs.count(tok[i])) positions.push_back(i);
    if (positions.empty()) continue;
    size_t pos = positions[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(positions.size()) - 1))];
    const std::vector<char>& choices = table.subs.at(tok[pos]);
    tok[pos] =
        choices[static_cast<size_t>(rng.uniform_int(0, (int64_t)choices.size() - 1))];
  }
  return out;
}

// --- generator ---------------------------------------------------------------

struct SlotSpec {
  std::vector<std::string> classes;  // alternatives; actual class picked per item
};

struct TemplateSpec {
  std::string domain;
  std::string intent;
  std::vector<std::string> tokens;  // literal carrier tokens
  std::vector<int> slot_at;         // position in tokens -> slot index, -1 if literal
  std::vector<SlotSpec> slots;
};

struct SynthConfig {
  std::string domain = "general";
  Task task = Task::ner;
  std::vector<TemplateSpec> templates;
  ClassMap class_map;                       // identity over store classes if empty
  std::vector<double> entity_mix{0.323, 0.554, 0.116};
  double ambiguous_fraction = 0.0;          // of entity-bearing utterances
  double ambiguous_holdout_fraction = 0.5;  // aliases reserved for the test split
  double canonical_alias_prob = 0.84;
  double deletion_rate = 0.0;
  double substitution_rate = 0.0;
  std::string confusion_table_path;
  int train_count = 1000, dev_count = 200, test_count = 200;
  std::string parser_other_label = "other";
};

// Template text: literal tokens and slots like "{song}" or "{song|movie}".
inline TemplateSpec parse_template(const std::string& domain, const std::string& intent,
                                   const std::string& text) {
  TemplateSpec t;
  t.domain = domain;
  t.intent = intent;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    if (tok.size() >= 2 && tok.front() == '{' && tok.back() == '}') {
      SlotSpec slot;
      std::string inner = tok.substr(1, tok.size() - 2);
      std::string cur;
      for (char c : inner) {
        if (c == '|') {
          if (!cur.empty()) slot.classes.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      if (!cur.empty()) slot.classes.push_back(cur);
      if (slot.classes.empty())
        throw std::runtime_error("template slot with no classes: " + text);
      t.slot_at.push_back(static_cast<int>(t.slots.size()));
      t.slots.push_back(std::move(slot));
      t.tokens.push_back(tok);  // placeholder, replaced at fill time
    } else {
      t.slot_at.push_back(-1);
      t.tokens.push_back(tok);
    }
  }
  return t;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j,
                                          const KnowledgeStore& store) {
  SynthConfig cfg;
  cfg.domain = j.value("domain", cfg.domain);
  cfg.task = task_from_string(j.value("task", std::string("ner")));
  for (const auto& tj : j.at("templates")) {
    cfg.templates.push_back(parse_template(tj.value("domain", cfg.domain),
                                           tj.value("intent", std::string("none")),
                                           tj.at("text").get<std::string>()));
  }
  if (j.contains("class_map")) {
    for (const auto& [k, v] : j.at("class_map").items())
      cfg.class_map.kg_to_ner[k] = v.get<std::string>();
  } else {
    cfg.class_map = ClassMap::identity(store.class_set);
  }
  if (j.contains("entity_mix"))
    cfg.entity_mix = j.at("entity_mix").get<std::vector<double>>();
  cfg.ambiguous_fraction = j.value("ambiguous_fraction", cfg.ambiguous_fraction);
  cfg.ambiguous_holdout_fraction =
      j.value("ambiguous_holdout_fraction", cfg.ambiguous_holdout_fraction);
  cfg.canonical_alias_prob = j.value("canonical_alias_prob", cfg.canonical_alias_prob);
  cfg.deletion_rate = j.value("deletion_rate", cfg.deletion_rate);
  cfg.substitution_rate = j.value("substitution_rate", cfg.substitution_rate);
  cfg.confusion_table_path = j.value("confusion_table", cfg.confusion_table_path);
  if (j.contains("counts")) {
    cfg.train_count = j.at("counts").value("train", cfg.train_count);
    cfg.dev_count = j.at("counts").value("dev", cfg.dev_count);
    cfg.test_count = j.at("counts").value("test", cfg.test_count);
  }
  return cfg;
}

// A normalized alias string carried by entities of at least two classes.
// The popularity winner decides the gold class wherever the alias is used.
struct AmbiguousAlias {
  std::string surface;           // normalized joined alias
  int winner_entity = -1;        // index into store.entities
  std::vector<int> entity_idxs;  // all carriers
};

inline std::vector<AmbiguousAlias> find_ambiguous_aliases(const KnowledgeStore& store) {
  std::map<std::string, std::vector<int>> by_surface;
  for (size_t e = 0; e < store.entities.size(); ++e)
    for (const auto& alias : store.entities[e].aliases)
      if (!alias.empty()) by_surface[alias].push_back(static_cast<int>(e));
  std::vector<AmbiguousAlias> out;
  for (auto& [surface, idxs] : by_surface) {
    std::set<std::string> classes;
    for (int e : idxs) classes.insert(store.entities[e].class_label);
    if (classes.size() < 2) continue;
    AmbiguousAlias a;
    a.surface = surface;
    std::sort(idxs.begin(), idxs.end(), [&](int x, int y) {
      if (store.entities[x].popularity != store.entities[y].popularity)
        return store.entities[x].popularity > store.entities[y].popularity;
      return store.entities[x].id < store.entities[y].id;
    });
    a.winner_entity = idxs[0];
    a.entity_idxs = idxs;
    out.push_back(std::move(a));
  }
  return out;
}

struct SynthResult {
  Dataset train, dev, test;
  nlohmann::json stats;
};

namespace detail {

struct EntityPools {
  std::map<std::string, std::vector<int>> by_class;
  std::set<std::string> ambiguous_surfaces;     // every ambiguous alias
  std::set<std::string> holdout_surfaces;       // test-only ambiguous aliases
  std::map<std::string, int> winner_of;         // surface -> entity idx
  std::vector<AmbiguousAlias> train_pool, test_pool;
};

struct FilledSlot {
  std::vector<std::string> tokens;
  std::string kg_class;
};

}  // namespace detail

// Fills carrier templates with sampled entity aliases, enforcing the exact
// 0/1/2-entity mix by quota, reserving a slice of the ambiguous aliases for
// the test split, and guaranteeing that any ambiguous surface is labeled
// with its popularity winner's class. Optional noise: in-span token deletion
// and confusion-table character substitution.
inline SynthResult synth_dataset(const SynthConfig& cfg, const KnowledgeStore& store,
                                 Rng rng) {
  if (cfg.templates.empty()) throw std::runtime_error("synth: no templates");
  cfg.class_map.validate_total(store.class_set);

  detail::EntityPools pools;
  for (size_t e = 0; e < store.entities.size(); ++e)
    pools.by_class[store.entities[e].class_label].push_back(static_cast<int>(e));
  for (const auto& t : cfg.templates)
    for (const auto& slot : t.slots)
      for (const auto& cls : slot.classes) {
        if (store.class_index(cls) < 0)
          throw std::runtime_error("template references unknown class: " + cls);
        if (pools.by_class[cls].empty())
          throw std::runtime_error("template references empty class: " + cls);
      }

  std::vector<AmbiguousAlias> ambiguous = find_ambiguous_aliases(store);
  rng.shuffle(ambiguous);
  size_t holdout =
      static_cast<size_t>(cfg.ambiguous_holdout_fraction * ambiguous.size());
  for (size_t i = 0; i < ambiguous.size(); ++i) {
    pools.ambiguous_surfaces.insert(ambiguous[i].surface);
    pools.winner_of[ambiguous[i].surface] = ambiguous[i].winner_entity;
    if (i < holdout) {
      pools.holdout_surfaces.insert(ambiguous[i].surface);
      pools.test_pool.push_back(ambiguous[i]);
    } else {
      pools.train_pool.push_back(ambiguous[i]);
    }
  }

  // Templates bucketed by slot count.
  size_t buckets = cfg.entity_mix.size();
  std::vector<std::vector<int>> by_slots(buckets);
  for (size_t i = 0; i < cfg.templates.size(); ++i) {
    size_t n = cfg.templates[i].slots.size();
    if (n >= buckets)
      throw std::runtime_error("template has more slots than entity_mix covers");
    by_slots[n].push_back(static_cast<int>(i));
  }

  ConfusionTable confusions;
  if (cfg.substitution_rate > 0.0) {
    if (cfg.confusion_table_path.empty())
      throw std::runtime_error("substitution_rate > 0 needs a confusion_table");
    confusions = ConfusionTable::load(cfg.confusion_table_path);
  }

  // Picks an alias surface for an entity; canonical name with the configured
  // probability, otherwise one of the other aliases.
  auto pick_alias = [&](int entity, Rng& r) -> std::string {
    const EntityRecord& rec = store.entities[entity];
    if (rec.aliases.size() <= 1 || r.bernoulli(cfg.canonical_alias_prob))
      return rec.aliases[0];
    return rec.aliases[static_cast<size_t>(
        r.uniform_int(1, static_cast<int64_t>(rec.aliases.size()) - 1))];
  };

  // Samples a slot filler. Ambiguity discipline: a surface in the ambiguous
  // pool may only appear labeled with its winner's class, and surfaces held
  // out for test never appear in train/dev.
  auto fill_slot = [&](const SlotSpec& slot, bool is_test, Rng& r) -> detail::FilledSlot {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const std::string& cls = slot.classes[static_cast<size_t>(
          r.uniform_int(0, static_cast<int64_t>(slot.classes.size()) - 1))];
      const auto& pool = pools.by_class.at(cls);
      int entity = pool[static_cast<size_t>(
          r.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
      std::string surface = pick_alias(entity, r);
      if (surface.empty()) continue;
      if (!is_test && pools.holdout_surfaces.count(surface)) continue;
      auto w = pools.winner_of.find(surface);
      if (w != pools.winner_of.end() && w->second != entity) continue;
      return {split_tokens(surface), cls};
    }
    throw std::runtime_error("synth: could not fill slot for class set");
  };

  // Fills an ambiguous item from the split's alias pool. The template's
  // first slot must offer at least two classes including the winner's, so
  // the carrier text never leaks the gold class.
  auto fill_ambiguous =
      [&](const std::vector<AmbiguousAlias>& pool, const std::vector<int>& templates,
          Rng& r) -> std::optional<std::pair<int, detail::FilledSlot>> {
    if (pool.empty() || templates.empty()) return std::nullopt;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const AmbiguousAlias& a = pool[static_cast<size_t>(
          r.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
      const std::string& cls = store.entities[a.winner_entity].class_label;
      std::vector<int> fits;
      for (int ti : templates) {
        const auto& classes = cfg.templates[ti].slots[0].classes;
        if (classes.size() >= 2 &&
            std::find(classes.begin(), classes.end(), cls) != classes.end())
          fits.push_back(ti);
      }
      if (fits.empty()) continue;
      int ti = fits[static_cast<size_t>(
          r.uniform_int(0, static_cast<int64_t>(fits.size()) - 1))];
      return std::make_pair(ti, detail::FilledSlot{split_tokens(a.surface), cls});
    }
    return std::nullopt;
  };

  auto build_split = [&](int count, bool is_test, uint64_t stream,
                         nlohmann::json& stats) -> Dataset {
    Rng r = rng.split(stream);
    // Exact quotas per bucket; remainder goes to the largest fraction.
    std::vector<int> quota(buckets, 0);
    double total_frac = 0.0;
    for (double f : cfg.entity_mix) total_frac += f;
    int assigned = 0;
    size_t largest = 0;
    for (size_t b = 0; b < buckets; ++b) {
      quota[b] = static_cast<int>(std::floor(cfg.entity_mix[b] / total_frac * count));
      assigned += quota[b];
      if (cfg.entity_mix[b] > cfg.entity_mix[largest]) largest = b;
    }
    quota[largest] += count - assigned;
    for (size_t b = 0; b < buckets; ++b)
      if (quota[b] > 0 && by_slots[b].empty())
        throw std::runtime_error("entity_mix needs a template with " +
                                 std::to_string(b) + " slots");

    int ambiguous_used = 0;
    Dataset out;
    for (size_t b = 0; b < buckets; ++b) {
      for (int i = 0; i < quota[b]; ++i) {
        int ti = -1;
        std::optional<detail::FilledSlot> first_fill;
        if (b >= 1 && r.bernoulli(cfg.ambiguous_fraction)) {
          auto picked = fill_ambiguous(is_test ? pools.test_pool : pools.train_pool,
                                       by_slots[b], r);
          if (picked) {
            ti = picked->first;
            first_fill = picked->second;
            ++ambiguous_used;
          }
        }
        if (ti < 0)
          ti = by_slots[b][static_cast<size_t>(
              r.uniform_int(0, static_cast<int64_t>(by_slots[b].size()) - 1))];
        const TemplateSpec& tpl = cfg.templates[ti];

        TaggedUtterance u;
        u.domain = tpl.domain;
        if (cfg.task == Task::parser) u.intent = tpl.intent;
        for (size_t p = 0; p < tpl.tokens.size(); ++p) {
          int slot_idx = tpl.slot_at[p];
          if (slot_idx < 0) {
            u.tokens.push_back(tpl.tokens[p]);
            u.labels.push_back(cfg.task == Task::parser ? cfg.parser_other_label : "O");
            continue;
          }
          detail::FilledSlot fill = (slot_idx == 0 && first_fill)
                                        ? *first_fill
                                        : fill_slot(tpl.slots[slot_idx], is_test, r);
          const std::string& ner = cfg.class_map.ner_label(fill.kg_class);
          for (size_t k = 0; k < fill.tokens.size(); ++k) {
            u.tokens.push_back(fill.tokens[k]);
            if (cfg.task == Task::parser)
              u.labels.push_back(ner);
            else
              u.labels.push_back((k == 0 ? "B-" : "I-") + ner);
          }
        }
        if (cfg.task == Task::ner && cfg.deletion_rate > 0.0)
          u = apply_span_deletion(u, cfg.deletion_rate, r);
        if (cfg.substitution_rate > 0.0)
          u = apply_char_substitution(u, confusions, cfg.substitution_rate, r);
        out.push_back(std::move(u));
      }
    }
    r.shuffle(out);
    stats["count"] = out.size();
    stats["ambiguous_items"] = ambiguous_used;
    nlohmann::json q = nlohmann::json::array();
    for (int v : quota) q.push_back(v);
    stats["bucket_quota"] = q;
    return out;
  };

  // Dev and test both draw their ambiguous items from the held-out alias
  // pool: the dev set has to measure generalization to entities unseen in
  // training text, or checkpoint selection would reward pure memorization.
  SynthResult result;
  result.stats["ambiguous_aliases_total"] = ambiguous.size();
  result.stats["ambiguous_aliases_holdout"] = holdout;
  result.train = build_split(cfg.train_count, false, 11, result.stats["train"]);
  result.dev = build_split(cfg.dev_count, true, 12, result.stats["dev"]);
  result.test = build_split(cfg.test_count, true, 13, result.stats["test"]);
  return result;
}

}  // namespace dexter
