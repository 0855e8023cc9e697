#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dexter/checkpoint.hpp"
#include "dexter/crf.hpp"
#include "dexter/dataset.hpp"
#include "dexter/entity_search.hpp"
#include "dexter/eval.hpp"
#include "dexter/featurizer.hpp"
#include "dexter/knowledge_store.hpp"
#include "dexter/neural.hpp"
#include "dexter/rng.hpp"

namespace dexter {

enum class Variant { baseline, gazetteer, dexter };

inline Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "gazetteer") return Variant::gazetteer;
  if (s == "dexter") return Variant::dexter;
  throw std::runtime_error("unknown variant: " + s);
}

inline std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::gazetteer: return "gazetteer";
    case Variant::dexter: return "dexter";
  }
  return "baseline";
}

// Many-to-one map from knowledge-graph entity classes to output NER labels.
// Total over the KG class set; it governs the feature side only (the tagger
// never emits a KG class).
struct ClassMap {
  std::map<std::string, std::string> kg_to_ner;

  static ClassMap identity(const std::vector<std::string>& classes) {
    ClassMap m;
    for (const auto& c : classes) m.kg_to_ner[c] = c;
    return m;
  }

  const std::string& ner_label(const std::string& kg_class) const {
    auto it = kg_to_ner.find(kg_class);
    if (it == kg_to_ner.end())
      throw std::runtime_error("class map: no NER label for KG class '" + kg_class +
                               "'");
    return it->second;
  }

  void validate_total(const std::vector<std::string>& kg_classes) const {
    for (const auto& c : kg_classes) ner_label(c);
  }
};

// Training defaults follow the published recipe exactly; every field can be
// overridden for desk-scale runs.
struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 0.001;
  double lr_decay = 0.9;
  int eval_interval = 1000;  // iterations; capped at one epoch
  double improve_eps = 1e-5;
  double stop_lr = 1e-7;
  int max_epochs = 50;
  double dropout = 0.6;
  int word_dim = 200;
  int char_dim = 200;
  int char_hidden = 100;
  int seq_hidden = 450;
  uint64_t seed = 1;
  bool bio_mask = true;
  FeaturizerConfig featurizer;
  std::string word_vectors;  // optional text-format vector file

  EncoderDims encoder_dims() const { return {word_dim, char_dim, char_hidden}; }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.improve_eps = j.value("improve_eps", c.improve_eps);
  c.stop_lr = j.value("stop_lr", c.stop_lr);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.dropout = j.value("dropout", c.dropout);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.char_dim = j.value("char_dim", c.char_dim);
  c.char_hidden = j.value("char_hidden", c.char_hidden);
  c.seq_hidden = j.value("seq_hidden", c.seq_hidden);
  c.seed = j.value("seed", c.seed);
  c.bio_mask = j.value("bio_mask", c.bio_mask);
  c.word_vectors = j.value("word_vectors", c.word_vectors);
  c.featurizer.window = j.value("window", c.featurizer.window);
  c.featurizer.top_k = j.value("top_k", c.featurizer.top_k);
  c.featurizer.cnn_filters = j.value("cnn_filters", c.featurizer.cnn_filters);
  c.featurizer.cnn_width = j.value("cnn_width", c.featurizer.cnn_width);
  c.featurizer.ablation =
      ablation_from_string(j.value("ablation", std::string("none")));
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["lr_decay"] = c.lr_decay;
  j["eval_interval"] = c.eval_interval;
  j["improve_eps"] = c.improve_eps;
  j["stop_lr"] = c.stop_lr;
  j["max_epochs"] = c.max_epochs;
  j["dropout"] = c.dropout;
  j["word_dim"] = c.word_dim;
  j["char_dim"] = c.char_dim;
  j["char_hidden"] = c.char_hidden;
  j["seq_hidden"] = c.seq_hidden;
  j["seed"] = c.seed;
  j["bio_mask"] = c.bio_mask;
  j["word_vectors"] = c.word_vectors;
  j["window"] = c.featurizer.window;
  j["top_k"] = c.featurizer.top_k;
  j["cnn_filters"] = c.featurizer.cnn_filters;
  j["cnn_width"] = c.featurizer.cnn_width;
  j["ablation"] = ablation_to_string(c.featurizer.ablation);
  return j;
}

// Binary token-match gazetteer features: cell (t, c) is 1 iff token t lies
// inside a maximal span whose normalized form exactly matches an indexed
// n-gram of some entity of class c. No correction, no partial credit; this
// is the exact-match contrast system.
inline Mat gazetteer_features(const std::vector<std::string>& tokens,
                              const EntityIndex& index, const KnowledgeStore& store) {
  int t_len = static_cast<int>(tokens.size());
  int num_classes = static_cast<int>(store.class_set.size());
  Mat out = Mat::Zero(t_len, num_classes);
  NormalizeOptions nopt{store.options.stemmer};

  struct Match {
    int start, end, cls;
  };
  std::vector<Match> matches;
  int max_len = std::min(store.options.max_ngram_len, t_len);
  for (int start = 0; start < t_len; ++start) {
    for (int len = 1; len <= max_len && start + len <= t_len; ++len) {
      std::string text;
      for (int i = 0; i < len; ++i) {
        if (i) text.push_back(' ');
        text += tokens[start + i];
      }
      std::vector<std::string> gram = normalize(text, nopt);
      if (gram.empty()) continue;
      auto it = index.postings.find(join_tokens(gram));
      if (it == index.postings.end()) continue;
      std::vector<bool> cls_seen(num_classes, false);
      for (const Posting& p : it->second) {
        int c = store.class_index(store.entities[p.entity_idx].class_label);
        if (c >= 0 && !cls_seen[c]) {
          cls_seen[c] = true;
          matches.push_back({start, start + len, c});
        }
      }
    }
  }
  // Keep only maximal spans per class.
  for (const Match& m : matches) {
    bool contained = false;
    for (const Match& o : matches) {
      if (o.cls == m.cls && (o.end - o.start) > (m.end - m.start) &&
          o.start <= m.start && m.end <= o.end)
        contained = true;
    }
    if (contained) continue;
    for (int t = m.start; t < m.end; ++t) out(t, m.cls) = 1.0;
  }
  return out;
}

enum class Task { ner, parser };

inline Task task_from_string(const std::string& s) {
  if (s == "ner") return Task::ner;
  if (s == "parser" || s == "parse") return Task::parser;
  throw std::runtime_error("unknown task: " + s);
}

inline std::string task_to_string(Task t) { return t == Task::ner ? "ner" : "parser"; }

// The full model: char/word encoder, optional variant features, sequence
// bi-LSTM and either a CRF head (NER) or intent + per-token softmax heads
// (shallow parser). DEXTER parameters sit in the same store and train
// end-to-end with everything else.
class TaggerModel {
 public:
  Task task = Task::ner;
  Variant variant = Variant::baseline;
  TrainConfig cfg;
  Vocab vocab;
  ParamStore params;
  BioMask mask;
  const KnowledgeStore* store = nullptr;
  const EntityIndex* index = nullptr;

  static TaggerModel build(Task task, Variant variant, const TrainConfig& cfg,
                           const Dataset& train, const KnowledgeStore* store,
                           const EntityIndex* index) {
    if (variant != Variant::baseline && (!store || !index))
      throw std::runtime_error("gazetteer/dexter variants need a store and an index");
    if (cfg.featurizer.ablation != Ablation::none && variant != Variant::dexter)
      throw std::runtime_error("ablations are only valid with the dexter variant");
    TaggerModel m;
    m.task = task;
    m.variant = variant;
    m.cfg = cfg;
    m.store = store;
    m.index = index;
    m.vocab = Vocab::build(train);
    if (task == Task::parser && m.vocab.intents.empty())
      throw std::runtime_error("parser task: training data has no intent headers");
    m.mask = make_bio_mask(m.vocab.labels, task == Task::ner && cfg.bio_mask);
    m.init_params();
    return m;
  }

  int num_classes() const {
    return store ? static_cast<int>(store->class_set.size()) : 0;
  }

  int feature_dim() const {
    switch (variant) {
      case Variant::baseline: return 0;
      case Variant::gazetteer: return num_classes();
      case Variant::dexter: return dexter_output_dim(num_classes(), cfg.featurizer);
    }
    return 0;
  }

  int encoder_width() const { return cfg.encoder_dims().output_dim() + feature_dim(); }

  TokenIds token_ids(const std::vector<std::string>& tokens) const {
    TokenIds ids;
    for (const auto& tok : tokens) {
      ids.word_ids.push_back(vocab.word_id(tok));
      std::vector<int> cs;
      for (char c : tok) cs.push_back(vocab.char_id(c));
      ids.char_ids.push_back(std::move(cs));
    }
    return ids;
  }

  UtteranceFeatures dexter_features(const std::vector<std::string>& tokens) const {
    CandidateSet set = collect_candidates(tokens, *index, *store, cfg.featurizer);
    return build_feature_blocks(set, *store, cfg.featurizer);
  }

  // Encoder input -> sequence bi-LSTM -> per-position encoding (T x 2H).
  // Dropout (inverted, training only) applies to the full concatenated
  // input of the sequence bi-LSTM, DEXTER block included.
  Graph::NodeId encode(Graph& g, const std::vector<std::string>& tokens,
                       const UtteranceFeatures* dex, const Mat* gaz, bool training,
                       Rng* drop_rng) {
    Graph::NodeId x = char_word_encode(g, params, token_ids(tokens), cfg.encoder_dims());
    if (variant == Variant::gazetteer) {
      x = g.concat_cols({x, g.constant(*gaz)});
    } else if (variant == Variant::dexter) {
      x = g.concat_cols({x, dexter_embed(g, params, *dex, cfg.featurizer)});
    }
    if (training && cfg.dropout > 0.0) {
      x = g.cmul(x, dropout_mask(g.val(x).rows(), g.val(x).cols(), cfg.dropout,
                                 *drop_rng));
    }
    return bilstm_encode(g, params, "seq", x, cfg.seq_hidden);
  }

  Graph::NodeId emissions_node(Graph& g, Graph::NodeId enc) {
    return g.add_bias(g.matmul(enc, g.param(params.get("out.w"))),
                      g.param(params.get("out.b")));
  }

  // NER loss: CRF negative log-likelihood.
  Graph::NodeId ner_loss(Graph& g, const std::vector<std::string>& tokens,
                         const std::vector<int>& gold, const UtteranceFeatures* dex,
                         const Mat* gaz, bool training, Rng* drop_rng) {
    Graph::NodeId emis = emissions_node(g, encode(g, tokens, dex, gaz, training, drop_rng));
    CrfNodes crf = crf_nodes(g, params, "crf", mask);
    return g.scale(crf_log_likelihood_node(g, emis, gold, crf), -1.0);
  }

  // Parser loss: intent cross-entropy plus the sum of per-token label
  // cross-entropies (no CRF).
  Graph::NodeId parser_loss(Graph& g, const std::vector<std::string>& tokens,
                            const std::vector<int>& gold_labels, int gold_intent,
                            const UtteranceFeatures* dex, const Mat* gaz, bool training,
                            Rng* drop_rng) {
    Graph::NodeId enc = encode(g, tokens, dex, gaz, training, drop_rng);
    int t_len = static_cast<int>(tokens.size());
    Graph::NodeId intent_in = final_states(g, enc, t_len);
    Graph::NodeId intent_logits =
        g.add_bias(g.matmul(intent_in, g.param(params.get("intent.w"))),
                   g.param(params.get("intent.b")));
    Graph::NodeId loss = g.softmax_xent(intent_logits, gold_intent);
    Graph::NodeId tok_logits = g.add_bias(
        g.matmul(enc, g.param(params.get("tok.w"))), g.param(params.get("tok.b")));
    for (int t = 0; t < t_len; ++t)
      loss = g.add(loss, g.softmax_xent(g.row(tok_logits, t), gold_labels[t]));
    return loss;
  }

  std::vector<std::string> predict_labels(const std::vector<std::string>& tokens) {
    Graph g;
    const UtteranceFeatures dex =
        variant == Variant::dexter ? dexter_features(tokens) : UtteranceFeatures{};
    const Mat gaz = variant == Variant::gazetteer
                        ? gazetteer_features(tokens, *index, *store)
                        : Mat{};
    Graph::NodeId emis = emissions_node(g, encode(g, tokens, &dex, &gaz, false, nullptr));
    std::vector<int> path = crf_viterbi(
        g.val(emis), masked_trans(params.get("crf.trans").t.values, mask),
        masked_start(params.get("crf.start").t.values, mask),
        params.get("crf.stop").t.values);
    std::vector<std::string> labels;
    for (int p : path) labels.push_back(vocab.labels[p]);
    return labels;
  }

  struct Parse {
    std::string intent;
    std::vector<std::string> labels;
  };

  struct ParseDistributions {
    Eigen::RowVectorXd intent_probs;  // 1 x |intents|
    Mat label_probs;                  // T x |labels|, rows sum to 1
  };

  ParseDistributions parse_distributions(const std::vector<std::string>& tokens) {
    Graph g;
    const UtteranceFeatures dex =
        variant == Variant::dexter ? dexter_features(tokens) : UtteranceFeatures{};
    const Mat gaz = variant == Variant::gazetteer
                        ? gazetteer_features(tokens, *index, *store)
                        : Mat{};
    Graph::NodeId enc = encode(g, tokens, &dex, &gaz, false, nullptr);
    int t_len = static_cast<int>(tokens.size());
    Graph::NodeId intent_logits =
        g.add_bias(g.matmul(final_states(g, enc, t_len), g.param(params.get("intent.w"))),
                   g.param(params.get("intent.b")));
    Graph::NodeId tok_logits = g.add_bias(
        g.matmul(enc, g.param(params.get("tok.w"))), g.param(params.get("tok.b")));
    auto softmax_row = [](const Eigen::RowVectorXd& row) {
      Eigen::RowVectorXd out = row;
      double m = out.maxCoeff();
      for (int i = 0; i < out.size(); ++i) out(i) = std::exp(out(i) - m);
      out /= out.sum();
      return out;
    };
    ParseDistributions out;
    out.intent_probs = softmax_row(g.val(intent_logits).row(0));
    out.label_probs = Mat(t_len, g.val(tok_logits).cols());
    for (int t = 0; t < t_len; ++t)
      out.label_probs.row(t) = softmax_row(g.val(tok_logits).row(t));
    return out;
  }

  Parse predict_parse(const std::vector<std::string>& tokens) {
    Graph g;
    const UtteranceFeatures dex =
        variant == Variant::dexter ? dexter_features(tokens) : UtteranceFeatures{};
    const Mat gaz = variant == Variant::gazetteer
                        ? gazetteer_features(tokens, *index, *store)
                        : Mat{};
    Graph::NodeId enc = encode(g, tokens, &dex, &gaz, false, nullptr);
    int t_len = static_cast<int>(tokens.size());
    Graph::NodeId intent_in = final_states(g, enc, t_len);
    Graph::NodeId intent_logits =
        g.add_bias(g.matmul(intent_in, g.param(params.get("intent.w"))),
                   g.param(params.get("intent.b")));
    Graph::NodeId tok_logits = g.add_bias(
        g.matmul(enc, g.param(params.get("tok.w"))), g.param(params.get("tok.b")));

    Parse out;
    int best_intent = 0;
    g.val(intent_logits).row(0).maxCoeff(&best_intent);
    out.intent = vocab.intents[best_intent];
    for (int t = 0; t < t_len; ++t) {
      int best = 0;
      g.val(tok_logits).row(t).maxCoeff(&best);
      out.labels.push_back(vocab.labels[best]);
    }
    return out;
  }

  nlohmann::json meta() const {
    nlohmann::json j;
    j["task"] = task_to_string(task);
    j["variant"] = variant_to_string(variant);
    j["config"] = train_config_to_json(cfg);
    j["words"] = vocab.words;
    j["chars"] = vocab.chars;
    j["labels"] = vocab.labels;
    j["intents"] = vocab.intents;
    return j;
  }

  static TaggerModel from_checkpoint(const std::string& path,
                                     const KnowledgeStore* store,
                                     const EntityIndex* index) {
    TaggerModel m;
    nlohmann::json meta = load_checkpoint(path, m.params);
    m.task = task_from_string(meta.at("task").get<std::string>());
    m.variant = variant_from_string(meta.at("variant").get<std::string>());
    m.cfg = train_config_from_json(meta.at("config"));
    m.vocab.words = meta.at("words").get<std::vector<std::string>>();
    m.vocab.chars = meta.at("chars").get<std::vector<std::string>>();
    m.vocab.labels = meta.at("labels").get<std::vector<std::string>>();
    m.vocab.intents = meta.at("intents").get<std::vector<std::string>>();
    m.vocab.rebuild_maps();
    m.mask = make_bio_mask(m.vocab.labels, m.task == Task::ner && m.cfg.bio_mask);
    m.store = store;
    m.index = index;
    if (m.variant != Variant::baseline && (!store || !index))
      throw std::runtime_error("checkpoint variant '" + variant_to_string(m.variant) +
                               "' needs --store/--index to run");
    return m;
  }

 private:
  Graph::NodeId final_states(Graph& g, Graph::NodeId enc, int t_len) {
    int h = cfg.seq_hidden;
    return g.concat_cols({g.slice_cols(g.row(enc, t_len - 1), 0, h),
                          g.slice_cols(g.row(enc, 0), h, h)});
  }

  void init_params() {
    Rng rng(cfg.seed);
    EncoderDims dims = cfg.encoder_dims();
    init_char_word(params, static_cast<int>(vocab.words.size()),
                   static_cast<int>(vocab.chars.size()), dims, rng);
    if (variant == Variant::dexter)
      init_featurizer(params, num_classes(), cfg.featurizer, rng);
    init_bilstm(params, "seq", encoder_width(), cfg.seq_hidden, rng);
    int l = static_cast<int>(vocab.labels.size());
    init_glorot(params.create("out.w", {2 * cfg.seq_hidden, l}), rng);
    params.create("out.b", {1, l}).t.values.setZero();
    if (task == Task::ner) {
      init_crf(params, "crf", l, rng);
    } else {
      int i = static_cast<int>(vocab.intents.size());
      init_glorot(params.create("intent.w", {2 * cfg.seq_hidden, i}), rng);
      params.create("intent.b", {1, i}).t.values.setZero();
      init_glorot(params.create("tok.w", {2 * cfg.seq_hidden, l}), rng);
      params.create("tok.b", {1, l}).t.values.setZero();
    }
    if (!cfg.word_vectors.empty())
      load_word_vectors(cfg.word_vectors, vocab, params.get("word.emb"));
  }
};

// Per-dataset cache of the parameter-free retrieval features.
struct FeatureCache {
  std::vector<UtteranceFeatures> dexter;
  std::vector<Mat> gazetteer;

  static FeatureCache build(TaggerModel& model, const Dataset& data) {
    FeatureCache cache;
    if (model.variant == Variant::dexter) {
      cache.dexter.reserve(data.size());
      for (const auto& u : data) cache.dexter.push_back(model.dexter_features(u.tokens));
    } else if (model.variant == Variant::gazetteer) {
      cache.gazetteer.reserve(data.size());
      for (const auto& u : data)
        cache.gazetteer.push_back(gazetteer_features(u.tokens, *model.index, *model.store));
    }
    return cache;
  }

  const UtteranceFeatures* dex(size_t i) const {
    return dexter.empty() ? nullptr : &dexter[i];
  }
  const Mat* gaz(size_t i) const {
    return gazetteer.empty() ? nullptr : &gazetteer[i];
  }
};

struct EvalPoint {
  int64_t iteration = 0;
  int epoch = 0;
  double lr = 0.0;
  double dev_metric = 0.0;
};

struct TrainResult {
  std::string log;
  std::vector<EvalPoint> evals;
  double best_dev = 0.0;
  std::string stop_reason;
  int64_t iterations = 0;
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

inline double dev_metric(TaggerModel& model, const Dataset& dev,
                         const FeatureCache& cache) {
  std::vector<std::vector<std::string>> pred;
  std::vector<std::string> intents;
  pred.reserve(dev.size());
  for (size_t i = 0; i < dev.size(); ++i) {
    if (model.task == Task::ner) {
      Graph g;
      const UtteranceFeatures* dex = cache.dex(i);
      const Mat* gaz = cache.gaz(i);
      UtteranceFeatures empty_dex;
      Mat empty_gaz;
      Graph::NodeId emis = model.emissions_node(
          g, model.encode(g, dev[i].tokens, dex ? dex : &empty_dex,
                          gaz ? gaz : &empty_gaz, false, nullptr));
      std::vector<int> path = crf_viterbi(
          g.val(emis), masked_trans(model.params.get("crf.trans").t.values, model.mask),
          masked_start(model.params.get("crf.start").t.values, model.mask),
          model.params.get("crf.stop").t.values);
      std::vector<std::string> labels;
      for (int p : path) labels.push_back(model.vocab.labels[p]);
      pred.push_back(std::move(labels));
    } else {
      TaggerModel::Parse parse = model.predict_parse(dev[i].tokens);
      pred.push_back(std::move(parse.labels));
      intents.push_back(std::move(parse.intent));
    }
  }
  if (model.task == Task::ner) return ner_f1(dev, pred).overall.f1();
  return exact_match(dev, pred, intents);
}

}  // namespace detail

// The published schedule: minibatch Adam from lr 1e-3, dev evaluation every
// min(eval_interval, one epoch) iterations, decay by 0.9 on a plateau
// (improvement <= 1e-5), stop when lr < 1e-7 or after max_epochs. Keeps the
// best-dev parameters (last wins on exact ties) and restores them at the
// end. The log is deterministic: identical seeded runs emit identical text.
inline TrainResult train_model(TaggerModel& model, const Dataset& train,
                               const Dataset& dev) {
  if (train.empty()) throw std::runtime_error("train: empty training set");
  const TrainConfig& cfg = model.cfg;
  std::ostringstream log;
  log << "train task=" << task_to_string(model.task)
      << " variant=" << variant_to_string(model.variant)
      << " ablation=" << ablation_to_string(cfg.featurizer.ablation)
      << " seed=" << cfg.seed << " train_size=" << train.size()
      << " dev_size=" << dev.size() << "\n";

  FeatureCache train_cache = FeatureCache::build(model, train);
  FeatureCache dev_cache = FeatureCache::build(model, dev);

  std::vector<std::vector<int>> gold_ids(train.size());
  std::vector<int> gold_intents(train.size(), 0);
  for (size_t i = 0; i < train.size(); ++i) {
    for (const auto& lab : train[i].labels)
      gold_ids[i].push_back(model.vocab.label_id(lab));
    if (model.task == Task::parser)
      gold_intents[i] = model.vocab.intent_id(train[i].intent);
  }

  int64_t iters_per_epoch =
      (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  int64_t interval = std::min<int64_t>(cfg.eval_interval, iters_per_epoch);

  TrainResult result;
  double lr = cfg.learning_rate;
  double best = 0.0;
  std::vector<Mat> best_snapshot = snapshot_params(model.params);
  int64_t iteration = 0;
  std::string stop;

  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs && stop.empty(); ++epoch) {
    Rng erng = Rng(cfg.seed).split(1000000 + epoch);
    erng.shuffle(order);
    for (size_t at = 0; at < order.size() && stop.empty(); at += cfg.batch_size) {
      size_t batch_end = std::min(order.size(), at + cfg.batch_size);
      int batch_n = static_cast<int>(batch_end - at);
      ++iteration;
      model.params.zero_grads();
      double batch_loss = 0.0;
      for (size_t bi = at; bi < batch_end; ++bi) {
        size_t u = order[bi];
        Rng drop_rng = Rng(cfg.seed).split(2000000).split(iteration).split(bi - at);
        Graph g;
        UtteranceFeatures empty_dex;
        Mat empty_gaz;
        const UtteranceFeatures* dex = train_cache.dex(u);
        const Mat* gaz = train_cache.gaz(u);
        Graph::NodeId loss =
            model.task == Task::ner
                ? model.ner_loss(g, train[u].tokens, gold_ids[u], dex ? dex : &empty_dex,
                                 gaz ? gaz : &empty_gaz, true, &drop_rng)
                : model.parser_loss(g, train[u].tokens, gold_ids[u], gold_intents[u],
                                    dex ? dex : &empty_dex, gaz ? gaz : &empty_gaz,
                                    true, &drop_rng);
        Graph::NodeId scaled = g.scale(loss, 1.0 / batch_n);
        batch_loss += g.val(scaled)(0, 0);
        g.backward(scaled);
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("training: non-finite loss at iteration " +
                                 std::to_string(iteration));
      adam_step(model.params, AdamConfig{lr}, iteration);

      if (iteration % interval == 0) {
        double metric = detail::dev_metric(model, dev, dev_cache);
        log << "eval iter=" << iteration << " epoch=" << epoch
            << " lr=" << detail::fmt_double(lr)
            << " dev=" << detail::fmt_double(metric) << "\n";
        result.evals.push_back({iteration, epoch, lr, metric});
        double improvement = metric - best;
        if (metric >= best) {
          best = metric;
          best_snapshot = snapshot_params(model.params);
        }
        if (improvement <= cfg.improve_eps) {
          lr *= cfg.lr_decay;
          log << "decay iter=" << iteration << " lr=" << detail::fmt_double(lr) << "\n";
          if (lr < cfg.stop_lr) stop = "lr_floor";
        }
      }
    }
    if (stop.empty() && epoch == cfg.max_epochs) stop = "max_epochs";
  }

  restore_params(model.params, best_snapshot);
  log << "stop reason=" << stop << " iterations=" << iteration
      << " best_dev=" << detail::fmt_double(best) << "\n";
  result.log = log.str();
  result.best_dev = best;
  result.stop_reason = stop;
  result.iterations = iteration;
  return result;
}

}  // namespace dexter
