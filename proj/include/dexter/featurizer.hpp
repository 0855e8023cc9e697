#pragma once

#include <Eigen/Core>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dexter/entity_search.hpp"
#include "dexter/graph.hpp"
#include "dexter/knowledge_store.hpp"
#include "dexter/neural.hpp"
#include "dexter/text.hpp"

namespace dexter {

// Table-2 ablations. b: SLP replaced by max pooling over the tf-idf slots;
// c: class-agnostic SLP; d: CNN kernels tied across input channels; e: CNN
// removed (the reduction vector is the embedding).
enum class Ablation { none, b, c, d, e };

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "none" || s.empty()) return Ablation::none;
  if (s == "b") return Ablation::b;
  if (s == "c") return Ablation::c;
  if (s == "d") return Ablation::d;
  if (s == "e") return Ablation::e;
  throw std::runtime_error("unknown ablation: " + s);
}

inline std::string ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::b: return "b";
    case Ablation::c: return "c";
    case Ablation::d: return "d";
    case Ablation::e: return "e";
  }
  return "none";
}

struct FeaturizerConfig {
  int window = 3;       // n-gram context window w
  int top_k = 10;       // candidates kept per class per query
  int cnn_filters = 32;
  int cnn_width = 7;
  Ablation ablation = Ablation::none;

  // Slots r_{1,1}, r_{2,1}, r_{2,2}, ..., r_{w,1}..r_{w,w} plus popularity.
  int r_dim() const { return window * (window + 1) / 2 + 1; }
};

// The k-th j-gram containing a token (k counts left-to-right by start
// position). Slots that fall outside the utterance have exists == false.
struct NGramSlot {
  int arity = 0;
  int ord = 0;    // 1-based k
  int start = 0;  // token index of the n-gram's first token
  bool exists = false;
  std::vector<Candidate> candidates;
};

// Per-token, per-n-gram ranked entity candidates for one utterance, slots in
// Eq.-1 order: (1,1), (2,1), (2,2), (3,1), (3,2), (3,3), ...
struct CandidateSet {
  int t_len = 0;
  int window = 0;
  std::vector<std::vector<NGramSlot>> token_slots;
};

// Enumerates every n-gram of the utterance up to the window length, issues
// one search per distinct span, and lays the results out per token.
inline CandidateSet collect_candidates(const std::vector<std::string>& raw_tokens,
                                       const EntityIndex& index,
                                       const KnowledgeStore& store,
                                       const FeaturizerConfig& cfg) {
  int t_len = static_cast<int>(raw_tokens.size());
  CandidateSet set;
  set.t_len = t_len;
  set.window = cfg.window;
  set.token_slots.resize(t_len);

  NormalizeOptions nopt{store.options.stemmer};
  std::map<std::pair<int, int>, std::vector<Candidate>> span_results;
  auto query_span = [&](int start, int arity) -> const std::vector<Candidate>& {
    auto key = std::make_pair(start, arity);
    auto it = span_results.find(key);
    if (it != span_results.end()) return it->second;
    std::string text;
    for (int i = 0; i < arity; ++i) {
      if (i) text.push_back(' ');
      text += raw_tokens[start + i];
    }
    std::vector<std::string> gram = normalize(text, nopt);
    std::vector<Candidate> result;
    if (!gram.empty()) result = search(gram, index, store, cfg.top_k);
    return span_results.emplace(key, std::move(result)).first->second;
  };

  for (int t = 0; t < t_len; ++t) {
    for (int j = 1; j <= cfg.window; ++j) {
      for (int k = 1; k <= j; ++k) {
        NGramSlot slot;
        slot.arity = j;
        slot.ord = k;
        slot.start = t - j + k;
        if (slot.start >= 0 && slot.start + j <= t_len) {
          slot.exists = true;
          slot.candidates = query_span(slot.start, j);
        }
        set.token_slots[t].push_back(std::move(slot));
      }
    }
  }
  return set;
}

// Eq. 1: tf-idf of one entity across every n-gram slot of a token, then its
// popularity. Slots where the entity was not retrieved (or that fall outside
// the utterance) are exactly 0.
inline Eigen::VectorXd assemble_r(int token_index, const std::string& entity_id,
                                  const CandidateSet& set, int window,
                                  const KnowledgeStore& store) {
  const EntityRecord* rec = store.find(entity_id);
  if (!rec) throw std::runtime_error("assemble_r: unknown entity id '" + entity_id + "'");
  if (token_index < 0 || token_index >= set.t_len)
    throw std::runtime_error("assemble_r: token index out of range");
  int dr = window * (window + 1) / 2 + 1;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(dr);
  const auto& slots = set.token_slots[token_index];
  for (size_t s = 0; s < slots.size(); ++s) {
    if (!slots[s].exists) continue;
    for (const Candidate& c : slots[s].candidates) {
      if (c.entity_id == entity_id) {
        r[static_cast<int>(s)] = c.tfidf;
        break;
      }
    }
  }
  r[dr - 1] = rec->popularity;
  return r;
}

// Eq. 2 parameters. weights has one row per entity class (the one-hot
// expansion makes w.v touch only that class's block); class-agnostic mode
// keeps a single shared row.
struct SlpParams {
  Mat weights;  // |C| x r_dim, or 1 x r_dim when class_agnostic
  double bias = 0.0;
  bool class_agnostic = false;
};

// Eq. 2: tanh(w . v + b) where v is r placed in the class's weight block.
inline double score_entity(const Eigen::VectorXd& r, int class_idx,
                           const SlpParams& params) {
  int row = params.class_agnostic ? 0 : class_idx;
  return std::tanh(params.weights.row(row).dot(r) + params.bias);
}

// Ablation (b): the SLP collapses to a max pool over the tf-idf slots
// (popularity excluded); parameter-free.
inline double score_entity_maxpool(const Eigen::VectorXd& r) {
  return r.head(r.size() - 1).maxCoeff();
}

// Reduction layer: per class, the highest score any entity of that class got
// for this token; 0 for classes with no candidates.
inline Eigen::VectorXd reduce(const std::vector<std::pair<int, double>>& scores,
                              int num_classes) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(num_classes);
  std::vector<bool> seen(num_classes, false);
  for (const auto& [cls, s] : scores) {
    if (!seen[cls] || s > u[cls]) {
      u[cls] = s;
      seen[cls] = true;
    }
  }
  return u;
}

struct ConvParams {
  Mat kernels;  // filters x (C*width), or filters x width when tied
  Eigen::VectorXd biases;
  int width = 7;
  bool tied = false;
};

// Eq. 3: 1D convolution over the token axis with zero padding (width-1)/2,
// followed by tanh. Output row count equals input row count.
inline Mat contextual_conv(const Mat& u, const ConvParams& params) {
  int t_len = static_cast<int>(u.rows());
  int chans = static_cast<int>(u.cols());
  int filters = static_cast<int>(params.kernels.rows());
  int pad = (params.width - 1) / 2;
  Mat out(t_len, filters);
  for (int t = 0; t < t_len; ++t) {
    for (int f = 0; f < filters; ++f) {
      double acc = params.biases[f];
      for (int dx = 0; dx < params.width; ++dx) {
        int src = t + dx - pad;
        if (src < 0 || src >= t_len) continue;
        if (params.tied) {
          acc += params.kernels(f, dx) * u.row(src).sum();
        } else {
          for (int c = 0; c < chans; ++c)
            acc += params.kernels(f, c * params.width + dx) * u(src, c);
        }
      }
      out(t, f) = std::tanh(acc);
    }
  }
  return out;
}

// Entity rows for one token: the deduplicated union of candidates across the
// token's n-gram slots, each with its assembled Eq.-1 vector. First-seen
// order (slot order, then rank order) fixes the reduction tie-break.
struct TokenFeatureBlock {
  Mat r_rows;                // n x r_dim
  std::vector<int> classes;  // class index per row
};

struct UtteranceFeatures {
  std::vector<TokenFeatureBlock> tokens;
  int num_classes = 0;
};

inline UtteranceFeatures build_feature_blocks(const CandidateSet& set,
                                              const KnowledgeStore& store,
                                              const FeaturizerConfig& cfg) {
  UtteranceFeatures out;
  out.num_classes = static_cast<int>(store.class_set.size());
  out.tokens.resize(set.t_len);
  int dr = cfg.r_dim();
  for (int t = 0; t < set.t_len; ++t) {
    std::vector<std::string> order;
    std::map<std::string, int> row_of;
    const auto& slots = set.token_slots[t];
    for (const auto& slot : slots) {
      if (!slot.exists) continue;
      for (const Candidate& c : slot.candidates) {
        if (row_of.emplace(c.entity_id, static_cast<int>(order.size())).second)
          order.push_back(c.entity_id);
      }
    }
    TokenFeatureBlock block;
    block.r_rows = Mat::Zero(order.size(), dr);
    block.classes.resize(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
      const EntityRecord* rec = store.find(order[i]);
      block.r_rows.row(i) = assemble_r(t, order[i], set, cfg.window, store).transpose();
      block.classes[i] = store.class_index(rec->class_label);
    }
    out.tokens[t] = std::move(block);
  }
  return out;
}

inline int dexter_output_dim(int num_classes, const FeaturizerConfig& cfg) {
  return cfg.ablation == Ablation::e ? num_classes : cfg.cnn_filters;
}

// Parameter names: slp.w, slp.b, cnn.k, cnn.b.
inline void init_featurizer(ParamStore& ps, int num_classes,
                            const FeaturizerConfig& cfg, Rng& rng) {
  int dr = cfg.r_dim();
  if (cfg.ablation != Ablation::b) {
    int rows = cfg.ablation == Ablation::c ? 1 : num_classes;
    // Small init: raw tf-idf entries sit around ln(N), and a wider scale
    // would start Eq. 2's tanh saturated.
    init_uniform(ps.create("slp.w", {rows, dr}), 0.05, rng);
    ps.create("slp.b", {1, 1}).t.values.setZero();
  }
  if (cfg.ablation != Ablation::e) {
    if (cfg.ablation == Ablation::d) {
      init_glorot(ps.create("cnn.k", {cfg.cnn_filters, cfg.cnn_width}), rng);
    } else {
      init_glorot(ps.create("cnn.k", {cfg.cnn_filters, num_classes * cfg.cnn_width}),
                  rng);
    }
    ps.create("cnn.b", {1, cfg.cnn_filters}).t.values.setZero();
  }
}

// Trainable DEXTER embedding: SLP scores -> per-class max -> contextual CNN,
// on the tape so the whole stack learns end-to-end. Returns T x filters
// (T x |C| under ablation e).
inline Graph::NodeId dexter_embed(Graph& g, ParamStore& ps,
                                  const UtteranceFeatures& feats,
                                  const FeaturizerConfig& cfg) {
  int num_classes = feats.num_classes;
  Graph::NodeId w = -1, b = -1;
  if (cfg.ablation != Ablation::b) {
    w = g.param(ps.get("slp.w"));
    b = g.param(ps.get("slp.b"));
  }

  std::vector<Graph::NodeId> u_rows;
  u_rows.reserve(feats.tokens.size());
  for (const TokenFeatureBlock& block : feats.tokens) {
    int n = static_cast<int>(block.r_rows.rows());
    if (n == 0) {
      u_rows.push_back(g.constant(Mat::Zero(1, num_classes)));
      continue;
    }
    Graph::NodeId scores;
    if (cfg.ablation == Ablation::b) {
      Mat s(1, n);
      for (int i = 0; i < n; ++i)
        s(0, i) = block.r_rows.row(i).head(block.r_rows.cols() - 1).maxCoeff();
      scores = g.constant(std::move(s));
    } else {
      std::vector<int> rows = block.classes;
      if (cfg.ablation == Ablation::c) std::fill(rows.begin(), rows.end(), 0);
      scores = g.tanh_(g.class_dot(block.r_rows, w, b, std::move(rows)));
    }
    u_rows.push_back(g.segment_max0(scores, block.classes, num_classes));
  }
  Graph::NodeId u = g.concat_rows(u_rows);
  if (cfg.ablation == Ablation::e) return u;

  Graph::NodeId k = g.param(ps.get("cnn.k"));
  Graph::NodeId cb = g.param(ps.get("cnn.b"));
  return g.tanh_(
      g.conv1d(u, k, cb, cfg.cnn_width, cfg.ablation == Ablation::d));
}

// Inference-path composition of the published pipeline: enumeration ->
// search -> Eq. 1 -> Eq. 2 -> reduction -> Eq. 3. Mirrors dexter_embed
// exactly; kept separate so each stage stays individually callable.
inline Mat featurize(const std::vector<std::string>& tokens, const EntityIndex& index,
                     const KnowledgeStore& store, const FeaturizerConfig& cfg,
                     const SlpParams& slp, const ConvParams& conv) {
  CandidateSet set = collect_candidates(tokens, index, store, cfg);
  UtteranceFeatures feats = build_feature_blocks(set, store, cfg);
  int num_classes = feats.num_classes;
  Mat u(set.t_len, num_classes);
  for (int t = 0; t < set.t_len; ++t) {
    const TokenFeatureBlock& block = feats.tokens[t];
    std::vector<std::pair<int, double>> scores;
    for (int i = 0; i < block.r_rows.rows(); ++i) {
      Eigen::VectorXd r = block.r_rows.row(i).transpose();
      double s = cfg.ablation == Ablation::b
                     ? score_entity_maxpool(r)
                     : score_entity(r, block.classes[i], slp);
      scores.emplace_back(block.classes[i], s);
    }
    u.row(t) = reduce(scores, num_classes).transpose();
  }
  if (cfg.ablation == Ablation::e) return u;
  return contextual_conv(u, conv);
}

}  // namespace dexter
