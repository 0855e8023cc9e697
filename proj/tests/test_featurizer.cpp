#include <gtest/gtest.h>

#include <cmath>

#include "dexter/featurizer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dexter;
using gradcheck::random_mat;
using testsupport::random_store;

namespace {

// play/godzilla fixture: "godzilla" is both a song and a movie, and an app
// entity owns the bigram "play godzilla".
KnowledgeStore fixture_store() {
  KnowledgeStore store;
  store.class_set = {"song", "movie", "app"};
  auto add = [&](const char* id, const char* cls, const char* name, double pop) {
    EntityRecord r;
    r.id = id;
    r.class_label = cls;
    r.canonical_name = name;
    r.popularity = pop;
    store.add(std::move(r));
  };
  add("song1", "song", "godzilla", 0.4);
  add("movie1", "movie", "godzilla", 0.9);
  add("app1", "app", "play godzilla", 0.2);
  return store;
}

SlpParams slp_from(ParamStore& ps, Ablation ab) {
  SlpParams slp;
  if (ab != Ablation::b) {
    slp.weights = ps.get("slp.w").t.values;
    slp.bias = ps.get("slp.b").t.values(0, 0);
    slp.class_agnostic = ab == Ablation::c;
  }
  return slp;
}

ConvParams conv_from(ParamStore& ps, const FeaturizerConfig& cfg) {
  ConvParams conv;
  if (cfg.ablation != Ablation::e) {
    conv.kernels = ps.get("cnn.k").t.values;
    conv.biases = ps.get("cnn.b").t.values.row(0).transpose();
    conv.width = cfg.cnn_width;
    conv.tied = cfg.ablation == Ablation::d;
  }
  return conv;
}

}  // namespace

TEST(AssembleR, WindowThreeGivesLengthSeven) {
  FeaturizerConfig cfg;
  EXPECT_EQ(cfg.r_dim(), 7);  // 1 + 2 + 3 + popularity
  cfg.window = 4;
  EXPECT_EQ(cfg.r_dim(), 11);
}

// Hand-enumerated candidate layout on a 3-token utterance; zero slots are
// exactly where the zero-fill rule dictates.
TEST(AssembleR, HandEnumeratedThreeTokenLayout) {
  KnowledgeStore store = fixture_store();
  EntityIndex index = build_index(store);
  FeaturizerConfig cfg;
  CandidateSet set = collect_candidates({"play", "godzilla", "now"}, index, store, cfg);

  const double n = 3.0;
  auto idf = [&](int df) { return std::log((1.0 + n) / (1.0 + df)) + 1.0; };

  // token 1 = "godzilla": slots (1,1)=unigram, (2,1)="play godzilla",
  // (2,2)="godzilla now", (3,1) out of range, (3,2)=full trigram, (3,3) out.
  Eigen::VectorXd r_song = assemble_r(1, "song1", set, 3, store);
  ASSERT_EQ(r_song.size(), 7);
  EXPECT_NEAR(r_song[0], 1.0 * idf(3), 1e-12);  // godzilla in all three bags
  for (int s = 1; s <= 5; ++s) EXPECT_EQ(r_song[s], 0.0) << "slot " << s;
  EXPECT_DOUBLE_EQ(r_song[6], 0.4);

  // app1 additionally owns the bigram "play godzilla" (slot (2,1)).
  Eigen::VectorXd r_app = assemble_r(1, "app1", set, 3, store);
  EXPECT_NEAR(r_app[0], 1.0 * idf(3), 1e-12);
  EXPECT_NEAR(r_app[1], 1.0 * idf(1), 1e-12);
  EXPECT_EQ(r_app[2], 0.0);
  EXPECT_EQ(r_app[3], 0.0);
  EXPECT_EQ(r_app[4], 0.0);
  EXPECT_EQ(r_app[5], 0.0);
  EXPECT_DOUBLE_EQ(r_app[6], 0.2);

  // token 0 = "play": unigram "play" hits app1 only; bigram (2,2) is
  // "play godzilla"; trigram (3,3) is the whole utterance.
  Eigen::VectorXd r_app0 = assemble_r(0, "app1", set, 3, store);
  EXPECT_NEAR(r_app0[0], 1.0 * idf(1), 1e-12);
  EXPECT_EQ(r_app0[1], 0.0);  // bigram starting at -1 does not exist
  EXPECT_NEAR(r_app0[2], 1.0 * idf(1), 1e-12);
  EXPECT_EQ(r_app0[5], 0.0);  // "play godzilla now" is not in any bag

  EXPECT_THROW(assemble_r(1, "nope", set, 3, store), std::runtime_error);
  EXPECT_THROW(assemble_r(9, "song1", set, 3, store), std::runtime_error);
}

TEST(AssembleR, SingleTokenUtteranceTruncatesHigherArities) {
  KnowledgeStore store = fixture_store();
  EntityIndex index = build_index(store);
  FeaturizerConfig cfg;
  CandidateSet set = collect_candidates({"godzilla"}, index, store, cfg);
  Eigen::VectorXd r = assemble_r(0, "movie1", set, 3, store);
  EXPECT_GT(r[0], 0.0);
  for (int s = 1; s <= 5; ++s) EXPECT_EQ(r[s], 0.0);
  EXPECT_DOUBLE_EQ(r[6], 0.9);
}

TEST(CollectCandidates, QueryCountPerToken) {
  KnowledgeStore store = fixture_store();
  EntityIndex index = build_index(store);
  FeaturizerConfig cfg;
  auto count_existing = [](const CandidateSet& set, int t) {
    int n = 0;
    for (const auto& slot : set.token_slots[t]) n += slot.exists;
    return n;
  };
  // middle token of a 5-token utterance: 1 uni + 2 bi + 3 tri
  CandidateSet five =
      collect_candidates({"a", "b", "c", "d", "e"}, index, store, cfg);
  EXPECT_EQ(count_existing(five, 2), 6);
  EXPECT_EQ(count_existing(five, 0), 3);  // boundary: uni + 1 bi + 1 tri
  // middle token of a 3-token utterance: 1 uni + 2 bi + 1 tri
  CandidateSet three = collect_candidates({"a", "b", "c"}, index, store, cfg);
  EXPECT_EQ(count_existing(three, 1), 4);
}

TEST(ScoreEntity, ZeroParamsGiveZero) {
  SlpParams slp;
  slp.weights = Mat::Zero(3, 7);
  slp.bias = 0.0;
  Eigen::VectorXd r = Eigen::VectorXd::Random(7);
  EXPECT_EQ(score_entity(r, 1, slp), 0.0);
}

TEST(ScoreEntity, ClassBlockIsolation) {
  Rng rng(41);
  SlpParams slp;
  slp.weights = random_mat(3, 7, rng);
  slp.bias = 0.3;
  Eigen::VectorXd r = Eigen::VectorXd::Random(7);
  double before = score_entity(r, 1, slp);
  slp.weights.row(0).array() += 5.0;  // another class's block
  slp.weights.row(2).array() -= 3.0;
  EXPECT_DOUBLE_EQ(score_entity(r, 1, slp), before);
  slp.weights.row(1).array() += 0.1;  // own block does move the score
  EXPECT_NE(score_entity(r, 1, slp), before);
}

TEST(ScoreEntity, MatchesHandComputedDotProduct) {
  Rng rng(42);
  SlpParams slp;
  slp.weights = random_mat(4, 7, rng);
  slp.bias = rng.normal();
  Eigen::VectorXd r(7);
  for (int i = 0; i < 7; ++i) r[i] = rng.normal();
  int cls = 2;
  double dot = slp.bias;
  for (int i = 0; i < 7; ++i) dot += slp.weights(cls, i) * r[i];
  EXPECT_NEAR(score_entity(r, cls, slp), std::tanh(dot), 1e-15);

  slp.class_agnostic = true;
  slp.weights = random_mat(1, 7, rng);
  double dot2 = slp.bias;
  for (int i = 0; i < 7; ++i) dot2 += slp.weights(0, i) * r[i];
  EXPECT_NEAR(score_entity(r, cls, slp), std::tanh(dot2), 1e-15);
}

TEST(Reduce, PerClassMaximumWithZeroDefault) {
  Eigen::VectorXd u = reduce({{0, 0.3}, {0, 0.7}}, 3);
  EXPECT_DOUBLE_EQ(u[0], 0.7);
  EXPECT_DOUBLE_EQ(u[1], 0.0);
  EXPECT_DOUBLE_EQ(u[2], 0.0);

  EXPECT_EQ(reduce({}, 4).cwiseAbs().maxCoeff(), 0.0);

  Eigen::VectorXd v = reduce({{0, 0.7}, {1, 0.9}}, 3);
  EXPECT_DOUBLE_EQ(v[0], 0.7);
  EXPECT_DOUBLE_EQ(v[1], 0.9);
  EXPECT_DOUBLE_EQ(v[2], 0.0);

  // negative maxima survive (0 is only for empty classes)
  Eigen::VectorXd w = reduce({{1, -0.5}, {1, -0.2}}, 2);
  EXPECT_DOUBLE_EQ(w[1], -0.2);
}

TEST(Reduce, DominanceProperty) {
  std::vector<std::pair<int, double>> scores{{0, 0.5}, {0, 0.2}, {1, 0.4}};
  double before = reduce(scores, 2)[0];
  scores[0].second += 0.1;  // raise the maximum
  EXPECT_GT(reduce(scores, 2)[0], before);
  scores[0].second = 0.6;
  scores[1].second = 0.3;  // raise a non-maximal score below the max
  EXPECT_DOUBLE_EQ(reduce(scores, 2)[0], 0.6);
}

TEST(ContextualConv, OutputShape) {
  Rng rng(43);
  ConvParams conv;
  conv.kernels = random_mat(32, 32 * 7, rng);
  conv.biases = Eigen::VectorXd::Random(32);
  conv.width = 7;
  Mat u = random_mat(5, 32, rng);
  Mat out = contextual_conv(u, conv);
  EXPECT_EQ(out.rows(), 5);
  EXPECT_EQ(out.cols(), 32);
}

TEST(ContextualConv, ZeroInputZeroBiasGivesZero) {
  ConvParams conv;
  conv.kernels = Mat::Random(8, 4 * 7);
  conv.biases = Eigen::VectorXd::Zero(8);
  conv.width = 7;
  Mat out = contextual_conv(Mat::Zero(6, 4), conv);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ContextualConv, SingleTokenOracle) {
  Rng rng(44);
  int chans = 5, filters = 6;
  ConvParams conv;
  conv.kernels = random_mat(filters, chans * 7, rng);
  conv.biases = Eigen::VectorXd::Random(filters);
  conv.width = 7;
  Mat u = random_mat(1, chans, rng);
  Mat out = contextual_conv(u, conv);
  // all padded neighbours are zero; only the kernel's center column fires
  for (int f = 0; f < filters; ++f) {
    double acc = conv.biases[f];
    for (int c = 0; c < chans; ++c) acc += conv.kernels(f, c * 7 + 3) * u(0, c);
    EXPECT_NEAR(out(0, f), std::tanh(acc), 1e-14);
  }
}

TEST(ContextualConv, LocationInvariance) {
  Rng rng(45);
  int chans = 4, filters = 5, t_len = 9;
  ConvParams conv;
  conv.kernels = random_mat(filters, chans * 7, rng);
  conv.biases = Eigen::VectorXd::Random(filters);
  conv.width = 7;
  Mat a = Mat::Zero(t_len, chans), b = Mat::Zero(t_len, chans);
  a(4, 2) = 1.7;
  b(5, 2) = 1.7;
  Mat out_a = contextual_conv(a, conv);
  Mat out_b = contextual_conv(b, conv);
  for (int t = 2; t <= 8; ++t)
    for (int f = 0; f < filters; ++f)
      ASSERT_NEAR(out_b(t, f), out_a(t - 1, f), 1e-15) << t << "," << f;
}

TEST(Featurize, LengthPreservationAndZeroHits) {
  KnowledgeStore store = fixture_store();
  EntityIndex index = build_index(store);
  index.correction.fuzzy_threshold = 1.1;  // keep unknown tokens unknown
  FeaturizerConfig cfg;
  Rng rng(46);
  ParamStore ps;
  init_featurizer(ps, 3, cfg, rng);
  SlpParams slp = slp_from(ps, cfg.ablation);
  ConvParams conv = conv_from(ps, cfg);

  Mat q = featurize({"play", "godzilla", "by", "eminem"}, index, store, cfg, slp, conv);
  EXPECT_EQ(q.rows(), 4);
  EXPECT_EQ(q.cols(), 32);

  // no KG hit anywhere: every row equals the bias-and-tanh constant row
  Mat zero_hits = featurize({"qqq", "www", "zzz"}, index, store, cfg, slp, conv);
  for (int t = 0; t < 3; ++t)
    for (int f = 0; f < 32; ++f)
      ASSERT_NEAR(zero_hits(t, f), std::tanh(ps.get("cnn.b").t.values(0, f)), 1e-14);
}

// The tape path and the composed published pipeline agree bit-for-bit.
TEST(Featurize, GraphMatchesPurePath) {
  Rng rng(47);
  for (Ablation ab :
       {Ablation::none, Ablation::b, Ablation::c, Ablation::d, Ablation::e}) {
    KnowledgeStore store = random_store(rng, 40, 5);
    EntityIndex index = build_index(store);
    FeaturizerConfig cfg;
    cfg.ablation = ab;
    cfg.cnn_filters = 8;
    ParamStore ps;
    init_featurizer(ps, static_cast<int>(store.class_set.size()), cfg, rng);
    SlpParams slp = slp_from(ps, ab);
    ConvParams conv = conv_from(ps, cfg);

    std::vector<std::string> grams = testsupport::all_grams(store);
    if (grams.empty()) continue;
    std::vector<std::string> tokens;
    for (int i = 0; i < 4; ++i) {
      auto toks = split_tokens(grams[rng.uniform_int(0, (int64_t)grams.size() - 1)]);
      tokens.insert(tokens.end(), toks.begin(), toks.end());
    }

    Mat pure = featurize(tokens, index, store, cfg, slp, conv);
    CandidateSet set = collect_candidates(tokens, index, store, cfg);
    UtteranceFeatures feats = build_feature_blocks(set, store, cfg);
    Graph g;
    Graph::NodeId q = dexter_embed(g, ps, feats, cfg);
    ASSERT_EQ(g.val(q).rows(), pure.rows());
    ASSERT_EQ(g.val(q).cols(), pure.cols());
    ASSERT_LT((g.val(q) - pure).cwiseAbs().maxCoeff(), 1e-14)
        << "ablation " << ablation_to_string(ab);
  }
}

// Ablation (b): the per-entity score must equal the elementwise max over
// the candidate's nonzero tf-idf slots.
TEST(Featurize, AblationBMaxPoolOracle) {
  Rng rng(48);
  KnowledgeStore store = random_store(rng, 60, 6);
  EntityIndex index = build_index(store);
  FeaturizerConfig cfg;
  cfg.ablation = Ablation::b;
  cfg.cnn_filters = 8;

  std::vector<std::string> grams = testsupport::all_grams(store);
  ASSERT_FALSE(grams.empty());
  std::vector<std::string> tokens =
      split_tokens(grams[rng.uniform_int(0, (int64_t)grams.size() - 1)]);
  CandidateSet set = collect_candidates(tokens, index, store, cfg);
  UtteranceFeatures feats = build_feature_blocks(set, store, cfg);

  for (int t = 0; t < set.t_len; ++t) {
    const TokenFeatureBlock& block = feats.tokens[t];
    for (int i = 0; i < block.r_rows.rows(); ++i) {
      Eigen::VectorXd r = block.r_rows.row(i).transpose();
      double closed_form = 0.0;
      for (int s = 0; s + 1 < r.size(); ++s)
        if (r[s] != 0.0) closed_form = std::max(closed_form, r[s]);
      ASSERT_DOUBLE_EQ(score_entity_maxpool(r), closed_form);
    }
  }
}

TEST(Featurize, SlpAndCnnGradientAudit) {
  Rng rng(49);
  for (Ablation ab : {Ablation::none, Ablation::c, Ablation::d}) {
    FeaturizerConfig cfg;
    cfg.ablation = ab;
    cfg.cnn_filters = 4;
    int num_classes = 3;
    ParamStore ps;
    init_featurizer(ps, num_classes, cfg, rng);

    // synthetic candidate blocks
    UtteranceFeatures feats;
    feats.num_classes = num_classes;
    for (int t = 0; t < 4; ++t) {
      TokenFeatureBlock block;
      int n = static_cast<int>(rng.uniform_int(0, 5));
      block.r_rows = random_mat(n, cfg.r_dim(), rng, 0.8).cwiseAbs();
      block.classes.resize(n);
      for (int i = 0; i < n; ++i)
        block.classes[i] = static_cast<int>(rng.uniform_int(0, num_classes - 1));
      feats.tokens.push_back(std::move(block));
    }
    Mat w = random_mat(4, dexter_output_dim(num_classes, cfg), rng);
    auto report = gradcheck::compare_grads(ps, [&](Graph& g) {
      return g.sum_all(g.cmul(dexter_embed(g, ps, feats, cfg), w));
    });
    EXPECT_TRUE(report.ok(1e-4))
        << ablation_to_string(ab) << " " << report.worst << " rel=" << report.max_rel_err;
  }
}

TEST(Featurize, ClassBlockIsolationInGraph) {
  Rng rng(50);
  FeaturizerConfig cfg;
  cfg.cnn_filters = 4;
  int num_classes = 3;
  ParamStore ps;
  init_featurizer(ps, num_classes, cfg, rng);

  UtteranceFeatures feats;
  feats.num_classes = num_classes;
  TokenFeatureBlock block;
  block.r_rows = random_mat(2, cfg.r_dim(), rng).cwiseAbs();
  block.classes = {1, 1};  // class-1 entities only
  feats.tokens.push_back(block);

  auto u_values = [&]() {
    Graph g;
    // read the reduction layer before the CNN
    Graph::NodeId w = g.param(ps.get("slp.w"));
    Graph::NodeId b = g.param(ps.get("slp.b"));
    Graph::NodeId s = g.tanh_(g.class_dot(block.r_rows, w, b, block.classes));
    return Mat(g.val(g.segment_max0(s, block.classes, num_classes)));
  };
  Mat before = u_values();
  ps.get("slp.w").t.values.row(0).array() += 2.0;  // perturb block 0
  ps.get("slp.w").t.values.row(2).array() -= 1.0;  // perturb block 2
  Mat after = u_values();
  EXPECT_EQ((before - after).cwiseAbs().maxCoeff(), 0.0);
}
