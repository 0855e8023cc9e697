#include <gtest/gtest.h>

#include <cmath>

#include "dexter/crf.hpp"
#include "dexter/neural.hpp"
#include "dexter/rng.hpp"
#include "gradcheck.hpp"

using namespace dexter;
using gradcheck::random_mat;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar reference recurrence with the [i f g o] packing.
Mat reference_lstm(const Mat& x, const Mat& wx, const Mat& wh, const Mat& b, int hidden,
                   bool reverse) {
  int t_len = static_cast<int>(x.rows());
  Mat out(t_len, hidden);
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(hidden);
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(hidden);
  for (int step = 0; step < t_len; ++step) {
    int t = reverse ? t_len - 1 - step : step;
    Eigen::RowVectorXd pre = x.row(t) * wx + h * wh + b.row(0);
    for (int j = 0; j < hidden; ++j) {
      double i_g = sig(pre(j));
      double f_g = sig(pre(hidden + j));
      double g_g = std::tanh(pre(2 * hidden + j));
      double o_g = sig(pre(3 * hidden + j));
      c(j) = f_g * c(j) + i_g * g_g;
      h(j) = o_g * std::tanh(c(j));
    }
    out.row(t) = h;
  }
  return out;
}

}  // namespace

TEST(Lstm, MatchesHandRolledRecurrence) {
  Rng rng(21);
  int d = 3, h = 2, t_len = 4;
  ParamStore ps;
  init_lstm(ps, "l", d, h, rng);
  ps.get("l.wx").t.values = random_mat(d, 4 * h, rng, 0.5);
  ps.get("l.wh").t.values = random_mat(h, 4 * h, rng, 0.5);
  ps.get("l.b").t.values = random_mat(1, 4 * h, rng, 0.2);
  Mat x = random_mat(t_len, d, rng);

  for (bool reverse : {false, true}) {
    Graph g;
    Graph::NodeId out = lstm_run(g, ps, "l", g.constant(x), h, reverse);
    Mat expected = reference_lstm(x, ps.get("l.wx").t.values, ps.get("l.wh").t.values,
                                  ps.get("l.b").t.values, h, reverse);
    ASSERT_LT((g.val(out) - expected).cwiseAbs().maxCoeff(), 1e-12)
        << "reverse=" << reverse;
  }
}

TEST(Lstm, BilstmShapesAndSingleStep) {
  Rng rng(22);
  ParamStore ps;
  init_bilstm(ps, "seq", 4, 5, rng);
  Graph g;
  Mat x = random_mat(3, 4, rng);
  Graph::NodeId out = bilstm_encode(g, ps, "seq", g.constant(x), 5);
  EXPECT_EQ(g.val(out).rows(), 3);
  EXPECT_EQ(g.val(out).cols(), 10);  // 2 * hidden

  // T = 1: both directions see the same single input.
  Graph g1;
  Mat x1 = random_mat(1, 4, rng);
  Graph::NodeId o1 = bilstm_encode(g1, ps, "seq", g1.constant(x1), 5);
  EXPECT_EQ(g1.val(o1).rows(), 1);
}

TEST(Lstm, GradientAudit) {
  Rng rng(23);
  for (int trial = 0; trial < 3; ++trial) {
    ParamStore ps;
    int d = 3, h = 2, t_len = 4;
    init_bilstm(ps, "seq", d, h, rng);
    Mat x = random_mat(t_len, d, rng);
    Mat w = random_mat(t_len, 2 * h, rng);
    auto report = gradcheck::compare_grads(ps, [&](Graph& g) {
      return g.sum_all(g.cmul(bilstm_encode(g, ps, "seq", g.constant(x), h), w));
    });
    EXPECT_TRUE(report.ok(1e-4)) << report.worst << " rel=" << report.max_rel_err;
  }
}

TEST(CharWordEncode, WidthsAndDeterminism) {
  EncoderDims paper;  // defaults
  EXPECT_EQ(paper.output_dim(), 400);  // 200 + 2*100
  EncoderDims desk{10, 4, 5};
  EXPECT_EQ(desk.output_dim(), 20);

  Rng rng(24);
  ParamStore ps;
  init_char_word(ps, 6, 8, desk, rng);
  TokenIds ids;
  ids.word_ids = {2, 3, 2};
  ids.char_ids = {{1, 2}, {3}, {1, 2}};
  Graph g;
  Graph::NodeId out = char_word_encode(g, ps, ids, desk);
  EXPECT_EQ(g.val(out).rows(), 3);
  EXPECT_EQ(g.val(out).cols(), 20);
  // same token (ids 2 / chars {1,2}) twice -> identical rows
  EXPECT_EQ((g.val(out).row(0) - g.val(out).row(2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CharWordEncode, EmbeddingRowGradients) {
  Rng rng(25);
  ParamStore ps;
  EncoderDims desk{3, 2, 2};
  init_char_word(ps, 5, 6, desk, rng);
  TokenIds ids;
  ids.word_ids = {1, 4};
  ids.char_ids = {{2, 3}, {5, 1, 2}};
  Mat w = random_mat(2, desk.output_dim(), rng);
  auto report = gradcheck::compare_grads(ps, [&](Graph& g) {
    return g.sum_all(g.cmul(char_word_encode(g, ps, ids, desk), w));
  });
  EXPECT_TRUE(report.ok(1e-4)) << report.worst << " rel=" << report.max_rel_err;
}

// --- CRF ---------------------------------------------------------------------

namespace {

double brute_log_z(const Mat& emis, const Mat& trans, const Mat& start, const Mat& stop,
                   std::vector<int>* best_path = nullptr) {
  int t_len = static_cast<int>(emis.rows());
  int l = static_cast<int>(emis.cols());
  int64_t total = 1;
  for (int t = 0; t < t_len; ++t) total *= l;
  double z = 0.0;
  double best = -1e300;
  std::vector<int> path(t_len), best_found;
  double mx = -1e300;
  std::vector<double> scores;
  scores.reserve(total);
  for (int64_t code = 0; code < total; ++code) {
    int64_t c = code;
    for (int t = 0; t < t_len; ++t) {
      path[t] = static_cast<int>(c % l);
      c /= l;
    }
    double s = start(0, path[0]) + stop(0, path[t_len - 1]);
    for (int t = 0; t < t_len; ++t) s += emis(t, path[t]);
    for (int t = 1; t < t_len; ++t) s += trans(path[t - 1], path[t]);
    scores.push_back(s);
    mx = std::max(mx, s);
    if (s > best) {
      best = s;
      best_found = path;
    }
  }
  for (double s : scores) z += std::exp(s - mx);
  if (best_path) *best_path = best_found;
  return mx + std::log(z);
}

}  // namespace

TEST(Crf, UniformTwoLabelSingleStep) {
  Mat emis = Mat::Zero(1, 2);
  Mat trans = Mat::Zero(2, 2), start = Mat::Zero(1, 2), stop = Mat::Zero(1, 2);
  double ll = crf_log_likelihood(emis, {0}, trans, start, stop);
  EXPECT_NEAR(ll, std::log(0.5), 1e-12);
}

TEST(Crf, MatchesExhaustiveEnumeration) {
  Rng rng(26);
  for (int trial = 0; trial < 100; ++trial) {
    int t_len = static_cast<int>(rng.uniform_int(1, 4));
    int l = static_cast<int>(rng.uniform_int(2, 4));
    Mat emis = random_mat(t_len, l, rng);
    Mat trans = random_mat(l, l, rng);
    Mat start = random_mat(1, l, rng);
    Mat stop = random_mat(1, l, rng);
    std::vector<int> gold(t_len);
    for (int t = 0; t < t_len; ++t) gold[t] = (int)rng.uniform_int(0, l - 1);

    std::vector<int> brute_best;
    double log_z = brute_log_z(emis, trans, start, stop, &brute_best);
    double gold_score = start(0, gold[0]) + stop(0, gold[t_len - 1]);
    for (int t = 0; t < t_len; ++t) gold_score += emis(t, gold[t]);
    for (int t = 1; t < t_len; ++t) gold_score += trans(gold[t - 1], gold[t]);

    double ll = crf_log_likelihood(emis, gold, trans, start, stop);
    ASSERT_NEAR(ll, gold_score - log_z, 1e-10);
    ASSERT_LE(ll, 1e-12);
    ASSERT_GT(std::exp(ll), 0.0);
    ASSERT_LE(std::exp(ll), 1.0 + 1e-12);

    // Graph route agrees with the plain route.
    ParamStore ps;
    ps.create("crf.trans", {l, l}).t.values = trans;
    ps.create("crf.start", {1, l}).t.values = start;
    ps.create("crf.stop", {1, l}).t.values = stop;
    Graph g;
    BioMask no_mask;
    no_mask.trans_keep = Mat::Ones(l, l);
    no_mask.trans_pen = Mat::Zero(l, l);
    no_mask.start_keep = Mat::Ones(1, l);
    no_mask.start_pen = Mat::Zero(1, l);
    CrfNodes nodes = crf_nodes(g, ps, "crf", no_mask);
    Graph::NodeId ll_node = crf_log_likelihood_node(g, g.constant(emis), gold, nodes);
    ASSERT_NEAR(g.val(ll_node)(0, 0), ll, 1e-10);

    // Viterbi equals the exhaustive argmax (ties have measure zero here).
    std::vector<int> vit = crf_viterbi(emis, trans, start, stop);
    ASSERT_EQ(vit, brute_best);
  }
}

TEST(Crf, PathProbabilitiesSumToOne) {
  Rng rng(27);
  for (int trial = 0; trial < 20; ++trial) {
    int t_len = (int)rng.uniform_int(1, 4);
    int l = (int)rng.uniform_int(2, 4);
    Mat emis = random_mat(t_len, l, rng);
    Mat trans = random_mat(l, l, rng);
    Mat start = random_mat(1, l, rng);
    Mat stop = random_mat(1, l, rng);
    double log_z = brute_log_z(emis, trans, start, stop);

    int64_t total = 1;
    for (int t = 0; t < t_len; ++t) total *= l;
    double sum = 0.0;
    std::vector<int> path(t_len);
    for (int64_t code = 0; code < total; ++code) {
      int64_t c = code;
      for (int t = 0; t < t_len; ++t) {
        path[t] = (int)(c % l);
        c /= l;
      }
      double ll = crf_log_likelihood(emis, path, trans, start, stop);
      sum += std::exp(ll);
    }
    (void)log_z;
    ASSERT_NEAR(sum, 1.0, 1e-10);
  }
}

TEST(Crf, PeakedEmissionsFollowArgmax) {
  Mat emis(3, 3);
  emis << 10, 0, 0, 0, 0, 10, 0, 10, 0;
  Mat trans = Mat::Constant(3, 3, 1e-6);
  Mat start = Mat::Zero(1, 3), stop = Mat::Zero(1, 3);
  EXPECT_EQ(crf_viterbi(emis, trans, start, stop), (std::vector<int>{0, 2, 1}));
}

TEST(Crf, AllEqualPotentialsDecodeToZeros) {
  Mat emis = Mat::Constant(4, 3, 0.7);
  Mat trans = Mat::Constant(3, 3, 0.3);
  Mat start = Mat::Constant(1, 3, 0.1), stop = Mat::Constant(1, 3, 0.2);
  EXPECT_EQ(crf_viterbi(emis, trans, start, stop), (std::vector<int>{0, 0, 0, 0}));
}

TEST(Crf, LengthMismatchThrows) {
  Mat emis = Mat::Zero(2, 2), trans = Mat::Zero(2, 2), sv = Mat::Zero(1, 2);
  EXPECT_THROW(crf_log_likelihood(emis, {0}, trans, sv, sv), std::runtime_error);
}

TEST(Crf, TransitionGradientAudit) {
  Rng rng(28);
  for (int trial = 0; trial < 5; ++trial) {
    int t_len = 4, l = 3;
    ParamStore ps;
    init_crf(ps, "crf", l, rng);
    Mat emis = random_mat(t_len, l, rng);
    std::vector<int> gold{0, 2, 1, 1};
    BioMask no_mask;
    no_mask.trans_keep = Mat::Ones(l, l);
    no_mask.trans_pen = Mat::Zero(l, l);
    no_mask.start_keep = Mat::Ones(1, l);
    no_mask.start_pen = Mat::Zero(1, l);
    auto report = gradcheck::compare_grads(ps, [&](Graph& g) {
      CrfNodes nodes = crf_nodes(g, ps, "crf", no_mask);
      return g.scale(crf_log_likelihood_node(g, g.constant(emis), gold, nodes), -1.0);
    });
    EXPECT_TRUE(report.ok(1e-4)) << report.worst << " rel=" << report.max_rel_err;
  }
}

TEST(Crf, BioMaskBlocksIllegalTransitions) {
  std::vector<std::string> labels{"O", "B-song", "I-song", "B-movie", "I-movie"};
  BioMask m = make_bio_mask(labels, true);
  // O -> I-song masked
  EXPECT_EQ(m.trans_pen(0, 2), -1e4);
  // B-song -> I-movie masked, B-song -> I-song open
  EXPECT_EQ(m.trans_pen(1, 4), -1e4);
  EXPECT_EQ(m.trans_pen(1, 2), 0.0);
  // I-song -> I-song open
  EXPECT_EQ(m.trans_pen(2, 2), 0.0);
  // start -> I-x masked
  EXPECT_EQ(m.start_pen(0, 2), -1e4);
  EXPECT_EQ(m.start_pen(0, 1), 0.0);

  BioMask off = make_bio_mask(labels, false);
  EXPECT_EQ(off.trans_pen.cwiseAbs().maxCoeff(), 0.0);
}

// --- Adam ---------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamStore ps;
  Rng rng(29);
  ps.create("p", {2, 3}).t.values = random_mat(2, 3, rng);
  Mat before = ps.get("p").t.values;
  ps.zero_grads();
  adam_step(ps, {}, 1);
  EXPECT_EQ((ps.get("p").t.values - before).cwiseAbs().maxCoeff(), 0.0);
}

// First bias-corrected step moves by ~lr against a unit gradient.
TEST(Adam, FirstStepMagnitude) {
  ParamStore ps;
  Param& p = ps.create("w", {1, 1});
  p.t.values(0, 0) = 1.0;
  p.zero_grad();
  (*p.t.grad)(0, 0) = 1.0;
  adam_step(ps, {}, 1);
  EXPECT_NEAR(p.t.values(0, 0), 1.0 - 0.001, 1e-10);
}

TEST(Adam, DeterministicAcrossStores) {
  Rng rng(30);
  Mat vals = random_mat(3, 3, rng), grads = random_mat(3, 3, rng);
  ParamStore a, b;
  for (ParamStore* ps : {&a, &b}) {
    Param& p = ps->create("w", {3, 3});
    p.t.values = vals;
    p.zero_grad();
    *p.t.grad = grads;
  }
  for (int t = 1; t <= 5; ++t) {
    adam_step(a, {}, t);
    adam_step(b, {}, t);
  }
  EXPECT_EQ((a.get("w").t.values - b.get("w").t.values).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamStore ps;
  Param& p = ps.create("seq.fwd.wx", {1, 2});
  p.zero_grad();
  (*p.t.grad)(0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(ps, {}, 1);
    FAIL() << "expected non-finite gradient error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("seq.fwd.wx"), std::string::npos);
  }
}

// --- dropout ------------------------------------------------------------------

TEST(Dropout, RateZeroAndInferenceAreIdentity) {
  Rng rng(31);
  Mat x = random_mat(4, 4, rng);
  Rng r1(1), r2(2);
  EXPECT_EQ((dropout_apply(x, 0.0, true, r1) - x).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((dropout_apply(x, 0.6, false, r2) - x).cwiseAbs().maxCoeff(), 0.0);
  Rng r3(3);
  EXPECT_THROW(dropout_apply(x, 1.0, true, r3), std::runtime_error);
}

TEST(Dropout, InvertedDropoutStatistics) {
  Rng rng(32);
  Mat x = Mat::Ones(100, 1000);  // 1e5 unit entries
  Mat y = dropout_apply(x, 0.6, true, rng);
  double mean = y.sum() / static_cast<double>(y.size());
  EXPECT_NEAR(mean, 1.0, 0.02);
  int64_t zeros = 0;
  for (int64_t i = 0; i < y.size(); ++i) zeros += y.data()[i] == 0.0;
  double zero_frac = static_cast<double>(zeros) / static_cast<double>(y.size());
  EXPECT_NEAR(zero_frac, 0.6, 0.01);
  // survivors are scaled by 1/(1-rate)
  double expected = 1.0 / 0.4;
  for (int64_t i = 0; i < y.size(); ++i) {
    double v = y.data()[i];
    ASSERT_TRUE(v == 0.0 || std::abs(v - expected) < 1e-12);
  }
}
