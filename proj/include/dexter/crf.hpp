#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dexter/graph.hpp"
#include "dexter/neural.hpp"

namespace dexter {

// Linear-chain CRF with virtual start/stop rows kept as separate vectors.
// Parameters live under <prefix>.trans (L x L), <prefix>.start (1 x L) and
// <prefix>.stop (1 x L).
inline void init_crf(ParamStore& ps, const std::string& prefix, int num_labels,
                     Rng& rng) {
  init_uniform(ps.create(prefix + ".trans", {num_labels, num_labels}), 0.1, rng);
  init_uniform(ps.create(prefix + ".start", {1, num_labels}), 0.1, rng);
  init_uniform(ps.create(prefix + ".stop", {1, num_labels}), 0.1, rng);
}

// Hard BIO mask: a transition into I-x is valid only from B-x or I-x, and a
// sequence cannot start at I-x. Disallowed entries are forced to -1e4 and
// carry no gradient. With `enabled` false the mask is the identity.
struct BioMask {
  Mat trans_keep, trans_pen;  // keep in {0,1}; pen = -1e4 where keep == 0
  Mat start_keep, start_pen;
};

inline BioMask make_bio_mask(const std::vector<std::string>& labels, bool enabled) {
  int l = static_cast<int>(labels.size());
  BioMask m;
  m.trans_keep = Mat::Ones(l, l);
  m.trans_pen = Mat::Zero(l, l);
  m.start_keep = Mat::Ones(1, l);
  m.start_pen = Mat::Zero(1, l);
  if (!enabled) return m;
  auto entity_of = [](const std::string& lab) -> std::string {
    if (lab.size() > 2 && (lab[0] == 'B' || lab[0] == 'I') && lab[1] == '-')
      return lab.substr(2);
    return "";
  };
  for (int j = 0; j < l; ++j) {
    if (labels[j].size() < 2 || labels[j][0] != 'I' || labels[j][1] != '-') continue;
    std::string ent = entity_of(labels[j]);
    m.start_keep(0, j) = 0.0;
    m.start_pen(0, j) = -1e4;
    for (int i = 0; i < l; ++i) {
      bool ok = (labels[i][0] == 'B' || labels[i][0] == 'I') && entity_of(labels[i]) == ent;
      if (!ok) {
        m.trans_keep(i, j) = 0.0;
        m.trans_pen(i, j) = -1e4;
      }
    }
  }
  return m;
}

struct CrfNodes {
  Graph::NodeId trans, start, stop;  // masked views
};

inline CrfNodes crf_nodes(Graph& g, ParamStore& ps, const std::string& prefix,
                          const BioMask& mask) {
  CrfNodes n;
  n.trans = g.affine_const(g.param(ps.get(prefix + ".trans")), mask.trans_keep,
                           mask.trans_pen);
  n.start = g.affine_const(g.param(ps.get(prefix + ".start")), mask.start_keep,
                           mask.start_pen);
  n.stop = g.param(ps.get(prefix + ".stop"));
  return n;
}

// log p(gold | emissions) = score(gold) - logZ, with logZ from the forward
// algorithm in log space. Always <= 0.
inline Graph::NodeId crf_log_likelihood_node(Graph& g, Graph::NodeId emissions,
                                             const std::vector<int>& gold,
                                             const CrfNodes& crf) {
  int t_len = static_cast<int>(g.val(emissions).rows());
  if (static_cast<int>(gold.size()) != t_len)
    throw std::runtime_error("crf_log_likelihood: gold length " +
                             std::to_string(gold.size()) + " != emission rows " +
                             std::to_string(t_len));

  // Gold path score.
  std::vector<std::pair<int, int>> emis_picks;
  for (int t = 0; t < t_len; ++t) emis_picks.emplace_back(t, gold[t]);
  Graph::NodeId score = g.pick_sum(emissions, emis_picks);
  score = g.add(score, g.pick_sum(crf.start, {{0, gold[0]}}));
  score = g.add(score, g.pick_sum(crf.stop, {{0, gold[t_len - 1]}}));
  if (t_len > 1) {
    std::vector<std::pair<int, int>> trans_picks;
    for (int t = 1; t < t_len; ++t) trans_picks.emplace_back(gold[t - 1], gold[t]);
    score = g.add(score, g.pick_sum(crf.trans, trans_picks));
  }

  // Partition function.
  Graph::NodeId alpha = g.add(crf.start, g.row(emissions, 0));
  for (int t = 1; t < t_len; ++t)
    alpha = g.add(g.lse_rows_plus(alpha, crf.trans), g.row(emissions, t));
  Graph::NodeId log_z = g.logsumexp(g.add(alpha, crf.stop));

  return g.add(score, g.scale(log_z, -1.0));
}

// Plain-matrix convenience wrapper used at evaluation time.
inline double crf_log_likelihood(const Mat& emissions, const std::vector<int>& gold,
                                 const Mat& trans, const Mat& start, const Mat& stop) {
  int t_len = static_cast<int>(emissions.rows());
  if (static_cast<int>(gold.size()) != t_len)
    throw std::runtime_error("crf_log_likelihood: length mismatch");
  double score = start(0, gold[0]) + stop(0, gold[t_len - 1]);
  for (int t = 0; t < t_len; ++t) score += emissions(t, gold[t]);
  for (int t = 1; t < t_len; ++t) score += trans(gold[t - 1], gold[t]);

  int l = static_cast<int>(emissions.cols());
  Eigen::RowVectorXd alpha = start.row(0) + emissions.row(0);
  for (int t = 1; t < t_len; ++t) {
    Eigen::RowVectorXd next(l);
    for (int j = 0; j < l; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < l; ++i) mx = std::max(mx, alpha(i) + trans(i, j));
      double s = 0.0;
      for (int i = 0; i < l; ++i) s += std::exp(alpha(i) + trans(i, j) - mx);
      next(j) = mx + std::log(s) + emissions(t, j);
    }
    alpha = next;
  }
  alpha += stop.row(0);
  double mx = alpha.maxCoeff();
  double log_z = mx + std::log((alpha.array() - mx).exp().sum());
  return score - log_z;
}

// Max-scoring path; ties resolve toward the lower label index at every
// decision, so an all-equal potential field decodes to label 0 throughout.
inline std::vector<int> crf_viterbi(const Mat& emissions, const Mat& trans,
                                    const Mat& start, const Mat& stop) {
  int t_len = static_cast<int>(emissions.rows());
  int l = static_cast<int>(emissions.cols());
  if (t_len < 1) throw std::runtime_error("crf_viterbi: empty sequence");

  Mat dp(t_len, l);
  std::vector<std::vector<int>> back(t_len, std::vector<int>(l, 0));
  for (int j = 0; j < l; ++j) dp(0, j) = start(0, j) + emissions(0, j);
  for (int t = 1; t < t_len; ++t) {
    for (int j = 0; j < l; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int best_i = 0;
      for (int i = 0; i < l; ++i) {
        double s = dp(t - 1, i) + trans(i, j);
        if (s > best) {
          best = s;
          best_i = i;
        }
      }
      dp(t, j) = best + emissions(t, j);
      back[t][j] = best_i;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  int best_j = 0;
  for (int j = 0; j < l; ++j) {
    double s = dp(t_len - 1, j) + stop(0, j);
    if (s > best) {
      best = s;
      best_j = j;
    }
  }
  std::vector<int> path(t_len);
  path[t_len - 1] = best_j;
  for (int t = t_len - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
  return path;
}

// Applies the BIO mask to raw parameter values for decode-time use.
inline Mat masked_trans(const Mat& trans, const BioMask& m) {
  return trans.cwiseProduct(m.trans_keep) + m.trans_pen;
}
inline Mat masked_start(const Mat& start, const BioMask& m) {
  return start.cwiseProduct(m.start_keep) + m.start_pen;
}

}  // namespace dexter
