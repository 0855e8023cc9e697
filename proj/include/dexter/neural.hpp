#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dexter/graph.hpp"
#include "dexter/rng.hpp"
#include "dexter/tensor.hpp"

namespace dexter {

inline void init_uniform(Param& p, double radius, Rng& rng) {
  double* d = p.t.values.data();
  for (int64_t i = 0; i < p.t.values.size(); ++i) d[i] = rng.uniform(-radius, radius);
}

inline void init_glorot(Param& p, Rng& rng) {
  double fan_in = static_cast<double>(p.t.values.rows());
  double fan_out = static_cast<double>(p.t.values.cols());
  init_uniform(p, std::sqrt(6.0 / (fan_in + fan_out)), rng);
}

// --- LSTM -------------------------------------------------------------------
//
// Gate pre-activations are packed [i f g o] along the 4H axis. wx: D x 4H,
// wh: H x 4H, b: 1 x 4H. The forget-gate bias starts at 1.

inline void init_lstm(ParamStore& ps, const std::string& prefix, int in_dim, int hidden,
                      Rng& rng) {
  init_glorot(ps.create(prefix + ".wx", {in_dim, 4 * hidden}), rng);
  init_glorot(ps.create(prefix + ".wh", {hidden, 4 * hidden}), rng);
  Param& b = ps.create(prefix + ".b", {1, 4 * hidden});
  b.t.values.setZero();
  b.t.values.middleCols(hidden, hidden).setOnes();
}

// One direction over the rows of x (T x D). Outputs are written back in
// original positions, so reverse=true yields row t = state after reading
// x[T-1..t]. Returns T x H.
inline Graph::NodeId lstm_run(Graph& g, ParamStore& ps, const std::string& prefix,
                              Graph::NodeId x, int hidden, bool reverse) {
  Graph::NodeId wx = g.param(ps.get(prefix + ".wx"));
  Graph::NodeId wh = g.param(ps.get(prefix + ".wh"));
  Graph::NodeId b = g.param(ps.get(prefix + ".b"));
  int t_len = static_cast<int>(g.val(x).rows());

  std::vector<Graph::NodeId> outputs(t_len);
  Graph::NodeId h = g.constant(Mat::Zero(1, hidden));
  Graph::NodeId c = g.constant(Mat::Zero(1, hidden));
  for (int step = 0; step < t_len; ++step) {
    int t = reverse ? t_len - 1 - step : step;
    Graph::NodeId xt = g.row(x, t);
    Graph::NodeId pre =
        g.add_bias(g.add(g.matmul(xt, wx), g.matmul(h, wh)), b);
    Graph::NodeId i_gate = g.sigmoid_(g.slice_cols(pre, 0, hidden));
    Graph::NodeId f_gate = g.sigmoid_(g.slice_cols(pre, hidden, hidden));
    Graph::NodeId g_gate = g.tanh_(g.slice_cols(pre, 2 * hidden, hidden));
    Graph::NodeId o_gate = g.sigmoid_(g.slice_cols(pre, 3 * hidden, hidden));
    c = g.add(g.mul(f_gate, c), g.mul(i_gate, g_gate));
    h = g.mul(o_gate, g.tanh_(c));
    outputs[t] = h;
  }
  return g.concat_rows(outputs);
}

inline void init_bilstm(ParamStore& ps, const std::string& prefix, int in_dim,
                        int hidden, Rng& rng) {
  init_lstm(ps, prefix + ".fwd", in_dim, hidden, rng);
  init_lstm(ps, prefix + ".bwd", in_dim, hidden, rng);
}

// Left-to-right and right-to-left passes concatenated per position: T x 2H.
inline Graph::NodeId bilstm_encode(Graph& g, ParamStore& ps, const std::string& prefix,
                                   Graph::NodeId x, int hidden) {
  Graph::NodeId fwd = lstm_run(g, ps, prefix + ".fwd", x, hidden, false);
  Graph::NodeId bwd = lstm_run(g, ps, prefix + ".bwd", x, hidden, true);
  return g.concat_cols({fwd, bwd});
}

// --- char/word encoder -------------------------------------------------------

struct EncoderDims {
  int word_dim = 200;
  int char_dim = 200;
  int char_hidden = 100;
  int output_dim() const { return word_dim + 2 * char_hidden; }
};

// Token ids and char ids with id 0 reserved for UNK.
struct TokenIds {
  std::vector<int> word_ids;                // per token
  std::vector<std::vector<int>> char_ids;   // per token, per character
};

inline void init_char_word(ParamStore& ps, int vocab_words, int vocab_chars,
                           const EncoderDims& dims, Rng& rng) {
  init_uniform(ps.create("word.emb", {vocab_words, dims.word_dim}),
               std::sqrt(3.0 / dims.word_dim), rng);
  init_uniform(ps.create("char.emb", {vocab_chars, dims.char_dim}),
               std::sqrt(3.0 / dims.char_dim), rng);
  init_bilstm(ps, "char", dims.char_dim, dims.char_hidden, rng);
}

// Word embedding concatenated with the final states of a character bi-LSTM.
// Returns T x (word_dim + 2*char_hidden); deterministic per token.
inline Graph::NodeId char_word_encode(Graph& g, ParamStore& ps, const TokenIds& ids,
                                      const EncoderDims& dims) {
  size_t t_len = ids.word_ids.size();
  std::vector<Graph::NodeId> rows;
  rows.reserve(t_len);
  for (size_t t = 0; t < t_len; ++t) {
    Graph::NodeId word = g.param_rows(ps.get("word.emb"), {ids.word_ids[t]});
    Graph::NodeId chars = g.param_rows(ps.get("char.emb"), ids.char_ids[t]);
    int n_chars = static_cast<int>(ids.char_ids[t].size());
    Graph::NodeId fwd = lstm_run(g, ps, "char.fwd", chars, dims.char_hidden, false);
    Graph::NodeId bwd = lstm_run(g, ps, "char.bwd", chars, dims.char_hidden, true);
    rows.push_back(g.concat_cols(
        {word, g.row(fwd, n_chars - 1), g.row(bwd, 0)}));
  }
  return g.concat_rows(rows);
}

// --- dropout ------------------------------------------------------------------

// Inverted-dropout mask: entries are 0 with probability rate, else 1/(1-rate).
inline Mat dropout_mask(int64_t rows, int64_t cols, double rate, Rng& rng) {
  Mat m(rows, cols);
  double keep_scale = 1.0 / (1.0 - rate);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c)
      m(r, c) = rng.uniform() < rate ? 0.0 : keep_scale;
  return m;
}

// Training mode zeroes with probability rate and rescales survivors;
// inference mode is the identity.
inline Mat dropout_apply(const Mat& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

// --- Adam ---------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over every parameter in the store; t is the
// 1-based step count. Rejects non-finite gradients by parameter name.
inline void adam_step(ParamStore& ps, const AdamConfig& cfg, int64_t t) {
  if (t < 1) throw std::runtime_error("adam_step: step index must be >= 1");
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < ps.size(); ++i) {
    Param& p = ps.at(i);
    p.t.ensure_grad();
    const Mat& grad = *p.t.grad;
    if (!mat_all_finite(grad))
      throw std::runtime_error("adam_step: non-finite gradient in parameter '" +
                               p.name + "'");
    if (p.adam_m.size() == 0) {
      p.adam_m = Mat::Zero(grad.rows(), grad.cols());
      p.adam_v = Mat::Zero(grad.rows(), grad.cols());
    }
    p.adam_m = cfg.beta1 * p.adam_m + (1.0 - cfg.beta1) * grad;
    p.adam_v = cfg.beta2 * p.adam_v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    Mat m_hat = p.adam_m / bc1;
    Mat v_hat = p.adam_v / bc2;
    p.t.values.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
  }
}

}  // namespace dexter
