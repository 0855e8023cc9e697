#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dexter/tensor.hpp"

namespace dexter {

// Named parameter with Adam state. Parameters live in a ParamStore and are
// referenced by graphs; creation order is the canonical serialization order.
struct Param {
  std::string name;
  Tensor t;
  Mat adam_m, adam_v;

  void zero_grad() {
    t.ensure_grad();
    t.grad->setZero();
  }
};

class ParamStore {
 public:
  Param& create(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw std::runtime_error("duplicate param: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->t = Tensor::zeros(std::move(shape));
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
    return *params_[it->second];
  }
  const Param& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
    return *params_[it->second];
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  size_t size() const { return params_.size(); }
  Param& at(size_t i) { return *params_[i]; }
  const Param& at(size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Reverse-mode tape over row-major double matrices. Nodes are created in
// topological order by construction; backward() replays the tape from the
// loss down to the bound parameters, accumulating into Param::t.grad.
class Graph {
 public:
  using NodeId = int;

  NodeId constant(Mat v) {
    return push(std::move(v), false, nullptr, {});
  }

  // Zero-copy view of a whole parameter.
  NodeId param(Param& p) {
    NodeId id = push(Mat(), true, &p, {});
    nodes_[id].back = [id](Graph& g) {
      Param* p = g.nodes_[id].bound;
      p->t.ensure_grad();
      *p->t.grad += g.nodes_[id].grad;
    };
    return id;
  }

  // Row gather straight from a parameter, without materializing it as a node.
  NodeId param_rows(Param& p, std::vector<int> rows) {
    Mat v(rows.size(), p.t.values.cols());
    for (size_t i = 0; i < rows.size(); ++i) v.row(i) = p.t.values.row(rows[i]);
    NodeId id = push(std::move(v), true, nullptr, {});
    Param* pp = &p;
    nodes_[id].back = [id, pp, rows = std::move(rows)](Graph& g) {
      pp->t.ensure_grad();
      const Mat& gr = g.nodes_[id].grad;
      for (size_t i = 0; i < rows.size(); ++i) pp->t.grad->row(rows[i]) += gr.row(i);
    };
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    NodeId id = push(val(a) + val(b), needs(a) || needs(b), nullptr, {a, b});
    nodes_[id].back = [id, a, b](Graph& g) {
      g.bump(a, g.nodes_[id].grad);
      g.bump(b, g.nodes_[id].grad);
    };
    return id;
  }

  // a (m x n) + row vector b (1 x n) broadcast over rows.
  NodeId add_bias(NodeId a, NodeId b) {
    Mat v = val(a);
    v.rowwise() += Eigen::RowVectorXd(val(b).row(0));
    NodeId id = push(std::move(v), needs(a) || needs(b), nullptr, {a, b});
    nodes_[id].back = [id, a, b](Graph& g) {
      const Mat& gr = g.nodes_[id].grad;
      g.bump(a, gr);
      if (g.needs(b)) g.grad_ref(b) += gr.colwise().sum();
    };
    return id;
  }

  NodeId mul(NodeId a, NodeId b) {
    NodeId id =
        push(val(a).cwiseProduct(val(b)), needs(a) || needs(b), nullptr, {a, b});
    nodes_[id].back = [id, a, b](Graph& g) {
      const Mat& gr = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_ref(a) += gr.cwiseProduct(g.val(b));
      if (g.needs(b)) g.grad_ref(b) += gr.cwiseProduct(g.val(a));
    };
    return id;
  }

  // value = a .* mul_c + add_c; gradients flow only through kept entries.
  NodeId affine_const(NodeId a, Mat mul_c, Mat add_c) {
    Mat v = val(a).cwiseProduct(mul_c) + add_c;
    NodeId id = push(std::move(v), needs(a), nullptr, {a});
    nodes_[id].back = [id, a, mc = std::move(mul_c)](Graph& g) {
      if (g.needs(a)) g.grad_ref(a) += g.nodes_[id].grad.cwiseProduct(mc);
    };
    return id;
  }

  NodeId cmul(NodeId a, Mat c) {
    Mat zero = Mat::Zero(c.rows(), c.cols());
    return affine_const(a, std::move(c), std::move(zero));
  }

  NodeId scale(NodeId a, double s) {
    NodeId id = push(val(a) * s, needs(a), nullptr, {a});
    nodes_[id].back = [id, a, s](Graph& g) {
      if (g.needs(a)) g.grad_ref(a) += g.nodes_[id].grad * s;
    };
    return id;
  }

  NodeId matmul(NodeId a, NodeId b) {
    NodeId id = push(val(a) * val(b), needs(a) || needs(b), nullptr, {a, b});
    nodes_[id].back = [id, a, b](Graph& g) {
      const Mat& gr = g.nodes_[id].grad;
      if (g.needs(a)) g.grad_ref(a).noalias() += gr * g.val(b).transpose();
      if (g.needs(b)) g.grad_ref(b).noalias() += g.val(a).transpose() * gr;
    };
    return id;
  }

  NodeId tanh_(NodeId a) {
    NodeId id = push(val(a).array().tanh().matrix(), needs(a), nullptr, {a});
    nodes_[id].back = [id, a](Graph& g) {
      if (!g.needs(a)) return;
      const Mat& y = g.nodes_[id].value;
      g.grad_ref(a).array() +=
          g.nodes_[id].grad.array() * (1.0 - y.array() * y.array());
    };
    return id;
  }

  NodeId sigmoid_(NodeId a) {
    Mat v = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    NodeId id = push(std::move(v), needs(a), nullptr, {a});
    nodes_[id].back = [id, a](Graph& g) {
      if (!g.needs(a)) return;
      const Mat& y = g.nodes_[id].value;
      g.grad_ref(a).array() += g.nodes_[id].grad.array() * y.array() * (1.0 - y.array());
    };
    return id;
  }

  NodeId slice_cols(NodeId a, int c0, int n) {
    NodeId id = push(val(a).middleCols(c0, n), needs(a), nullptr, {a});
    nodes_[id].back = [id, a, c0, n](Graph& g) {
      if (g.needs(a)) g.grad_ref(a).middleCols(c0, n) += g.nodes_[id].grad;
    };
    return id;
  }

  NodeId row(NodeId a, int r) {
    NodeId id = push(val(a).row(r), needs(a), nullptr, {a});
    nodes_[id].back = [id, a, r](Graph& g) {
      if (g.needs(a)) g.grad_ref(a).row(r) += g.nodes_[id].grad.row(0);
    };
    return id;
  }

  NodeId concat_cols(std::vector<NodeId> parts) {
    int64_t cols = 0;
    for (NodeId p : parts) cols += val(p).cols();
    Mat v(val(parts[0]).rows(), cols);
    int64_t at = 0;
    bool ng = false;
    for (NodeId p : parts) {
      v.middleCols(at, val(p).cols()) = val(p);
      at += val(p).cols();
      ng = ng || needs(p);
    }
    NodeId id = push(std::move(v), ng, nullptr, parts);
    nodes_[id].back = [id, parts = std::move(parts)](Graph& g) {
      const Mat& gr = g.nodes_[id].grad;
      int64_t at = 0;
      for (NodeId p : parts) {
        int64_t w = g.val(p).cols();
        if (g.needs(p)) g.grad_ref(p) += gr.middleCols(at, w);
        at += w;
      }
    };
    return id;
  }

  NodeId concat_rows(std::vector<NodeId> parts) {
    int64_t rows = 0;
    for (NodeId p : parts) rows += val(p).rows();
    Mat v(rows, val(parts[0]).cols());
    int64_t at = 0;
    bool ng = false;
    for (NodeId p : parts) {
      v.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
      ng = ng || needs(p);
    }
    NodeId id = push(std::move(v), ng, nullptr, parts);
    nodes_[id].back = [id, parts = std::move(parts)](Graph& g) {
      const Mat& gr = g.nodes_[id].grad;
      int64_t at = 0;
      for (NodeId p : parts) {
        int64_t h = g.val(p).rows();
        if (g.needs(p)) g.grad_ref(p) += gr.middleRows(at, h);
        at += h;
      }
    };
    return id;
  }

  NodeId sum_all(NodeId a) {
    Mat v(1, 1);
    v(0, 0) = val(a).sum();
    NodeId id = push(std::move(v), needs(a), nullptr, {a});
    nodes_[id].back = [id, a](Graph& g) {
      if (g.needs(a)) g.grad_ref(a).array() += g.nodes_[id].grad(0, 0);
    };
    return id;
  }

  NodeId pick_sum(NodeId a, std::vector<std::pair<int, int>> picks) {
    Mat v(1, 1);
    double s = 0.0;
    for (auto [r, c] : picks) s += val(a)(r, c);
    v(0, 0) = s;
    NodeId id = push(std::move(v), needs(a), nullptr, {a});
    nodes_[id].back = [id, a, picks = std::move(picks)](Graph& g) {
      if (!g.needs(a)) return;
      double gr = g.nodes_[id].grad(0, 0);
      for (auto [r, c] : picks) g.grad_ref(a)(r, c) += gr;
    };
    return id;
  }

  // log(sum(exp(.))) over every entry; numerically shifted by the max.
  NodeId logsumexp(NodeId a) {
    const Mat& x = val(a);
    double m = x.maxCoeff();
    double s = (x.array() - m).exp().sum();
    Mat v(1, 1);
    v(0, 0) = m + std::log(s);
    NodeId id = push(std::move(v), needs(a), nullptr, {a});
    nodes_[id].back = [id, a](Graph& g) {
      if (!g.needs(a)) return;
      double out = g.nodes_[id].value(0, 0);
      double gr = g.nodes_[id].grad(0, 0);
      g.grad_ref(a).array() += gr * (g.val(a).array() - out).exp();
    };
    return id;
  }

  // out[j] = logsumexp_i(alpha[i] + m(i, j)); the forward-algorithm step.
  NodeId lse_rows_plus(NodeId alpha, NodeId m) {
    const Mat& a = val(alpha);
    const Mat& t = val(m);
    int L = static_cast<int>(t.cols());
    Mat v(1, L);
    for (int j = 0; j < L; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < t.rows(); ++i) mx = std::max(mx, a(0, i) + t(i, j));
      double s = 0.0;
      for (int i = 0; i < t.rows(); ++i) s += std::exp(a(0, i) + t(i, j) - mx);
      v(0, j) = mx + std::log(s);
    }
    NodeId id = push(std::move(v), needs(alpha) || needs(m), nullptr, {alpha, m});
    nodes_[id].back = [id, alpha, m](Graph& g) {
      const Mat& a = g.val(alpha);
      const Mat& t = g.val(m);
      const Mat& out = g.nodes_[id].value;
      const Mat& gr = g.nodes_[id].grad;
      for (int j = 0; j < t.cols(); ++j) {
        if (gr(0, j) == 0.0) continue;
        for (int i = 0; i < t.rows(); ++i) {
          double w = std::exp(a(0, i) + t(i, j) - out(0, j)) * gr(0, j);
          if (g.needs(alpha)) g.grad_ref(alpha)(0, i) += w;
          if (g.needs(m)) g.grad_ref(m)(i, j) += w;
        }
      }
    };
    return id;
  }

  // out[i] = r_const.row(i) . w.row(cls[i]) + b(0,0). The shared SLP applied
  // to a block of per-entity feature rows; cls holds each row's weight row.
  NodeId class_dot(Mat r_const, NodeId w, NodeId b, std::vector<int> cls) {
    int n = static_cast<int>(r_const.rows());
    Mat v(1, n);
    for (int i = 0; i < n; ++i)
      v(0, i) = r_const.row(i).dot(val(w).row(cls[i])) + val(b)(0, 0);
    NodeId id = push(std::move(v), needs(w) || needs(b), nullptr, {w, b});
    nodes_[id].back = [id, w, b, r = std::move(r_const), cls = std::move(cls)](Graph& g) {
      const Mat& gr = g.nodes_[id].grad;
      for (int i = 0; i < r.rows(); ++i) {
        if (g.needs(w)) g.grad_ref(w).row(cls[i]) += gr(0, i) * r.row(i);
        if (g.needs(b)) g.grad_ref(b)(0, 0) += gr(0, i);
      }
    };
    return id;
  }

  // out[c] = max of scores whose cls == c, 0 for empty classes. Gradient
  // follows the first (lowest-index) maximal element of each class.
  NodeId segment_max0(NodeId scores, std::vector<int> cls, int num_classes) {
    const Mat& s = val(scores);
    Mat v = Mat::Zero(1, num_classes);
    std::vector<int> argmax(num_classes, -1);
    for (int i = 0; i < s.cols(); ++i) {
      int c = cls[i];
      if (argmax[c] < 0 || s(0, i) > v(0, c)) {
        v(0, c) = s(0, i);
        argmax[c] = i;
      }
    }
    NodeId id = push(std::move(v), needs(scores), nullptr, {scores});
    nodes_[id].back = [id, scores, argmax = std::move(argmax)](Graph& g) {
      if (!g.needs(scores)) return;
      const Mat& gr = g.nodes_[id].grad;
      for (size_t c = 0; c < argmax.size(); ++c)
        if (argmax[c] >= 0) g.grad_ref(scores)(0, argmax[c]) += gr(0, c);
    };
    return id;
  }

  // 1D convolution over the row (token) axis. u: T x C, kernels: F x (C*w)
  // (per-filter channel-major slabs), or F x w when tied across channels;
  // bias: 1 x F; zero padding (w-1)/2 on both sides. Pre-activation output.
  NodeId conv1d(NodeId u, NodeId kernels, NodeId bias, int width, bool tied) {
    const Mat& uv = val(u);
    const Mat& kv = val(kernels);
    const Mat& bv = val(bias);
    int t_len = static_cast<int>(uv.rows());
    int chans = static_cast<int>(uv.cols());
    int filters = static_cast<int>(kv.rows());
    int pad = (width - 1) / 2;
    Mat v(t_len, filters);
    for (int t = 0; t < t_len; ++t) {
      for (int f = 0; f < filters; ++f) {
        double acc = bv(0, f);
        for (int dx = 0; dx < width; ++dx) {
          int src = t + dx - pad;
          if (src < 0 || src >= t_len) continue;
          if (tied) {
            acc += kv(f, dx) * uv.row(src).sum();
          } else {
            for (int c = 0; c < chans; ++c) acc += kv(f, c * width + dx) * uv(src, c);
          }
        }
        v(t, f) = acc;
      }
    }
    NodeId id = push(std::move(v), needs(u) || needs(kernels) || needs(bias), nullptr,
                     {u, kernels, bias});
    nodes_[id].back = [id, u, kernels, bias, width, tied, pad](Graph& g) {
      const Mat& uv = g.val(u);
      const Mat& kv = g.val(kernels);
      const Mat& gr = g.nodes_[id].grad;
      int t_len = static_cast<int>(uv.rows());
      int chans = static_cast<int>(uv.cols());
      int filters = static_cast<int>(kv.rows());
      for (int t = 0; t < t_len; ++t) {
        for (int f = 0; f < filters; ++f) {
          double go = gr(t, f);
          if (go == 0.0) continue;
          if (g.needs(bias)) g.grad_ref(bias)(0, f) += go;
          for (int dx = 0; dx < width; ++dx) {
            int src = t + dx - pad;
            if (src < 0 || src >= t_len) continue;
            if (tied) {
              if (g.needs(kernels))
                g.grad_ref(kernels)(f, dx) += go * uv.row(src).sum();
              if (g.needs(u)) g.grad_ref(u).row(src).array() += go * kv(f, dx);
            } else {
              for (int c = 0; c < chans; ++c) {
                if (g.needs(kernels))
                  g.grad_ref(kernels)(f, c * width + dx) += go * uv(src, c);
                if (g.needs(u)) g.grad_ref(u)(src, c) += go * kv(f, c * width + dx);
              }
            }
          }
        }
      }
    };
    return id;
  }

  // -log softmax(logits)[gold]; logits is 1 x K.
  NodeId softmax_xent(NodeId logits, int gold) {
    const Mat& x = val(logits);
    double m = x.maxCoeff();
    double z = (x.array() - m).exp().sum();
    Mat v(1, 1);
    v(0, 0) = -(x(0, gold) - m - std::log(z));
    NodeId id = push(std::move(v), needs(logits), nullptr, {logits});
    nodes_[id].back = [id, logits, gold](Graph& g) {
      if (!g.needs(logits)) return;
      const Mat& x = g.val(logits);
      double m = x.maxCoeff();
      Eigen::ArrayXXd p = (x.array() - m).exp();
      p /= p.sum();
      double gr = g.nodes_[id].grad(0, 0);
      g.grad_ref(logits).array() += gr * p;
      g.grad_ref(logits)(0, gold) -= gr;
    };
    return id;
  }

  const Mat& val(NodeId i) const {
    const Node& n = nodes_[i];
    return n.bound ? n.bound->t.values : n.value;
  }

  bool needs(NodeId i) const { return nodes_[i].needs_grad; }

  Mat& grad_ref(NodeId i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Mat::Zero(val(i).rows(), val(i).cols());
    return n.grad;
  }

  const Mat& grad_of(NodeId i) const { return nodes_[i].grad; }

  // Seeds d(root)/d(root) = 1 and replays the tape in reverse. root must be
  // a 1x1 node. Gradients of bound parameters accumulate across calls.
  void backward(NodeId root) {
    if (val(root).rows() != 1 || val(root).cols() != 1)
      throw std::runtime_error("backward: root must be scalar");
    grad_ref(root)(0, 0) = 1.0;
    for (NodeId i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.back || n.grad.size() == 0) continue;
      n.back(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Param* bound = nullptr;
    Mat grad;
    std::function<void(Graph&)> back;
    bool needs_grad = false;
  };

  NodeId push(Mat v, bool needs_grad, Param* bound, const std::vector<NodeId>&) {
    Node n;
    n.value = std::move(v);
    n.bound = bound;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void bump(NodeId i, const Mat& g) {
    if (needs(i)) grad_ref(i) += g;
  }

  std::vector<Node> nodes_;
};

}  // namespace dexter
