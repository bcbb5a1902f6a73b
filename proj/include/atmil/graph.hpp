#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "atmil/errors.hpp"
#include "atmil/tensor.hpp"

namespace atmil {

// Define-by-run reverse-mode engine. A Graph is a tape of Nodes created by
// the builder calls below; forward values are computed eagerly at build time
// and one backward() sweep fills gradients in reverse creation order, which
// is a valid topological order by construction. Graphs are built fresh per
// forward pass and thrown away; nothing here is thread-safe across graphs
// shared between threads, but independent graphs are independent.

enum class Op : uint8_t {
  leaf,
  add,
  add_rowvec,
  mul,
  scalar_mul,
  matmul,
  transpose2d,
  conv2d,
  maxpool2x2,
  relu,
  tanh_fn,
  log_fn,
  softmax_last,
  reshape,
  sum_all,
  mean_all,
  cross_entropy_logits,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::add_rowvec: return "add_rowvec";
    case Op::mul: return "mul";
    case Op::scalar_mul: return "scalar_mul";
    case Op::matmul: return "matmul";
    case Op::transpose2d: return "transpose2d";
    case Op::conv2d: return "conv2d";
    case Op::maxpool2x2: return "maxpool2x2";
    case Op::relu: return "relu";
    case Op::tanh_fn: return "tanh";
    case Op::log_fn: return "log";
    case Op::softmax_last: return "softmax";
    case Op::reshape: return "reshape";
    case Op::sum_all: return "sum";
    case Op::mean_all: return "mean";
    case Op::cross_entropy_logits: return "cross_entropy_logits";
  }
  return "?";
}

struct Node {
  Op op = Op::leaf;
  std::array<int, 3> in{{-1, -1, -1}};
  int arity = 0;
  Tensor value;
  Tensor grad;            // allocated by backward()
  std::vector<int> iaux;  // class labels (cross-entropy) or argmax indices (max-pool)
  double daux = 0.0;      // constant factor for scalar_mul
};

class Graph {
 public:
  int leaf(Tensor v) { return push(Op::leaf, {}, std::move(v)); }

  int add(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!same_shape(ta, tb))
      throw ConfigError("add: shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += tb[i];
    return push(Op::add, {a, b}, std::move(out));
  }

  /// (R,C) + (C): the bias vector is added to every row.
  int add_rowvec(int a, int bias) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(bias);
    if (ta.rank() != 2 || tb.rank() != 1 || ta.shape[1] != tb.shape[0])
      throw ConfigError("add_rowvec: shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    int rows = ta.shape[0], cols = ta.shape[1];
    Tensor out = ta;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[static_cast<int64_t>(r) * cols + c] += tb[c];
    return push(Op::add_rowvec, {a, bias}, std::move(out));
  }

  int mul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!same_shape(ta, tb))
      throw ConfigError("mul: shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
    return push(Op::mul, {a, b}, std::move(out));
  }

  int scalar_mul(int a, double factor) {
    Tensor out = value(a);
    for (double& x : out.data) x *= factor;
    int id = push(Op::scalar_mul, {a}, std::move(out));
    nodes_[static_cast<size_t>(id)].daux = factor;
    return id;
  }

  int matmul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
      throw ConfigError("matmul: shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    int n = ta.shape[0], k = ta.shape[1], m = tb.shape[1];
    Tensor out = Tensor::zeros({n, m});
    matmul_acc(ta.data.data(), tb.data.data(), out.data.data(), n, k, m);
    return push(Op::matmul, {a, b}, std::move(out));
  }

  int transpose(int a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2) throw ConfigError("transpose2d: shape " + shape_str(ta.shape));
    int r = ta.shape[0], c = ta.shape[1];
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out[static_cast<int64_t>(j) * r + i] = ta[static_cast<int64_t>(i) * c + j];
    return push(Op::transpose2d, {a}, std::move(out));
  }

  /// Valid padding, stride 1. input (N,C,H,W), kernel (OC,C,KH,KW), bias (OC).
  int conv2d(int input, int kernel, int bias) {
    const Tensor& ti = value(input);
    const Tensor& tk = value(kernel);
    const Tensor& tb = value(bias);
    if (ti.rank() != 4 || tk.rank() != 4 || tb.rank() != 1 || ti.shape[1] != tk.shape[1] ||
        tb.shape[0] != tk.shape[0])
      throw ConfigError("conv2d: input " + shape_str(ti.shape) + ", kernel " + shape_str(tk.shape) +
                        ", bias " + shape_str(tb.shape));
    int n = ti.shape[0], ic = ti.shape[1], h = ti.shape[2], w = ti.shape[3];
    int oc = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
    int oh = h - kh + 1, ow = w - kw + 1;
    if (oh <= 0 || ow <= 0)
      throw ConfigError("conv2d: kernel " + shape_str(tk.shape) + " larger than input " +
                        shape_str(ti.shape));
    Tensor out = Tensor::zeros({n, oc, oh, ow});
    conv2d_forward(ti.data.data(), tk.data.data(), tb.data.data(), out.data.data(), n, ic, h, w, oc,
                   kh, kw, oh, ow);
    return push(Op::conv2d, {input, kernel, bias}, std::move(out));
  }

  /// 2x2 window, stride 2, floor semantics on odd sizes. Ties break to the
  /// first element in scan order so backward routing is deterministic.
  int maxpool2x2(int a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 4) throw ConfigError("maxpool2x2: shape " + shape_str(ta.shape));
    int n = ta.shape[0], c = ta.shape[1], h = ta.shape[2], w = ta.shape[3];
    int oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw ConfigError("maxpool2x2: input too small " + shape_str(ta.shape));
    Tensor out = Tensor::zeros({n, c, oh, ow});
    std::vector<int> argmax(static_cast<size_t>(out.size()));
    const double* src = ta.data.data();
    double* dst = out.data.data();
    int64_t o = 0;
    for (int img = 0; img < n * c; ++img) {
      const double* plane = src + static_cast<int64_t>(img) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x, ++o) {
          int base = (2 * y) * w + 2 * x;
          int cand[4] = {base, base + 1, base + w, base + w + 1};
          int best = cand[0];
          for (int t = 1; t < 4; ++t)
            if (plane[cand[t]] > plane[best]) best = cand[t];
          dst[o] = plane[best];
          argmax[static_cast<size_t>(o)] = img * h * w + best;
        }
      }
    }
    int id = push(Op::maxpool2x2, {a}, std::move(out));
    nodes_[static_cast<size_t>(id)].iaux = std::move(argmax);
    return id;
  }

  int relu(int a) {
    Tensor out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return push(Op::relu, {a}, std::move(out));
  }

  int tanh(int a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::tanh(x);
    return push(Op::tanh_fn, {a}, std::move(out));
  }

  int log(int a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::log(x);
    return push(Op::log_fn, {a}, std::move(out));
  }

  /// Softmax over the last axis, max-shifted for stability.
  int softmax(int a) {
    const Tensor& ta = value(a);
    if (ta.rank() < 1) throw ConfigError("softmax: shape " + shape_str(ta.shape));
    int cols = ta.shape.back();
    int64_t rows = ta.size() / cols;
    Tensor out = ta;
    for (int64_t r = 0; r < rows; ++r) {
      double* row = out.data.data() + r * cols;
      double mx = row[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (int c = 0; c < cols; ++c) row[c] /= sum;
    }
    return push(Op::softmax_last, {a}, std::move(out));
  }

  int reshape(int a, Shape target) {
    const Tensor& ta = value(a);
    if (numel(target) != ta.size())
      throw ConfigError("reshape: " + shape_str(ta.shape) + " -> " + shape_str(target) +
                        " changes element count");
    Tensor out(std::move(target), ta.data);
    return push(Op::reshape, {a}, std::move(out));
  }

  int sum(int a) {
    const Tensor& ta = value(a);
    double acc = 0.0;
    for (double x : ta.data) acc += x;  // ascending index order
    return push(Op::sum_all, {a}, Tensor::scalar(acc));
  }

  int mean(int a) {
    const Tensor& ta = value(a);
    double acc = 0.0;
    for (double x : ta.data) acc += x;
    return push(Op::mean_all, {a}, Tensor::scalar(acc / static_cast<double>(ta.size())));
  }

  /// Mean over rows of softmax cross-entropy, computed from logits (R,C).
  /// Labels are constants, not graph inputs.
  int cross_entropy_logits(int logits, const std::vector<int>& labels) {
    const Tensor& tl = value(logits);
    if (tl.rank() != 2) throw ConfigError("cross_entropy_logits: logits " + shape_str(tl.shape));
    int rows = tl.shape[0], cols = tl.shape[1];
    if (static_cast<int>(labels.size()) != rows)
      throw ConfigError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(rows) + " rows");
    for (int lab : labels)
      if (lab < 0 || lab >= cols)
        throw DataError("cross_entropy_logits: label " + std::to_string(lab) +
                        " out of range [0," + std::to_string(cols) + ")");
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double* row = tl.data.data() + static_cast<int64_t>(r) * cols;
      double mx = row[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
      total += mx + std::log(sum) - row[labels[static_cast<size_t>(r)]];
    }
    int id = push(Op::cross_entropy_logits, {logits}, Tensor::scalar(total / rows));
    nodes_[static_cast<size_t>(id)].iaux = labels;
    return id;
  }

  const Tensor& value(int id) const { return node(id).value; }

  const Tensor& grad(int id) const {
    if (!backward_done_) throw UsageError("gradient requested before backward()");
    return node(id).grad;
  }

  size_t size() const { return nodes_.size(); }

  /// One reverse sweep from a scalar loss. Parameters not reachable from the
  /// loss keep their zero gradient. A second call without reset_grads() is an
  /// error; gradients would silently double otherwise.
  void backward(int loss) {
    const Tensor& tl = value(loss);
    if (!tl.is_scalar())
      throw UsageError("backward: loss node has shape " + shape_str(tl.shape) + ", expected scalar");
    if (backward_done_) throw UsageError("backward called twice without reset_grads()");
    backward_done_ = true;
    for (Node& nd : nodes_) {
      if (nd.grad.data.size() == static_cast<size_t>(nd.value.size())) {
        std::fill(nd.grad.data.begin(), nd.grad.data.end(), 0.0);  // reuse the buffer
        nd.grad.shape = nd.value.shape;
      } else {
        nd.grad = Tensor::zeros(nd.value.shape);
      }
    }
    nodes_[static_cast<size_t>(loss)].grad[0] = 1.0;
    for (int id = loss; id >= 0; --id) backward_node(id);
  }

  void reset_grads() { backward_done_ = false; }

  bool has_grads() const { return backward_done_; }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;

  const Node& node(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
      throw InternalError("node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<size_t>(id)];
  }

  int push(Op op, std::initializer_list<int> inputs, Tensor out) {
    if (backward_done_)
      throw UsageError("graph extended after backward(); call reset_grads() first");
    if (op != Op::leaf && !all_finite(out.data))
      throw NumericError(std::string("non-finite output from ") + op_name(op));
    Node nd;
    nd.op = op;
    nd.arity = static_cast<int>(inputs.size());
    int k = 0;
    for (int i : inputs) nd.in[static_cast<size_t>(k++)] = i;
    nd.value = std::move(out);
    nodes_.push_back(std::move(nd));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void matmul_acc(const double* __restrict__ a, const double* __restrict__ b,
                         double* __restrict__ c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
      const double* arow = a + static_cast<int64_t>(i) * k;
      double* crow = c + static_cast<int64_t>(i) * m;
      for (int kk = 0; kk < k; ++kk) {
        double av = arow[kk];
        const double* brow = b + static_cast<int64_t>(kk) * m;
        for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  }

  static void conv2d_forward(const double* __restrict__ in, const double* __restrict__ ker,
                             const double* __restrict__ bias, double* __restrict__ out, int n,
                             int ic, int h, int w, int oc, int kh, int kw, int oh, int ow) {
    for (int img = 0; img < n; ++img) {
      for (int o = 0; o < oc; ++o) {
        double* oplane = out + ((static_cast<int64_t>(img) * oc + o) * oh) * ow;
        double b = bias[o];
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) oplane[i] = b;
        for (int c = 0; c < ic; ++c) {
          const double* iplane = in + ((static_cast<int64_t>(img) * ic + c) * h) * w;
          const double* kplane = ker + ((static_cast<int64_t>(o) * ic + c) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              double kv = kplane[ky * kw + kx];
              for (int y = 0; y < oh; ++y) {
                const double* irow = iplane + (y + ky) * w + kx;
                double* orow = oplane + y * ow;
                for (int x = 0; x < ow; ++x) orow[x] += kv * irow[x];
              }
            }
          }
        }
      }
    }
  }

  void backward_node(int id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (nd.arity == 0) return;
    const Tensor& g = nd.grad;
    // Nodes off the active loss path carry all-zero gradients; propagating
    // them is a no-op, so skip the op entirely. Matters when one graph holds
    // two losses and each backward sweep passes over the other's subtree.
    bool any = false;
    for (double x : g.data)
      if (x != 0.0) {
        any = true;
        break;
      }
    if (!any) return;
    switch (nd.op) {
      case Op::add: {
        accumulate(nd.in[0], g.data);
        accumulate(nd.in[1], g.data);
        break;
      }
      case Op::add_rowvec: {
        accumulate(nd.in[0], g.data);
        Tensor& gb = nodes_[static_cast<size_t>(nd.in[1])].grad;
        int rows = nd.value.shape[0], cols = nd.value.shape[1];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) gb[c] += g[static_cast<int64_t>(r) * cols + c];
        break;
      }
      case Op::mul: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        Tensor& gb = nodes_[static_cast<size_t>(nd.in[1])].grad;
        const Tensor& va = nodes_[static_cast<size_t>(nd.in[0])].value;
        const Tensor& vb = nodes_[static_cast<size_t>(nd.in[1])].value;
        for (int64_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * vb[i];
          gb[i] += g[i] * va[i];
        }
        break;
      }
      case Op::scalar_mul: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nd.daux;
        break;
      }
      case Op::matmul: {
        const Tensor& va = nodes_[static_cast<size_t>(nd.in[0])].value;
        const Tensor& vb = nodes_[static_cast<size_t>(nd.in[1])].value;
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        Tensor& gb = nodes_[static_cast<size_t>(nd.in[1])].grad;
        int n = va.shape[0], k = va.shape[1], m = vb.shape[1];
        // dA += dC * B^T ; dB += A^T * dC
        for (int i = 0; i < n; ++i) {
          const double* grow = g.data.data() + static_cast<int64_t>(i) * m;
          double* garow = ga.data.data() + static_cast<int64_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double* brow = vb.data.data() + static_cast<int64_t>(kk) * m;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
            garow[kk] += acc;
          }
        }
        for (int kk = 0; kk < k; ++kk) {
          double* gbrow = gb.data.data() + static_cast<int64_t>(kk) * m;
          for (int i = 0; i < n; ++i) {
            double av = va[static_cast<int64_t>(i) * k + kk];
            const double* grow = g.data.data() + static_cast<int64_t>(i) * m;
            for (int j = 0; j < m; ++j) gbrow[j] += av * grow[j];
          }
        }
        break;
      }
      case Op::transpose2d: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        int r = nd.value.shape[0], c = nd.value.shape[1];  // output dims
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            ga[static_cast<int64_t>(j) * r + i] += g[static_cast<int64_t>(i) * c + j];
        break;
      }
      case Op::conv2d: {
        conv2d_backward(nd);
        break;
      }
      case Op::maxpool2x2: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        for (int64_t i = 0; i < g.size(); ++i) ga[nd.iaux[static_cast<size_t>(i)]] += g[i];
        break;
      }
      case Op::relu: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        const Tensor& va = nodes_[static_cast<size_t>(nd.in[0])].value;
        for (int64_t i = 0; i < g.size(); ++i)
          if (va[i] > 0.0) ga[i] += g[i];
        break;
      }
      case Op::tanh_fn: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        const Tensor& y = nd.value;
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::log_fn: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        const Tensor& va = nodes_[static_cast<size_t>(nd.in[0])].value;
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
        break;
      }
      case Op::softmax_last: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        const Tensor& y = nd.value;
        int cols = y.shape.back();
        int64_t rows = y.size() / cols;
        for (int64_t r = 0; r < rows; ++r) {
          const double* yrow = y.data.data() + r * cols;
          const double* grow = g.data.data() + r * cols;
          double dot = 0.0;
          for (int c = 0; c < cols; ++c) dot += grow[c] * yrow[c];
          double* garow = ga.data.data() + r * cols;
          for (int c = 0; c < cols; ++c) garow[c] += yrow[c] * (grow[c] - dot);
        }
        break;
      }
      case Op::reshape: {
        accumulate(nd.in[0], g.data);
        break;
      }
      case Op::sum_all: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        double gv = g[0];
        for (double& x : ga.data) x += gv;
        break;
      }
      case Op::mean_all: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        double gv = g[0] / static_cast<double>(ga.size());
        for (double& x : ga.data) x += gv;
        break;
      }
      case Op::cross_entropy_logits: {
        Tensor& ga = nodes_[static_cast<size_t>(nd.in[0])].grad;
        const Tensor& logits = nodes_[static_cast<size_t>(nd.in[0])].value;
        int rows = logits.shape[0], cols = logits.shape[1];
        double gv = g[0] / rows;
        for (int r = 0; r < rows; ++r) {
          const double* row = logits.data.data() + static_cast<int64_t>(r) * cols;
          double* garow = ga.data.data() + static_cast<int64_t>(r) * cols;
          double mx = row[0];
          for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
          double sum = 0.0;
          for (int c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
          for (int c = 0; c < cols; ++c) garow[c] += gv * std::exp(row[c] - mx) / sum;
          garow[nd.iaux[static_cast<size_t>(r)]] -= gv;
        }
        break;
      }
      case Op::leaf:
        break;
    }
  }

  void accumulate(int id, const std::vector<double>& g) {
    Tensor& dst = nodes_[static_cast<size_t>(id)].grad;
    for (size_t i = 0; i < g.size(); ++i) dst.data[i] += g[i];
  }

  void conv2d_backward(Node& nd) {
    const Tensor& vi = nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vk = nodes_[static_cast<size_t>(nd.in[1])].value;
    Tensor& gi = nodes_[static_cast<size_t>(nd.in[0])].grad;
    Tensor& gk = nodes_[static_cast<size_t>(nd.in[1])].grad;
    Tensor& gb = nodes_[static_cast<size_t>(nd.in[2])].grad;
    const Tensor& g = nd.grad;
    int n = vi.shape[0], ic = vi.shape[1], h = vi.shape[2], w = vi.shape[3];
    int oc = vk.shape[0], kh = vk.shape[2], kw = vk.shape[3];
    int oh = nd.value.shape[2], ow = nd.value.shape[3];
    for (int img = 0; img < n; ++img) {
      for (int o = 0; o < oc; ++o) {
        const double* gplane = g.data.data() + ((static_cast<int64_t>(img) * oc + o) * oh) * ow;
        double bacc = 0.0;
#pragma omp simd reduction(+ : bacc)
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) bacc += gplane[i];
        gb[o] += bacc;
        for (int c = 0; c < ic; ++c) {
          const double* iplane = vi.data.data() + ((static_cast<int64_t>(img) * ic + c) * h) * w;
          double* giplane = gi.data.data() + ((static_cast<int64_t>(img) * ic + c) * h) * w;
          const double* kplane = vk.data.data() + ((static_cast<int64_t>(o) * ic + c) * kh) * kw;
          double* gkplane = gk.data.data() + ((static_cast<int64_t>(o) * ic + c) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              double kv = kplane[ky * kw + kx];
              double kacc = 0.0;
              for (int y = 0; y < oh; ++y) {
                const double* grow = gplane + y * ow;
                const double* irow = iplane + (y + ky) * w + kx;
                double* girow = giplane + (y + ky) * w + kx;
                double racc = 0.0;
#pragma omp simd reduction(+ : racc)
                for (int x = 0; x < ow; ++x) {
                  girow[x] += kv * grow[x];
                  racc += irow[x] * grow[x];
                }
                kacc += racc;
              }
              gkplane[ky * kw + kx] += kacc;
            }
          }
        }
      }
    }
  }
};

}  // namespace atmil
