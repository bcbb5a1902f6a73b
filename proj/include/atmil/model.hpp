#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "atmil/bag.hpp"
#include "atmil/errors.hpp"
#include "atmil/graph.hpp"
#include "atmil/params.hpp"
#include "atmil/rng.hpp"
#include "atmil/tensor.hpp"

namespace atmil {

// The bag classifier: a small convolutional encoder maps each instance to an
// embedding, gated-tanh attention pools the embeddings into one bag vector,
// a linear head classifies the bag, and a second linear head classifies each
// instance for the auxiliary task. The aux head reads embeddings before
// pooling, since its labels are per instance.

struct EncoderConfig {
  int image_h = 28;
  int image_w = 28;
  int conv1_channels = 20;
  int conv1_kernel = 5;
  int conv2_channels = 50;
  int conv2_kernel = 5;
  int embedding_dim = 500;    // fc1 output width
  int attention_hidden = 128;
  int main_classes = 2;
  int aux_classes = 2;

  int conv1_out_h() const { return (image_h - conv1_kernel + 1) / 2; }
  int conv1_out_w() const { return (image_w - conv1_kernel + 1) / 2; }
  int conv2_out_h() const { return (conv1_out_h() - conv2_kernel + 1) / 2; }
  int conv2_out_w() const { return (conv1_out_w() - conv2_kernel + 1) / 2; }
  int fc1_inputs() const { return conv2_channels * conv2_out_h() * conv2_out_w(); }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
    };
    positive(image_h, "image_h");
    positive(image_w, "image_w");
    positive(conv1_channels, "conv1_channels");
    positive(conv1_kernel, "conv1_kernel");
    positive(conv2_channels, "conv2_channels");
    positive(conv2_kernel, "conv2_kernel");
    positive(embedding_dim, "embedding_dim");
    positive(attention_hidden, "attention_hidden");
    positive(main_classes, "main_classes");
    positive(aux_classes, "aux_classes");
    if (conv1_out_h() <= 0 || conv1_out_w() <= 0 || conv2_out_h() <= 0 || conv2_out_w() <= 0)
      throw ConfigError("encoder kernels do not fit a " + std::to_string(image_h) + "x" +
                        std::to_string(image_w) + " image");
  }

  /// Shrunk dimensions for CPU-budget experiments; same topology.
  static EncoderConfig desk_preset() {
    EncoderConfig cfg;
    cfg.conv1_channels = 6;
    cfg.conv2_channels = 12;
    cfg.embedding_dim = 48;
    cfg.attention_hidden = 24;
    return cfg;
  }
};

/// Fresh parameters, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases
/// zero. Construction order fixes the canonical ordering the checkpoint and
/// the gradient flattening rely on.
inline ParamSet init_params(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  auto uniform_tensor = [&](Shape shape, int fan_in) {
    Tensor t = Tensor::zeros(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : t.data) x = rng.uniform(-bound, bound);
    return t;
  };

  ParamSet p;
  int k1 = cfg.conv1_kernel, k2 = cfg.conv2_kernel;
  p.add("conv1.weight", Partition::shared,
        uniform_tensor({cfg.conv1_channels, 1, k1, k1}, k1 * k1));
  p.add("conv1.bias", Partition::shared, Tensor::zeros({cfg.conv1_channels}));
  p.add("conv2.weight", Partition::shared,
        uniform_tensor({cfg.conv2_channels, cfg.conv1_channels, k2, k2},
                       cfg.conv1_channels * k2 * k2));
  p.add("conv2.bias", Partition::shared, Tensor::zeros({cfg.conv2_channels}));
  p.add("fc1.weight", Partition::shared,
        uniform_tensor({cfg.embedding_dim, cfg.fc1_inputs()}, cfg.fc1_inputs()));
  p.add("fc1.bias", Partition::shared, Tensor::zeros({cfg.embedding_dim}));
  p.add("attn.hidden.weight", Partition::main_head,
        uniform_tensor({cfg.attention_hidden, cfg.embedding_dim}, cfg.embedding_dim));
  p.add("attn.score.weight", Partition::main_head,
        uniform_tensor({1, cfg.attention_hidden}, cfg.attention_hidden));
  p.add("main.weight", Partition::main_head,
        uniform_tensor({cfg.main_classes, cfg.embedding_dim}, cfg.embedding_dim));
  p.add("main.bias", Partition::main_head, Tensor::zeros({cfg.main_classes}));
  p.add("aux.weight", Partition::aux_head,
        uniform_tensor({cfg.aux_classes, cfg.embedding_dim}, cfg.embedding_dim));
  p.add("aux.bias", Partition::aux_head, Tensor::zeros({cfg.aux_classes}));
  return p;
}

inline Tensor instances_to_tensor(const std::vector<Instance>& instances,
                                  const EncoderConfig& cfg) {
  if (instances.empty()) throw UsageError("empty instance list");
  int n = static_cast<int>(instances.size());
  Tensor t = Tensor::zeros({n, 1, cfg.image_h, cfg.image_w});
  int64_t per = static_cast<int64_t>(cfg.image_h) * cfg.image_w;
  for (int i = 0; i < n; ++i) {
    const Instance& inst = instances[static_cast<size_t>(i)];
    if (inst.height != cfg.image_h || inst.width != cfg.image_w)
      throw ConfigError("instance is " + std::to_string(inst.height) + "x" +
                        std::to_string(inst.width) + ", encoder expects " +
                        std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w));
    std::copy(inst.pixels.begin(), inst.pixels.end(), t.data.begin() + i * per);
  }
  return t;
}

/// conv1 -> relu -> pool -> conv2 -> relu -> pool -> fc1 -> relu.
/// Input node (N,1,H,W); returns the (N,D) embedding node.
inline int build_encoder(Graph& g, int input, const ParamSet& params, const BoundParams& bound,
                         const EncoderConfig& cfg) {
  int x = g.conv2d(input, bound.node_for(params, "conv1.weight"),
                   bound.node_for(params, "conv1.bias"));
  x = g.relu(x);
  x = g.maxpool2x2(x);
  x = g.conv2d(x, bound.node_for(params, "conv2.weight"), bound.node_for(params, "conv2.bias"));
  x = g.relu(x);
  x = g.maxpool2x2(x);
  int n = g.value(input).shape[0];
  x = g.reshape(x, {n, cfg.fc1_inputs()});
  x = g.matmul(x, g.transpose(bound.node_for(params, "fc1.weight")));
  x = g.add_rowvec(x, bound.node_for(params, "fc1.bias"));
  return g.relu(x);
}

/// Attention pooling over embeddings (N,D): per-instance scores through a
/// tanh bottleneck, softmax across the bag, weighted sum. Returns the
/// attention node (1,N) and the bag embedding node (1,D).
inline std::pair<int, int> build_attention(Graph& g, int embeddings, const ParamSet& params,
                                           const BoundParams& bound) {
  int hidden = g.tanh(g.matmul(embeddings, g.transpose(bound.node_for(params, "attn.hidden.weight"))));
  int scores = g.matmul(hidden, g.transpose(bound.node_for(params, "attn.score.weight")));  // (N,1)
  int n = g.value(embeddings).shape[0];
  int attention = g.softmax(g.reshape(scores, {1, n}));
  int pooled = g.matmul(attention, embeddings);
  return {attention, pooled};
}

inline int build_linear_head(Graph& g, int input, const ParamSet& params, const BoundParams& bound,
                             const std::string& prefix) {
  int x = g.matmul(input, g.transpose(bound.node_for(params, prefix + ".weight")));
  return g.add_rowvec(x, bound.node_for(params, prefix + ".bias"));
}

/// Node handles for one bag's forward pass. Losses are only present when
/// labels were supplied.
struct BagGraph {
  Graph graph;
  BoundParams bound;
  int embeddings = -1;    // (N,D)
  int attention = -1;     // (1,N)
  int bag_embedding = -1; // (1,D)
  int main_logits = -1;   // (1,C_main)
  int aux_logits = -1;    // (N,C_aux)
  int main_loss = -1;     // scalar
  int aux_loss = -1;      // scalar
};

inline BagGraph bag_forward(const Bag& bag, const ParamSet& params, const EncoderConfig& cfg,
                            bool with_losses = true) {
  bag.validate();
  BagGraph r;
  r.bound = BoundParams::bind(r.graph, params);
  int input = r.graph.leaf(instances_to_tensor(bag.instances, cfg));
  r.embeddings = build_encoder(r.graph, input, params, r.bound, cfg);
  r.aux_logits = build_linear_head(r.graph, r.embeddings, params, r.bound, "aux");
  auto [attention, pooled] = build_attention(r.graph, r.embeddings, params, r.bound);
  r.attention = attention;
  r.bag_embedding = pooled;
  r.main_logits = build_linear_head(r.graph, r.bag_embedding, params, r.bound, "main");
  if (with_losses) {
    r.main_loss = r.graph.cross_entropy_logits(r.main_logits, {bag.bag_label});
    r.aux_loss = r.graph.cross_entropy_logits(r.aux_logits, bag.aux_labels);
  }
  return r;
}

/// Plain-value outputs of one bag forward.
struct BagOutput {
  std::vector<double> main_logits;              // C_main
  std::vector<std::vector<double>> aux_logits;  // N x C_aux
  std::vector<double> attention;                // N, positive, sums to 1
  std::vector<double> embedding;                // D
};

inline BagOutput bag_output(const Bag& bag, const ParamSet& params, const EncoderConfig& cfg) {
  BagGraph r = bag_forward(bag, params, cfg, /*with_losses=*/false);
  BagOutput out;
  out.main_logits = r.graph.value(r.main_logits).data;
  out.attention = r.graph.value(r.attention).data;
  out.embedding = r.graph.value(r.bag_embedding).data;
  const Tensor& aux = r.graph.value(r.aux_logits);
  int n = aux.shape[0], c = aux.shape[1];
  out.aux_logits.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.aux_logits[static_cast<size_t>(i)] =
        std::vector<double>(aux.data.begin() + static_cast<int64_t>(i) * c,
                            aux.data.begin() + static_cast<int64_t>(i + 1) * c);
  return out;
}

/// Embedding of a single instance; runs the encoder on a one-row batch.
inline std::vector<double> encode_instance(const Instance& inst, const ParamSet& params,
                                           const EncoderConfig& cfg) {
  Graph g;
  BoundParams bound = BoundParams::bind(g, params);
  int input = g.leaf(instances_to_tensor({inst}, cfg));
  int h = build_encoder(g, input, params, bound, cfg);
  return g.value(h).data;
}

/// Attention weights and pooled embedding for a given embedding matrix.
inline std::pair<std::vector<double>, std::vector<double>> attend(
    const std::vector<std::vector<double>>& embeddings, const ParamSet& params) {
  if (embeddings.empty()) throw UsageError("attend: no embeddings");
  int n = static_cast<int>(embeddings.size());
  int d = static_cast<int>(embeddings[0].size());
  Tensor h = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(embeddings[static_cast<size_t>(i)].size()) != d)
      throw UsageError("attend: ragged embedding rows");
    std::copy(embeddings[static_cast<size_t>(i)].begin(), embeddings[static_cast<size_t>(i)].end(),
              h.data.begin() + static_cast<int64_t>(i) * d);
  }
  Graph g;
  BoundParams bound = BoundParams::bind(g, params);
  auto [attention, pooled] = build_attention(g, g.leaf(std::move(h)), params, bound);
  return {g.value(attention).data, g.value(pooled).data};
}

/// Bag-level cross-entropy from logits.
inline double main_loss_value(const std::vector<double>& logits, int label) {
  Graph g;
  int node = g.leaf(Tensor({1, static_cast<int>(logits.size())}, logits));
  return g.value(g.cross_entropy_logits(node, {label})).scalar_value();
}

/// Mean per-instance cross-entropy from logits.
inline double aux_loss_value(const std::vector<std::vector<double>>& logits,
                             const std::vector<int>& labels) {
  if (logits.empty() || logits.size() != labels.size())
    throw UsageError("aux_loss: logits/labels size mismatch");
  int n = static_cast<int>(logits.size());
  int c = static_cast<int>(logits[0].size());
  Tensor t = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i)
    std::copy(logits[static_cast<size_t>(i)].begin(), logits[static_cast<size_t>(i)].end(),
              t.data.begin() + static_cast<int64_t>(i) * c);
  Graph g;
  return g.value(g.cross_entropy_logits(g.leaf(std::move(t)), labels)).scalar_value();
}

inline int predict_label(const std::vector<double>& logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i)
    if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
  return best;
}

}  // namespace atmil
