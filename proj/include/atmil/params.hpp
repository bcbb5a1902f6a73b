#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "atmil/errors.hpp"
#include "atmil/graph.hpp"
#include "atmil/tensor.hpp"

namespace atmil {

/// Every parameter belongs to exactly one partition. The weighting engine
/// operates on the shared partition; each head is driven only by its own
/// loss. Attention parameters sit in the main-task partition because only
/// the bag-level loss reaches them.
enum class Partition : uint8_t { shared, main_head, aux_head };

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::shared: return "shared";
    case Partition::main_head: return "main_head";
    case Partition::aux_head: return "aux_head";
  }
  return "?";
}

inline Partition parse_partition(const std::string& s) {
  if (s == "shared") return Partition::shared;
  if (s == "main_head") return Partition::main_head;
  if (s == "aux_head") return Partition::aux_head;
  throw FormatError("unknown partition '" + s + "'");
}

struct ParamEntry {
  std::string name;
  Partition partition;
  Tensor value;
};

/// Named parameters in a canonical order fixed by construction order. The
/// order is what makes flattened gradient vectors comparable across steps
/// and what the checkpoint format serializes.
class ParamSet {
 public:
  int add(std::string name, Partition partition, Tensor value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    int id = static_cast<int>(entries_.size());
    index_.emplace(name, id);
    entries_.push_back({std::move(name), partition, std::move(value)});
    return id;
  }

  int count() const { return static_cast<int>(entries_.size()); }
  const ParamEntry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  ParamEntry& entry(int i) { return entries_[static_cast<size_t>(i)]; }

  const ParamEntry& by_name(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
    return entries_[static_cast<size_t>(it->second)];
  }
  ParamEntry& by_name(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
    return entries_[static_cast<size_t>(it->second)];
  }

  int64_t total_elements(Partition p) const {
    int64_t n = 0;
    for (const ParamEntry& e : entries_)
      if (e.partition == p) n += e.value.size();
    return n;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, int> index_;
};

/// Describes which parameters, in which order and shapes, a flattened
/// gradient vector covers. Two GradVectors are combinable only when their
/// layouts compare equal.
struct GradLayout {
  Partition partition;
  std::vector<std::pair<std::string, Shape>> fields;
  int64_t total = 0;

  bool operator==(const GradLayout& o) const {
    return partition == o.partition && total == o.total && fields == o.fields;
  }
};

inline std::shared_ptr<const GradLayout> make_layout(const ParamSet& params, Partition p) {
  auto layout = std::make_shared<GradLayout>();
  layout->partition = p;
  for (int i = 0; i < params.count(); ++i) {
    const ParamEntry& e = params.entry(i);
    if (e.partition != p) continue;
    layout->fields.emplace_back(e.name, e.value.shape);
    layout->total += e.value.size();
  }
  return layout;
}

struct GradVector {
  std::vector<double> values;
  std::shared_ptr<const GradLayout> layout;

  int64_t size() const { return static_cast<int64_t>(values.size()); }
};

inline void require_same_layout(const GradVector& a, const GradVector& b, const char* what) {
  if (!a.layout || !b.layout || !(*a.layout == *b.layout))
    throw UsageError(std::string(what) + ": gradient layouts differ");
}

/// Inner product in ascending index order. The fixed order is what makes
/// repeated runs bit-identical.
inline double grad_dot(const GradVector& a, const GradVector& b) {
  require_same_layout(a, b, "grad_dot");
  double acc = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
  return acc;
}

inline double grad_norm(const GradVector& a) {
  double acc = 0.0;
  for (double x : a.values) acc += x * x;
  return std::sqrt(acc);
}

/// A parameter set mirrored onto a graph as leaf nodes, one graph per
/// forward pass. Gradients are read back from the leaves after backward().
struct BoundParams {
  std::vector<int> nodes;  // leaf node id per ParamSet entry

  static BoundParams bind(Graph& g, const ParamSet& params) {
    BoundParams b;
    b.nodes.reserve(static_cast<size_t>(params.count()));
    for (int i = 0; i < params.count(); ++i) b.nodes.push_back(g.leaf(params.entry(i).value));
    return b;
  }

  int node_for(const ParamSet& params, const std::string& name) const {
    for (int i = 0; i < params.count(); ++i)
      if (params.entry(i).name == name) return nodes[static_cast<size_t>(i)];
    throw UsageError("no parameter named '" + name + "'");
  }
};

/// Concatenates the gradients of one partition, canonical order, into a
/// flat vector.
inline GradVector flatten_grads(const Graph& g, const BoundParams& bound, const ParamSet& params,
                                Partition partition,
                                std::shared_ptr<const GradLayout> layout = nullptr) {
  if (!g.has_grads()) throw UsageError("flatten_grads before backward()");
  if (!layout) layout = make_layout(params, partition);
  GradVector out;
  out.layout = layout;
  out.values.reserve(static_cast<size_t>(layout->total));
  for (int i = 0; i < params.count(); ++i) {
    if (params.entry(i).partition != partition) continue;
    const Tensor& grad = g.grad(bound.nodes[static_cast<size_t>(i)]);
    if (grad.data.size() != static_cast<size_t>(params.entry(i).value.size()))
      throw InternalError("missing gradient for parameter '" + params.entry(i).name + "'");
    out.values.insert(out.values.end(), grad.data.begin(), grad.data.end());
  }
  if (out.size() != layout->total)
    throw InternalError("flattened gradient has wrong length");
  return out;
}

/// Writes a flat gradient vector back into per-parameter tensors (inverse of
/// flatten_grads on the covered partition). `dst` must be sized like the
/// ParamSet, one tensor per entry; entries outside the partition are left
/// untouched.
inline void unflatten_grads(const GradVector& gv, const ParamSet& params,
                            std::vector<Tensor>& dst) {
  if (dst.size() != static_cast<size_t>(params.count()))
    throw UsageError("unflatten_grads: destination size mismatch");
  size_t off = 0;
  for (int i = 0; i < params.count(); ++i) {
    const ParamEntry& e = params.entry(i);
    if (e.partition != gv.layout->partition) continue;
    size_t n = static_cast<size_t>(e.value.size());
    if (off + n > gv.values.size()) throw InternalError("unflatten_grads: vector too short");
    Tensor t = Tensor::zeros(e.value.shape);
    std::copy(gv.values.begin() + static_cast<int64_t>(off),
              gv.values.begin() + static_cast<int64_t>(off + n), t.data.begin());
    dst[static_cast<size_t>(i)] = std::move(t);
    off += n;
  }
  if (off != gv.values.size()) throw InternalError("unflatten_grads: vector too long");
}

}  // namespace atmil
