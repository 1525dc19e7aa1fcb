/* Copyright 2026 The edgesplit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edgesplit/error.hpp"
#include "edgesplit/tensor.hpp"
#include "json.hpp"

namespace edgesplit {

using NodeId = std::int64_t;

enum class OpKind {
  kConv,
  kDepthwiseConv,
  kPointwiseConv,
  kFc,
  kRelu,
  kAdd,
  kConcat,
  kGlobalPool,
  kBatchNorm,
  kInput,
  kOutput,
};

inline constexpr std::pair<OpKind, std::string_view> kOpNames[] = {
    {OpKind::kConv, "conv"},
    {OpKind::kDepthwiseConv, "depthwise_conv"},
    {OpKind::kPointwiseConv, "pointwise_conv"},
    {OpKind::kFc, "fc"},
    {OpKind::kRelu, "relu"},
    {OpKind::kAdd, "add"},
    {OpKind::kConcat, "concat"},
    {OpKind::kGlobalPool, "global_pool"},
    {OpKind::kBatchNorm, "batchnorm"},
    {OpKind::kInput, "input"},
    {OpKind::kOutput, "output"},
};

inline std::string_view op_name(OpKind op) {
  for (const auto& [kind, name] : kOpNames) {
    if (kind == op) return name;
  }
  return "unknown";
}

inline std::optional<OpKind> parse_op(std::string_view name) {
  for (const auto& [kind, n] : kOpNames) {
    if (n == name) return kind;
  }
  return std::nullopt;
}

// Ops whose weights are a convolution/linear kernel with one output channel
// per leading weight dim. These accept folded batchnorm and a fused residual.
inline bool is_affine(OpKind op) {
  return op == OpKind::kConv || op == OpKind::kDepthwiseConv ||
         op == OpKind::kPointwiseConv || op == OpKind::kFc;
}

inline bool is_convolution(OpKind op) {
  return op == OpKind::kConv || op == OpKind::kDepthwiseConv ||
         op == OpKind::kPointwiseConv;
}

struct LayerNode {
  NodeId id = 0;
  std::string name;
  OpKind op = OpKind::kInput;
  // Integer attributes: kernel_h, kernel_w, stride, pad. Fusion flags are
  // stored here too: relu=1 (fused activation), residual=1 (second input is
  // added to the output before the activation).
  std::map<std::string, std::int64_t> attrs;
  Dims weight_shape;
  Dims out_shape;
  std::vector<NodeId> inputs;

  // Immutable parameter blobs, shared between graph copies.
  std::shared_ptr<const Tensor> weights;
  std::shared_ptr<const std::vector<float>> bias;
  std::string weights_file;
  std::string bias_file;

  std::int64_t attr(const std::string& key, std::int64_t fallback) const {
    auto it = attrs.find(key);
    return it == attrs.end() ? fallback : it->second;
  }
  bool fused_relu() const { return attr("relu", 0) != 0; }
  bool has_residual() const { return attr("residual", 0) != 0; }

  // s^w: weight element count (0 for weightless layers).
  std::int64_t weight_elements() const {
    return weight_shape.empty() ? 0 : volume(weight_shape);
  }
  // s^a: output activation element count.
  std::int64_t activation_elements() const { return volume(out_shape); }

  std::string label() const {
    return "node " + std::to_string(id) + (name.empty() ? "" : " (" + name + ")");
  }
};

class LayerGraph {
 public:
  LayerGraph() = default;

  // Validates ids, references, acyclicity, reachability and shape arithmetic.
  // Throws GraphError naming the offending node.
  LayerGraph(std::vector<LayerNode> nodes, int input_bits = 8);

  const std::vector<LayerNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool contains(NodeId id) const { return index_.count(id) != 0; }
  const LayerNode& node(NodeId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw GraphError("unknown node id " + std::to_string(id));
    }
    return nodes_[it->second];
  }
  NodeId input_id() const { return input_id_; }
  const std::vector<NodeId>& output_ids() const { return output_ids_; }
  int input_bits() const { return input_bits_; }
  bool is_output(NodeId id) const {
    return std::find(output_ids_.begin(), output_ids_.end(), id) !=
           output_ids_.end();
  }

  // Consumers of each node, each list ascending by id.
  const std::map<NodeId, std::vector<NodeId>>& consumers() const {
    return consumers_;
  }

 private:
  std::vector<LayerNode> nodes_;
  std::map<NodeId, std::size_t> index_;
  std::map<NodeId, std::vector<NodeId>> consumers_;
  NodeId input_id_ = 0;
  std::vector<NodeId> output_ids_;
  int input_bits_ = 8;
};

namespace detail {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k,
                                    std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

[[noreturn]] inline void fail(const LayerNode& n, const std::string& msg) {
  throw GraphError(n.label() + ": " + msg);
}

inline Dims expected_shape(const LayerNode& n,
                           const std::vector<const LayerNode*>& in) {
  auto need_inputs = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      fail(n, "expected " + std::to_string(lo) +
                  (hi != lo ? ".." + std::to_string(hi) : "") +
                  " inputs, got " + std::to_string(in.size()));
    }
  };
  auto need_chw = [&](const Dims& d) {
    if (d.size() != 3) fail(n, "expected CHW input, got " + dims_to_string(d));
  };
  switch (n.op) {
    case OpKind::kInput:
      need_inputs(0, 0);
      if (n.out_shape.empty()) fail(n, "input node needs out_shape");
      return n.out_shape;
    case OpKind::kConv:
    case OpKind::kDepthwiseConv:
    case OpKind::kPointwiseConv: {
      need_inputs(1, 2);
      if (in.size() == 2 && !n.has_residual()) {
        fail(n, "second convolution input requires residual=1");
      }
      const Dims& x = in[0]->out_shape;
      need_chw(x);
      Dims ws = n.weight_shape;
      if (n.op == OpKind::kPointwiseConv && ws.size() == 2) {
        ws = {ws[0], ws[1], 1, 1};
      }
      if (ws.size() != 4) fail(n, "weight_shape must be [OC,IC,KH,KW]");
      const auto kh = n.attr("kernel_h", ws[2]);
      const auto kw = n.attr("kernel_w", ws[3]);
      const auto stride = n.attr("stride", 1);
      const auto pad = n.attr("pad", 0);
      if (kh != ws[2] || kw != ws[3]) fail(n, "kernel attrs disagree with weight_shape");
      if (stride < 1 || pad < 0) fail(n, "invalid stride/pad");
      if (n.op == OpKind::kPointwiseConv && (kh != 1 || kw != 1)) {
        fail(n, "pointwise_conv needs a 1x1 kernel");
      }
      std::int64_t oc = ws[0];
      if (n.op == OpKind::kDepthwiseConv) {
        if (ws[1] != 1 || ws[0] != x[0]) {
          fail(n, "depthwise weight_shape must be [C,1,KH,KW] with C=" +
                      std::to_string(x[0]));
        }
      } else if (ws[1] != x[0]) {
        fail(n, "weight input channels " + std::to_string(ws[1]) +
                    " != input channels " + std::to_string(x[0]));
      }
      const auto oh = conv_out_extent(x[1], kh, stride, pad);
      const auto ow = conv_out_extent(x[2], kw, stride, pad);
      if (oh < 1 || ow < 1) fail(n, "kernel larger than padded input");
      Dims out{oc, oh, ow};
      if (in.size() == 2 && in[1]->out_shape != out) {
        fail(n, "residual input shape " + dims_to_string(in[1]->out_shape) +
                    " != output shape " + dims_to_string(out));
      }
      return out;
    }
    case OpKind::kFc: {
      need_inputs(1, 2);
      if (in.size() == 2 && !n.has_residual()) {
        fail(n, "second fc input requires residual=1");
      }
      if (n.weight_shape.size() != 2) fail(n, "fc weight_shape must be [OUT,IN]");
      if (n.weight_shape[1] != volume(in[0]->out_shape)) {
        fail(n, "fc input features " + std::to_string(n.weight_shape[1]) +
                    " != input volume " +
                    std::to_string(volume(in[0]->out_shape)));
      }
      if (volume(n.out_shape) != n.weight_shape[0]) {
        fail(n, "fc out_shape volume must equal " +
                    std::to_string(n.weight_shape[0]));
      }
      if (in.size() == 2 && volume(in[1]->out_shape) != n.weight_shape[0]) {
        fail(n, "residual input volume mismatch");
      }
      return n.out_shape;
    }
    case OpKind::kRelu:
    case OpKind::kOutput:
      need_inputs(1, 1);
      return in[0]->out_shape;
    case OpKind::kBatchNorm: {
      need_inputs(1, 1);
      const Dims& x = in[0]->out_shape;
      if (x.empty()) fail(n, "batchnorm on scalar input");
      if (n.weight_shape != Dims{4, x[0]}) {
        fail(n, "batchnorm weight_shape must be [4," + std::to_string(x[0]) + "]");
      }
      return x;
    }
    case OpKind::kAdd: {
      need_inputs(2, 1u << 20);
      for (const auto* p : in) {
        if (p->out_shape != in[0]->out_shape) {
          fail(n, "add inputs have mismatched shapes " +
                      dims_to_string(in[0]->out_shape) + " vs " +
                      dims_to_string(p->out_shape));
        }
      }
      return in[0]->out_shape;
    }
    case OpKind::kConcat: {
      need_inputs(1, 1u << 20);
      std::int64_t c = 0;
      for (const auto* p : in) {
        need_chw(p->out_shape);
        if (p->out_shape[1] != in[0]->out_shape[1] ||
            p->out_shape[2] != in[0]->out_shape[2]) {
          fail(n, "concat inputs disagree on spatial dims");
        }
        c += p->out_shape[0];
      }
      return {c, in[0]->out_shape[1], in[0]->out_shape[2]};
    }
    case OpKind::kGlobalPool: {
      need_inputs(1, 1);
      need_chw(in[0]->out_shape);
      const auto c = in[0]->out_shape[0];
      if (n.out_shape == Dims{c}) return n.out_shape;
      return {c, 1, 1};
    }
  }
  fail(n, "unsupported op");
}

}  // namespace detail

inline LayerGraph::LayerGraph(std::vector<LayerNode> nodes, int input_bits)
    : nodes_(std::move(nodes)), input_bits_(input_bits) {
  if (input_bits_ < 1 || input_bits_ > 16) {
    throw GraphError("input_bits must be in [1,16]");
  }
  std::sort(nodes_.begin(), nodes_.end(),
            [](const LayerNode& a, const LayerNode& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_.emplace(nodes_[i].id, i).second) {
      throw GraphError("duplicate node id " + std::to_string(nodes_[i].id));
    }
  }
  std::vector<NodeId> inputs;
  for (const auto& n : nodes_) {
    consumers_[n.id];
    if (n.op == OpKind::kInput) inputs.push_back(n.id);
    for (auto src : n.inputs) {
      if (!index_.count(src)) {
        detail::fail(n, "unknown input id " + std::to_string(src));
      }
      if (src == n.id) detail::fail(n, "self loop");
      consumers_[src].push_back(n.id);
    }
  }
  if (inputs.size() != 1) {
    throw GraphError("graph must have exactly one input node, found " +
                     std::to_string(inputs.size()));
  }
  input_id_ = inputs.front();
  for (auto& [id, list] : consumers_) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }

  // Kahn pass for cycle detection, then shape inference in that order.
  std::map<NodeId, std::size_t> indegree;
  for (const auto& n : nodes_) {
    indegree[n.id] = std::set<NodeId>(n.inputs.begin(), n.inputs.end()).size();
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }
  std::vector<NodeId> order;
  while (!ready.empty()) {
    auto id = ready.top();
    ready.pop();
    order.push_back(id);
    for (auto c : consumers_[id]) {
      if (--indegree[c] == 0) ready.push(c);
    }
  }
  if (order.size() != nodes_.size()) {
    for (const auto& [id, d] : indegree) {
      if (d != 0) {
        throw GraphError("cycle detected involving node " + std::to_string(id));
      }
    }
  }
  if (order.front() != input_id_) {
    throw GraphError("node " + std::to_string(order.front()) +
                     " is not reachable from the input");
  }

  for (auto id : order) {
    auto& n = nodes_[index_[id]];
    std::vector<const LayerNode*> in;
    for (auto src : n.inputs) in.push_back(&nodes_[index_[src]]);
    Dims expect = detail::expected_shape(n, in);
    if (n.out_shape.empty()) {
      n.out_shape = expect;
    } else if (n.out_shape != expect) {
      detail::fail(n, "shape mismatch: out_shape " + dims_to_string(n.out_shape) +
                          " but op arithmetic gives " + dims_to_string(expect));
    }
    if (n.weights && n.weights->dims != n.weight_shape) {
      detail::fail(n, "weights blob dims " + dims_to_string(n.weights->dims) +
                          " != weight_shape " + dims_to_string(n.weight_shape));
    }
    if (n.bias && !is_affine(n.op)) detail::fail(n, "bias on non-affine op");
    if (n.bias && static_cast<std::int64_t>(n.bias->size()) != n.weight_shape[0]) {
      detail::fail(n, "bias length mismatch");
    }
  }

  // Reachability: forward from the input, backward from the outputs.
  for (const auto& n : nodes_) {
    if (n.op == OpKind::kOutput) output_ids_.push_back(n.id);
  }
  if (output_ids_.empty()) {
    for (const auto& n : nodes_) {
      if (consumers_[n.id].empty()) output_ids_.push_back(n.id);
    }
  }
  std::set<NodeId> seen{input_id_};
  std::vector<NodeId> stack{input_id_};
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    for (auto c : consumers_[id]) {
      if (seen.insert(c).second) stack.push_back(c);
    }
  }
  for (const auto& n : nodes_) {
    if (!seen.count(n.id)) detail::fail(n, "not reachable from the input");
  }
  seen.clear();
  stack.assign(output_ids_.begin(), output_ids_.end());
  seen.insert(stack.begin(), stack.end());
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    for (auto src : nodes_[index_[id]].inputs) {
      if (seen.insert(src).second) stack.push_back(src);
    }
  }
  for (const auto& n : nodes_) {
    if (!seen.count(n.id)) detail::fail(n, "does not reach any output");
  }
}

// ---------------------------------------------------------------------------
// Execution order, working sets and boundary cuts.

// Deterministic Kahn order; ties broken by ascending id. Position 0 is always
// the input node, positions 1..N are the layers.
inline std::vector<NodeId> topological_order(const LayerGraph& g) {
  std::map<NodeId, std::size_t> indegree;
  for (const auto& n : g.nodes()) {
    indegree[n.id] = std::set<NodeId>(n.inputs.begin(), n.inputs.end()).size();
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }
  std::vector<NodeId> order;
  order.reserve(g.size());
  while (!ready.empty()) {
    auto id = ready.top();
    ready.pop();
    order.push_back(id);
    for (auto c : g.consumers().at(id)) {
      if (--indegree[c] == 0) ready.push(c);
    }
  }
  if (order.size() != g.size()) throw GraphError("cycle detected");
  return order;
}

// Position bookkeeping shared by the liveness and cut computations.
class ExecutionPlan {
 public:
  ExecutionPlan(const LayerGraph& g, std::vector<NodeId> order)
      : order_(std::move(order)) {
    if (order_.size() != g.size()) {
      throw GraphError("order does not cover every node");
    }
    for (std::size_t p = 0; p < order_.size(); ++p) {
      if (!position_.emplace(order_[p], p).second) {
        throw GraphError("order repeats node " + std::to_string(order_[p]));
      }
    }
    // Graph outputs are consumed by a virtual sink after the last layer.
    const auto sink = static_cast<std::int64_t>(order_.size());
    last_use_.assign(order_.size(), -1);
    for (std::size_t p = 0; p < order_.size(); ++p) {
      const auto& n = g.node(order_[p]);
      for (auto src : n.inputs) {
        auto it = position_.find(src);
        if (it == position_.end() || it->second >= p) {
          throw GraphError("order is not topological at node " +
                           std::to_string(n.id));
        }
        last_use_[it->second] =
            std::max<std::int64_t>(last_use_[it->second], static_cast<std::int64_t>(p));
      }
      if (g.is_output(n.id)) last_use_[p] = sink;
      elements_.push_back(n.activation_elements());
    }
  }

  const std::vector<NodeId>& order() const { return order_; }
  // Number of layers N (the input node is not a layer).
  std::size_t layer_count() const { return order_.size() - 1; }
  std::size_t position(NodeId id) const { return position_.at(id); }
  NodeId at(std::size_t pos) const { return order_[pos]; }
  std::int64_t last_use(std::size_t pos) const { return last_use_[pos]; }
  std::int64_t elements(std::size_t pos) const { return elements_[pos]; }

 private:
  std::vector<NodeId> order_;
  std::map<NodeId, std::size_t> position_;
  std::vector<std::int64_t> last_use_;
  std::vector<std::int64_t> elements_;
};

struct LiveTensor {
  NodeId producer;
  std::int64_t elements;
  friend bool operator==(const LiveTensor&, const LiveTensor&) = default;
};

struct WorkingSet {
  std::size_t step = 0;
  std::vector<LiveTensor> live_tensors;  // in execution order of producers
  std::int64_t total_elements = 0;
};

// Live set at step k: every tensor produced at a position <= k that is still
// needed at or after k. The layer executing at k therefore holds its inputs
// and its output at the same time.
inline std::vector<WorkingSet> compute_working_sets(const ExecutionPlan& plan) {
  std::vector<WorkingSet> sets;
  const auto n_layers = plan.layer_count();
  for (std::size_t k = 1; k <= n_layers; ++k) {
    WorkingSet ws;
    ws.step = k;
    for (std::size_t p = 0; p <= k; ++p) {
      if (p == k || plan.last_use(p) >= static_cast<std::int64_t>(k)) {
        ws.live_tensors.push_back({plan.at(p), plan.elements(p)});
        ws.total_elements += plan.elements(p);
      }
    }
    sets.push_back(std::move(ws));
  }
  return sets;
}

inline std::vector<WorkingSet> compute_working_sets(
    const LayerGraph& g, const std::vector<NodeId>& order) {
  return compute_working_sets(ExecutionPlan(g, order));
}

// Largest working set (in elements) over steps 1..n; 0 for n = 0.
inline std::int64_t peak_working_elements(const ExecutionPlan& plan,
                                          std::size_t n) {
  std::int64_t peak = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    std::int64_t total = 0;
    for (std::size_t p = 0; p <= k; ++p) {
      if (p == k || plan.last_use(p) >= static_cast<std::int64_t>(k)) {
        total += plan.elements(p);
      }
    }
    peak = std::max(peak, total);
  }
  return peak;
}

struct BoundaryCut {
  std::size_t split_index = 0;
  std::vector<NodeId> crossing_tensors;  // producers, in execution order
  std::int64_t cut_elements = 0;
};

// Tensors that must travel from edge to cloud when the first n layers run on
// the edge: producers at positions <= n with a consumer after n. At n = N the
// graph outputs cross to the sink.
inline BoundaryCut boundary_cut(const ExecutionPlan& plan, std::size_t n) {
  if (n > plan.layer_count()) {
    throw GraphError("split index " + std::to_string(n) + " out of range [0," +
                     std::to_string(plan.layer_count()) + "]");
  }
  BoundaryCut cut;
  cut.split_index = n;
  for (std::size_t p = 0; p <= n; ++p) {
    if (plan.last_use(p) > static_cast<std::int64_t>(n)) {
      cut.crossing_tensors.push_back(plan.at(p));
      cut.cut_elements += plan.elements(p);
    }
  }
  return cut;
}

inline BoundaryCut boundary_cut(const LayerGraph& g,
                                const std::vector<NodeId>& order,
                                std::size_t n) {
  return boundary_cut(ExecutionPlan(g, order), n);
}

// ---------------------------------------------------------------------------
// JSON I/O.

inline nlohmann::json node_to_json(const LayerNode& n) {
  nlohmann::json j;
  j["id"] = n.id;
  if (!n.name.empty()) j["name"] = n.name;
  j["op"] = std::string(op_name(n.op));
  j["attrs"] = nlohmann::json::object();
  for (const auto& [k, v] : n.attrs) j["attrs"][k] = v;
  j["weight_shape"] = n.weight_shape;
  j["out_shape"] = n.out_shape;
  j["inputs"] = n.inputs;
  if (!n.weights_file.empty()) j["weights_file"] = n.weights_file;
  if (!n.bias_file.empty()) j["bias_file"] = n.bias_file;
  return j;
}

// Canonical structural dump: keys sorted, nodes ascending by id.
inline nlohmann::json graph_to_json(const LayerGraph& g) {
  nlohmann::json j;
  j["input_bits"] = g.input_bits();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes()) j["nodes"].push_back(node_to_json(n));
  return j;
}

inline std::string dump_graph(const LayerGraph& g) {
  return graph_to_json(g).dump(2) + "\n";
}

// Parses a graph document. Blob paths are resolved against base_dir.
inline LayerGraph parse_graph(const nlohmann::json& j,
                              const std::filesystem::path& base_dir = {}) {
  try {
    std::vector<LayerNode> nodes;
    for (const auto& jn : j.at("nodes")) {
      LayerNode n;
      n.id = jn.at("id").get<NodeId>();
      n.name = jn.value("name", "");
      const auto op_str = jn.at("op").get<std::string>();
      auto op = parse_op(op_str);
      if (!op) {
        throw GraphError("node " + std::to_string(n.id) + ": unknown op '" +
                         op_str + "'");
      }
      n.op = *op;
      if (jn.contains("attrs")) {
        for (const auto& [k, v] : jn.at("attrs").items()) {
          n.attrs[k] = v.get<std::int64_t>();
        }
      }
      n.weight_shape = jn.value("weight_shape", Dims{});
      n.out_shape = jn.value("out_shape", Dims{});
      n.inputs = jn.value("inputs", std::vector<NodeId>{});
      n.weights_file = jn.value("weights_file", "");
      n.bias_file = jn.value("bias_file", "");
      if (!n.weights_file.empty()) {
        n.weights = std::make_shared<const Tensor>(
            blob::read_file(base_dir / n.weights_file));
      }
      if (!n.bias_file.empty()) {
        auto b = blob::read_file(base_dir / n.bias_file);
        n.bias = std::make_shared<const std::vector<float>>(std::move(b.data));
      }
      nodes.push_back(std::move(n));
    }
    return LayerGraph(std::move(nodes), j.value("input_bits", 8));
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(std::string("graph parse error: ") + e.what());
  } catch (const IoError& e) {
    throw GraphError(std::string("graph blob error: ") + e.what());
  }
}

inline LayerGraph load_graph(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open graph file " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw GraphError("graph parse error in " + path.string() + ": " + e.what());
  }
  return parse_graph(j, path.parent_path());
}

// Writes <dir>/<stem>.json plus one ASTN blob per weighted node.
inline std::filesystem::path save_graph(const LayerGraph& g,
                                        const std::filesystem::path& dir,
                                        const std::string& stem) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["input_bits"] = g.input_bits();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes()) {
    auto jn = node_to_json(n);
    jn.erase("weights_file");
    jn.erase("bias_file");
    if (n.weights) {
      const auto file = stem + "_w" + std::to_string(n.id) + ".astn";
      blob::write_file(dir / file, *n.weights);
      jn["weights_file"] = file;
    }
    if (n.bias) {
      const auto file = stem + "_b" + std::to_string(n.id) + ".astn";
      blob::write_file(dir / file,
                       Tensor({static_cast<std::int64_t>(n.bias->size())}, *n.bias));
      jn["bias_file"] = file;
    }
    j["nodes"].push_back(std::move(jn));
  }
  const auto path = dir / (stem + ".json");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
  return path;
}

}  // namespace edgesplit
