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

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "edgesplit/graph.hpp"

namespace edgesplit {

inline constexpr double kBatchNormEpsilon = 1e-5;

struct OptimizedGraph {
  LayerGraph graph;
  std::vector<std::string> warnings;
};

namespace detail {

class GraphRewriter {
 public:
  explicit GraphRewriter(const LayerGraph& g) : input_bits_(g.input_bits()) {
    for (const auto& n : g.nodes()) nodes_.emplace(n.id, n);
  }

  bool fold_batchnorms(std::vector<std::string>& warnings) {
    bool changed = false;
    for (auto& [id, bn] : nodes_) {
      if (bn.op != OpKind::kBatchNorm) continue;
      auto& prod = nodes_.at(bn.inputs.at(0));
      std::string why = fold_blocker(prod);
      if (why.empty() && consumers_of(prod.id).size() != 1) {
        why = "predecessor output has other consumers";
      }
      if (!why.empty()) {
        warn(warnings, bn.label() + " left unfused: " + why);
        continue;
      }
      if (static_cast<bool>(prod.weights) != static_cast<bool>(bn.weights)) {
        warn(warnings, bn.label() + " left unfused: weights loaded on only one side");
        continue;
      }
      if (prod.weights) fold_into(prod, bn);
      bypass(bn.id, prod.id);
      changed = true;
      break;  // iterator invalidated by bypass
    }
    return changed;
  }

  bool fuse_residual_adds() {
    const auto pos = positions();
    for (auto& [id, add] : nodes_) {
      if (add.op != OpKind::kAdd || add.inputs.size() != 2 ||
          add.inputs[0] == add.inputs[1] || add.fused_relu()) {
        continue;
      }
      // The later producer in execution order is the main path.
      NodeId best = -1;
      for (auto src : add.inputs) {
        const auto& p = nodes_.at(src);
        if (!is_affine(p.op) || p.fused_relu() || p.has_residual() ||
            consumers_of(src).size() != 1) {
          continue;
        }
        if (best < 0 || pos.at(src) > pos.at(best)) best = src;
      }
      if (best < 0) continue;
      const NodeId other = add.inputs[0] == best ? add.inputs[1] : add.inputs[0];
      auto& main = nodes_.at(best);
      if (nodes_.at(other).out_shape != main.out_shape) continue;
      main.inputs.push_back(other);
      main.attrs["residual"] = 1;
      bypass(add.id, best);
      return true;
    }
    return false;
  }

  bool fuse_relus() {
    for (auto& [id, relu] : nodes_) {
      if (relu.op != OpKind::kRelu) continue;
      const NodeId src = relu.inputs.at(0);
      auto& p = nodes_.at(src);
      const bool fusable = is_affine(p.op) || p.op == OpKind::kAdd ||
                           p.op == OpKind::kBatchNorm;
      if (!fusable || p.fused_relu() || consumers_of(src).size() != 1) continue;
      p.attrs["relu"] = 1;
      bypass(relu.id, src);
      return true;
    }
    return false;
  }

  LayerGraph build() const {
    std::vector<LayerNode> out;
    for (const auto& [id, n] : nodes_) out.push_back(n);
    return LayerGraph(std::move(out), input_bits_);
  }

 private:
  static std::string fold_blocker(const LayerNode& p) {
    if (!is_affine(p.op)) {
      return "predecessor " + p.label() + " is " + std::string(op_name(p.op)) +
             ", not conv/fc";
    }
    if (p.fused_relu()) return "predecessor has a fused activation";
    if (p.has_residual()) return "predecessor has a fused residual";
    return {};
  }

  void warn(std::vector<std::string>& warnings, const std::string& w) {
    if (warned_.insert(w).second) warnings.push_back(w);
  }

  // Replaces every use of `from` with `to` and drops `from`.
  void bypass(NodeId from, NodeId to) {
    for (auto& [id, n] : nodes_) {
      for (auto& src : n.inputs) {
        if (src == from) src = to;
      }
    }
    nodes_.erase(from);
  }

  std::vector<NodeId> consumers_of(NodeId id) const {
    std::vector<NodeId> out;
    for (const auto& [cid, n] : nodes_) {
      for (auto src : n.inputs) {
        if (src == id) {
          out.push_back(cid);
          break;
        }
      }
    }
    return out;
  }

  std::map<NodeId, std::size_t> positions() const {
    auto order = topological_order(build());
    std::map<NodeId, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
    return pos;
  }

  static void fold_into(LayerNode& prod, const LayerNode& bn) {
    const Tensor& w = *prod.weights;
    const Tensor& stats = *bn.weights;  // rows: gamma, beta, mean, var
    const auto channels = prod.weight_shape[0];
    const auto per_channel = w.size() / channels;
    Tensor folded = w;
    std::vector<float> bias(channels, 0.0f);
    for (std::int64_t c = 0; c < channels; ++c) {
      const double gamma = stats[c];
      const double beta = stats[channels + c];
      const double mean = stats[2 * channels + c];
      const double var = stats[3 * channels + c];
      const double scale = gamma / std::sqrt(var + kBatchNormEpsilon);
      for (std::int64_t k = 0; k < per_channel; ++k) {
        const auto i = c * per_channel + k;
        folded[i] = static_cast<float>(w[i] * scale);
      }
      const double b = prod.bias ? (*prod.bias)[c] : 0.0;
      bias[c] = static_cast<float>((b - mean) * scale + beta);
    }
    prod.weights = std::make_shared<const Tensor>(std::move(folded));
    prod.bias = std::make_shared<const std::vector<float>>(std::move(bias));
    prod.weights_file.clear();
    prod.bias_file.clear();
  }

  std::map<NodeId, LayerNode> nodes_;
  std::set<std::string> warned_;
  int input_bits_;
};

}  // namespace detail

// Inference-time rewrites run to a fixed point: batchnorm folding into the
// preceding conv/fc, residual add fusion into the later affine producer, and
// relu fusion into its producer. Batchnorms that cannot be folded stay as
// standalone scale/shift layers and are reported in `warnings`.
inline OptimizedGraph optimize_graph(const LayerGraph& g) {
  detail::GraphRewriter rw(g);
  std::vector<std::string> warnings;
  for (;;) {
    if (rw.fold_batchnorms(warnings)) continue;
    if (rw.fuse_residual_adds()) continue;
    if (rw.fuse_relus()) continue;
    break;
  }
  return {rw.build(), std::move(warnings)};
}

}  // namespace edgesplit
