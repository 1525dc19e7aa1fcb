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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "edgesplit/error.hpp"
#include "edgesplit/executor.hpp"
#include "edgesplit/graph.hpp"
#include "edgesplit/tensor.hpp"

namespace edgesplit {

// Incremental graph construction with shape inference. Node ids are assigned
// in call order starting at 0.
class GraphBuilder {
 public:
  NodeId input(Dims shape, std::string name = "input") {
    LayerNode n;
    n.op = OpKind::kInput;
    n.out_shape = std::move(shape);
    return add_node(std::move(n), std::move(name));
  }

  NodeId conv(NodeId src, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride,
              std::int64_t pad, std::string name, bool relu = false) {
    const auto& x = shape(src);
    LayerNode n;
    n.op = kernel == 1 && pad == 0 ? OpKind::kPointwiseConv : OpKind::kConv;
    n.weight_shape = {out_channels, x.at(0), kernel, kernel};
    set_conv_attrs(n, kernel, stride, pad, relu);
    n.out_shape = {out_channels, detail::conv_out_extent(x[1], kernel, stride, pad),
                   detail::conv_out_extent(x[2], kernel, stride, pad)};
    n.inputs = {src};
    return add_node(std::move(n), std::move(name));
  }

  NodeId depthwise(NodeId src, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                   std::string name, bool relu = false) {
    const auto& x = shape(src);
    LayerNode n;
    n.op = OpKind::kDepthwiseConv;
    n.weight_shape = {x.at(0), 1, kernel, kernel};
    set_conv_attrs(n, kernel, stride, pad, relu);
    n.out_shape = {x[0], detail::conv_out_extent(x[1], kernel, stride, pad),
                   detail::conv_out_extent(x[2], kernel, stride, pad)};
    n.inputs = {src};
    return add_node(std::move(n), std::move(name));
  }

  NodeId fc(NodeId src, std::int64_t out, std::string name, bool relu = false) {
    LayerNode n;
    n.op = OpKind::kFc;
    n.weight_shape = {out, volume(shape(src))};
    n.out_shape = {out};
    if (relu) n.attrs["relu"] = 1;
    n.inputs = {src};
    return add_node(std::move(n), std::move(name));
  }

  NodeId batchnorm(NodeId src, std::string name) {
    LayerNode n;
    n.op = OpKind::kBatchNorm;
    n.weight_shape = {4, shape(src).at(0)};
    n.out_shape = shape(src);
    n.inputs = {src};
    return add_node(std::move(n), std::move(name));
  }

  NodeId relu(NodeId src, std::string name) { return unary(OpKind::kRelu, src, std::move(name)); }

  NodeId add(std::vector<NodeId> srcs, std::string name, bool relu = false) {
    LayerNode n;
    n.op = OpKind::kAdd;
    n.out_shape = shape(srcs.at(0));
    n.inputs = std::move(srcs);
    if (relu) n.attrs["relu"] = 1;
    return add_node(std::move(n), std::move(name));
  }

  NodeId concat(std::vector<NodeId> srcs, std::string name) {
    LayerNode n;
    n.op = OpKind::kConcat;
    std::int64_t c = 0;
    for (auto s : srcs) c += shape(s).at(0);
    const auto& first = shape(srcs.at(0));
    n.out_shape = {c, first.at(1), first.at(2)};
    n.inputs = std::move(srcs);
    return add_node(std::move(n), std::move(name));
  }

  NodeId global_pool(NodeId src, std::string name) {
    LayerNode n;
    n.op = OpKind::kGlobalPool;
    n.out_shape = {shape(src).at(0), 1, 1};
    n.inputs = {src};
    return add_node(std::move(n), std::move(name));
  }

  NodeId output(NodeId src, std::string name = "output") {
    return unary(OpKind::kOutput, src, std::move(name));
  }

  // Makes `node` add `residual` to its output before its activation.
  void fuse_residual(NodeId node, NodeId residual) {
    auto& n = nodes_.at(static_cast<std::size_t>(node));
    n.inputs.push_back(residual);
    n.attrs["residual"] = 1;
  }

  const Dims& shape(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).out_shape; }
  std::vector<LayerNode>& nodes() { return nodes_; }

  LayerGraph build(int input_bits = 8) const { return LayerGraph(nodes_, input_bits); }

 private:
  static void set_conv_attrs(LayerNode& n, std::int64_t k, std::int64_t stride,
                             std::int64_t pad, bool relu) {
    n.attrs["kernel_h"] = k;
    n.attrs["kernel_w"] = k;
    n.attrs["stride"] = stride;
    n.attrs["pad"] = pad;
    if (relu) n.attrs["relu"] = 1;
  }

  NodeId unary(OpKind op, NodeId src, std::string name) {
    LayerNode n;
    n.op = op;
    n.out_shape = shape(src);
    n.inputs = {src};
    return add_node(std::move(n), std::move(name));
  }

  NodeId add_node(LayerNode n, std::string name) {
    n.id = static_cast<NodeId>(nodes_.size());
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  std::vector<LayerNode> nodes_;
};

// ---------------------------------------------------------------------------
// Weights.

// He-normal weights and small biases for every weighted node lacking them;
// batchnorm nodes get gamma near 1, beta and mean near 0 and variance
// in [0.5, 1.5].
inline LayerGraph init_missing_weights(const LayerGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LayerNode> nodes = g.nodes();
  for (auto& n : nodes) {
    if (n.weight_elements() == 0 || n.weights) continue;
    Tensor w(n.weight_shape);
    if (n.op == OpKind::kBatchNorm) {
      const auto c = n.weight_shape[1];
      std::uniform_real_distribution<float> u(-0.2f, 0.2f);
      std::uniform_real_distribution<float> var(0.5f, 1.5f);
      for (std::int64_t i = 0; i < c; ++i) {
        w.data[i] = 1.0f + u(rng);
        w.data[c + i] = u(rng);
        w.data[2 * c + i] = u(rng);
        w.data[3 * c + i] = var(rng);
      }
    } else {
      const auto fan_in = n.weight_elements() / n.weight_shape[0];
      std::normal_distribution<float> d(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
      for (auto& v : w.data) v = d(rng);
      std::uniform_real_distribution<float> b(-0.05f, 0.05f);
      std::vector<float> bias(static_cast<std::size_t>(n.weight_shape[0]));
      for (auto& v : bias) v = b(rng);
      n.bias = std::make_shared<const std::vector<float>>(std::move(bias));
    }
    n.weights = std::make_shared<const Tensor>(std::move(w));
  }
  return LayerGraph(std::move(nodes), g.input_bits());
}

// ---------------------------------------------------------------------------
// Reference topologies.

// ResNet-50 (v1 stride placement) after inference rewrites: batchnorms
// folded, relus fused, residual adds fused into each block's last 1x1 conv.
// Shapes only; the stem conv stands in for conv + max-pool (224 -> 56).
// Within each first block the projection shortcut precedes conv1 in id order.
inline LayerGraph resnet50_shaped() {
  GraphBuilder b;
  NodeId x = b.input({3, 224, 224});
  x = b.conv(x, 64, 7, 4, 3, "conv1", true);
  const int blocks[] = {3, 4, 6, 3};
  const std::int64_t widths[] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    for (int j = 0; j < blocks[s]; ++j) {
      const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(j) + ".";
      const std::int64_t stride = j == 0 && s > 0 ? 2 : 1;
      NodeId shortcut = x;
      if (j == 0) shortcut = b.conv(x, widths[s] * 4, 1, stride, 0, prefix + "downsample");
      NodeId y = b.conv(x, widths[s], 1, stride, 0, prefix + "conv1", true);
      y = b.conv(y, widths[s], 3, 1, 1, prefix + "conv2", true);
      y = b.conv(y, widths[s] * 4, 1, 1, 0, prefix + "conv3", true);
      b.fuse_residual(y, shortcut);
      x = y;
    }
  }
  x = b.global_pool(x, "avgpool");
  x = b.fc(x, 1000, "fc");
  b.output(x);
  return b.build(8);
}

// Node id of the k-th weighted layer (0-based) in execution order.
inline NodeId weighted_layer(const LayerGraph& g, std::size_t ordinal) {
  std::size_t k = 0;
  for (auto id : topological_order(g)) {
    if (g.node(id).weight_elements() == 0) continue;
    if (k++ == ordinal) return id;
  }
  throw GraphError("graph has fewer than " + std::to_string(ordinal + 1) + " weighted layers");
}

// Inverted residual block with a skip connection in unoptimized form: every
// convolution is followed by a batchnorm and (except the projection) a relu.
// C -> P -> D -> P (+ skip from C) -> G -> L.
inline LayerGraph inverted_residual_block(std::int64_t channels = 8, std::int64_t expand = 4,
                                          std::int64_t spatial = 8, std::int64_t classes = 10) {
  GraphBuilder b;
  NodeId x = b.input({3, spatial, spatial});
  NodeId c = b.conv(x, channels, 3, 1, 1, "conv");
  c = b.batchnorm(c, "conv.bn");
  c = b.relu(c, "conv.relu");
  NodeId y = b.conv(c, channels * expand, 1, 1, 0, "expand");
  y = b.batchnorm(y, "expand.bn");
  y = b.relu(y, "expand.relu");
  y = b.depthwise(y, 3, 1, 1, "depthwise");
  y = b.batchnorm(y, "depthwise.bn");
  y = b.relu(y, "depthwise.relu");
  y = b.conv(y, channels, 1, 1, 0, "project");
  y = b.batchnorm(y, "project.bn");
  y = b.add({y, c}, "skip");
  y = b.global_pool(y, "pool");
  y = b.fc(y, classes, "classifier");
  b.output(y);
  return b.build(8);
}

// Random DAG with up to `layers` layers on a fixed spatial grid: convs,
// pointwise and depthwise convs, relus, two-input adds and concats drawing on
// any earlier node.
inline LayerGraph random_dag(std::mt19937_64& rng, std::size_t layers,
                             std::int64_t spatial = 4) {
  GraphBuilder b;
  std::vector<NodeId> ids{b.input({2, spatial, spatial})};
  auto pick = [&] {
    std::uniform_int_distribution<std::size_t> d(0, ids.size() - 1);
    return ids[d(rng)];
  };
  std::uniform_int_distribution<int> op(0, 5);
  std::uniform_int_distribution<std::int64_t> ch(1, 4);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = "l" + std::to_string(i);
    const NodeId src = pick();
    NodeId id = -1;
    switch (op(rng)) {
      case 0:
        id = b.conv(src, ch(rng), 3, 1, 1, name, coin(rng));
        break;
      case 1:
        id = b.conv(src, ch(rng), 1, 1, 0, name, coin(rng));
        break;
      case 2:
        id = b.depthwise(src, 3, 1, 1, name, coin(rng));
        break;
      case 3:
        id = b.relu(src, name);
        break;
      case 4: {
        std::vector<NodeId> same;
        for (auto other : ids) {
          if (other != src && b.shape(other) == b.shape(src)) same.push_back(other);
        }
        if (same.empty()) {
          id = b.relu(src, name);
        } else {
          std::uniform_int_distribution<std::size_t> d(0, same.size() - 1);
          id = b.add({src, same[d(rng)]}, name);
        }
        break;
      }
      default:
        id = b.concat({src, pick()}, name);
        break;
    }
    ids.push_back(id);
  }
  return b.build(8);
}

// Linear chain of convolutions with random widths, ending in a classifier.
inline LayerGraph random_chain(std::mt19937_64& rng, std::size_t layers,
                               std::int64_t spatial = 4) {
  GraphBuilder b;
  NodeId x = b.input({2, spatial, spatial});
  std::uniform_int_distribution<std::int64_t> ch(1, 6);
  std::bernoulli_distribution pointwise(0.4);
  for (std::size_t i = 0; i + 1 < layers; ++i) {
    const bool pw = pointwise(rng);
    x = b.conv(x, ch(rng), pw ? 1 : 3, 1, pw ? 0 : 1, "l" + std::to_string(i), true);
  }
  if (layers > 0) x = b.fc(x, 4, "l" + std::to_string(layers - 1));
  return b.build(8);
}

// ---------------------------------------------------------------------------
// Toy classification task: 16x16 grayscale glyphs in ten classes.

inline constexpr std::int64_t kToySize = 16;
inline constexpr int kToyClasses = 10;

namespace detail {

inline bool toy_glyph(int cls, int r, int c, int cy, int cx, int s) {
  const int dy = r - cy, dx = c - cx;
  const int ay = std::abs(dy), ax = std::abs(dx);
  switch (cls) {
    case 0: return ay <= 1 && ax <= s;                    // horizontal bar
    case 1: return ax <= 1 && ay <= s;                    // vertical bar
    case 2: return std::abs(dy - dx) <= 1 && ay <= s;     // diagonal
    case 3: return std::abs(dy + dx) <= 1 && ay <= s;     // anti-diagonal
    case 4: return std::max(ay, ax) == s;                 // square outline
    case 5: return std::max(ay, ax) <= s - 2;             // filled square
    case 6: return (ay <= 1 && ax <= s) || (ax <= 1 && ay <= s);  // plus
    case 7: {                                             // ring
      const int d2 = dy * dy + dx * dx;
      return d2 >= (s - 1) * (s - 1) && d2 <= (s + 1) * (s + 1);
    }
    case 8: return std::max(ay, ax) <= s && ((r / 2 + c / 2) % 2 == 0);  // checker
    default: return ay <= s && ax <= s && (ay % 3 == 0) && (ax % 3 == 0);  // dots
  }
}

}  // namespace detail

// Glyphs with random position, size and noise, on the 8-bit raw input grid.
inline EvalSet make_toy_dataset(std::uint64_t seed, std::size_t count, int input_bits = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> center(5, 10);
  std::uniform_int_distribution<int> size(3, 5);
  std::normal_distribution<double> noise(0.0, 0.06);
  const auto levels = (std::int64_t{1} << input_bits) - 1;
  EvalSet set;
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(i % kToyClasses);
    const int cy = center(rng), cx = center(rng), s = size(rng);
    std::vector<std::int32_t> codes(kToySize * kToySize);
    for (int r = 0; r < kToySize; ++r) {
      for (int c = 0; c < kToySize; ++c) {
        double v = detail::toy_glyph(cls, r, c, cy, cx, s) ? 0.85 : 0.1;
        v = std::clamp(v + noise(rng), 0.0, 1.0);
        codes[r * kToySize + c] = static_cast<std::int32_t>(std::lround(v * levels));
      }
    }
    set.inputs.push_back(raw_input({1, kToySize, kToySize}, codes, input_bits));
    set.labels.push_back(cls);
  }
  return set;
}

// Feature extractor: 3x3 conv (1->8), strided 3x3 conv (8->16), pointwise
// (16->8), then a linear readout over the flattened 8x8x8 features.
inline LayerGraph toy_classifier_topology() {
  GraphBuilder b;
  NodeId x = b.input({1, kToySize, kToySize});
  x = b.conv(x, 8, 3, 1, 1, "conv1", true);
  x = b.conv(x, 16, 3, 2, 1, "conv2", true);
  x = b.conv(x, 16, 1, 1, 0, "conv3", true);
  x = b.fc(x, kToyClasses, "fc");
  b.output(x);
  return b.build(8);
}

// Random convolutional features with a ridge-regression readout fitted on a
// synthetic training set.
inline LayerGraph build_toy_classifier(std::uint64_t seed, std::size_t train_count = 2000,
                                       double ridge = 1e-3) {
  LayerGraph g = init_missing_weights(toy_classifier_topology(), seed);
  const auto train = make_toy_dataset(seed ^ 0x9e3779b97f4a7c15ULL, train_count);
  const auto order = topological_order(g);
  NodeId fc_id = -1, feat_id = -1;
  for (auto id : order) {
    if (g.node(id).op == OpKind::kFc) {
      fc_id = id;
      feat_id = g.node(id).inputs.at(0);
    }
  }
  const auto dim = g.node(feat_id).activation_elements();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(train.inputs.size()), dim + 1);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(X.rows(), kToyClasses, -1.0 / kToyClasses);
  const auto samples = calibrate_activations(g, train.inputs, train.inputs.size());
  const auto& feats = samples.at(feat_id);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (std::int64_t k = 0; k < dim; ++k) X(i, k) = feats[static_cast<std::size_t>(i)].data[k];
    X(i, dim) = 1.0;
    Y(i, train.labels[static_cast<std::size_t>(i)]) += 1.0;
  }
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += ridge * static_cast<double>(X.rows());
  const Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);

  std::vector<LayerNode> nodes = g.nodes();
  for (auto& n : nodes) {
    if (n.id != fc_id) continue;
    Tensor w(n.weight_shape);
    std::vector<float> bias(kToyClasses);
    for (int o = 0; o < kToyClasses; ++o) {
      for (std::int64_t k = 0; k < dim; ++k) w.data[o * dim + k] = static_cast<float>(W(k, o));
      bias[o] = static_cast<float>(W(dim, o));
    }
    n.weights = std::make_shared<const Tensor>(std::move(w));
    n.bias = std::make_shared<const std::vector<float>>(std::move(bias));
  }
  return LayerGraph(std::move(nodes), g.input_bits());
}

}  // namespace edgesplit
