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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "edgesplit/bits.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/graph.hpp"
#include "edgesplit/graph_opt.hpp"
#include "edgesplit/parallel.hpp"
#include "edgesplit/quantizer.hpp"
#include "edgesplit/tensor.hpp"

namespace edgesplit {

// Reference float kernels. Accumulation is done in double.
namespace ops {

inline Tensor convolution(const LayerNode& n, const Tensor& x, const Tensor& w,
                          const std::vector<float>* bias) {
  const auto c_in = x.dims[0], h = x.dims[1], wd = x.dims[2];
  const auto c_out = n.out_shape[0], oh = n.out_shape[1], ow = n.out_shape[2];
  const bool depthwise = n.op == OpKind::kDepthwiseConv;
  const auto kh = depthwise || w.dims.size() == 4 ? w.dims[2] : 1;
  const auto kw = depthwise || w.dims.size() == 4 ? w.dims[3] : 1;
  const auto stride = n.attr("stride", 1);
  const auto pad = n.attr("pad", 0);
  const auto ic_per = depthwise ? 1 : c_in;
  Tensor y(n.out_shape);
  for (std::int64_t oc = 0; oc < c_out; ++oc) {
    const float* wk = w.data.data() + oc * ic_per * kh * kw;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double acc = bias ? (*bias)[oc] : 0.0;
        for (std::int64_t j = 0; j < ic_per; ++j) {
          const std::int64_t ic = depthwise ? oc : j;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const auto iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const auto ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += static_cast<double>(wk[(j * kh + ky) * kw + kx]) *
                     x.data[(ic * h + iy) * wd + ix];
            }
          }
        }
        y.data[(oc * oh + oy) * ow + ox] = static_cast<float>(acc);
      }
    }
  }
  return y;
}

inline Tensor fully_connected(const LayerNode& n, const Tensor& x, const Tensor& w,
                              const std::vector<float>* bias) {
  const auto out = w.dims[0], in = w.dims[1];
  Tensor y(n.out_shape);
  for (std::int64_t o = 0; o < out; ++o) {
    double acc = bias ? (*bias)[o] : 0.0;
    const float* row = w.data.data() + o * in;
    for (std::int64_t i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * x.data[i];
    y.data[o] = static_cast<float>(acc);
  }
  return y;
}

inline Tensor batchnorm(const Tensor& x, const Tensor& stats) {
  const auto c = x.dims[0];
  const auto per = x.size() / c;
  Tensor y(x.dims);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double gamma = stats[ch], beta = stats[c + ch];
    const double mean = stats[2 * c + ch], var = stats[3 * c + ch];
    const double scale = gamma / std::sqrt(var + kBatchNormEpsilon);
    for (std::int64_t i = 0; i < per; ++i) {
      const auto k = ch * per + i;
      y.data[k] = static_cast<float>((x.data[k] - mean) * scale + beta);
    }
  }
  return y;
}

inline Tensor global_pool(const LayerNode& n, const Tensor& x) {
  const auto c = x.dims[0];
  const auto per = x.size() / c;
  Tensor y(n.out_shape);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < per; ++i) acc += x.data[ch * per + i];
    y.data[ch] = static_cast<float>(acc / static_cast<double>(per));
  }
  return y;
}

inline Tensor add(const LayerNode& n, const std::vector<const Tensor*>& in) {
  Tensor y(n.out_shape);
  for (std::int64_t i = 0; i < y.size(); ++i) {
    double acc = 0.0;
    for (const auto* t : in) acc += t->data[i];
    y.data[i] = static_cast<float>(acc);
  }
  return y;
}

inline Tensor concat(const LayerNode& n, const std::vector<const Tensor*>& in) {
  Tensor y(n.out_shape);
  std::size_t off = 0;
  for (const auto* t : in) {
    std::copy(t->data.begin(), t->data.end(), y.data.begin() + off);
    off += t->data.size();
  }
  return y;
}

}  // namespace ops

// Evaluates one node. `weights` overrides the node's own blob (used for
// dequantized edge weights).
inline Tensor evaluate_node(const LayerNode& n, const std::vector<const Tensor*>& in,
                            const Tensor* weights = nullptr) {
  if (!weights && n.weights) weights = n.weights.get();
  if (n.weight_elements() > 0 && !weights) {
    throw GraphError(n.label() + ": missing weights blob");
  }
  Tensor y;
  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kOutput:
    case OpKind::kRelu:
      y = *in.at(0);
      break;
    case OpKind::kConv:
    case OpKind::kDepthwiseConv:
    case OpKind::kPointwiseConv:
      y = ops::convolution(n, *in.at(0), *weights, n.bias.get());
      break;
    case OpKind::kFc:
      y = ops::fully_connected(n, *in.at(0), *weights, n.bias.get());
      break;
    case OpKind::kBatchNorm:
      y = ops::batchnorm(*in.at(0), *weights);
      break;
    case OpKind::kAdd:
      y = ops::add(n, in);
      break;
    case OpKind::kConcat:
      y = ops::concat(n, in);
      break;
    case OpKind::kGlobalPool:
      y = ops::global_pool(n, *in.at(0));
      break;
  }
  if (y.dims != n.out_shape) y.dims = n.out_shape;  // relu/output inherit
  if (n.has_residual()) {
    const Tensor& r = *in.at(1);
    for (std::int64_t i = 0; i < y.size(); ++i) y.data[i] += r.data[i];
  }
  if (n.fused_relu() || n.op == OpKind::kRelu) {
    for (auto& v : y.data) v = std::max(v, 0.0f);
  }
  return y;
}

// Raw sensor data arrives as input_bits codes scaled into [0, 1].
inline QuantParams raw_input_params(int input_bits) {
  QuantParams p;
  p.bits = input_bits;
  p.scale = detail::snap_f32(1.0 / static_cast<double>((std::int64_t{1} << input_bits) - 1));
  p.zero_point = 0.0;
  p.symmetric = false;
  return p;
}

// Builds an input tensor from raw sensor codes.
inline Tensor raw_input(const Dims& dims, std::span<const std::int32_t> codes,
                        int input_bits) {
  return dequantize_tensor(dims, codes, raw_input_params(input_bits));
}

// Activation payload produced on the edge for one cut-crossing tensor.
struct CrossingTensor {
  NodeId producer = 0;
  Dims dims;
  QuantParams params;
  std::vector<std::int32_t> codes;
};

// A graph bound to a split point and an edge bit assignment. Layers at
// positions 1..n use dequantized weights and fake-quantized outputs; the rest
// run in float. With n = 0 this is plain float inference.
class SplitModel {
 public:
  SplitModel(const LayerGraph& g, std::size_t n, BitAssignment bits = {})
      : graph_(&g), plan_(g, topological_order(g)), n_(n), bits_(std::move(bits)) {
    if (n_ > plan_.layer_count()) {
      throw GraphError("split index " + std::to_string(n_) + " out of range");
    }
    for (std::size_t p = 1; p <= n_; ++p) {
      const auto& node = g.node(plan_.at(p));
      auto it = bits_.find(node.id);
      if (it == bits_.end()) {
        throw ConfigError("missing bit assignment for edge layer " + node.label());
      }
      if (node.weight_elements() == 0) continue;
      if (!node.weights) throw GraphError(node.label() + ": missing weights blob");
      const int wb = it->second.weight_bits;
      if (wb >= kReferenceBits) continue;
      const auto qp = choose_clip_range(node.weights->data, wb, true);
      qweights_[node.id] =
          std::make_shared<const Tensor>(quantize_tensor(*node.weights, qp).dequantized);
    }
  }

  const LayerGraph& graph() const { return *graph_; }
  const ExecutionPlan& plan() const { return plan_; }
  std::size_t split_index() const { return n_; }
  const BitAssignment& bits() const { return bits_; }

  std::vector<Tensor> run(const Tensor& x) const {
    std::map<NodeId, Tensor> values;
    values[graph_->input_id()] = check_input(x);
    for (std::size_t p = 1; p <= plan_.layer_count(); ++p) {
      const auto id = plan_.at(p);
      Tensor y = compute(id, values);
      if (p <= n_) y = edge_quantize(id, y).second;
      values[id] = std::move(y);
    }
    return collect_outputs(values);
  }

  // Edge half: runs layers 1..n and returns the quantized cut tensors in
  // execution order. The raw input crosses at input_bits with fixed params.
  std::vector<CrossingTensor> run_edge(const Tensor& x) const {
    std::map<NodeId, Tensor> values;
    std::map<NodeId, CrossingTensor> payloads;
    values[graph_->input_id()] = check_input(x);
    for (std::size_t p = 1; p <= n_; ++p) {
      const auto id = plan_.at(p);
      auto [ct, y] = edge_quantize(id, compute(id, values));
      payloads[id] = std::move(ct);
      values[id] = std::move(y);
    }
    std::vector<CrossingTensor> out;
    for (auto id : boundary_cut(plan_, n_).crossing_tensors) {
      if (id == graph_->input_id()) {
        out.push_back(quantize_raw_input(values.at(id)));
      } else {
        out.push_back(std::move(payloads.at(id)));
      }
    }
    return out;
  }

  // Cloud half: runs layers n+1..N in float from the reconstructed cut.
  std::vector<Tensor> run_cloud(std::map<NodeId, Tensor> received) const {
    for (auto id : boundary_cut(plan_, n_).crossing_tensors) {
      auto it = received.find(id);
      if (it == received.end()) {
        throw GraphError("cloud is missing cut tensor of node " + std::to_string(id));
      }
      if (it->second.dims != graph_->node(id).out_shape) {
        throw GraphError("cut tensor of node " + std::to_string(id) + " has shape " +
                         dims_to_string(it->second.dims));
      }
    }
    for (std::size_t p = n_ + 1; p <= plan_.layer_count(); ++p) {
      const auto id = plan_.at(p);
      received[id] = compute(id, received);
    }
    return collect_outputs(received);
  }

  static Tensor reconstruct(const CrossingTensor& ct) {
    return dequantize_tensor(ct.dims, ct.codes, ct.params);
  }

 private:
  Tensor check_input(const Tensor& x) const {
    const auto& expect = graph_->node(graph_->input_id()).out_shape;
    if (x.dims != expect) {
      throw GraphError("input shape " + dims_to_string(x.dims) + " != expected " +
                       dims_to_string(expect));
    }
    return x;
  }

  Tensor compute(NodeId id, const std::map<NodeId, Tensor>& values) const {
    const auto& node = graph_->node(id);
    std::vector<const Tensor*> in;
    for (auto src : node.inputs) in.push_back(&values.at(src));
    auto it = qweights_.find(id);
    return evaluate_node(node, in, it == qweights_.end() ? nullptr : it->second.get());
  }

  std::pair<CrossingTensor, Tensor> edge_quantize(NodeId id, const Tensor& y) const {
    const int ab = bits_.at(id).act_bits;
    CrossingTensor ct;
    ct.producer = id;
    ct.dims = y.dims;
    if (ab >= kReferenceBits) {
      ct.params = QuantParams{ab, 1.0, 0.0, false};
      return {std::move(ct), y};
    }
    ct.params = choose_clip_range(y.data, ab, false);
    auto q = quantize_tensor(y, ct.params);
    ct.codes = std::move(q.codes);
    return {std::move(ct), std::move(q.dequantized)};
  }

  CrossingTensor quantize_raw_input(const Tensor& x) const {
    CrossingTensor ct;
    ct.producer = graph_->input_id();
    ct.dims = x.dims;
    ct.params = raw_input_params(graph_->input_bits());
    auto q = quantize_tensor(x, ct.params);
    if (q.dequantized != x) {
      throw ConfigError("raw input is not representable at input_bits=" +
                        std::to_string(graph_->input_bits()));
    }
    ct.codes = std::move(q.codes);
    return ct;
  }

  std::vector<Tensor> collect_outputs(const std::map<NodeId, Tensor>& values) const {
    std::vector<Tensor> out;
    for (auto id : graph_->output_ids()) out.push_back(values.at(id));
    return out;
  }

  const LayerGraph* graph_;
  ExecutionPlan plan_;
  std::size_t n_;
  BitAssignment bits_;
  std::map<NodeId, std::shared_ptr<const Tensor>> qweights_;
};

inline std::vector<Tensor> run_inference(const LayerGraph& g, const Tensor& x) {
  return SplitModel(g, 0).run(x);
}

inline std::vector<Tensor> run_fake_quantized(const LayerGraph& g, const Tensor& x,
                                              std::size_t n, const BitAssignment& bits) {
  return SplitModel(g, n, bits).run(x);
}

// Float outputs of every layer for up to max_samples inputs.
inline ActivationSamples calibrate_activations(const LayerGraph& g,
                                               const std::vector<Tensor>& inputs,
                                               std::size_t max_samples = 8) {
  const auto count = std::min(inputs.size(), max_samples);
  const ExecutionPlan plan(g, topological_order(g));
  std::vector<std::map<NodeId, Tensor>> per_input(count);
  parallel_for(count, [&](std::size_t k) {
    auto& values = per_input[k];
    values[g.input_id()] = inputs[k];
    for (std::size_t p = 1; p <= plan.layer_count(); ++p) {
      const auto& node = g.node(plan.at(p));
      std::vector<const Tensor*> in;
      for (auto src : node.inputs) in.push_back(&values.at(src));
      values[node.id] = evaluate_node(node, in);
    }
  });
  ActivationSamples samples;
  for (std::size_t p = 1; p <= plan.layer_count(); ++p) samples[plan.at(p)];
  for (auto& values : per_input) {
    for (auto& [id, t] : values) {
      if (id != g.input_id()) samples[id].push_back(std::move(t));
    }
  }
  return samples;
}

struct EvalSet {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
};

inline int argmax(const Tensor& t) {
  return static_cast<int>(std::max_element(t.data.begin(), t.data.end()) - t.data.begin());
}

// Top-1 accuracy of the model on the first graph output.
inline double evaluate_accuracy(const SplitModel& model, const EvalSet& eval) {
  if (eval.inputs.empty()) throw ConfigError("empty evaluation set");
  if (eval.inputs.size() != eval.labels.size()) {
    throw ConfigError("evaluation set has mismatched inputs/labels");
  }
  std::vector<char> correct(eval.inputs.size(), 0);
  parallel_for(eval.inputs.size(), [&](std::size_t i) {
    correct[i] = argmax(model.run(eval.inputs[i]).at(0)) == eval.labels[i];
  });
  std::size_t hits = 0;
  for (char c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(correct.size());
}

inline double evaluate_accuracy(const LayerGraph& g, const EvalSet& eval, std::size_t n,
                                const BitAssignment& bits) {
  return evaluate_accuracy(SplitModel(g, n, bits), eval);
}

// EvalSet directory: labels.csv with header "file,label", one ASTN blob per
// input next to it.
inline void save_eval_set(const EvalSet& eval, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
  labels << "file,label\n";
  for (std::size_t i = 0; i < eval.inputs.size(); ++i) {
    std::ostringstream name;
    name << "input_" << std::setw(5) << std::setfill('0') << i << ".astn";
    blob::write_file(dir / name.str(), eval.inputs[i]);
    labels << name.str() << ',' << eval.labels[i] << '\n';
  }
}

inline EvalSet load_eval_set(const std::filesystem::path& dir) {
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw ConfigError("cannot open " + (dir / "labels.csv").string());
  EvalSet eval;
  std::string line;
  std::getline(labels, line);
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("bad labels.csv row: " + line);
    try {
      eval.inputs.push_back(blob::read_file(dir / line.substr(0, comma)));
      eval.labels.push_back(std::stoi(line.substr(comma + 1)));
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad label in row: " + line);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  if (eval.inputs.empty()) throw ConfigError("evaluation set " + dir.string() + " is empty");
  return eval;
}

}  // namespace edgesplit
