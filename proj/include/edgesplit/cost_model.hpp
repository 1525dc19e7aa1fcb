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
#include <optional>
#include <string>
#include <vector>

#include "edgesplit/bits.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/graph.hpp"
#include "edgesplit/quantizer.hpp"
#include "json.hpp"

namespace edgesplit {

struct DeviceProfile {
  std::string name;
  std::int64_t on_chip_bytes = 0;  // kept for reference; not used by latency
  std::int64_t off_chip_bytes = 0;
  double bandwidth_bytes_per_s = 0;
  double peak_ops_per_s = 0;
  int mac_bits = 8;  // widest operand that still runs at the full MAC rate
  std::vector<int> supported_bits;

  bool supports(int bits) const {
    return std::find(supported_bits.begin(), supported_bits.end(), bits) !=
           supported_bits.end();
  }

  void validate() const {
    if (on_chip_bytes <= 0 || off_chip_bytes <= 0 || bandwidth_bytes_per_s <= 0 ||
        peak_ops_per_s <= 0 || mac_bits <= 0) {
      throw ConfigError("device profile '" + name + "' needs positive sizes and rates");
    }
    if (supported_bits.empty() ||
        !std::is_sorted(supported_bits.begin(), supported_bits.end()) ||
        std::adjacent_find(supported_bits.begin(), supported_bits.end()) !=
            supported_bits.end()) {
      throw ConfigError("device profile '" + name +
                        "' needs a non-empty ascending supported_bits list");
    }
    for (int b : supported_bits) {
      if (b < 1 || b > kReferenceBits) {
        throw ConfigError("device profile '" + name + "' lists bit-width " +
                          std::to_string(b));
      }
    }
  }
};

struct NetworkProfile {
  double uplink_bits_per_s = 3e6;
  double fixed_rtt_s = 0.0;

  void validate() const {
    if (uplink_bits_per_s <= 0) throw ConfigError("uplink rate must be positive");
    if (fixed_rtt_s < 0) throw ConfigError("fixed_rtt_s must be non-negative");
  }
};

struct DeviceConfig {
  DeviceProfile edge;
  DeviceProfile cloud;
  NetworkProfile network;
};

struct LatencyBreakdown {
  double edge_s = 0;
  double transmit_s = 0;
  double cloud_s = 0;
  double total_s() const { return edge_s + transmit_s + cloud_s; }
};

// ---------------------------------------------------------------------------
// Per-layer model.

struct LayerWorkload {
  double ops = 0;  // one multiply-accumulate counts as two ops
  std::int64_t weight_elements = 0;
  std::int64_t input_elements = 0;
  std::int64_t output_elements = 0;
};

inline LayerWorkload layer_workload(const LayerGraph& g, const LayerNode& n) {
  LayerWorkload w;
  w.weight_elements = n.weight_elements();
  w.output_elements = n.activation_elements();
  for (auto src : n.inputs) w.input_elements += g.node(src).activation_elements();
  const double out = static_cast<double>(w.output_elements);
  switch (n.op) {
    case OpKind::kConv:
    case OpKind::kPointwiseConv: {
      const double per_out = static_cast<double>(w.weight_elements / n.weight_shape[0]);
      w.ops = 2.0 * out * per_out;
      break;
    }
    case OpKind::kDepthwiseConv:
      w.ops = 2.0 * out * static_cast<double>(n.weight_shape[2] * n.weight_shape[3]);
      break;
    case OpKind::kFc:
      w.ops = 2.0 * static_cast<double>(w.weight_elements);
      break;
    case OpKind::kRelu:
      w.ops = out;
      break;
    case OpKind::kAdd:
      w.ops = out * static_cast<double>(n.inputs.size() - 1);
      break;
    case OpKind::kBatchNorm:
      w.ops = 2.0 * out;
      break;
    case OpKind::kGlobalPool:
      w.ops = static_cast<double>(w.input_elements);
      break;
    case OpKind::kConcat:
      w.ops = 0;
      break;
    case OpKind::kInput:
    case OpKind::kOutput:
      // Aliases of their operand: no compute and no data movement.
      return LayerWorkload{0, 0, 0, 0};
  }
  if (n.has_residual()) w.ops += out;
  if (n.fused_relu()) w.ops += out;
  return w;
}

// Roofline-style latency: max(compute, memory). Compute is bit-independent up
// to mac_bits (narrower operands still occupy a full MAC) and scales with
// ceil(bits / mac_bits) above it. The memory term moves the weights and the
// input and output activations at the layer's own bit-widths.
inline double layer_latency(const LayerWorkload& w, const DeviceProfile& d,
                            int weight_bits, int act_bits,
                            bool allow_reference_bits = false) {
  auto check = [&](int b) {
    if (d.supports(b)) return;
    if (allow_reference_bits && b == kReferenceBits) return;
    throw ConfigError("bit-width " + std::to_string(b) + " unsupported by device '" +
                      d.name + "'");
  };
  check(act_bits);
  if (w.weight_elements > 0) check(weight_bits);
  const int widest = w.weight_elements > 0 ? std::max(weight_bits, act_bits) : act_bits;
  const double passes = std::max(1, (widest + d.mac_bits - 1) / d.mac_bits);
  const double compute_s = w.ops * passes / d.peak_ops_per_s;
  const double bits_moved =
      static_cast<double>(w.weight_elements) * weight_bits +
      static_cast<double>(w.input_elements + w.output_elements) * act_bits;
  const double memory_s = bits_moved / 8.0 / d.bandwidth_bytes_per_s;
  return std::max(compute_s, memory_s);
}

inline double layer_latency(const LayerGraph& g, const LayerNode& n, const DeviceProfile& d,
                            int weight_bits, int act_bits,
                            bool allow_reference_bits = false) {
  return layer_latency(layer_workload(g, n), d, weight_bits, act_bits, allow_reference_bits);
}

// ---------------------------------------------------------------------------
// Transmission.

// Bit-width of each crossing tensor: the raw input travels at input_bits,
// everything else at its producer's activation bits (or `override_bits`).
inline std::vector<int> crossing_bits(const LayerGraph& g, const BoundaryCut& cut,
                                      const BitAssignment& bits,
                                      std::optional<int> override_bits = std::nullopt) {
  std::vector<int> out;
  for (auto id : cut.crossing_tensors) {
    if (override_bits) {
      out.push_back(*override_bits);
    } else if (id == g.input_id()) {
      out.push_back(g.input_bits());
    } else {
      auto it = bits.find(id);
      if (it == bits.end()) {
        throw ConfigError("no activation bits for crossing tensor of node " +
                          std::to_string(id));
      }
      out.push_back(it->second.act_bits);
    }
  }
  return out;
}

inline std::int64_t transmitted_bits(const LayerGraph& g, const BoundaryCut& cut,
                                     const std::vector<int>& bits) {
  if (bits.size() != cut.crossing_tensors.size()) {
    throw ConfigError("one bit-width per crossing tensor required");
  }
  std::int64_t total = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    total += g.node(cut.crossing_tensors[i]).activation_elements() * bits[i];
  }
  return total;
}

// Exact packed payload size, in bytes, of each crossing tensor.
inline std::vector<std::int64_t> payload_bytes(const LayerGraph& g, const BoundaryCut& cut,
                                               const std::vector<int>& bits) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const auto e = g.node(cut.crossing_tensors[i]).activation_elements();
    out.push_back((e * bits[i] + 7) / 8);
  }
  return out;
}

inline double transmission_latency(const LayerGraph& g, const BoundaryCut& cut,
                                   const std::vector<int>& bits, const NetworkProfile& net) {
  return static_cast<double>(transmitted_bits(g, cut, bits)) / net.uplink_bits_per_s +
         net.fixed_rtt_s;
}

// ---------------------------------------------------------------------------
// Split-level latency and memory.

struct CostOptions {
  // Edge-only splits still ship the final outputs to the cloud/user.
  bool charge_edge_only_output = true;
  // Transmit at this width instead of the producers' activation bits.
  std::optional<int> transmit_bits;
  // Lets edge layers run at the reference width (float baseline).
  bool allow_reference_bits = false;
};

struct SplitCost {
  LatencyBreakdown breakdown;
  // edge + transmit - cloud latency of the edge layers; same argmin over
  // splits as total_s because the dropped terms are constant.
  double relative_objective = 0;
};

inline SplitCost split_latency(const LayerGraph& g, const ExecutionPlan& plan,
                               std::size_t n, const BitAssignment& bits,
                               const DeviceConfig& devices, const CostOptions& opts = {}) {
  if (n > plan.layer_count()) {
    throw GraphError("split index " + std::to_string(n) + " out of range");
  }
  SplitCost cost;
  double cloud_of_edge_layers = 0;
  for (std::size_t p = 1; p <= plan.layer_count(); ++p) {
    const auto& node = g.node(plan.at(p));
    const auto w = layer_workload(g, node);
    const double cloud =
        layer_latency(w, devices.cloud, kReferenceBits, kReferenceBits, true);
    if (p <= n) {
      auto it = bits.find(node.id);
      if (it == bits.end()) {
        throw ConfigError("missing bit assignment for edge layer " + node.label());
      }
      cost.breakdown.edge_s +=
          layer_latency(w, devices.edge, it->second.weight_bits,
                                              it->second.act_bits, opts.allow_reference_bits);
      cloud_of_edge_layers += cloud;
    } else {
      cost.breakdown.cloud_s += cloud;
    }
  }
  const auto cut = boundary_cut(plan, n);
  if (n == plan.layer_count() && !opts.charge_edge_only_output) {
    cost.breakdown.transmit_s = 0;
  } else {
    cost.breakdown.transmit_s = transmission_latency(
        g, cut, crossing_bits(g, cut, bits, opts.transmit_bits), devices.network);
  }
  cost.relative_objective =
      cost.breakdown.edge_s + cost.breakdown.transmit_s - cloud_of_edge_layers;
  return cost;
}

// M^w in bits: sum over edge layers of s^w * b^w.
inline std::int64_t weight_memory_bits(const LayerGraph& g, const ExecutionPlan& plan,
                                       std::size_t n, const BitAssignment& bits) {
  std::int64_t total = 0;
  for (std::size_t p = 1; p <= n; ++p) {
    const auto& node = g.node(plan.at(p));
    if (node.weight_elements() == 0) continue;
    total += node.weight_elements() * bits.at(node.id).weight_bits;
  }
  return total;
}

// Bit-weighted working set at each step 1..n.
inline std::vector<std::int64_t> working_set_bits(const LayerGraph& g,
                                                  const ExecutionPlan& plan, std::size_t n,
                                                  const BitAssignment& bits) {
  std::vector<std::int64_t> per_step;
  auto tensor_bits = [&](std::size_t p) -> std::int64_t {
    const auto id = plan.at(p);
    const int b = id == g.input_id() ? g.input_bits() : bits.at(id).act_bits;
    return plan.elements(p) * b;
  };
  for (std::size_t k = 1; k <= n; ++k) {
    std::int64_t total = 0;
    for (std::size_t p = 0; p <= k; ++p) {
      if (p == k || plan.last_use(p) >= static_cast<std::int64_t>(k)) total += tensor_bits(p);
    }
    per_step.push_back(total);
  }
  return per_step;
}

// M^a in bits: largest bit-weighted working set over steps 1..n.
inline std::int64_t activation_memory_bits(const LayerGraph& g, const ExecutionPlan& plan,
                                           std::size_t n, const BitAssignment& bits) {
  const auto steps = working_set_bits(g, plan, n, bits);
  return steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());
}

inline double weight_memory(const LayerGraph& g, const ExecutionPlan& plan, std::size_t n,
                            const BitAssignment& bits) {
  return static_cast<double>(weight_memory_bits(g, plan, n, bits)) / 8.0;
}

inline double activation_memory(const LayerGraph& g, const ExecutionPlan& plan,
                                std::size_t n, const BitAssignment& bits) {
  return static_cast<double>(activation_memory_bits(g, plan, n, bits)) / 8.0;
}

// ---------------------------------------------------------------------------
// Profile JSON.

inline DeviceProfile parse_device_profile(const nlohmann::json& j) {
  try {
    DeviceProfile d;
    d.name = j.value("name", "device");
    d.on_chip_bytes = j.at("on_chip_bytes").get<std::int64_t>();
    d.off_chip_bytes = j.at("off_chip_bytes").get<std::int64_t>();
    d.bandwidth_bytes_per_s = j.at("bandwidth_bytes_per_s").get<double>();
    d.peak_ops_per_s = j.at("peak_ops_per_s").get<double>();
    d.mac_bits = j.value("mac_bits", 8);
    d.supported_bits = j.at("supported_bits").get<std::vector<int>>();
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("device profile: ") + e.what());
  }
}

inline nlohmann::json device_profile_to_json(const DeviceProfile& d) {
  return {{"name", d.name},
          {"on_chip_bytes", d.on_chip_bytes},
          {"off_chip_bytes", d.off_chip_bytes},
          {"bandwidth_bytes_per_s", d.bandwidth_bytes_per_s},
          {"peak_ops_per_s", d.peak_ops_per_s},
          {"mac_bits", d.mac_bits},
          {"supported_bits", d.supported_bits}};
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  try {
    nlohmann::json j;
    f >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("parse error in " + path.string() + ": " + e.what());
  }
}

inline DeviceProfile load_device_profile(const std::filesystem::path& path) {
  return parse_device_profile(read_json_file(path));
}

// {"edge": {...} | "file.json", "cloud": {...} | "file.json",
//  "network": {"uplink_bps": 3000000, "fixed_rtt_s": 0}}
inline DeviceConfig parse_device_config(const nlohmann::json& j,
                                        const std::filesystem::path& base_dir = {}) {
  try {
    auto device = [&](const char* key) {
      const auto& v = j.at(key);
      if (v.is_string()) return load_device_profile(base_dir / v.get<std::string>());
      return parse_device_profile(v);
    };
    DeviceConfig cfg;
    cfg.edge = device("edge");
    cfg.cloud = device("cloud");
    if (j.contains("network")) {
      const auto& n = j.at("network");
      cfg.network.uplink_bits_per_s = n.at("uplink_bps").get<double>();
      cfg.network.fixed_rtt_s = n.value("fixed_rtt_s", 0.0);
    }
    cfg.network.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("device config: ") + e.what());
  }
}

inline DeviceConfig load_device_config(const std::filesystem::path& path) {
  return parse_device_config(read_json_file(path), path.parent_path());
}

// Hardware platforms of the reference simulator setup: an Eyeriss-class edge
// accelerator and a TPU-class cloud accelerator over a 3 Mbps uplink.
inline DeviceProfile eyeriss_profile() {
  DeviceProfile d;
  d.name = "eyeriss";
  d.on_chip_bytes = 192 * 1024;
  d.off_chip_bytes = 4LL * 1024 * 1024 * 1024;
  d.bandwidth_bytes_per_s = 1e9;
  d.peak_ops_per_s = 34e9;
  d.mac_bits = 8;
  d.supported_bits = {2, 4, 8};
  return d;
}

inline DeviceProfile tpu_profile() {
  DeviceProfile d;
  d.name = "tpu";
  d.on_chip_bytes = 28LL * 1024 * 1024;
  d.off_chip_bytes = 16LL * 1024 * 1024 * 1024;
  d.bandwidth_bytes_per_s = 13e9;
  d.peak_ops_per_s = 96e12;
  d.mac_bits = 8;
  d.supported_bits = {8, 16};
  return d;
}

inline DeviceConfig reference_device_config() {
  return {eyeriss_profile(), tpu_profile(), NetworkProfile{3e6, 0.0}};
}

}  // namespace edgesplit
