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

// Brute-force reference implementations used by the unit and acceptance
// tests. They work from raw node inputs and nested loops and share no code
// with the library beyond the graph and tensor containers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "edgesplit/graph.hpp"
#include "edgesplit/tensor.hpp"

namespace oracle {

using edgesplit::Dims;
using edgesplit::LayerGraph;
using edgesplit::LayerNode;
using edgesplit::NodeId;
using edgesplit::OpKind;
using edgesplit::Tensor;

inline std::map<NodeId, std::size_t> positions(const std::vector<NodeId>& order) {
  std::map<NodeId, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  return pos;
}

inline std::set<NodeId> outputs(const LayerGraph& g) {
  std::set<NodeId> marked, consumed;
  for (const auto& n : g.nodes()) {
    if (n.op == OpKind::kOutput) marked.insert(n.id);
    for (auto s : n.inputs) consumed.insert(s);
  }
  if (!marked.empty()) return marked;
  std::set<NodeId> sinks;
  for (const auto& n : g.nodes()) {
    if (!consumed.count(n.id)) sinks.insert(n.id);
  }
  return sinks;
}

inline std::vector<NodeId> consumers(const LayerGraph& g, NodeId id) {
  std::vector<NodeId> out;
  for (const auto& n : g.nodes()) {
    if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end()) out.push_back(n.id);
  }
  return out;
}

// Whether the tensor of `id` is still needed at or after step `k`.
inline bool needed_from(const LayerGraph& g, const std::map<NodeId, std::size_t>& pos, NodeId id,
                        std::size_t k) {
  if (outputs(g).count(id)) return true;
  for (auto c : consumers(g, id)) {
    if (pos.at(c) >= k) return true;
  }
  return false;
}

// Live tensors at step k (1-based position in order).
inline std::set<NodeId> live_at(const LayerGraph& g, const std::vector<NodeId>& order,
                                std::size_t k) {
  const auto pos = positions(order);
  std::set<NodeId> live;
  for (const auto& n : g.nodes()) {
    const auto p = pos.at(n.id);
    if (p > k) continue;
    if (p == k || needed_from(g, pos, n.id, k)) live.insert(n.id);
  }
  return live;
}

inline std::int64_t working_set_elements(const LayerGraph& g, const std::vector<NodeId>& order,
                                         std::size_t k) {
  std::int64_t total = 0;
  for (auto id : live_at(g, order, k)) total += edgesplit::volume(g.node(id).out_shape);
  return total;
}

inline std::set<NodeId> cut(const LayerGraph& g, const std::vector<NodeId>& order,
                            std::size_t n) {
  const auto pos = positions(order);
  std::set<NodeId> out;
  for (const auto& node : g.nodes()) {
    if (pos.at(node.id) > n) continue;
    if (needed_from(g, pos, node.id, n + 1)) out.insert(node.id);
  }
  return out;
}

// M^w + M^a in bits with explicit per-node bits; the input node uses in_bits.
inline std::int64_t weight_bits(const LayerGraph& g, const std::vector<NodeId>& order,
                                std::size_t n, const std::map<NodeId, int>& wbits) {
  std::int64_t total = 0;
  for (std::size_t p = 1; p <= n; ++p) {
    const auto& node = g.node(order[p]);
    if (node.weight_shape.empty()) continue;
    total += edgesplit::volume(node.weight_shape) * wbits.at(node.id);
  }
  return total;
}

inline std::int64_t activation_bits(const LayerGraph& g, const std::vector<NodeId>& order,
                                    std::size_t n, const std::map<NodeId, int>& abits,
                                    int in_bits) {
  std::int64_t peak = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    std::int64_t total = 0;
    for (auto id : live_at(g, order, k)) {
      const int b = g.node(id).op == OpKind::kInput ? in_bits : abits.at(id);
      total += edgesplit::volume(g.node(id).out_shape) * b;
    }
    peak = std::max(peak, total);
  }
  return peak;
}

// ---------------------------------------------------------------------------
// Bit allocation.

struct RdRow {
  std::vector<std::int64_t> rate;
  std::vector<double> dist;
};

struct Exhaustive {
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_rate = 0;
  std::vector<std::size_t> choice;
  bool feasible = false;
  bool on_hull = false;
};

// Full enumeration of per-layer choices under a rate budget; also decides
// whether the optimum is a supported point of the lower convex hull of all
// achievable (rate, distortion) pairs.
inline Exhaustive exhaustive_allocation(const std::vector<RdRow>& rows, std::int64_t budget) {
  const std::size_t L = rows.size();
  std::vector<std::pair<std::int64_t, double>> points;
  std::vector<std::size_t> idx(L, 0);
  Exhaustive ex;
  for (;;) {
    std::int64_t r = 0;
    double d = 0;
    for (std::size_t i = 0; i < L; ++i) {
      r += rows[i].rate[idx[i]];
      d += rows[i].dist[idx[i]];
    }
    points.emplace_back(r, d);
    if (r <= budget && (d < ex.best || (d == ex.best && r < ex.best_rate))) {
      ex.best = d;
      ex.best_rate = r;
      ex.choice = idx;
      ex.feasible = true;
    }
    std::size_t i = 0;
    while (i < L && ++idx[i] == rows[i].rate.size()) idx[i++] = 0;
    if (i == L) break;
  }
  if (!ex.feasible) return ex;
  double lo = 0, hi = std::numeric_limits<double>::infinity();
  bool ok = true;
  for (const auto& [r, d] : points) {
    if (r > ex.best_rate) {
      lo = std::max(lo, (ex.best - d) / static_cast<double>(r - ex.best_rate));
    } else if (r < ex.best_rate) {
      hi = std::min(hi, (d - ex.best) / static_cast<double>(ex.best_rate - r));
    } else if (d < ex.best) {
      ok = false;
    }
  }
  ex.on_hull = ok && lo <= hi * (1 + 1e-9) + 1e-300;
  return ex;
}

// ---------------------------------------------------------------------------
// Scalar operator references.

inline float at3(const Tensor& t, std::int64_t c, std::int64_t h, std::int64_t w) {
  return t.data[static_cast<std::size_t>((c * t.dims[1] + h) * t.dims[2] + w)];
}

// Direct convolution, double accumulation; groups = C for depthwise.
inline Tensor conv(const Tensor& x, const Tensor& w, const std::vector<float>* bias,
                   std::int64_t stride, std::int64_t pad, bool depthwise) {
  const auto C = x.dims[0], H = x.dims[1], W = x.dims[2];
  const auto OC = w.dims[0], KH = w.dims[2], KW = w.dims[3];
  const auto OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor y(Dims{OC, OH, OW});
  for (std::int64_t o = 0; o < OC; ++o) {
    for (std::int64_t i = 0; i < OH; ++i) {
      for (std::int64_t j = 0; j < OW; ++j) {
        double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
        const std::int64_t c0 = depthwise ? o : 0, c1 = depthwise ? o + 1 : C;
        for (std::int64_t c = c0; c < c1; ++c) {
          for (std::int64_t a = 0; a < KH; ++a) {
            for (std::int64_t b = 0; b < KW; ++b) {
              const auto hi = i * stride - pad + a, wj = j * stride - pad + b;
              if (hi < 0 || hi >= H || wj < 0 || wj >= W) continue;
              const auto wc = depthwise ? 0 : c;
              acc += static_cast<double>(at3(x, c, hi, wj)) *
                     w.data[static_cast<std::size_t>(((o * w.dims[1] + wc) * KH + a) * KW + b)];
            }
          }
        }
        y.data[static_cast<std::size_t>((o * OH + i) * OW + j)] = static_cast<float>(acc);
      }
    }
  }
  return y;
}

inline std::vector<float> fc(const std::vector<float>& x, const Tensor& w,
                             const std::vector<float>* bias) {
  std::vector<float> y(static_cast<std::size_t>(w.dims[0]));
  for (std::int64_t o = 0; o < w.dims[0]; ++o) {
    double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
    for (std::int64_t k = 0; k < w.dims[1]; ++k) {
      acc += static_cast<double>(x[static_cast<std::size_t>(k)]) *
             w.data[static_cast<std::size_t>(o * w.dims[1] + k)];
    }
    y[static_cast<std::size_t>(o)] = static_cast<float>(acc);
  }
  return y;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

inline double max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double scale = 0;
  for (float v : a) scale = std::max(scale, std::abs(static_cast<double>(v)));
  return max_abs_diff(a, b) / std::max(scale, 1e-30);
}

// Realistic synthetic distortion rows: d(b) ~ sigma^2 * 2^-2b with jitter,
// rate = elements * b.
inline RdRow random_rd_row(std::mt19937_64& rng, const std::vector<int>& bits) {
  std::uniform_int_distribution<std::int64_t> elems(8, 4096);
  std::lognormal_distribution<double> sigma(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(0.5, 2.0);
  RdRow row;
  const auto s = elems(rng);
  const double var = sigma(rng);
  for (int b : bits) {
    row.rate.push_back(s * b);
    double d = var * std::pow(2.0, -2.0 * b) * jitter(rng);
    if (!row.dist.empty()) d = std::min(d, row.dist.back());
    row.dist.push_back(d);
  }
  return row;
}

}  // namespace oracle
