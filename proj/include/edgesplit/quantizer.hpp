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
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "edgesplit/error.hpp"
#include "edgesplit/graph.hpp"
#include "edgesplit/parallel.hpp"
#include "edgesplit/tensor.hpp"

namespace edgesplit {

// Reference precision of the original model. Distortion at this width is
// zero by definition.
inline constexpr int kReferenceBits = 16;

// Uniform affine quantizer: q = clamp(round(x / scale + zero_point), 0,
// 2^bits - 1), x' = (q - zero_point) * scale.
//
// Symmetric params place the grid symmetrically around zero (zero_point is
// (2^bits - 1) / 2, a half-integer), so a 1-bit grid is {-scale/2, +scale/2}.
// Asymmetric params use an integer zero_point so that 0 is exact.
//
// scale and zero_point are always float32-representable, which is what goes
// on the wire; reconstruction on either side of a split is therefore
// bit-identical.
struct QuantParams {
  int bits = 8;
  double scale = 1.0;
  double zero_point = 0.0;
  bool symmetric = false;

  std::int64_t max_code() const { return (std::int64_t{1} << bits) - 1; }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline std::int32_t quantize_value(float x, const QuantParams& p) {
  const double q = std::round(static_cast<double>(x) / p.scale + p.zero_point);
  return static_cast<std::int32_t>(
      std::clamp(q, 0.0, static_cast<double>(p.max_code())));
}

inline float dequantize_value(std::int32_t q, const QuantParams& p) {
  return static_cast<float>((static_cast<double>(q) - p.zero_point) * p.scale);
}

inline double mse(std::span<const float> a, std::span<const float> b) {
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double quantization_mse(std::span<const float> x, const QuantParams& p) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) {
    const double d =
        static_cast<double>(v) - static_cast<double>(dequantize_value(quantize_value(v, p), p));
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

namespace detail {

inline double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline QuantParams params_for_range(double lo, double hi, int bits, bool symmetric) {
  QuantParams p;
  p.bits = bits;
  p.symmetric = symmetric;
  const double levels = static_cast<double>(p.max_code());
  if (symmetric) {
    const double m = std::max(std::abs(lo), std::abs(hi));
    p.scale = m > 0 ? snap_f32(2.0 * m / levels) : 1.0;
    p.zero_point = m > 0 ? levels / 2.0 : 0.0;
  } else {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
    if (hi - lo <= 0) {
      p.scale = 1.0;
      p.zero_point = 0.0;
    } else {
      p.scale = snap_f32((hi - lo) / levels);
      if (p.scale <= 0) p.scale = snap_f32(std::numeric_limits<float>::min());
      p.zero_point = std::clamp(std::round(-lo / p.scale), 0.0, levels);
    }
  }
  return p;
}

}  // namespace detail

// Clip candidates are alpha * range for alpha in 1.00, 0.95, ..., 0.50; the
// one with the lowest reconstruction MSE wins, ties going to the larger alpha.
inline QuantParams choose_clip_range(std::span<const float> x, int bits,
                                     bool symmetric) {
  if (bits < 1 || bits > kReferenceBits) {
    throw ConfigError("bit-width " + std::to_string(bits) + " outside [1,16]");
  }
  if (x.empty()) throw ConfigError("cannot choose a clip range for an empty tensor");
  double lo = 0.0, hi = 0.0;
  for (float v : x) {
    if (!std::isfinite(v)) throw ConfigError("non-finite value in tensor");
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  if (lo == 0.0 && hi == 0.0) {
    return QuantParams{bits, 1.0, 0.0, symmetric};
  }
  QuantParams best;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 10; ++k) {
    const double alpha = 1.0 - 0.05 * k;
    const auto p = detail::params_for_range(alpha * lo, alpha * hi, bits, symmetric);
    const double e = quantization_mse(x, p);
    if (e < best_mse) {
      best_mse = e;
      best = p;
    }
  }
  return best;
}

struct QuantizedTensor {
  std::vector<std::int32_t> codes;
  Tensor dequantized;
};

inline QuantizedTensor quantize_tensor(const Tensor& x, const QuantParams& p) {
  QuantizedTensor out;
  out.codes.resize(x.data.size());
  out.dequantized = Tensor(x.dims);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    out.codes[i] = quantize_value(x.data[i], p);
    out.dequantized.data[i] = dequantize_value(out.codes[i], p);
  }
  return out;
}

inline Tensor dequantize_tensor(const Dims& dims, std::span<const std::int32_t> codes,
                                const QuantParams& p) {
  Tensor out(dims);
  for (std::size_t i = 0; i < codes.size(); ++i) out.data[i] = dequantize_value(codes[i], p);
  return out;
}

// ---------------------------------------------------------------------------
// Distortion tables.

// Per-layer activation samples keyed by producer id, one tensor per
// calibration input.
using ActivationSamples = std::map<NodeId, std::vector<Tensor>>;

enum class TensorKind { kWeight, kActivation };

class DistortionTable {
 public:
  struct Row {
    std::int64_t elements = 0;
    std::vector<double> mse;             // one per bit-width
    std::vector<std::int64_t> rate_bits;  // elements * bits
  };

  DistortionTable() = default;
  DistortionTable(TensorKind kind, std::vector<int> bits)
      : kind_(kind), bits_(std::move(bits)) {
    if (bits_.empty()) throw ConfigError("empty bit-width set");
    if (!std::is_sorted(bits_.begin(), bits_.end()) ||
        std::adjacent_find(bits_.begin(), bits_.end()) != bits_.end()) {
      throw ConfigError("bit-width set must be strictly ascending");
    }
  }

  // Installs a row and enforces the monotonicity invariant: distortion is
  // non-increasing in bits and zero at the reference width.
  void set_row(NodeId layer, std::int64_t elements, std::vector<double> mse) {
    if (mse.size() != bits_.size()) throw ConfigError("row width mismatch");
    Row row;
    row.elements = elements;
    for (std::size_t j = 0; j < bits_.size(); ++j) {
      double d = std::max(0.0, mse[j]);
      if (bits_[j] >= kReferenceBits) d = 0.0;
      if (j > 0) d = std::min(d, row.mse.back());
      row.mse.push_back(d);
      row.rate_bits.push_back(elements * bits_[j]);
    }
    rows_[layer] = std::move(row);
  }

  TensorKind kind() const { return kind_; }
  const std::vector<int>& bits() const { return bits_; }
  const std::map<NodeId, Row>& rows() const { return rows_; }
  bool has(NodeId layer) const { return rows_.count(layer) != 0; }
  const Row& row(NodeId layer) const {
    auto it = rows_.find(layer);
    if (it == rows_.end()) {
      throw ConfigError("distortion table has no row for layer " + std::to_string(layer));
    }
    return it->second;
  }
  std::size_t bit_index(int b) const {
    auto it = std::find(bits_.begin(), bits_.end(), b);
    if (it == bits_.end()) throw ConfigError("bit-width " + std::to_string(b) + " not in table");
    return static_cast<std::size_t>(it - bits_.begin());
  }
  double distortion(NodeId layer, int b) const { return row(layer).mse[bit_index(b)]; }
  std::int64_t rate(NodeId layer, int b) const { return row(layer).rate_bits[bit_index(b)]; }

  // Columns: layer_id,bits,kind,mse,rate_bits.
  void write_csv(std::ostream& os, bool header = true) const {
    if (header) os << "layer_id,bits,kind,mse,rate_bits\n";
    const char k = kind_ == TensorKind::kWeight ? 'w' : 'a';
    for (const auto& [id, row] : rows_) {
      for (std::size_t j = 0; j < bits_.size(); ++j) {
        std::ostringstream v;
        v << std::setprecision(17) << row.mse[j];
        os << id << ',' << bits_[j] << ',' << k << ',' << v.str() << ','
           << row.rate_bits[j] << '\n';
      }
    }
  }

 private:
  TensorKind kind_ = TensorKind::kWeight;
  std::vector<int> bits_;
  std::map<NodeId, Row> rows_;
};

// D^w_i(b): MSE between the reference weights and their symmetric b-bit
// reconstruction, for every layer other than the input.
inline DistortionTable weight_distortion_table(const LayerGraph& g,
                                               const std::vector<int>& bits) {
  DistortionTable table(TensorKind::kWeight, bits);
  std::vector<const LayerNode*> layers;
  for (const auto& n : g.nodes()) {
    if (n.op == OpKind::kInput) continue;
    if (n.weight_elements() > 0 && !n.weights) {
      throw ConfigError(n.label() + ": missing weights blob");
    }
    layers.push_back(&n);
  }
  std::vector<std::vector<double>> cells(layers.size());
  parallel_for(layers.size(), [&](std::size_t i) {
    const auto* n = layers[i];
    cells[i].assign(bits.size(), 0.0);
    if (n->weight_elements() == 0) return;
    for (std::size_t j = 0; j < bits.size(); ++j) {
      if (bits[j] >= kReferenceBits) continue;
      const auto p = choose_clip_range(n->weights->data, bits[j], true);
      cells[i][j] = quantization_mse(n->weights->data, p);
    }
  });
  for (std::size_t i = 0; i < layers.size(); ++i) {
    table.set_row(layers[i]->id, layers[i]->weight_elements(), std::move(cells[i]));
  }
  return table;
}

// D^a_i(b): MSE of fake-quantizing each layer's own float output sample
// (asymmetric, clip-searched), averaged over the calibration inputs. Errors
// are not propagated downstream.
inline DistortionTable activation_distortion_table(const LayerGraph& g,
                                                   const ActivationSamples& calib,
                                                   const std::vector<int>& bits) {
  if (calib.empty()) throw ConfigError("empty calibration set");
  DistortionTable table(TensorKind::kActivation, bits);
  std::vector<const LayerNode*> layers;
  for (const auto& n : g.nodes()) {
    if (n.op == OpKind::kInput) continue;
    auto it = calib.find(n.id);
    if (it == calib.end() || it->second.empty()) {
      throw ConfigError(n.label() + ": no calibration samples");
    }
    layers.push_back(&n);
  }
  std::vector<std::vector<double>> cells(layers.size());
  parallel_for(layers.size(), [&](std::size_t i) {
    const auto& samples = calib.at(layers[i]->id);
    cells[i].assign(bits.size(), 0.0);
    for (std::size_t j = 0; j < bits.size(); ++j) {
      if (bits[j] >= kReferenceBits) continue;
      double acc = 0.0;
      for (const auto& s : samples) {
        const auto p = choose_clip_range(s.data, bits[j], false);
        acc += quantization_mse(s.data, p);
      }
      cells[i][j] = acc / static_cast<double>(samples.size());
    }
  });
  for (std::size_t i = 0; i < layers.size(); ++i) {
    table.set_row(layers[i]->id, layers[i]->activation_elements(), std::move(cells[i]));
  }
  return table;
}

}  // namespace edgesplit
