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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "edgesplit/executor.hpp"
#include "edgesplit/models.hpp"
#include "edgesplit/quantizer.hpp"

using namespace edgesplit;

namespace {

// Independent affine fake-quantizer on the same grid definition.
double oracle_mse(const std::vector<float>& x, double lo, double hi, int bits, bool symmetric) {
  const double levels = std::pow(2.0, bits) - 1;
  double scale, zp;
  if (symmetric) {
    const double m = std::max(std::abs(lo), std::abs(hi));
    scale = static_cast<float>(2 * m / levels);
    zp = levels / 2;
  } else {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
    scale = static_cast<float>((hi - lo) / levels);
    zp = std::min(levels, std::max(0.0, std::round(-lo / scale)));
  }
  double acc = 0;
  for (float v : x) {
    double q = std::round(v / scale + zp);
    q = std::min(levels, std::max(0.0, q));
    const double r = static_cast<float>((q - zp) * scale);
    acc += (v - r) * (v - r);
  }
  return acc / static_cast<double>(x.size());
}

std::vector<float> gaussian(std::uint64_t seed, std::size_t n, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, static_cast<float>(sigma));
  std::vector<float> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

}  // namespace

TEST(Quantizer, AffineFormula) {
  const QuantParams p{4, 0.5, 3.0, false};
  EXPECT_EQ(quantize_value(0.0f, p), 3);
  EXPECT_EQ(quantize_value(1.0f, p), 5);
  EXPECT_EQ(quantize_value(-1.5f, p), 0);
  EXPECT_EQ(quantize_value(-100.0f, p), 0);
  EXPECT_EQ(quantize_value(100.0f, p), 15);
  EXPECT_FLOAT_EQ(dequantize_value(5, p), 1.0f);
  EXPECT_FLOAT_EQ(dequantize_value(15, p), 6.0f);
}

TEST(Quantizer, OneBitSymmetricGrid) {
  const std::vector<float> x = {-1.0f, -0.25f, 0.3f, 1.0f};
  const auto p = choose_clip_range(x, 1, true);
  EXPECT_DOUBLE_EQ(p.zero_point, 0.5);
  const float lo = dequantize_value(0, p), hi = dequantize_value(1, p);
  EXPECT_FLOAT_EQ(lo, -hi);
  EXPECT_GT(hi, 0.0f);
  for (float v : x) {
    const float r = dequantize_value(quantize_value(v, p), p);
    EXPECT_EQ(r, v < 0 ? lo : hi);
  }
}

TEST(Quantizer, AsymmetricRepresentsZeroExactly) {
  const auto x = gaussian(3, 500);
  for (int b : {2, 4, 8}) {
    const auto p = choose_clip_range(x, b, false);
    EXPECT_EQ(dequantize_value(quantize_value(0.0f, p), p), 0.0f) << b;
    EXPECT_EQ(p.zero_point, std::round(p.zero_point));
  }
}

TEST(Quantizer, ParamsAreFloat32Representable) {
  const auto x = gaussian(4, 300, 0.37);
  for (int b : {1, 2, 4, 8}) {
    for (bool sym : {false, true}) {
      const auto p = choose_clip_range(x, b, sym);
      EXPECT_EQ(p.scale, static_cast<double>(static_cast<float>(p.scale)));
      EXPECT_EQ(p.zero_point, static_cast<double>(static_cast<float>(p.zero_point)));
    }
  }
}

TEST(Quantizer, ClipSearchMatchesOracleGrid) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = gaussian(seed, 256, 0.1 + 0.3 * static_cast<double>(seed));
    x[seed % x.size()] *= 8.0f;  // an outlier makes clipping worthwhile
    for (int b : {2, 4, 8}) {
      for (bool sym : {false, true}) {
        double lo = 0, hi = 0;
        for (float v : x) lo = std::min<double>(lo, v), hi = std::max<double>(hi, v);
        double best = INFINITY;
        for (int k = 0; k <= 10; ++k) {
          const double a = 1.0 - 0.05 * k;
          best = std::min(best, oracle_mse(x, a * lo, a * hi, b, sym));
        }
        const auto p = choose_clip_range(x, b, sym);
        EXPECT_NEAR(quantization_mse(x, p), best, 1e-12 * std::max(1.0, best))
            << "seed " << seed << " bits " << b << " sym " << sym;
      }
    }
  }
}

TEST(Quantizer, ClipSearchBeatsFullRange) {
  auto x = gaussian(7, 1000);
  x[0] = 40.0f;
  const auto p = choose_clip_range(x, 4, true);
  double lo = 0, hi = 0;
  for (float v : x) lo = std::min<double>(lo, v), hi = std::max<double>(hi, v);
  EXPECT_LT(quantization_mse(x, p), oracle_mse(x, lo, hi, 4, true));
}

TEST(Quantizer, AllZeroTensorIsLossless) {
  const std::vector<float> x(16, 0.0f);
  const auto p = choose_clip_range(x, 2, false);
  EXPECT_EQ(quantization_mse(x, p), 0.0);
}

TEST(Quantizer, RejectsBadInput) {
  const std::vector<float> x = {1.0f};
  EXPECT_THROW(choose_clip_range(x, 0, true), ConfigError);
  EXPECT_THROW(choose_clip_range(x, 17, true), ConfigError);
  EXPECT_THROW(choose_clip_range({}, 4, true), ConfigError);
  const std::vector<float> bad = {1.0f, std::nanf("")};
  EXPECT_THROW(choose_clip_range(bad, 4, true), ConfigError);
  EXPECT_THROW(DistortionTable(TensorKind::kWeight, {4, 2}), ConfigError);
  EXPECT_THROW(DistortionTable(TensorKind::kWeight, {}), ConfigError);
}

TEST(DistortionTables, MonotoneInBitsWithZeroReference) {
  const std::vector<int> bits = {1, 2, 4, 8, 16};
  std::size_t violations = 0, rows = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto g = optimize_graph(init_missing_weights(inverted_residual_block(), seed)).graph;
    std::mt19937_64 rng(seed);
    std::vector<Tensor> inputs;
    const auto& shape = g.node(g.input_id()).out_shape;
    std::uniform_int_distribution<std::int32_t> code(0, 255);
    for (int k = 0; k < 4; ++k) {
      std::vector<std::int32_t> c(static_cast<std::size_t>(volume(shape)));
      for (auto& v : c) v = code(rng);
      inputs.push_back(raw_input(shape, c, 8));
    }
    const auto wt = weight_distortion_table(g, bits);
    const auto at = activation_distortion_table(g, calibrate_activations(g, inputs, 4), bits);
    for (const auto* t : {&wt, &at}) {
      for (const auto& [id, row] : t->rows()) {
        ++rows;
        for (std::size_t j = 1; j < row.mse.size(); ++j) violations += row.mse[j] > row.mse[j - 1];
        EXPECT_EQ(row.mse.back(), 0.0);
        for (std::size_t j = 0; j < bits.size(); ++j) {
          EXPECT_EQ(row.rate_bits[j], row.elements * bits[j]);
        }
      }
    }
  }
  EXPECT_GT(rows, 0u);
  EXPECT_EQ(violations, 0u);
}

TEST(DistortionTables, WeightlessLayersHaveZeroWeightDistortion) {
  GraphBuilder b;
  auto x = b.input({2, 4, 4});
  auto c = b.conv(x, 2, 3, 1, 1, "conv");
  auto s = b.add({c, x}, "sum");
  b.output(s);
  const auto g = init_missing_weights(b.build(), 1);
  const auto wt = weight_distortion_table(g, {2, 4, 8});
  for (double d : wt.row(s).mse) EXPECT_EQ(d, 0.0);
  EXPECT_GT(wt.row(c).mse.front(), 0.0);
}

TEST(DistortionTables, SetRowClampsToMonotone) {
  DistortionTable t(TensorKind::kActivation, {2, 4, 8});
  t.set_row(1, 10, {0.5, 0.7, -1.0});
  EXPECT_EQ(t.row(1).mse, (std::vector<double>{0.5, 0.5, 0.0}));
  EXPECT_THROW(t.row(2), ConfigError);
  EXPECT_THROW(t.distortion(1, 3), ConfigError);
}

TEST(DistortionTables, MissingWeightsOrSamplesAreErrors) {
  const auto g = inverted_residual_block();
  EXPECT_THROW(weight_distortion_table(g, {2, 4}), ConfigError);
  EXPECT_THROW(activation_distortion_table(g, {}, {2, 4}), ConfigError);
}
