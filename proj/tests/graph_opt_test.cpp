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

#include <random>

#include "edgesplit/executor.hpp"
#include "edgesplit/graph_opt.hpp"
#include "edgesplit/models.hpp"
#include "oracles.hpp"

using namespace edgesplit;

namespace {

Tensor random_input(const LayerGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> code(0, 255);
  const auto& shape = g.node(g.input_id()).out_shape;
  std::vector<std::int32_t> codes(static_cast<std::size_t>(volume(shape)));
  for (auto& c : codes) c = code(rng);
  return raw_input(shape, codes, 8);
}

std::size_t count_op(const LayerGraph& g, OpKind op) {
  std::size_t k = 0;
  for (const auto& n : g.nodes()) k += n.op == op;
  return k;
}

}  // namespace

TEST(GraphOpt, InvertedResidualFusesToEightNodes) {
  const auto raw = init_missing_weights(inverted_residual_block(), 5);
  const auto opt = optimize_graph(raw);
  EXPECT_TRUE(opt.warnings.empty());
  EXPECT_EQ(opt.graph.size(), 8u);
  EXPECT_EQ(count_op(opt.graph, OpKind::kBatchNorm), 0u);
  EXPECT_EQ(count_op(opt.graph, OpKind::kRelu), 0u);
  EXPECT_EQ(count_op(opt.graph, OpKind::kAdd), 0u);
  std::size_t residual = 0, relu = 0;
  for (const auto& n : opt.graph.nodes()) {
    residual += n.has_residual();
    relu += n.fused_relu();
  }
  EXPECT_EQ(residual, 1u);
  EXPECT_EQ(relu, 3u);
}

TEST(GraphOpt, BatchNormFoldingPreservesOutputs) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto raw = init_missing_weights(inverted_residual_block(6, 3, 6, 5), seed);
    const auto opt = optimize_graph(raw);
    for (std::uint64_t k = 0; k < 4; ++k) {
      const auto x = random_input(raw, 100 * seed + k);
      const auto a = run_inference(raw, x).at(0);
      const auto b = run_inference(opt.graph, x).at(0);
      EXPECT_LT(oracle::max_rel_diff(a.data, b.data), 1e-5);
    }
  }
}

TEST(GraphOpt, BatchNormAfterReluStaysWithWarning) {
  GraphBuilder b;
  auto x = b.input({2, 4, 4});
  auto c = b.conv(x, 3, 3, 1, 1, "conv", true);
  auto bn = b.batchnorm(c, "bn");
  b.output(bn);
  const auto raw = init_missing_weights(b.build(), 1);
  const auto opt = optimize_graph(raw);
  EXPECT_EQ(count_op(opt.graph, OpKind::kBatchNorm), 1u);
  ASSERT_EQ(opt.warnings.size(), 1u);
  EXPECT_NE(opt.warnings[0].find("left unfused"), std::string::npos);
  const auto xin = random_input(raw, 9);
  EXPECT_EQ(run_inference(raw, xin), run_inference(opt.graph, xin));
}

TEST(GraphOpt, BatchNormWithSharedProducerIsNotFolded) {
  GraphBuilder b;
  auto x = b.input({2, 4, 4});
  auto c = b.conv(x, 2, 3, 1, 1, "conv");
  auto bn = b.batchnorm(c, "bn");
  b.add({bn, c}, "sum");
  const auto raw = init_missing_weights(b.build(), 2);
  const auto opt = optimize_graph(raw);
  EXPECT_EQ(count_op(opt.graph, OpKind::kBatchNorm), 1u);
  EXPECT_FALSE(opt.warnings.empty());
  const auto xin = random_input(raw, 4);
  EXPECT_LT(oracle::max_rel_diff(run_inference(raw, xin)[0].data,
                                 run_inference(opt.graph, xin)[0].data),
            1e-6);
}

TEST(GraphOpt, ReluWithTwoConsumersIsNotFused) {
  GraphBuilder b;
  auto x = b.input({1, 3, 3});
  auto c = b.conv(x, 1, 1, 1, 0, "pw");
  auto r = b.relu(c, "relu");
  b.add({c, r}, "sum");
  const auto g = init_missing_weights(b.build(), 1);
  const auto opt = optimize_graph(g);
  EXPECT_EQ(count_op(opt.graph, OpKind::kRelu), 1u);
}

TEST(GraphOpt, ShapesOnlyGraphFuses) {
  GraphBuilder b;
  auto x = b.input({3, 8, 8});
  auto c = b.conv(x, 4, 3, 1, 1, "conv");
  c = b.batchnorm(c, "bn");
  c = b.relu(c, "relu");
  b.output(c);
  const auto opt = optimize_graph(b.build());
  EXPECT_TRUE(opt.warnings.empty());
  EXPECT_EQ(opt.graph.size(), 3u);
}

TEST(GraphOpt, IsIdempotent) {
  const auto once = optimize_graph(init_missing_weights(inverted_residual_block(), 8)).graph;
  const auto twice = optimize_graph(once).graph;
  EXPECT_EQ(dump_graph(once), dump_graph(twice));
}
