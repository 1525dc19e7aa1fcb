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

#include <filesystem>
#include <random>

#include "edgesplit/graph.hpp"
#include "edgesplit/models.hpp"
#include "oracles.hpp"

using namespace edgesplit;

namespace {

LayerNode make(NodeId id, OpKind op, Dims out, std::vector<NodeId> inputs = {}) {
  LayerNode n;
  n.id = id;
  n.op = op;
  n.out_shape = std::move(out);
  n.inputs = std::move(inputs);
  return n;
}

std::string graph_error(std::vector<LayerNode> nodes) {
  try {
    LayerGraph g(std::move(nodes));
  } catch (const GraphError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Graph, RejectsDuplicateIds) {
  auto msg = graph_error({make(0, OpKind::kInput, {1, 2, 2}),
                          make(0, OpKind::kRelu, {1, 2, 2}, {0})});
  EXPECT_NE(msg.find("0"), std::string::npos) << msg;
  EXPECT_FALSE(msg.empty());
}

TEST(Graph, RejectsUnknownInput) {
  auto msg = graph_error({make(0, OpKind::kInput, {1, 2, 2}),
                          make(1, OpKind::kRelu, {1, 2, 2}, {7})});
  EXPECT_NE(msg.find("7"), std::string::npos) << msg;
}

TEST(Graph, RejectsCycle) {
  auto msg = graph_error({make(0, OpKind::kInput, {1, 2, 2}),
                          make(1, OpKind::kAdd, {1, 2, 2}, {0, 2}),
                          make(2, OpKind::kRelu, {1, 2, 2}, {1})});
  EXPECT_FALSE(msg.empty());
}

TEST(Graph, RejectsShapeMismatch) {
  auto bad = make(1, OpKind::kRelu, {1, 3, 3}, {0});
  auto msg = graph_error({make(0, OpKind::kInput, {1, 2, 2}), bad});
  EXPECT_NE(msg.find("node 1"), std::string::npos) << msg;
}

TEST(Graph, RejectsConvWeightChannelMismatch) {
  auto conv = make(1, OpKind::kConv, {4, 2, 2}, {0});
  conv.weight_shape = {4, 3, 3, 3};
  conv.attrs = {{"kernel_h", 3}, {"kernel_w", 3}, {"pad", 1}};
  auto msg = graph_error({make(0, OpKind::kInput, {2, 2, 2}), conv});
  EXPECT_FALSE(msg.empty());
}

TEST(Graph, RejectsMultipleInputs) {
  auto msg = graph_error({make(0, OpKind::kInput, {1, 2, 2}), make(1, OpKind::kInput, {1, 2, 2}),
                          make(2, OpKind::kAdd, {1, 2, 2}, {0, 1})});
  EXPECT_FALSE(msg.empty());
}

TEST(Graph, RejectsBadInputBits) {
  EXPECT_THROW(LayerGraph({make(0, OpKind::kInput, {1})}, 0), GraphError);
  EXPECT_THROW(LayerGraph({make(0, OpKind::kInput, {1})}, 17), GraphError);
}

TEST(Graph, TopologicalOrderBreaksTiesByAscendingId) {
  // 0 -> {5, 3, 9}; 3 -> 4; {4, 5, 9} -> 2 via adds.
  std::vector<LayerNode> nodes = {
      make(0, OpKind::kInput, {1, 2, 2}),       make(5, OpKind::kRelu, {1, 2, 2}, {0}),
      make(3, OpKind::kRelu, {1, 2, 2}, {0}),   make(9, OpKind::kRelu, {1, 2, 2}, {0}),
      make(4, OpKind::kRelu, {1, 2, 2}, {3}),   make(1, OpKind::kAdd, {1, 2, 2}, {4, 5}),
      make(2, OpKind::kAdd, {1, 2, 2}, {1, 9}),
  };
  LayerGraph g(nodes);
  EXPECT_EQ(topological_order(g), (std::vector<NodeId>{0, 3, 4, 5, 1, 9, 2}));
}

TEST(Graph, OutputsDefaultToSinks) {
  LayerGraph g({make(0, OpKind::kInput, {1, 2, 2}), make(1, OpKind::kRelu, {1, 2, 2}, {0}),
                make(2, OpKind::kRelu, {1, 2, 2}, {0})});
  EXPECT_EQ(g.output_ids(), (std::vector<NodeId>{1, 2}));
}

TEST(Graph, ChainWorkingSetsAndCuts) {
  // input(4) -> a(4) -> concat(a, a) = b(8) -> c(8)
  LayerGraph g({make(0, OpKind::kInput, {4, 1, 1}), make(1, OpKind::kRelu, {4, 1, 1}, {0}),
                make(2, OpKind::kConcat, {8, 1, 1}, {1, 1}),
                make(3, OpKind::kRelu, {8, 1, 1}, {2})});
  const ExecutionPlan plan(g, topological_order(g));
  const auto sets = compute_working_sets(plan);
  ASSERT_EQ(sets.size(), 3u);
  EXPECT_EQ(sets[0].total_elements, 8);   // input + a
  EXPECT_EQ(sets[1].total_elements, 12);  // a + b
  EXPECT_EQ(sets[2].total_elements, 16);  // b + c
  EXPECT_EQ(boundary_cut(plan, 0).cut_elements, 4);
  EXPECT_EQ(boundary_cut(plan, 1).cut_elements, 4);
  EXPECT_EQ(boundary_cut(plan, 2).cut_elements, 8);
  EXPECT_EQ(boundary_cut(plan, 3).cut_elements, 8);
  EXPECT_THROW(boundary_cut(plan, 4), GraphError);
}

TEST(Graph, SkipConnectionStaysLive) {
  GraphBuilder b;
  auto x = b.input({1, 2, 2});
  auto a = b.relu(x, "a");
  auto c = b.relu(a, "c");
  auto d = b.relu(c, "d");
  b.add({d, a}, "sum");
  const auto g = b.build();
  const ExecutionPlan plan(g, topological_order(g));
  const auto cut = boundary_cut(plan, 2);
  EXPECT_EQ(cut.crossing_tensors, (std::vector<NodeId>{a, c}));
  EXPECT_EQ(compute_working_sets(plan)[2].live_tensors.size(), 3u);  // a, c, d
}

TEST(Graph, RandomDagsMatchLivenessOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto g = random_dag(rng, 1 + trial % 9);
    const auto order = topological_order(g);
    const ExecutionPlan plan(g, order);
    const auto sets = compute_working_sets(plan);
    for (std::size_t k = 1; k <= plan.layer_count(); ++k) {
      const auto live = oracle::live_at(g, order, k);
      std::set<NodeId> got;
      for (const auto& t : sets[k - 1].live_tensors) got.insert(t.producer);
      ASSERT_EQ(got, live) << "trial " << trial << " step " << k;
      ASSERT_EQ(sets[k - 1].total_elements, oracle::working_set_elements(g, order, k));
    }
    for (std::size_t n = 0; n <= plan.layer_count(); ++n) {
      const auto cut = boundary_cut(plan, n);
      const std::set<NodeId> got(cut.crossing_tensors.begin(), cut.crossing_tensors.end());
      ASSERT_EQ(got, oracle::cut(g, order, n)) << "trial " << trial << " n " << n;
      std::int64_t peak = 0;
      for (std::size_t k = 1; k <= n; ++k) {
        peak = std::max(peak, oracle::working_set_elements(g, order, k));
      }
      ASSERT_EQ(peak_working_elements(plan, n), peak);
    }
  }
}

TEST(Graph, ExecutionPlanRejectsNonTopologicalOrder) {
  LayerGraph g({make(0, OpKind::kInput, {1}), make(1, OpKind::kRelu, {1}, {0})});
  EXPECT_THROW(ExecutionPlan(g, {1, 0}), GraphError);
  EXPECT_THROW(ExecutionPlan(g, {0}), GraphError);
}

TEST(Graph, JsonRoundTripWithBlobs) {
  const auto g = init_missing_weights(inverted_residual_block(), 3);
  const auto dir = std::filesystem::temp_directory_path() / "edgesplit_graph_rt";
  std::filesystem::remove_all(dir);
  const auto path = save_graph(g, dir, "graph");
  const auto back = load_graph(path);
  ASSERT_EQ(back.size(), g.size());
  EXPECT_EQ(back.input_bits(), g.input_bits());
  for (const auto& n : g.nodes()) {
    const auto& m = back.node(n.id);
    EXPECT_EQ(m.op, n.op);
    EXPECT_EQ(m.name, n.name);
    EXPECT_EQ(m.out_shape, n.out_shape);
    EXPECT_EQ(m.weight_shape, n.weight_shape);
    EXPECT_EQ(m.inputs, n.inputs);
    EXPECT_EQ(m.attrs, n.attrs);
    ASSERT_EQ(static_cast<bool>(m.weights), static_cast<bool>(n.weights));
    if (n.weights) {
      EXPECT_EQ(*m.weights, *n.weights);
    }
    ASSERT_EQ(static_cast<bool>(m.bias), static_cast<bool>(n.bias));
    if (n.bias) {
      EXPECT_EQ(*m.bias, *n.bias);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Graph, ParseErrorsAreGraphErrors) {
  EXPECT_THROW(parse_graph(nlohmann::json::parse(R"({"nodes":[{"id":0}]})")), GraphError);
  EXPECT_THROW(parse_graph(nlohmann::json::parse(
                   R"({"nodes":[{"id":0,"op":"maxpool","out_shape":[1]}]})")),
               GraphError);
  EXPECT_THROW(load_graph("/nonexistent/graph.json"), IoError);
}

TEST(Blob, RoundTripAndCorruption) {
  const Tensor t({2, 3}, {1, -2, 3.5f, 0, 1e-7f, -1e9f});
  auto bytes = blob::encode(t);
  EXPECT_EQ(blob::decode(bytes), t);
  bytes[0] = 'X';
  EXPECT_THROW(blob::decode(bytes), IoError);
  bytes = blob::encode(t);
  bytes.pop_back();
  EXPECT_THROW(blob::decode(bytes), IoError);
}
