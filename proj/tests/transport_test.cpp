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

#include "edgesplit/models.hpp"
#include "edgesplit/transport.hpp"

using namespace edgesplit;

namespace {

std::vector<std::int32_t> random_codes(std::mt19937_64& rng, std::size_t n, int bits) {
  std::uniform_int_distribution<std::int32_t> d(0, (1 << bits) - 1);
  std::vector<std::int32_t> v(n);
  for (auto& c : v) c = d(rng);
  return v;
}

Tensor random_raw(std::mt19937_64& rng, const LayerGraph& g) {
  const auto& shape = g.node(g.input_id()).out_shape;
  return raw_input(shape, random_codes(rng, static_cast<std::size_t>(volume(shape)), 8), 8);
}

ActivationMessage sample_message() {
  ActivationMessage m;
  m.tensor_id = 7;
  m.bits = 4;
  m.scale = 0.125f;
  m.zero_point = 3.0f;
  m.shape = {2, 1, 3};
  m.payload = pack_activations(std::vector<std::int32_t>{1, 2, 3, 4, 5, 6}, 4);
  return m;
}

WireFault fault_of(const Bytes& b) {
  try {
    decode_message(b);
  } catch (const WireFormatError& e) {
    return e.fault();
  }
  ADD_FAILURE() << "decode accepted a malformed message";
  return WireFault::kBadMagic;
}

// x -> a -> b, then a + b: cutting after b sends both a and b.
LayerGraph skip_graph() {
  GraphBuilder gb;
  auto x = gb.input({2, 4, 4});
  auto a = gb.conv(x, 3, 3, 1, 1, "a", true);
  auto b = gb.conv(a, 3, 3, 1, 1, "b", true);
  auto s = gb.add({a, b}, "sum");
  gb.fc(s, 4, "fc");
  return init_missing_weights(gb.build(), 3);
}

}  // namespace

TEST(Packing, LowBitsFirst) {
  const std::vector<std::int32_t> codes = {1, 2, 3, 4};
  EXPECT_EQ(pack_activations(codes, 4), (Bytes{0x21, 0x43}));
  EXPECT_EQ(pack_activations(codes, 8), (Bytes{1, 2, 3, 4}));
  EXPECT_EQ(pack_activations(std::vector<std::int32_t>{1, 0, 1, 1, 0, 0, 0, 1, 1}, 1),
            (Bytes{0x8d, 0x01}));
  EXPECT_EQ(pack_activations(std::vector<std::int32_t>{3, 0, 1, 2}, 2), (Bytes{0x93}));
}

TEST(Packing, PadsTheLastByte) {
  EXPECT_EQ(packed_size(5, 4), 3u);
  EXPECT_EQ(packed_size(9, 1), 2u);
  EXPECT_EQ(packed_size(0, 2), 0u);
  const auto p = pack_activations(std::vector<std::int32_t>{15, 15, 15, 15, 15}, 4);
  EXPECT_EQ(p, (Bytes{0xff, 0xff, 0x0f}));
}

TEST(Packing, RoundTripsRandomCodes) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    for (int bits : {1, 2, 4, 8}) {
      const auto n = std::uniform_int_distribution<std::size_t>(0, 300)(rng);
      const auto codes = random_codes(rng, n, bits);
      const auto packed = pack_activations(codes, bits);
      ASSERT_EQ(packed.size(), packed_size(n, bits));
      ASSERT_EQ(unpack_activations(packed, bits, n), codes);
    }
  }
}

TEST(Packing, RejectsBadInput) {
  EXPECT_THROW(pack_activations(std::vector<std::int32_t>{16}, 4), TransportError);
  EXPECT_THROW(pack_activations(std::vector<std::int32_t>{-1}, 8), TransportError);
  EXPECT_THROW(pack_activations(std::vector<std::int32_t>{0}, 3), TransportError);
  EXPECT_THROW(unpack_activations(Bytes{0}, 4, 3), TransportError);
  EXPECT_THROW(unpack_activations(Bytes{0}, 16, 1), TransportError);
}

TEST(Messages, LayoutIsLittleEndian) {
  const auto m = sample_message();
  const auto b = encode_message(m);
  ASSERT_EQ(b.size(), message_size(3, 3));
  EXPECT_EQ(b.size(), 21u + 12u + 3u);
  EXPECT_EQ(b[0], 0x53);
  EXPECT_EQ(b[1], 0x41);
  EXPECT_EQ(b[2], 1);
  EXPECT_EQ(b[3], 4);
  EXPECT_EQ((Bytes{b.begin() + 4, b.begin() + 8}), (Bytes{7, 0, 0, 0}));
  EXPECT_EQ((Bytes{b.begin() + 8, b.begin() + 12}), (Bytes{0, 0, 0, 0x3e}));  // 0.125f
  EXPECT_EQ((Bytes{b.begin() + 12, b.begin() + 16}), (Bytes{0, 0, 0x40, 0x40}));  // 3.0f
  EXPECT_EQ(b[16], 3);
  EXPECT_EQ((Bytes{b.begin() + 17, b.begin() + 21}), (Bytes{2, 0, 0, 0}));
  EXPECT_EQ((Bytes{b.begin() + 29, b.begin() + 33}), (Bytes{3, 0, 0, 0}));
  EXPECT_EQ((Bytes{b.begin() + 33, b.end()}), (Bytes{0x21, 0x43, 0x65}));
  EXPECT_EQ(decode_message(b), m);
}

TEST(Messages, DistinctFaults) {
  const auto good = encode_message(sample_message());
  auto b = good;
  b[0] ^= 1;
  EXPECT_EQ(fault_of(b), WireFault::kBadMagic);
  b = good;
  b[2] = 2;
  EXPECT_EQ(fault_of(b), WireFault::kBadVersion);
  b = good;
  b[3] = 3;
  EXPECT_EQ(fault_of(b), WireFault::kBadBits);
  b = good;
  b.push_back(0);
  EXPECT_EQ(fault_of(b), WireFault::kTrailingBytes);
  b = good;
  b[17] = 3;  // shape now needs 5 bytes
  EXPECT_EQ(fault_of(b), WireFault::kBadLength);
  auto m = sample_message();
  m.payload.pop_back();
  try {
    encode_message(m);
    ADD_FAILURE();
  } catch (const WireFormatError& e) {
    EXPECT_EQ(e.fault(), WireFault::kBadLength);
  }
}

TEST(Messages, EveryPrefixIsTruncated) {
  const auto good = encode_message(sample_message());
  for (std::size_t k = 0; k < good.size(); ++k) {
    EXPECT_EQ(fault_of(Bytes(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(k))),
              WireFault::kTruncated)
        << k;
  }
}

TEST(Messages, CrossingTensorConversion) {
  CrossingTensor ct{5, {2, 3}, {2, 0.5, 1.0, true}, {0, 1, 2, 3, 2, 1}};
  const auto back = from_message(decode_message(encode_message(to_message(ct))));
  EXPECT_EQ(back.producer, ct.producer);
  EXPECT_EQ(back.dims, ct.dims);
  EXPECT_EQ(back.codes, ct.codes);
  EXPECT_EQ(back.params.scale, 0.5);
  ct.params.bits = 16;
  EXPECT_THROW(to_message(ct), TransportError);
}

TEST(Session, CloudOnlySendsRawInput) {
  const auto g = skip_graph();
  std::mt19937_64 rng(2);
  const auto x = random_raw(rng, g);
  const auto r = run_split_session(g, x, 0, {});
  EXPECT_EQ(r.outputs, run_inference(g, x));
  ASSERT_EQ(r.payload_bytes.size(), 1u);
  EXPECT_EQ(r.payload_bytes[0], 32u);
  EXPECT_EQ(r.message_bytes[0], message_size(3, 32));
}

TEST(Session, SkipCutSendsTwoMessages) {
  const auto g = skip_graph();
  const ExecutionPlan plan(g, topological_order(g));
  std::mt19937_64 rng(3);
  const auto bits = uniform_assignment({plan.order().begin() + 1, plan.order().end()}, 4, 4);
  const SplitModel model(g, 2, bits);
  for (int k = 0; k < 5; ++k) {
    const auto x = random_raw(rng, g);
    auto ch = in_process_channel();
    const auto r = run_split_session(model, x, std::move(ch.edge), *ch.cloud);
    EXPECT_EQ(r.outputs, model.run(x));
    ASSERT_EQ(r.payload_bytes.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(r.payload_bytes[i], packed_size(48, 4));
      EXPECT_EQ(r.message_bytes[i], message_size(3, 24));
    }
  }
}

TEST(Session, RandomChainsMatchInProcessModel) {
  std::mt19937_64 rng(4);
  const int B[] = {1, 2, 4, 8};
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = init_missing_weights(random_dag(rng, 2 + trial % 6), trial);
    const ExecutionPlan plan(g, topological_order(g));
    BitAssignment bits;
    for (std::size_t p = 1; p <= plan.layer_count(); ++p) {
      bits[plan.at(p)] = {B[trial % 4], B[(trial + p) % 4]};
    }
    const auto n = std::uniform_int_distribution<std::size_t>(0, plan.layer_count())(rng);
    const SplitModel model(g, n, bits);
    const auto x = random_raw(rng, g);
    const auto r = run_split_session(g, x, n, bits);
    EXPECT_EQ(r.outputs, model.run(x)) << "trial " << trial;
    const auto cut = boundary_cut(plan, n);
    EXPECT_EQ(r.message_bytes.size(), cut.crossing_tensors.size());
  }
}

TEST(Session, TcpLoopbackIsBitIdentical) {
  const auto g = skip_graph();
  const ExecutionPlan plan(g, topological_order(g));
  const auto bits = uniform_assignment({plan.order().begin() + 1, plan.order().end()}, 8, 2);
  const SplitModel model(g, 2, bits);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 10; ++k) {
    const auto x = random_raw(rng, g);
    const auto r = run_split_session_tcp(model, x);
    EXPECT_EQ(r.outputs, model.run(x));
    EXPECT_EQ(r.payload_bytes, (std::vector<std::size_t>{12, 12}));
  }
}

TEST(Session, ClosedChannelIsReported) {
  const auto g = skip_graph();
  const ExecutionPlan plan(g, topological_order(g));
  const auto bits = uniform_assignment({plan.order().begin() + 1, plan.order().end()}, 8, 8);
  const SplitModel model(g, 2, bits);
  auto ch = in_process_channel();
  ch.edge->close();
  EXPECT_THROW(run_cloud_role(model, *ch.cloud), TransportError);
}
