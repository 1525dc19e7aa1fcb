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

#include <map>
#include <string>

#include "edgesplit/graph.hpp"

namespace edgesplit {

struct LayerBits {
  int weight_bits = 8;
  int act_bits = 8;
  friend bool operator==(const LayerBits&, const LayerBits&) = default;
  friend auto operator<=>(const LayerBits&, const LayerBits&) = default;
};

// Per-layer (b^w, b^a) for the edge partition, keyed by node id.
using BitAssignment = std::map<NodeId, LayerBits>;

inline BitAssignment uniform_assignment(const std::vector<NodeId>& layers,
                                        int weight_bits, int act_bits) {
  BitAssignment bw;
  for (auto id : layers) bw[id] = {weight_bits, act_bits};
  return bw;
}

}  // namespace edgesplit
