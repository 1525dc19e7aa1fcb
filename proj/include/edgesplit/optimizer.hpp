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
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edgesplit/bits.hpp"
#include "edgesplit/cost_model.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/graph.hpp"
#include "edgesplit/parallel.hpp"
#include "edgesplit/quantizer.hpp"
#include "json.hpp"

namespace edgesplit {

// ---------------------------------------------------------------------------
// Potential splits.

// Split indices n in 1..N worth considering: the cut at b_min transmits no
// more than the raw input does, and the edge prefix fits in memory at b_min.
inline std::vector<std::size_t> potential_splits(const LayerGraph& g, const ExecutionPlan& plan,
                                                 const NetworkProfile& net,
                                                 std::int64_t memory_bytes, int b_min,
                                                 const CostOptions& opts = {}) {
  const auto t0 = transmission_latency(g, boundary_cut(plan, 0), {g.input_bits()}, net);
  std::vector<std::size_t> out;
  std::int64_t weight_elements = 0;
  for (std::size_t n = 1; n <= plan.layer_count(); ++n) {
    weight_elements += g.node(plan.at(n)).weight_elements();
    const auto cut = boundary_cut(plan, n);
    double tn = 0;
    if (n < plan.layer_count() || opts.charge_edge_only_output) {
      tn = transmission_latency(g, cut, std::vector<int>(cut.crossing_tensors.size(), b_min),
                                net);
    }
    if (tn > t0) continue;
    const auto need = b_min * (weight_elements + peak_working_elements(plan, n));
    if (need > 8 * memory_bytes) continue;
    out.push_back(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lagrangian allocation.

struct Allocation {
  bool feasible = false;
  double lambda = 0;
  std::map<NodeId, int> bits;
  std::int64_t rate_bits = 0;
  double distortion = 0;
};

namespace detail {

// argmin_b d(b) + lambda * r(b); ties go to the smaller rate, then the lower
// distortion, then the wider bit-width (weightless layers report max bits).
inline std::size_t lagrangian_choice(const DistortionTable::Row& row, double lambda) {
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < row.mse.size(); ++j) {
    const double c = row.mse[j] + lambda * static_cast<double>(row.rate_bits[j]);
    const bool tie_wins =
        row.rate_bits[j] < row.rate_bits[best] ||
        (row.rate_bits[j] == row.rate_bits[best] && row.mse[j] <= row.mse[best]);
    if (c < best_cost || (c == best_cost && tie_wins)) {
      best = j;
      best_cost = c;
    }
  }
  return best;
}

inline Allocation allocation_at(const DistortionTable& t, const std::vector<NodeId>& layers,
                                double lambda) {
  Allocation a;
  a.lambda = lambda;
  for (auto id : layers) {
    const auto& row = t.row(id);
    const auto j = lagrangian_choice(row, lambda);
    a.bits[id] = t.bits()[j];
    a.rate_bits += row.rate_bits[j];
    a.distortion += row.mse[j];
  }
  return a;
}

inline double lambda_upper_bound(const DistortionTable& t, const std::vector<NodeId>& layers) {
  double slope = 0;
  for (auto id : layers) {
    const auto& row = t.row(id);
    for (std::size_t i = 0; i < row.mse.size(); ++i) {
      for (std::size_t j = i + 1; j < row.mse.size(); ++j) {
        const auto dr = row.rate_bits[j] - row.rate_bits[i];
        if (dr > 0) slope = std::max(slope, (row.mse[i] - row.mse[j]) / static_cast<double>(dr));
      }
    }
  }
  return slope + 1.0;
}

}  // namespace detail

inline constexpr int kLambdaIterations = 64;

// Minimizes sum d_i(b_i) subject to sum r_i(b_i) <= budget over the lower
// convex hull of each layer's (rate, distortion) points.
inline Allocation allocate_bits_lagrangian(const DistortionTable& t,
                                           const std::vector<NodeId>& layers,
                                           std::int64_t budget_bits) {
  std::int64_t min_rate = 0;
  for (auto id : layers) min_rate += t.row(id).rate_bits.front();
  if (budget_bits < min_rate) {
    Allocation a;
    a.lambda = std::numeric_limits<double>::infinity();
    for (auto id : layers) {
      a.bits[id] = t.bits().front();
      a.rate_bits += t.row(id).rate_bits.front();
      a.distortion += t.row(id).mse.front();
    }
    return a;
  }
  Allocation a = detail::allocation_at(t, layers, 0.0);
  if (a.rate_bits <= budget_bits) {
    a.feasible = true;
    return a;
  }
  double lo = 0.0;
  double hi = detail::lambda_upper_bound(t, layers);
  for (int it = 0; it < kLambdaIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::allocation_at(t, layers, mid).rate_bits <= budget_bits) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  a = detail::allocation_at(t, layers, hi);
  a.feasible = a.rate_bits <= budget_bits;
  return a;
}

struct ActivationAllocation {
  bool feasible = false;
  double lambda = 0;
  std::map<NodeId, int> bits;
  std::int64_t peak_bits = 0;  // largest bit-weighted working set over 1..n
  double distortion = 0;
  int repairs = 0;  // bit-width decrements applied after the Lagrangian step
};

namespace detail {

inline BitAssignment with_act_bits(const std::map<NodeId, int>& act) {
  BitAssignment b;
  for (const auto& [id, bits] : act) b[id] = {kReferenceBits, bits};
  return b;
}

}  // namespace detail

// Activation bits for layers 1..n such that every execution step's
// bit-weighted working set stays within budget_bits. The max-over-steps
// constraint is relaxed into a sum budget scaled by total / peak elements for
// the Lagrangian step; a repair pass then lowers the widest live tensor at
// each violating step.
inline ActivationAllocation allocate_activation_bits(const DistortionTable& t,
                                                     const LayerGraph& g,
                                                     const ExecutionPlan& plan, std::size_t n,
                                                     std::int64_t budget_bits) {
  const auto& B = t.bits();
  std::vector<NodeId> layers;
  std::int64_t total_elements = 0;
  for (std::size_t p = 1; p <= n; ++p) {
    layers.push_back(plan.at(p));
    total_elements += plan.elements(p);
  }
  ActivationAllocation out;
  std::map<NodeId, int> floor;
  for (auto id : layers) floor[id] = B.front();
  if (activation_memory_bits(g, plan, n, detail::with_act_bits(floor)) > budget_bits) {
    out.bits = floor;
    out.peak_bits = activation_memory_bits(g, plan, n, detail::with_act_bits(floor));
    return out;
  }
  const auto peak = peak_working_elements(plan, n);
  std::int64_t sum_budget = budget_bits;
  if (peak > 0) {
    sum_budget = static_cast<std::int64_t>(std::floor(
        static_cast<double>(budget_bits) * static_cast<double>(total_elements) /
        static_cast<double>(peak)));
  }
  std::int64_t min_rate = 0;
  for (auto id : layers) min_rate += t.row(id).rate_bits.front();
  const auto lag = allocate_bits_lagrangian(t, layers, std::max(sum_budget, min_rate));
  out.lambda = lag.lambda;
  out.bits = lag.bits;

  auto lower = [&](int b) {
    auto it = std::find(B.begin(), B.end(), b);
    return it == B.begin() ? b : *(it - 1);
  };
  for (;;) {
    const auto assigned = detail::with_act_bits(out.bits);
    const auto steps = working_set_bits(g, plan, n, assigned);
    std::size_t violating = 0;
    for (std::size_t k = 1; k <= steps.size(); ++k) {
      if (steps[k - 1] > budget_bits) {
        violating = k;
        break;
      }
    }
    if (violating == 0) {
      out.feasible = true;
      out.peak_bits = steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());
      break;
    }
    NodeId pick = -1;
    std::int64_t pick_rate = -1;
    for (std::size_t p = 1; p <= violating; ++p) {
      if (p != violating && plan.last_use(p) < static_cast<std::int64_t>(violating)) continue;
      const auto id = plan.at(p);
      const int b = out.bits.at(id);
      if (b == B.front()) continue;
      const auto rate = plan.elements(p) * b;
      if (rate > pick_rate || (rate == pick_rate && id < pick)) {
        pick = id;
        pick_rate = rate;
      }
    }
    if (pick < 0) {
      out.peak_bits = steps[violating - 1];
      return out;
    }
    out.bits[pick] = lower(out.bits[pick]);
    ++out.repairs;
  }
  for (auto id : layers) out.distortion += t.distortion(id, out.bits.at(id));
  return out;
}

// ---------------------------------------------------------------------------
// Solutions.

struct BudgetPair {
  std::int64_t weight_bits = 0;
  std::int64_t act_bits = 0;
  double weight_bytes() const { return static_cast<double>(weight_bits) / 8.0; }
  double act_bytes() const { return static_cast<double>(act_bits) / 8.0; }
};

struct SplitSolution {
  std::size_t n = 0;
  BitAssignment assignment;
  LatencyBreakdown breakdown;
  double relative_objective = 0;
  double weight_distortion = 0;
  double act_distortion = 0;
  std::int64_t edge_weight_bits = 0;
  std::int64_t edge_act_bits = 0;
  std::optional<BudgetPair> budget;  // unset for the sentinel and baselines
  std::optional<double> accuracy_drop;

  bool cloud_only() const { return n == 0; }
  double total_distortion() const { return weight_distortion + act_distortion; }
  double edge_weight_bytes() const { return static_cast<double>(edge_weight_bits) / 8.0; }
  double edge_act_bytes() const { return static_cast<double>(edge_act_bits) / 8.0; }
  std::int64_t total_bits() const {
    std::int64_t s = 0;
    for (const auto& [id, b] : assignment) s += b.weight_bits + b.act_bits;
    return s;
  }
};

struct SearchProblem {
  const LayerGraph* graph = nullptr;
  const DistortionTable* weight_table = nullptr;
  const DistortionTable* act_table = nullptr;
  DeviceConfig devices;
  std::int64_t memory_bytes = 0;
  CostOptions cost;
};

struct EnumerationResult {
  std::vector<SplitSolution> solutions;  // sentinel first, then (n, k_w, k_a)
  std::vector<std::size_t> potential;
  std::size_t solves = 0;
  std::size_t solve_bound = 0;
};

inline SplitSolution cloud_only_solution(const LayerGraph& g, const ExecutionPlan& plan,
                                         const DeviceConfig& devices,
                                         const CostOptions& opts = {}) {
  SplitSolution s;
  const auto cost = split_latency(g, plan, 0, {}, devices, opts);
  s.breakdown = cost.breakdown;
  s.relative_objective = cost.relative_objective;
  s.accuracy_drop = 0.0;
  return s;
}

// Fills latency, memory and distortion of a solution from its assignment.
inline void evaluate_solution(SplitSolution& s, const LayerGraph& g, const ExecutionPlan& plan,
                              const DeviceConfig& devices, const CostOptions& opts,
                              const DistortionTable* wt, const DistortionTable* at) {
  const auto cost = split_latency(g, plan, s.n, s.assignment, devices, opts);
  s.breakdown = cost.breakdown;
  s.relative_objective = cost.relative_objective;
  s.edge_weight_bits = weight_memory_bits(g, plan, s.n, s.assignment);
  s.edge_act_bits = activation_memory_bits(g, plan, s.n, s.assignment);
  s.weight_distortion = 0;
  s.act_distortion = 0;
  for (const auto& [id, b] : s.assignment) {
    if (wt && b.weight_bits < kReferenceBits) s.weight_distortion += wt->distortion(id, b.weight_bits);
    if (at && b.act_bits < kReferenceBits) s.act_distortion += at->distortion(id, b.act_bits);
  }
}

// Joint split and bit-width search: for every potential split and every
// uniform-bit anchor pair (M^wgt, M^act) that fits in memory, allocate weight
// and activation bits independently and keep the combinations that satisfy
// the memory constraint with their actual bits.
inline EnumerationResult enumerate_solutions(const SearchProblem& pb) {
  const auto& g = *pb.graph;
  const auto& wt = *pb.weight_table;
  const auto& at = *pb.act_table;
  if (pb.memory_bytes <= 0) throw ConfigError("memory budget must be positive");
  if (wt.bits() != at.bits()) throw ConfigError("weight and activation tables use different bit sets");
  const auto& B = wt.bits();
  for (int b : B) {
    if (!pb.devices.edge.supports(b)) {
      throw ConfigError("bit-width " + std::to_string(b) + " unsupported by edge device '" +
                        pb.devices.edge.name + "'");
    }
  }
  const ExecutionPlan plan(g, topological_order(g));
  const std::int64_t memory_bits = 8 * pb.memory_bytes;

  EnumerationResult result;
  result.potential = potential_splits(g, plan, pb.devices.network, pb.memory_bytes, B.front(),
                                      pb.cost);
  result.solve_bound = result.potential.size() * B.size() * B.size() + B.size();
  result.solutions.push_back(cloud_only_solution(g, plan, pb.devices, pb.cost));

  struct Cell {
    std::vector<SplitSolution> solutions;
    std::size_t solves = 0;
  };
  std::vector<Cell> cells(result.potential.size());
  parallel_for(result.potential.size(), [&](std::size_t idx) {
    const auto n = result.potential[idx];
    auto& cell = cells[idx];
    std::vector<NodeId> layers;
    std::int64_t weight_elements = 0;
    for (std::size_t p = 1; p <= n; ++p) {
      layers.push_back(plan.at(p));
      weight_elements += g.node(plan.at(p)).weight_elements();
    }
    const auto peak = peak_working_elements(plan, n);
    std::map<std::size_t, ActivationAllocation> act_cache;
    std::set<BitAssignment> seen;
    for (std::size_t kw = 0; kw < B.size(); ++kw) {
      const std::int64_t m_wgt = weight_elements * B[kw];
      std::optional<Allocation> walloc;
      for (std::size_t ka = 0; ka < B.size(); ++ka) {
        const std::int64_t m_act = peak * B[ka];
        if (m_wgt + m_act > memory_bits) continue;
        ++cell.solves;
        if (!walloc) walloc = allocate_bits_lagrangian(wt, layers, m_wgt);
        auto it = act_cache.find(ka);
        if (it == act_cache.end()) {
          it = act_cache.emplace(ka, allocate_activation_bits(at, g, plan, n, m_act)).first;
        }
        if (!walloc->feasible || !it->second.feasible) continue;
        SplitSolution s;
        s.n = n;
        for (auto id : layers) s.assignment[id] = {walloc->bits.at(id), it->second.bits.at(id)};
        if (!seen.insert(s.assignment).second) continue;
        s.budget = BudgetPair{m_wgt, m_act};
        evaluate_solution(s, g, plan, pb.devices, pb.cost, &wt, &at);
        if (s.edge_weight_bits + s.edge_act_bits > memory_bits) continue;
        cell.solutions.push_back(std::move(s));
      }
    }
  });
  for (auto& cell : cells) {
    result.solves += cell.solves;
    for (auto& s : cell.solutions) result.solutions.push_back(std::move(s));
  }
  if (result.solves > result.solve_bound) {
    throw std::logic_error("allocation solve count exceeds the grid bound");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Selection.

// Latency ordering with deterministic tie-breaks: lower n, fewer total bits,
// then the lexicographically smaller assignment.
inline bool latency_order(const SplitSolution& a, const SplitSolution& b) {
  if (a.breakdown.total_s() != b.breakdown.total_s()) {
    return a.breakdown.total_s() < b.breakdown.total_s();
  }
  if (a.n != b.n) return a.n < b.n;
  if (a.total_bits() != b.total_bits()) return a.total_bits() < b.total_bits();
  return a.assignment < b.assignment;
}

// Accuracy drop in percentage points relative to the float model, floored at
// zero.
using AccuracyDropFn = std::function<double(const SplitSolution&)>;

struct SelectionOptions {
  double max_accuracy_drop = 1.0;         // A, percentage points
  std::optional<double> max_distortion;   // E, optional hard filter
};

// Picks the fastest solution whose measured drop is within A. Drops are
// measured lazily in latency order and cached in `solutions`. The cloud-only
// sentinel (drop 0) always qualifies.
inline std::size_t select_solution(std::vector<SplitSolution>& solutions,
                                   const AccuracyDropFn& drop,
                                   const SelectionOptions& opts) {
  std::vector<std::size_t> order(solutions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return latency_order(solutions[a], solutions[b]);
  });
  for (auto i : order) {
    auto& s = solutions[i];
    if (s.cloud_only()) {
      s.accuracy_drop = 0.0;
      return i;
    }
    if (opts.max_distortion && s.total_distortion() > *opts.max_distortion) continue;
    if (!s.accuracy_drop) s.accuracy_drop = drop(s);
    if (*s.accuracy_drop <= opts.max_accuracy_drop) return i;
  }
  throw InfeasibleError("no admissible solution and no cloud-only sentinel");
}

// Float baseline: every edge layer at the reference width, split chosen purely
// by predicted latency among the splits that fit in memory.
inline SplitSolution float_baseline(const LayerGraph& g, const DeviceConfig& devices,
                                    std::int64_t memory_bytes, CostOptions opts = {}) {
  const ExecutionPlan plan(g, topological_order(g));
  opts.allow_reference_bits = true;
  SplitSolution best = cloud_only_solution(g, plan, devices, opts);
  for (std::size_t n = 1; n <= plan.layer_count(); ++n) {
    SplitSolution s;
    s.n = n;
    for (std::size_t p = 1; p <= n; ++p) s.assignment[plan.at(p)] = {kReferenceBits, kReferenceBits};
    evaluate_solution(s, g, plan, devices, opts, nullptr, nullptr);
    if (s.edge_weight_bits + s.edge_act_bits > 8 * memory_bytes) continue;
    s.accuracy_drop = 0.0;
    if (latency_order(s, best)) best = std::move(s);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Export.

// "2:3;8:5" style histogram of weight or activation bits over edge layers.
inline std::string bits_histogram(const BitAssignment& a, bool weights) {
  std::map<int, int> h;
  for (const auto& [id, b] : a) ++h[weights ? b.weight_bits : b.act_bits];
  std::string out;
  for (const auto& [bits, count] : h) {
    if (!out.empty()) out += ';';
    out += std::to_string(bits) + ":" + std::to_string(count);
  }
  return out;
}

namespace detail {
inline std::string fmt_real(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}
}  // namespace detail

inline void write_solutions_csv(std::ostream& os, const std::vector<SplitSolution>& solutions) {
  os << "n,weight_bits,act_bits,edge_s,transmit_s,cloud_s,total_s,edge_weight_bytes,"
        "edge_act_bytes,distortion,accuracy_drop\n";
  for (const auto& s : solutions) {
    os << s.n << ',' << bits_histogram(s.assignment, true) << ','
       << bits_histogram(s.assignment, false) << ',' << detail::fmt_real(s.breakdown.edge_s)
       << ',' << detail::fmt_real(s.breakdown.transmit_s) << ','
       << detail::fmt_real(s.breakdown.cloud_s) << ',' << detail::fmt_real(s.breakdown.total_s())
       << ',' << detail::fmt_real(s.edge_weight_bytes()) << ','
       << detail::fmt_real(s.edge_act_bytes()) << ',' << detail::fmt_real(s.total_distortion())
       << ',';
    if (s.accuracy_drop) os << detail::fmt_real(*s.accuracy_drop);
    os << '\n';
  }
}

inline nlohmann::json solution_to_json(const SplitSolution& s, const LayerGraph& g) {
  nlohmann::json layers = nlohmann::json::array();
  const ExecutionPlan plan(g, topological_order(g));
  for (std::size_t p = 1; p <= s.n; ++p) {
    const auto& node = g.node(plan.at(p));
    const auto& b = s.assignment.at(node.id);
    layers.push_back({{"id", node.id},
                      {"name", node.name},
                      {"weight_bits", b.weight_bits},
                      {"act_bits", b.act_bits}});
  }
  nlohmann::json j = {
      {"n", s.n},
      {"cloud_only", s.cloud_only()},
      {"layers", layers},
      {"latency",
       {{"edge_s", s.breakdown.edge_s},
        {"transmit_s", s.breakdown.transmit_s},
        {"cloud_s", s.breakdown.cloud_s},
        {"total_s", s.breakdown.total_s()}}},
      {"memory", {{"edge_weight_bytes", s.edge_weight_bytes()},
                  {"edge_act_bytes", s.edge_act_bytes()}}},
      {"distortion", {{"weight", s.weight_distortion},
                      {"activation", s.act_distortion},
                      {"total", s.total_distortion()}}},
  };
  j["accuracy_drop"] = s.accuracy_drop ? nlohmann::json(*s.accuracy_drop) : nlohmann::json();
  if (s.budget) {
    j["budget"] = {{"weight_bytes", s.budget->weight_bytes()},
                   {"act_bytes", s.budget->act_bytes()}};
  }
  return j;
}

// Inverse of solution_to_json for the split and assignment; cost fields are
// recomputed by the caller.
inline SplitSolution solution_from_json(const nlohmann::json& j, const LayerGraph& g) {
  try {
    SplitSolution s;
    s.n = j.at("n").get<std::size_t>();
    const ExecutionPlan plan(g, topological_order(g));
    if (s.n > plan.layer_count()) throw ConfigError("solution split index out of range");
    for (const auto& l : j.at("layers")) {
      const auto id = l.at("id").get<NodeId>();
      if (!g.contains(id)) throw ConfigError("solution names unknown layer " + std::to_string(id));
      s.assignment[id] = {l.at("weight_bits").get<int>(), l.at("act_bits").get<int>()};
    }
    for (std::size_t p = 1; p <= s.n; ++p) {
      if (!s.assignment.count(plan.at(p))) {
        throw ConfigError("solution lacks bits for edge layer " + std::to_string(plan.at(p)));
      }
    }
    if (s.assignment.size() != s.n) throw ConfigError("solution assigns bits to cloud layers");
    if (j.contains("accuracy_drop") && !j.at("accuracy_drop").is_null()) {
      s.accuracy_drop = j.at("accuracy_drop").get<double>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed solution: ") + e.what());
  }
}

}  // namespace edgesplit
