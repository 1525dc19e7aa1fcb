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
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edgesplit/cost_model.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/executor.hpp"
#include "edgesplit/graph.hpp"
#include "edgesplit/graph_opt.hpp"
#include "edgesplit/models.hpp"
#include "edgesplit/optimizer.hpp"
#include "edgesplit/quantizer.hpp"
#include "edgesplit/transport.hpp"
#include "json.hpp"

namespace edgesplit {

struct RunConfig {
  std::filesystem::path graph;
  std::filesystem::path devices;
  std::filesystem::path eval;
  std::filesystem::path out = "out";
  std::vector<int> bits;                 // empty: edge supported_bits
  std::optional<std::int64_t> memory_bytes;  // empty: edge off-chip size
  double accuracy_drop = 1.0;            // A, percentage points
  std::optional<double> max_distortion;  // E
  std::size_t calibration = 8;
  std::uint64_t seed = 0;
  bool init_missing_weights = false;
  bool allow_cloud_only = true;
  bool measure_all = true;
  bool float_baseline = false;

  void validate() const {
    if (accuracy_drop < 0 || accuracy_drop > 100) {
      throw ConfigError("accuracy drop threshold must be within [0, 100]");
    }
    if (memory_bytes && *memory_bytes <= 0) throw ConfigError("memory must be positive");
    if (calibration == 0) throw ConfigError("calibration count must be positive");
    if (graph.empty()) throw ConfigError("no graph given");
    if (devices.empty()) throw ConfigError("no device config given");
  }
};

// Parses "123", "192K", "4G" (binary multiples) into bytes.
inline std::int64_t parse_bytes(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad byte size '" + s + "'");
  }
  std::string unit = s.substr(used);
  if (!unit.empty() && (unit.back() == 'B' || unit.back() == 'b')) unit.pop_back();
  if (unit == "i" || unit.size() > 2) throw ConfigError("bad byte size '" + s + "'");
  if (unit.size() == 2 && unit[1] == 'i') unit.pop_back();
  std::int64_t mult = 1;
  if (unit == "K" || unit == "k") mult = 1LL << 10;
  else if (unit == "M" || unit == "m") mult = 1LL << 20;
  else if (unit == "G" || unit == "g") mult = 1LL << 30;
  else if (!unit.empty()) throw ConfigError("bad byte size '" + s + "'");
  return static_cast<std::int64_t>(v) * mult;
}

// Merges a JSON config document into cfg; relative paths resolve against the
// config file's directory.
inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  const auto base = path.parent_path();
  auto p = [&](const char* key, std::filesystem::path& dst) {
    if (j.contains(key)) dst = base / j.at(key).get<std::string>();
  };
  try {
    p("graph", cfg.graph);
    p("devices", cfg.devices);
    p("eval", cfg.eval);
    p("out", cfg.out);
    if (j.contains("bits")) cfg.bits = j.at("bits").get<std::vector<int>>();
    if (j.contains("memory_bytes")) {
      const auto& m = j.at("memory_bytes");
      cfg.memory_bytes = m.is_string() ? parse_bytes(m.get<std::string>()) : m.get<std::int64_t>();
    }
    if (j.contains("accuracy_drop")) cfg.accuracy_drop = j.at("accuracy_drop").get<double>();
    if (j.contains("max_distortion")) cfg.max_distortion = j.at("max_distortion").get<double>();
    if (j.contains("calibration")) cfg.calibration = j.at("calibration").get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

// Everything a run needs, loaded and validated.
struct Workspace {
  LayerGraph graph;
  std::vector<std::string> warnings;
  DeviceConfig devices;
  std::vector<int> bits;
  std::int64_t memory_bytes = 0;
};

inline Workspace load_workspace(const RunConfig& cfg) {
  cfg.validate();
  Workspace ws;
  LayerGraph raw = load_graph(cfg.graph);
  if (cfg.init_missing_weights) raw = init_missing_weights(raw, cfg.seed);
  auto opt = optimize_graph(raw);
  ws.graph = std::move(opt.graph);
  ws.warnings = std::move(opt.warnings);
  ws.devices = load_device_config(cfg.devices);
  ws.bits = cfg.bits.empty() ? ws.devices.edge.supported_bits : cfg.bits;
  std::sort(ws.bits.begin(), ws.bits.end());
  ws.bits.erase(std::unique(ws.bits.begin(), ws.bits.end()), ws.bits.end());
  for (int b : ws.bits) {
    if (!ws.devices.edge.supports(b)) {
      throw ConfigError("bit-width " + std::to_string(b) + " not supported by edge device '" +
                        ws.devices.edge.name + "'");
    }
  }
  ws.memory_bytes = cfg.memory_bytes.value_or(ws.devices.edge.off_chip_bytes);
  return ws;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// Accuracy drop in percentage points against the float model, floored at 0.
inline AccuracyDropFn accuracy_drop_evaluator(const LayerGraph& g, const EvalSet& eval) {
  const double base = evaluate_accuracy(g, eval, 0, {});
  return [&g, &eval, base](const SplitSolution& s) {
    if (s.cloud_only()) return 0.0;
    const double acc = evaluate_accuracy(g, eval, s.n, s.assignment);
    return std::max(0.0, 100.0 * (base - acc));
  };
}

struct SolveReport {
  EnumerationResult enumeration;
  std::optional<std::size_t> selected;
  std::optional<SplitSolution> baseline;
  double float_accuracy = 0;
};

inline void write_tradeoff_csv(std::ostream& os, const std::vector<SplitSolution>& solutions) {
  double cloud = 0;
  for (const auto& s : solutions) {
    if (s.cloud_only()) cloud = s.breakdown.total_s();
  }
  os << "n,accuracy_drop,normalized_latency\n";
  for (const auto& s : solutions) {
    if (!s.accuracy_drop) continue;
    os << s.n << ',' << detail::fmt_real(*s.accuracy_drop) << ','
       << detail::fmt_real(s.cloud_only() ? 1.0 : s.breakdown.total_s() / cloud) << '\n';
  }
}

inline std::string solve_summary(const RunConfig& cfg, const Workspace& ws,
                                 const SolveReport& r) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "graph: " << cfg.graph.filename().string() << " (" << ws.graph.size() << " nodes)\n";
  os << "edge: " << ws.devices.edge.name << ", cloud: " << ws.devices.cloud.name
     << ", uplink " << ws.devices.network.uplink_bits_per_s << " bit/s\n";
  os << "memory budget: " << ws.memory_bytes << " bytes; bits:";
  for (int b : ws.bits) os << ' ' << b;
  os << "\naccuracy drop threshold: " << cfg.accuracy_drop << " pp\n";
  os << "float accuracy: " << 100.0 * r.float_accuracy << "%\n";
  for (const auto& w : ws.warnings) os << "warning: " << w << '\n';
  os << "potential splits:";
  for (auto n : r.enumeration.potential) os << ' ' << n;
  os << "\nsolutions: " << r.enumeration.solutions.size() << " (allocation solves "
     << r.enumeration.solves << " <= " << r.enumeration.solve_bound << ")\n";
  if (r.selected) {
    const auto& s = r.enumeration.solutions[*r.selected];
    const double cloud = r.enumeration.solutions.front().breakdown.total_s();
    os << "selected: n=" << s.n << (s.cloud_only() ? " (cloud-only)" : "")
       << " total " << s.breakdown.total_s() << " s (edge " << s.breakdown.edge_s
       << ", transmit " << s.breakdown.transmit_s << ", cloud " << s.breakdown.cloud_s
       << "), " << 100.0 * s.breakdown.total_s() / cloud << "% of cloud-only\n";
    os << "  weight bits " << bits_histogram(s.assignment, true) << ", activation bits "
       << bits_histogram(s.assignment, false) << ", accuracy drop "
       << s.accuracy_drop.value_or(0.0) << " pp\n";
  }
  if (r.baseline) {
    os << "float baseline: n=" << r.baseline->n << " total " << r.baseline->breakdown.total_s()
       << " s\n";
  }
  return os.str();
}

// Runs the full search and writes solutions.csv, selected.json, tradeoff.csv
// and summary.txt into cfg.out.
inline SolveReport cmd_solve(const RunConfig& cfg) {
  const auto ws = load_workspace(cfg);
  const auto eval = load_eval_set(cfg.eval);
  const auto& g = ws.graph;
  const auto calib = calibrate_activations(g, eval.inputs, cfg.calibration);
  const auto wt = weight_distortion_table(g, ws.bits);
  const auto at = activation_distortion_table(g, calib, ws.bits);

  SearchProblem pb;
  pb.graph = &g;
  pb.weight_table = &wt;
  pb.act_table = &at;
  pb.devices = ws.devices;
  pb.memory_bytes = ws.memory_bytes;

  SolveReport r;
  r.enumeration = enumerate_solutions(pb);
  r.float_accuracy = evaluate_accuracy(g, eval, 0, {});
  auto& S = r.enumeration.solutions;
  const auto drop = accuracy_drop_evaluator(g, eval);
  if (cfg.measure_all) {
    for (std::size_t i = 0; i < S.size(); ++i) S[i].accuracy_drop = drop(S[i]);
  }
  std::vector<SplitSolution> candidates = S;
  if (!cfg.allow_cloud_only) candidates.erase(candidates.begin());
  SelectionOptions opts{cfg.accuracy_drop, cfg.max_distortion};
  std::optional<std::size_t> pick;
  try {
    pick = select_solution(candidates, drop, opts);
  } catch (const InfeasibleError&) {
    pick.reset();
  }
  // Carry lazily measured drops back into S.
  const std::size_t offset = cfg.allow_cloud_only ? 0 : 1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    S[i + offset].accuracy_drop = candidates[i].accuracy_drop;
  }
  if (pick) r.selected = *pick + offset;
  if (cfg.float_baseline) r.baseline = float_baseline(g, ws.devices, ws.memory_bytes);

  std::filesystem::create_directories(cfg.out);
  std::ostringstream csv;
  write_solutions_csv(csv, S);
  write_text(cfg.out / "solutions.csv", csv.str());
  std::ostringstream trade;
  write_tradeoff_csv(trade, S);
  write_text(cfg.out / "tradeoff.csv", trade.str());
  write_text(cfg.out / "summary.txt", solve_summary(cfg, ws, r));
  if (r.baseline) {
    write_text(cfg.out / "baseline.json", solution_to_json(*r.baseline, g).dump(2) + "\n");
  }
  if (!r.selected) {
    throw InfeasibleError("no solution satisfies the accuracy threshold and cloud-only is disabled");
  }
  auto sel = solution_to_json(S[*r.selected], g);
  sel["accuracy_threshold"] = cfg.accuracy_drop;
  sel["memory_bytes"] = ws.memory_bytes;
  write_text(cfg.out / "selected.json", sel.dump(2) + "\n");
  return r;
}

struct MessageRecord {
  std::size_t input = 0;
  NodeId tensor = 0;
  int bits = 0;
  std::size_t payload_bytes = 0;
  std::size_t expected_payload_bytes = 0;
  std::size_t message_bytes = 0;
  std::size_t expected_message_bytes = 0;
};

struct SimulationReport {
  std::vector<MessageRecord> messages;
  std::size_t sessions = 0;
  bool payload_match = true;
  bool output_match = true;
  double wall_s = 0;
};

// Replays the selected solution over loopback TCP (or an in-process channel)
// for each evaluation input and checks payload sizes against the cost model
// and outputs against the in-process fake-quantized reference.
inline SimulationReport cmd_simulate(const RunConfig& cfg, const std::filesystem::path& selected,
                                     std::size_t max_inputs = 0, bool tcp = true,
                                     std::uint16_t port = 0) {
  const auto ws = load_workspace(cfg);
  const auto eval = load_eval_set(cfg.eval);
  const auto& g = ws.graph;
  const auto sol = solution_from_json(read_json_file(selected), g);
  const SplitModel model(g, sol.n, sol.assignment);
  const auto cut = boundary_cut(model.plan(), sol.n);
  const auto bits = crossing_bits(g, cut, sol.assignment);
  const auto expected = payload_bytes(g, cut, bits);

  SimulationReport rep;
  const std::size_t count =
      max_inputs == 0 ? eval.inputs.size() : std::min(max_inputs, eval.inputs.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < count; ++i) {
    SessionResult res;
    if (tcp) {
      res = run_split_session_tcp(model, eval.inputs[i], "127.0.0.1", port);
    } else {
      auto ch = in_process_channel();
      res = run_split_session(model, eval.inputs[i], std::move(ch.edge), *ch.cloud);
    }
    ++rep.sessions;
    const auto reference = model.run(eval.inputs[i]);
    if (res.outputs.size() != reference.size()) rep.output_match = false;
    for (std::size_t k = 0; k < reference.size() && k < res.outputs.size(); ++k) {
      if (res.outputs[k] != reference[k]) rep.output_match = false;
    }
    if (res.payload_bytes.size() != expected.size()) rep.payload_match = false;
    for (std::size_t m = 0; m < res.payload_bytes.size(); ++m) {
      MessageRecord rec;
      rec.input = i;
      rec.tensor = cut.crossing_tensors.at(m);
      rec.bits = bits.at(m);
      rec.payload_bytes = res.payload_bytes[m];
      rec.expected_payload_bytes = static_cast<std::size_t>(expected.at(m));
      rec.message_bytes = res.message_bytes[m];
      rec.expected_message_bytes =
          message_size(g.node(rec.tensor).out_shape.size(), rec.expected_payload_bytes);
      if (rec.payload_bytes != rec.expected_payload_bytes ||
          rec.message_bytes != rec.expected_message_bytes) {
        rep.payload_match = false;
      }
      rep.messages.push_back(rec);
    }
  }
  rep.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::filesystem::create_directories(cfg.out);
  std::ostringstream os;
  os << "input,tensor_id,bits,payload_bytes,expected_payload_bytes,message_bytes,"
        "expected_message_bytes\n";
  for (const auto& m : rep.messages) {
    os << m.input << ',' << m.tensor << ',' << m.bits << ',' << m.payload_bytes << ','
       << m.expected_payload_bytes << ',' << m.message_bytes << ',' << m.expected_message_bytes
       << '\n';
  }
  write_text(cfg.out / "transcript.csv", os.str());
  if (!rep.payload_match) {
    throw TransportError("measured payload bytes differ from cost-model accounting");
  }
  if (!rep.output_match) {
    throw TransportError("split session output differs from the fake-quantized reference");
  }
  return rep;
}

// Per-layer graph statistics and split candidates.
inline std::string cmd_inspect(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.init_missing_weights = false;
  const auto ws = load_workspace(c);
  const auto& g = ws.graph;
  const ExecutionPlan plan(g, topological_order(g));
  const auto input_elems = g.node(g.input_id()).activation_elements();
  const auto potential =
      potential_splits(g, plan, ws.devices.network, ws.memory_bytes, ws.bits.front());
  std::set<std::size_t> cand(potential.begin(), potential.end());
  std::ostringstream os;
  std::int64_t params = 0;
  double ops = 0;
  for (const auto& n : g.nodes()) {
    params += n.weight_elements();
    ops += layer_workload(g, n).ops;
  }
  os << "nodes " << g.size() << ", layers " << plan.layer_count() << ", parameters " << params
     << ", ops " << std::setprecision(6) << ops << "\n";
  for (const auto& w : ws.warnings) os << "warning: " << w << '\n';
  os << "pos,id,name,op,out_elements,weight_elements,cut_elements,vol_diff,peak_working_set,"
        "candidate\n";
  for (std::size_t p = 0; p <= plan.layer_count(); ++p) {
    const auto& n = g.node(plan.at(p));
    const auto cut = boundary_cut(plan, p);
    os << p << ',' << n.id << ',' << n.name << ',' << op_name(n.op) << ','
       << n.activation_elements() << ',' << n.weight_elements() << ',' << cut.cut_elements << ','
       << cut.cut_elements - input_elems << ',' << peak_working_elements(plan, p) << ','
       << (cand.count(p) ? 1 : 0) << '\n';
  }
  return os.str();
}

// Writes the weight and activation distortion tables to distortion.csv.
inline void cmd_profile(const RunConfig& cfg) {
  const auto ws = load_workspace(cfg);
  const auto eval = load_eval_set(cfg.eval);
  const auto calib = calibrate_activations(ws.graph, eval.inputs, cfg.calibration);
  std::filesystem::create_directories(cfg.out);
  std::ostringstream os;
  weight_distortion_table(ws.graph, ws.bits).write_csv(os, true);
  activation_distortion_table(ws.graph, calib, ws.bits).write_csv(os, false);
  write_text(cfg.out / "distortion.csv", os.str());
}

// Writes a bundled model (graph.json + blobs) and an evaluation set into dir.
// "toy" is the trained glyph classifier; other models get He-initialized
// weights and labels from their own float predictions.
inline void cmd_generate(const std::string& model, const std::filesystem::path& dir,
                         std::uint64_t seed, std::size_t eval_count) {
  LayerGraph g;
  EvalSet eval;
  if (model == "toy") {
    g = build_toy_classifier(seed);
    eval = make_toy_dataset(seed + 1, eval_count);
  } else {
    if (model == "inverted-residual") {
      g = init_missing_weights(inverted_residual_block(), seed);
    } else if (model == "chain") {
      std::mt19937_64 rng(seed);
      g = init_missing_weights(random_chain(rng, 5, 8), seed);
    } else if (model == "resnet50-shapes") {
      g = resnet50_shaped();
    } else {
      throw ConfigError("unknown model '" + model + "'");
    }
    if (model != "resnet50-shapes") {
      std::mt19937_64 rng(seed + 1);
      const auto& shape = g.node(g.input_id()).out_shape;
      const auto levels = (std::int64_t{1} << g.input_bits()) - 1;
      std::uniform_int_distribution<std::int32_t> code(0, static_cast<std::int32_t>(levels));
      for (std::size_t i = 0; i < eval_count; ++i) {
        std::vector<std::int32_t> codes(static_cast<std::size_t>(volume(shape)));
        for (auto& c : codes) c = code(rng);
        eval.inputs.push_back(raw_input(shape, codes, g.input_bits()));
        eval.labels.push_back(argmax(run_inference(g, eval.inputs.back()).at(0)));
      }
    }
  }
  save_graph(g, dir, "graph");
  if (!eval.inputs.empty()) save_eval_set(eval, dir / "eval");
}

// Exit code per error category.
inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig:
    case ErrorCategory::kIo:
      return 2;
    case ErrorCategory::kGraph:
      return 3;
    case ErrorCategory::kInfeasible:
      return 4;
    case ErrorCategory::kTransport:
      return 5;
  }
  return 1;
}

}  // namespace edgesplit
