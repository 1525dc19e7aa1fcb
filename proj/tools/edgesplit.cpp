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

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "edgesplit/cli.hpp"

namespace {

using edgesplit::RunConfig;

struct Flags {
  std::string config;
  std::string graph, devices, eval, out;
  std::vector<int> bits;
  std::string memory;
  double accuracy_drop = -1;
  double max_distortion = -1;
  std::size_t calibration = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config; flags override its values");
  cmd->add_option("--graph", f.graph, "graph JSON");
  cmd->add_option("--devices", f.devices, "device config JSON (edge, cloud, network)");
  cmd->add_option("--eval", f.eval, "evaluation set directory (labels.csv + blobs)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--bits", f.bits, "candidate bit-widths (default: edge supported_bits)")
      ->delimiter(',');
  cmd->add_option("--memory", f.memory, "edge memory budget M in bytes (K/M/G suffixes)");
  cmd->add_option("--accuracy-drop", f.accuracy_drop, "threshold A in percentage points");
  cmd->add_option("--max-distortion", f.max_distortion, "optional distortion cap E");
  cmd->add_option("--calibration", f.calibration, "calibration input count");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&f](std::uint64_t s) { f.seed = s, f.seed_set = true; }, "random seed");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) edgesplit::apply_config_file(cfg, f.config);
  if (!f.graph.empty()) cfg.graph = f.graph;
  if (!f.devices.empty()) cfg.devices = f.devices;
  if (!f.eval.empty()) cfg.eval = f.eval;
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.bits.empty()) cfg.bits = f.bits;
  if (!f.memory.empty()) cfg.memory_bytes = edgesplit::parse_bytes(f.memory);
  if (f.accuracy_drop >= 0) cfg.accuracy_drop = f.accuracy_drop;
  if (f.max_distortion >= 0) cfg.max_distortion = f.max_distortion;
  if (f.calibration > 0) cfg.calibration = f.calibration;
  if (f.seed_set) cfg.seed = f.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge/cloud DNN splitting with mixed-precision bit allocation"};
  app.require_subcommand(1);
  Flags f;

  bool lazy = false, no_cloud_only = false, baseline = false, init_weights = false;
  auto* solve = app.add_subcommand("solve", "search splits and bit-widths, write reports");
  add_common(solve, f);
  solve->add_flag("--lazy", lazy, "measure accuracy only while selecting");
  solve->add_flag("--no-cloud-only", no_cloud_only, "disallow the cloud-only fallback");
  solve->add_flag("--float-baseline", baseline, "also report the all-float split");
  solve->add_flag("--init-missing-weights", init_weights, "He-initialize absent weights");

  std::string selected;
  std::size_t count = 0;
  bool in_process = false;
  std::uint16_t port = 0;
  auto* simulate = app.add_subcommand("simulate", "replay a selected solution over loopback");
  add_common(simulate, f);
  simulate->add_option("--selected", selected, "selected.json from solve")->required();
  simulate->add_option("--count", count, "number of evaluation inputs (0: all)");
  simulate->add_flag("--in-process", in_process, "use the in-process channel instead of TCP");
  simulate->add_option("--port", port, "TCP port (0: ephemeral)");

  auto* inspect = app.add_subcommand("inspect", "graph statistics and split candidates");
  add_common(inspect, f);

  auto* profile = app.add_subcommand("profile", "write weight/activation distortion tables");
  add_common(profile, f);

  std::string model = "toy";
  std::size_t eval_count = 200;
  auto* generate = app.add_subcommand("generate", "write a bundled model and evaluation set");
  generate->add_option("--model", model, "toy | inverted-residual | chain | resnet50-shapes");
  generate->add_option("--out", f.out, "output directory")->required();
  generate->add_option("--seed", f.seed, "random seed");
  generate->add_option("--eval-count", eval_count, "evaluation inputs to write");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      edgesplit::cmd_generate(model, f.out, f.seed, eval_count);
      return 0;
    }
    RunConfig cfg = resolve(f);
    if (*solve) {
      cfg.measure_all = !lazy;
      cfg.allow_cloud_only = !no_cloud_only;
      cfg.float_baseline = baseline;
      cfg.init_missing_weights = init_weights;
      edgesplit::cmd_solve(cfg);
      std::ifstream summary(cfg.out / "summary.txt");
      std::cout << summary.rdbuf();
    } else if (*simulate) {
      const auto r = edgesplit::cmd_simulate(cfg, selected, count, !in_process, port);
      std::cout << r.sessions << " sessions, " << r.messages.size()
                << " messages, payload accounting exact, outputs bit-identical ("
                << r.wall_s << " s)\n";
    } else if (*inspect) {
      std::cout << edgesplit::cmd_inspect(cfg);
    } else if (*profile) {
      edgesplit::cmd_profile(cfg);
    }
  } catch (const edgesplit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return edgesplit::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
