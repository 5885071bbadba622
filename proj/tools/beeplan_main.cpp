// SPDX-License-Identifier: Apache-2.0
//
// beeplan: planner / simulator / codec / SD-model / wire-bench toolkit with
// JSON output on every subcommand.
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "beeplan/cluster.hpp"
#include "beeplan/codec.hpp"
#include "beeplan/errors.hpp"
#include "beeplan/planner.hpp"
#include "beeplan/sd_model.hpp"
#include "beeplan/simulator.hpp"
#include "beeplan/synth.hpp"
#include "beeplan/wire.hpp"

namespace {

using beeplan::Bytes;
using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw beeplan::ParseError("cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

Bytes read_bytes(const std::string& path) {
  std::string text = read_file(path);
  return Bytes(text.begin(), text.end());
}

void write_output(const std::string& output, const std::string& text) {
  if (output.empty() || output == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(output, std::ios::binary);
  if (!out) throw beeplan::Error("cannot open output file: " + output);
  out << text << "\n";
}

void write_bytes(const std::string& path, const Bytes& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw beeplan::Error("cannot open output file: " + path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

beeplan::LinkShape parse_shape(const std::string& text) {
  // "rate_mbps,latency_ms"; rate 0 or "inf" means unshaped.
  auto comma = text.find(',');
  if (comma == std::string::npos)
    throw beeplan::ValidationError("--shape: expected rate_mbps,latency_ms");
  std::string rate = text.substr(0, comma);
  beeplan::LinkShape shape;
  shape.rate_bps = rate == "inf" ? 0.0 : std::stod(rate) * 1e6;
  shape.latency_ms = std::stod(text.substr(comma + 1));
  return shape;
}

struct GlobalFlags {
  std::uint64_t seed = 1;
  std::string output;
  std::string format = "json";
};

int run_plan(const GlobalFlags& globals, const std::string& spec_path,
             const std::string& objective, const std::vector<int>& batch_set, bool oracle,
             double ratio, double hop_cpu_ms, int max_micro) {
  beeplan::ClusterSpec spec = beeplan::load_cluster_spec_file(spec_path);
  beeplan::PlannerOptions opts;
  if (!batch_set.empty()) opts.batch_candidates = batch_set;
  opts.compression.ratio = ratio;
  opts.compression.hop_cpu_ms = hop_cpu_ms;
  opts.max_micro_batches = max_micro;
  if (!objective.empty()) opts.forced_objective = beeplan::objective_from_name(objective);
  opts.use_oracle = oracle;
  beeplan::Plan plan = beeplan::enumerate_plans(spec, opts);
  write_output(globals.output, beeplan::plan_to_json(plan));
  return 0;
}

int run_simulate(const GlobalFlags& globals, const std::string& spec_path,
                 const std::string& plan_path, int steps, int slots, double ratio,
                 double codec_ms) {
  beeplan::ClusterSpec spec = beeplan::load_cluster_spec_file(spec_path);
  beeplan::Plan plan = beeplan::plan_from_json(read_file(plan_path));
  beeplan::SimOptions opts;
  opts.inflight_slots = slots;
  opts.compression_ratio = ratio;
  opts.codec_ms_per_hop = codec_ms;
  beeplan::RunMetrics metrics = beeplan::simulate(plan, spec, steps, opts);
  write_output(globals.output, beeplan::run_metrics_to_json(metrics));
  return 0;
}

int run_analyze_sd(const GlobalFlags& globals, const std::string& params_path,
                   const std::string& sweep, const std::vector<std::string>& levels_text) {
  beeplan::SdParams params = beeplan::sd_params_from_json(read_file(params_path));

  std::vector<beeplan::PruneLevel> levels;
  levels.push_back({params.N_tree, params.a}); // unpruned level first
  for (const std::string& text : levels_text) {
    auto comma = text.find(',');
    if (comma == std::string::npos)
      throw beeplan::ValidationError("--prune-level: expected N_tree,a");
    levels.push_back({std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))});
  }

  json doc;
  doc["t_auto_ms"] = beeplan::t_auto(params);
  doc["t_spec_ms"] = beeplan::t_spec(params);
  beeplan::BreakEven be = beeplan::break_even_bandwidth(params);
  doc["break_even"] = be.kind == beeplan::BreakEvenKind::Finite
                          ? json{{"kind", "finite"}, {"s_star_mb_per_s", be.s_star / 1e6}}
                          : json{{"kind", be.kind == beeplan::BreakEvenKind::NeverHelps
                                              ? "never_helps"
                                              : "always_helps"}};
  auto decision_to_json = [&](const beeplan::SdDecision& decision) {
    json d;
    d["enabled"] = decision.enabled;
    d["level_index"] = decision.level_index;
    if (decision.enabled) {
      d["N_tree"] = decision.level.n_tree;
      d["a"] = decision.level.a;
    }
    return d;
  };
  doc["decision"] = decision_to_json(beeplan::decide_sd(params, params.S, levels));

  if (!sweep.empty()) {
    // lo:hi:steps in MB/s
    double lo, hi;
    int steps;
    if (std::sscanf(sweep.c_str(), "%lf:%lf:%d", &lo, &hi, &steps) != 3 || steps < 2)
      throw beeplan::ValidationError("--bandwidth-sweep: expected lo:hi:steps with steps >= 2");
    json points = json::array();
    for (int i = 0; i < steps; ++i) {
      double s_mb = lo + (hi - lo) * i / (steps - 1);
      double s = s_mb * 1e6;
      json point;
      point["S_mb_per_s"] = s_mb;
      point["t_auto_ms"] = beeplan::t_auto_at(params, s);
      point["t_spec_ms"] = beeplan::t_spec_at(params, s);
      point["decision"] = decision_to_json(beeplan::decide_sd(params, s, levels));
      points.push_back(std::move(point));
    }
    doc["sweep"] = std::move(points);
  }
  write_output(globals.output, doc.dump(2));
  return 0;
}

int run_compress(const std::string& input, const std::string& output,
                 const std::string& backend, bool no_split) {
  Bytes data = read_bytes(input);
  beeplan::CodecContainer container =
      beeplan::compress(data, beeplan::backend_by_name(backend).id, !no_split);
  write_bytes(output, beeplan::serialize_container(container));
  return 0;
}

int run_decompress(const std::string& input, const std::string& output) {
  beeplan::CodecContainer container = beeplan::parse_container(read_bytes(input));
  write_bytes(output, beeplan::decompress(container));
  return 0;
}

int run_entropy(const GlobalFlags& globals, const std::string& input,
                const std::string& backend) {
  Bytes data = read_bytes(input);
  beeplan::EntropyReport report =
      beeplan::analyze(data, beeplan::backend_by_name(backend).id);
  write_output(globals.output, beeplan::entropy_report_to_json(report));
  return 0;
}

int run_bench_wire(const GlobalFlags& globals, const std::string& role,
                   const std::string& listen, const std::string& connect,
                   const std::string& shape_text, std::size_t payload, int micro, int steps,
                   double compute_ms, bool compress, int stages) {
  beeplan::LinkShape shape =
      shape_text.empty() ? beeplan::LinkShape{} : parse_shape(shape_text);
  if (role == "local") {
    beeplan::WireLocalConfig cfg;
    cfg.steps = steps;
    cfg.micro_batches = micro;
    cfg.payload_bytes = payload;
    cfg.seed = globals.seed;
    cfg.compress = compress;
    cfg.stage_count = stages;
    cfg.compute_ms = compute_ms;
    cfg.shape = shape;
    beeplan::WireLocalResult result = beeplan::run_wire_local(cfg);
    write_output(globals.output, beeplan::wire_local_result_to_json(result));
    return result.sink.payload_ok ? 0 : 1;
  }
  beeplan::WireRoleReport report;
  if (role == "source") {
    beeplan::WireSourceConfig cfg;
    cfg.connect = connect;
    cfg.steps = steps;
    cfg.micro_batches = micro;
    cfg.payload_bytes = payload;
    cfg.seed = globals.seed;
    cfg.compress = compress;
    cfg.shape = shape;
    report = beeplan::run_wire_source(cfg);
  } else if (role == "stage") {
    beeplan::WireStageConfig cfg;
    cfg.listen = listen;
    cfg.connect = connect;
    cfg.compute_ms = compute_ms;
    cfg.compress_out = compress;
    cfg.shape = shape;
    report = beeplan::run_wire_stage(cfg);
  } else if (role == "sink") {
    beeplan::WireSinkConfig cfg;
    cfg.listen = listen;
    cfg.payload_bytes = payload;
    cfg.micro_batches = micro;
    cfg.seed = globals.seed;
    report = beeplan::run_wire_sink(cfg);
  } else {
    throw beeplan::ValidationError("--role: expected source|stage|sink|local");
  }
  write_output(globals.output, beeplan::wire_report_to_json(report));
  return report.payload_ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"beeplan: communication-centric pipeline inference planning toolkit"};
  app.require_subcommand(1);
  app.fallthrough(); // global flags may follow the subcommand

  GlobalFlags globals;
  app.add_option("--seed", globals.seed, "deterministic seed for synthetic data");
  app.add_option("--output", globals.output, "output path (default: stdout)");
  app.add_option("--format", globals.format, "output format (json)")
      ->check(CLI::IsMember({"json"}));

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "solve layer assignment and pick (B, M, flags)");
  std::string plan_spec, plan_objective;
  std::vector<int> plan_batch_set;
  bool plan_oracle = false;
  double plan_ratio = 0.75, plan_hop_cpu = 2.0;
  int plan_max_micro = 16;
  plan_cmd->add_option("--spec", plan_spec, "cluster spec JSON")->required();
  plan_cmd->add_option("--objective", plan_objective, "force objective: sum|cycle");
  plan_cmd->add_option("--batch-set", plan_batch_set, "candidate batch sizes");
  plan_cmd->add_flag("--oracle", plan_oracle, "use the exhaustive oracle solver");
  plan_cmd->add_option("--compression-ratio", plan_ratio, "modeled compressed-payload ratio");
  plan_cmd->add_option("--compression-cpu-ms", plan_hop_cpu, "modeled per-hop compression cost");
  plan_cmd->add_option("--max-micro", plan_max_micro, "largest micro-batch count considered");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "event-driven pipeline simulation of a plan");
  std::string sim_spec, sim_plan;
  int sim_steps = 1, sim_slots = 2;
  double sim_ratio = 0.75, sim_codec_ms = 0.0;
  sim_cmd->add_option("--spec", sim_spec, "cluster spec JSON")->required();
  sim_cmd->add_option("--plan", sim_plan, "plan JSON (from `plan`)")->required();
  sim_cmd->add_option("--steps", sim_steps, "token steps to simulate")->required();
  sim_cmd->add_option("--slots", sim_slots, "in-flight micro-batch slots per stage");
  sim_cmd->add_option("--compression-ratio", sim_ratio, "payload ratio when compressing");
  sim_cmd->add_option("--codec-ms", sim_codec_ms, "per-hop codec charge when compressing");

  // analyze-sd
  auto* sd_cmd = app.add_subcommand("analyze-sd", "speculative decoding latency model");
  std::string sd_params, sd_sweep;
  std::vector<std::string> sd_levels;
  sd_cmd->add_option("--params", sd_params, "SD params JSON")->required();
  sd_cmd->add_option("--bandwidth-sweep", sd_sweep, "lo:hi:steps in MB/s");
  sd_cmd->add_option("--prune-level", sd_levels, "pruned operating point N_tree,a (repeatable)");

  // compress / decompress / entropy
  auto* comp_cmd = app.add_subcommand("compress", "compress a raw FP16 stream file");
  std::string comp_in, comp_out, comp_backend = "deflate";
  bool comp_no_split = false;
  comp_cmd->add_option("input", comp_in, "raw FP16 file")->required();
  comp_cmd->add_option("output", comp_out, "container output path")->required();
  comp_cmd->add_option("--backend", comp_backend, "identity|deflate");
  comp_cmd->add_flag("--no-split", comp_no_split, "compress the raw stream without byte-split");

  auto* decomp_cmd = app.add_subcommand("decompress", "restore a container to raw FP16");
  std::string decomp_in, decomp_out;
  decomp_cmd->add_option("input", decomp_in, "container file")->required();
  decomp_cmd->add_option("output", decomp_out, "raw FP16 output path")->required();

  auto* entropy_cmd = app.add_subcommand("entropy", "entropy / compressibility report");
  std::string entropy_in, entropy_backend = "deflate";
  entropy_cmd->add_option("input", entropy_in, "raw FP16 file")->required();
  entropy_cmd->add_option("--backend", entropy_backend, "identity|deflate");

  // bench-wire
  auto* wire_cmd = app.add_subcommand("bench-wire", "shaped-socket pipeline runner");
  std::string wire_role, wire_listen, wire_connect, wire_shape;
  std::size_t wire_payload = 416400;
  int wire_micro = 1, wire_steps = 1, wire_stages = 1;
  double wire_compute = 0.0;
  bool wire_compress = false;
  wire_cmd->add_option("--role", wire_role, "source|stage|sink|local")->required();
  wire_cmd->add_option("--listen", wire_listen, "host:port to accept on");
  wire_cmd->add_option("--connect", wire_connect, "host:port of the next hop");
  wire_cmd->add_option("--shape", wire_shape, "rate_mbps,latency_ms (rate 'inf' = unshaped)");
  wire_cmd->add_option("--payload", wire_payload, "activation bytes per step");
  wire_cmd->add_option("--micro-batches", wire_micro, "micro-batches per step");
  wire_cmd->add_option("--steps", wire_steps, "token steps");
  wire_cmd->add_option("--compute-ms", wire_compute, "synthetic compute per micro-batch");
  wire_cmd->add_flag("--compress", wire_compress, "byte-split compress payloads");
  wire_cmd->add_option("--stages", wire_stages, "relay stages in --role local");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*plan_cmd)
      return run_plan(globals, plan_spec, plan_objective, plan_batch_set, plan_oracle, plan_ratio,
                      plan_hop_cpu, plan_max_micro);
    if (*sim_cmd)
      return run_simulate(globals, sim_spec, sim_plan, sim_steps, sim_slots, sim_ratio,
                          sim_codec_ms);
    if (*sd_cmd) return run_analyze_sd(globals, sd_params, sd_sweep, sd_levels);
    if (*comp_cmd) return run_compress(comp_in, comp_out, comp_backend, comp_no_split);
    if (*decomp_cmd) return run_decompress(decomp_in, decomp_out);
    if (*entropy_cmd) return run_entropy(globals, entropy_in, entropy_backend);
    if (*wire_cmd)
      return run_bench_wire(globals, wire_role, wire_listen, wire_connect, wire_shape,
                            wire_payload, wire_micro, wire_steps, wire_compute, wire_compress,
                            wire_stages);
  } catch (const beeplan::Error& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 2;
}
