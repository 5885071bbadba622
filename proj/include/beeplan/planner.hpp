// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "beeplan/cluster.hpp"
#include "beeplan/cost_model.hpp"

namespace beeplan {

enum class Objective { SumOfStages, BottleneckCycle };

std::string objective_name(Objective obj);
Objective objective_from_name(const std::string& name);

struct Plan {
  std::vector<int> layers;    // L_i per node, zeros allowed
  std::vector<double> alphas; // derived offload fraction per node
  int B = 1;
  int M = 1;
  bool compression = false;
  bool sd = false; // advisory; filled by the SD model, not the planner
  Objective objective = Objective::SumOfStages;
  double predicted_throughput = 0.0; // tokens/s, B*s / pipeline_time
  double predicted_step_time = 0.0;  // ms per token step
};

std::string plan_to_json(const Plan& plan);
Plan plan_from_json(const std::string& text);

/// How the planner models enabling compression: payload scaled by ratio,
/// plus a fixed CPU charge added to each hop's comm term.
struct CompressionModel {
  double ratio = 0.75;
  double hop_cpu_ms = 2.0;
};

struct PlannerOptions {
  CommPayloadMode payload_mode = CommPayloadMode::PerMicroBatch;
  CompressionModel compression;
  std::vector<int> batch_candidates = {1, 2, 4, 8, 16, 32, 64, 128};
  int max_micro_batches = 16; // M candidates = divisors of B up to this
  // Default binding is M=1 -> SumOfStages, M>1 -> BottleneckCycle; a forced
  // objective overrides it (sum restricts candidates to M=1).
  std::optional<Objective> forced_objective;
  bool use_oracle = false; // enumerate with brute_force_assignment (--oracle)
};

/// Hop parameters between two pipeline positions after collapsing skipped
/// nodes: the explicit (from -> to) link when the spec carries one, else
/// latency summed and bandwidth min'ed over the adjacent chain.
struct EffectiveHop {
  double latency_ms = 0.0;
  double bandwidth_bps = 0.0;
};
EffectiveHop effective_hop(const ClusterSpec& spec, int from_idx, int to_idx);

/// Step time of a concrete plan, in ms. SumOfStages: M * sum over active
/// stages of (T_comp + T_comm). BottleneckCycle: (M + N_active - 1) *
/// max stage cycle. Throws InfeasiblePlan.
double pipeline_time(const Plan& plan, const ClusterSpec& spec,
                     const PlannerOptions& opts = {});

struct SolveStats {
  std::uint64_t combine_steps = 0;
};

/// Exact contiguous layer assignment minimizing pipeline_time for the given
/// (B, M, objective, compression). Throws NoFeasiblePlan.
Plan solve_layer_assignment(const ClusterSpec& spec, int B, int M, Objective objective,
                            bool compression = false, const PlannerOptions& opts = {},
                            SolveStats* stats = nullptr);

/// Exhaustive oracle over all compositions; guard: at most 1e6 compositions
/// (throws TooLarge). Test / --oracle use only.
Plan brute_force_assignment(const ClusterSpec& spec, int B, int M, Objective objective,
                            bool compression = false, const PlannerOptions& opts = {});

/// Best plan over candidate B, divisors-of-B micro-batch counts, and
/// compression on/off. M=1 uses SumOfStages, M>1 BottleneckCycle. Ties go to
/// smaller M, then smaller B, then compression off. Throws NoFeasiblePlan.
Plan enumerate_plans(const ClusterSpec& spec, const PlannerOptions& opts = {});

} // namespace beeplan
