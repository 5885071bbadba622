// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "beeplan/cluster.hpp"

namespace beeplan {

enum class InfeasibleReason { GpuWeightOverflow, HostKvOverflow };

/// Result of deriving the KV offload fraction from the memory constraints.
/// Infeasibility is a value, not a fault.
struct OffloadDecision {
  bool feasible = false;
  double alpha = 0.0;                  // valid when feasible
  InfeasibleReason reason = InfeasibleReason::GpuWeightOverflow; // valid when !feasible
};

/// Per-block time at offload fraction alpha and micro-batch size b:
///   t_mlp(b) + (1-alpha) * t_attn_gpu(b) + alpha * t_attn_cpu(b)
double t_block(const NodeProfile& node, double alpha, int b);

/// layers * t_block(...); zero when the node holds no layers.
double stage_compute_time(const NodeProfile& node, int layers, double alpha, int b);

/// latency + payload / bandwidth, in milliseconds.
double hop_comm_time(const LinkProfile& link, double payload_bytes);
double hop_comm_time(double latency_ms, double bandwidth_bps, double payload_bytes);

/// Minimum offload fraction that fits weights + activation workspace + the
/// GPU-resident KV share into gpu_mem, with the offloaded share within
/// host_mem. b is the micro-batch size (activation workspace), B the full
/// batch (KV footprint).
OffloadDecision derive_offload_ratio(const NodeProfile& node, const ModelProfile& model,
                                     int layers, int B, int b);

/// Which batch size the per-hop payload is computed from when micro-batching.
enum class CommPayloadMode {
  PerMicroBatch, // payload = (B/M) * d   (default)
  FullBatch,     // payload = B * d regardless of micro-batching
};

struct StageCost {
  double t_comp = 0.0; // ms
  double t_comm = 0.0; // ms
  double alpha = 0.0;
  bool feasible = true;
  InfeasibleReason reason = InfeasibleReason::GpuWeightOverflow;
};

/// Combined stage cost at an explicit alpha. link may be null (terminal
/// stage: no hop). compression_ratio scales the transfer term only.
StageCost stage_cost(const NodeProfile& node, const LinkProfile* link, int layers, double alpha,
                     int B, int M, double compression_ratio, const ModelProfile& model,
                     CommPayloadMode mode = CommPayloadMode::PerMicroBatch);

/// Same, but derives alpha from the memory constraints and propagates
/// infeasibility through StageCost::feasible.
StageCost stage_cost_derived(const NodeProfile& node, const LinkProfile* link, int layers, int B,
                             int M, double compression_ratio, const ModelProfile& model,
                             CommPayloadMode mode = CommPayloadMode::PerMicroBatch);

} // namespace beeplan
