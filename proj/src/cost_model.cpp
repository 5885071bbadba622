// SPDX-License-Identifier: Apache-2.0
#include "beeplan/cost_model.hpp"

#include <algorithm>
#include <cassert>

namespace beeplan {

double t_block(const NodeProfile& node, double alpha, int b) {
  assert(alpha >= 0.0 && alpha <= 1.0);
  double mlp = interpolate_latency(node.t_mlp, b);
  double attn_gpu = interpolate_latency(node.t_attn_gpu, b);
  double attn_cpu = interpolate_latency(node.t_attn_cpu, b);
  return mlp + (1.0 - alpha) * attn_gpu + alpha * attn_cpu;
}

double stage_compute_time(const NodeProfile& node, int layers, double alpha, int b) {
  if (layers == 0) return 0.0;
  return static_cast<double>(layers) * t_block(node, alpha, b);
}

double hop_comm_time(double latency_ms, double bandwidth_bps, double payload_bytes) {
  return latency_ms + payload_bytes / (bandwidth_bps / 8000.0);
}

double hop_comm_time(const LinkProfile& link, double payload_bytes) {
  return hop_comm_time(link.latency_ms, link.bandwidth_bps, payload_bytes);
}

OffloadDecision derive_offload_ratio(const NodeProfile& node, const ModelProfile& model,
                                     int layers, int B, int b) {
  assert(layers >= 1);
  double gpu = static_cast<double>(node.gpu_mem);
  double host = static_cast<double>(node.host_mem);
  double weights = static_cast<double>(layers) * static_cast<double>(model.weight_bytes_per_block);
  double workspace = model.act_workspace_factor * static_cast<double>(b) * model.activation_bytes();
  double kv = static_cast<double>(layers) * static_cast<double>(model.kv_bytes_per_block_per_token) *
              static_cast<double>(B) * static_cast<double>(model.seq_len);

  if (weights + workspace > gpu)
    return {false, 0.0, InfeasibleReason::GpuWeightOverflow};

  double alpha = std::clamp((kv - (gpu - weights - workspace)) / kv, 0.0, 1.0);
  if (alpha * kv > host)
    return {false, 0.0, InfeasibleReason::HostKvOverflow};
  return {true, alpha, InfeasibleReason::GpuWeightOverflow};
}

namespace {

double hop_payload(int B, int M, double compression_ratio, const ModelProfile& model,
                   CommPayloadMode mode) {
  double requests = mode == CommPayloadMode::FullBatch ? static_cast<double>(B)
                                                       : static_cast<double>(B / M);
  return requests * model.activation_bytes() * compression_ratio;
}

} // namespace

StageCost stage_cost(const NodeProfile& node, const LinkProfile* link, int layers, double alpha,
                     int B, int M, double compression_ratio, const ModelProfile& model,
                     CommPayloadMode mode) {
  assert(M >= 1 && B % M == 0);
  assert(compression_ratio > 0.0 && compression_ratio <= 1.0);
  StageCost cost;
  cost.alpha = alpha;
  cost.t_comp = stage_compute_time(node, layers, alpha, B / M);
  if (link != nullptr)
    cost.t_comm = hop_comm_time(*link, hop_payload(B, M, compression_ratio, model, mode));
  return cost;
}

StageCost stage_cost_derived(const NodeProfile& node, const LinkProfile* link, int layers, int B,
                             int M, double compression_ratio, const ModelProfile& model,
                             CommPayloadMode mode) {
  if (layers == 0) return stage_cost(node, link, layers, 0.0, B, M, compression_ratio, model, mode);
  OffloadDecision offload = derive_offload_ratio(node, model, layers, B, B / M);
  if (!offload.feasible) {
    StageCost cost;
    cost.feasible = false;
    cost.reason = offload.reason;
    return cost;
  }
  return stage_cost(node, link, layers, offload.alpha, B, M, compression_ratio, model, mode);
}

} // namespace beeplan
