// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace beeplan {

/// Profiled per-block latency in milliseconds, keyed by micro-batch size.
using LatencyTable = std::map<int, double>;

/// Looks up a profiled latency at micro-batch size b. Exact at a profiled
/// key, linear between keys, linear extrapolation through the two nearest
/// keys outside the profiled range (clamped to stay positive). A
/// single-entry table extrapolates as a constant.
double interpolate_latency(const LatencyTable& table, int b);

struct NodeProfile {
  std::string node_id;
  std::uint64_t gpu_mem = 0;  // bytes
  std::uint64_t host_mem = 0; // bytes
  LatencyTable t_mlp;         // ms per block
  LatencyTable t_attn_gpu;    // ms per block
  LatencyTable t_attn_cpu;    // ms per block
  std::optional<double> pcie_bw; // bytes/s, reserved
};

struct LinkProfile {
  std::string from;
  std::string to;
  double latency_ms = 0.0;    // propagation latency
  double bandwidth_bps = 0.0; // bits/s (converted from Mbps at load time)

  double bytes_per_ms() const { return bandwidth_bps / 8000.0; }
};

struct ModelProfile {
  int total_blocks = 0; // L
  int hidden_dim = 0;
  int elem_bytes = 2;  // bytes per activation element
  int seq_len = 0;     // s
  std::uint64_t weight_bytes_per_block = 0;
  std::uint64_t kv_bytes_per_block_per_token = 0;
  double act_workspace_factor = 2.0; // k; workspace = k * b * d

  /// d: per-request activation payload in bytes.
  double activation_bytes() const {
    return static_cast<double>(hidden_dim) * static_cast<double>(elem_bytes);
  }
};

struct ClusterSpec {
  std::vector<NodeProfile> nodes; // pipeline order
  std::vector<LinkProfile> links; // adjacent pairs at minimum; extra pairs allowed
  ModelProfile model;

  int node_count() const { return static_cast<int>(nodes.size()); }
  /// Explicit link lookup; nullptr when the pair is not in the spec.
  const LinkProfile* find_link(const std::string& from, const std::string& to) const;
};

/// Throws ValidationError naming the offending field.
void validate(const ClusterSpec& spec);

/// Parses and validates the JSON cluster document. Unknown keys are errors.
ClusterSpec load_cluster_spec(const std::string& text);
ClusterSpec load_cluster_spec_file(const std::string& path);

/// Serializes back to the same JSON document shape; load(save(x)) == x.
std::string save_cluster_spec(const ClusterSpec& spec);

} // namespace beeplan
