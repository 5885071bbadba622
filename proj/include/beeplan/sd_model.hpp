// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace beeplan {

/// Inputs of the speculative-decoding latency model. Internally D is bytes
/// and S bytes/second; the CLI converts from MB / MB/s.
struct SdParams {
  double L_tokens = 1.0; // total tokens to generate
  double D = 0.0;        // hidden-state payload per token, bytes
  double S = 1.0;        // network bandwidth, bytes/s
  double t_rtt_ms = 0.0; // fixed per-transfer latency
  double t_comp_ms = 0.0; // per-worker-node compute, autoregressive
  double m = 1.0;        // speculative/autoregressive compute ratio
  double c_ms = 0.0;     // draft-model compute per speculative pass
  int n = 1;             // worker nodes
  double N_tree = 1.0;   // draft tree size
  double a = 1.0;        // average accepted tokens per pass
  int B = 1;             // batch size
};

void validate(const SdParams& p); // throws ValidationError

/// Autoregressive total latency, ms:  L * (n*t_comp + n*B*D/S + n*t_rtt).
double t_auto(const SdParams& p);
double t_auto_at(const SdParams& p, double bandwidth);

/// Speculative total latency, ms: (L/a) * (c + n*m*t_comp + n*B*N*D/S + n*t_rtt).
double t_spec(const SdParams& p);
double t_spec_at(const SdParams& p, double bandwidth);

enum class BreakEvenKind { Finite, NeverHelps, AlwaysHelps };

struct BreakEven {
  BreakEvenKind kind = BreakEvenKind::NeverHelps;
  double s_star = 0.0; // bytes/s, valid when kind == Finite
};

/// S* such that speculation wins strictly above it:
///   S* = B*(N - a)*D / ((a-1)*t_rtt + (a-m)*t_comp - c/n)
BreakEven break_even_bandwidth(const SdParams& p);

/// One draft-tree pruning operating point: tree size and the acceptance it
/// retains.
struct PruneLevel {
  double n_tree = 1.0;
  double a = 1.0;
};

struct SdDecision {
  bool enabled = false;
  int level_index = -1;  // into the supplied levels
  PruneLevel level;
};

/// Picks the first level (ordered by decreasing tree size, unpruned first)
/// for which t_spec < t_auto at the measured bandwidth; disabled when none
/// qualifies.
SdDecision decide_sd(const SdParams& p, double measured_bandwidth,
                     const std::vector<PruneLevel>& levels);

std::string sd_params_to_json(const SdParams& p);
/// Parses the analyze-sd params document (sizes in MB, bandwidth in MB/s).
SdParams sd_params_from_json(const std::string& text);

} // namespace beeplan
