// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "beeplan/cluster.hpp"
#include "beeplan/metrics.hpp"
#include "beeplan/planner.hpp"

namespace beeplan {

/// Discrete-event record. Queue pops are monotone in time; equal times are
/// ordered by insertion, so runs are fully deterministic.
struct SimEvent {
  double time_ms = 0.0;
  enum class Kind : std::uint8_t { ComputeDone, CpuLaneDone, TransferDone } kind = Kind::ComputeDone;
  int stage = 0;
  int micro_batch = 0;
};

struct SimOptions {
  int inflight_slots = 2; // bounded outputs per stage (double buffering)
  double compression_ratio = 0.75; // payload scale when the plan compresses
  double codec_ms_per_hop = 0.0;   // CPU-lane charge per micro-batch when compressing
  CommPayloadMode payload_mode = CommPayloadMode::PerMicroBatch;
};

/// Event-driven execution of the plan: per stage one compute lane and one
/// transfer lane; a stage starts the next micro-batch's compute as soon as
/// its previous compute finished and an in-flight slot is free, while the
/// finished micro-batch's transfer proceeds concurrently. Token steps run
/// back to back (step t+1 starts once step t drains). Throws InfeasiblePlan.
RunMetrics simulate(const Plan& plan, const ClusterSpec& spec, int steps,
                    const SimOptions& opts = {});

} // namespace beeplan
