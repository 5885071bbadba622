// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace beeplan {

struct StageMetrics {
  double busy_ms = 0.0;
  double idle_ms = 0.0;
};

struct HopMetrics {
  int frames = 0;
  double transfer_ms_total = 0.0; // NIC->NIC analog
  double transfer_ms_mean = 0.0;
  double compression_ms_total = 0.0;
};

struct RunMetrics {
  double throughput_tokens_per_s = 0.0;
  double completion_ms = 0.0;
  double step_ms = 0.0; // one token step across all micro-batches
  std::vector<StageMetrics> stages;
  std::vector<HopMetrics> hops;
};

std::string run_metrics_to_json(const RunMetrics& metrics);

} // namespace beeplan
