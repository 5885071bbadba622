// SPDX-License-Identifier: Apache-2.0
#include "beeplan/simulator.hpp"

#include <cmath>
#include <deque>
#include <queue>

#include <nlohmann/json.hpp>

#include "beeplan/cost_model.hpp"
#include "beeplan/errors.hpp"
#include "beeplan/metrics.hpp"

namespace beeplan {

namespace {

struct QueuedEvent {
  SimEvent event;
  std::uint64_t seq; // insertion order breaks time ties deterministically
};

struct EventLater {
  bool operator()(const QueuedEvent& a, const QueuedEvent& b) const {
    if (a.event.time_ms != b.event.time_ms) return a.event.time_ms > b.event.time_ms;
    return a.seq > b.seq;
  }
};

struct StageRuntime {
  double comp_ms = 0.0;
  double codec_ms = 0.0; // CPU lane (compression) ahead of the wire time
  double hop_ms = 0.0;   // transfer to the next stage; 0 for the last stage
  bool has_hop = false;

  std::deque<int> ready;       // arrived micro-batches, FIFO
  std::deque<int> to_transfer; // computed, waiting on the transfer lane
  bool compute_busy = false;
  bool transfer_busy = false;
  int slots_in_use = 0;

  double busy_ms = 0.0;
  double transfer_ms_total = 0.0;
  double compression_ms_total = 0.0;
  int frames = 0;
};

} // namespace

RunMetrics simulate(const Plan& plan, const ClusterSpec& spec, int steps, const SimOptions& opts) {
  if (steps < 1) throw ValidationError("steps: must be >= 1");
  if (opts.inflight_slots < 1) throw ValidationError("inflight_slots: must be >= 1");

  // Validates plan invariants and memory feasibility (throws InfeasiblePlan).
  PlannerOptions planner_opts;
  planner_opts.payload_mode = opts.payload_mode;
  planner_opts.compression.ratio = opts.compression_ratio;
  planner_opts.compression.hop_cpu_ms = opts.codec_ms_per_hop;
  (void)pipeline_time(plan, spec, planner_opts);

  const int b = plan.B / plan.M;
  double payload = (opts.payload_mode == CommPayloadMode::FullBatch
                        ? static_cast<double>(plan.B)
                        : static_cast<double>(b)) *
                   spec.model.activation_bytes();
  double codec_ms = 0.0;
  if (plan.compression) {
    payload *= opts.compression_ratio;
    codec_ms = opts.codec_ms_per_hop;
  }

  std::vector<StageRuntime> stages;
  std::vector<int> active_nodes;
  for (int i = 0; i < spec.node_count(); ++i)
    if (plan.layers[i] > 0) active_nodes.push_back(i);
  for (std::size_t k = 0; k < active_nodes.size(); ++k) {
    int node = active_nodes[k];
    StageRuntime st;
    st.comp_ms = stage_compute_time(spec.nodes[node], plan.layers[node], plan.alphas[node], b);
    if (k + 1 < active_nodes.size()) {
      EffectiveHop hop = effective_hop(spec, node, active_nodes[k + 1]);
      st.hop_ms = hop_comm_time(hop.latency_ms, hop.bandwidth_bps, payload);
      st.codec_ms = codec_ms;
      st.has_hop = true;
    }
    stages.push_back(st);
  }
  const int n_stages = static_cast<int>(stages.size());
  const int m = plan.M;

  std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, EventLater> queue;
  std::uint64_t seq = 0;
  auto push = [&](double time, SimEvent::Kind kind, int stage, int micro) {
    queue.push({SimEvent{time, kind, stage, micro}, seq++});
  };

  double now = 0.0;
  auto try_start_compute = [&](int i) {
    StageRuntime& st = stages[i];
    if (st.compute_busy || st.ready.empty() || st.slots_in_use >= opts.inflight_slots) return;
    int micro = st.ready.front();
    st.ready.pop_front();
    st.compute_busy = true;
    ++st.slots_in_use;
    st.busy_ms += st.comp_ms;
    push(now + st.comp_ms, SimEvent::Kind::ComputeDone, i, micro);
  };
  auto try_start_transfer = [&](int i) {
    StageRuntime& st = stages[i];
    if (!st.has_hop || st.transfer_busy || st.to_transfer.empty()) return;
    int micro = st.to_transfer.front();
    st.to_transfer.pop_front();
    st.transfer_busy = true;
    st.transfer_ms_total += st.hop_ms;
    st.compression_ms_total += st.codec_ms;
    ++st.frames;
    if (st.codec_ms > 0.0) push(now + st.codec_ms, SimEvent::Kind::CpuLaneDone, i, micro);
    push(now + st.codec_ms + st.hop_ms, SimEvent::Kind::TransferDone, i, micro);
  };

  RunMetrics metrics;
  double step_start = 0.0;
  double first_step_ms = 0.0;
  int done_in_step = 0;
  for (int micro = 0; micro < m; ++micro) stages[0].ready.push_back(micro);
  try_start_compute(0);

  int step = 0;
  while (!queue.empty()) {
    QueuedEvent top = queue.top();
    queue.pop();
    now = top.event.time_ms;
    const int i = top.event.stage;
    switch (top.event.kind) {
      case SimEvent::Kind::ComputeDone: {
        StageRuntime& st = stages[i];
        st.compute_busy = false;
        if (st.has_hop) {
          st.to_transfer.push_back(top.event.micro_batch);
          try_start_transfer(i);
        } else {
          // Terminal stage: the micro-batch is finished.
          --st.slots_in_use;
          if (++done_in_step == m) {
            if (step == 0) first_step_ms = now - step_start;
            ++step;
            done_in_step = 0;
            if (step < steps) {
              // Next token step begins once this one fully drains.
              step_start = now;
              for (int micro = 0; micro < m; ++micro) stages[0].ready.push_back(micro);
              try_start_compute(0);
            }
          }
        }
        try_start_compute(i);
        break;
      }
      case SimEvent::Kind::CpuLaneDone:
        break; // bookkeeping milestone only
      case SimEvent::Kind::TransferDone: {
        StageRuntime& st = stages[i];
        st.transfer_busy = false;
        --st.slots_in_use;
        stages[i + 1].ready.push_back(top.event.micro_batch);
        try_start_transfer(i);
        try_start_compute(i);
        try_start_compute(i + 1);
        break;
      }
    }
  }

  metrics.completion_ms = now;
  metrics.step_ms = first_step_ms;
  metrics.throughput_tokens_per_s =
      static_cast<double>(plan.B) * static_cast<double>(steps) * 1000.0 / metrics.completion_ms;
  for (int i = 0; i < n_stages; ++i) {
    metrics.stages.push_back({stages[i].busy_ms, metrics.completion_ms - stages[i].busy_ms});
    if (stages[i].has_hop) {
      HopMetrics hop;
      hop.frames = stages[i].frames;
      hop.transfer_ms_total = stages[i].transfer_ms_total;
      hop.transfer_ms_mean =
          stages[i].frames > 0 ? stages[i].transfer_ms_total / stages[i].frames : 0.0;
      hop.compression_ms_total = stages[i].compression_ms_total;
      metrics.hops.push_back(hop);
    }
  }
  return metrics;
}

std::string run_metrics_to_json(const RunMetrics& metrics) {
  nlohmann::json doc;
  doc["throughput_tokens_per_s"] = metrics.throughput_tokens_per_s;
  doc["completion_ms"] = metrics.completion_ms;
  doc["step_ms"] = metrics.step_ms;
  doc["stages"] = nlohmann::json::array();
  for (const StageMetrics& st : metrics.stages)
    doc["stages"].push_back({{"busy_ms", st.busy_ms}, {"idle_ms", st.idle_ms}});
  doc["hops"] = nlohmann::json::array();
  for (const HopMetrics& hop : metrics.hops)
    doc["hops"].push_back({{"frames", hop.frames},
                           {"transfer_ms_total", hop.transfer_ms_total},
                           {"transfer_ms_mean", hop.transfer_ms_mean},
                           {"compression_ms_total", hop.compression_ms_total}});
  return doc.dump(2);
}

} // namespace beeplan
